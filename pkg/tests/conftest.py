# Copyright (c) Microsoft. All rights reserved.

"""Shared pytest fixtures for test suite."""

from concurrent.futures import ThreadPoolExecutor
from contextlib import suppress

import pytest
from opentelemetry.trace import NoOpTracer

from selfplay_ail.bandit.core import BanditInstance, default_instance
from selfplay_ail.container import AppContainer
from selfplay_ail.models.tables import BanditSpace


@pytest.fixture(autouse=True)
def setup_di_container():
    """
    Set up and wire DI container for all tests.

    The worker pool is replaced by a single-thread executor and the tracer by
    a no-op tracer, so runs are sequential and export nothing.

    The fixture is autouse=True, so it runs automatically for all tests without
    needing to be explicitly requested.
    """
    # Create container
    container = AppContainer()
    container.config.threads.from_value(1)

    # Override providers for testing
    executor = ThreadPoolExecutor(max_workers=1)
    container.executor.override(executor)
    container.tracer.override(NoOpTracer())

    # Wire the container to enable @inject decorators
    container.wire(packages=["selfplay_ail.experiments"])

    # Yield control to the test
    yield container

    # Cleanup: unwire after test
    with suppress(Exception):
        # Ignore unwiring errors during cleanup
        container.unwire()
    executor.shutdown(wait=True)


@pytest.fixture
def tiny_instance() -> BanditInstance:
    """One context, two responses."""
    return default_instance(BanditSpace(n_contexts=1, n_responses=2), seed=7, reference="dirichlet")


@pytest.fixture
def small_instance() -> BanditInstance:
    """Two contexts, three responses, Dirichlet reference."""
    return default_instance(BanditSpace(n_contexts=2, n_responses=3), seed=11, reference="dirichlet")


@pytest.fixture
def default_bandit() -> BanditInstance:
    """The default 4x8 instance with seed 0."""
    return default_instance(BanditSpace(n_contexts=4, n_responses=8), seed=0)
