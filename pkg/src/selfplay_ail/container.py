# Copyright (c) Microsoft. All rights reserved.

"""Dependency injection container for application-wide dependencies."""

from concurrent.futures import ThreadPoolExecutor

from dependency_injector import containers, providers

from selfplay_ail.config import get_default_run_settings
from selfplay_ail.utils.observability import get_tracer


class AppContainer(containers.DeclarativeContainer):
    """
    Application-wide dependency injection container.

    Manages lifecycle and injection of:
    - Default run settings (singleton)
    - Worker pool executing independent runs (singleton)
    - OpenTelemetry tracer (singleton)

    Usage in console.py:
        container = AppContainer()
        container.config.threads.from_value(args.threads)
        container.wire(packages=["selfplay_ail.experiments"])
        run(config)
    """

    # Configuration
    config = providers.Configuration()

    run_settings = providers.Singleton(
        get_default_run_settings,
    )

    # Each (method, seed, sweep point) run is submitted to this pool
    executor = providers.Singleton(
        ThreadPoolExecutor,
        max_workers=config.threads.as_(int),
    )

    tracer = providers.Singleton(
        get_tracer,
    )

    # Wiring configuration: modules that use @inject
    wiring_config = containers.WiringConfiguration(
        packages=[
            "selfplay_ail.experiments",
        ]
    )
