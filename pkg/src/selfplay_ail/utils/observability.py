# Copyright (c) Microsoft. All rights reserved.

"""
OpenTelemetry tracing setup.

Spans are exported over OTLP when ``OTEL_EXPORTER_OTLP_ENDPOINT`` is set and
printed to the console when ``SELFPLAY_AIL_TRACE_CONSOLE=true``. Without
either variable the global no-op provider stays in place.
"""

import logging
import os

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter, SimpleSpanProcessor

__all__ = ["TRACER_NAME", "get_tracer", "setup_observability"]

logger = logging.getLogger(__name__)

TRACER_NAME = "selfplay_ail"


def setup_observability(service_name: str = "selfplay-ail") -> bool:
    """
    Install a tracer provider when an exporter is configured.

    Returns
    -------
    bool
        True if a provider was installed.
    """
    endpoint = os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")
    to_console = os.getenv("SELFPLAY_AIL_TRACE_CONSOLE", "").lower() == "true"
    if not endpoint and not to_console:
        return False

    provider = TracerProvider(resource=Resource.create({"service.name": service_name}))
    if endpoint:
        from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter

        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter()))
        logger.info("Exporting traces to %s", endpoint)
    if to_console:
        provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
    return True


def get_tracer() -> trace.Tracer:
    """Tracer used for run and verification spans."""
    return trace.get_tracer(TRACER_NAME)
