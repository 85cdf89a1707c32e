"""Initialize MUBench."""
import logging
import os

from opentelemetry import trace

import mubench

from .config import ENV_VAR_MUBENCH_LOGLEVEL
from .support.seeding import enable_determinism

tracer = trace.get_tracer(__name__, mubench.__version_str__)

_initialised = False


def _config_logging() -> None:
    """Configure logging."""
    log_level = os.environ.get(ENV_VAR_MUBENCH_LOGLEVEL, "INFO")

    logging.basicConfig(
        level=log_level.upper(), format="%(asctime)s %(process)d %(levelname)s %(message)s", force=True
    )  # force overrides Otel (or other) logging config with this.


def init() -> None:
    """Initialize MUBench. Safe to call more than once per process."""
    global _initialised
    if _initialised:
        return
    with tracer.start_as_current_span("mubench.setup.init") as span:
        _config_logging()
        enable_determinism()
        _initialised = True
        logging.info("MUBench %s initialized", mubench.__version_str__)
        span.add_event("MUBench initialized")
