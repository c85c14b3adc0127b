"""ragmark: a black-box benchmark harness for deployed RAG services."""

__version__ = "0.1.0"

from .config import TestSuiteConfig, load_config, validate
from .report import aggregate, write_csv, write_json
from .runner import RunResult, run_suite

__all__ = [
    "TestSuiteConfig",
    "RunResult",
    "load_config",
    "validate",
    "run_suite",
    "aggregate",
    "write_csv",
    "write_json",
    "__version__",
]
