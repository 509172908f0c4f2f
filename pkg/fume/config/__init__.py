"""fume/config/__init__.py"""

from .settings import (
    Config,
    DevelopmentConfig,
    TestingConfig,
    ProductionConfig,
    RunConfig,
    get_settings,
    load_run_config,
    parse_counts,
    parse_key_values,
)

__all__ = [
    "Config",
    "DevelopmentConfig",
    "TestingConfig",
    "ProductionConfig",
    "RunConfig",
    "get_settings",
    "load_run_config",
    "parse_counts",
    "parse_key_values",
]
