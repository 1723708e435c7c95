"""
Run Configuration Module

Provides the sectioned run configuration shared by every subcommand.
"""

from .run_config import (
    RunConfig,
    build_run_config,
    dump_default_config,
    dump_run_config,
    load_run_config,
    save_run_config,
)

__all__ = [
    "RunConfig",
    "build_run_config",
    "dump_default_config",
    "dump_run_config",
    "load_run_config",
    "save_run_config",
]
