"""Scripted stream runs, metrics, reports and the command line."""

from .config import ConfigError, RunConfig, load_config
from .metrics import auc, ece, query_success_rate
from .runner import OracleScript, evaluate, execute, pretrain, run_baseline, run_stream

__all__ = ["ConfigError", "RunConfig", "load_config", "auc", "ece", "query_success_rate",
           "OracleScript", "evaluate", "execute", "pretrain", "run_baseline", "run_stream"]
