"""Budgeted contextual bandit scheduling across heterogeneous inference backends."""

from .core import BudgetVector, CostVector, RunLedger, Trace, TraceEnv
from .scheduler import BudgetedScheduler, SchedulerConfig, run_full, run_trace

__version__ = "0.1.0"
