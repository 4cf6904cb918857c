"""Cost-constrained stepwise model routing: trainer, calibrator, simulator."""

from .costs import EvalReport, ac_ratio, api_cost, eval_report, flops_cost
from .features import FEATURE_DIM, Observation, RunningStats
from .trace import (Action, ApiPricing, ModelId, StepRecord, TerminalLabel,
                    TraceNode, TraceTree, load_trace_file, save_trace_file)

__version__ = "0.1.0"

__all__ = [
    "Action", "ApiPricing", "EvalReport", "FEATURE_DIM", "ModelId",
    "Observation", "RunningStats", "StepRecord", "TerminalLabel", "TraceNode",
    "TraceTree", "ac_ratio", "api_cost", "eval_report", "flops_cost",
    "load_trace_file", "save_trace_file", "__version__",
]
