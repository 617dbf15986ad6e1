"""Minimal sufficient input masks for explaining neural network decisions.

The pipeline attributes the first layer with integrated gradients, selects the
top positively attributed neurons, encodes "which input cells must stay on for
those neurons to keep firing" as a 0-1 minimization problem, and solves it
exactly. The resulting masks are scored with the LSC box metric.
"""

from .pipeline import ExplainConfig, Explanation, explain
from .tensor_net import NetworkSpec, predict

__all__ = ["ExplainConfig", "Explanation", "NetworkSpec", "explain", "predict"]
__version__ = "0.1.0"
