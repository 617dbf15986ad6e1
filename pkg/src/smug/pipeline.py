"""End-to-end explanation of one input: attribution, mask problem, solve, score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import (
    DEFAULT_STEPS,
    AttributionConfig,
    AttributionVector,
    TopKSelection,
    default_output_index,
    first_layer_attribution,
    integrated_gradients,
    top_k_positive,
)
from .encoding import DEFAULT_IMAGE, MaskProblem, build_partial_encoding
from .saliency import (
    SaliencyMap,
    map_kind,
    receptive_fields,
    score_mask,
    smug_base_mask,
    spatial_shape,
    to_spatial,
)
from .solver import MaskSolution, Status, solve_min
from .tensor_net import NetworkSpec, as_tensor, first_layer_affine


@dataclass
class Explanation:
    label: int
    attribution: AttributionVector
    selection: TopKSelection
    problem: MaskProblem | None
    solution: MaskSolution | None
    smug: SaliencyMap | None
    base: SaliencyMap | None
    status: str  # solver status, "fallback:<status>" or "no-positive-neuron"

    @property
    def solver_ms(self) -> float | None:
        return None if self.solution is None else self.solution.stats.get("wall_ms")


@dataclass(frozen=True)
class ExplainConfig:
    k: int = DEFAULT_IMAGE["k"]
    gamma: float = DEFAULT_IMAGE["gamma"]
    grid_size: int = DEFAULT_IMAGE["grid_size"]
    ig_steps: int = DEFAULT_STEPS
    budget_ms: float | None = None
    solver_cmd: str | None = None


def solve_problem(problem: MaskProblem, cfg: ExplainConfig) -> MaskSolution:
    if cfg.solver_cmd:
        from .smtlib import run_external

        timeout = None if cfg.budget_ms is None else cfg.budget_ms / 1000.0
        return run_external(problem, cfg.solver_cmd, timeout)
    return solve_min(problem, cfg.budget_ms)


def explain(net: NetworkSpec, x, label: int | None = None, cfg: ExplainConfig | None = None,
            attribution: AttributionVector | None = None) -> Explanation:
    """Minimal mask and saliency maps for ``x``.

    If the solver does not return Sat, the SMUG map falls back to the
    smug-base map and ``status`` records why.
    """
    cfg = cfg or ExplainConfig()
    x = as_tensor(x)
    if label is None:
        label = default_output_index(net, x)
    attr = attribution or first_layer_attribution(net, x, label, cfg.ig_steps)
    sel = top_k_positive(attr, cfg.k)
    if len(sel) == 0:
        return Explanation(label, attr, sel, None, None, None, None, "no-positive-neuron")
    amap = first_layer_affine(net, x.shape)
    fields = receptive_fields(amap, sel.indices)
    shape, kind = spatial_shape(x.shape), map_kind(x.shape)
    base = smug_base_mask(sel, fields, shape, kind)
    problem = build_partial_encoding(net, x, sel, cfg.gamma, cfg.grid_size)
    solution = solve_problem(problem, cfg)
    if solution.status is Status.SAT:
        mask = to_spatial(problem.expand(solution.bits(problem.n_vars)))
        smug = score_mask(mask, sel, fields, kind)
        status = solution.status.value
    else:
        smug = base
        status = f"fallback:{solution.status.value}"
    return Explanation(label, attr, sel, problem, solution, smug, base, status)


def ig_input_map(net: NetworkSpec, x, label: int, steps: int = DEFAULT_STEPS) -> np.ndarray:
    """Pixel-space IG with an all-black baseline, |.| summed over channels."""
    x = as_tensor(x)
    ig = integrated_gradients(net, x, label, AttributionConfig(steps))
    a = np.abs(ig)
    return a.sum(axis=-1) if x.ndim in (2, 3) else a
