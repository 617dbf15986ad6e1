"""Exact minimum-cardinality solutions of Boolean mask problems.

``solve_min`` is a depth-first branch and bound; ``brute_force`` enumerates
assignments and serves as its oracle. Strict ``> 0`` constraints are checked
as ``lhs >= EPSILON``.

Among optimal assignments both return the one whose sorted list of set
variable ids is lexicographically smallest (``{0}`` beats ``{1}``).
"""

from __future__ import annotations

import enum
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .encoding import EPSILON, FullMaskProblem, MaskProblem
from .errors import UnsupportedProblemError


class Status(str, enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class MaskSolution:
    status: Status
    assignment: dict[int, int] | None = None
    objective: int | None = None
    stats: dict = field(default_factory=dict)

    def bits(self, n_vars: int) -> np.ndarray:
        out = np.zeros(n_vars, dtype=np.int8)
        for v, b in (self.assignment or {}).items():
            out[v] = b
        return out


def _as_vector(problem, assignment) -> np.ndarray:
    if isinstance(assignment, dict):
        missing = [v.id for v in problem.variables if v.id not in assignment]
        if missing:
            raise KeyError(f"assignment is missing variables {missing}")
        return np.array([assignment[v.id] for v in problem.variables], dtype=np.int8)
    vec = np.asarray(assignment, dtype=np.int8)
    if vec.shape != (problem.n_vars,):
        raise KeyError(f"assignment has {vec.size} entries for {problem.n_vars} variables")
    return vec


def verify(problem, assignment) -> bool:
    """True iff every constraint holds under ``assignment`` (dict or 0/1 vector)."""
    vec = _as_vector(problem, assignment)
    if isinstance(problem, FullMaskProblem):
        return problem.satisfied(vec)
    return bool(np.all(problem.lhs(vec) >= EPSILON))


def _sat(vec: np.ndarray, stats: dict) -> MaskSolution:
    return MaskSolution(
        Status.SAT, {i: int(b) for i, b in enumerate(vec)}, int(vec.sum()), stats
    )


# --------------------------------------------------------------------------
# Brute force
# --------------------------------------------------------------------------


def brute_force(problem, var_limit: int = 24) -> MaskSolution:
    """Enumerate by cardinality, then lexicographically; first feasible wins.

    Works for linear problems and, by running the network, for
    ``FullMaskProblem`` instances.
    """
    n = problem.n_vars
    if n > var_limit:
        raise UnsupportedProblemError(f"{n} variables exceed the brute-force limit of {var_limit}")
    start = time.perf_counter()
    checked = 0
    full = isinstance(problem, FullMaskProblem)
    for r in range(n + 1):
        combos = list(itertools.combinations(range(n), r))
        if full:
            for combo in combos:
                checked += 1
                vec = np.zeros(n, dtype=np.int8)
                vec[list(combo)] = 1
                if problem.satisfied(vec):
                    return _sat(vec, _stats(checked, start))
            continue
        idx = np.array(combos, dtype=np.int64).reshape(len(combos), r)
        if r == 0:
            lhs = np.broadcast_to(problem.constants[:, None], (len(problem.constraints), 1))
        else:
            # same summation order as MaskProblem.lhs
            lhs = np.cumsum(problem.matrix[:, idx], axis=2)[:, :, -1] + problem.constants[:, None]
        ok = np.all(lhs >= EPSILON, axis=0)
        checked += len(combos)
        hits = np.flatnonzero(ok)
        if hits.size:
            vec = np.zeros(n, dtype=np.int8)
            vec[list(combos[hits[0]])] = 1
            return _sat(vec, _stats(checked, start))
    return MaskSolution(Status.UNSAT, stats=_stats(checked, start))


def _stats(nodes: int, start: float, **extra) -> dict:
    return {"nodes": nodes, "wall_ms": (time.perf_counter() - start) * 1000.0, **extra}


# --------------------------------------------------------------------------
# Branch and bound
# --------------------------------------------------------------------------


class _Timeout(Exception):
    pass


class _Search:
    """DFS over partial assignments; ``fixed`` holds -1 (free), 0 or 1."""

    def __init__(self, problem: MaskProblem, deadline: float | None):
        self.problem = problem
        self.a = problem.matrix
        self.b = problem.constants
        self.pos = np.maximum(self.a, 0.0)
        self.deadline = deadline
        self.nodes = 0

    def _tick(self):
        self.nodes += 1
        if self.deadline is not None and (self.nodes & 63) == 0 and time.perf_counter() > self.deadline:
            raise _Timeout

    def _state(self, fixed):
        ones = fixed == 1
        free = fixed < 0
        lhs = self.a[:, ones].sum(axis=1) + self.b
        slack = self.pos[:, free].sum(axis=1)
        return ones, free, lhs, slack

    def _needed(self, free, lhs, violated) -> int:
        """Lower bound on how many more variables must be switched on."""
        if not violated.any():
            return 0
        p = self.pos[np.ix_(violated, free)]
        p = -np.sort(-p, axis=1)
        reach = np.cumsum(p, axis=1) + lhs[violated, None]
        ok = reach >= EPSILON
        return int(np.max(np.argmax(ok, axis=1))) + 1

    def branch_var(self, free, violated) -> int:
        score = self.pos[np.ix_(violated, free)].sum(axis=0)
        cand = np.flatnonzero(free)
        return int(cand[int(np.argmax(score))])

    def greedy(self) -> np.ndarray | None:
        fixed = np.full(self.problem.n_vars, -1, dtype=np.int8)
        while True:
            ones, free, lhs, slack = self._state(fixed)
            violated = lhs < EPSILON
            if not violated.any():
                vec = ones.astype(np.int8)
                return vec if verify(self.problem, vec) else None
            if not free.any() or np.any(lhs + slack < EPSILON):
                return None
            score = self.pos[np.ix_(violated, free)].sum(axis=0)
            if score.max() <= 0:
                return None
            fixed[np.flatnonzero(free)[int(np.argmax(score))]] = 1

    def search(self, fixed, best: int, first_only: bool = False):
        """Best assignment with fewer than ``best`` set bits under ``fixed``, or None."""
        self._tick()
        ones, free, lhs, slack = self._state(fixed)
        count = int(ones.sum())
        if count >= best or np.any(lhs + slack < EPSILON):
            return None
        violated = lhs < EPSILON
        if not violated.any():
            vec = ones.astype(np.int8)
            return vec if verify(self.problem, vec) else None
        if count + self._needed(free, lhs, violated) >= best:
            return None
        v = self.branch_var(free, violated)
        found = None
        for value in (1, 0):
            fixed[v] = value
            res = self.search(fixed, best, first_only)
            if res is not None:
                found, best = res, int(res.sum())
                if first_only:
                    break
        fixed[v] = -1
        return found


def solve_min(problem: MaskProblem, budget_ms: float | None = None) -> MaskSolution:
    """Minimum-cardinality satisfying assignment, Unsat, or Unknown on timeout.

    Unknown results carry the best assignment found so far in
    ``stats["incumbent"]`` (or None).
    """
    if isinstance(problem, FullMaskProblem) or not isinstance(problem, MaskProblem):
        raise UnsupportedProblemError("solve_min handles linear mask problems only")
    start = time.perf_counter()
    deadline = None if budget_ms is None else start + budget_ms / 1000.0
    s = _Search(problem, deadline)
    n = problem.n_vars
    incumbent = s.greedy()
    try:
        best = incumbent
        res = s.search(np.full(n, -1, dtype=np.int8), n + 1 if best is None else int(best.sum()))
        if res is not None:
            best = res
        if best is None:
            return MaskSolution(Status.UNSAT, stats=_stats(s.nodes, start))
        incumbent = best
        target = int(best.sum())
        # canonical tie-break: smallest sorted id list among optimal assignments
        fixed = np.full(n, -1, dtype=np.int8)
        chosen = 0
        for v in range(n):
            if chosen == target:
                fixed[v:][fixed[v:] < 0] = 0
                break
            fixed[v] = 1
            if s.search(fixed.copy(), target + 1, first_only=True) is not None:
                chosen += 1
            else:
                fixed[v] = 0
        vec = (fixed == 1).astype(np.int8)
        if not verify(problem, vec):  # pragma: no cover - guarded by the search invariants
            vec = best
        return _sat(vec, _stats(s.nodes, start))
    except _Timeout:
        inc = None if incumbent is None else {i: int(b) for i, b in enumerate(incumbent)}
        return MaskSolution(Status.UNKNOWN, stats=_stats(s.nodes, start, incumbent=inc))
