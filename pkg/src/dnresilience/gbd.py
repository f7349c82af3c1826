"""Min-cardinality disruption via a modified generalized Benders decomposition.

The attacker's master problem picks the smallest attack satisfying all cuts
so far; the operator subproblem scores it.  Cuts are linear in the attack
vector ``d`` and always stored as ``coeffs @ d >= rhs``.
"""
from __future__ import annotations

import itertools
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from . import operator as op
from .conic import ConicProgram, ConicSolution
from .network import Network, max_loss

SUCCESS = "Success"
FAILURE = "Failure"
ITER_LIMIT = "IterLimit"
OVER_BUDGET = "OverBudget"  # stopped once the master needed more DGs than allowed

GENERALIZED = "generalized"
NO_GOOD = "no_good"

ENUM_LIMIT = 20  # largest DG count handled by exhaustive master enumeration
DEGENERATE_TOL = 1e-9


class CutError(ValueError):
    pass


@dataclass(frozen=True)
class BendersCut:
    coeffs: np.ndarray
    rhs: float
    kind: str = GENERALIZED

    def satisfied(self, d) -> bool:
        return float(np.dot(self.coeffs, d)) >= self.rhs - 1e-9

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rhs": self.rhs, "coeffs": [float(c) for c in self.coeffs]}


@dataclass(frozen=True)
class GbdConfig:
    m: int = 1
    epsilon: float | None = None  # None selects the variable schedule, else a fixed value
    iter_limit: int = 10000
    lpf_mode: bool = False
    use_structural_cuts: bool = True

    def check(self, n_dg: int) -> None:
        if not 0 <= self.m <= max(n_dg - 1, 0):
            raise ValueError(f"m must lie in [0, {max(n_dg - 1, 0)}]")
        if self.iter_limit < 1:
            raise ValueError("iter_limit must be at least 1")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("fixed epsilon must be nonnegative")


@dataclass
class IterationRecord:
    d: list[int]
    cardinality: int
    operator_loss: float
    cut_kind: str
    epsilon: float | None
    master_time: float
    sub_time: float


@dataclass
class GbdResult:
    status: str
    attack: np.ndarray | None
    cardinality: int | None
    realized_loss: float | None
    iterations: int
    cuts: list[BendersCut] = field(default_factory=list)
    trace: list[IterationRecord] = field(default_factory=list)
    wall_time: float = 0.0
    target: float = 0.0
    lower_bound: int = 0  # proven lower bound on the minimum cardinality

    def resilience(self, l_max: float) -> float | None:
        if self.realized_loss is None:
            return None
        return 100.0 * (1.0 - self.realized_loss / l_max)

    def trace_json(self) -> str:
        return json.dumps([rec.__dict__ for rec in self.trace])


# ---------------------------------------------------------------------------
# cuts
# ---------------------------------------------------------------------------
def benders_cut_from_dual(sol: ConicSolution, prog: ConicProgram, epsilon: float) -> BendersCut:
    """Cut sum_i C_i d_i >= epsilon with C = B^T lambda."""
    if not sol.ok:
        raise CutError(f"cannot build a cut from a {sol.status} solution")
    C = prog.B.T @ sol.lam
    kind = GENERALIZED
    if not np.any(C > DEGENERATE_TOL):
        kind = "degenerate"
    return BendersCut(coeffs=np.maximum(C, 0.0), rhs=float(epsilon), kind=kind)


def no_good_cut(d_star, n_dg: int | None = None) -> BendersCut:
    """Hamming-distance cut removing exactly ``d_star``."""
    d = np.asarray(d_star, dtype=int)
    if n_dg is not None and d.shape != (n_dg,):
        raise CutError(f"attack must have length {n_dg}")
    coeffs = np.where(d == 1, -1.0, 1.0)
    return BendersCut(coeffs=coeffs, rhs=1.0 - float(d.sum()), kind=NO_GOOD)


def epsilon_schedule(C, k: int, m: int) -> float:
    """Sum of k consecutive sorted coefficients after skipping the top ones."""
    C = np.asarray(C, dtype=float)
    n = C.size
    if k < 1 or k > n:
        raise ValueError("k must lie in [1, number of DGs]")
    if m < 0:
        raise ValueError("m must be nonnegative")
    order = sorted(range(n), key=lambda i: (-C[i], i))
    e = min(n, m + k)
    s = e - k + 1
    return float(sum(C[order[j - 1]] for j in range(s, e + 1)))


# ---------------------------------------------------------------------------
# master problem
# ---------------------------------------------------------------------------
class Master:
    """Minimum-cardinality attack satisfying a growing list of cuts.

    Ties go to the lexicographically smallest tuple of DG positions (positions
    follow ascending node id).  Small instances keep a feasibility mask over
    all attacks; larger ones call a MILP solver.
    """

    def __init__(self, n_dg: int):
        self.n = n_dg
        self.cuts: list[BendersCut] = []
        self._enum = n_dg <= ENUM_LIMIT
        if self._enum:
            self._attacks = _ordered_attacks(n_dg)
            self._alive = np.ones(len(self._attacks), dtype=bool)
            self._cursor = 0

    def add(self, cut: BendersCut) -> None:
        self.cuts.append(cut)
        if self._enum:
            ok = self._attacks @ cut.coeffs >= cut.rhs - 1e-9
            self._alive &= ok

    def solve(self) -> np.ndarray | None:
        if self._enum:
            hits = np.flatnonzero(self._alive[self._cursor:])
            if hits.size == 0:
                self._cursor = len(self._alive)
                return None
            # the mask only shrinks, so earlier entries never revive
            self._cursor += int(hits[0])
            return self._attacks[self._cursor].astype(int)
        return _milp_master(self.n, self.cuts)


_ORDER_CACHE: dict[int, np.ndarray] = {}


def _ordered_attacks(n: int) -> np.ndarray:
    hit = _ORDER_CACHE.get(n)
    if hit is not None:
        return hit
    blocks = []
    for k in range(n + 1):
        if k == 0:
            blocks.append(np.zeros((1, n)))
            continue
        combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
        block = np.zeros((len(combos), n))
        np.put_along_axis(block, combos, 1.0, axis=1)
        blocks.append(block)
    out = np.vstack(blocks)
    _ORDER_CACHE[n] = out
    return out


def _milp_feasible(n: int, A: np.ndarray, lb: np.ndarray, fixed: dict[int, int], card: int | None):
    c = np.ones(n)
    lo = np.zeros(n)
    hi = np.ones(n)
    for i, v in fixed.items():
        lo[i] = hi[i] = v
    cons = []
    if len(A):
        cons.append(LinearConstraint(A, lb, np.inf))
    if card is not None:
        cons.append(LinearConstraint(np.ones((1, n)), card, card))
    res = milp(c, constraints=cons, integrality=np.ones(n), bounds=Bounds(lo, hi))
    if res.status != 0:
        return None
    return np.rint(res.x).astype(int)


def _milp_master(n: int, cuts: Sequence[BendersCut]) -> np.ndarray | None:
    A = np.array([c.coeffs for c in cuts]).reshape(len(cuts), n)
    lb = np.array([c.rhs for c in cuts]) - 1e-9
    first = _milp_feasible(n, A, lb, {}, None)
    if first is None:
        return None
    k = int(first.sum())
    fixed: dict[int, int] = {}
    for i in range(n):
        if sum(fixed.values()) == k:
            break
        fixed[i] = 1
        if _milp_feasible(n, A, lb, fixed, k) is None:
            fixed[i] = 0
    out = _milp_feasible(n, A, lb, fixed, k)
    return first if out is None else out


def solve_master(cuts: Sequence[BendersCut], n_dg: int) -> np.ndarray | None:
    """Minimum-cardinality attack satisfying ``cuts``; ``None`` when infeasible."""
    m = Master(n_dg)
    for c in cuts:
        m.add(c)
    return m.solve()


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------
def _operator(net: Network, dv0: float, d, cfg: GbdConfig) -> op.MisocpResult:
    if cfg.lpf_mode:
        return op.solve_milp_lpf(net, dv0, d, use_structural_cuts=cfg.use_structural_cuts)
    return op.solve_misocp(net, dv0, d, use_structural_cuts=cfg.use_structural_cuts)


def run_min_cardinality(net: Network, dv0: float, l_target: float, cfg: GbdConfig = GbdConfig(),
                        max_cardinality: int | None = None) -> GbdResult:
    """Smallest attack found whose operator loss reaches ``l_target``.

    Master optima never shrink in cardinality, so with ``max_cardinality``
    the loop stops (status OverBudget) as soon as the master asks for more.
    """
    cfg.check(net.n_dg)
    l_max = max_loss(net)
    if not 0 < l_target <= l_max:
        raise ValueError("target loss must lie in (0, L_max]")
    start = time.perf_counter()
    master = Master(net.n_dg)
    trace: list[IterationRecord] = []

    lower = 0

    def done(status, d=None, loss=None, it=0):
        card = None if d is None else int(np.sum(d))
        return GbdResult(status=status, attack=d, cardinality=card, realized_loss=loss, iterations=it,
                         cuts=list(master.cuts), trace=trace, wall_time=time.perf_counter() - start,
                         target=l_target, lower_bound=lower)

    for it in range(1, cfg.iter_limit + 1):
        t0 = time.perf_counter()
        d = master.solve()
        t1 = time.perf_counter()
        if d is None:
            lower = net.n_dg + 1
            return done(FAILURE, it=it - 1)
        k = int(d.sum())
        lower = k
        if max_cardinality is not None and k > max_cardinality:
            return done(OVER_BUDGET, it=it - 1)
        res = _operator(net, dv0, d, cfg)
        if res.value >= l_target:
            realized = res.value
            if cfg.lpf_mode:
                realized = op.solve_misocp(net, dv0, d, use_structural_cuts=cfg.use_structural_cuts).value
            trace.append(IterationRecord(d.tolist(), k, res.value, "none", None, t1 - t0, time.perf_counter() - t1))
            return done(SUCCESS, d, realized, it)
        eps = None
        kind = NO_GOOD
        sol, prog = res.fixed.solution, res.fixed.program
        if k > 0 and sol is not None and sol.ok:
            C = prog.B.T @ sol.lam
            eps = cfg.epsilon if cfg.epsilon is not None else epsilon_schedule(C, k, cfg.m)
            cut = benders_cut_from_dual(sol, prog, eps)
            if cut.kind == GENERALIZED:
                master.add(cut)
                kind = GENERALIZED
        master.add(no_good_cut(d, net.n_dg))
        trace.append(IterationRecord(d.tolist(), k, res.value, kind, eps, t1 - t0, time.perf_counter() - t1))
    return done(ITER_LIMIT, it=cfg.iter_limit)


@dataclass
class MaxMinResult:
    attack: np.ndarray
    loss: float
    resilience: float
    searches: int = 0


class BudgetSearch:
    """Binary search on the target loss, shared across budgets.

    Every min-cardinality run is remembered, so later budgets start from the
    tightest bracket the earlier runs imply.
    """

    def __init__(self, net: Network, dv0: float, cfg: GbdConfig = GbdConfig(), resolution: float = 5e-4):
        self.net, self.dv0, self.cfg = net, dv0, cfg
        self.l_max = max_loss(net)
        self.res = resolution * self.l_max
        self.runs: dict[float, GbdResult] = {}
        self.searches = 0

    def _run(self, target: float, k: int) -> GbdResult:
        hit = self.runs.get(target)
        if hit is None or (hit.status == OVER_BUDGET and hit.lower_bound <= k):
            hit = run_min_cardinality(self.net, self.dv0, target, self.cfg, max_cardinality=k)
            self.runs[target] = hit
            self.searches += 1
        return hit

    @staticmethod
    def _within(r: GbdResult, k: int) -> bool | None:
        """Whether a run shows the target reachable within k DGs (None: undecided)."""
        if r.status == SUCCESS:
            return r.cardinality <= k
        if r.status == OVER_BUDGET:
            return False if r.lower_bound > k else None
        return False

    def solve(self, k: int) -> MaxMinResult:
        net = self.net
        if not 0 <= k <= net.n_dg:
            raise ValueError(f"budget must lie in [0, {net.n_dg}]")
        zero = np.zeros(net.n_dg, dtype=int)
        best_d, lo = zero, _operator(net, self.dv0, zero, self.cfg).value
        full = np.ones(net.n_dg, dtype=int)
        if k == net.n_dg:
            best_d, lo = full, _operator(net, self.dv0, full, self.cfg).value
            return self._result(best_d, lo)
        hi = min(self.l_max, _operator(net, self.dv0, full, self.cfg).value) + self.res
        for target, r in self.runs.items():
            ok = self._within(r, k)
            if ok and r.realized_loss > lo:
                lo, best_d = r.realized_loss, r.attack
            elif ok is False and target < hi:
                hi = target
        while hi - lo > self.res:
            mid = 0.5 * (lo + hi)
            if mid > self.l_max:
                hi = mid
                continue
            r = self._run(mid, k)
            if self._within(r, k):
                lo, best_d = max(mid, r.realized_loss), r.attack
            else:
                hi = mid
        return self._result(best_d, None)

    def _result(self, d, loss: float | None) -> MaxMinResult:
        if loss is None:
            loss = _operator(self.net, self.dv0, d, self.cfg).value
            if self.cfg.lpf_mode:
                loss = op.solve_misocp(self.net, self.dv0, d).value
        return MaxMinResult(attack=np.asarray(d, dtype=int), loss=loss,
                            resilience=100.0 * (1.0 - loss / self.l_max), searches=self.searches)


def run_budget_k_maxmin(net: Network, dv0: float, k: int, cfg: GbdConfig = GbdConfig(),
                        resolution: float = 5e-4) -> MaxMinResult:
    """Approximate max-min loss for attacks of at most ``k`` DGs."""
    return BudgetSearch(net, dv0, cfg, resolution).solve(k)


def brute_force_maxmin(net: Network, dv0: float, k: int, lpf: bool = False,
                       progress: Callable[[int], None] | None = None) -> MaxMinResult:
    """Exact worst attack of cardinality ``k``; ties go to the lexicographically smallest."""
    n = net.n_dg
    if not 0 <= k <= n:
        raise ValueError(f"budget must lie in [0, {n}]")
    count = math.comb(n, k)
    if count > 100_000:
        warnings.warn(f"brute force over {count} attacks", RuntimeWarning)
    solve = op.solve_milp_lpf if lpf else op.solve_misocp
    best_d, best = None, -math.inf
    for j, combo in enumerate(itertools.combinations(range(n), k)):
        d = np.zeros(n, dtype=int)
        d[list(combo)] = 1
        val = solve(net, dv0, d).value
        if val > best + 1e-9:
            best_d, best = d, val
        if progress is not None:
            progress(j)
    l_max = max_loss(net)
    return MaxMinResult(attack=best_d, loss=best, resilience=100.0 * (1.0 - best / l_max))


def cardinality_gap(net: Network, dv0: float, cfg: GbdConfig, ks: Sequence[int] | None = None,
                    brute: dict[int, MaxMinResult] | None = None) -> float:
    """Mean relative excess (%) of GBD's cardinality over the true minimum.

    For each budget k the brute-force worst loss L*(k) defines a target just
    below it; the true minimum cardinality reaching it is the smallest k'
    with L*(k') at or above the target.
    """
    l_max = max_loss(net)
    ks = list(range(1, net.n_dg + 1)) if ks is None else list(ks)
    brute = dict(brute or {})
    for k in range(0, max(ks) + 1):
        if k not in brute:
            brute[k] = brute_force_maxmin(net, dv0, k)
    gaps = []
    for k in ks:
        target = brute[k].loss - 1e-6 * l_max
        if target <= 0:
            continue
        k_star = min(j for j in range(0, k + 1) if brute[j].loss >= target)
        if k_star == 0:
            continue
        r = run_min_cardinality(net, dv0, target, cfg)
        k_gbd = r.cardinality if r.status == SUCCESS else net.n_dg
        gaps.append(100.0 * (k_gbd - k_star) / k_star)
    return float(np.mean(gaps)) if gaps else 0.0
