"""End-to-end reproduction checks on the built-in feeders.

Each test records one PASS/FAIL line (printed in the terminal summary by
conftest.py) and then asserts it.  Expensive results are shared through
module fixtures and the operator's in-process MISOCP cache, so the net24
brute force runs once.  Expect hours of wall time on a single core.

    pytest -v tests/test_acceptance.py
"""
import csv
import io
import math
import time

import numpy as np
import pytest

from dnresilience import cascade as cs
from dnresilience import conic, gbd
from dnresilience import operator as op
from dnresilience.cli import main
from dnresilience.network import builtin_network, check_nrpf, max_loss
from dnresilience.powerflow import relaxation_tightness

from _fixtures import random_nrpf_instance, six_node
from test_powerflow import check_ordering, check_prop1, check_prop3

pytestmark = pytest.mark.slow

RESULTS: dict[int, tuple[bool, str]] = {}

SWEEP_TARGETS = [99, 95, 90, 85, 80, 75, 70, 65, 55, 45]
SWEEP_EXPECTED = [91.33, 91.33, 82.78, 82.78, 74.61, 74.61, 66.41, 58.17, 49.53, None]
SOLVES: list[tuple[str, float, float, float]] = []


def report(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module", autouse=True)
def _record_solves():
    """Log status, gap and KKT replay residuals of every conic solve in this module."""
    orig = conic.solve

    def logged(p, *args, **kwargs):
        sol = orig(p, *args, **kwargs)
        res = sol.residuals
        SOLVES.append((sol.status, sol.gap, res.get("kkt_rel", math.nan), res.get("kkt", math.nan)))
        return sol

    conic.solve = logged
    yield
    conic.solve = orig


@pytest.fixture(scope="module")
def net24():
    return builtin_network("net24")


@pytest.fixture(scope="module")
def brute24(net24):
    count = [0]

    def tick(_):
        count[0] += 1

    out = {k: gbd.brute_force_maxmin(net24, 0.0, k, progress=tick) for k in range(net24.n_dg + 1)}
    return out, count[0]


def _attacks(rng, n, p, count):
    """Random attack vectors with each DG attacked independently with probability p (never empty)."""
    out = []
    while len(out) < count:
        d = (rng.random(n) < p).astype(int)
        if d.any():
            out.append(d)
    return out


# ---- 1 -------------------------------------------------------------------------
def test_criterion_1_sweep(tmp_path):
    dest = tmp_path / "sweep.csv"
    code = main(["sweep", "--network", "net24", "--targets", ",".join(map(str, SWEEP_TARGETS)),
                 "--m", "1", "--out", str(dest)])
    rows = list(csv.DictReader(io.StringIO(dest.read_text())))
    bad = []
    cells = []
    for R, want, row in zip(SWEEP_TARGETS, SWEEP_EXPECTED, rows):
        got = row["resilience"]
        cells.append(f"{R}:{got}")
        if want is None:
            if got != gbd.FAILURE:
                bad.append(R)
        elif got == gbd.FAILURE or abs(float(got) - want) > 1.0:
            bad.append(R)
    ok = code == 0 and len(rows) == len(SWEEP_TARGETS) and not bad
    report(1, ok, f"realized {' '.join(cells)}; cells off by more than 1 pp: {bad or 'none'}")


# ---- 2 -------------------------------------------------------------------------
def test_criterion_2_brute_force_agreement(net24, brute24):
    brute, count = brute24
    search = gbd.BudgetSearch(net24, 0.0, gbd.GbdConfig(m=2))
    worst = 0.0
    bad = []
    for k in range(1, net24.n_dg + 1):
        got = search.solve(k)
        diff = abs(got.resilience - brute[k].resilience)
        worst = max(worst, diff)
        if diff > 0.5:
            bad.append(k)
    ok = not bad and count <= 4096
    report(2, ok, f"max |R_gbd - R_brute| = {worst:.3f} pp over k=1..12; "
                  f"{count} brute-force MISOCP solves; budgets off: {bad or 'none'}")


# ---- 3 -------------------------------------------------------------------------
def test_criterion_3_gap_trend(net24, brute24):
    brute, _ = brute24
    gaps = [gbd.cardinality_gap(net24, 0.0, gbd.GbdConfig(m=m), brute=brute) for m in (0, 1, 2)]
    ok = gaps[0] <= 10.0 and gaps[1] <= gaps[0] + 1e-9 and gaps[2] <= gaps[1] + 1e-9
    report(3, ok, "gap m=0/1/2 = " + "/".join(f"{g:.2f}%" for g in gaps))


# ---- 4 -------------------------------------------------------------------------
def test_criterion_4_properties(net24, brute24):
    failures = []
    rng = np.random.default_rng(2024)
    bad_pf = 0
    for _ in range(200):
        inst = random_nrpf_instance(rng, 5, 30)
        try:
            check_prop1(*inst)
            check_prop3(*inst)
            check_ordering(*inst)
        except AssertionError:
            bad_pf += 1
    if bad_pf:
        failures.append(f"flow monotonicity: {bad_pf}/200 instances")

    nets = {"net24": net24, "net36": builtin_network("net36"), "net118": builtin_network("net118")}
    # uniform random subsets on net24; sparser attacks on the larger feeders keep the
    # cut-free branch-and-bound affordable
    density = {"net24": 0.5, "net36": 0.2, "net118": 0.2}
    bad4, bad67, worst67 = [], [], 0.0
    for name, net in nets.items():
        for d in _attacks(rng, net.n_dg, density[name], 50):
            npf = op.solve_misocp(net, 0.0, d).value
            lpf = op.solve_milp_lpf(net, 0.0, d).value
            if not npf > lpf:
                bad4.append((name, d.nonzero()[0].tolist()))
            free = op.solve_misocp(net, 0.0, d, use_structural_cuts=False).value
            rel = abs(npf - free) / max(1.0, abs(free))
            worst67 = max(worst67, rel)
            if rel > 1e-6:
                bad67.append((name, d.nonzero()[0].tolist()))
    if bad4:
        failures.append(f"nonlinear loss not above linear: {len(bad4)} attacks")
    if bad67:
        failures.append(f"cuts changed the optimum: {len(bad67)} attacks")

    bad5 = 0
    for _ in range(100):
        d = (rng.random(net24.n_dg) < 0.4).astype(int)
        off = np.flatnonzero(d == 0)
        if off.size == 0:
            d[rng.integers(net24.n_dg)] = 0
            off = np.flatnonzero(d == 0)
        bigger = d.copy()
        bigger[rng.choice(off, int(rng.integers(1, off.size + 1)), replace=False)] = 1
        if op.solve_misocp(net24, 0.0, d).value > op.solve_misocp(net24, 0.0, bigger).value + 1e-6:
            bad5 += 1
    if bad5:
        failures.append(f"loss not monotone under inclusion: {bad5}/100 pairs")
    report(4, not failures, "; ".join(failures) if failures else
           f"200 flow instances, 150 attacks (NPF > LPF), 100 nested pairs; "
           f"max relative cut/no-cut difference {worst67:.1e}")


# ---- 6 -------------------------------------------------------------------------
def _maxmin_where_needed(net, dv0, V, l_max):
    """Coordinated max-min losses for the cardinalities where the check is informative.

    Where the autonomous response collapses (V = L_max) the coordinated loss
    can only be lower, so L_max stands in for it there.
    """
    search = gbd.BudgetSearch(net, dv0, gbd.GbdConfig(m=1))
    out = []
    for k in range(1, net.n_dg + 1):
        if V[k - 1] >= l_max - 1e-6:
            out.append(l_max)
        else:
            out.append(search.solve(k).loss)
    return out


def test_criterion_6_cascade():
    net = builtin_network("net36")
    l_max = max_loss(net)
    notes, ok = [], True
    k20 = int(round(0.2 * net.n_dg))
    for dv0 in (0.0, 0.02):
        run = cs.randomized_worst_case(net, dv0, Z=50, seed=0)
        nested = bool(np.all(np.diff(run.Y, axis=0) >= -1e-6))
        cur = cs.resilience_curves(run, _maxmin_where_needed(net, dv0, run.V, l_max), l_max)
        value_ok = bool(np.all(cur.value_of_response >= -1e-6))
        sat = abs(cur.resilience_ad[k20 - 1] - cur.resilience_ad[-1])
        ok &= nested and value_ok and sat <= 2.0
        notes.append(f"dv0={dv0}: nested={nested} min value={cur.value_of_response.min():.3f} "
                     f"|R_AD(k={k20}) - R_AD(all)|={sat:.2f} pp")
    report(6, ok, "; ".join(notes))


# ---- 7 -------------------------------------------------------------------------
def test_criterion_7_six_node_oracle():
    net = six_node()
    losses = {}
    for d in np.ndindex(2, 2, 2):
        losses[d] = op.exhaustive_misocp(net, 0.0, np.array(d))[0]
    grid = np.linspace(0.5 * min(losses.values()), 1.05 * max(losses.values()), 20)
    cfg = gbd.GbdConfig(m=net.n_dg - 1)
    bad = []
    for target in grid:
        ks = [sum(d) for d, v in losses.items() if v >= target]
        want = min(ks) if ks else None
        r = gbd.run_min_cardinality(net, 0.0, float(target), cfg)
        got = r.cardinality if r.status == gbd.SUCCESS else None
        if got != want or (want is None and r.status != gbd.FAILURE):
            bad.append(round(float(target), 3))
    report(7, not bad, f"20 targets, mismatches: {bad or 'none'}")


# ---- 5 (runs last: audits every solve made above) -------------------------------
def test_criterion_5_solver_health():
    t0 = time.perf_counter()
    # the replayed stationarity residual is measured relative to the cost vector,
    # like the duality gap; the absolute norm is reported alongside
    optimal = [(g, k, a) for s, g, k, a in SOLVES if s == conic.OPTIMAL]
    worst_gap = max((g for g, _, _ in optimal), default=0.0)
    worst_kkt = max((k for _, k, _ in optimal), default=0.0)
    worst_abs = max((a for _, _, a in optimal), default=0.0)
    tight, n_nrpf = 0.0, 0
    for key, (net, res) in list(op._MISOCP_CACHE.items()):
        st = res.state
        # key[3] is the solve mode; the linear model has no relaxation to audit
        if key[3].lpf or st is None or not check_nrpf(net, st.pt, st.qt):
            continue
        n_nrpf += 1
        tight = max(tight, relaxation_tightness(net, st))
    ok = bool(optimal) and worst_gap <= 1e-6 and worst_kkt <= 1e-6 and tight <= 1e-6
    report(5, ok, f"{len(optimal)} optimal solves: max gap {worst_gap:.1e}, max relative KKT residual "
                  f"{worst_kkt:.1e} (absolute {worst_abs:.1e}); "
                  f"{n_nrpf} NRPF operator optima: max tightness {tight:.1e} "
                  f"(audit {time.perf_counter() - t0:.1f}s)")
