import itertools
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from dnresilience import operator as op
from dnresilience.network import build_network, builtin_network, max_loss
from dnresilience.powerflow import NetworkState, relaxation_tightness, solve_npf_bfs

from _fixtures import SIX_DG, SIX_EDGES, leaf_dg_chain, mini, six_node, two_node


def _kappa(net, kc=0, kg=0):
    return op.ConfigurationVector(kc=np.full(net.n_loads, kc), kg=np.full(net.n_dg, kg))


def _flat_state(net, v=1.0):
    z = np.zeros(net.n)
    return NetworkState(pc=z, qc=z, pg=z, qg=z, pt=z, qt=z, P=z, Q=z, v=np.full(net.n, v), ell=z, v0=v)


# ---- loss ---------------------------------------------------------------------
def test_loss_nominal_is_zero():
    net = builtin_network("net24")
    u = op.OperatorResponse(beta=np.ones(12), kc=np.zeros(12), kg=np.zeros(12))
    assert op.loss(net, u, _flat_state(net)).total == 0.0


def test_loss_all_shed():
    net = builtin_network("net24")
    u = op.OperatorResponse(beta=np.zeros(12), kc=np.ones(12), kg=np.ones(12))
    assert op.loss(net, u, _flat_state(net)).total == pytest.approx(12000.0)
    b = op.loss(net, u, _flat_state(net, 0.98))
    assert b.total == pytest.approx(12000.0 + 100 * 0.02)


def test_loss_one_controlled_load():
    net = builtin_network("net24")
    beta = np.ones(12)
    beta[3] = 0.8
    u = op.OperatorResponse(beta=beta, kc=np.zeros(12), kg=np.zeros(12))
    b = op.loss(net, u, _flat_state(net))
    assert b.lc == pytest.approx(20.0)
    assert b.total == pytest.approx(20.0)


# ---- assembly -------------------------------------------------------------------
def test_two_node_program_layout():
    net = two_node()
    prog = op.assemble_operator_socp(net, 0.0, [0], _kappa(net))
    assert prog.n == 11
    assert prog.var_names == ["beta[1]", "pg[1]", "qg[1]", "pt[1]", "qt[1]", "P[1]", "Q[1]",
                              "v[0]", "v[1]", "ell[1]", "t"]
    cap = prog.rows_tagged("cap")
    assert len(cap) == 1
    assert prog.B[cap[0], 0] == pytest.approx(0.5)
    assert prog.A[cap[0], 1] == -1.0 and prog.b[cap[0]] == pytest.approx(-0.5)
    assert len(prog.cones) == 1


def test_attacked_dg_must_be_disconnected():
    net = two_node()
    with pytest.raises(op.ConfigurationError):
        op.assemble_operator_socp(net, 0.0, [1], _kappa(net, kg=0))


def test_fixed_config_rejects_free_entries():
    net = two_node()
    with pytest.raises(op.ConfigurationError):
        op.solve_fixed_config(net, 0.0, [0], _kappa(net, kc=op.FREE))


def _grid_oracle(net, dv0):
    """Scan beta for the 2-node net, then refine the voltage boundary with brentq."""
    ld, dg = net.loads[0], net.dgs[0]
    pg, qg = dg.pg_max, dg.eta * dg.pg_max

    def state(beta):
        return solve_npf_bfs(net, dv0, [beta * ld.pc_max - pg], [beta * ld.qc_max - qg])

    def feasible(beta):
        v = state(beta).v[0]
        return max(ld.v_min, dg.v_min) - 1e-12 <= v <= min(ld.v_max, dg.v_max) + 1e-12

    def cost(beta):
        s = state(beta)
        return (ld.cost_lc * (1 - beta) * ld.pc_max + net.cost_vr * max(abs(1 - s.v[0]), dv0)
                + net.cost_ll * net.r[0] * s.ell[0])

    grid = np.linspace(ld.beta_min, 1.0, int(round((1.0 - ld.beta_min) / 1e-4)) + 1)
    ok = [b for b in grid if feasible(b)]
    if not ok:
        return math.inf
    best = min(ok, key=cost)
    top = max(ok)
    if top < 1.0 - 1e-12 and abs(best - top) < 1e-9:
        # cost falls with beta, so the optimum sits on the voltage boundary
        vmin = max(ld.v_min, dg.v_min)
        best = brentq(lambda b: state(b).v[0] - vmin, top, min(top + 1e-4, 1.0), xtol=1e-14)
    return cost(best)


@pytest.mark.parametrize("r", [0.01, 0.1, 0.14])
def test_two_node_matches_grid_oracle(r):
    net = two_node(r=r, x=2 * r)
    got = op.solve_fixed_config(net, 0.0, [0], _kappa(net)).value
    assert got == pytest.approx(_grid_oracle(net, 0.0), abs=1e-4)


def test_fixed_config_infeasible_is_inf():
    net = two_node(r=0.3, x=0.6)
    res = op.solve_fixed_config(net, 0.0, [0], _kappa(net))
    assert res.value == math.inf and not res.feasible


def test_all_disconnected_equals_max_loss():
    net = builtin_network("net24")
    res = op.solve_fixed_config(net, 0.0, np.zeros(12, dtype=int), _kappa(net, 1, 1))
    assert res.value == pytest.approx(max_loss(net), abs=1e-6)
    assert np.allclose(res.state.P, 0, atol=1e-7)


# ---- branch and bound -------------------------------------------------------------
@pytest.mark.parametrize("factory", [mini, six_node])
def test_bnb_matches_exhaustive(factory):
    net = factory()
    for bits in itertools.product((0, 1), repeat=net.n_dg):
        d = np.array(bits)
        want, _ = op.exhaustive_misocp(net, 0.0, d)
        for cuts in (True, False):
            got = op.branch_and_bound(net, 0.0, d, use_structural_cuts=cuts).value
            assert got == pytest.approx(want, abs=1e-6 * max(1, want))
        loose = op.branch_and_bound(net, 0.0, d, tight_big_m=False).value
        assert loose == pytest.approx(want, abs=1e-6 * max(1, want))


def test_structural_cuts_need_forward_flow():
    # the optimum sheds the middle load and keeps the leaf load, which soaks up
    # the leaf DG's output; downstream-first shedding would be wrong here
    net = leaf_dg_chain()
    d = np.array([1, 1, 0])
    want, kappa = op.exhaustive_misocp(net, 0.0, d)
    assert kappa.kc.tolist() == [0, 1, 0]
    assert op.load_cut_pairs(net, d) == []
    assert op.branch_and_bound(net, 0.0, d, use_structural_cuts=True).value == pytest.approx(want, abs=1e-6 * want)
    # once every DG is attacked all ancestor pairs qualify
    assert len(op.load_cut_pairs(net, [1, 1, 1])) == 3


@pytest.mark.parametrize("bits", [(1, 1, 0), (0, 1, 1), (1, 0, 0)])
def test_bnb_matches_exhaustive_leaf_dgs(bits):
    net = leaf_dg_chain()
    d = np.array(bits)
    want, _ = op.exhaustive_misocp(net, 0.0, d)
    got = op.branch_and_bound(net, 0.0, d).value
    assert got == pytest.approx(want, abs=1e-6 * max(1, want))


def test_bnb_matches_exhaustive_with_sag():
    net = six_node()
    for bits in [(0, 0, 0), (1, 0, 1), (0, 1, 1)]:
        d = np.array(bits)
        want, _ = op.exhaustive_misocp(net, 0.03, d)
        assert op.solve_misocp(net, 0.03, d, cache=False).value == pytest.approx(want, abs=1e-5)


def test_dg_output_at_capacity():
    net = builtin_network("net24")
    d = np.zeros(12, dtype=int)
    d[[2, 7]] = 1
    res = op.solve_misocp(net, 0.0, d)
    on = res.kappa.kg == 0
    assert np.allclose(res.state.pg[net.dg_nodes][on], net.dg_params["pg_max"][on], atol=1e-6)
    assert np.allclose(res.state.pg[net.dg_nodes][~on], 0.0, atol=1e-6)


def test_nominal_misocp():
    net = builtin_network("net24")
    d = np.zeros(12, dtype=int)
    res = op.solve_misocp(net, 0.0, d)
    fixed = op.solve_fixed_config(net, 0.0, d, res.kappa)
    assert res.value == pytest.approx(fixed.value, abs=1e-6)
    assert res.value <= op.solve_fixed_config(net, 0.0, d, _kappa(net)).value + 1e-6
    assert res.breakdown(net).total == pytest.approx(res.value, abs=1e-5)
    assert relaxation_tightness(net, res.state) <= 1e-6


def test_npf_exceeds_lpf():
    net = builtin_network("net24")
    for bits in ([0] * 12, [1, 0] * 6, [0, 0, 1] * 4):
        d = np.array(bits)
        assert op.solve_misocp(net, 0.0, d).value > op.solve_milp_lpf(net, 0.0, d).value


def test_lpf_nominal_on_light_net():
    net = build_network(SIX_EDGES, SIX_DG, r=0.002, x=0.004)
    res = op.solve_milp_lpf(net, 0.0, np.zeros(3, dtype=int))
    b = res.breakdown(net, lpf=True)
    assert b.ls == pytest.approx(0.0, abs=1e-6) and b.lc == pytest.approx(0.0, abs=1e-6)


def test_lpf_forces_shedding_without_dgs():
    net = two_node(r=0.12, x=0.24, pc=1.0)
    res = op.solve_milp_lpf(net, 0.0, [1])
    assert res.kappa.kc.tolist() == [1]


def test_monotone_under_inclusion():
    net = builtin_network("net24")
    rng = np.random.default_rng(5)
    for _ in range(4):
        small = (rng.random(12) < 0.25).astype(int)
        big = np.maximum(small, (rng.random(12) < 0.25).astype(int))
        assert op.solve_misocp(net, 0.0, small).value <= op.solve_misocp(net, 0.0, big).value + 1e-6


def test_structural_cut_pairs_on_builtins():
    net = builtin_network("net24")
    anc = net.ancestor_matrix
    L = net.load_nodes
    every = sum(1 for a in range(len(L)) for b in range(len(L)) if a != b and anc[L[a], L[b]])
    assert len(op.load_cut_pairs(net, np.ones(12, dtype=int))) == every
    # live DGs between the two loads veto the pair
    assert len(op.load_cut_pairs(net, np.zeros(12, dtype=int))) < every
    assert (10, 11) not in op.load_cut_pairs(net)
    d = np.zeros(12, dtype=int)
    d[0] = 1
    assert all(0 not in p for p in op.dg_cut_pairs(net, d))


def test_reduce_keeps_cover():
    pairs = [(0, 1), (1, 2), (0, 2)]
    assert sorted(op._reduce(pairs)) == [(0, 1), (1, 2)]


def test_cache_returns_same_object():
    net = builtin_network("net24")
    d = np.zeros(12, dtype=int)
    assert op.solve_misocp(net, 0.0, d) is op.solve_misocp(net, 0.0, d)
