"""Operator response: loss function, conic subproblem assembly and branch-and-bound.

A configuration fixes the connectivity binaries ``kc`` (per load) and ``kg``
(per DG).  In relaxed programs a binary may also be *free*, i.e. a continuous
variable in [0, 1]; free entries are encoded as ``FREE`` (-1) in the fixing
arrays.  Loads are indexed by ``net.load_nodes`` and DGs by ``net.dg_nodes``.
"""
from __future__ import annotations

import heapq
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import conic
from .conic import Cone, ConicProgram, ConicSolution
from .network import Network
from .powerflow import NetworkState, PowerFlowError, consumption, solve_npf_bfs

FREE = -1
INT_TOL = 1e-6
REL_GAP = 1e-6
SOLVE_TOL = 1e-9  # conic tolerance; keeps the replayed KKT residual small at cost scales ~1e3


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfigurationVector:
    kc: np.ndarray
    kg: np.ndarray


@dataclass
class OperatorResponse:
    beta: np.ndarray
    kc: np.ndarray
    kg: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    vr: float
    lc: float
    ls: float
    ll: float

    @property
    def total(self) -> float:
        return self.vr + self.lc + self.ls + self.ll


def loss(net: Network, u: OperatorResponse, s: NetworkState, lpf: bool = False) -> LossBreakdown:
    """Term-by-term loss of a response and the state it induces."""
    lp = net.load_params
    pc = lp["pc_max"]
    vr = net.cost_vr * float(np.max(np.abs(net.v_nom - s.v))) if net.n else 0.0
    lc = float(np.sum(lp["cost_lc"] * (1.0 - np.asarray(u.beta)) * pc))
    ls = float(np.sum((lp["cost_ls"] - lp["cost_lc"]) * np.asarray(u.kc) * pc))
    ll = 0.0 if lpf else net.cost_ll * float(np.sum(net.r_arr * s.ell))
    return LossBreakdown(vr=vr, lc=lc, ls=ls, ll=ll)


# ---------------------------------------------------------------------------
# program assembly
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Mode:
    """Switches distinguishing the operator problem from the cascade steps.

    ``beta``: "control" (load control allowed), "full" (beta = 1, no shedding),
    "no_control" (beta = 1 - kc).
    """

    lpf: bool = False
    beta: str = "control"
    load_windows: bool = True
    dg_windows: bool = True
    fixed_output: bool = False  # connected DGs run at capacity instead of up to it


OPERATOR = Mode()


class _Builder:
    def __init__(self) -> None:
        self.names: list[str] = []
        self.rows: list[tuple[dict[int, float], float, tuple, bool, dict[int, float]]] = []
        self.cones: list[tuple[list[dict[int, float]], dict[int, float]]] = []
        self.c: dict[int, float] = {}
        self.c0 = 0.0

    def var(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    def row(self, coef: dict[int, float], rhs: float, tag: tuple, eq: bool = False,
            bcoef: dict[int, float] | None = None) -> None:
        self.rows.append((coef, rhs, tag, eq, bcoef or {}))

    def build(self, n_attack: int, d: np.ndarray) -> ConicProgram:
        n = len(self.names)
        m = len(self.rows)
        A = np.zeros((m, n))
        b = np.zeros(m)
        B = np.zeros((m, n_attack))
        eq = np.zeros(m, dtype=bool)
        tags = []
        for k, (coef, rhs, tag, is_eq, bcoef) in enumerate(self.rows):
            for j, v in coef.items():
                A[k, j] += v
            b[k] = rhs
            for j, v in bcoef.items():
                B[k, j] = v
            eq[k] = is_eq
            tags.append(tag)
        c = np.zeros(n)
        for j, v in self.c.items():
            c[j] += v
        cones = []
        for erows, g in self.cones:
            E = np.zeros((len(erows), n))
            for r, coef in enumerate(erows):
                for j, v in coef.items():
                    E[r, j] += v
            gv = np.zeros(n)
            for j, v in g.items():
                gv[j] += v
            cones.append(Cone(E=E, g=gv))
        return ConicProgram(c=c, A=A, b=b, B=B, d=np.asarray(d, dtype=float), cones=cones,
                            row_tags=tags, eq=eq, c0=self.c0, var_names=list(self.names))


@dataclass
class Layout:
    """Where each quantity lives in an assembled program's variable vector.

    Entries are a variable index, or ``None`` together with a constant value
    stored in the matching ``*_const`` array.
    """

    beta: list
    beta_const: np.ndarray
    kc: list
    kg: list
    pg: list
    qg: list
    pg_const: np.ndarray
    pt: list
    qt: list
    P: list
    Q: list
    ell: list
    v: list
    v0: int
    t: int
    attacked_pg: list = field(default_factory=list)


def _as_fix(arr, size: int, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=int).reshape(-1)
    if a.shape != (size,):
        raise ConfigurationError(f"{name} must have length {size}")
    if np.any((a != 0) & (a != 1) & (a != FREE)):
        raise ConfigurationError(f"{name} entries must be 0, 1 or FREE")
    return a


def _big_m(envelope, k: int, vmin: float, vmax: float) -> tuple[float, float]:
    if envelope is None:
        return 1.0, 1.0
    lo, hi = envelope
    return float(np.clip(vmin - lo[k], 0.0, 1.0)), float(np.clip(hi[k] - vmax, 0.0, 1.0))


ENVELOPE_MARGIN = 0.02
_ENVELOPES: dict = {}


def voltage_envelope(net: Network, dv0: float, margin: float = ENVELOPE_MARGIN) -> tuple[np.ndarray, np.ndarray]:
    """Per-node voltage floor and ceiling used to shrink relaxed window rows.

    Floor: a voltage minimum can only sit at a net consumer, i.e. a connected
    (hence windowed) load, or at the substation; unloaded nodes add at most
    loss-level drops.  So every node stays above the smallest window minimum
    (or v0) less ``margin``, whatever the shedding pattern.  Ceiling: the sweep solution with
    loads off and DGs at capacity (smallest consumption) plus ``margin``;
    when that sweep fails the ceiling is left at unit big-M.
    """
    key = (id(net), float(dv0), float(margin))
    hit = _ENVELOPES.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    v0 = net.v_nom - dv0
    mins = [v0]
    if net.n_loads:
        mins.append(float(np.min(net.load_params["v_min"])))
    if net.n_dg:
        mins.append(float(np.min(net.dg_params["v_min"])))
    floor = np.full(net.n, min(mins) - margin)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            low = consumption(net, np.zeros(net.n_loads), np.ones(net.n_loads), np.zeros(net.n_dg))
            ceil = solve_npf_bfs(net, dv0, low["pt"], low["qt"]).v + margin
    except PowerFlowError:
        ceil = np.full(net.n, np.inf)
    out = (floor, ceil)
    _ENVELOPES[key] = (net, out)
    return out


def assemble_program(net: Network, dv0: float, d, kc, kg, mode: Mode = OPERATOR,
                     cut_pairs: Sequence[tuple[str, int, int]] = (),
                     pin_attacked: Sequence[int] = (),
                     envelope: tuple[np.ndarray, np.ndarray] | None = None) -> tuple[ConicProgram, Layout]:
    """Operator conic program for a (possibly partially relaxed) configuration.

    ``cut_pairs`` holds ("kc"|"kg", i, j) meaning binary i <= binary j, added
    as rows when both are free.  ``pin_attacked`` lists attacked DG positions
    whose output is pinned to zero instead of being capped by the attack row.
    ``envelope`` holds per-node voltage floor/ceiling arrays used to shrink
    the big-M coefficients of relaxed window rows (default M = 1).
    """
    d = _as_fix(d, net.n_dg, "d")
    if np.any(d == FREE):
        raise ConfigurationError("attack vector must be binary")
    kc = _as_fix(kc, net.n_loads, "kc")
    kg = _as_fix(kg, net.n_dg, "kg")
    if np.any((d == 1) & (kg == 0)):
        raise ConfigurationError("configuration keeps an attacked DG connected")
    kg = np.where(d == 1, 1, kg)
    if mode.beta == "full" and np.any(kc != 0):
        raise ConfigurationError("full-demand mode requires every load connected")

    bld = _Builder()
    lp, gp = net.load_params, net.dg_params
    n = net.n
    ids = net.ids
    lpf = mode.lpf
    load_of = {int(k): a for a, k in enumerate(net.load_nodes)}
    dg_of = {int(k): g for g, k in enumerate(net.dg_nodes)}

    # ---- variables
    beta_v: list = []
    beta_c = np.zeros(net.n_loads)
    kc_v: list = []
    for a, k in enumerate(net.load_nodes):
        nid = ids[k]
        kc_v.append(bld.var(f"kc[{nid}]") if kc[a] == FREE else None)
        bmin = lp["beta_min"][a]
        if mode.beta == "full":
            beta_v.append(None)
            beta_c[a] = 1.0
        elif mode.beta == "no_control":
            if kc[a] == FREE:
                beta_v.append(bld.var(f"beta[{nid}]"))
            else:
                beta_v.append(None)
                beta_c[a] = 1.0 - kc[a]
        else:
            if kc[a] == 1 or (kc[a] == 0 and bmin >= 1.0):
                beta_v.append(None)
                beta_c[a] = 1.0 - kc[a]
            else:
                beta_v.append(bld.var(f"beta[{nid}]"))
    kg_v: list = []
    pg_c = np.zeros(net.n_dg)
    pg_v: list = []
    qg_v: list = []
    for g, k in enumerate(net.dg_nodes):
        nid = ids[k]
        kg_v.append(bld.var(f"kg[{nid}]") if kg[g] == FREE else None)
        off_by_operator = kg[g] == 1 and d[g] == 0
        pinned = d[g] == 1 and g in pin_attacked
        if mode.fixed_output and kg[g] == 0:
            pg_c[g] = gp["pg_max"][g]
        if off_by_operator or pinned or pg_c[g] > 0:
            pg_v.append(None)
            qg_v.append(None)
        else:
            pg_v.append(bld.var(f"pg[{nid}]"))
            qg_v.append(bld.var(f"qg[{nid}]"))
    pt_v = [bld.var(f"pt[{ids[k]}]") for k in range(n)]
    qt_v = [bld.var(f"qt[{ids[k]}]") for k in range(n)]
    P_v = [bld.var(f"P[{ids[k]}]") for k in range(n)]
    Q_v = [bld.var(f"Q[{ids[k]}]") for k in range(n)]
    v0 = bld.var("v[0]")
    v_v = [bld.var(f"v[{ids[k]}]") for k in range(n)]
    ell_v = [None] * n if lpf else [bld.var(f"ell[{ids[k]}]") for k in range(n)]
    t = bld.var("t")

    # ---- objective
    bld.c[t] = net.cost_vr
    for a in range(net.n_loads):
        pcm = lp["pc_max"][a]
        clc = lp["cost_lc"][a] * pcm
        cls = (lp["cost_ls"][a] - lp["cost_lc"][a]) * pcm
        if beta_v[a] is None:
            bld.c0 += clc * (1.0 - beta_c[a])
        else:
            bld.c0 += clc
            bld.c[beta_v[a]] = bld.c.get(beta_v[a], 0.0) - clc
        if kc_v[a] is None:
            bld.c0 += cls * kc[a]
        else:
            bld.c[kc_v[a]] = cls
    if not lpf:
        for k in range(n):
            bld.c[ell_v[k]] = net.cost_ll * net.r[k]

    # ---- substation voltage
    bld.row({v0: 1.0}, net.v_nom - dv0, ("slack_v", 0), eq=True)

    # ---- load control and connectivity
    for a, k in enumerate(net.load_nodes):
        nid = ids[k]
        bmin = lp["beta_min"][a]
        bv, kv = beta_v[a], kc_v[a]
        if kv is not None:
            bld.row({kv: 1.0}, 0.0, ("bin_lo", nid))
            bld.row({kv: -1.0}, -1.0, ("bin_hi", nid))
        if bv is not None:
            if mode.beta == "no_control":
                bld.row({bv: 1.0, kv: 1.0}, 1.0, ("beta_fix", nid), eq=True)
            elif kv is None:
                bld.row({bv: 1.0}, bmin, ("beta_lo", nid))
                bld.row({bv: -1.0}, -1.0, ("beta_hi", nid))
            else:
                bld.row({bv: 1.0, kv: bmin}, bmin, ("beta_lo", nid))
                bld.row({bv: -1.0, kv: -1.0}, -1.0, ("beta_hi", nid))
        if mode.load_windows:
            vmin, vmax = lp["v_min"][a], lp["v_max"][a]
            if kv is not None:
                mlo, mhi = _big_m(envelope, k, vmin, vmax)
                bld.row({v_v[k]: 1.0, kv: mlo}, vmin, ("load_v_lo", nid))
                bld.row({v_v[k]: -1.0, kv: mhi}, -vmax, ("load_v_hi", nid))
            elif kc[a] == 0:
                bld.row({v_v[k]: 1.0}, vmin, ("load_v_lo", nid))
                bld.row({v_v[k]: -1.0}, -vmax, ("load_v_hi", nid))

    # ---- DG output and connectivity
    attacked_pg = []
    for g, k in enumerate(net.dg_nodes):
        nid = ids[k]
        pgm, eta = gp["pg_max"][g], gp["eta"][g]
        pv, qv, kv = pg_v[g], qg_v[g], kg_v[g]
        if kv is not None:
            bld.row({kv: 1.0}, 0.0, ("bin_lo", nid))
            bld.row({kv: -1.0}, -1.0, ("bin_hi", nid))
        # capacity row coupled to the attack: -pg >= -pg_max + pg_max d
        bld.row({pv: -1.0} if pv is not None else {}, -pgm, ("cap", nid), bcoef={g: pgm})
        if pv is not None:
            if d[g] == 1:
                attacked_pg.append((g, pv))
                bld.row({qv: 1.0, pv: -eta}, 0.0, ("dg_q", nid), eq=True)
            elif mode.fixed_output:
                bld.row({pv: 1.0, kv: pgm}, pgm, ("dg_out_fix", nid), eq=True)
                bld.row({qv: 1.0, pv: -eta}, 0.0, ("dg_q", nid), eq=True)
            else:
                if kv is not None:
                    bld.row({pv: -1.0, kv: -pgm}, -pgm, ("dg_out_hi", nid))
                bld.row({pv: 1.0}, 0.0, ("dg_out_lo", nid))
                bld.row({qv: 1.0, pv: eta}, 0.0, ("dg_q_lo", nid))
                bld.row({qv: -1.0, pv: eta}, 0.0, ("dg_q_hi", nid))
        if mode.dg_windows:
            vmin, vmax = gp["v_min"][g], gp["v_max"][g]
            if kv is not None:
                mlo, mhi = _big_m(envelope, k, vmin, vmax)
                bld.row({v_v[k]: 1.0, kv: mlo}, vmin, ("dg_v_lo", nid))
                bld.row({v_v[k]: -1.0, kv: mhi}, -vmax, ("dg_v_hi", nid))
            elif kg[g] == 0:
                bld.row({v_v[k]: 1.0}, vmin, ("dg_v_lo", nid))
                bld.row({v_v[k]: -1.0}, -vmax, ("dg_v_hi", nid))

    # ---- net consumption (pc = beta pc_max, qc = beta qc_max)
    for k in range(n):
        nid = ids[k]
        cp = {pt_v[k]: 1.0}
        cq = {qt_v[k]: 1.0}
        rp = rq = 0.0
        a = load_of.get(k)
        if a is not None:
            pcm, qcm = lp["pc_max"][a], lp["qc_max"][a]
            if beta_v[a] is None:
                rp += pcm * beta_c[a]
                rq += qcm * beta_c[a]
            else:
                cp[beta_v[a]] = -pcm
                cq[beta_v[a]] = -qcm
        g = dg_of.get(k)
        if g is not None and pg_v[g] is not None:
            cp[pg_v[g]] = 1.0
            cq[qg_v[g]] = 1.0
        elif g is not None:
            rp -= pg_c[g]
            rq -= gp["eta"][g] * pg_c[g]
        bld.row(cp, rp, ("inj_p", nid), eq=True)
        bld.row(cq, rq, ("inj_q", nid), eq=True)

    # ---- flows and voltages
    for k in range(n):
        nid = ids[k]
        r, x = net.r[k], net.x[k]
        cp = {P_v[k]: 1.0, pt_v[k]: -1.0}
        cq = {Q_v[k]: 1.0, qt_v[k]: -1.0}
        for ch in net.children[k]:
            cp[P_v[ch]] = -1.0
            cq[Q_v[ch]] = -1.0
        if not lpf:
            cp[ell_v[k]] = -r
            cq[ell_v[k]] = -x
        bld.row(cp, 0.0, ("flow_p", nid), eq=True)
        bld.row(cq, 0.0, ("flow_q", nid), eq=True)
        vi = v0 if net.parent[k] < 0 else v_v[net.parent[k]]
        cv = {v_v[k]: 1.0, vi: -1.0, P_v[k]: 2.0 * r, Q_v[k]: 2.0 * x}
        if not lpf:
            cv[ell_v[k]] = -(r * r + x * x)
        bld.row(cv, 0.0, ("vdrop", nid), eq=True)
        if not lpf:
            bld.cones.append((
                [{P_v[k]: 2.0}, {Q_v[k]: 2.0}, {vi: 1.0, ell_v[k]: -1.0}],
                {vi: 1.0, ell_v[k]: 1.0},
            ))

    # ---- voltage-regulation auxiliary t >= |v_nom - v_i|
    for k in range(n):
        bld.row({t: 1.0, v_v[k]: 1.0}, net.v_nom, ("vr_lo", ids[k]))
        bld.row({t: 1.0, v_v[k]: -1.0}, -net.v_nom, ("vr_hi", ids[k]))

    # ---- structural cuts between free binaries: b_i <= b_j
    for kind, i, j in cut_pairs:
        vs = kc_v if kind == "kc" else kg_v
        vi_, vj_ = vs[i], vs[j]
        if vi_ is not None and vj_ is not None:
            bld.row({vj_: 1.0, vi_: -1.0}, 0.0, ("cut_" + kind, ids[(net.load_nodes if kind == "kc" else net.dg_nodes)[i]]))

    prog = bld.build(net.n_dg, d)
    lay = Layout(beta=beta_v, beta_const=beta_c, kc=kc_v, kg=kg_v, pg=pg_v, qg=qg_v, pg_const=pg_c, pt=pt_v,
                 qt=qt_v, P=P_v, Q=Q_v, ell=ell_v, v=v_v, v0=v0, t=t, attacked_pg=attacked_pg)
    return prog, lay


def assemble_operator_socp(net: Network, dv0: float, d, kappa: ConfigurationVector,
                           lpf: bool = False) -> ConicProgram:
    """Fixed-configuration operator program."""
    prog, _ = assemble_program(net, dv0, d, kappa.kc, kappa.kg, Mode(lpf=lpf))
    return prog


# ---------------------------------------------------------------------------
# solution decoding
# ---------------------------------------------------------------------------
def _val(w: np.ndarray, idx, const: float = 0.0) -> float:
    return const if idx is None else float(w[idx])


def decode(net: Network, lay: Layout, w: np.ndarray, kc_fix, kg_fix, d) -> tuple[OperatorResponse, NetworkState]:
    kc = np.array([_val(w, lay.kc[a], kc_fix[a]) for a in range(net.n_loads)])
    kg = np.array([_val(w, lay.kg[g], max(kg_fix[g], d[g])) for g in range(net.n_dg)])
    beta = np.array([_val(w, lay.beta[a], lay.beta_const[a]) for a in range(net.n_loads)])
    lp = net.load_params
    pc = np.zeros(net.n)
    qc = np.zeros(net.n)
    pg = np.zeros(net.n)
    qg = np.zeros(net.n)
    pc[net.load_nodes] = beta * lp["pc_max"]
    qc[net.load_nodes] = beta * lp["qc_max"]
    pg[net.dg_nodes] = [_val(w, i, c) for i, c in zip(lay.pg, lay.pg_const)]
    qg[net.dg_nodes] = [_val(w, i, c * e) for i, c, e in zip(lay.qg, lay.pg_const, net.dg_params["eta"])]
    pick = lambda lst: np.array([_val(w, i) for i in lst])
    state = NetworkState(pc=pc, qc=qc, pg=pg, qg=qg, pt=pick(lay.pt), qt=pick(lay.qt), P=pick(lay.P),
                         Q=pick(lay.Q), v=pick(lay.v), ell=pick(lay.ell), v0=float(w[lay.v0]))
    return OperatorResponse(beta=beta, kc=kc, kg=kg), state


# ---------------------------------------------------------------------------
# fixed configuration
# ---------------------------------------------------------------------------
@dataclass
class FixedResult:
    value: float
    program: ConicProgram | None
    solution: ConicSolution | None
    response: OperatorResponse | None = None
    state: NetworkState | None = None

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.value)


class SolverFailure(RuntimeError):
    def __init__(self, msg: str, program: ConicProgram | None = None):
        super().__init__(msg)
        self.program = program


class NoFeasibleConfiguration(SolverFailure):
    """Every configuration allowed by the fixings is infeasible."""


def _solve_config(net, dv0, d, kc, kg, mode, cut_pairs=(), tol=SOLVE_TOL, envelope=None) -> FixedResult:
    prog, lay = assemble_program(net, dv0, d, kc, kg, mode, cut_pairs, envelope=envelope)
    sol = conic.solve(prog, tol=tol)
    if sol.ok and lay.attacked_pg:
        # an attacked DG may only sit at zero output; if the optimum pushes it
        # negative, pin it explicitly (its capacity then has no marginal value)
        neg = [g for g, idx in lay.attacked_pg if sol.w[idx] < -1e-7]
        if neg:
            prog, lay = assemble_program(net, dv0, d, kc, kg, mode, cut_pairs, pin_attacked=neg,
                                         envelope=envelope)
            sol = conic.solve(prog, tol=tol)
    if sol.status == conic.INFEASIBLE:
        return FixedResult(math.inf, prog, sol)
    if not sol.ok:
        raise SolverFailure(f"conic solve ended with {sol.status}: {sol.message}", prog)
    u, s = decode(net, lay, sol.w, kc, kg, d)
    return FixedResult(sol.objective, prog, sol, u, s)


def solve_fixed_config(net: Network, dv0: float, d, kappa: ConfigurationVector,
                       lpf: bool = False, mode: Mode | None = None) -> FixedResult:
    """Optimal loss for a fixed configuration (+inf when infeasible)."""
    kc = np.asarray(kappa.kc, dtype=int)
    kg = np.asarray(kappa.kg, dtype=int)
    if np.any(kc == FREE) or np.any(kg == FREE):
        raise ConfigurationError("fixed configuration must be binary")
    return _solve_config(net, dv0, np.asarray(d, dtype=int), kc, kg, mode or Mode(lpf=lpf))


# ---------------------------------------------------------------------------
# structural cuts
# ---------------------------------------------------------------------------
def load_cut_pairs(net: Network, d=None) -> list[tuple[int, int]]:
    """Ancestor/descendant load pairs (i, j) for which kc_i <= kc_j is valid.

    Moving j's demand up to i only lowers flows on the path between them, which
    helps as long as those flows stay forward. A pair is therefore admitted only
    when every DG below i on the way to j is attacked (``d`` None means none are).
    """
    lp = net.load_params
    anc = net.ancestor_matrix
    G = np.asarray(net.dg_nodes, dtype=int)
    live = G if d is None else G[np.asarray(d, dtype=int) == 0]
    out = []
    L = net.load_nodes
    for a, i in enumerate(L):
        for b, j in enumerate(L):
            if a == b or not anc[i, j]:
                continue
            c = j
            while net.parent[c] != i:
                c = net.parent[c]
            if live.size and anc[c, live].any():
                continue
            if (lp["v_min"][a] <= lp["v_min"][b] and lp["pc_max"][a] <= lp["pc_max"][b]
                    and lp["qc_max"][a] <= lp["qc_max"][b] and lp["beta_min"][a] <= lp["beta_min"][b]
                    and lp["cost_lc"][a] <= lp["cost_lc"][b] and lp["cost_ls"][a] >= lp["cost_ls"][b]):
                out.append((a, b))
    return out


def dg_cut_pairs(net: Network, d) -> list[tuple[int, int]]:
    """Ancestor/descendant DG pairs (i, j), both unattacked, for which kg_i <= kg_j is valid."""
    gp = net.dg_params
    anc = net.ancestor_matrix
    out = []
    G = net.dg_nodes
    for a, i in enumerate(G):
        for b, j in enumerate(G):
            if a == b or not anc[i, j] or d[a] or d[b]:
                continue
            if (gp["v_min"][a] <= gp["v_min"][b] and gp["pg_max"][a] >= gp["pg_max"][b]
                    and gp["eta"][a] >= gp["eta"][b]):
                out.append((a, b))
    return out


def _reduce(pairs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Transitive reduction of a transitive relation."""
    s = set(pairs)
    succ: dict[int, set[int]] = {}
    for i, j in pairs:
        succ.setdefault(i, set()).add(j)
    return [(i, j) for i, j in pairs if not any((k, j) in s for k in succ.get(i, ()) if k != j)]


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------
@dataclass
class MisocpResult:
    response: OperatorResponse
    state: NetworkState
    value: float
    kappa: ConfigurationVector
    fixed: FixedResult
    nodes: int = 0
    solves: int = 0

    @property
    def loss(self) -> float:
        return self.value

    def breakdown(self, net: Network, lpf: bool = False) -> LossBreakdown:
        return loss(net, self.response, self.state, lpf=lpf)


class _Implications:
    """Propagation of fixings through the structural-cut relation."""

    def __init__(self, kinds: dict[str, list[tuple[int, int]]], sizes: dict[str, int]):
        self.up = {k: [[] for _ in range(sizes[k])] for k in sizes}    # i -> js with b_i <= b_j
        self.down = {k: [[] for _ in range(sizes[k])] for k in sizes}  # j -> is with b_i <= b_j
        for kind, pairs in kinds.items():
            for i, j in pairs:
                self.up[kind][i].append(j)
                self.down[kind][j].append(i)

    def fix(self, fixes: dict[str, np.ndarray], kind: str, i: int, val: int) -> bool:
        arr = fixes[kind]
        stack = [(i, val)]
        while stack:
            k, v = stack.pop()
            if arr[k] == v:
                continue
            if arr[k] != FREE:
                return False
            arr[k] = v
            nbrs = self.up[kind][k] if v == 1 else self.down[kind][k]
            stack.extend((m, v) for m in nbrs)
        return True


def branch_and_bound(net: Network, dv0: float, d, mode: Mode = OPERATOR, *,
                     use_structural_cuts: bool = True, kc_init=None, kg_init=None,
                     tol: float = SOLVE_TOL, tight_big_m: bool = True) -> MisocpResult:
    """Global optimum of the operator problem over free connectivity binaries."""
    d = np.asarray(d, dtype=int)
    kc0 = np.full(net.n_loads, FREE, dtype=int) if kc_init is None else np.array(kc_init, dtype=int)
    kg0 = np.full(net.n_dg, FREE, dtype=int) if kg_init is None else np.array(kg_init, dtype=int)
    kg0 = np.where(d == 1, 1, kg0)
    if mode.beta == "full":
        kc0[:] = 0

    kinds: dict[str, list[tuple[int, int]]] = {"kc": [], "kg": []}
    if use_structural_cuts:
        kinds["kc"] = [(i, j) for i, j in load_cut_pairs(net, d) if kc0[i] == FREE and kc0[j] == FREE]
        kinds["kg"] = [(i, j) for i, j in dg_cut_pairs(net, d) if kg0[i] == FREE and kg0[j] == FREE]
    imp = _Implications(kinds, {"kc": net.n_loads, "kg": net.n_dg})
    cut_rows = [("kc", i, j) for i, j in _reduce(kinds["kc"])] + [("kg", i, j) for i, j in _reduce(kinds["kg"])]
    depth_kc = net.depth[net.load_nodes]
    depth_kg = net.depth[net.dg_nodes]

    envelope = voltage_envelope(net, dv0) if tight_big_m and mode.load_windows else None
    counter = itertools.count()
    stats = {"nodes": 0, "solves": 0}
    best: list = [math.inf, None]  # value, FixedResult

    def relax(fixes):
        stats["solves"] += 1
        return _solve_config(net, dv0, d, fixes["kc"], fixes["kg"], mode, cut_rows, tol, envelope)

    def consider_integral(fixes, res: FixedResult):
        kc_val = res.response.kc
        kg_val = res.response.kg
        full = {"kc": fixes["kc"].copy(), "kg": fixes["kg"].copy()}
        full["kc"][full["kc"] == FREE] = np.rint(kc_val[full["kc"] == FREE]).astype(int)
        full["kg"][full["kg"] == FREE] = np.rint(kg_val[full["kg"] == FREE]).astype(int)
        if np.any(fixes["kc"] == FREE) or np.any(fixes["kg"] == FREE):
            stats["solves"] += 1
            res = _solve_config(net, dv0, d, full["kc"], full["kg"], mode, (), tol)
        if res.value < best[0]:
            best[0], best[1] = res.value, res

    def fractional(fixes, res: FixedResult):
        cand = []
        for kind, vals, depth in (("kc", res.response.kc, depth_kc), ("kg", res.response.kg, depth_kg)):
            free = np.flatnonzero(fixes[kind] == FREE)
            for i in free:
                f = vals[i]
                dist = min(f, 1.0 - f)
                if dist > INT_TOL:
                    cand.append((-dist, -int(depth[i]), kind, int(i)))
        if not cand:
            return None
        # most fractional first, then deepest node, then kind/index for determinism
        cand.sort(key=lambda c: (round(c[0], 9), c[1], c[2], c[3]))
        return cand[0][2], cand[0][3]

    root = {"kc": kc0.copy(), "kg": kg0.copy()}
    heap: list = []

    def push(fixes, res: FixedResult, depth: int):
        if not res.feasible:
            return
        if res.value >= best[0] - REL_GAP * max(1.0, abs(best[0])):
            return
        br = fractional(fixes, res)
        if br is None:
            consider_integral(fixes, res)
            return
        heapq.heappush(heap, (res.value, -depth, next(counter), fixes, br))

    push(root, relax(root), 0)
    while heap:
        bound, negdepth, _, fixes, (kind, i) = heapq.heappop(heap)
        if bound >= best[0] - REL_GAP * max(1.0, abs(best[0])):
            break
        stats["nodes"] += 1
        for val in (1, 0) if kind == "kc" else (0, 1):
            child = {"kc": fixes["kc"].copy(), "kg": fixes["kg"].copy()}
            if not imp.fix(child, kind, i, val):
                continue
            push(child, relax(child), -negdepth + 1)

    if best[1] is None:
        raise NoFeasibleConfiguration("branch-and-bound found no feasible configuration")
    res: FixedResult = best[1]
    kappa = ConfigurationVector(kc=np.rint(res.response.kc).astype(int), kg=np.rint(res.response.kg).astype(int))
    return MisocpResult(response=res.response, state=res.state, value=res.value, kappa=kappa, fixed=res,
                        nodes=stats["nodes"], solves=stats["solves"])


_MISOCP_CACHE: dict = {}


def _cached(net, dv0, d, mode, use_structural_cuts) -> MisocpResult:
    key = (id(net), float(dv0), tuple(int(x) for x in d), mode, bool(use_structural_cuts))
    hit = _MISOCP_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    res = branch_and_bound(net, dv0, d, mode, use_structural_cuts=use_structural_cuts)
    _MISOCP_CACHE[key] = (net, res)
    return res


def clear_cache() -> None:
    _MISOCP_CACHE.clear()


def solve_misocp(net: Network, dv0: float, d, use_structural_cuts: bool = True,
                 cache: bool = True) -> MisocpResult:
    """Operator's optimal response under the nonlinear model."""
    if cache:
        return _cached(net, dv0, d, OPERATOR, use_structural_cuts)
    return branch_and_bound(net, dv0, d, OPERATOR, use_structural_cuts=use_structural_cuts)


def solve_milp_lpf(net: Network, dv0: float, d, use_structural_cuts: bool = True,
                   cache: bool = True) -> MisocpResult:
    """Operator's optimal response under the linear (lossless) model."""
    mode = Mode(lpf=True)
    if cache:
        return _cached(net, dv0, d, mode, use_structural_cuts)
    return branch_and_bound(net, dv0, d, mode, use_structural_cuts=use_structural_cuts)


def exhaustive_misocp(net: Network, dv0: float, d, mode: Mode = OPERATOR) -> tuple[float, ConfigurationVector | None]:
    """Enumerate every configuration (small instances only)."""
    d = np.asarray(d, dtype=int)
    free_g = [g for g in range(net.n_dg) if d[g] == 0]
    best, arg = math.inf, None
    for kc in itertools.product((0, 1), repeat=net.n_loads):
        for bits in itertools.product((0, 1), repeat=len(free_g)):
            kg = d.copy()
            kg[free_g] = bits
            val = _solve_config(net, dv0, d, np.array(kc), kg, mode).value
            if val < best:
                best, arg = val, ConfigurationVector(np.array(kc), kg)
    return best, arg
