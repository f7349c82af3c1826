"""Autonomous-disconnect cascades and their randomized worst case.

Without coordinated control, an attack first trips DGs whose voltage leaves
its window (intermediate step, loads untouched), then every load whose
intermediate voltage is out of range trips and the remaining components
settle into a voltage-feasible final configuration (final step).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import operator as op
from .network import Network, max_loss
from .powerflow import NetworkState

INTERMEDIATE = op.Mode(beta="full", load_windows=False, dg_windows=True, fixed_output=True)
FINAL = op.Mode(beta="no_control", load_windows=True, dg_windows=True, fixed_output=True)


@dataclass
class CascadeOutcome:
    u_in: op.OperatorResponse
    x_in: NetworkState
    u_nr: op.OperatorResponse
    x_nr: NetworkState
    loss_ad: float


def _collapsed(net: Network, dv0: float) -> tuple[op.OperatorResponse, NetworkState]:
    z = np.zeros(net.n)
    u = op.OperatorResponse(beta=np.ones(net.n_loads), kc=np.zeros(net.n_loads), kg=np.ones(net.n_dg))
    return u, NetworkState(pc=z, qc=z, pg=z, qg=z, pt=z, qt=z, P=z, Q=z, v=z.copy(), ell=z, v0=net.v_nom - dv0)


def cascade_intermediate(net: Network, dv0: float, d) -> tuple[op.OperatorResponse, NetworkState]:
    """DG trips under full demand; only DG voltage windows are enforced.

    If no set of surviving DGs can carry full demand the feeder collapses:
    every DG trips and all node voltages are reported as zero.
    """
    d = np.asarray(d, dtype=int)
    try:
        res = op.branch_and_bound(net, dv0, d, INTERMEDIATE, use_structural_cuts=False,
                                  kc_init=np.zeros(net.n_loads, dtype=int))
    except op.NoFeasibleConfiguration:
        return _collapsed(net, dv0)
    return res.response, res.state


def load_trips(net: Network, v_in: np.ndarray) -> np.ndarray:
    """Loads whose voltage lies outside their window (one flag per load)."""
    lp = net.load_params
    v = np.asarray(v_in, dtype=float)[net.load_nodes]
    return ((v < lp["v_min"] - 1e-9) | (v > lp["v_max"] + 1e-9)).astype(int)


def cascade_final(net: Network, dv0: float, kg_in, v_in) -> tuple[op.OperatorResponse, NetworkState, float]:
    """Settled configuration: tripped DGs stay off, out-of-range loads trip, no load control."""
    kg_in = np.rint(np.asarray(kg_in, dtype=float)).astype(int)
    kc0 = np.where(load_trips(net, v_in) == 1, 1, op.FREE)
    kg0 = np.where(kg_in == 1, 1, op.FREE)
    # attacked DGs are among the tripped ones; passing d = 0 keeps them as fixed disconnects
    d = np.zeros(net.n_dg, dtype=int)
    res = op.branch_and_bound(net, dv0, d, FINAL, use_structural_cuts=True, kc_init=kc0, kg_init=kg0)
    return res.response, res.state, res.value


_CACHE: dict = {}


def get_cascade_final_state(net: Network, dv0: float, d, cache: bool = True) -> CascadeOutcome:
    d = np.asarray(d, dtype=int)
    key = (id(net), float(dv0), tuple(int(x) for x in d))
    if cache:
        hit = _CACHE.get(key)
        if hit is not None and hit[0] is net:
            return hit[1]
    u_in, x_in = cascade_intermediate(net, dv0, d)
    u_nr, x_nr, value = cascade_final(net, dv0, u_in.kg, x_in.v)
    out = CascadeOutcome(u_in=u_in, x_in=x_in, u_nr=u_nr, x_nr=x_nr, loss_ad=value)
    if cache:
        _CACHE[key] = (net, out)
    return out


def clear_cache() -> None:
    _CACHE.clear()


@dataclass
class RandomizedRun:
    Z: int
    seed: int
    Y: np.ndarray           # row k-1 holds the loss after k nodes are attacked
    V: np.ndarray           # per-cardinality worst loss
    perms: np.ndarray       # Z x N_dg DG positions in attack order

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k"] + [f"perm_{t}" for t in range(self.Z)] + ["worst"])
        for k in range(self.Y.shape[0]):
            w.writerow([k + 1] + [repr(float(y)) for y in self.Y[k]] + [repr(float(self.V[k]))])
        return buf.getvalue()


def randomized_worst_case(net: Network, dv0: float, Z: int, seed: int) -> RandomizedRun:
    """Grow attacks along Z random DG orders and keep the worst loss per size."""
    if Z < 1:
        raise ValueError("Z must be at least 1")
    rng = np.random.default_rng(seed)  # PCG64; permutation() is a Fisher-Yates shuffle
    n = net.n_dg
    Y = np.zeros((n, Z))
    perms = np.zeros((Z, n), dtype=int)
    for t in range(Z):
        perm = rng.permutation(n)
        perms[t] = perm
        d = np.zeros(n, dtype=int)
        for k in range(n):
            d[perm[k]] = 1
            Y[k, t] = get_cascade_final_state(net, dv0, d).loss_ad
    V = Y.max(axis=1) if n else np.zeros(0)
    return RandomizedRun(Z=Z, seed=seed, Y=Y, V=V, perms=perms)


@dataclass
class ResilienceCurves:
    k: np.ndarray
    resilience_mm: np.ndarray
    resilience_ad: np.ndarray
    value_of_response: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "resilience_mm", "resilience_ad", "value_of_response"])
        for row in zip(self.k, self.resilience_mm, self.resilience_ad, self.value_of_response):
            w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()

    def to_records(self) -> list[dict]:
        return [{"k": int(k), "resilience_mm": float(a), "resilience_ad": float(b), "value_of_response": float(c)}
                for k, a, b, c in zip(self.k, self.resilience_mm, self.resilience_ad, self.value_of_response)]


def resilience_curves(run: RandomizedRun, maxmin: Sequence[float], l_max: float) -> ResilienceCurves:
    """Coordinated vs autonomous resilience per attack size.

    ``maxmin`` holds the coordinated max-min loss for k = 1..N_dg, aligned
    with the rows of ``run.Y``; a leading k = 0 entry is also accepted.
    """
    mm = np.asarray(maxmin, dtype=float)
    n = run.V.shape[0]
    if mm.shape == (n + 1,):
        mm = mm[1:]
    if mm.shape != (n,):
        raise ValueError(f"max-min losses must have {n} entries (or {n + 1} including k = 0)")
    if not l_max > 0:
        raise ValueError("L_max must be positive")
    r_mm = 100.0 * (1.0 - mm / l_max)
    r_ad = 100.0 * (1.0 - run.V / l_max)
    return ResilienceCurves(k=np.arange(1, n + 1), resilience_mm=r_mm, resilience_ad=r_ad,
                            value_of_response=r_mm - r_ad)


def nominal_curves(net: Network, dv0: float, run: RandomizedRun, maxmin: Sequence[float]) -> ResilienceCurves:
    return resilience_curves(run, maxmin, max_loss(net))
