"""Linear (LinDistFlow) and nonlinear (DistFlow, backward-forward sweep) power flow."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .network import Network, NetworkError, check_nrpf


class PowerFlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("SweepConfig needs tol > 0 and max_iter >= 1")


@dataclass
class NetworkState:
    """Per-node consumptions and voltages, per-edge flows (edge j enters node j)."""

    pc: np.ndarray
    qc: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    pt: np.ndarray
    qt: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    v: np.ndarray
    ell: np.ndarray
    v0: float
    iterations: int = 0
    nrpf: bool = True
    extra: dict = field(default_factory=dict)

    def v_from(self, net: Network) -> np.ndarray:
        """Squared voltage at the sending end of every edge."""
        par = net.parent_arr
        return np.where(par < 0, self.v0, self.v[np.maximum(par, 0)])


def _check(net: Network, pt, qt) -> tuple[np.ndarray, np.ndarray]:
    pt = np.asarray(pt, dtype=float)
    qt = np.asarray(qt, dtype=float)
    if pt.shape != (net.n,) or qt.shape != (net.n,):
        raise NetworkError(f"consumption arrays must have length {net.n}")
    return pt, qt


def _drop_to_voltage(net: Network, v0: float, drop: np.ndarray) -> np.ndarray:
    # v_j = v0 - sum of per-edge drops along the root path of j
    return v0 - net.ancestor_matrix.T.astype(float) @ drop


def solve_lpf(net: Network, dv0: float, pt, qt) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form lossless flows and voltages."""
    pt, qt = _check(net, pt, qt)
    M = net.ancestor_matrix.astype(float)
    P = M @ pt
    Q = M @ qt
    v = _drop_to_voltage(net, net.v_nom - dv0, 2.0 * (net.r_arr * P + net.x_arr * Q))
    return P, Q, v


def solve_npf_bfs(net: Network, dv0: float, pt, qt, cfg: SweepConfig = SweepConfig(),
                  pc=None, qc=None) -> NetworkState:
    """Backward-forward sweep for the DistFlow equations on a radial feeder."""
    pt, qt = _check(net, pt, qt)
    nrpf = check_nrpf(net, pt, qt)
    if not nrpf:
        warnings.warn("reverse power flow present: relaxation exactness not guaranteed", RuntimeWarning)
    M = net.ancestor_matrix.astype(float)
    MT = M.T.copy()
    r, x = net.r_arr, net.x_arr
    z2 = r * r + x * x
    par = net.parent_arr
    root = par < 0
    pidx = np.maximum(par, 0)
    v0 = net.v_nom - dv0
    if v0 <= 0:
        raise PowerFlowError("substation voltage must be positive")

    P, Q, _ = solve_lpf(net, dv0, pt, qt)
    v = np.full(net.n, v0)
    ell = np.zeros(net.n)
    for it in range(1, cfg.max_iter + 1):
        v_send = np.where(root, v0, v[pidx])
        new_ell = (P * P + Q * Q) / v_send
        P = M @ (pt + r * new_ell)
        Q = M @ (qt + x * new_ell)
        v = v0 - MT @ (2.0 * (r * P + x * Q) - z2 * new_ell)
        if not np.all(v > 0):
            raise PowerFlowError("voltage collapsed to a non-positive value during the sweep")
        delta = np.max(np.abs(new_ell - ell)) if net.n else 0.0
        ell = new_ell
        if delta <= cfg.tol:
            break
    else:
        raise PowerFlowError(f"sweep did not converge within {cfg.max_iter} iterations")
    pc = np.maximum(pt, 0.0) if pc is None else np.asarray(pc, dtype=float)
    qc = np.maximum(qt, 0.0) if qc is None else np.asarray(qc, dtype=float)
    return NetworkState(pc=pc, qc=qc, pg=pc - pt, qg=qc - qt, pt=pt, qt=qt, P=P, Q=Q, v=v,
                        ell=ell, v0=v0, iterations=it, nrpf=nrpf)


def relaxation_tightness(net: Network, s: NetworkState) -> float:
    """Largest slack of the conic current relaxation over all edges."""
    if s.P.shape != (net.n,):
        raise NetworkError("state does not match network")
    if net.n == 0:
        return 0.0
    return float(np.max(np.abs(s.ell * s.v_from(net) - s.P ** 2 - s.Q ** 2)))


def consumption(net: Network, beta, kc, kg) -> dict[str, np.ndarray]:
    """Per-node consumption/generation implied by an operator response.

    ``beta``/``kc`` are indexed over loads, ``kg`` over DGs; connected DGs run
    at capacity with reactive output eta times active output.
    """
    pc = np.zeros(net.n)
    qc = np.zeros(net.n)
    pg = np.zeros(net.n)
    qg = np.zeros(net.n)
    lp, gp = net.load_params, net.dg_params
    beta = np.asarray(beta, dtype=float)
    pc[net.load_nodes] = beta * lp["pc_max"]
    qc[net.load_nodes] = beta * lp["qc_max"]
    on = 1.0 - np.asarray(kg, dtype=float)
    pg[net.dg_nodes] = gp["pg_max"] * on
    qg[net.dg_nodes] = gp["eta"] * gp["pg_max"] * on
    return {"pc": pc, "qc": qc, "pg": pg, "qg": qg, "pt": pc - pg, "qt": qc - qg}
