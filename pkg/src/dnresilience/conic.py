"""Primal-dual interior-point solver for linear / second-order cone programs.

Programs are stated as

    minimize    c'w + c0
    subject to  A w >= b + B d          (rows flagged ``eq`` hold with equality)
                ||E_j w + f_j|| <= g_j'w + h_j

and the dual multipliers (lambda for the linear rows, (alpha_j, beta_j) per
cone) satisfy the stationarity condition

    c - A'lambda + sum_j (E_j'alpha_j - beta_j g_j) = 0,   ||alpha_j|| <= beta_j.

The solver eliminates equality rows through a null-space basis and then runs
a homogeneous self-dual path-following method with Nesterov-Todd scaling and
Mehrotra predictor-corrector steps on the reduced problem.
"""
from __future__ import annotations

import io
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
NUMERICAL_FAILURE = "NumericalFailure"

LOOSE_TOL = 1e-6  # accepted when the iteration stalls short of the requested tolerance


@dataclass
class Cone:
    """Second-order constraint ||E w + f|| <= g'w + h."""

    E: np.ndarray
    g: np.ndarray
    f: np.ndarray | None = None
    h: float = 0.0

    def __post_init__(self) -> None:
        self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.g = np.asarray(self.g, dtype=float)
        self.f = np.zeros(self.E.shape[0]) if self.f is None else np.asarray(self.f, dtype=float)


@dataclass
class ConicProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    B: np.ndarray | None = None
    d: np.ndarray | None = None
    cones: list[Cone] = field(default_factory=list)
    row_tags: list[tuple] = field(default_factory=list)
    eq: np.ndarray | None = None
    c0: float = 0.0
    var_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(m)
        if self.B is None:
            self.B = np.zeros((m, 0))
        self.B = np.asarray(self.B, dtype=float).reshape(m, -1)
        self.d = np.zeros(self.B.shape[1]) if self.d is None else np.asarray(self.d, dtype=float)
        self.eq = np.zeros(m, dtype=bool) if self.eq is None else np.asarray(self.eq, dtype=bool)
        if not self.row_tags:
            self.row_tags = [("row", k) for k in range(m)]
        if len(self.row_tags) != m or self.eq.shape != (m,) or self.d.shape != (self.B.shape[1],):
            raise ValueError("inconsistent program dimensions")
        for cone in self.cones:
            if cone.E.shape[1] != n or cone.g.shape != (n,):
                raise ValueError("cone column count does not match the program")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def rhs(self) -> np.ndarray:
        return self.b + self.B @ self.d

    def rows_tagged(self, tag: str) -> list[int]:
        return [k for k, t in enumerate(self.row_tags) if t[0] == tag]

    def dump(self) -> str:
        """Plain-text standard-form listing."""
        out = io.StringIO()
        names = self.var_names or [f"w{k}" for k in range(self.n)]
        out.write(f"# variables {self.n}, linear rows {len(self.b)}, cones {len(self.cones)}\n")
        out.write("minimize " + _affine(self.c, names, self.c0) + "\n")
        rhs = self.rhs
        for k in range(len(self.b)):
            rel = "=" if self.eq[k] else ">="
            coup = ""
            if self.B.shape[1] and np.any(self.B[k]):
                coup = "  [b + B d: b=%.12g, B=%s]" % (self.b[k], np.array2string(self.B[k], precision=6))
            out.write(f"{self.row_tags[k]}: {_affine(self.A[k], names)} {rel} {rhs[k]:.12g}{coup}\n")
        for j, cone in enumerate(self.cones):
            parts = [_affine(cone.E[r], names, cone.f[r]) for r in range(cone.E.shape[0])]
            out.write(f"cone {j}: || {' ; '.join(parts)} || <= {_affine(cone.g, names, cone.h)}\n")
        return out.getvalue()


def _affine(coef: np.ndarray, names: Sequence[str], const: float = 0.0) -> str:
    terms = [f"{coef[k]:+.12g}*{names[k]}" for k in np.flatnonzero(coef)]
    if const or not terms:
        terms.append(f"{const:+.12g}")
    return " ".join(terms)


@dataclass
class ConicSolution:
    status: str
    w: np.ndarray | None = None
    objective: float = np.nan
    dual_objective: float = np.nan
    lam: np.ndarray | None = None
    alpha: list[np.ndarray] = field(default_factory=list)
    beta: np.ndarray | None = None
    gap: float = np.nan
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    certificate: np.ndarray | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residual(p: ConicProgram, sol: ConicSolution) -> float:
    """Norm of c - A'lambda + sum_j (E_j'alpha_j - beta_j g_j)."""
    r = p.c - p.A.T @ sol.lam
    for j, cone in enumerate(p.cones):
        r = r + cone.E.T @ sol.alpha[j] - sol.beta[j] * cone.g
    return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# cone algebra on the stacked slack vector [linear | cone_1 | cone_2 | ...]
# ---------------------------------------------------------------------------
class _Cones:
    def __init__(self, nlin: int, sizes: Sequence[int]):
        self.l = nlin
        self.groups: list[tuple[int, np.ndarray]] = []  # (q, index array k x q)
        start = nlin
        by_q: dict[int, list[np.ndarray]] = {}
        for q in sizes:
            by_q.setdefault(q, []).append(np.arange(start, start + q))
            start += q
        for q, idx in sorted(by_q.items()):
            self.groups.append((q, np.vstack(idx)))
        self.m = start
        self.degree = nlin + len(sizes)
        self.e = np.zeros(self.m)
        self.e[:nlin] = 1.0
        for _, idx in self.groups:
            self.e[idx[:, 0]] = 1.0

    def min_eig(self, u: np.ndarray) -> float:
        vals = [np.min(u[: self.l])] if self.l else []
        for _, idx in self.groups:
            x = u[idx]
            vals.append(np.min(x[:, 0] - np.linalg.norm(x[:, 1:], axis=1)))
        return float(min(vals)) if vals else 1.0

    def jordan(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(u)
        out[: self.l] = u[: self.l] * v[: self.l]
        for _, idx in self.groups:
            a, b = u[idx], v[idx]
            res = np.empty_like(a)
            res[:, 0] = np.einsum("ij,ij->i", a, b)
            res[:, 1:] = a[:, :1] * b[:, 1:] + b[:, :1] * a[:, 1:]
            out[idx] = res
        return out

    def jordan_div(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve lam o u = r for u."""
        out = np.empty_like(r)
        out[: self.l] = r[: self.l] / lam[: self.l]
        for _, idx in self.groups:
            a, b = lam[idx], r[idx]
            det = a[:, 0] ** 2 - np.einsum("ij,ij->i", a[:, 1:], a[:, 1:])
            u0 = (a[:, 0] * b[:, 0] - np.einsum("ij,ij->i", a[:, 1:], b[:, 1:])) / det
            res = np.empty_like(a)
            res[:, 0] = u0
            res[:, 1:] = (b[:, 1:] - u0[:, None] * a[:, 1:]) / a[:, :1]
            out[idx] = res
        return out

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Largest t with x + t dx in the cone (x interior)."""
        t = np.inf
        if self.l:
            neg = dx[: self.l] < 0
            if neg.any():
                t = min(t, float(np.min(-x[: self.l][neg] / dx[: self.l][neg])))
        for q, idx in self.groups:
            u, du = x[idx], dx[idx]
            sig = self._sig(q)
            a = (du * du) @ sig
            bb = (u * du) @ sig
            c = (u * u) @ sig
            disc = bb * bb - a * c
            # smallest positive root of c + 2 bb t + a t^2, when there is one
            hit = (a < 0) | ((bb < 0) & (disc >= 0))
            if hit.any():
                sq = np.sqrt(np.maximum(disc[hit], 0.0))
                t = min(t, float(np.min(c[hit] / (sq - bb[hit]))))
        return t

    def _sig(self, q: int) -> np.ndarray:
        sig = -np.ones(q)
        sig[0] = 1.0
        return sig


class _Scaling:
    """Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s = lam."""

    def __init__(self, cs: _Cones, s: np.ndarray, z: np.ndarray):
        self.cs = cs
        l = cs.l
        self.dl = np.sqrt(s[:l] / z[:l])
        self.blocks = []  # (idx, W, Winv)
        lam = np.empty_like(s)
        lam[:l] = np.sqrt(s[:l] * z[:l])
        for q, idx in cs.groups:
            S, Z = s[idx], z[idx]
            sn = np.sqrt(S[:, 0] ** 2 - np.einsum("ij,ij->i", S[:, 1:], S[:, 1:]))
            zn = np.sqrt(Z[:, 0] ** 2 - np.einsum("ij,ij->i", Z[:, 1:], Z[:, 1:]))
            sb = S / sn[:, None]
            zb = Z / zn[:, None]
            gam = np.sqrt((1.0 + np.einsum("ij,ij->i", sb, zb)) / 2.0)
            Jz = zb.copy()
            Jz[:, 1:] *= -1.0
            wb = (sb + Jz) / (2.0 * gam[:, None])
            # W = beta (2 v v' - J) with v = (wb + e) / sqrt(2 (wb_0 + 1))
            wb[:, 0] += 1.0
            wb /= np.sqrt(2.0 * wb[:, :1])
            bet = np.sqrt(sn / zn)
            J = -np.eye(q)
            J[0, 0] = 1.0
            outer = wb[:, :, None] * wb[:, None, :]
            W = bet[:, None, None] * (2.0 * outer - J)
            Jw = wb.copy()
            Jw[:, 1:] *= -1.0
            Winv = (1.0 / bet)[:, None, None] * (2.0 * Jw[:, :, None] * Jw[:, None, :] - J)
            self.blocks.append((idx, W, Winv))
            lam[idx] = (W @ Z[:, :, None])[:, :, 0]
        self.lam = lam

    def apply(self, u: np.ndarray, inverse: bool = False) -> np.ndarray:
        out = np.empty_like(u)
        l = self.cs.l
        out[:l] = u[:l] / self.dl if inverse else u[:l] * self.dl
        for idx, W, Winv in self.blocks:
            M = Winv if inverse else W
            out[idx] = (M @ u[idx][:, :, None])[:, :, 0]
        return out

    def apply_rows_inv(self, G: np.ndarray) -> np.ndarray:
        """W^{-1} G for a matrix with one row per slack entry."""
        out = np.empty_like(G)
        l = self.cs.l
        out[:l] = G[:l] / self.dl[:, None]
        for idx, _, Winv in self.blocks:
            out[idx] = Winv @ G[idx]
        return out


# ---------------------------------------------------------------------------
# equality elimination (cached: assembled programs share their equality block)
# ---------------------------------------------------------------------------
_NULLSPACE_CACHE: "OrderedDict[tuple, tuple[np.ndarray, np.ndarray]]" = OrderedDict()


def _nullspace(Aeq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Null-space basis Z of Aeq and a right inverse X (Aeq X = I on the range).

    X gives a particular solution X b of Aeq w = b, and X' r solves
    Aeq' mu = r whenever r lies in the row space.
    """
    key = (Aeq.shape, hash(Aeq.tobytes()))
    hit = _NULLSPACE_CACHE.get(key)
    if hit is not None:
        _NULLSPACE_CACHE.move_to_end(key)
        return hit
    m, n = Aeq.shape
    if m == 0:
        res = (np.eye(n), np.zeros((n, 0)))
    else:
        Q, R, piv = sla.qr(Aeq.T, pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(m, n) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int(np.sum(diag > tol))
        Z = Q[:, rank:].copy()
        X = np.zeros((n, m))
        X[:, piv[:rank]] = Q[:, :rank] @ sla.solve_triangular(R[:rank, :rank], np.eye(rank), trans="T")
        res = (Z, X)
    _NULLSPACE_CACHE[key] = res
    if len(_NULLSPACE_CACHE) > 64:
        _NULLSPACE_CACHE.popitem(last=False)
    return res


# ---------------------------------------------------------------------------
def solve(p: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve a conic program; see the module docstring for the conventions."""
    rhs = p.rhs
    eq = p.eq
    Ain, bin_ = p.A[~eq], rhs[~eq]
    Aeq, beq = p.A[eq], rhs[eq]
    n = p.n

    Z, X = _nullspace(Aeq)
    w_p = X @ beq
    if Aeq.shape[0] and np.linalg.norm(Aeq @ w_p - beq) > 1e-9 * max(1.0, np.linalg.norm(beq)):
        return ConicSolution(INFEASIBLE, message="inconsistent equality rows")

    # stacked G w + s = h with s in K
    sizes = [cone.E.shape[0] + 1 for cone in p.cones]
    Gw = np.vstack([-Ain] + [-np.vstack([cone.g, cone.E]) for cone in p.cones]) if p.cones else -Ain
    hw = np.concatenate([-bin_] + [np.concatenate([[cone.h], cone.f]) for cone in p.cones])
    cs = _Cones(Ain.shape[0], sizes)

    G = Gw @ Z
    h = hw - Gw @ w_p
    c = Z.T @ p.c

    x, s, zz, it, status, msg, stats = _hsde(G, h, c, cs, tol, max_iter)

    sol = ConicSolution(status, iterations=it, message=msg, residuals=stats)
    if status == INFEASIBLE:
        sol.certificate = zz
        return sol
    if status != OPTIMAL:
        return sol

    w = w_p + Z @ x
    lam = np.zeros(len(p.b))
    ineq_rows = np.flatnonzero(~eq)
    lam[ineq_rows] = zz[: cs.l]
    alpha, beta = [], np.zeros(len(p.cones))
    pos = cs.l
    for j, cone in enumerate(p.cones):
        q = cone.E.shape[0] + 1
        beta[j] = zz[pos]
        alpha.append(-zz[pos + 1: pos + q])
        pos += q
    # equality multipliers from the full stationarity condition
    r = p.c - Ain.T @ zz[: cs.l]
    for j, cone in enumerate(p.cones):
        r = r + cone.E.T @ alpha[j] - beta[j] * cone.g
    if Aeq.shape[0]:
        lam[np.flatnonzero(eq)] = X.T @ r
    sol.w = w
    sol.lam = lam
    sol.alpha = alpha
    sol.beta = beta
    sol.objective = float(p.c @ w) + p.c0
    dual = float(rhs @ lam) + p.c0
    for j, cone in enumerate(p.cones):
        dual += float(cone.f @ alpha[j]) - beta[j] * cone.h
    sol.dual_objective = dual
    sol.gap = abs(sol.objective - dual) / (1.0 + abs(sol.objective))
    sol.residuals["kkt"] = kkt_residual(p, sol)
    # scale-free version, comparable with the relative gap
    sol.residuals["kkt_rel"] = sol.residuals["kkt"] / (1.0 + float(np.linalg.norm(p.c)))
    sol.residuals["primal_full"] = _primal_violation(p, w)
    return sol


def _primal_violation(p: ConicProgram, w: np.ndarray) -> float:
    r = p.A @ w - p.rhs
    viol = np.where(p.eq, np.abs(r), np.maximum(-r, 0.0))
    worst = float(viol.max()) if viol.size else 0.0
    for cone in p.cones:
        worst = max(worst, float(np.linalg.norm(cone.E @ w + cone.f) - cone.g @ w - cone.h))
    return worst


def _hsde(G, h, c, cs: _Cones, tol: float, max_iter: int):
    m, n = G.shape
    e = cs.e
    nrm_h = max(1.0, float(np.linalg.norm(h)))
    nrm_c = max(1.0, float(np.linalg.norm(c)))

    def factor(Gs: np.ndarray):
        H = Gs.T @ Gs
        try:
            return ("chol", sla.cho_factor(H, check_finite=False))
        except np.linalg.LinAlgError:
            reg = 1e-12 * max(1.0, float(np.max(np.diag(H)))) if n else 0.0
            H[np.diag_indices_from(H)] += reg
            return ("lu", sla.lu_factor(H, check_finite=False))

    def hsolve(F, rhs):
        kind, fac = F
        if kind == "chol":
            return sla.cho_solve(fac, rhs, check_finite=False)
        return sla.lu_solve(fac, rhs, check_finite=False)

    # ---- initial point: least-squares primal, least-norm dual
    F0 = factor(G)
    x = hsolve(F0, G.T @ h) if n else np.zeros(0)
    s = h - G @ x
    zz = -G @ hsolve(F0, c) if n else np.zeros(m)
    for vec in (s, zz):
        t = -cs.min_eig(vec)
        if t >= -1e-8 * max(float(np.linalg.norm(vec)), 1.0):
            vec += (1.0 + t) * e
    tau, kap = 1.0, 1.0

    stats: dict = {}
    best: tuple = (np.inf,)
    for it in range(max_iter + 1):
        rx = G.T @ zz + c * tau
        rz = G @ x + s - h * tau
        rt = kap + c @ x + h @ zz
        gap = float(s @ zz)
        mu = (gap + tau * kap) / (cs.degree + 1)
        pcost = float(c @ x) / tau
        dcost = -float(h @ zz) / tau
        pres = float(np.linalg.norm(rz)) / tau / nrm_h
        dres = float(np.linalg.norm(rx)) / tau / nrm_c
        relgap = abs(pcost - dcost) / (1.0 + abs(pcost))
        stats = {"pres": pres, "dres": dres, "relgap": relgap, "mu": mu, "tau": tau, "kappa": kap}
        if not np.isfinite(mu) or not np.isfinite(pres) or not np.isfinite(dres):
            break
        if pres <= tol and dres <= tol and relgap <= tol and gap / tau ** 2 <= tol * (1.0 + abs(pcost)):
            return x / tau, s / tau, zz / tau, it, OPTIMAL, "", stats
        score = max(pres, dres, relgap)
        if score < best[0]:
            best = (score, x / tau, s / tau, zz / tau, it, dict(stats))
        elif best[0] <= LOOSE_TOL and score > 1e3 * best[0]:
            # round-off has taken over near the optimum
            break
        hz = float(h @ zz)
        if hz < 0:
            pinf = float(np.linalg.norm(G.T @ zz)) / nrm_c / (-hz)
            if pinf <= tol:
                return x, s, zz / (-hz), it, INFEASIBLE, "primal infeasibility certificate", stats
        cx = float(c @ x)
        if cx < 0:
            dinf = float(np.linalg.norm(G @ x + s)) / nrm_h / (-cx)
            if dinf <= tol:
                return x, s, zz, it, UNBOUNDED, "dual infeasibility certificate", stats
        if it == max_iter:
            break

        sc = _Scaling(cs, s, zz)
        lam = sc.lam
        Gs = sc.apply_rows_inv(G)
        F = factor(Gs)

        def kkt_once(r1, r2):
            # [0 G'; G -W^2] [dx; dz] = [r1; r2]
            w2 = sc.apply(r2, inverse=True)
            dx = hsolve(F, r1 + Gs.T @ w2)
            dz = sc.apply(Gs @ dx - w2, inverse=True)
            return dx, dz

        def kkt(r1, r2):
            dx, dz = kkt_once(r1, r2)
            # one round of iterative refinement against the unreduced system
            e1 = r1 - G.T @ dz
            e2 = r2 - (G @ dx - sc.apply(sc.apply(dz)))
            ex, ez = kkt_once(e1, e2)
            return dx + ex, dz + ez

        x1, z1 = kkt(-c, h)
        denom = float(c @ x1 + h @ z1) - kap / tau

        def direction(eta, ds, dk):
            t1 = sc.apply(cs.jordan_div(lam, ds))
            x2, z2 = kkt(-eta * rx, -eta * rz - t1)
            dtau = (-eta * rt - dk / tau - float(c @ x2 + h @ z2)) / denom
            dx = x2 + dtau * x1
            dz = z2 + dtau * z1
            dsl = t1 - sc.apply(sc.apply(dz))
            dkap = (dk - kap * dtau) / tau
            return dx, dz, dsl, dtau, dkap

        def step(dz, dsl, dtau, dkap):
            a = min(cs.max_step(s, dsl), cs.max_step(zz, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kap / dkap)
            return a

        ds_aff = -cs.jordan(lam, lam)
        dk_aff = -tau * kap
        dxa, dza, dsa, dta, dka = direction(1.0, ds_aff, dk_aff)
        a_aff = min(1.0, step(dza, dsa, dta, dka))
        sigma = (1.0 - a_aff) ** 3
        corr = cs.jordan(sc.apply(dsa, inverse=True), sc.apply(dza))
        ds_c = -cs.jordan(lam, lam) + sigma * mu * e - corr
        dk_c = -tau * kap + sigma * mu - dta * dka
        dx, dz, dsl, dtau, dkap = direction(1.0 - sigma, ds_c, dk_c)
        a = min(1.0, 0.99 * step(dz, dsl, dtau, dkap))
        if not np.isfinite(a) or a < 1e-12:
            break
        x = x + a * dx
        s = s + a * dsl
        zz = zz + a * dz
        tau += a * dtau
        kap += a * dkap

    # stalled or out of iterations: accept the best iterate if it is close enough
    if best[0] <= LOOSE_TOL:
        _, bx, bs, bz, bit, bstats = best
        return bx, bs, bz, bit, OPTIMAL, "reduced accuracy", bstats
    return x, s, zz, it, NUMERICAL_FAILURE, "path-following stalled", stats
