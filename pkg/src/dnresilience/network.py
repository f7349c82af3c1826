"""Radial distribution network data model, built-in test feeders and tree queries.

All voltages are squared magnitudes (pu^2).  Node 0 is the substation; every
other node ``j`` owns the edge ``(parent(j), j)``, so edge and node indices
coincide.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np


# voltage windows are quoted as magnitudes (pu); v holds squared magnitudes
LOAD_V_MIN, LOAD_V_MAX = 0.9 ** 2, 1.1 ** 2
DG_V_MIN, DG_V_MAX = 0.92 ** 2, 1.08 ** 2


class NetworkError(ValueError):
    """Raised for malformed or invalid network descriptions."""


@dataclass(frozen=True)
class LoadSpec:
    pc_max: float
    qc_max: float
    beta_min: float = 0.8
    v_min: float = LOAD_V_MIN
    v_max: float = LOAD_V_MAX
    cost_lc: float = 0.0
    cost_ls: float = 0.0

    def validate(self, node: int) -> None:
        if not 0 < self.v_min < self.v_max:
            raise NetworkError(f"node {node}: load voltage bounds must satisfy 0 < v_min < v_max")
        if not 0.0 <= self.beta_min <= 1.0:
            raise NetworkError(f"node {node}: beta_min outside [0, 1]")
        if not self.cost_ls >= self.cost_lc >= 0.0:
            raise NetworkError(f"node {node}: costs must satisfy cost_ls >= cost_lc >= 0")
        if self.pc_max < 0:
            raise NetworkError(f"node {node}: negative pc_max")


@dataclass(frozen=True)
class DgSpec:
    pg_max: float
    eta: float = 1.0 / 3.0
    v_min: float = DG_V_MIN
    v_max: float = DG_V_MAX

    def validate(self, node: int) -> None:
        if not 0 < self.v_min < self.v_max:
            raise NetworkError(f"node {node}: DG voltage bounds must satisfy 0 < v_min < v_max")
        if self.pg_max < 0 or self.eta < 0:
            raise NetworkError(f"node {node}: pg_max and eta must be non-negative")


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable radial network.

    ``ids[k]`` is the external id of internal node ``k`` (k = 0..N-1) and
    ``parent[k]`` the internal index of its parent, ``-1`` for the substation.
    Internal nodes are stored in topological order (parents first).
    """

    ids: tuple[int, ...]
    parent: tuple[int, ...]
    r: tuple[float, ...]
    x: tuple[float, ...]
    loads: tuple[LoadSpec | None, ...]
    dgs: tuple[DgSpec | None, ...]
    v_nom: float = 1.0
    cost_vr: float = 100.0
    cost_ll: float = 100.0
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        n = len(self.ids)
        for seq in (self.parent, self.r, self.x, self.loads, self.dgs):
            if len(seq) != n:
                raise NetworkError("per-node sequences have inconsistent lengths")
        if self.v_nom <= 0:
            raise NetworkError("v_nom must be positive")
        for k in range(n):
            p = self.parent[k]
            if p >= k:
                raise NetworkError(f"node {self.ids[k]}: nodes must be in topological order")
            if not (self.r[k] > 0 and self.x[k] > 0):
                raise NetworkError(f"edge into node {self.ids[k]}: non-positive impedance")
            if self.loads[k] is not None:
                self.loads[k].validate(self.ids[k])
            if self.dgs[k] is not None:
                self.dgs[k].validate(self.ids[k])

    # ---- sizes and lookups -------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.ids)

    @cached_property
    def index(self) -> dict[int, int]:
        return {nid: k for k, nid in enumerate(self.ids)}

    def idx(self, node: int) -> int:
        try:
            return self.index[node]
        except KeyError:
            raise NetworkError(f"unknown node {node}") from None

    @cached_property
    def parent_arr(self) -> np.ndarray:
        return np.asarray(self.parent, dtype=int)

    @cached_property
    def r_arr(self) -> np.ndarray:
        return np.asarray(self.r, dtype=float)

    @cached_property
    def x_arr(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.n)]
        for k, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(k)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def depth(self) -> np.ndarray:
        dep = np.zeros(self.n, dtype=int)
        for k, p in enumerate(self.parent):
            dep[k] = 1 if p < 0 else dep[p] + 1
        return dep

    @cached_property
    def ancestor_matrix(self) -> np.ndarray:
        """``M[i, j]`` is True iff edge ``i`` lies on the root path of node ``j``.

        Equivalently ``j`` is in the subtree of ``i`` (including ``i`` itself).
        """
        m = np.zeros((self.n, self.n), dtype=bool)
        for k, p in enumerate(self.parent):
            if p >= 0:
                m[:, k] = m[:, p]
            m[k, k] = True
        return m

    # ---- component masks ---------------------------------------------------
    @cached_property
    def load_nodes(self) -> np.ndarray:
        """Internal indices of load nodes, ordered by node id."""
        ks = [k for k in range(self.n) if self.loads[k] is not None]
        return np.array(sorted(ks, key=lambda k: self.ids[k]), dtype=int)

    @cached_property
    def dg_nodes(self) -> np.ndarray:
        """Internal indices of DG nodes, ordered by node id (attack vectors use this order)."""
        ks = [k for k in range(self.n) if self.dgs[k] is not None]
        return np.array(sorted(ks, key=lambda k: self.ids[k]), dtype=int)

    @property
    def n_loads(self) -> int:
        return len(self.load_nodes)

    @property
    def n_dg(self) -> int:
        return len(self.dg_nodes)

    @cached_property
    def dg_ids(self) -> tuple[int, ...]:
        return tuple(self.ids[k] for k in self.dg_nodes)

    @cached_property
    def load_ids(self) -> tuple[int, ...]:
        return tuple(self.ids[k] for k in self.load_nodes)

    def _load_attr(self, name: str) -> np.ndarray:
        return np.array([getattr(self.loads[k], name) for k in self.load_nodes], dtype=float)

    def _dg_attr(self, name: str) -> np.ndarray:
        return np.array([getattr(self.dgs[k], name) for k in self.dg_nodes], dtype=float)

    @cached_property
    def load_params(self) -> dict[str, np.ndarray]:
        keys = ("pc_max", "qc_max", "beta_min", "v_min", "v_max", "cost_lc", "cost_ls")
        return {k: self._load_attr(k) for k in keys}

    @cached_property
    def dg_params(self) -> dict[str, np.ndarray]:
        return {k: self._dg_attr(k) for k in ("pg_max", "eta", "v_min", "v_max")}

    # ---- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        nodes = []
        for k in range(self.n):
            p = self.parent[k]
            entry: dict = {
                "id": self.ids[k],
                "parent": 0 if p < 0 else self.ids[p],
                "r": self.r[k],
                "x": self.x[k],
            }
            if self.loads[k] is not None:
                entry["load"] = dict(vars(self.loads[k]))
            if self.dgs[k] is not None:
                entry["dg"] = dict(vars(self.dgs[k]))
            nodes.append(entry)
        return {"v_nom": self.v_nom, "cost_vr": self.cost_vr, "cost_ll": self.cost_ll, "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def same_as(self, other: "Network") -> bool:
        return self.to_dict() == other.to_dict()


# ---- construction --------------------------------------------------------------
def network_from_dict(doc: Mapping, name: str = "") -> Network:
    try:
        raw_nodes = list(doc["nodes"])
        v_nom = float(doc.get("v_nom", 1.0))
        cost_vr = float(doc.get("cost_vr", 100.0))
        cost_ll = float(doc.get("cost_ll", 100.0))
        recs = []
        for nd in raw_nodes:
            nid, par = int(nd["id"]), int(nd["parent"])
            load = LoadSpec(**{k: float(v) for k, v in nd["load"].items()}) if nd.get("load") else None
            dg = DgSpec(**{k: float(v) for k, v in nd["dg"].items()}) if nd.get("dg") else None
            recs.append((nid, par, float(nd["r"]), float(nd["x"]), load, dg))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"parse error: {exc!r}") from exc

    by_id = {}
    for rec in recs:
        if rec[0] <= 0:
            raise NetworkError(f"node ids must be positive integers, got {rec[0]}")
        if rec[0] in by_id:
            raise NetworkError(f"duplicate node {rec[0]}")
        by_id[rec[0]] = rec
    kids: dict[int, list[int]] = {}
    for nid, par, *_ in recs:
        if par != 0 and par not in by_id:
            raise NetworkError(f"node {nid}: unknown parent {par}")
        kids.setdefault(par, []).append(nid)

    # breadth-first from the substation gives a topological order
    order: list[int] = []
    frontier = sorted(kids.get(0, []))
    while frontier:
        order.extend(frontier)
        frontier = sorted(c for p in frontier for c in kids.get(p, []))
    if len(order) != len(recs):
        missing = sorted(set(by_id) - set(order))
        raise NetworkError(f"cycle or disconnected nodes: {missing[:5]}")
    pos = {nid: k for k, nid in enumerate(order)}
    return Network(
        ids=tuple(order),
        parent=tuple(-1 if by_id[n][1] == 0 else pos[by_id[n][1]] for n in order),
        r=tuple(by_id[n][2] for n in order),
        x=tuple(by_id[n][3] for n in order),
        loads=tuple(by_id[n][4] for n in order),
        dgs=tuple(by_id[n][5] for n in order),
        v_nom=v_nom,
        cost_vr=cost_vr,
        cost_ll=cost_ll,
        name=name,
    )


def load_network(text: str, name: str = "") -> Network:
    """Parse a JSON network document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"parse error: {exc}") from exc
    if not isinstance(doc, dict):
        raise NetworkError("parse error: top-level document must be an object")
    return network_from_dict(doc, name=name)


def build_network(
    edges: Iterable[tuple[int, int]],
    dg_nodes: Iterable[int],
    *,
    r: float = 0.01,
    x: float = 0.02,
    beta_min: float = 0.8,
    cost_vr: float = 100.0,
    cost_ll: float = 100.0,
    name: str = "",
) -> Network:
    """Homogeneous feeder: DGs at ``dg_nodes``, loads everywhere else.

    Sizing follows alpha = 6/N, pg_max = alpha, pc_max = 1.25 alpha, reactive
    values one third of active ones, C^LC = 100/pc_max, C^LS = 1000/pc_max.
    """
    adj: dict[int, set[int]] = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    if 0 not in adj:
        raise NetworkError("edge list does not touch the substation")
    parent: dict[int, int] = {}
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for w in sorted(adj[u]):
                if w in seen:
                    if parent.get(u) != w:
                        raise NetworkError(f"cycle through edge {u}-{w}")
                    continue
                seen.add(w)
                parent[w] = u
                nxt.append(w)
        frontier = nxt
    n = len(parent)
    dg_set = set(dg_nodes)
    alpha = 6.0 / n
    pc, pg = 1.25 * alpha, alpha
    nodes = []
    for nid in sorted(parent):
        nd: dict = {"id": nid, "parent": parent[nid], "r": r, "x": x}
        if nid in dg_set:
            nd["dg"] = {"pg_max": pg, "eta": 1.0 / 3.0, "v_min": DG_V_MIN, "v_max": DG_V_MAX}
        else:
            nd["load"] = {
                "pc_max": pc, "qc_max": pc / 3.0, "beta_min": beta_min,
                "v_min": LOAD_V_MIN, "v_max": LOAD_V_MAX, "cost_lc": 100.0 / pc, "cost_ls": 1000.0 / pc,
            }
        nodes.append(nd)
    return network_from_dict({"v_nom": 1.0, "cost_vr": cost_vr, "cost_ll": cost_ll, "nodes": nodes}, name=name)


def _chain(a: int, b: int) -> list[tuple[int, int]]:
    return [(k - 1, k) for k in range(a + 1, b + 1)]


NET24_EDGES = (
    _chain(0, 12)
    + [(2, 13), (13, 14), (14, 15), (15, 16), (3, 17), (17, 18), (18, 19)]
    + [(6, 20), (20, 21), (21, 22), (22, 23), (23, 24)]
)
NET24_DG = tuple(range(1, 24, 2))

NET36_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4), (3, 5), (2, 6), (6, 7), (7, 8), (8, 9), (7, 10),
    (10, 11), (11, 12), (10, 13), (13, 14), (13, 15), (2, 16), (16, 17), (17, 18),
    (18, 19), (18, 20), (16, 21), (21, 22), (22, 23), (23, 24), (22, 25), (25, 26),
    (25, 27), (27, 28), (28, 29), (29, 30), (29, 31), (28, 32), (32, 33), (33, 34),
    (34, 35), (34, 36),
]
NET36_DG = (2, 6, 7, 11, 12, 13, 16, 18, 19, 21, 23, 25, 28, 29, 32, 34, 35, 36)

# 118-node feeder: chains ("laterals") plus connecting edges.  The drawing
# repeats a few edges (0-1, 79-80, 100-101, 65-89); they collapse on dedup.
_NET118_LATERALS = [
    (18, 27), (10, 17), (4, 9), (38, 46), (28, 35), (47, 54), (36, 37), (55, 62),
    (96, 99), (0, 1), (89, 95), (63, 69), (70, 77), (78, 80), (81, 85), (86, 88),
    (100, 106), (107, 113), (114, 118),
]
_NET118_LINKS = [
    (1, 2), (2, 3), (2, 4), (4, 28), (30, 36), (80, 81), (100, 114), (64, 78), (79, 86),
    (65, 89), (91, 96), (0, 1), (2, 10), (11, 18), (29, 30), (29, 38), (35, 47), (29, 55),
    (1, 63), (69, 70), (79, 80), (106, 107), (1, 100), (100, 101),
]


def _dedup(edges: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    out = sorted({(min(a, b), max(a, b)) for a, b in edges})
    return out


NET118_EDGES = _dedup([e for a, b in _NET118_LATERALS for e in _chain(a, b)] + _NET118_LINKS)
NET118_DG = tuple(range(1, 118, 2))


@lru_cache(maxsize=None)
def builtin_network(name: str) -> Network:
    """Built-in test feeder; instances are shared since networks are immutable."""
    if name == "net24":
        return build_network(NET24_EDGES, NET24_DG, name=name)
    if name == "net36":
        return build_network(NET36_EDGES, NET36_DG, name=name)
    if name == "net118":
        return build_network(NET118_EDGES, NET118_DG, name=name)
    raise NetworkError(f"unknown built-in network {name!r}")


BUILTIN_NAMES = ("net24", "net36", "net118")


# ---- tree queries --------------------------------------------------------------
def subtree(net: Network, i: int) -> set[int]:
    """Ids of the nodes in the subtree rooted at node ``i`` (inclusive)."""
    k = net.idx(i)
    return {net.ids[j] for j in np.flatnonzero(net.ancestor_matrix[k])}


def common_impedance(net: Network, i: int, j: int) -> tuple[float, float]:
    """Resistance and reactance summed over the edges shared by the root paths of i and j."""
    a, b = net.idx(i), net.idx(j)
    shared = net.ancestor_matrix[:, a] & net.ancestor_matrix[:, b]
    return float(net.r_arr[shared].sum()), float(net.x_arr[shared].sum())


def subtree_sums(net: Network, values: np.ndarray) -> np.ndarray:
    """Sum of ``values`` over every subtree, in internal node order."""
    out = np.array(values, dtype=float, copy=True)
    for k in range(net.n - 1, -1, -1):
        p = net.parent[k]
        if p >= 0:
            out[p] += out[k]
    return out


def check_nrpf(net: Network, pt: Sequence[float], qt: Sequence[float], tol: float = 0.0) -> bool:
    """True iff every subtree has non-negative net active and reactive consumption."""
    pt = np.asarray(pt, dtype=float)
    qt = np.asarray(qt, dtype=float)
    if pt.shape != (net.n,) or qt.shape != (net.n,):
        raise NetworkError(f"consumption arrays must have length {net.n}")
    return bool((subtree_sums(net, pt) >= -tol).all() and (subtree_sums(net, qt) >= -tol).all())


def nrpf_violations(net: Network, pt: Sequence[float], qt: Sequence[float], tol: float = 0.0) -> list[int]:
    """Ids of nodes whose subtree has negative net active or reactive consumption."""
    sp = subtree_sums(net, np.asarray(pt, dtype=float))
    sq = subtree_sums(net, np.asarray(qt, dtype=float))
    return [net.ids[k] for k in np.flatnonzero((sp < -tol) | (sq < -tol))]


def full_output_injections(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Net consumption with every load at full demand and every DG at capacity."""
    pt = np.zeros(net.n)
    qt = np.zeros(net.n)
    for k in range(net.n):
        if net.loads[k] is not None:
            pt[k] += net.loads[k].pc_max
            qt[k] += net.loads[k].qc_max
        if net.dgs[k] is not None:
            pt[k] -= net.dgs[k].pg_max
            qt[k] -= net.dgs[k].eta * net.dgs[k].pg_max
    return pt, qt


def max_loss(net: Network) -> float:
    """Loss with every load shed and every DG disconnected, at nominal substation voltage."""
    return float(sum(ld.cost_ls * ld.pc_max for ld in net.loads if ld is not None))
