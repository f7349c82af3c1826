"""Command-line front end: ``dnres {pf,operator,gbd,cascade,sweep} ...``.

Data goes to stdout (or ``--out``), diagnostics to stderr.  Exit codes:
0 success, 2 configuration error, 3 decomposition failure, 4 iteration limit.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import cascade, gbd
from . import operator as op
from .network import BUILTIN_NAMES, Network, NetworkError, builtin_network, load_network, max_loss
from .powerflow import PowerFlowError, consumption, relaxation_tightness, solve_lpf, solve_npf_bfs

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE, EXIT_ITER_LIMIT = 0, 2, 3, 4
_STATUS_EXIT = {gbd.SUCCESS: EXIT_OK, gbd.FAILURE: EXIT_FAILURE, gbd.ITER_LIMIT: EXIT_ITER_LIMIT}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    network: str = "net24"
    dv0: float = 0.0
    budget: int | None = None
    target_resilience: float | None = None
    m: int = 1
    epsilon: str = "variable"
    lpf: bool = False
    seed: int = 0
    permutations: int = 10
    out: str | None = None
    format: str = "csv"
    attack: str | None = None
    targets: str | None = None
    budgets: str | None = None
    m_values: str | None = None
    gap: bool = False
    maxmin: bool = False
    yv_out: str | None = None
    iter_limit: int = 10000

    def epsilon_value(self) -> float | None:
        if self.epsilon == "variable":
            return None
        if self.epsilon.startswith("fixed:"):
            try:
                val = float(self.epsilon.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad epsilon {self.epsilon!r}") from exc
            if val < 0:
                raise ConfigError("fixed epsilon must be nonnegative")
            return val
        raise ConfigError("epsilon must be 'variable' or 'fixed:<value>'")

    def gbd_config(self, m: int | None = None) -> gbd.GbdConfig:
        return gbd.GbdConfig(m=self.m if m is None else m, epsilon=self.epsilon_value(),
                             iter_limit=self.iter_limit, lpf_mode=self.lpf)


def _parse_list(text: str | None, kind=float) -> list:
    if text is None:
        return []
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [kind(t) for t in items]
    except ValueError as exc:
        raise ConfigError(f"cannot parse list {text!r}") from exc


def _network(cfg: RunConfig) -> Network:
    if cfg.network in BUILTIN_NAMES:
        return builtin_network(cfg.network)
    path = Path(cfg.network)
    if not path.is_file():
        raise ConfigError(f"network {cfg.network!r} is neither a built-in ({', '.join(BUILTIN_NAMES)}) nor a file")
    return load_network(path.read_text())


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _attack_ids(net: Network, d) -> list[int]:
    return [net.ids[k] for k, on in zip(net.dg_nodes, d) if on]


# ---------------------------------------------------------------------------
def cmd_pf(cfg: RunConfig) -> int:
    net = _network(cfg)
    u = consumption(net, np.ones(net.n_loads), np.zeros(net.n_loads), np.zeros(net.n_dg))
    P_l, Q_l, v_l = solve_lpf(net, cfg.dv0, u["pt"], u["qt"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = solve_npf_bfs(net, cfg.dv0, u["pt"], u["qt"])
    tight = relaxation_tightness(net, s)
    if not s.nrpf:
        print("warning: reverse power flow present; relaxation exactness not guaranteed", file=sys.stderr)
    rows = [[net.ids[k], net.ids[net.parent[k]] if net.parent[k] >= 0 else 0, v_l[k], s.v[k], P_l[k], s.P[k],
             Q_l[k], s.Q[k], s.ell[k]] for k in range(net.n)]
    header = ["node", "parent", "v_lpf", "v_npf", "P_lpf", "P_npf", "Q_lpf", "Q_npf", "ell"]
    if cfg.format == "json":
        text = json.dumps({"nrpf": s.nrpf, "tightness": tight, "iterations": s.iterations,
                           "v_min_lpf": float(v_l.min()), "v_min_npf": float(s.v.min()),
                           "nodes": [dict(zip(header, map(float, r))) for r in rows]}, indent=2) + "\n"
    else:
        text = _csv(header, [[_fmt(x) for x in r] for r in rows])
        print(f"nrpf={s.nrpf} tightness={tight:.3e} v_min_lpf={v_l.min():.6f} v_min_npf={s.v.min():.6f}",
              file=sys.stderr)
    _emit(cfg, text)
    return EXIT_OK


def _parse_attack(net: Network, text: str | None) -> np.ndarray:
    d = np.zeros(net.n_dg, dtype=int)
    pos = {net.ids[k]: g for g, k in enumerate(net.dg_nodes)}
    for nid in _parse_list(text, int):
        if nid not in pos:
            raise ConfigError(f"node {nid} carries no DG")
        d[pos[nid]] = 1
    return d


def cmd_operator(cfg: RunConfig) -> int:
    net = _network(cfg)
    d = _parse_attack(net, cfg.attack)
    res = op.solve_milp_lpf(net, cfg.dv0, d) if cfg.lpf else op.solve_misocp(net, cfg.dv0, d)
    br = res.breakdown(net, lpf=cfg.lpf)
    l_max = max_loss(net)
    out = {
        "attack": _attack_ids(net, d),
        "loss": res.value,
        "resilience": 100.0 * (1.0 - res.value / l_max),
        "breakdown": {"vr": br.vr, "lc": br.lc, "ls": br.ls, "ll": br.ll, "total": br.total},
        "shed_loads": [net.ids[k] for k, on in zip(net.load_nodes, res.kappa.kc) if on],
        "disconnected_dgs": [net.ids[k] for k, on in zip(net.dg_nodes, res.kappa.kg) if on],
        "beta": {str(net.ids[k]): float(b) for k, b in zip(net.load_nodes, res.response.beta)},
        "nodes": res.nodes,
    }
    if cfg.format == "csv":
        text = _csv(["attack", "loss", "resilience", "vr", "lc", "ls", "ll"],
                    [[" ".join(map(str, out["attack"])), _fmt(res.value), _fmt(out["resilience"]),
                      _fmt(br.vr), _fmt(br.lc), _fmt(br.ls), _fmt(br.ll)]])
    else:
        text = json.dumps(out, indent=2) + "\n"
    _emit(cfg, text)
    return EXIT_OK


def _check_one_of(cfg: RunConfig) -> None:
    if (cfg.budget is None) == (cfg.target_resilience is None):
        raise ConfigError("give exactly one of --budget / --target-resilience")
    if cfg.target_resilience is not None and not 0 < cfg.target_resilience <= 100:
        raise ConfigError("target resilience must lie in (0, 100]")


def cmd_gbd(cfg: RunConfig) -> int:
    _check_one_of(cfg)
    net = _network(cfg)
    gcfg = cfg.gbd_config()
    try:
        gcfg.check(net.n_dg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    l_max = max_loss(net)
    if cfg.target_resilience is not None:
        target = (1.0 - cfg.target_resilience / 100.0) * l_max
        if target <= 0:
            raise ConfigError("target resilience of 100 leaves no loss to reach")
        r = gbd.run_min_cardinality(net, cfg.dv0, target, gcfg)
        out = {"status": r.status, "target": target, "attack": None if r.attack is None else _attack_ids(net, r.attack),
               "cardinality": r.cardinality, "realized_loss": r.realized_loss, "resilience": r.resilience(l_max),
               "iterations": r.iterations, "wall_time": r.wall_time,
               "trace": [rec.__dict__ for rec in r.trace]}
        code = _STATUS_EXIT[r.status]
        row = [_fmt(cfg.target_resilience), _fmt(out["resilience"]) if r.status == gbd.SUCCESS else r.status,
               r.iterations, _fmt(r.wall_time), _fmt(r.cardinality)]
        header = ["target", "resilience", "iterations", "time_s", "cardinality"]
    else:
        if not 0 <= cfg.budget <= net.n_dg:
            raise ConfigError(f"budget must lie in [0, {net.n_dg}]")
        t0 = time.perf_counter()
        mm = gbd.run_budget_k_maxmin(net, cfg.dv0, cfg.budget, gcfg)
        out = {"status": gbd.SUCCESS, "budget": cfg.budget, "attack": _attack_ids(net, mm.attack),
               "loss": mm.loss, "resilience": mm.resilience, "searches": mm.searches,
               "wall_time": time.perf_counter() - t0}
        code = EXIT_OK
        header = ["k", "resilience", "searches", "time_s", "attack"]
        row = [cfg.budget, _fmt(mm.resilience), mm.searches, _fmt(out["wall_time"]),
               " ".join(map(str, out["attack"]))]
    text = _csv(header, [row]) if cfg.format == "csv" else json.dumps(out, indent=2) + "\n"
    _emit(cfg, text)
    return code


def cmd_cascade(cfg: RunConfig) -> int:
    if cfg.permutations < 1:
        raise ConfigError("--permutations must be at least 1")
    net = _network(cfg)
    run = cascade.randomized_worst_case(net, cfg.dv0, cfg.permutations, cfg.seed)
    if not cfg.maxmin:
        if cfg.format == "json":
            text = json.dumps({"seed": run.seed, "Z": run.Z, "Y": run.Y.tolist(), "V": run.V.tolist()}) + "\n"
        else:
            text = run.to_csv()
        _emit(cfg, text)
        return EXIT_OK
    if cfg.yv_out:
        Path(cfg.yv_out).write_text(run.to_csv())
    search = gbd.BudgetSearch(net, cfg.dv0, cfg.gbd_config())
    losses = [search.solve(k).loss for k in range(1, net.n_dg + 1)]
    curves = cascade.resilience_curves(run, losses, max_loss(net))
    text = curves.to_csv() if cfg.format == "csv" else json.dumps(curves.to_records(), indent=2) + "\n"
    _emit(cfg, text)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    targets = _parse_list(cfg.targets, float)
    budgets = _parse_list(cfg.budgets, int)
    ms = _parse_list(cfg.m_values, int) or [cfg.m]
    if bool(targets) == bool(budgets):
        raise ConfigError("give a non-empty --targets or --budgets list (not both)")
    net = _network(cfg)
    l_max = max_loss(net)
    for m in ms:
        try:
            cfg.gbd_config(m).check(net.n_dg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    records: list[dict] = []
    if targets:
        for R in targets:
            if not 0 < R < 100:
                raise ConfigError("targets must lie in (0, 100)")
        header = ["target", "resilience", "iterations", "time_s", "cardinality"]
        for m in ms:
            for R in targets:
                r = gbd.run_min_cardinality(net, cfg.dv0, (1.0 - R / 100.0) * l_max, cfg.gbd_config(m))
                ok = r.status == gbd.SUCCESS
                records.append({"m": m, "target": R, "resilience": r.resilience(l_max) if ok else r.status,
                                "iterations": r.iterations, "time_s": r.wall_time, "cardinality": r.cardinality,
                                "status": r.status})
        ok_any = any(rec["status"] == gbd.SUCCESS for rec in records)
    elif cfg.gap:
        header = ["m", "gap_pct"]
        brute = {k: gbd.brute_force_maxmin(net, cfg.dv0, k) for k in range(0, max(budgets) + 1)}
        for m in ms:
            g = gbd.cardinality_gap(net, cfg.dv0, cfg.gbd_config(m), budgets, brute)
            records.append({"m": m, "gap_pct": g})
        ok_any = True
    else:
        header = ["k", "resilience", "searches", "time_s", "cardinality"]
        for m in ms:
            search = gbd.BudgetSearch(net, cfg.dv0, cfg.gbd_config(m))
            for k in budgets:
                t0 = time.perf_counter()
                mm = search.solve(k)
                records.append({"m": m, "k": k, "resilience": mm.resilience, "searches": mm.searches,
                                "time_s": time.perf_counter() - t0, "cardinality": int(mm.attack.sum())})
        ok_any = bool(records)
    if cfg.format == "json":
        text = json.dumps(records, indent=2) + "\n"
    else:
        text = _csv(header, [[_fmt(rec[h]) for h in header] for rec in records])
    _emit(cfg, text)
    return EXIT_OK if ok_any else EXIT_FAILURE


COMMANDS = {"pf": cmd_pf, "operator": cmd_operator, "gbd": cmd_gbd, "cascade": cmd_cascade, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnres", description="Distribution-network resilience toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    common.add_argument("--network", help="built-in name (net24, net36, net118) or network JSON file")
    common.add_argument("--dv0", type=float, help="substation squared-voltage sag (pu^2)")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--lpf", action="store_true", default=None, help="use the linear power-flow model")
    gb = argparse.ArgumentParser(add_help=False)
    gb.add_argument("--m", type=int, help="criticality parameter")
    gb.add_argument("--epsilon", help="'variable' or 'fixed:<value>'")
    gb.add_argument("--iter-limit", dest="iter_limit", type=int)

    sub.add_parser("pf", parents=[common], help="linear and nonlinear power flow at full demand")
    sp = sub.add_parser("operator", parents=[common], help="operator's optimal response to an attack")
    sp.add_argument("--attack", help="comma-separated DG node ids")
    sp = sub.add_parser("gbd", parents=[common, gb], help="min-cardinality attack or budget-k max-min")
    sp.add_argument("--budget", type=int)
    sp.add_argument("--target-resilience", dest="target_resilience", type=float)
    sp = sub.add_parser("cascade", parents=[common, gb], help="randomized autonomous-disconnect worst case")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--permutations", type=int)
    sp.add_argument("--maxmin", action="store_true", default=None, help="emit resilience curves against max-min")
    sp.add_argument("--yv-out", dest="yv_out", help="with --maxmin, also write the Y/V table here")
    sp = sub.add_parser("sweep", parents=[common, gb], help="batch runs over targets or budgets")
    sp.add_argument("--targets", help="comma-separated target resiliences")
    sp.add_argument("--budgets", help="comma-separated budgets")
    sp.add_argument("--m-values", dest="m_values", help="comma-separated criticality parameters")
    sp.add_argument("--gap", action="store_true", default=None, help="with --budgets, report the cardinality gap")
    return p


def make_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    names = {f.name for f in fields(RunConfig)}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for k, v in data.items():
            setattr(cfg, k, v)
    for k, v in vars(args).items():
        if k in names and v is not None:
            setattr(cfg, k, v)
    if cfg.format not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, NetworkError, PowerFlowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
