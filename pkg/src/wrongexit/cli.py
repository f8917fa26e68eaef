"""Config-driven command line front end.

Subcommands wire models, solvers, proposal builders and the Monte Carlo
engine into reproducible experiments:

    solve   write the tilt-solution table and proposal manifest
    check   evaluate the efficiency condition; exit status reflects holds
    run     decay scan over a b grid; writes run JSON and plot CSV
    oracle  mixture estimate vs plain Monte Carlo cross-validation
    table   maximal-rho table over a correlation grid for three conditions
    sweep   condition sweeps (siegmund_rho | gap_v | si_rho) as CSV

Every command is idempotent for a fixed config and seed: outputs are
byte-identical on re-runs (timing is logged to stderr, never written into
result files).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
from pathlib import Path
import sys
import time

import numpy as np

from .engine import RunConfig, decay_scan, estimate_wrong_exit, plain_mc
from .models import (
    IndependentModel,
    MvNormalModel,
    Normal,
    ShiftedExponential,
)
from .proposals import (
    EfficiencyReport,
    MixtureProposal,
    build_gap,
    build_siegmund,
    build_sum_intersection,
    check_direct_siegmund_homogeneous,
)
from .regions import GapRule, SiegmundRule, SumIntersectionRule
from .solvers import solve_beta, solve_gamma_pair, solve_gamma_single

RESIDUAL_LIMIT = 1e-8


class ConfigError(ValueError):
    """Invalid experiment config; message carries the offending field path."""


def _need(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: missing required field")
    return cfg[key]


def build_model(spec: dict, path: str = "model"):
    family = _need(spec, "family", path)
    if family == "mvnormal":
        mean = _mean_vector(spec, path)
        d = mean.shape[0]
        if "cov" in spec:
            cov = np.asarray(spec["cov"], dtype=float)
        else:
            rho = float(spec.get("rho", 0.0))
            sigma2 = float(spec.get("sigma2", 1.0))
            cov = sigma2 * ((1 - rho) * np.eye(d) + rho * np.ones((d, d)))
        try:
            return MvNormalModel(mean, cov)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if family == "independent":
        comps = []
        for i, c in enumerate(_need(spec, "components", path)):
            comps.extend(_scalar_component(c, f"{path}.components[{i}]"))
        try:
            return IndependentModel(comps)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.family: unknown family {family!r}")


def _mean_vector(spec, path):
    d = spec.get("dim")
    mean = _need(spec, "mean", path)
    if isinstance(mean, (int, float)):
        if d is None:
            raise ConfigError(f"{path}.dim: required with scalar mean")
        return np.full(int(d), float(mean))
    if isinstance(mean, dict):
        if d is None:
            raise ConfigError(f"{path}.dim: required with head/tail mean")
        split = int(_need(mean, "split", f"{path}.mean"))
        v = np.full(int(d), float(_need(mean, "tail", f"{path}.mean")))
        v[:split] = float(_need(mean, "head", f"{path}.mean"))
        return v
    return np.asarray(mean, dtype=float)


def _scalar_component(c, path):
    kind = _need(c, "type", path)
    n = int(c.get("count", 1))
    if kind == "normal":
        comp = Normal(float(_need(c, "mu", path)),
                      float(_need(c, "sigma2", path)))
    elif kind == "shifted_exponential":
        comp = ShiftedExponential(float(_need(c, "rate", path)),
                                  float(_need(c, "shift", path)))
    else:
        raise ConfigError(f"{path}.type: unknown component type {kind!r}")
    return [comp] * n


def build_rule(spec: dict, path: str = "problem"):
    kind = _need(spec, "kind", path)
    if kind == "siegmund":
        return SiegmundRule(float(_need(spec, "ell", path)),
                            float(_need(spec, "u", path)))
    if kind == "gap":
        return GapRule(int(_need(spec, "m", path)))
    if kind == "sum_intersection":
        return SumIntersectionRule(int(_need(spec, "L", path)))
    raise ConfigError(f"{path}.kind: unknown problem kind {kind!r}")


def build_proposal(model, rule, prop_spec: dict, path: str = "proposal"):
    manifest_path = prop_spec.get("manifest")
    if manifest_path:
        with open(manifest_path) as fh:
            man = json.load(fh)
        prop = MixtureProposal.from_manifest(man)
        prop.check_lambdas(model)
        rep = None
        if "report" in man:
            rep = EfficiencyReport(**man["report"])
        return prop, rep
    variant = prop_spec.get("variant", "plain")
    if variant == "plain":
        prop = MixtureProposal(np.zeros((1, model.dim)), np.zeros(1),
                               ["plain[0]"], {"kind": rule.kind,
                                              "d": model.dim}, "plain")
        return prop, None
    if isinstance(rule, SiegmundRule):
        return build_siegmund(variant, model, rule.ell, rule.u)
    if isinstance(rule, GapRule):
        return build_gap(variant, model, rule.m)
    return build_sum_intersection(model, rule.L)


def load_config(path: str, paper_scale: bool = False) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if paper_scale:
        overrides = cfg.get("paper_scale", {})
        for key, val in overrides.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key] = {**cfg[key], **val}
            else:
                cfg[key] = val
    _need(cfg, "name", "config")
    _need(cfg, "model", "config")
    return cfg


def _out_dir(cfg, args) -> Path:
    out = Path(args.out or cfg.get("outputs", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg, args) -> int:
    model = build_model(cfg["model"])
    rule = build_rule(_need(cfg, "problem", "config"))
    prop, rep = build_proposal(model, rule, cfg.get("proposal", {}))
    solutions = _solution_table(model, rule)
    man = prop.to_manifest(rep, solutions)
    out = _out_dir(cfg, args) / f"{cfg['name']}_proposal.json"
    _dump_json(man, out)
    _log(f"wrote {out} ({len(prop)} components)")
    if args.strict and rep is not None and not rep.holds:
        _log("strict: efficiency condition failed")
        return 1
    return 0


def _solution_table(model, rule):
    """Audit records for the candidate-region tilts."""
    recs = []
    if isinstance(rule, SiegmundRule):
        sets = [[k] for k in range(model.dim)]
    elif isinstance(rule, GapRule):
        m, d = rule.m, model.dim
        sets = [sorted(set(range(m)) - {l} | {lp})
                for l in range(m) for lp in range(m, d)]
    else:
        from itertools import combinations
        sets = [list(A) for A in combinations(range(model.dim), rule.L)]
        if len(sets) > 500:
            sets = sets[:500]
    seen = {}
    for A in sets:
        sol = solve_beta(A, rule, model)
        recs.append({
            "problem": rule.kind,
            "A": list(A),
            "r": sol.value,
            "beta": sol.tilt.tolist(),
            "residual": sol.residual,
        })
    return recs


def cmd_check(cfg, args) -> int:
    model = build_model(cfg["model"])
    rule = build_rule(_need(cfg, "problem", "config"))
    spec = cfg.get("proposal", {})
    defaults = {"siegmund": "theta1", "gap": "t1", "sum_intersection": "si"}
    variant = spec.get("variant", defaults[rule.kind])
    if variant == "direct":
        if not isinstance(rule, SiegmundRule):
            raise ConfigError("proposal.variant: 'direct' applies to the "
                              "siegmund problem only")
        rep = check_direct_siegmund_homogeneous(model, rule.ell, rule.u)
    else:
        _, rep = build_proposal(model, rule, {**spec, "variant": variant})
    if rep is None:
        raise ConfigError("proposal.variant: no condition to check for "
                          f"variant {variant!r}")
    out = _out_dir(cfg, args) / f"{cfg['name']}_check.json"
    _dump_json(rep.as_dict(), out)
    _log(f"wrote {out}: condition {rep.condition} "
         f"{'holds' if rep.holds else 'FAILS'} "
         f"(lhs={rep.lhs:.6g}, rhs={rep.rhs:.6g})")
    return 0 if rep.holds else 1


def cmd_run(cfg, args) -> int:
    model = build_model(cfg["model"])
    rule = build_rule(_need(cfg, "problem", "config"))
    prop, rep = build_proposal(model, rule, cfg.get("proposal", {}))
    run_spec = _need(cfg, "run", "config")
    seed = int(args.seed if args.seed is not None else
               _need(run_spec, "seed", "run"))
    workers = int(args.workers or run_spec.get("workers", 1))
    b_grid = [float(b) for b in _need(run_spec, "b_grid", "run")]
    n_paths = int(_need(run_spec, "n_paths", "run"))
    max_steps = run_spec.get("max_steps")

    t0 = time.perf_counter()
    rows = decay_scan(model, prop, rule, b_grid, n_paths, seed,
                      max_steps=max_steps, workers=workers)
    elapsed = time.perf_counter() - t0

    out_dir = _out_dir(cfg, args)
    csv_path = out_dir / f"{cfg['name']}_scan.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["b", "p_hat", "neg_log10_p", "rel_err"])
        for row in rows:
            w.writerow([repr(row["b"]), repr(row["p_hat"]),
                        repr(row["neg_log10_p"]), repr(row["rel_err"])])
    run_json = {
        "name": cfg["name"],
        "config": {"b_grid": b_grid, "n_paths": n_paths, "seed": seed,
                   "workers": workers, "max_steps": max_steps,
                   "variant": prop.variant, "size": len(prop)},
        "rows": rows,
        "report": rep.as_dict() if rep is not None else None,
    }
    json_path = out_dir / f"{cfg['name']}_run.json"
    _dump_json(run_json, json_path)
    _log(f"wrote {csv_path} and {json_path} in {elapsed:.1f}s")

    truncated = sum(r["truncation_count"] for r in rows)
    if truncated:
        _log(f"WARNING: {truncated} truncated paths")
    if args.strict:
        bad = truncated > 0 or (rep is not None and not rep.holds)
        if bad:
            _log("strict: run failed (truncation or condition failure)")
            return 1
    return 0


def cmd_oracle(cfg, args) -> int:
    model = build_model(cfg["model"])
    rule = build_rule(_need(cfg, "problem", "config"))
    prop, _ = build_proposal(model, rule, cfg.get("proposal", {}))
    osp = _need(cfg, "oracle", "config")
    b = float(_need(osp, "b", "oracle"))
    seed = int(args.seed if args.seed is not None else
               _need(osp, "seed", "oracle"))
    workers = int(args.workers or osp.get("workers", 1))
    mix_cfg = RunConfig(b=b, n_paths=int(_need(osp, "n_mixture", "oracle")),
                        seed=seed, workers=workers)
    plain_cfg = RunConfig(b=b, n_paths=int(_need(osp, "n_plain", "oracle")),
                          seed=seed + 1, workers=workers)
    mix = estimate_wrong_exit(model, prop, rule, mix_cfg)
    pl = plain_mc(model, rule, plain_cfg)
    se = math.hypot(mix.std_error, pl.std_error)
    z = (mix.mean - pl.mean) / se if se > 0 else math.inf
    report = {
        "b": b,
        "mixture": mix.to_json_dict(),
        "plain": pl.to_json_dict(),
        "z_score": z,
    }
    out = _out_dir(cfg, args) / f"{cfg['name']}_oracle.json"
    _dump_json(report, out)
    _log(f"wrote {out}: mixture={mix.mean:.4g} plain={pl.mean:.4g} z={z:.2f}")
    return 0


def cmd_table(cfg, args) -> int:
    """Maximal rho on a grid such that (H1), (H2) and the direct condition
    hold, for a span of upper barriers (two-barrier problem, d fixed)."""
    spec = cfg.get("table", {})
    d = int(spec.get("d", 50))
    ell = float(spec.get("ell", 1.0))
    u_values = [float(x) for x in spec.get("u_values", [3, 2, 1, 0.5, 1 / 3])]
    grid = spec.get("rho_grid", {"start": 0.0, "stop": 0.90, "step": 0.01})
    n_steps = int(round((grid["stop"] - grid["start"]) / grid["step"]))
    rhos = [round(grid["start"] + i * grid["step"], 10)
            for i in range(n_steps + 1)]
    rows = []
    for u in u_values:
        rule = SiegmundRule(ell, u)
        best = {"H1": None, "H2": None, "direct": None}
        for rho in rhos:
            cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
            model = MvNormalModel(np.full(d, -0.5), cov)
            r = solve_beta([0], rule, model).value
            s = solve_gamma_pair(0, 1, rule, model).value
            uz = solve_gamma_single(0, rule, model).value
            if uz + s >= 2 * r - 1e-12:
                best["H1"] = rho
            if 2 * s >= 2 * r - 1e-12:
                best["H2"] = rho
            rep = check_direct_siegmund_homogeneous(model, ell, u)
            if rep.holds:
                best["direct"] = rho
        rows.append({"u": u, **best})
        _log(f"u={u:g}: H1<= {best['H1']}  H2<= {best['H2']}  "
             f"direct<= {best['direct']}")
    out = _out_dir(cfg, args) / f"{cfg['name']}_table.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "H1_max_rho", "H2_max_rho", "direct_max_rho"])
        for row in rows:
            w.writerow([repr(row["u"]), row["H1"], row["H2"], row["direct"]])
    _log(f"wrote {out}")
    return 0


def cmd_sweep(cfg, args) -> int:
    spec = _need(cfg, "sweep", "config")
    kind = _need(spec, "kind", "sweep")
    out = _out_dir(cfg, args) / f"{cfg['name']}_sweep.csv"
    if kind == "siegmund_rho":
        _sweep_siegmund_rho(spec, out)
    elif kind == "gap_v":
        _sweep_gap_v(spec, out)
    elif kind == "si_rho":
        _sweep_si_rho(spec, out)
    else:
        raise ConfigError(f"sweep.kind: unknown sweep {kind!r}")
    _log(f"wrote {out}")
    return 0


def _float_grid(spec, key, default):
    g = spec.get(key, default)
    if isinstance(g, dict):
        n = int(round((g["stop"] - g["start"]) / g["step"]))
        return [round(g["start"] + i * g["step"], 10) for i in range(n + 1)]
    return [float(x) for x in g]


def _sweep_siegmund_rho(spec, out):
    d = int(spec.get("d", 50))
    ell = float(spec.get("ell", 1.0))
    u = float(spec.get("u", 1.0))
    rule = SiegmundRule(ell, u)
    rhos = _float_grid(spec, "rho_grid",
                       {"start": 0.0, "stop": 0.90, "step": 0.01})
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "r", "h1_bound", "h2_bound", "h1_holds",
                    "h2_holds"])
        for rho in rhos:
            cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
            model = MvNormalModel(np.full(d, -0.5), cov)
            r = solve_beta([0], rule, model).value
            h1 = u / (1 + rho) + u / 2
            h2 = 2 * u / (1 + rho)
            w.writerow([repr(float(rho)), repr(r), repr(h1), repr(h2),
                        int(r <= h1 + 1e-12), int(r <= h2 + 1e-12)])


def _sweep_gap_v(spec, out):
    d = int(spec.get("d", 50))
    m = int(spec.get("m", 25))
    rule = GapRule(m)
    vs = _float_grid(spec, "v_grid", np.geomspace(0.05, 20.0, 61).tolist())
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v", "min_r_A", "h1p_bound", "h2p_bound", "h1p_holds",
                    "h2p_holds"])
        for v in vs:
            comps = [Normal(0.5, 1.0)] * m + [Normal(-0.5, float(v))] * (d - m)
            model = IndependentModel(comps)
            A = sorted(set(range(m)) - {0} | {m})
            r = solve_beta(A, rule, model).value
            h1 = 3 / (1 + v)
            h2 = 4 / (1 + v)
            w.writerow([repr(float(v)), repr(r), repr(h1), repr(h2),
                        int(r <= h1 + 1e-12), int(r <= h2 + 1e-12)])


def _sweep_si_rho(spec, out):
    d = int(spec.get("d", 50))
    L = int(spec.get("L", 2))
    rule = SumIntersectionRule(L)
    rhos = _float_grid(spec, "rho_grid",
                       {"start": 0.0, "stop": 0.90, "step": 0.01})
    from .solvers import solve_si_s, solve_si_z
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "r_A", "z_A", "s_B", "hsi_holds"])
        for rho in rhos:
            cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
            model = MvNormalModel(np.full(d, -0.5), cov)
            r = solve_beta(list(range(L)), rule, model).value
            z = solve_si_z(list(range(L)), rule, model).value
            s = solve_si_s(list(range(L + 1)), rule, model).value
            w.writerow([repr(float(rho)), repr(r), repr(z), repr(s),
                        int(z + s >= 2 * r - 1e-12)])


COMMANDS = {
    "solve": cmd_solve,
    "check": cmd_check,
    "run": cmd_run,
    "oracle": cmd_oracle,
    "table": cmd_table,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wrongexit",
        description="Wrong-exit probability estimation via tilted mixtures",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment JSON")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--paper-scale", action="store_true",
                        help="apply the config's paper_scale overrides")
    parser.add_argument("--strict", action="store_true",
                        help="nonzero exit on truncation or failed condition")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, paper_scale=args.paper_scale)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
