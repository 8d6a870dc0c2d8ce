"""Batch driver: ``lipdyn run <config.json> --out <dir> [--seed N] [--check-only]``.

Exit codes: 0 when every check passes, 2 when some check fails, 1 on errors.
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import chafee_infante as ci
from . import models
from .errors import ConfigInvalid, GapViolated, LipdynError
from .graph_transform import (
    STABLE,
    UNSTABLE,
    SplitSystem,
    compute_invariant_graph,
    contraction_bound,
    lipschitz_bound,
    verify_graph,
)
from .hyperbolicity import certify_hyperbolic, jacobian
from .morse_smale import build_connection_graph, make_node, run_stability_experiment
from .perturbation import PerturbationFamily, continue_equilibrium
from .report import Results, emit_report
from .spectral_split import build_adapted_norm, resolvent_bound, split_spectrum
from .transversality import intersect_graphs, uniqueness_check

PIPELINES = ("split", "manifold", "certify", "continue", "transversal", "morse-smale",
             "stability", "chafee", "nemytskii")
MODELS = ("saddle", "linear", "coupled_linear", "cubic", "planar", "cyclic", "chafee")
TOP_KEYS = {"pipeline", "model", "split", "params", "tolerances", "seeds"}

DEFAULT_TOLERANCES = {
    "contraction_slack": 0.02,
    "lip_slack": 0.005,
    "invariance": 1e-8,
    "rho_robust": 1e-8,
    "residual": 1e-10,
    "fixed_point": 1e-10,
    "affine_ratio": 1e-12,
    "sine_relative": 0.02,
    "witness": 1e-9,
}


def load_config(path):
    """Parse and validate a scenario config; ConfigInvalid carries line or field."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if not isinstance(cfg, dict):
        raise ConfigInvalid("field <root>: expected a JSON object")
    extra = set(cfg) - TOP_KEYS
    if extra:
        raise ConfigInvalid(f"field {sorted(extra)[0]}: unknown top-level field")
    if cfg.get("pipeline") not in PIPELINES:
        raise ConfigInvalid(f"field pipeline: expected one of {list(PIPELINES)}")
    seeds = cfg.get("seeds")
    if not isinstance(seeds, dict) or not isinstance(seeds.get("sampling"), int):
        raise ConfigInvalid("field seeds.sampling: an integer seed is mandatory")
    if cfg["pipeline"] != "nemytskii":
        model = cfg.get("model")
        if not isinstance(model, dict) or model.get("name") not in MODELS:
            raise ConfigInvalid(f"field model.name: expected one of {list(MODELS)}")
    for key in ("split", "params", "tolerances"):
        if key in cfg and not isinstance(cfg[key], dict):
            raise ConfigInvalid(f"field {key}: expected an object")
    for key, val in cfg.get("tolerances", {}).items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigInvalid(f"field tolerances.{key}: unknown tolerance")
        if not isinstance(val, (int, float)) or val < 0:
            raise ConfigInvalid(f"field tolerances.{key}: expected a non-negative number")
    return cfg


def _model_kwargs(conf, keys):
    return {k: conf[k] for k in keys if k in conf}


def build_model(conf, eta=None):
    """MapModel from a config model section; ``eta`` overrides the family parameter."""
    conf = dict(conf)
    if eta is not None:
        conf["eta"] = eta
    name = conf["name"]
    if name == "saddle":
        a, b = conf.get("a", 2.0), conf.get("b", 0.5)
        if not b < 1.0 < a:
            raise GapViolated(f"saddle split needs b < 1 < a, got a={a}, b={b}")
        return models.saddle_map(**_model_kwargs(conf, ("gamma", "a", "b", "eta", "bump")))
    if name == "linear":
        if "matrix" not in conf:
            raise ConfigInvalid("field model.matrix: required for linear models")
        M = np.asarray(conf["matrix"], dtype=float)
        off = np.asarray(conf.get("offset", np.zeros(M.shape[0])), dtype=float)
        return models.linear_map(M, off + conf.get("eta", 0.0) * np.asarray(conf.get("eta_offset", 0.0)))
    if name == "coupled_linear":
        return models.coupled_linear_saddle(**_model_kwargs(conf, ("k", "a", "b")))
    if name == "cubic":
        return models.cubic_map(**_model_kwargs(conf, ("h", "eta")))
    if name == "planar":
        return models.planar_gradient_map(**_model_kwargs(conf, ("h", "c", "eta")))
    if name == "cyclic":
        return models.cyclic_map(**_model_kwargs(conf, ("alpha", "beta")))
    if name == "chafee":
        return ci.build_time_one_map(galerkin(conf))
    raise ConfigInvalid(f"field model.name: unknown model {name!r}")


def galerkin(conf):
    kw = _model_kwargs(conf, ("modes", "eta", "dt", "steps_per_unit", "dealias_points", "r_cut"))
    if "lambda" in conf:
        kw["lam"] = conf["lambda"]
    try:
        return ci.GalerkinModel(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"field model: {exc}") from exc


def _point(cfg, model):
    p = cfg.get("params", {}).get("point")
    if p is not None:
        return np.asarray(p, dtype=float)
    if model.fixed_point_hint is not None:
        return np.asarray(model.fixed_point_hint, dtype=float)
    return np.zeros(model.dim)


def _tol(cfg, key):
    return float(cfg.get("tolerances", {}).get(key, DEFAULT_TOLERANCES[key]))


def _seed(cfg):
    return int(cfg["seeds"]["sampling"])


def run_split(cfg, res):
    model = build_model(cfg["model"])
    x = _point(cfg, model)
    rho = float(cfg.get("split", {}).get("rho", 1.0))
    split = split_spectrum(jacobian(model, x), rho)
    for key, side in (("a", "unstable"), ("b", "stable")):
        want = cfg.get("split", {}).get(key)
        if want is not None and ((key == "b" and want >= rho) or (key == "a" and want <= rho)):
            raise GapViolated(f"declared {side} constant {key}={want} is on the wrong side of rho={rho}")
    norm = build_adapted_norm(split)
    resid = split.residuals()
    res.json["split"] = {"split": split.to_dict(), "adapted_norm": norm.to_dict(),
                         "resolvent": resolvent_bound(split), "residuals": resid}
    worst = max(float(v) for v in resid.values()) if isinstance(resid, dict) else float(np.max(resid))
    res.check("split", "residuals", worst <= 1e-10, worst, 1e-10)
    res.check("split", "gap", split.b < rho < split.a, [split.b, split.a], rho)


def _system(cfg, model, x):
    rho = float(cfg.get("split", {}).get("rho", 1.0))
    split = split_spectrum(jacobian(model, x), rho)
    return SplitSystem(model, x, split, seed=_seed(cfg))


def run_manifold(cfg, res):
    model = build_model(cfg["model"])
    x = _point(cfg, model)
    sys_ = _system(cfg, model, x)
    p = cfg.get("params", {})
    radius = float(p.get("radius", 1.0))
    grid = int(p.get("grid_res", 201))
    for direction in (UNSTABLE, STABLE):
        if (sys_.d_u if direction == UNSTABLE else sys_.d_s) == 0:
            continue
        g = compute_invariant_graph(sys_, direction, radius=radius, grid_res=grid,
                                    tol=float(p.get("tol", 1e-10)))
        rep = verify_graph(sys_, g, tol=_tol(cfg, "rho_robust"))
        res.json[f"{direction}_graph"] = g.to_dict()
        res.json[f"{direction}_verification"] = rep
        if g.d_dom == 1:
            cols = np.column_stack([g.axes[0], g.values.reshape(len(g.axes[0]), -1)])
            names = ["xi"] + [f"theta{k}" for k in range(g.d_cod)]
            res.dat[f"{direction}_graph"] = (names, cols)
        m = g.meta
        cb = contraction_bound(sys_) + _tol(cfg, "contraction_slack")
        res.check(direction, "contraction", m["measured_contraction"] <= cb, m["measured_contraction"], cb)
        lb = lipschitz_bound(sys_) + _tol(cfg, "lip_slack")
        res.check(direction, "lipschitz", g.lip_cert <= lb, g.lip_cert, lb)
        res.check(direction, "invariance", rep["invariance_residual"] <= _tol(cfg, "invariance"),
                  rep["invariance_residual"], _tol(cfg, "invariance"))
        res.check(direction, "rates", bool(rep["rate_ok"] and rep.get("off_graph_ok", True)))
        res.check(direction, "rho_robust", rep["rho_star_diff"] <= _tol(cfg, "rho_robust"),
                  rep["rho_star_diff"], _tol(cfg, "rho_robust"))


def run_certify(cfg, res):
    model = build_model(cfg["model"])
    x = _point(cfg, model)
    p = cfg.get("params", {})
    split = split_spectrum(jacobian(model, x), float(cfg.get("split", {}).get("rho", 1.0)))
    cert = certify_hyperbolic(model, x, split, float(p.get("delta", 0.1)),
                              n_pairs=int(p.get("n_pairs", 100_000)), seed=_seed(cfg), strict=False)
    res.json["certificate"] = cert.to_dict()
    res.check("certificate", "weak", cert.weak_flag)
    if p.get("require_strong", True):
        res.check("certificate", "strong", cert.strong_flag, cert.gamma, cert.gamma1_threshold)


def _family(cfg):
    etas = cfg.get("params", {}).get("eta_values", [0.0, 0.01, 0.1])
    if cfg["model"]["name"] == "chafee":
        base = ci.with_default_cutoff(galerkin(cfg["model"]))
        return PerturbationFamily.from_factory(lambda e: ci.build_time_one_map(replace(base, eta=e)), etas)
    return PerturbationFamily.from_factory(lambda e: build_model(cfg["model"], eta=e), etas)


def run_continue(cfg, res):
    fam = _family(cfg)
    base = fam.base
    x = _point(cfg, base)
    p = cfg.get("params", {})
    sys_ = _system(cfg, base, x)
    radius = float(p.get("radius", 0.5))
    rows = []
    for eta, model in zip(fam.eta_values, fam.models):
        r = continue_equilibrium(sys_, model, eta=eta, radius=radius, seed=_seed(cfg),
                                 n_pairs=int(p.get("n_pairs", 100_000)))
        disp = float(sys_.norm(r.x_star - x))
        rows.append({"eta": eta, "displacement": disp, "bound": r.bound_delta1,
                     "residual": r.residual, "iterations": r.iterations,
                     "pass": disp <= r.bound_delta1 * (1 + 1e-9) + 1e-15})
        res.check("continuation", f"eta={eta!r}", rows[-1]["pass"], disp, r.bound_delta1)
        res.check("continuation", f"residual eta={eta!r}", r.residual <= _tol(cfg, "residual"),
                  r.residual, _tol(cfg, "residual"))
        res.json[f"continuation_eta_{eta!r}"] = r.to_dict()
    res.csv["continuation"] = (["eta", "displacement", "bound", "residual", "iterations", "pass"], rows)


def _linear_chart(slope, offset, d_cod):
    def chart(y):
        y = np.asarray(y, dtype=float)
        return np.repeat(slope * y[..., :1] + offset, d_cod, axis=-1)

    return chart


def run_transversal(cfg, res):
    p = cfg.get("params", {})
    st, ot = float(p.get("theta_slope", 0.2)), float(p.get("theta_offset", -0.1))
    ss, os_ = float(p.get("sigma_slope", 0.3)), float(p.get("sigma_offset", 0.01))
    r = float(p.get("r", 1.0))
    theta, sigma = _linear_chart(st, ot, 1), _linear_chart(ss, os_, 1)
    out = intersect_graphs(theta, sigma, dims=(1, 1), lip_bounds=(abs(st), abs(ss)), r=r)
    exact = (ss * ot + os_) / (1 - st * ss)
    spread = uniqueness_check(theta, sigma, out["y1"], r, seed=_seed(cfg), dims=(1, 1),
                              lip_bounds=(abs(st), abs(ss)))
    res.json["intersection"] = {k: v for k, v in out.items() if k != "closeness"}
    res.json["intersection"]["exact_y1"] = exact
    res.json["intersection"]["uniqueness_spread"] = spread
    err = abs(float(out["y1"][0]) - exact)
    res.check("transversal", "fixed_point", err <= _tol(cfg, "fixed_point"), err, _tol(cfg, "fixed_point"))
    res.check("transversal", "uniqueness", spread <= _tol(cfg, "fixed_point"), spread, _tol(cfg, "fixed_point"))


def _nodes(cfg, model):
    p = cfg.get("params", {})
    eqs = p.get("equilibria")
    if not eqs:
        raise ConfigInvalid("field params.equilibria: list of {id, point, delta} required")
    kw = {"n_pairs": int(p.get("n_pairs", 100_000)), "seed": _seed(cfg)}
    if "min_pairs" in p:
        kw["min_pairs"] = int(p["min_pairs"])
    return [make_node(model, e["id"], e["point"], float(e.get("delta", 0.05)), **kw) for e in eqs]


def _graph_checks(res, fam, graph, model, cfg, expect):
    worst = max((w.residual(model) for _, _, w in graph.edges), default=0.0)
    res.check(fam, "witness_residual", worst <= _tol(cfg, "witness"), worst, _tol(cfg, "witness"))
    if "edges" in expect:
        want = sorted(tuple(e) for e in expect["edges"])
        res.check(fam, "edges", sorted(graph.edge_set()) == want, sorted(graph.edge_set()), want)
    want_dg = expect.get("dg_flag", True)
    res.check(fam, "dg_flag", graph.dg_flag == want_dg, graph.dg_flag, want_dg)
    if want_dg:
        res.check(fam, "transitive", graph.transitive_closure_ok)
        res.check(fam, "topological_order", graph.order_ok)
    else:
        res.check(fam, "cycle_reported", bool(graph.cycles), graph.cycles)


def run_morse_smale(cfg, res):
    model = build_model(cfg["model"])
    nodes = _nodes(cfg, model)
    p = cfg.get("params", {})
    graph = build_connection_graph(model, nodes, dict(p.get("detection", {}), seed=_seed(cfg)))
    res.json["connection_graph"] = graph.to_dict()
    res.dot["connection_graph"] = graph.to_dot()
    _graph_checks(res, "morse_smale", graph, model, cfg, p.get("expect", {}))


def _stability(cfg, res, fam, points, deltas, ids):
    p = cfg.get("params", {})
    conf = {"n_pairs": int(p.get("n_pairs", 100_000)), "seed": _seed(cfg),
            "params": dict(p.get("detection", {}), seed=_seed(cfg))}
    if "min_pairs" in p:
        conf["min_pairs"] = int(p["min_pairs"])
    out = run_stability_experiment(fam, points, deltas, ids, conf)
    res.csv["stability"] = (["eta", "stage", "pass", "detail"], out["rows"])
    for eta, g in sorted(out["graphs"].items()):
        tag = f"eta_{eta!r}".replace(".", "p")
        res.dot[f"graph_{tag}"] = g.to_dot(name=f"graph_{tag}")
        res.json[f"graph_{tag}"] = g.to_dict()
    res.json["stability"] = {"premise": out["premise"], "eta_valid_max": out["eta_valid_max"]}
    for k, v in sorted(out["premise"].items()):
        res.check("premise", k, v)
    for row in out["rows"]:
        res.check("stability", f"eta={row['eta']!r}:{row['stage']}", row["pass"])
    return out


def run_stability(cfg, res):
    fam = _family(cfg)
    nodes = cfg.get("params", {}).get("equilibria")
    if not nodes:
        raise ConfigInvalid("field params.equilibria: list of {id, point, delta} required")
    _stability(cfg, res, fam, [np.asarray(e["point"], float) for e in nodes],
               [float(e.get("delta", 0.05)) for e in nodes], [str(e["id"]) for e in nodes])


def run_chafee(cfg, res):
    p = cfg.get("params", {})
    model = ci.with_default_cutoff(galerkin(cfg["model"]))
    lambdas = p.get("lambda_list", [0.5, 2.0, 5.0, 10.0])
    table = []
    for lam in lambdas:
        found = len(ci.find_equilibria(ci.GalerkinModel(modes=model.modes, lam=lam)))
        table.append({"lambda": lam, "expected": ci.expected_count(lam), "found": found,
                      "pass": found == ci.expected_count(lam)})
        res.check("counts", f"lambda={lam!r}", table[-1]["pass"], found, ci.expected_count(lam))
    res.csv["equilibrium_counts"] = (["lambda", "expected", "found", "pass"], table)
    eqs = ci.find_equilibria(model)
    ids = _chafee_ids(eqs, model)
    xg = np.linspace(0.0, math.pi, ci.PROFILE_POINTS)
    for e, i in zip(eqs, ids):
        prof = ci.profile_table(e["coeffs"])
        res.dat[f"profile_{i}"] = (["x", "u"], prof)
        res.csv[f"profile_{i}"] = (["x", "u"], prof.tolist())
    if "phi1+" in ids:
        up = ci.profile(eqs[ids.index("phi1+")]["coeffs"], xg[1:-1])
        dn = ci.profile(eqs[ids.index("phi1-")]["coeffs"], xg[1:-1])
        res.check("sign", "phi1- < 0 < phi1+", bool(np.all(dn < 0) and np.all(up > 0)),
                  [float(dn.max()), float(up.min())])
    res.json["equilibria"] = [{"id": i, "coeffs": e["coeffs"], "unstable_dim": e["unstable_dim"],
                               "label": e["label"]} for e, i in zip(eqs, ids)]
    deltas = [float(p.get("delta_unstable", 0.05)) if e["unstable_dim"] else float(p.get("delta_stable", 0.2))
              for e in eqs]
    etas = p.get("eta_values", [0.0, 0.05])
    fam = PerturbationFamily.from_factory(lambda e: ci.build_time_one_map(replace(model, eta=e)), etas)
    cfg = dict(cfg, params=dict({"n_pairs": 10_000, "min_pairs": 10_000}, **p))
    out = _stability(cfg, res, fam, [e["coeffs"] for e in eqs], deltas, ids)
    if "expect_edges" in p:
        want = sorted(tuple(e) for e in p["expect_edges"])
        got = sorted(out["base_graph"].edge_set())
        res.check("graph", "edges_eta0", got == want, got, want)
    if p.get("diagnostics", True):
        ed = ci.energy_decay_check(model, seed=_seed(cfg))
        res.check("diagnostics", "energy_decay", ed["ok"], ed["max_increase"], 1e-6)
        rf = ci.dt_refinement(model, seed=_seed(cfg))
        res.check("diagnostics", "dt_refinement_order", rf["ok"], rf["order"], 0.95)
        tr = ci.trapping_check(model, seed=_seed(cfg))
        res.check("diagnostics", "trapping", tr["ok"], [r["max_tail_norm"] for r in tr["rows"]], tr["radius"])
        fb = ci.forcing_bounds_check(replace(model, eta=max(etas)), seed=_seed(cfg))
        res.check("diagnostics", "forcing_sup", fb["f1_ok"], fb["max_sq_norm"], fb["sq_bound"])
        res.check("diagnostics", "forcing_lipschitz", fb["f2_ok"], fb["max_ratio"], 1.0)


def _chafee_ids(eqs, model):
    """Labels 0, phik+ and phik- from the number of interior sign changes."""
    x = np.linspace(0.0, math.pi, ci.PROFILE_POINTS)[1:-1]
    ids = []
    for e in eqs:
        u = ci.profile(e["coeffs"], x)
        if np.max(np.abs(u)) < 1e-8:
            ids.append("0")
            continue
        k = 1 + int(np.sum(np.diff(np.sign(u[np.abs(u) > 1e-12])) != 0))
        ids.append(f"phi{k}{'+' if u[0] > 0 else '-'}")
    return ids


def run_nemytskii(cfg, res):
    p = cfg.get("params", {})
    conf = p.get("f", {"kind": "sine"})
    u0, s0, pp = float(p.get("u0", 0.0)), float(p.get("s0", math.pi / 2)), float(p.get("p", 2.0))
    radii = [2.0 ** -k for k in range(1, int(p.get("levels", 10)) + 1)]
    out = ci.nemytskii_remainder_diagnostic(conf, u0, s0, pp, radii)
    res.csv["nemytskii"] = (["radius", "ratio"], [{"radius": r, "ratio": q}
                                                 for r, q in zip(out["radii"], out["ratios"])])
    res.json["nemytskii"] = out
    if conf.get("kind") == "affine":
        worst = max(out["ratios"])
        res.check("nemytskii", "affine_ratios", worst <= _tol(cfg, "affine_ratio"), worst, _tol(cfg, "affine_ratio"))
    else:
        exact = abs(math.sin(u0 + s0) - math.sin(u0) - math.cos(u0) * s0) / abs(s0)
        rel = abs(out["limit"] - exact) / exact
        res.check("nemytskii", "limit", rel <= _tol(cfg, "sine_relative"), out["limit"], exact)


RUNNERS = {
    "split": run_split,
    "manifold": run_manifold,
    "certify": run_certify,
    "continue": run_continue,
    "transversal": run_transversal,
    "morse-smale": run_morse_smale,
    "stability": run_stability,
    "chafee": run_chafee,
    "nemytskii": run_nemytskii,
}


def run_scenario(config_path, out_dir, seed=None, check_only=False):
    """Run one scenario; returns the exit code."""
    try:
        cfg = load_config(config_path)
    except ConfigInvalid as exc:
        print(f"ConfigInvalid: {exc}", file=sys.stderr)
        return 1
    if seed is not None:
        cfg["seeds"] = dict(cfg["seeds"], sampling=int(seed))
    if check_only:
        print(f"config ok: pipeline {cfg['pipeline']}")
        return 0
    res = Results()
    error = None
    try:
        RUNNERS[cfg["pipeline"]](cfg, res)
    except (LipdynError, ValueError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        print(error, file=sys.stderr)
    emit_report(res, out_dir, cfg["pipeline"], cfg, error)
    if error is not None:
        return 1
    return 0 if res.all_pass else 2


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lipdyn")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario config")
    run.add_argument("config")
    run.add_argument("--out", default="artifacts")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--check-only", action="store_true")
    args = parser.parse_args(argv)
    return run_scenario(args.config, args.out, args.seed, args.check_only)


if __name__ == "__main__":
    sys.exit(main())
