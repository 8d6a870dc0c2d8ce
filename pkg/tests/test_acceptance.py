"""End-to-end acceptance criteria, one test per criterion at its stated tolerance."""

import math
import time

import numpy as np
import pytest

from lipdyn import chafee_infante as ci
from lipdyn import cli
from lipdyn.graph_ops import function_graph, invert_near_identity, reparametrize_unstable_graph
from lipdyn.graph_transform import (
    STABLE,
    UNSTABLE,
    SplitSystem,
    compute_invariant_graph,
    invariance_residuals,
    verify_graph,
)
from lipdyn.hyperbolicity import certify_hyperbolic, jacobian, straighten_coordinates
from lipdyn.models import cubic_map, cyclic_equilibria, cyclic_map, linear_map, saddle_map
from lipdyn.morse_smale import (
    build_connection_graph,
    check_geometric_equivalence,
    delete_edge,
    make_node,
)
from lipdyn.perturbation import (
    PerturbationFamily,
    continue_equilibrium,
    manifold_deviation,
    track_equilibrium_family,
)
from lipdyn.report import Results
from lipdyn.spectral_split import resolvent_bound, split_spectrum
from lipdyn.transversality import intersect_graphs, uniqueness_check

A, B, GAMMA = 2.0, 0.5, 0.05


@pytest.fixture(scope="module")
def saddle_graphs():
    model = saddle_map(gamma=GAMMA, a=A, b=B)
    split = split_spectrum(jacobian(model, np.zeros(2)), 1.0)
    system = SplitSystem(model, np.zeros(2), split)
    t0 = time.perf_counter()
    unstable = compute_invariant_graph(system, UNSTABLE, radius=1.0, grid_res=201)
    elapsed = time.perf_counter() - t0
    stable = compute_invariant_graph(system, STABLE, radius=1.0, grid_res=201)
    return system, unstable, stable, elapsed


def test_criterion_01_contraction(saddle_graphs, record_criterion):
    _, g, _, elapsed = saddle_graphs
    bound = (B + 2 * GAMMA) / (A - 2 * GAMMA) + 0.02
    measured, sweeps = g.meta["measured_contraction"], g.meta["sweeps"]
    ok = measured <= bound and sweeps <= 60 and elapsed < 5.0
    record_criterion(1, ok, f"contraction {measured:.4f} <= {bound:.4f}, sweeps {sweeps}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_lipschitz(saddle_graphs, record_criterion):
    _, gu, gs, _ = saddle_graphs
    bound = GAMMA / (A - B - 3 * GAMMA) + 0.005
    worst = max(gu.lip_cert, gs.lip_cert)
    ok = worst <= bound
    record_criterion(2, ok, f"lip_cert {worst:.5f} <= {bound:.4f}")
    assert ok


def test_criterion_03_invariance(saddle_graphs, record_criterion):
    system, gu, gs, _ = saddle_graphs
    nonlinear = max(float(np.max(invariance_residuals(system, g))) for g in (gu, gs))
    lin = linear_map(np.diag([A, B]))
    lsys = SplitSystem(lin, np.zeros(2), split_spectrum(np.diag([A, B]), 1.0))
    lu = compute_invariant_graph(lsys, UNSTABLE, radius=1.0, grid_res=201)
    ls = compute_invariant_graph(lsys, STABLE, radius=1.0, grid_res=201)
    exact = max(float(np.max(np.abs(lu.values))), float(np.max(np.abs(ls.values))))
    ok = nonlinear <= 1e-8 and exact <= 1e-12
    record_criterion(3, ok, f"residual {nonlinear:.2e} <= 1e-8, linear graph {exact:.1e} <= 1e-12")
    assert ok


def test_criterion_04_rates(saddle_graphs, record_criterion):
    system, _, gs, _ = saddle_graphs
    rep = verify_graph(system, gs, n_probe=10, fail_window=20, recompute=False)
    bound = B + 2 * GAMMA + 0.01
    rates = [p["rate"] for p in rep["probes"]]
    fails = [p["off_graph_fail_step"] for p in rep["probes"]]
    ok = (len(rates) == 10 and max(rates) <= bound
          and all(f is not None and f <= 20 for f in fails))
    record_criterion(4, ok, f"max rate {max(rates):.4f} <= {bound:.2f}, off-graph fail steps {fails}")
    assert ok


def test_criterion_05_rho_robust(saddle_graphs, record_criterion):
    system, gu, gs, _ = saddle_graphs
    diffs = [verify_graph(system, g, n_probe=2)["rho_star_diff"] for g in (gu, gs)]
    ok = max(diffs) <= 1e-8
    record_criterion(5, ok, f"rho +-2% sup change {max(diffs):.1e} <= 1e-8")
    assert ok


def test_criterion_06_continuation(record_criterion):
    t0 = time.perf_counter()
    M = np.array([[A, 0.3], [0.0, B]])
    v = np.array([1.0, -2.0])
    base = SplitSystem(linear_map(M), np.zeros(2), split_spectrum(M, 1.0))
    lin_err = 0.0
    for eta in (0.1, 0.01):
        res = continue_equilibrium(base, linear_map(M, eta * v), radius=1.0)
        direct = np.linalg.solve(np.eye(2) - M, eta * v)
        lin_err = max(lin_err, float(np.max(np.abs(res.x_star - direct))))

    gamma = 0.05
    sin_base = saddle_map(gamma=gamma, bump=1.0)
    split = split_spectrum(jacobian(sin_base, np.zeros(2)), 1.0)
    sys0 = SplitSystem(sin_base, np.zeros(2), split)
    R = resolvent_bound(split)
    sin_ok = True
    for eta in (0.1, 0.01):
        res = continue_equilibrium(sys0, saddle_map(gamma=gamma, eta=eta, bump=1.0), radius=2.0)
        disp = float(sys0.norm(res.x_star))
        bound = eta * R / (1 - (gamma + eta) * R)
        sin_ok &= disp <= bound

    fam = PerturbationFamily.from_factory(lambda e: cubic_map(h=0.4, eta=e), [0.0, 0.001, 0.002, 0.005])
    model = fam.base
    bases = []
    for x in (-1.0, 0.0, 1.0):
        pt = np.array([x])
        sp = split_spectrum(jacobian(model, pt), 1.0)
        cert = certify_hyperbolic(model, pt, sp, 0.02)
        bases.append((SplitSystem(model, pt, sp, gamma=cert.gamma), cert))
    track = track_equilibrium_family(fam, bases)
    counts = [track["per_eta"][e].get("count") for e in fam.eta_values]
    elapsed = time.perf_counter() - t0
    ok = lin_err <= 1e-10 and sin_ok and counts == [3] * 4 and elapsed < 5.0
    record_criterion(6, ok, f"linear solve err {lin_err:.1e}, sin bounds {sin_ok}, counts {counts}, {elapsed:.2f}s")
    assert ok


def test_criterion_07_manifold_continuity(record_criterion):
    gamma = 0.02
    model = saddle_map(gamma=gamma)
    split = split_spectrum(np.diag([A, B]), 1.0)
    cert = certify_hyperbolic(model, np.zeros(2), split, 0.5)
    system = SplitSystem(model, np.zeros(2), split)
    gu = compute_invariant_graph(system, UNSTABLE, 1.0, 201)
    gs = compute_invariant_graph(system, STABLE, 1.0, 201)
    st = straighten_coordinates(system, cert, gu, gs)
    fam = PerturbationFamily.from_factory(lambda e: saddle_map(gamma=gamma, eta=e), [0.0, 0.001, 0.01, 0.1])
    out = manifold_deviation(st, fam, slack=0.05, strict=False)
    rows = {r["eta"]: r for r in out["rows"]}
    bounds_ok = all(rows[e]["sup_ok"] and rows[e]["lip_ok"] for e in (0.1, 0.01))
    small = rows[0.001]["sup_deviation"] < 1e-3 and rows[0.001]["lip_deviation"] < 1e-3
    ok = bounds_ok and out["monotone"] and small
    record_criterion(7, ok, f"bounds {bounds_ok}, monotone {out['monotone']}, "
                            f"sup dev at 1e-3 {rows[0.001]['sup_deviation']:.1e}")
    assert ok


def _affine(slope, offset):
    return lambda y: slope * np.asarray(y, dtype=float) + offset


def test_criterion_08_transversality(record_criterion):
    theta, sigma = _affine(0.2, -0.1), _affine(0.3, 0.01)
    r, c = 1.0, 0.3
    out = intersect_graphs(theta, sigma, dims=(1, 1), lip_bounds=(0.2, 0.3), r=r)
    err = abs(float(out["y1"][0]) + 0.02 / 0.94)
    spread = uniqueness_check(theta, sigma, out["y1"], r, n_seeds=10, dims=(1, 1), lip_bounds=(0.2, 0.3))
    shifts = []
    for frac in (0.1, 0.01, 0.001):
        eps = frac * (1 - c) * r / 2
        pert = intersect_graphs(_affine(0.2, -0.1 + eps), _affine(0.3, 0.01 - eps), dims=(1, 1),
                                lip_bounds=(0.2, 0.3), r=r, reference=(theta, sigma, c))
        shifts.append(float(np.max(np.abs(pert["point"] - out["point"]))))
    decreasing = all(s1 < s0 for s0, s1 in zip(shifts, shifts[1:]))
    ok = err <= 1e-10 and spread <= 1e-10 and decreasing
    record_criterion(8, ok, f"fixed point err {err:.1e}, 10-seed spread {spread:.1e}, shifts {shifts}")
    assert ok


def test_criterion_09_appendix_inversion(record_criterion):
    rng = np.random.default_rng(0)
    r = 1.0

    def g(x):
        return x + 0.1 * np.sin(x)

    alpha = 0.1 * math.sin(1.0)
    y = rng.uniform(-(r - alpha), r - alpha, size=(1000, 1))
    x = invert_near_identity(g, y, r, {"lip": 0.1, "sup": alpha})
    round_trip = float(np.max(np.abs(g(x) - y)))
    misses = int(np.sum(np.abs(x) > r))

    theta = function_graph(lambda z: 0.3 * np.sin(z), UNSTABLE, 1.0, 201, 1)
    cases = {
        "translation": lambda z: (z + 0.1, theta(z) + 0.05),
        "nonlinear": lambda z: (z + 0.05 * np.sin(z), theta(z) + 0.05 * np.sin(2 * z)),
    }
    bounds_ok = True
    for psi in cases.values():
        out = reparametrize_unstable_graph(psi, theta)
        bounds_ok &= out.meta["lip_ok"] and out.meta["sup_ok"]
    ok = round_trip <= 1e-10 and misses == 0 and bounds_ok
    record_criterion(9, ok, f"round trip {round_trip:.1e}, containment misses {misses}, bounds {bounds_ok}")
    assert ok


def test_criterion_10_chafee_infante(record_criterion):
    t0 = time.perf_counter()
    cfg = {
        "pipeline": "chafee",
        "model": {"name": "chafee", "modes": 16, "lambda": 2.0},
        "params": {"lambda_list": [0.5, 2.0, 5.0, 10.0], "eta_values": [0.0, 0.05],
                   "expect_edges": [["0", "phi1+"], ["0", "phi1-"]], "diagnostics": False},
        "seeds": {"sampling": 0},
    }
    res = Results()
    cli.run_chafee(cfg, res)
    elapsed = time.perf_counter() - t0
    by = {(c["family"], c["name"]): c for c in res.checks}
    counts = [by[("counts", f"lambda={lam!r}")]["value"] for lam in (0.5, 2.0, 5.0, 10.0)]
    sign = by[("sign", "phi1- < 0 < phi1+")]["pass"]
    edges = by[("graph", "edges_eta0")]["pass"]
    equiv = by[("stability", "eta=0.05:equivalence")]["pass"]
    ok = counts == [1, 3, 5, 7] and sign and edges and equiv and elapsed < 60.0
    record_criterion(10, ok, f"counts {counts}, sign {sign}, edges {edges}, equivalence at 0.05 {equiv}, "
                             f"{elapsed:.1f}s")
    assert ok


def test_criterion_11_nemytskii(record_criterion):
    radii = [2.0 ** -k for k in range(1, 11)]
    affine = ci.nemytskii_remainder_diagnostic({"kind": "affine", "a": 2.0, "b": 1.0}, 0.3, 0.7, 2.0, radii)
    sine = ci.nemytskii_remainder_diagnostic({"kind": "sine"}, 0.0, math.pi / 2, 2.0, radii)
    exact = abs(1 - math.pi / 2) / (math.pi / 2)
    rel = abs(sine["ratios"][-1] - exact) / exact
    ok = max(affine["ratios"]) <= 1e-12 and rel <= 0.02
    record_criterion(11, ok, f"affine max ratio {max(affine['ratios']):.1e}, sine at 2^-10 "
                             f"{sine['ratios'][-1]:.5f} vs {exact:.5f}")
    assert ok


def test_criterion_12_negative_control(record_criterion):
    model = cyclic_map()
    nodes = [make_node(model, f"e{k + 1}", p, 0.001) for k, p in enumerate(cyclic_equilibria())]
    graph = build_connection_graph(model, nodes)
    cycle = graph.cycles[0] if graph.cycles else []
    equal, disc = check_geometric_equivalence(graph, delete_edge(graph, "e1", "e2"))
    ok = (graph.dg_flag is False and sorted(set(cycle)) == ["e1", "e2", "e3"]
          and not equal and disc == [("e1", "e2", "A-only")])
    record_criterion(12, ok, f"dg_flag {graph.dg_flag}, cycle {cycle}, edge-deleted equivalence {equal} {disc}")
    assert ok
