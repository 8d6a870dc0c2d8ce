"""Invariant Lipschitz graphs as fixed points of the graph transform.

Everything runs in split coordinates around a base point x*: a state is
x = x* + basis_u @ xi + basis_s @ eta and the centered map is
S(x) = T(x* + x) - x*, written S = L + N.  An unstable graph is
theta: X_u -> X_s, a stable graph sigma: X_s -> X_u.

Graphs live on a regular grid over [-r, r]^k (k <= 3) with multilinear
interpolation; queries outside the box are clamped to it.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ContractionFailed, NoSpectralGapAtRho, NotConverged, SmallnessViolated
from .sampling import INFLATION, sampled_lipschitz
from .spectral_split import build_adapted_norm, split_spectrum

UNSTABLE = "unstable"
STABLE = "stable"


@dataclass(frozen=True)
class MapModel:
    """Deterministic map acting on arrays of shape (..., d)."""

    evaluator: object
    dim: int
    domain_lo: np.ndarray = None
    domain_hi: np.ndarray = None
    fixed_point_hint: np.ndarray = None
    lip_data: float = None
    vectorized: bool = True
    name: str = "map"

    def __post_init__(self):
        lo = -np.inf * np.ones(self.dim) if self.domain_lo is None else np.asarray(self.domain_lo, float)
        hi = np.inf * np.ones(self.dim) if self.domain_hi is None else np.asarray(self.domain_hi, float)
        if np.any(hi <= lo):
            raise ValueError("degenerate domain box")
        object.__setattr__(self, "domain_lo", lo)
        object.__setattr__(self, "domain_hi", hi)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.vectorized:
            return np.asarray(self.evaluator(x), dtype=float)
        flat = x.reshape(-1, self.dim)
        out = np.array([self.evaluator(row) for row in flat], dtype=float)
        return out.reshape(x.shape)


def extend_lipschitz(n_map, radius, norm):
    """Radial-retraction extension of N from the ball of given radius.

    Inside the ball the values are untouched; outside, N(r x / ||x||).
    Lip doubles at worst and the sup stays below Lip(N) r when N(0) = 0.
    """
    fn = n_map if callable(n_map) else n_map.evaluator

    def extended(x):
        x = np.asarray(x, dtype=float)
        nrm = np.asarray(norm(x))
        scale = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)
        return fn(x * scale[..., None])

    if isinstance(n_map, MapModel):
        lip = None if n_map.lip_data is None else 2.0 * n_map.lip_data
        return replace(n_map, evaluator=extended, lip_data=lip, vectorized=True)
    return extended


class SplitSystem:
    """Centered map S = L + N at a base point, in split coordinates."""

    def __init__(self, model, base_point, split, norm=None, gamma=None,
                 gamma_mode="analytic", extension_radius=None, lip_radius=1.0,
                 n_pairs=100_000, seed=0):
        self.model = model
        self.base_point = np.asarray(base_point, dtype=float)
        self.split = split
        self.norm = build_adapted_norm(split) if norm is None else norm
        self.extension_radius = extension_radius
        self.Mu = split.mat_u
        self.Ms = split.mat_s
        self.Mu_inv = split.mat_u_inv
        self.shift = model(self.base_point) - self.base_point
        if gamma is None:
            if model.lip_data is not None:
                gamma, gamma_mode = float(model.lip_data), "analytic"
            else:
                radius = extension_radius if extension_radius is not None else lip_radius
                gamma = INFLATION * sampled_lipschitz(
                    self._flat_nonlinear, split.dim, radius, n_pairs, seed,
                    self._flat_norm,
                )
                gamma_mode = "empirical"
                if extension_radius is not None:
                    gamma *= 2.0
        self.gamma = float(gamma)
        self.gamma_mode = gamma_mode

    @classmethod
    def from_model(cls, model, base_point, rho=1.0, **kw):
        """Split the finite-difference Jacobian at ``base_point`` and wrap."""
        from .hyperbolicity import jacobian

        L = jacobian(model, base_point)
        return cls(model, base_point, split_spectrum(L, rho), **kw)

    def with_rho(self, rho):
        split = split_spectrum(self.split.matrix, rho)
        return SplitSystem(self.model, self.base_point, split, gamma=self.gamma,
                           gamma_mode=self.gamma_mode,
                           extension_radius=self.extension_radius)

    @property
    def d_u(self):
        return self.split.d_u

    @property
    def d_s(self):
        return self.split.d_s

    def S(self, xi, eta):
        x = self.split.from_coords(xi, eta)
        y = self.model(self.base_point + x) - self.base_point
        return self.split.to_coords(y)

    def _raw_nonlinear(self, xi, eta):
        su, ss = self.S(xi, eta)
        return su - xi @ self.Mu.T, ss - eta @ self.Ms.T

    def N(self, xi, eta):
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if self.extension_radius is not None:
            nrm = self.norm.norm_coords(xi, eta)
            r = self.extension_radius
            scale = np.where(nrm > r, r / np.maximum(nrm, 1e-300), 1.0)[..., None]
            xi, eta = xi * scale, eta * scale
        return self._raw_nonlinear(xi, eta)

    def _flat_nonlinear(self, c):
        du = self.d_u
        nu, ns = self._raw_nonlinear(c[..., :du], c[..., du:])
        return np.concatenate([nu, ns], axis=-1)

    def _flat_norm(self, c):
        du = self.d_u
        return self.norm.norm_coords(c[..., :du], c[..., du:])

    def flat_norm(self, c):
        return self._flat_norm(c)

    def check_gap(self, rho=None):
        """Raise unless b + 2 gamma < rho < a - 2 gamma."""
        rho = self.split.rho if rho is None else rho
        a, b, g = self.split.a, self.split.b, self.gamma
        if not (b < rho < a):
            raise NoSpectralGapAtRho(f"need b < rho < a, got a={a}, b={b}, rho={rho}")
        if not (b + 2 * g < rho):
            raise SmallnessViolated(
                f"b + 2 gamma = {b + 2 * g} is not below rho = {rho}",
                inequality="b+2*gamma<rho", required=(rho - b) / 2, actual=g,
            )
        if not (rho < a - 2 * g):
            raise SmallnessViolated(
                f"a - 2 gamma = {a - 2 * g} is not above rho = {rho}",
                inequality="rho<a-2*gamma", required=(a - rho) / 2, actual=g,
            )


@dataclass(frozen=True)
class LipschitzGraph:
    base_point: np.ndarray
    direction: str
    radius: float
    axes: tuple
    values: np.ndarray
    lip_cert: float
    rho: float
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def d_dom(self):
        return len(self.axes)

    @property
    def d_cod(self):
        return self.values.shape[-1]

    @property
    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d_dom)

    @property
    def flat_values(self):
        return self.values.reshape(-1, self.d_cod)

    @property
    def origin_index(self):
        return tuple(len(ax) // 2 for ax in self.axes)

    def __call__(self, pts):
        return _interpolate(self.axes, self.values, pts)

    def to_dict(self):
        return {
            "base_point": self.base_point.tolist(),
            "direction": self.direction,
            "radius": self.radius,
            "grid": {"axes": [ax.tolist() for ax in self.axes],
                     "resolution": [len(ax) for ax in self.axes]},
            "values": self.flat_values.tolist(),
            "lip_cert": self.lip_cert,
            "rho": self.rho,
            "meta": _jsonable(self.meta),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _interpolate(axes, values, pts):
    pts = np.asarray(pts, dtype=float)
    lead = pts.shape[:-1]
    d_cod = values.shape[-1]
    if d_cod == 0:
        return np.zeros(lead + (0,))
    flat = pts.reshape(-1, len(axes))
    lo = np.array([ax[0] for ax in axes])
    hi = np.array([ax[-1] for ax in axes])
    flat = np.clip(flat, lo, hi)
    interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)
    return interp(flat).reshape(lead + (d_cod,))


def make_grid(d_dom, radius, grid_res):
    if not 1 <= d_dom <= 3:
        raise ValueError(f"graph domain dimension must be 1..3, got {d_dom}")
    res = [grid_res] * d_dom if np.isscalar(grid_res) else list(grid_res)
    res = [int(n) + (1 - int(n) % 2) for n in res]
    return tuple(np.linspace(-radius, radius, n) for n in res)


def zero_graph(system, direction, radius, grid_res):
    d_dom, d_cod = (system.d_u, system.d_s) if direction == UNSTABLE else (system.d_s, system.d_u)
    axes = make_grid(d_dom, radius, grid_res)
    values = np.zeros(tuple(len(ax) for ax in axes) + (d_cod,))
    return LipschitzGraph(system.base_point.copy(), direction, float(radius), axes, values,
                          0.0, system.split.rho)


def _dom_norm(system, direction):
    return system.norm.norm_u if direction == UNSTABLE else system.norm.norm_s


def _cod_norm(system, direction):
    return system.norm.norm_s if direction == UNSTABLE else system.norm.norm_u


def graph_lipschitz(system, graph):
    """Largest per-axis node difference quotient, adapted norms."""
    dn, cn = _dom_norm(system, graph.direction), _cod_norm(system, graph.direction)
    best = 0.0
    for axis, ax in enumerate(graph.axes):
        if len(ax) < 2 or graph.d_cod == 0:
            continue
        dv = np.diff(graph.values, axis=axis)
        step = np.zeros(graph.d_dom)
        step[axis] = ax[1] - ax[0]
        q = cn(dv) / dn(step)
        best = max(best, float(np.max(q)))
    return best


def graph_metric(system, graph, other):
    """d(theta, tau) = sup over nonzero nodes of ||theta - tau|| / ||xi||."""
    nodes = graph.nodes
    nn = _dom_norm(system, graph.direction)(nodes)
    diff = _cod_norm(system, graph.direction)(graph.flat_values - other.flat_values)
    mask = nn > 0
    return float(np.max(diff[mask] / nn[mask])) if np.any(mask) else 0.0


def graph_sup_distance(system, graph, other):
    diff = _cod_norm(system, graph.direction)(graph.flat_values - other.flat_values)
    return float(np.max(diff)) if diff.size else 0.0


def solve_preimage(graph, target_xi, system, fp_tol=1e-12, max_iter=200):
    """Solve xi_hat = L_u xi + N_u(xi + theta(xi)) for xi by Picard iteration.

    ``target_xi`` may be a batch (n, d_u).  Iteration starts at
    L_u^{-1} xi_hat and contracts with factor about 2 gamma / a.
    """
    target = np.atleast_2d(np.asarray(target_xi, dtype=float))
    single = np.ndim(target_xi) <= 1
    base = target @ system.Mu_inv.T
    xi = base.copy()
    best = np.inf
    for it in range(max_iter):
        nu, _ = system.N(xi, graph(xi))
        new = base - nu @ system.Mu_inv.T
        res = float(np.max(system.norm.norm_u(new - xi))) if xi.size else 0.0
        xi = new
        if res <= fp_tol:
            return xi[0] if single else xi
        if it > 5 and res > 10 * best:
            raise ContractionFailed(f"preimage residual grew to {res}")
        best = min(best, res)
    raise ContractionFailed(f"preimage iteration exceeded {max_iter} steps (residual {res})")


def _unstable_step(graph, system, fp_tol, max_iter):
    nodes = graph.nodes
    xi = solve_preimage(graph, nodes, system, fp_tol, max_iter)
    th = graph(xi)
    _, ns = system.N(xi, th)
    new = th @ system.Ms.T + ns
    return new.reshape(graph.values.shape)


def _stable_step(graph, system):
    eta = graph.nodes
    sg = graph(eta)
    nu, ns = system.N(sg, eta)
    eta_hat = eta @ system.Ms.T + ns
    new = (graph(eta_hat) - nu) @ system.Mu_inv.T
    return new.reshape(graph.values.shape)


def graph_transform_step(graph, system, fp_tol=1e-12, max_iter=200):
    """One application of theta -> theta* (or sigma -> sigma* for stable graphs)."""
    if graph.direction == UNSTABLE:
        values = _unstable_step(graph, system, fp_tol, max_iter)
    else:
        values = _stable_step(graph, system)
    out = replace(graph, values=values, meta={})
    lip = graph_lipschitz(system, out)
    a, b, g = system.split.a, system.split.b, system.gamma
    lip_in = graph.lip_cert
    bound = (b + 2 * g) / (a - 2 * g) if math.isfinite(a) else b + 2 * g
    meta = {"lip_bound": bound, "lip_bound_ok": bool(lip_in > 1 or lip <= bound + 1e-12)}
    return replace(out, lip_cert=lip, meta=meta)


def contraction_bound(system):
    a, b, g = system.split.a, system.split.b, system.gamma
    return (b + 2 * g) / (a - 2 * g)


def lipschitz_bound(system):
    """Bound gamma / (a - b - 3 gamma) on Lip(theta)."""
    a, b, g = system.split.a, system.split.b, system.gamma
    return g / (a - b - 3 * g)


def compute_invariant_graph(system, direction, radius=1.0, grid_res=201, tol=1e-10,
                            max_sweeps=200, fp_tol=1e-12, slope_slack=0.005):
    """Iterate the graph transform from the zero graph to its fixed point."""
    system.check_gap()
    graph = zero_graph(system, direction, radius, grid_res)
    sup_hist, metric_hist = [], []
    for sweep in range(1, max_sweeps + 1):
        new = graph_transform_step(graph, system, fp_tol)
        sup_hist.append(graph_sup_distance(system, new, graph))
        metric_hist.append(graph_metric(system, new, graph))
        graph = new
        if sup_hist[-1] <= tol:
            break
    else:
        raise NotConverged(f"graph transform did not converge in {max_sweeps} sweeps")
    ratios = [m1 / m0 for m0, m1 in zip(metric_hist, metric_hist[1:]) if m0 > 1e-13]
    sup_ratios = [s1 / s0 for s0, s1 in zip(sup_hist, sup_hist[1:]) if s0 > 1e-13]
    lip = graph_lipschitz(system, graph)
    bound = lipschitz_bound(system)
    origin = graph.values[graph.origin_index]
    anchored = bool(np.max(np.abs(system.shift)) <= 1e-12) if system.shift.size else True
    meta = {
        "sweeps": sweep,
        "sup_history": sup_hist,
        "metric_history": metric_hist,
        "measured_contraction": max(ratios) if ratios else 0.0,
        "measured_sup_contraction": max(sup_ratios) if sup_ratios else 0.0,
        "contraction_bound": contraction_bound(system),
        "lip_bound": bound,
        "lip_bound_ok": bool(lip <= bound + slope_slack),
        "gamma": system.gamma,
        "gamma_mode": system.gamma_mode,
        "a": system.split.a,
        "b": system.split.b,
        "origin_value": float(np.max(np.abs(origin))) if origin.size else 0.0,
        "anchored": anchored,
        "grid_res": [len(ax) for ax in graph.axes],
        "tol": tol,
        "fp_tol": fp_tol,
        "local": system.extension_radius is not None,
    }
    return replace(graph, lip_cert=lip, meta=meta)


def graph_points(system, graph, dom):
    """Ambient-coordinate pair (xi, eta) of the graph points over ``dom``."""
    cod = graph(dom)
    return (dom, cod) if graph.direction == UNSTABLE else (cod, dom)


def invariance_residuals(system, graph, fp_tol=1e-12):
    """Distance from S(graph point) to the graph at each grid node image.

    For unstable graphs the probes are the preimages of the grid nodes, for
    stable graphs the nodes themselves; in both cases the image lands where
    the grid fixed-point equation holds.
    """
    if graph.direction == UNSTABLE:
        xi = solve_preimage(graph, graph.nodes, system, fp_tol)
        yu, ys = system.S(xi, graph(xi))
        return system.norm.norm_s(ys - graph(yu))
    eta = graph.nodes
    yu, ys = system.S(graph(eta), eta)
    return system.norm.norm_u(yu - graph(ys))


def forward_orbit(system, xi, eta, n_steps):
    xs, es = [np.asarray(xi, float)], [np.asarray(eta, float)]
    for _ in range(n_steps):
        u, s = system.S(xs[-1], es[-1])
        xs.append(u)
        es.append(s)
    return np.array(xs), np.array(es)


def decay_test(system, xi, eta, factor, n_steps, floor=1e-13):
    """Return the first step where ||x_{n+1}|| > factor ||x_n||, else None.

    Steps after the orbit drops below ``floor`` are not judged.
    """
    xs, es = forward_orbit(system, xi, eta, n_steps)
    norms = system.norm.norm_coords(xs, es)
    for n in range(n_steps):
        if norms[n] < floor:
            return None
        if norms[n + 1] > factor * norms[n]:
            return n + 1
    return None


def per_step_factors(system, xi, eta, n_steps, floor=1e-13):
    xs, es = forward_orbit(system, xi, eta, n_steps)
    norms = system.norm.norm_coords(xs, es)
    keep = norms[:-1] > floor
    return norms[1:][keep] / norms[:-1][keep]


def backward_orbit_on_graph(system, graph, xi0, n_steps, fp_tol=1e-12):
    xis = [np.asarray(xi0, dtype=float)]
    for _ in range(n_steps):
        xis.append(solve_preimage(graph, xis[-1], system, fp_tol))
    xis = np.array(xis)
    return xis, graph(xis)


def _probe_indices(n_nodes, n_probe):
    idx = np.linspace(0, n_nodes - 1, n_probe + 2).round().astype(int)[1:-1]
    return np.unique(idx)


def verify_graph(system, graph, n_probe=10, n_steps=8, offset=1e-6, fail_window=20,
                 rate_slack=0.01, recompute=True, tol=1e-8):
    """Invariance, rate and rho-robustness report for a converged graph.

    Never raises for failed checks; the returned dict carries flags.
    """
    a, b, g = system.split.a, system.split.b, system.gamma
    res = invariance_residuals(system, graph, graph.meta.get("fp_tol", 1e-12))
    report = {"invariance_residual": float(np.max(res)) if res.size else 0.0}
    report["invariance_ok"] = report["invariance_residual"] <= tol
    nodes = graph.nodes
    origin_norm = _dom_norm(system, graph.direction)(nodes)
    candidates = np.where(origin_norm > 0.25 * graph.radius)[0]
    picks = candidates[_probe_indices(len(candidates), n_probe)]
    probes = nodes[picks]
    rows = []
    if graph.direction == STABLE:
        bound = b + 2 * g + rate_slack
        for k, eta in enumerate(probes):
            xi = graph(eta)
            fac = per_step_factors(system, xi, eta, n_steps)
            rate = float(np.max(fac)) if fac.size else 0.0
            off_xi = xi + offset * np.ones_like(xi) * (1 if k % 2 == 0 else -1)
            fail = decay_test(system, off_xi, eta, bound, fail_window)
            rows.append({"probe_id": k, "rate": rate, "rate_ok": rate <= bound,
                         "off_graph_fail_step": fail, "off_graph_ok": fail is not None})
    else:
        bound = 1.0 / (a - 2 * g) + rate_slack
        for k, xi in enumerate(probes):
            xis, ths = backward_orbit_on_graph(system, graph, xi, n_steps)
            norms = system.norm.norm_coords(xis, ths)
            keep = norms[:-1] > 1e-13
            fac = norms[1:][keep] / norms[:-1][keep]
            rate = float(np.max(fac)) if fac.size else 0.0
            rows.append({"probe_id": k, "rate": rate, "rate_ok": rate <= bound})
    report["rate_bound"] = bound
    report["probes"] = rows
    report["rate_ok"] = all(r["rate_ok"] for r in rows)
    if graph.direction == STABLE:
        report["off_graph_ok"] = all(r["off_graph_ok"] for r in rows)
    if recompute:
        diffs = []
        for factor in (0.98, 1.02):
            alt_sys = system.with_rho(system.split.rho * factor)
            alt = compute_invariant_graph(
                alt_sys, graph.direction, graph.radius, [len(ax) for ax in graph.axes],
                graph.meta.get("tol", 1e-10), fp_tol=graph.meta.get("fp_tol", 1e-12),
            )
            diffs.append(graph_sup_distance(system, alt, graph))
        report["rho_star_diff"] = max(diffs)
        report["rho_star_ok"] = report["rho_star_diff"] <= tol
    return report
