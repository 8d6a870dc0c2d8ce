"""Intersections of Lipschitz graphs over complementary coordinate blocks.

A graph theta: X1 -> X2 and a graph sigma: X2 -> X1 meet at (y, theta(y))
exactly when y is a fixed point of y -> sigma(theta(y)).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import (
    DecompositionMismatch,
    HypothesisFailed,
    NoFixedPointInBall,
    NoRoomToRecenter,
    NotOnBothGraphs,
)
from .graph_ops import function_graph

ABSENT = None


def _sup(v):
    v = np.asarray(v, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def _lip_of(obj, given):
    if given is not None:
        return float(given)
    return float(getattr(obj, "lip_cert"))


def _radius_of(obj, default):
    return float(getattr(obj, "radius", default))


def check_closeness(theta_t, sigma_t, theta_ref, sigma_ref, c, r, n_grid=401, dims=None):
    """Verify ||theta - theta_t|| and ||sigma - sigma_t|| <= (1 - c) r / 2 on the ball r.

    Returns the two measured deviations; raises HypothesisFailed naming
    the failing graph.
    """
    limit = (1 - c) * r / 2
    out = {}
    for idx, (name, t, ref) in enumerate((("theta", theta_t, theta_ref), ("sigma", sigma_t, sigma_ref))):
        k = _dom_dim(t, ref) if dims is None else dims[idx]
        pts = _box_nodes(k, r, n_grid)
        dev = float(np.max(np.abs(t(pts) - ref(pts))))
        out[name] = dev
        if dev > limit:
            raise HypothesisFailed(f"{name} deviates by {dev} > (1-c)r/2 = {limit}")
    return out


def _dom_dim(*objs):
    for o in objs:
        if hasattr(o, "d_dom"):
            return o.d_dom
    raise ValueError("cannot infer domain dimension; pass LipschitzGraph objects or dims")


def _box_nodes(k, r, n):
    per = max(3, int(round(n ** (1.0 / k))) | 1)
    axes = [np.linspace(-r, r, per)] * k
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, k)


def intersect_graphs(theta_t, sigma_t, offset=None, lip_bounds=None, r=None, dims=None,
                     reference=None, fp_tol=1e-13, max_iter=1000, seed_point=None,
                     grid_res=None):
    """Intersection point (y1, theta_t(y1)) + offset of the two graphs.

    ``reference`` = (theta, sigma, c) triggers the closeness hypothesis check.
    Returns a dict with the point, y1, path used and residual, or ABSENT
    when neither the contraction path nor the grid path applies.
    """
    if dims is None:
        dims = (_dom_dim(theta_t), _dom_dim(sigma_t))
    k1, k2 = dims
    r = min(_radius_of(theta_t, np.inf), _radius_of(sigma_t, np.inf)) if r is None else r
    if reference is not None:
        theta_ref, sigma_ref, c = reference
        closeness = check_closeness(theta_t, sigma_t, theta_ref, sigma_ref, c, r, dims=(k1, k2))
    else:
        closeness = {}
    lt = _lip_of(theta_t, None if lip_bounds is None else lip_bounds[0])
    ls = _lip_of(sigma_t, None if lip_bounds is None else lip_bounds[1])

    def g(y):
        return sigma_t(theta_t(y))

    z = np.zeros(k1 + k2) if offset is None else np.asarray(offset, dtype=float)
    if lt * ls < 1:
        y = np.zeros(k1) if seed_point is None else np.asarray(seed_point, dtype=float)
        for it in range(1, max_iter + 1):
            new = g(y)
            step = _sup(new - y)
            y = new
            if step <= fp_tol:
                break
        else:
            raise NoFixedPointInBall(f"Picard did not settle in {max_iter} steps")
        path = "contraction"
        iterations = it
    elif k1 <= 3:
        n = grid_res or {1: 4001, 2: 201, 3: 41}[k1]
        half = r / 2
        axes = [np.linspace(-half, half, n)] * k1
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack(mesh, axis=-1).reshape(-1, k1)
        res = np.max(np.abs(g(nodes) - nodes), axis=-1)
        best = int(np.argmin(res))
        spacing = axes[0][1] - axes[0][0]
        bound = (lt * ls + 1.0) * spacing
        if res[best] > bound:
            raise NoFixedPointInBall(f"grid minimum residual {res[best]} exceeds {bound}")
        y = nodes[best]
        sol = scipy.optimize.root(lambda v: g(v) - v, y, method="hybr", tol=1e-15)
        if sol.success and _sup(g(sol.x) - sol.x) <= 1e-11 and _sup(sol.x - y) <= spacing:
            y = sol.x
        path = "grid"
        iterations = int(getattr(sol, "nfev", 0))
    else:
        return ABSENT
    residual = _sup(g(y) - y)
    point = np.concatenate([y, theta_t(y)]) + z
    return {"point": point, "y1": y, "path": path, "residual": residual,
            "iterations": iterations, "lip_product": lt * ls, "closeness": closeness}


def uniqueness_check(theta_t, sigma_t, y1, r, n_seeds=10, seed=0, fp_tol=1e-13, dims=None,
                     lip_bounds=None):
    """Restart the contraction path from random seeds in the ball r/2."""
    if dims is None:
        dims = (_dom_dim(theta_t), _dom_dim(sigma_t))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_seeds):
        s = rng.uniform(-r / 2, r / 2, size=dims[0])
        out = intersect_graphs(theta_t, sigma_t, r=r, dims=dims, fp_tol=fp_tol, seed_point=s,
                               lip_bounds=lip_bounds)
        worst = max(worst, _sup(out["y1"] - y1))
    return worst


@dataclass(frozen=True)
class TransversalWitness:
    point: np.ndarray
    dims: tuple
    radius0: float
    chart_theta: object
    chart_sigma: object
    lip_theta: float
    lip_sigma: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "point": self.point.tolist(),
            "dims": list(self.dims),
            "radius0": self.radius0,
            "lip_theta": self.lip_theta,
            "lip_sigma": self.lip_sigma,
            "chart_theta_at_0": np.asarray(self.chart_theta(np.zeros(self.dims[0]))).tolist(),
            "chart_sigma_at_0": np.asarray(self.chart_sigma(np.zeros(self.dims[1]))).tolist(),
        }


def recenter_at_intersection(theta_t, sigma_t, y0, dims=None, lip_bounds=None, tol=1e-9,
                             grid_res=201, radii=None):
    """Charts theta*(y) = theta_t(y + y1) - theta_t(y1), sigma*(x) = sigma_t(x + y2) - sigma_t(y2)."""
    if dims is None:
        dims = (_dom_dim(theta_t), _dom_dim(sigma_t))
    k1, k2 = dims
    y0 = np.asarray(y0, dtype=float)
    y1, y2 = y0[:k1], y0[k1:]
    off_t = _sup(theta_t(y1) - y2)
    off_s = _sup(sigma_t(y2) - y1)
    if max(off_t, off_s) > tol:
        raise NotOnBothGraphs(f"point misses the graphs by {off_t} and {off_s}")
    lt = _lip_of(theta_t, None if lip_bounds is None else lip_bounds[0])
    ls = _lip_of(sigma_t, None if lip_bounds is None else lip_bounds[1])
    if not (lt < 1 and ls < 1):
        raise NotOnBothGraphs(f"charts need Lip < 1, got {lt} and {ls}")
    rt, rs = (radii if radii is not None else
              (_radius_of(theta_t, np.inf), _radius_of(sigma_t, np.inf)))
    r0 = min(rt - _sup(y1), rs - _sup(y2))
    if not r0 > 0:
        raise NoRoomToRecenter(f"recentered ball radius {r0} is empty")
    t1, s2 = theta_t(y1), sigma_t(y2)

    def theta_star(y):
        return theta_t(np.asarray(y, dtype=float) + y1) - t1

    def sigma_star(x):
        return sigma_t(np.asarray(x, dtype=float) + y2) - s2

    if np.isfinite(r0) and k1 <= 3 and k2 <= 3:
        chart_t = function_graph(theta_star, "unstable", r0, [grid_res] * k1, k2, lip=lt)
        chart_s = function_graph(sigma_star, "stable", r0, [grid_res] * k2, k1, lip=ls)
    else:
        chart_t, chart_s = theta_star, sigma_star
    return TransversalWitness(y0.copy(), (k1, k2), float(r0), chart_t, chart_s, lt, ls,
                              {"offsets": (off_t, off_s)})


def certify_transversal(chart_m, chart_n, x0=None, dims=None, lips=None, tol=1e-9, radius=None):
    """Check theta(0) = sigma(0) = 0 and Lip < 1 for charts over complementary blocks."""
    if dims is None:
        dm = (chart_m.d_dom, chart_m.d_cod)
        dn = (chart_n.d_dom, chart_n.d_cod)
        if dm[0] != dn[1] or dm[1] != dn[0]:
            raise DecompositionMismatch(f"chart blocks {dm} and {dn} are not complementary")
        if getattr(chart_m, "direction", None) == getattr(chart_n, "direction", 0):
            raise DecompositionMismatch("charts must be graphs over different blocks")
        k1, k2 = dm
    else:
        k1, k2 = dims
    lm = _lip_of(chart_m, None if lips is None else lips[0])
    ln = _lip_of(chart_n, None if lips is None else lips[1])
    at0_m = _sup(chart_m(np.zeros(k1)))
    at0_n = _sup(chart_n(np.zeros(k2)))
    conditions = {
        "theta(0)=0": at0_m <= tol,
        "sigma(0)=0": at0_n <= tol,
        "Lip(theta)<1": lm < 1,
        "Lip(sigma)<1": ln < 1,
    }
    r = radius if radius is not None else min(_radius_of(chart_m, np.inf), _radius_of(chart_n, np.inf))
    return {"transversal": all(conditions.values()), "conditions": conditions, "r": r,
            "x0": None if x0 is None else np.asarray(x0, float).tolist(),
            "lip_theta": lm, "lip_sigma": ln}
