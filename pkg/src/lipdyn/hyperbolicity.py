"""Hyperbolicity certificates, straightening conjugacy and orbit checks."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GapViolated,
    NotAnEquilibrium,
    SmallnessViolated,
    StraighteningContractionFailed,
)
from .graph_transform import (
    STABLE,
    UNSTABLE,
    MapModel,
    SplitSystem,
    compute_invariant_graph,
)
from .sampling import INFLATION, sampled_lipschitz
from .spectral_split import resolvent_from_constants

GAMMA1_RESOLUTION = 1e-6
MIN_PAIRS = 100_000


def jacobian(model, x, h=1e-6):
    """Central-difference Jacobian, one batched evaluation."""
    x = np.asarray(x, dtype=float)
    d = x.size
    steps = h * np.eye(d)
    pts = np.concatenate([x + steps, x - steps])
    vals = model(pts)
    return ((vals[:d] - vals[d:]) / (2 * h)).T


def estimate_lipschitz_constant(n_fn, dim, radius, norm, n_pairs=100_000, analytic=None, seed=0,
                                min_pairs=MIN_PAIRS):
    """Lipschitz constant of ``n_fn`` on the norm-ball of given radius.

    An analytic value is passed through; otherwise the largest sampled
    difference quotient is inflated by 10% and flagged empirical.
    """
    if analytic is not None:
        return {"value": float(analytic), "mode": "analytic"}
    n_pairs = max(int(n_pairs), int(min_pairs))
    raw = sampled_lipschitz(n_fn, dim, radius, n_pairs, seed, norm)
    return {"value": INFLATION * raw, "mode": "empirical", "raw": raw}


def _inv(a):
    return 0.0 if math.isinf(a) else 1.0 / a


def f_const(gamma, a, b):
    """f(gamma) = 2 a gamma / (a - b - 3 gamma): Lip bound after the first conjugation."""
    den = 1.0 - (b + 3 * gamma) * _inv(a)
    return 2 * gamma / den if den > 0 else math.inf


def f_star(gamma, a, b):
    f = f_const(gamma, a, b)
    den = 1.0 - (b + 3 * f) * _inv(a)
    if den <= 0 or math.isinf(f):
        return math.inf
    return f * _inv(a) / den


def f1_const(gamma, a, b):
    f = f_const(gamma, a, b)
    fs = f_star(gamma, a, b)
    return f * (1 + fs) * (3 + fs) + fs * (b + _inv(a))


def straightening_factor(gamma, a, b):
    """2 f*(gamma) (a - b - 2 gamma) / (a - b - 3 gamma), must stay below 1."""
    fs = f_star(gamma, a, b)
    ia = _inv(a)
    den = 1.0 - (b + 3 * gamma) * ia
    if den <= 0:
        return math.inf
    return 2 * fs * (1.0 - (b + 2 * gamma) * ia) / den


def _gap_ok(lip, a, b):
    return b + 2 * lip < 1.0 < a - 2 * lip


def straightening_conditions(gamma, a, b):
    R = resolvent_from_constants(a, b)
    f = f_const(gamma, a, b)
    f1 = f1_const(gamma, a, b)
    return {
        "resolvent*f<1": R * f < 1,
        "b+2f<1<a-2f": _gap_ok(f, a, b),
        "2f*(a-b-2g)/(a-b-3g)<1": straightening_factor(gamma, a, b) < 1,
        "resolvent*f1<1": R * f1 < 1,
        "b+2f1<1<a-2f1": _gap_ok(f1, a, b),
    }


def gamma1_threshold(a, b, resolution=GAMMA1_RESOLUTION):
    """Largest gamma (to ``resolution``) meeting every straightening condition."""
    lo, hi = 0.0, 1.0
    if not math.isinf(a):
        hi = (a - b) / 3.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if all(straightening_conditions(mid, a, b).values()):
            lo = mid
        else:
            hi = mid
    return lo


def isolation_radius(delta, gamma1, a, b):
    """delta_1 = delta / [(1 + f/(a-b-3f)) (1 + gamma1/(a-b-3 gamma1))] at gamma1."""
    f = f_const(gamma1, a, b)
    ia = _inv(a)
    t1 = f * ia / (1.0 - (b + 3 * f) * ia)
    t2 = gamma1 * ia / (1.0 - (b + 3 * gamma1) * ia)
    return delta / ((1 + t1) * (1 + t2))


def epsilon0(gamma, a, b):
    first = 1.0 - (b + 2 * gamma)
    if math.isinf(a):
        return first / 2
    return min(first, (a - 2 * gamma) - 1.0) / 2


def weak_conditions(gamma, a, b):
    R = resolvent_from_constants(a, b)
    return {
        "b+2*gamma<1": b + 2 * gamma < 1,
        "1<a-2*gamma": 1 < a - 2 * gamma,
        "gamma*resolvent<=1": gamma * R <= 1,
    }


def weak_gamma_sufficient(a, b):
    """Closed-form sufficient threshold (a-1)(1-b)/(a(2-b)-1)."""
    if math.isinf(a):
        return (1 - b) / (2 - b)
    return (a - 1) * (1 - b) / (a * (2 - b) - 1)


@dataclass(frozen=True)
class HyperbolicCertificate:
    equilibrium: np.ndarray
    split: object
    gamma: float
    gamma_mode: str
    delta: float
    resolvent: float
    weak_flag: bool
    strong_flag: bool
    gamma1_threshold: float
    isolation_radius: float
    epsilon0: float
    residual: float
    checks: dict = field(default_factory=dict)

    @property
    def a(self):
        return self.split.a

    @property
    def b(self):
        return self.split.b

    @property
    def unstable_dim(self):
        return self.split.d_u

    def recheck(self):
        """Recompute every named inequality from the stored fields."""
        out = dict(weak_conditions(self.gamma, self.a, self.b))
        out["gamma<gamma1"] = self.gamma < self.gamma1_threshold
        out["weak_consistent"] = (not self.weak_flag) or all(
            weak_conditions(self.gamma, self.a, self.b).values())
        out["strong_consistent"] = (not self.strong_flag) or (
            self.weak_flag and self.gamma < self.gamma1_threshold)
        out["isolation_positive"] = (not self.strong_flag) or self.isolation_radius > 0
        return out

    def to_dict(self):
        return {
            "equilibrium": self.equilibrium.tolist(),
            "split": self.split.to_dict(),
            "gamma": self.gamma,
            "gamma_mode": self.gamma_mode,
            "verification": "analytic" if self.gamma_mode == "analytic" else "unverified-analytic",
            "delta": self.delta,
            "resolvent": self.resolvent,
            "weak_flag": self.weak_flag,
            "strong_flag": self.strong_flag,
            "gamma1_threshold": self.gamma1_threshold,
            "isolation_radius": self.isolation_radius,
            "epsilon0": self.epsilon0,
            "residual": self.residual,
            "checks": {k: bool(v) for k, v in self.checks.items()},
        }


def local_system(model, x_star, split, cert=None, gamma=None, extension_radius=None):
    """SplitSystem for ``model`` at ``x_star`` reusing a certificate's gamma."""
    if cert is not None and gamma is None:
        return SplitSystem(model, x_star, split, gamma=cert.gamma, gamma_mode=cert.gamma_mode,
                           extension_radius=extension_radius)
    return SplitSystem(model, x_star, split, gamma=gamma, extension_radius=extension_radius)


def certify_hyperbolic(model, x_star, split, delta, gamma=None, n_pairs=100_000, seed=0,
                       eq_tol=1e-9, strict=True, min_pairs=MIN_PAIRS):
    """Certificate of weak and strong hyperbolicity on the delta-ball.

    With ``strict`` a failed weak inequality raises SmallnessViolated;
    otherwise the certificate is returned with weak_flag False.
    """
    x_star = np.asarray(x_star, dtype=float)
    residual = float(np.max(np.abs(model(x_star) - x_star)))
    if residual > eq_tol:
        raise NotAnEquilibrium(f"||T(x*) - x*|| = {residual} exceeds {eq_tol}")
    a, b = split.a, split.b
    if not (b < 1.0 < a):
        raise GapViolated(f"need b < 1 < a, got a={a}, b={b}")
    probe = SplitSystem(model, x_star, split, gamma=0.0)
    if gamma is not None:
        est = {"value": float(gamma), "mode": "analytic"}
    else:
        est = estimate_lipschitz_constant(probe._flat_nonlinear, split.dim, delta, probe.flat_norm,
                                          n_pairs, model.lip_data, seed, min_pairs)
    g = est["value"]
    R = resolvent_from_constants(a, b)
    weak = weak_conditions(g, a, b)
    if strict and not all(weak.values()):
        bad = [k for k, v in weak.items() if not v][0]
        raise SmallnessViolated(f"weak hyperbolicity fails: {bad} with gamma={g}",
                                inequality=bad, required=weak_gamma_sufficient(a, b), actual=g)
    weak_flag = all(weak.values())
    g1 = gamma1_threshold(a, b)
    strong = weak_flag and g < g1
    iso = isolation_radius(delta, g1, a, b)
    checks = dict(weak)
    checks["gamma<gamma1"] = g < g1
    return HyperbolicCertificate(x_star, split, g, est["mode"], float(delta), R, weak_flag,
                                 strong, g1, iso, epsilon0(g, a, b), residual, checks)


def coordinate_model(system, fn):
    """Ambient MapModel whose centered coordinate action is ``fn(xi, eta)``."""
    split = system.split
    x_star = system.base_point

    def T(x):
        xi, eta = split.to_coords(np.asarray(x, dtype=float) - x_star)
        u, s = fn(xi, eta)
        return x_star + split.from_coords(u, s)

    return MapModel(T, split.dim, name="conjugated")


class Straightening:
    """Bi-Lipschitz change of variables g = h o k flattening both manifolds.

    h(xi, eta) = (xi + sigma(eta), eta) and k(xi, eta) = (xi, theta_t(xi) + eta)
    where sigma is the stable graph of S and theta_t the unstable graph of
    h^{-1} S h.  All maps act on centered coordinates.
    """

    def __init__(self, system, sigma, theta_t, conjugated, meta):
        self.system = system
        self.sigma = sigma
        self.theta_t = theta_t
        self.conjugated = conjugated
        self.meta = meta

    def h(self, xi, eta):
        return xi + self.sigma(eta), eta

    def h_inv(self, xi, eta):
        return xi - self.sigma(eta), eta

    def k(self, xi, eta):
        return xi, eta + self.theta_t(xi)

    def k_inv(self, xi, eta):
        return xi, eta - self.theta_t(xi)

    def g(self, xi, eta):
        return self.h(*self.k(xi, eta))

    def g_inv(self, xi, eta):
        return self.k_inv(*self.h_inv(xi, eta))

    def g_ambient(self, x):
        sp = self.system.split
        xi, eta = sp.to_coords(np.asarray(x, float) - self.system.base_point)
        return self.system.base_point + sp.from_coords(*self.g(xi, eta))

    def g_inv_ambient(self, x):
        sp = self.system.split
        xi, eta = sp.to_coords(np.asarray(x, float) - self.system.base_point)
        return self.system.base_point + sp.from_coords(*self.g_inv(xi, eta))

    def conjugate(self, model):
        """g^{-1} o T o g for any map sharing the base point and split."""
        sys = self.system
        other = SplitSystem(model, sys.base_point, sys.split, gamma=0.0)

        def fn(xi, eta):
            return self.g_inv(*other.S(*self.g(xi, eta)))

        return coordinate_model(sys, fn)

    def conjugacy_residual(self, n_samples=1000, radius=None, seed=0):
        """max ||g(S1(x)) - S(g(x))|| over sampled x."""
        sys = self.system
        radius = 0.5 * self.theta_t.radius if radius is None else radius
        rng = np.random.default_rng(seed)
        xi = rng.uniform(-radius, radius, size=(n_samples, sys.d_u))
        eta = rng.uniform(-radius, radius, size=(n_samples, sys.d_s))
        lhs = self.g(*self.conjugated.S(xi, eta))
        rhs = sys.S(*self.g(xi, eta))
        return float(np.max(sys.norm.norm_coords(lhs[0] - rhs[0], lhs[1] - rhs[1])))


def straighten_coordinates(system, cert, unstable_graph, stable_graph, tol=1e-10, check=True):
    """Conjugate S so that its invariant graphs become X_u and X_s."""
    a, b, g = system.split.a, system.split.b, system.gamma
    factor = straightening_factor(g, a, b)
    if not factor < 1:
        raise StraighteningContractionFailed(
            f"2f*(a-b-2g)/(a-b-3g) = {factor} is not below 1")
    if cert is not None and not cert.strong_flag:
        raise StraighteningContractionFailed("certificate is not strong")
    sigma = stable_graph
    grid_u = [len(ax) for ax in unstable_graph.axes]

    def h_inv_S_h(xi, eta):
        u, s = system.S(xi + sigma(eta), eta)
        return u - sigma(s), s

    f = f_const(g, a, b)
    tilde = SplitSystem(coordinate_model(system, h_inv_S_h), system.base_point, system.split,
                        gamma=f, gamma_mode=system.gamma_mode)
    theta_t = compute_invariant_graph(tilde, UNSTABLE, unstable_graph.radius, grid_u, tol)
    f1 = f1_const(g, a, b)
    st = Straightening(system, sigma, theta_t, None, {"f": f, "f1": f1, "factor": factor})

    def S1(xi, eta):
        return st.g_inv(*system.S(*st.g(xi, eta)))

    st.conjugated = SplitSystem(coordinate_model(system, S1), system.base_point, system.split,
                                gamma=f1, gamma_mode=system.gamma_mode)
    conjugated = st.conjugated
    xi = unstable_graph.nodes
    th = unstable_graph(xi)
    st.meta["unstable_consistency"] = float(np.max(
        system.norm.norm_s(theta_t(xi - sigma(th)) - th))) if xi.size else 0.0
    if check:
        flat_u = compute_invariant_graph(conjugated, UNSTABLE, unstable_graph.radius, grid_u, tol)
        flat_s = compute_invariant_graph(conjugated, STABLE, stable_graph.radius,
                                         [len(ax) for ax in stable_graph.axes], tol)
        st.meta["flat_unstable_sup"] = float(np.max(np.abs(flat_u.values))) if flat_u.values.size else 0.0
        st.meta["flat_stable_sup"] = float(np.max(np.abs(flat_s.values))) if flat_s.values.size else 0.0
        st.meta["flat_ok"] = max(st.meta["flat_unstable_sup"], st.meta["flat_stable_sup"]) <= 10 * tol
    return st


def orbit_dichotomy_check(system, cert, n_samples=200, horizon=200, tol=1e-10, seed=0, radius=None):
    """Forward orbits from the isolation ball exit it or converge to x*.

    Returns counts and the list of violating samples (orbits that stay in
    the ball without reaching tol).
    """
    radius = cert.isolation_radius if radius is None else radius
    rng = np.random.default_rng(seed)
    sys = system
    xi = rng.uniform(-1, 1, size=(n_samples, sys.d_u))
    eta = rng.uniform(-1, 1, size=(n_samples, sys.d_s))
    nrm = sys.norm.norm_coords(xi, eta)
    scale = radius * rng.uniform(0.05, 1.0, size=n_samples) / np.maximum(nrm, 1e-300)
    xi, eta = xi * scale[:, None], eta * scale[:, None]
    status = np.full(n_samples, "open", dtype=object)
    prev = sys.norm.norm_coords(xi, eta)
    monotone = np.ones(n_samples, dtype=bool)
    exit_step = np.full(n_samples, -1)
    for n in range(1, horizon + 1):
        open_ = status == "open"
        if not np.any(open_):
            break
        u, s = sys.S(xi[open_], eta[open_])
        xi[open_], eta[open_] = u, s
        cur = sys.norm.norm_coords(xi, eta)
        idx = np.where(open_)[0]
        for i in idx:
            if cur[i] > radius:
                status[i] = "exit"
                exit_step[i] = n
            elif cur[i] <= tol:
                status[i] = "converged"
            elif cur[i] > prev[i]:
                monotone[i] = False
        prev = cur
    converged = status == "converged"
    violations = [int(i) for i in np.where(status == "open")[0]]
    return {
        "n_samples": n_samples,
        "exited": int(np.sum(status == "exit")),
        "converged": int(np.sum(converged)),
        "converged_monotone": bool(np.all(monotone[converged])),
        "violations": violations,
        "ok": not violations,
        "radius": radius,
    }


def orbit_rates(system, xi, eta, n_steps, radius):
    """Per-step norm ratios until the orbit leaves the ball or n_steps."""
    xi, eta = np.asarray(xi, float), np.asarray(eta, float)
    ratios = []
    cur = float(system.norm.norm_coords(xi, eta))
    for _ in range(n_steps):
        if cur == 0.0:
            return ratios, "fixed"
        xi, eta = system.S(xi, eta)
        nxt = float(system.norm.norm_coords(xi, eta))
        ratios.append(nxt / cur)
        cur = nxt
        if cur > radius:
            return ratios, "exit"
    return ratios, "inside"


def isolation_check(system, cert, n_samples=1000, window=20, sweeps=50, seed=0, radius=None):
    """Search for a second bounded solution in the isolation ball.

    Random sequences in the ball are refined by Lyapunov-Perron sweeps
    (backward for X_u, forward for X_s); every refined sequence must
    collapse onto the zero solution.
    """
    radius = cert.isolation_radius if radius is None else radius
    rng = np.random.default_rng(seed)
    sys = system
    du, ds = sys.d_u, sys.d_s
    xi = rng.uniform(-radius, radius, size=(n_samples, window, du))
    eta = rng.uniform(-radius, radius, size=(n_samples, window, ds))
    nrm = sys.norm.norm_coords(xi, eta)
    sc = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)[..., None]
    xi, eta = xi * sc, eta * sc
    for _ in range(sweeps):
        nu, ns = sys.N(xi, eta)
        new_xi = np.zeros_like(xi)
        new_eta = np.zeros_like(eta)
        if du:
            nxt = np.concatenate([xi[:, 1:], np.zeros((n_samples, 1, du))], axis=1)
            new_xi = (nxt - nu) @ sys.Mu_inv.T
        if ds:
            prv = eta[:, :-1] @ sys.Ms.T + ns[:, :-1]
            new_eta = np.concatenate([np.zeros((n_samples, 1, ds)), prv], axis=1)
        xi, eta = new_xi, new_eta
    final = sys.norm.norm_coords(xi, eta)
    worst = float(np.max(final))
    return {"n_samples": n_samples, "max_final_norm": worst, "radius": radius}
