"""Sine-Galerkin model of u_t - u_xx = lambda (u - u^3) + eta sin(u_x) on (0, pi).

State: coefficients c_k of u = sum_k c_k sin(k x), k = 1..m, Dirichlet data.
Nonlinear terms are evaluated on the interior collocation grid
x_j = j pi / (M + 1), j = 1..M, M >= 2m, where the discrete sine transform
projects the cubic term without aliasing.  Time stepping is first-order
exponential time differencing with exact factors exp(-k^2 dt).
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.integrate

from .errors import CountMismatch, ResonantLambda, SeedExhausted
from .graph_transform import MapModel
from .hyperbolicity import jacobian

PROFILE_POINTS = 128


@dataclass(frozen=True)
class GalerkinModel:
    modes: int = 16
    lam: float = 2.0
    eta: float = 0.0
    dt: float = 0.01
    steps_per_unit: int = 100
    dealias_points: int = None
    r_cut: float = None

    def __post_init__(self):
        if self.dealias_points is None:
            object.__setattr__(self, "dealias_points", 2 * self.modes)
        if self.dealias_points < 2 * self.modes:
            raise ValueError("dealias_points must be at least 2 * modes")
        if abs(self.steps_per_unit * self.dt - 1.0) > 1e-12:
            raise ValueError("steps_per_unit * dt must equal 1")
        if self.modes < 1 or self.lam < 0 or not 0 <= self.eta <= 1:
            raise ValueError("invalid Galerkin parameters")

    @property
    def k(self):
        return np.arange(1, self.modes + 1, dtype=float)

    @property
    def eigenvalues(self):
        return self.k ** 2

    @property
    def grid(self):
        M = self.dealias_points
        return np.arange(1, M + 1) * math.pi / (M + 1)

    def sine_matrix(self):
        """Values at grid points: u_j = sum_k c_k sin(k x_j)."""
        return np.sin(np.outer(self.grid, self.k))

    def cosine_matrix(self):
        """Derivative values: u_x(x_j) = sum_k k c_k cos(k x_j)."""
        return np.cos(np.outer(self.grid, self.k)) * self.k

    def projection_matrix(self):
        """Discrete sine transform rows: c_k = 2/(M+1) sum_j f_j sin(k x_j)."""
        return 2.0 / (self.dealias_points + 1) * self.sine_matrix().T


def h1_norm(c, model):
    """||u_x||_{L^2} = sqrt(pi/2 sum k^2 c_k^2)."""
    c = np.asarray(c, dtype=float)
    return np.sqrt(0.5 * math.pi * np.sum((model.k * c) ** 2, axis=-1))


def l2_norm(c):
    c = np.asarray(c, dtype=float)
    return np.sqrt(0.5 * math.pi * np.sum(c ** 2, axis=-1))


def cutoff(s, r_cut):
    """Quintic smoothstep: 1 for s <= r_cut, 0 for s >= r_cut + 1."""
    t = np.clip(np.asarray(s, dtype=float) - r_cut, 0.0, 1.0)
    return 1.0 - t ** 3 * (10 - 15 * t + 6 * t ** 2)


class _Operators:
    def __init__(self, model):
        self.S = model.sine_matrix()
        self.C = model.cosine_matrix()
        self.P = model.projection_matrix()
        self.k2 = model.eigenvalues
        self.decay = np.exp(-self.k2 * model.dt)
        self.phi = (1.0 - self.decay) / self.k2


def reaction(c, model, ops=None, with_cutoff=True):
    """Projected lambda (u - u^3) g(||u||_1)."""
    ops = _Operators(model) if ops is None else ops
    u = c @ ops.S.T
    out = (model.lam * (u - u * u * u)) @ ops.P.T
    if with_cutoff and model.r_cut is not None:
        out = out * cutoff(h1_norm(c, model), model.r_cut)[..., None]
    return out


def forcing(c, model, ops=None):
    """Projected eta sin(u_x)."""
    ops = _Operators(model) if ops is None else ops
    ux = c @ ops.C.T
    return (model.eta * np.sin(ux)) @ ops.P.T


def build_time_one_map(model):
    """MapModel for the time-1 map of the (cut-off) Galerkin system."""
    if model.r_cut is None:
        model = with_default_cutoff(model)
    ops = _Operators(model)

    def T(c):
        c = np.asarray(c, dtype=float)
        for _ in range(model.steps_per_unit):
            u = c @ ops.S.T
            nl = model.lam * (u - u * u * u)
            if model.r_cut is not None:
                nl = nl * cutoff(h1_norm(c, model), model.r_cut)[..., None]
            if model.eta:
                nl = nl + model.eta * np.sin(c @ ops.C.T)
            c = ops.decay * c + ops.phi * (nl @ ops.P.T)
        return c

    box = model.r_cut * math.sqrt(2 / math.pi) / (model.k * math.sqrt(model.modes))
    return MapModel(T, model.modes, domain_lo=-box, domain_hi=box,
                    name=f"chafee(lam={model.lam},eta={model.eta},m={model.modes})")


def stationary_residual(c, model, ops=None):
    ops = _Operators(model) if ops is None else ops
    return -ops.k2 * c + reaction(c, model, ops, with_cutoff=False) + forcing(c, model, ops)


def _stationary_jacobian(c, model, ops):
    u = ops.S @ c
    d = model.lam * (1 - 3 * u ** 2)
    J = -np.diag(ops.k2) + ops.P @ (d[:, None] * ops.S)
    if model.eta:
        ux = ops.C @ c
        J = J + ops.P @ ((model.eta * np.cos(ux))[:, None] * ops.C)
    return J


def newton_stationary(c0, model, tol=1e-12, max_iter=100):
    ops = _Operators(model)
    c = np.asarray(c0, dtype=float).copy()
    for _ in range(max_iter):
        F = stationary_residual(c, model, ops)
        if np.max(np.abs(F)) <= tol:
            return c, True
        J = _stationary_jacobian(c, model, ops)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return c, False
        t = 1.0
        f0 = np.max(np.abs(F))
        while t > 1e-4:
            trial = c + t * step
            if np.max(np.abs(stationary_residual(trial, model, ops))) < f0 or t < 2e-4:
                break
            t *= 0.5
        c = c + t * step
        if not np.all(np.isfinite(c)) or np.max(np.abs(c)) > 1e3:
            return c, False
    F = stationary_residual(c, model, ops)
    return c, bool(np.max(np.abs(F)) <= tol)


def expected_count(lam):
    """2n + 1 with n^2 < lambda <= (n+1)^2."""
    n = max(0, math.ceil(math.sqrt(lam)) - 1)
    return 2 * n + 1


def check_resonance(lam, tol=1e-9):
    k = round(math.sqrt(lam))
    if k >= 1 and abs(lam - k * k) <= tol:
        raise ResonantLambda(f"lambda = {lam} is the resonance {k}^2")


def _seeds(model):
    n_max = min(model.modes, max(1, math.ceil(math.sqrt(model.lam))))
    amps = (0.3, 0.6, 0.9, 1.2)
    seeds = [np.zeros(model.modes)]
    for k in range(1, n_max + 1):
        for a in amps:
            for sgn in (1, -1):
                c = np.zeros(model.modes)
                c[k - 1] = sgn * a * 4 / math.pi
                seeds.append(c)
    return seeds


def stationary_roots(model, tol=1e-12):
    """Distinct Newton roots of the stationary Galerkin system from sine seeds."""
    base = replace(model, eta=0.0, r_cut=None)
    roots = []
    for s in _seeds(base):
        c, ok = newton_stationary(s, base, tol)
        if not ok:
            continue
        if all(np.max(np.abs(c - r)) > 1e-6 for r in roots):
            roots.append(c)
    roots.sort(key=lambda c: (h1_norm(c, base), _first_sign(c, base)))
    return roots


def _first_sign(c, model):
    x = np.linspace(0, math.pi, PROFILE_POINTS)[1:-1]
    u = profile(c, x)
    return float(u[np.argmax(np.abs(u))]) if u.size else 0.0


def profile(c, x):
    c = np.asarray(c, dtype=float)
    k = np.arange(1, c.shape[-1] + 1)
    return np.sin(np.outer(x, k)) @ c


def with_default_cutoff(model, factor=2.0):
    """Cutoff radius twice the largest equilibrium H^1 norm at eta = 0."""
    roots = stationary_roots(replace(model, eta=0.0, r_cut=None))
    radius = max(float(h1_norm(r, model)) for r in roots) if roots else 1.0
    return replace(model, r_cut=factor * max(radius, 0.5))


def stability_label(model, c, rho=1.0):
    """Unstable dimension of the eta = 0 time-1 map at c, and the label."""
    T = build_time_one_map(replace(model, eta=0.0))
    J = jacobian(T, c)
    mods = np.abs(np.linalg.eigvals(J))
    du = int(np.sum(mods > rho))
    return du, ("stable" if du == 0 else "unstable")


def find_equilibria(model, continue_eta=True, seed=0):
    """Equilibria with stability labels, sorted by H^1 norm then sign.

    For eta > 0 the eta = 0 roots are continued through the contraction of
    the perturbation module.
    """
    check_resonance(model.lam)
    expected = expected_count(model.lam)
    roots = stationary_roots(model)
    if len(roots) < expected:
        raise SeedExhausted(f"found {len(roots)} equilibria, expected {expected}",
                            found=len(roots), expected=expected)
    out = []
    for c in roots:
        du, label = stability_label(model, c)
        out.append({"coeffs": c, "unstable_dim": du, "label": label})
    if model.eta and continue_eta:
        out = _continue_roots(model, out, seed)
    return out


def _continue_roots(model, roots, seed):
    from .graph_transform import SplitSystem
    from .perturbation import continue_equilibrium
    from .spectral_split import split_spectrum

    base_model = model if model.r_cut is not None else with_default_cutoff(model)
    T0 = build_time_one_map(replace(base_model, eta=0.0))
    T1 = build_time_one_map(base_model)
    out = []
    for r in roots:
        c = r["coeffs"]
        split = split_spectrum(jacobian(T0, c), 1.0)
        sys = SplitSystem(T0, c, split, gamma=local_gamma(T0, c, split, seed=seed))
        res = continue_equilibrium(sys, T1, radius=chafee_radius(), n_pairs=chafee_pairs(), seed=seed)
        out.append(dict(r, coeffs=res.x_star, continuation=res))
    return out


def chafee_radius():
    return 0.05


def chafee_pairs():
    return 100_000


def local_gamma(T, c, split, radius=None, n_pairs=None, seed=0):
    """Empirical Lip of the nonlinear part of T at c on the adapted ball."""
    from .graph_transform import SplitSystem
    from .sampling import INFLATION, sampled_lipschitz

    radius = chafee_radius() if radius is None else radius
    n_pairs = chafee_pairs() if n_pairs is None else n_pairs
    probe = SplitSystem(T, c, split, gamma=0.0)
    return INFLATION * sampled_lipschitz(probe._flat_nonlinear, split.dim, radius, n_pairs, seed,
                                         probe.flat_norm)


def verify_equilibrium_count(lambda_list, m=16):
    rows = []
    for lam in lambda_list:
        model = GalerkinModel(modes=m, lam=lam)
        expected = expected_count(lam)
        try:
            found = len(find_equilibria(model))
        except SeedExhausted as exc:
            raise CountMismatch(f"lambda={lam}: found {exc.found}, expected {expected}",
                                at=lam, found=exc.found, expected=expected) from exc
        if found != expected:
            raise CountMismatch(f"lambda={lam}: found {found}, expected {expected}",
                                at=lam, found=found, expected=expected)
        rows.append({"lambda": lam, "expected": expected, "found": found, "pass": True})
    return rows


def energy(c, model, n_quad=2048):
    """Lyapunov functional int (u_x^2/2 - lambda (u^2/2 - u^4/4)) dx by quadrature."""
    x = np.linspace(0, math.pi, n_quad + 1)
    c = np.asarray(c, dtype=float)
    k = model.k
    u = np.sin(np.outer(x, k)) @ c
    ux = (np.cos(np.outer(x, k)) * k) @ c
    dens = 0.5 * ux ** 2 - model.lam * (0.5 * u ** 2 - 0.25 * u ** 4)
    return float(scipy.integrate.trapezoid(dens, x))


def nemytskii_remainder_diagnostic(f_spec, u0, s0, p=2.0, radii=None, x0=None,
                                   domain=(0.0, math.pi)):
    """Remainder ratios ||f(u0 + u_r) - f(u0) - f'(u0) u_r||_p / ||u_r||_p.

    u_r = s0 on the ball B_r(x0) and 0 elsewhere; ``f_spec`` is
    {"kind": "affine", "a": .., "b": ..} or {"kind": "sine"}.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    f, df = _nemytskii_function(f_spec)
    lo, hi = domain
    x0 = 0.5 * (lo + hi) if x0 is None else x0
    radii = [2.0 ** -k for k in range(1, 11)] if radii is None else list(radii)

    def u_r(x, r):
        return np.where(np.abs(x - x0) < r, s0, 0.0)

    ratios = []
    for r in radii:
        if x0 - r < lo or x0 + r > hi:
            raise ValueError(f"radius {r} leaves the domain")
        pts = [x0 - r, x0 + r]

        def rem(x):
            v = u_r(x, r)
            return abs(f(u0 + v) - f(u0) - df(u0) * v) ** p

        def base(x):
            return abs(u_r(x, r)) ** p

        num, _ = scipy.integrate.quad(rem, lo, hi, points=pts, limit=200, epsabs=0.0, epsrel=1e-13)
        den, _ = scipy.integrate.quad(base, lo, hi, points=pts, limit=200, epsabs=0.0, epsrel=1e-13)
        ratios.append((num / den) ** (1.0 / p) if den > 0 else math.nan)
    limit = _extrapolate(ratios)
    return {"radii": radii, "ratios": ratios, "limit": limit}


def _extrapolate(seq):
    """Richardson step on the last two values when they differ, else the last value."""
    if len(seq) < 3:
        return seq[-1]
    a, b, c = seq[-3:]
    den = (c - b) - (b - a)
    if abs(den) < 1e-15:
        return c
    return c - (c - b) ** 2 / den


def _nemytskii_function(conf):
    kind = conf.get("kind")
    if kind == "affine":
        a, b = float(conf.get("a", 2.0)), float(conf.get("b", 1.0))
        return (lambda s: a * s + b), (lambda s: a)
    if kind == "sine":
        return np.sin, np.cos
    raise ValueError(f"unknown nonlinearity {kind!r}")


def forcing_bounds_check(model, n_pairs=10_000, seed=0, scale=1.0):
    """Sampled forcing bounds: ||F(u)||^2 <= eta^2 pi and ||F(u) - F(v)|| <= eta ||u - v||_1."""
    rng = np.random.default_rng(seed)
    k = model.k
    u = rng.normal(size=(n_pairs, model.modes)) * scale / k
    v = u + rng.normal(size=(n_pairs, model.modes)) * scale * 10.0 ** rng.uniform(-3, 0, (n_pairs, 1)) / k
    Fu, Fv = forcing(u, model), forcing(v, model)
    sq = l2_norm(Fu) ** 2
    diff = l2_norm(Fu - Fv)
    bound = model.eta * h1_norm(u - v, model)
    return {
        "max_sq_norm": float(np.max(sq)),
        "sq_bound": model.eta ** 2 * math.pi,
        "f1_ok": bool(np.all(sq <= model.eta ** 2 * math.pi * (1 + 1e-12))),
        "max_ratio": float(np.max(diff / np.maximum(bound, 1e-300))) if model.eta else 0.0,
        "f2_ok": bool(np.all(diff <= bound * (1 + 1e-12) + 1e-15)),
    }


def equilibrium_count_table(model):
    eqs = find_equilibria(model)
    return {"lambda": model.lam, "found": len(eqs), "expected": expected_count(model.lam)}


def probe_states(model, n_probe=10, seed=0, scale=0.5):
    """Seeded probe coefficients with H^1 norm spread up to ``scale`` r_cut."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(n_probe, model.modes)) / model.k ** 2
    target = scale * model.r_cut * rng.uniform(0.2, 1.0, size=n_probe)
    return c * (target / h1_norm(c, model))[:, None]


def energy_decay_check(model, n_probe=10, n_steps=20, seed=0, tol=1e-6):
    """Energy is non-increasing along eta = 0 time-1 orbits inside the cutoff region."""
    model = replace(model if model.r_cut is not None else with_default_cutoff(model), eta=0.0)
    T = build_time_one_map(model)
    c = probe_states(model, n_probe, seed)
    worst = -np.inf
    ok = True
    for _ in range(n_steps):
        nxt = T(c)
        inside = (h1_norm(c, model) <= model.r_cut) & (h1_norm(nxt, model) <= model.r_cut)
        e0 = np.array([energy(v, model) for v in c])
        e1 = np.array([energy(v, model) for v in nxt])
        inc = np.where(inside, e1 - e0, -np.inf)
        worst = max(worst, float(np.max(inc)))
        ok = ok and bool(np.all(inc <= tol))
        c = nxt
    return {"max_increase": worst, "ok": ok}


def dt_refinement(model, n_probe=10, seed=0):
    """Observed order of the time-1 map under dt -> dt/2 -> dt/4 on probe points."""
    model = model if model.r_cut is not None else with_default_cutoff(model)
    c = probe_states(model, n_probe, seed)
    outs = []
    for f in (1, 2, 4):
        m = replace(model, dt=model.dt / f, steps_per_unit=model.steps_per_unit * f)
        outs.append(build_time_one_map(m)(c))
    e1 = float(np.max(np.abs(outs[0] - outs[1])))
    e2 = float(np.max(np.abs(outs[1] - outs[2])))
    order = math.log2(e1 / e2) if e2 > 0 else math.inf
    return {"diff_dt": e1, "diff_dt_half": e2, "order": order, "ok": bool(order >= 1 - 0.05)}


def trapping_check(model, etas=(0.0, 0.01, 0.05), n_probe=10, n_steps=30, seed=0, settle=10):
    """Probe orbits enter and stay in one fixed ball for every eta."""
    model = model if model.r_cut is not None else with_default_cutoff(model)
    radius = model.r_cut
    rows = []
    for eta in etas:
        T = build_time_one_map(replace(model, eta=eta))
        c = probe_states(model, n_probe, seed, scale=1.0)
        norms = []
        for _ in range(n_steps):
            c = T(c)
            norms.append(h1_norm(c, model))
        tail = np.max(np.array(norms[settle:]))
        rows.append({"eta": eta, "max_tail_norm": float(tail), "ok": bool(tail <= radius)})
    return {"radius": radius, "rows": rows, "ok": all(r["ok"] for r in rows)}


def lipschitz_distance(model, eta, n_pairs=2000, seed=0):
    """Sampled max(sup, Lip) of T_eta - T_0 on the trapping ball (H^1 coefficient norm)."""
    from .sampling import sampled_lipschitz, sampled_sup

    model = model if model.r_cut is not None else with_default_cutoff(model)
    T0 = build_time_one_map(replace(model, eta=0.0))
    T1 = build_time_one_map(replace(model, eta=eta))

    def diff(c):
        return T1(c) - T0(c)

    def norm(c):
        return h1_norm(c, model)

    lip = sampled_lipschitz(diff, model.modes, model.r_cut, n_pairs, seed, norm)
    sup = sampled_sup(diff, model.modes, model.r_cut, n_pairs, seed + 1, norm)
    return max(lip, sup)


def profile_table(c, n=PROFILE_POINTS):
    x = np.linspace(0.0, math.pi, n)
    return np.column_stack([x, profile(c, x)])
