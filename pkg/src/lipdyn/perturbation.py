"""Continuation of equilibria and invariant graphs under Lipschitz-small changes."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BoundViolated,
    ContractionFailed,
    CountMismatch,
    PreconditionFailed,
    SeparationViolated,
)
from .graph_transform import (
    UNSTABLE,
    SplitSystem,
    compute_invariant_graph,
    graph_lipschitz,
)
from .sampling import INFLATION, sampled_lipschitz, sampled_sup
from .spectral_split import eval_adapted_norm, resolvent_from_constants


@dataclass(frozen=True)
class PerturbationFamily:
    eta_values: tuple
    models: tuple
    closeness: tuple = ()

    def __post_init__(self):
        etas = tuple(float(e) for e in self.eta_values)
        if 0.0 not in etas:
            raise ValueError("eta grid must contain 0")
        if list(etas) != sorted(etas):
            raise ValueError("eta grid must be ascending")
        if len(self.models) != len(etas):
            raise ValueError("one model per eta value")
        dims = {m.dim for m in self.models}
        if len(dims) != 1:
            raise ValueError("models must share the state dimension")
        object.__setattr__(self, "eta_values", etas)
        object.__setattr__(self, "models", tuple(self.models))

    @classmethod
    def from_factory(cls, factory, eta_values):
        etas = sorted(float(e) for e in eta_values)
        return cls(tuple(etas), tuple(factory(e) for e in etas))

    def model_at(self, eta):
        return self.models[self.eta_values.index(float(eta))]

    @property
    def base(self):
        return self.model_at(0.0)

    def with_closeness(self, center, radius, norm, n=100_000, seed=0):
        """Record the sampled closeness of every member to the eta = 0 model."""
        base = self.base
        vals = []
        for m in self.models:
            vals.append(lipschitz_closeness(m, base, center, radius, norm, n, seed)["value"])
        return PerturbationFamily(self.eta_values, self.models, tuple(vals))


@dataclass(frozen=True)
class ContinuationResult:
    eta: float
    x_star: np.ndarray
    iterations: int
    residual: float
    bound_delta1: float
    gamma_new: float = 0.0
    epsilon: float = 0.0
    contraction_measured: float = 0.0
    contraction_bound: float = 0.0
    preconditions: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "eta": self.eta,
            "x_star": self.x_star.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "bound_delta1": self.bound_delta1,
            "gamma_new": self.gamma_new,
            "epsilon": self.epsilon,
            "contraction_measured": self.contraction_measured,
            "contraction_bound": self.contraction_bound,
            "preconditions": {k: bool(v) for k, v in self.preconditions.items()},
        }


def lipschitz_closeness(model, base, center, radius, norm, n=100_000, seed=0):
    """Sampled max(sup, Lip) of model - base on the ball, inflated 10%."""
    center = np.asarray(center, dtype=float)
    dim = center.size

    def diff(x):
        return model(center + x) - base(center + x)

    sup = sampled_sup(diff, dim, radius, n, seed, norm)
    lip = sampled_lipschitz(diff, dim, radius, n, seed + 1, norm)
    return {"sup": INFLATION * sup, "lip": INFLATION * lip,
            "value": INFLATION * max(sup, lip), "mode": "empirical"}


def continuation_preconditions(epsilon, gamma, delta1, a, b):
    R = resolvent_from_constants(a, b)
    eg = epsilon + gamma
    upper = a - 2 * eg if not math.isinf(a) else math.inf
    return {
        "(eps+gamma*delta1)*R<=delta1": (epsilon + gamma * delta1) * R <= delta1 * (1 + 1e-12),
        "(eps+gamma)*R<1": eg * R < 1,
        "b+2(eps+gamma)<1<a-2(eps+gamma)": b + 2 * eg < 1 < upper,
    }


def default_delta1(epsilon, gamma, a, b):
    """Smallest delta1 meeting (eps + gamma delta1) R <= delta1."""
    R = resolvent_from_constants(a, b)
    if gamma * R >= 1:
        return math.inf
    return epsilon * R / (1 - gamma * R)


def split_preconditions(center_gap, eps_lip, gamma, delta1, a, b):
    """Proof-level form: sup of S1 - S on the delta1-ball is at most
    ||(S1 - S)(0)|| + Lip(S1 - S) delta1, and only the Lipschitz part enters
    the contraction and gap inequalities."""
    R = resolvent_from_constants(a, b)
    eg = eps_lip + gamma
    upper = a - 2 * eg if not math.isinf(a) else math.inf
    return {
        "(s0+(eps+gamma)*delta1)*R<=delta1": (center_gap + eg * delta1) * R <= delta1 * (1 + 1e-12) + 1e-300,
        "(eps+gamma)*R<1": eg * R < 1,
        "b+2(eps+gamma)<1<a-2(eps+gamma)": b + 2 * eg < 1 < upper,
    }


def continue_equilibrium(base_system, perturbed, epsilon=None, delta1=None, eta=0.0,
                         fp_tol=1e-12, max_iter=500, n_pairs=100_000, seed=0, radius=None):
    """Fixed point of phi(x) = (I - L)^{-1}(S1(x) - L x) by Picard from 0.

    ``base_system`` is the SplitSystem of the unperturbed map at x0*, its
    gamma is Lip(N).  With ``epsilon`` given, the closeness enters both
    inequalities as one number.  Otherwise the sampled Lipschitz part of
    S1 - S on the ball of radius ``radius`` (default 0.5, adapted norm) and
    the exact gap ||S1(x0*) - x0*|| at the center are used separately.
    """
    sys = base_system
    split = sys.split
    a, b, g = split.a, split.b, sys.gamma
    x0 = sys.base_point
    norm = sys.norm
    radius = 0.5 if radius is None else radius
    R = resolvent_from_constants(a, b)
    if epsilon is None:
        close = lipschitz_closeness(perturbed, sys.model, x0, radius, norm, n_pairs, seed)
        eps_lip = close["lip"]
        s0 = float(eval_adapted_norm(norm, perturbed(x0) - sys.model(x0)))
        if delta1 is None:
            eg = eps_lip + g
            delta1 = s0 * R / (1 - eg * R) if eg * R < 1 else math.inf
        pre = split_preconditions(s0, eps_lip, g, delta1, a, b)
        epsilon = eps_lip
    else:
        if delta1 is None:
            delta1 = default_delta1(epsilon, g, a, b)
        pre = continuation_preconditions(epsilon, g, delta1, a, b)
    pre["delta1<=radius"] = delta1 <= radius
    for name, ok in pre.items():
        if not ok:
            raise PreconditionFailed(f"continuation precondition {name} fails "
                                     f"(eps={epsilon}, gamma={g}, delta1={delta1})", inequality=name)
    R = resolvent_from_constants(a, b)
    L = split.matrix
    solve = np.linalg.inv(np.eye(split.dim) - L)

    def phi(x):
        return (perturbed(x0 + x) - x0 - x @ L.T) @ solve.T

    x = np.zeros(split.dim)
    steps = []
    it = 0
    for it in range(1, max_iter + 1):
        new = phi(x)
        step = float(norm(new - x))
        x = new
        steps.append(step)
        if step <= fp_tol:
            break
        if it > 5 and step > 10 * min(steps):
            raise ContractionFailed(f"continuation step grew to {step}")
    else:
        raise ContractionFailed(f"continuation did not converge in {max_iter} iterations")
    ratios = [s1 / s0 for s0, s1 in zip(steps, steps[1:]) if s0 > 1e-10]
    residual = float(norm(perturbed(x0 + x) - (x0 + x)))
    return ContinuationResult(float(eta), x0 + x, it, residual, float(delta1), g + epsilon,
                              float(epsilon), max(ratios) if ratios else 0.0, (epsilon + g) * R, pre)


def track_equilibrium_family(family, bases, fp_tol=1e-12, radius=None, n_pairs=100_000, seed=0):
    """Continue every base equilibrium to every eta of the family.

    ``bases`` is a list of (SplitSystem, HyperbolicCertificate) pairs.  Counts
    are asserted at every eta below the first one where a precondition
    fails; displacement must shrink as eta -> 0.
    """
    for sys, cert in bases:
        if cert is not None and not cert.strong_flag:
            raise PreconditionFailed("base equilibrium lacks a strong certificate")
    max_iso = max((c.isolation_radius for _, c in bases if c is not None), default=0.0)
    pts = [s.base_point for s, _ in bases]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            sep = float(np.max(np.abs(pts[i] - pts[j])))
            if sep < 2 * max_iso:
                raise SeparationViolated(f"equilibria {i},{j} separated by {sep} < {2 * max_iso}")
    rows, per_eta = [], {}
    eta_valid = None
    for eta, model in zip(family.eta_values, family.models):
        results = []
        failed = None
        for i, (sys, cert) in enumerate(bases):
            try:
                rad = cert.delta if (radius is None and cert is not None) else radius
                res = continue_equilibrium(sys, model, eta=eta, fp_tol=fp_tol, radius=rad,
                                           n_pairs=n_pairs, seed=seed)
            except PreconditionFailed as exc:
                failed = exc.inequality
                break
            results.append(res)
        if failed is not None:
            per_eta[eta] = {"status": "precondition", "failed": failed}
            continue
        eta_valid = eta
        found = [r.x_star for r in results]
        distinct = _count_distinct(found, 10 * fp_tol + 1e-9)
        if distinct != len(bases):
            raise CountMismatch(f"found {distinct} equilibria at eta={eta}, expected {len(bases)}",
                                at=eta, found=distinct, expected=len(bases))
        disp = [float(bases[i][0].norm(r.x_star - bases[i][0].base_point)) for i, r in enumerate(results)]
        for i, r in enumerate(results):
            rows.append({"eta": eta, "equilibrium_id": i, "displacement": disp[i],
                         "residual": r.residual, "bound": r.bound_delta1,
                         "pass": bool(disp[i] <= r.bound_delta1 * (1 + 1e-9) and r.residual <= max(fp_tol, 1e-10) * 10)})
        per_eta[eta] = {"status": "ok", "count": distinct, "max_displacement": max(disp),
                        "results": results}
    ok_etas = [e for e in family.eta_values if per_eta[e]["status"] == "ok"]
    disp_seq = [per_eta[e]["max_displacement"] for e in ok_etas]
    monotone = all(d0 <= d1 * (1 + 1e-6) + 1e-12 for d0, d1 in zip(disp_seq, disp_seq[1:]))
    return {"rows": rows, "per_eta": per_eta, "eta_valid_max": eta_valid,
            "count_preserved": True, "monotone": monotone}


def _count_distinct(points, tol):
    reps = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in reps):
            reps.append(p)
    return len(reps)


def _coord_fn(system):
    du = system.d_u

    def split_args(c):
        return c[..., :du], c[..., du:]

    return split_args


def _ns_fn(system):
    du = system.d_u

    def fn(c):
        return system.N(c[..., :du], c[..., du:])[1]

    return fn


def tube_lipschitz(system, dom_radius, tube_radius, n_pairs=100_000, seed=0):
    """Sampled Lip of N_s on the box W_u x B_tube (coordinates, adapted norms)."""
    du, ds = system.d_u, system.d_s
    rng = np.random.default_rng(seed)
    scale = np.concatenate([np.full(du, dom_radius), np.full(ds, tube_radius)])
    x = rng.uniform(-1, 1, size=(n_pairs, du + ds)) * scale
    y = x + rng.normal(size=x.shape) * scale * 10.0 ** rng.uniform(-4, 0, size=(n_pairs, 1))
    y = np.clip(y, -scale, scale)
    fn = _ns_fn(system)
    dx = system.flat_norm(x - y)
    ok = dx > 1e-9 * float(np.max(scale))
    q = system.norm.norm_s(fn(x[ok]) - fn(y[ok])) / dx[ok]
    return INFLATION * float(np.max(q)) if q.size else 0.0


def manifold_deviation(straightening, family, radius=1.0, grid_res=201, tol=1e-10,
                       n_pairs=100_000, seed=0, slack=0.05, strict=True, sample_radius=None):
    """Sup and Lipschitz deviation of the unstable graphs theta_eta from theta_0.

    Coordinates are straightened by ``straightening`` (built from the eta = 0
    map) so theta_0 vanishes.  Bounds checked per eta:
        ||theta_eta|| <= ||N_eta - N_0||_inf / (1 - b - gamma)
        Lip(theta_eta) <= K / (a - b - 2 gamma - K)
    with K = Lip N_{0,s} on the tube + Lip(N_{eta,s} - N_{0,s}).
    """
    st = straightening
    base = st.system
    split = base.split
    a, b = split.a, split.b
    du, ds = split.d_u, split.d_s
    sample_radius = 0.5 * radius if sample_radius is None else sample_radius
    systems = {}
    for eta, model in zip(family.eta_values, family.models):
        conj = st.conjugate(model)
        probe = SplitSystem(conj, base.base_point, split, gamma=0.0)
        lip = INFLATION * sampled_lipschitz(probe._flat_nonlinear, split.dim, sample_radius,
                                            n_pairs, seed, probe.flat_norm)
        systems[eta] = SplitSystem(conj, base.base_point, split, gamma=lip, gamma_mode="empirical")
    sys0 = systems[0.0]
    g0 = sys0.gamma
    theta0 = compute_invariant_graph(sys0, UNSTABLE, radius, grid_res, tol)
    theta0_sup = float(np.max(np.abs(theta0.values))) if theta0.values.size else 0.0
    rows = []
    for eta in family.eta_values:
        sys = systems[eta]
        th = compute_invariant_graph(sys, UNSTABLE, radius, grid_res, tol)
        diff = th.__class__(th.base_point, th.direction, th.radius, th.axes,
                            th.values - theta0.values, 0.0, th.rho)
        sup_dev = float(np.max(base.norm.norm_s(diff.flat_values))) if ds else 0.0
        lip_dev = graph_lipschitz(base, diff)

        def dN(c, s_eta=sys):
            x, y = c[..., :du], c[..., du:]
            n1 = s_eta.N(x, y)
            n0 = sys0.N(x, y)
            return np.concatenate([n1[0] - n0[0], n1[1] - n0[1]], axis=-1)

        def dNs(c, s_eta=sys):
            x, y = c[..., :du], c[..., du:]
            return s_eta.N(x, y)[1] - sys0.N(x, y)[1]

        d_inf = INFLATION * sampled_sup(dN, split.dim, sample_radius, n_pairs, seed + 2, base.flat_norm)
        d_lip_s = INFLATION * sampled_lipschitz(dNs, split.dim, sample_radius, n_pairs, seed + 3,
                                                base.flat_norm, base.norm.norm_s)
        tube = max(1.1 * sup_dev, 1e-6)
        k0 = tube_lipschitz(sys0, sample_radius, tube, n_pairs, seed + 4)
        K = k0 + d_lip_s
        gamma = max(g0, sys.gamma)
        sup_bound = d_inf / (1 - b - g0)
        den = a - b - 2 * gamma - K
        lip_bound = K / den if den > 0 else math.inf
        sup_ok = sup_dev <= (1 + slack) * sup_bound + 1e-12
        lip_ok = lip_dev <= (1 + slack) * lip_bound + 1e-12
        rows.append({"eta": eta, "sup_deviation": sup_dev, "sup_bound": sup_bound, "sup_ok": sup_ok,
                     "lip_deviation": lip_dev, "lip_bound": lip_bound, "lip_ok": lip_ok,
                     "K": K, "gamma": gamma, "gamma0": g0, "n_diff_inf": d_inf})
        if strict and not sup_ok:
            raise BoundViolated(f"sup deviation {sup_dev} exceeds bound {sup_bound} at eta={eta}",
                                inequality="sup", eta=eta)
        if strict and not lip_ok:
            raise BoundViolated(f"Lip deviation {lip_dev} exceeds bound {lip_bound} at eta={eta}",
                                inequality="lip", eta=eta)
    sups = [r["sup_deviation"] for r in rows]
    lips = [r["lip_deviation"] for r in rows]
    monotone = all(s0 <= s1 + 1e-12 for s0, s1 in zip(sups, sups[1:])) and all(
        l0 <= l1 + 1e-12 for l0, l1 in zip(lips, lips[1:]))
    return {"rows": rows, "theta0_sup": theta0_sup, "monotone": monotone}
