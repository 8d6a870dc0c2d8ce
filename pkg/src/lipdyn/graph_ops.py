"""Near-identity inversion and reparametrization of perturbed graphs."""

from dataclasses import replace

import numpy as np

from .errors import (
    ContractionFailed,
    EpsilonTooLarge,
    InversionFailed,
    NotNearIdentity,
    TargetOutsideGuaranteedImage,
)
from .graph_transform import STABLE, UNSTABLE, LipschitzGraph, make_grid
from .sampling import INFLATION, sampled_lipschitz, sampled_sup


def euclidean(v):
    return np.linalg.norm(np.asarray(v, dtype=float), axis=-1)


def near_identity_constants(g, dim, radius, norm=euclidean, n=100_000, seed=0):
    """Sampled ||g - I||_Lip and ||g - I||_inf on the ball, inflated 10%."""

    def dev(x):
        return g(x) - x

    lip = sampled_lipschitz(dev, dim, radius, n, seed, norm)
    sup = sampled_sup(dev, dim, radius, n, seed + 1, norm)
    return {"lip": INFLATION * lip, "sup": INFLATION * sup}


def invert_near_identity(g, y, radius, constants=None, norm=euclidean, fp_tol=1e-12,
                         max_iter=500, n=100_000, seed=0):
    """Solve g(x) = y on the ball of given radius via Picard on x -> y + x - g(x).

    ``y`` may be a batch (m, d).  Requires ||g - I||_Lip < 1/2 and
    ||y|| <= radius - alpha with alpha = ||g - I||_inf.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    yb = np.atleast_2d(y)
    dim = yb.shape[-1]
    if constants is None:
        constants = near_identity_constants(g, dim, radius, norm, n, seed)
    lip, alpha = constants["lip"], constants["sup"]
    if not lip < 0.5:
        raise NotNearIdentity(f"||g - I||_Lip = {lip} is not below 1/2")
    ny = norm(yb)
    if np.any(ny > radius - alpha + 1e-15):
        raise TargetOutsideGuaranteedImage(
            f"target norm {float(np.max(ny))} exceeds r - alpha = {radius - alpha}")
    x = yb.copy()
    best = np.inf
    for it in range(max_iter):
        new = yb + x - g(x)
        step = float(np.max(norm(new - x)))
        x = new
        if step <= fp_tol:
            break
        if it > 5 and step > 10 * best:
            raise ContractionFailed(f"near-identity inversion diverged (step {step})")
        best = min(best, step)
    else:
        raise ContractionFailed(f"near-identity inversion exceeded {max_iter} steps")
    return x[0] if single else x


def extend_near_identity(g, radius, norm=euclidean):
    """g(x) outside the ball replaced by g(r x/||x||) - r x/||x|| + x."""

    def ext(x):
        x = np.asarray(x, dtype=float)
        nrm = norm(x)
        scale = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)[..., None]
        xr = x * scale
        return g(xr) - xr + x

    return ext


def _graph_deviation(psi, ref, dom_norm, cod_norm, n, seed):
    """Sampled sup and Lip of psi - (id + ref) over the reference domain."""
    k = ref.d_dom

    def dev(z):
        p_dom, p_cod = psi(z)
        return np.concatenate([p_dom - z, p_cod - ref(z)], axis=-1)

    def both(v):
        return np.maximum(dom_norm(v[..., :k]), cod_norm(v[..., k:]))

    lip = sampled_lipschitz(dev, k, ref.radius, n, seed, dom_norm, both)
    sup = sampled_sup(dev, k, ref.radius, n, seed + 1, dom_norm, both)
    return INFLATION * sup, INFLATION * lip


def _reparametrize(psi, ref, epsilon, dom_norm, cod_norm, lip_ref, n, seed, fp_tol, slack):
    if epsilon is None:
        sup, lip = _graph_deviation(psi, ref, dom_norm, cod_norm, n, seed)
        epsilon = max(sup, lip)
    if not epsilon < 0.5:
        raise EpsilonTooLarge(f"measured deviation {epsilon} is not below 1/2")
    r0 = ref.radius - epsilon
    if r0 <= 0:
        raise EpsilonTooLarge(f"domain radius r - eps = {r0} is empty")
    axes = make_grid(ref.d_dom, r0, [len(ax) for ax in ref.axes])
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack(mesh, axis=-1).reshape(-1, ref.d_dom)

    def psi_dom(z):
        return psi(z)[0]

    try:
        z = invert_near_identity(psi_dom, nodes, ref.radius,
                                 {"lip": epsilon, "sup": epsilon}, dom_norm, fp_tol)
    except (NotNearIdentity, TargetOutsideGuaranteedImage, ContractionFailed) as exc:
        raise InversionFailed(str(exc)) from exc
    vals = psi(z)[1].reshape(tuple(len(ax) for ax in axes) + (ref.d_cod,))
    lip_ref = ref.lip_cert if lip_ref is None else lip_ref
    out = LipschitzGraph(ref.base_point, ref.direction, r0, axes, vals, 0.0, ref.rho)
    lip_new = _node_lipschitz(out, dom_norm, cod_norm)
    sup_dev = float(np.max(cod_norm(out.flat_values - ref(nodes)))) if ref.d_cod else 0.0
    lip_bound = (lip_ref + epsilon) / (1 - epsilon)
    sup_bound = (1 + lip_ref) * epsilon
    meta = {
        "epsilon": epsilon,
        "domain_radius": r0,
        "lip_bound": lip_bound,
        "sup_bound": sup_bound,
        "sup_deviation": sup_dev,
        "lip_ok": bool(lip_new <= (1 + slack) * lip_bound),
        "sup_ok": bool(sup_dev <= (1 + slack) * sup_bound),
        "reference_lip": lip_ref,
    }
    return replace(out, lip_cert=lip_new, meta=meta)


def _node_lipschitz(graph, dom_norm, cod_norm):
    best = 0.0
    for axis, ax in enumerate(graph.axes):
        if len(ax) < 2 or graph.d_cod == 0:
            continue
        dv = np.diff(graph.values, axis=axis)
        step = np.zeros(graph.d_dom)
        step[axis] = ax[1] - ax[0]
        best = max(best, float(np.max(cod_norm(dv) / dom_norm(step))))
    return best


def reparametrize_unstable_graph(psi, reference_theta, epsilon=None, norm_u=euclidean,
                                 norm_s=euclidean, lip_ref=None, n=100_000, seed=0,
                                 fp_tol=1e-13, slack=0.05):
    """Graph theta_t = psi_s o psi_u^{-1} over the box of radius r - eps.

    ``psi(xi)`` returns the pair (psi_u(xi), psi_s(xi)) and should be close
    to xi -> (xi, theta(xi)).
    """
    if reference_theta.direction != UNSTABLE:
        raise ValueError("reference graph must be unstable")
    return _reparametrize(psi, reference_theta, epsilon, norm_u, norm_s, lip_ref, n, seed,
                          fp_tol, slack)


def reparametrize_stable_graph(phi, reference_sigma, epsilon=None, norm_u=euclidean,
                               norm_s=euclidean, lip_ref=None, n=100_000, seed=0,
                               fp_tol=1e-13, slack=0.05):
    """Graph sigma_t = phi_u o phi_s^{-1} over the box of radius r - eps.

    ``phi(eta)`` returns the pair (phi_s(eta), phi_u(eta)), domain part first.
    """
    if reference_sigma.direction != STABLE:
        raise ValueError("reference graph must be stable")
    return _reparametrize(phi, reference_sigma, epsilon, norm_s, norm_u, lip_ref, n, seed,
                          fp_tol, slack)


def function_graph(fn, direction, radius, grid_res, d_cod, lip=None, base_point=None, rho=1.0):
    """Sample an explicit function onto a LipschitzGraph grid."""
    k = 1 if np.isscalar(grid_res) else len(grid_res)
    axes = make_grid(k, radius, grid_res)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack(mesh, axis=-1).reshape(-1, k)
    vals = np.asarray(fn(nodes), dtype=float).reshape(tuple(len(ax) for ax in axes) + (d_cod,))
    g = LipschitzGraph(np.zeros(k + d_cod) if base_point is None else np.asarray(base_point),
                       direction, float(radius), axes, vals, 0.0, rho)
    cert = _node_lipschitz(g, euclidean, euclidean) if lip is None else float(lip)
    return replace(g, lip_cert=cert)
