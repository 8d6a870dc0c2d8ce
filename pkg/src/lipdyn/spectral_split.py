"""Spectral splitting of a linear map at a circle of radius rho.

The unstable space X_u collects eigenvalues outside the circle and the stable
space X_s those inside.  Projections come from an ordered real Schur form
block-diagonalized with one Sylvester solve, which is exact in finite
dimension and plays the role of the Riesz contour integral.

Coordinates: every vector x is written as x = basis_u @ xi + basis_s @ eta.
The coordinate blocks of the restricted maps are ``mat_u`` and ``mat_s``.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    DepthOverflow,
    EigenvalueOnCircle,
    NonConvergedEigensolve,
    NotHyperbolicAtUnitCircle,
    RateOutsideSpectralGap,
)

MARGIN_FRACTION = 0.01
RESIDUAL_TOL = 1e-10
DEPTH_CAP = 10_000


@dataclass(frozen=True)
class SplitLinearMap:
    matrix: np.ndarray
    rho: float
    basis_u: np.ndarray
    basis_s: np.ndarray
    proj_u: np.ndarray
    proj_s: np.ndarray
    a: float
    b: float
    eig_u: np.ndarray = field(repr=False)
    eig_s: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def d_u(self):
        return self.basis_u.shape[1]

    @property
    def d_s(self):
        return self.basis_s.shape[1]

    @cached_property
    def change_of_basis(self):
        return np.hstack([self.basis_u, self.basis_s])

    @cached_property
    def inverse_change(self):
        return np.linalg.inv(self.change_of_basis)

    @cached_property
    def coord_u(self):
        """Rows mapping x to its X_u coordinates xi."""
        return self.inverse_change[: self.d_u]

    @cached_property
    def coord_s(self):
        return self.inverse_change[self.d_u :]

    @cached_property
    def mat_u(self):
        return self.coord_u @ self.matrix @ self.basis_u

    @cached_property
    def mat_s(self):
        return self.coord_s @ self.matrix @ self.basis_s

    @cached_property
    def mat_u_inv(self):
        if self.d_u == 0:
            return np.zeros((0, 0))
        return np.linalg.inv(self.mat_u)

    def to_coords(self, x):
        x = np.asarray(x, dtype=float)
        c = x @ self.inverse_change.T
        return c[..., : self.d_u], c[..., self.d_u :]

    def from_coords(self, xi, eta):
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        return xi @ self.basis_u.T + eta @ self.basis_s.T

    def residuals(self):
        """Projection identity, idempotence and commutation residuals."""
        eye = np.eye(self.dim)
        L = self.matrix
        return {
            "sum_identity": float(np.max(np.abs(self.proj_u + self.proj_s - eye))),
            "idempotent_u": float(np.max(np.abs(self.proj_u @ self.proj_u - self.proj_u))),
            "idempotent_s": float(np.max(np.abs(self.proj_s @ self.proj_s - self.proj_s))),
            "commute_u": float(np.max(np.abs(L @ self.proj_u - self.proj_u @ L))),
            "commute_s": float(np.max(np.abs(L @ self.proj_s - self.proj_s @ L))),
        }

    def to_dict(self):
        return {
            "matrix": self.matrix.tolist(),
            "rho": self.rho,
            "d_u": self.d_u,
            "d_s": self.d_s,
            "a": _finite_or_none(self.a),
            "b": self.b,
            "eigenvalue_moduli_u": sorted(np.abs(self.eig_u).tolist()),
            "eigenvalue_moduli_s": sorted(np.abs(self.eig_s).tolist()),
            "margin_fraction": MARGIN_FRACTION,
            "residuals": self.residuals(),
        }


def _finite_or_none(v):
    return float(v) if math.isfinite(v) else None


def split_spectrum(matrix, rho, gap_tol=1e-8):
    """Split ``matrix`` at the circle of radius ``rho``.

    a sits 1% of the spectral distance inside the unstable moduli, b 1%
    outside the stable ones.  With no unstable eigenvalues a is +inf, with
    no stable ones b is 1% of rho.
    """
    L = np.array(matrix, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(L)):
        raise ValueError("matrix has non-finite entries")
    if rho <= 0:
        raise ValueError("rho must be positive")
    d = L.shape[0]
    try:
        eigs = np.linalg.eigvals(L)
    except np.linalg.LinAlgError as exc:
        raise NonConvergedEigensolve(str(exc)) from exc
    mods = np.abs(eigs)
    close = np.abs(mods - rho) <= gap_tol
    if np.any(close):
        raise EigenvalueOnCircle(
            f"eigenvalue modulus {mods[close][0]!r} within {gap_tol} of rho={rho}"
        )
    try:
        T, Z, k = scipy.linalg.schur(L / rho, output="real", sort="ouc")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonConvergedEigensolve(str(exc)) from exc
    n_unstable = int(np.sum(mods > rho))
    if k != n_unstable:
        raise NonConvergedEigensolve(
            f"Schur reordering kept {k} eigenvalues, expected {n_unstable}"
        )
    T = T * rho
    basis_u = Z[:, :k]
    if k < d:
        if k > 0:
            Y = scipy.linalg.solve_sylvester(T[:k, :k], -T[k:, k:], -T[:k, k:])
        else:
            Y = np.zeros((0, d))
        basis_s = Z[:, :k] @ Y + Z[:, k:]
        basis_s = basis_s / np.linalg.norm(basis_s, axis=0)
    else:
        basis_s = np.zeros((d, 0))
    P = np.hstack([basis_u, basis_s])
    try:
        Pinv = np.linalg.inv(P)
    except np.linalg.LinAlgError as exc:
        raise NonConvergedEigensolve("invariant subspaces are not complementary") from exc
    proj_u = basis_u @ Pinv[:k]
    proj_s = basis_s @ Pinv[k:]
    eig_u = eigs[mods > rho]
    eig_s = eigs[mods < rho]
    if eig_u.size:
        lo = float(np.min(np.abs(eig_u)))
        a = lo - MARGIN_FRACTION * (lo - rho)
    else:
        a = math.inf
    if eig_s.size:
        hi = float(np.max(np.abs(eig_s)))
        b = hi + MARGIN_FRACTION * (rho - hi)
    else:
        b = MARGIN_FRACTION * rho
    split = SplitLinearMap(L, float(rho), basis_u, basis_s, proj_u, proj_s, a, b, eig_u, eig_s)
    res = split.residuals()
    scale = max(1.0, float(np.max(np.abs(L))))
    if max(res.values()) > RESIDUAL_TOL * scale:
        raise NonConvergedEigensolve(f"projection residuals too large: {res}")
    return split


@dataclass(frozen=True)
class AdaptedNorm:
    """Sup-over-iterates norm making L_s and L_u^{-1} exact contractions.

    ``depth_s`` is the largest iterate power in the sup for X_s, so depth 0
    means the Euclidean norm.  ``iter_u``/``iter_s`` hold the stacked,
    pre-scaled iterate matrices acting on coordinates.
    """

    split: SplitLinearMap
    depth_u: int
    depth_s: int
    rate_u: float
    rate_s: float
    equiv_lo: float
    equiv_hi: float
    iter_u: np.ndarray = field(repr=False)
    iter_s: np.ndarray = field(repr=False)

    def norm_u(self, xi):
        return _stack_norm(self.iter_u, xi)

    def norm_s(self, eta):
        return _stack_norm(self.iter_s, eta)

    def norm_coords(self, xi, eta):
        return np.maximum(self.norm_u(xi), self.norm_s(eta))

    def __call__(self, x):
        return eval_adapted_norm(self, x)

    def to_dict(self):
        return {
            "depth_u": self.depth_u,
            "depth_s": self.depth_s,
            "rate_u": _finite_or_none(self.rate_u),
            "rate_s": self.rate_s,
            "equiv_lo": self.equiv_lo,
            "equiv_hi": self.equiv_hi,
        }


def _stack_norm(stack, v):
    v = np.asarray(v, dtype=float)
    if stack.shape[2] == 0:
        return np.zeros(v.shape[:-1])
    images = np.einsum("nij,...j->...ni", stack, v)
    return np.max(np.linalg.norm(images, axis=-1), axis=-1)


def _iterate_stack(basis, M, rate):
    """Stack R (M/rate)^n for n = 0..N-1 where N >= 1 is the first power
    with ||(M/rate)^N|| <= 1 in the Euclidean norm restricted to the span."""
    k = M.shape[0]
    if k == 0:
        return np.zeros((1, 0, 0)), 0, 1.0
    R = np.linalg.qr(basis, mode="r")
    Rinv = np.linalg.inv(R)
    scaled = M / rate
    mats = [R.copy()]
    power = np.eye(k)
    const = 1.0
    for n in range(1, DEPTH_CAP + 2):
        power = power @ scaled
        op = np.linalg.norm(R @ power @ Rinv, 2)
        if op <= 1.0:
            return np.array(mats), n - 1, const
        if n > DEPTH_CAP:
            break
        const = max(const, op)
        mats.append(R @ power)
    raise DepthOverflow(f"iterate depth exceeded {DEPTH_CAP}")


def build_adapted_norm(split, rate_u=None, rate_s=None):
    """Adapted norm with ||L_s x|| <= rate_s ||x|| and ||L_u^{-1} x|| <= ||x||/rate_u.

    Defaults are rate_u = a and rate_s = b.  Any rate strictly inside the
    spectral gap is accepted; the contraction then holds at that rate, which
    implies the a/b bounds whenever rate_s <= b and rate_u >= a.
    """
    rate_u = split.a if rate_u is None else float(rate_u)
    rate_s = split.b if rate_s is None else float(rate_s)
    if split.d_s:
        spec_s = float(np.max(np.abs(split.eig_s)))
        if not (spec_s < rate_s < split.rho):
            raise RateOutsideSpectralGap(
                f"rate_s={rate_s} must satisfy {spec_s} < rate_s < rho={split.rho}"
            )
    if split.d_u:
        spec_u = float(np.min(np.abs(split.eig_u)))
        if not (split.rho < rate_u < spec_u):
            raise RateOutsideSpectralGap(
                f"rate_u={rate_u} must satisfy rho={split.rho} < rate_u < {spec_u}"
            )
    stack_s, depth_s, c_s = _iterate_stack(split.basis_s, split.mat_s, rate_s)
    if split.d_u:
        stack_u, depth_u, c_u = _iterate_stack(split.basis_u, split.mat_u_inv, 1.0 / rate_u)
    else:
        stack_u, depth_u, c_u = np.zeros((1, 0, 0)), 0, 1.0
    both = split.d_u > 0 and split.d_s > 0
    lo = 0.5 if both else 1.0
    hi = 1.0
    if split.d_u:
        hi = max(hi, c_u * np.linalg.norm(split.proj_u, 2))
    if split.d_s:
        hi = max(hi, c_s * np.linalg.norm(split.proj_s, 2))
    return AdaptedNorm(split, depth_u, depth_s, rate_u, rate_s, lo, float(hi), stack_u, stack_s)


def eval_adapted_norm(norm, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input to adapted norm")
    xi, eta = norm.split.to_coords(x)
    return norm.norm_coords(xi, eta)


def resolvent_bound(split):
    """Upper bound a/(a-1) + 1/(1-b) for ||(I-L)^{-1}||."""
    return resolvent_from_constants(split.a, split.b)


def resolvent_from_constants(a, b):
    if not (b < 1.0 < a):
        raise NotHyperbolicAtUnitCircle(f"need b < 1 < a, got a={a}, b={b}")
    first = 1.0 if math.isinf(a) else a / (a - 1.0)
    return first + 1.0 / (1.0 - b)
