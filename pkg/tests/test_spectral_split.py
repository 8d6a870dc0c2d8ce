import numpy as np
import pytest

from lipdyn.errors import EigenvalueOnCircle, NotHyperbolicAtUnitCircle
from lipdyn.spectral_split import (
    build_adapted_norm,
    eval_adapted_norm,
    resolvent_bound,
    resolvent_from_constants,
    split_spectrum,
)


def test_diagonal_saddle_constants():
    s = split_spectrum(np.diag([2.0, 0.5]), 1.0)
    assert (s.d_u, s.d_s) == (1, 1)
    # one percent margin towards the circle
    assert s.a == pytest.approx(1.99)
    assert s.b == pytest.approx(0.505)
    assert max(s.residuals().values()) <= 1e-12


def test_resolvent_closed_form():
    s = split_spectrum(np.diag([2.0, 0.5]), 1.0)
    assert resolvent_bound(s) == pytest.approx(1.99 / 0.99 + 1 / 0.495)
    true_norm = np.linalg.norm(np.linalg.inv(np.eye(2) - np.diag([2.0, 0.5])), 2)
    assert true_norm <= resolvent_bound(s)


def test_eigenvalue_on_circle_raises():
    with pytest.raises(EigenvalueOnCircle):
        split_spectrum(np.diag([1.0, 0.5]), 1.0)


def test_resolvent_rejects_bad_constants():
    with pytest.raises(NotHyperbolicAtUnitCircle):
        resolvent_from_constants(0.9, 0.5)


def test_rotation_is_fully_unstable():
    M = np.array([[0.0, -1.5], [1.5, 0.0]])
    s = split_spectrum(M, 1.0)
    assert s.d_u == 2 and s.d_s == 0


def _non_normal():
    return np.array([[0.6, 4.0, 0.0], [0.0, 0.6, 0.0], [1.0, 2.0, 3.0]])


def test_projections_for_non_normal_matrix():
    s = split_spectrum(_non_normal(), 1.0)
    assert (s.d_u, s.d_s) == (1, 2)
    assert max(s.residuals().values()) <= 1e-10


def test_adapted_norm_makes_rates_exact():
    M = _non_normal()
    s = split_spectrum(M, 1.0)
    norm = build_adapted_norm(s)
    rng = np.random.default_rng(0)
    vs = rng.normal(size=(500, 3))
    stable = vs @ s.proj_s.T
    unstable = vs @ s.proj_u.T
    ratio_s = eval_adapted_norm(norm, stable @ M.T) / eval_adapted_norm(norm, stable)
    assert np.max(ratio_s) <= s.b + 1e-12
    # E_u is invariant, so M^{-1} restricted to it is L_u^{-1}
    pre = np.linalg.solve(M, unstable.T).T
    ratio_u = eval_adapted_norm(norm, pre) / eval_adapted_norm(norm, unstable)
    assert np.max(ratio_u) <= 1 / s.a + 1e-12
    # the plain Euclidean norm does not contract the stable block in one step
    assert np.max(np.linalg.norm(stable @ M.T, axis=1) / np.linalg.norm(stable, axis=1)) > 1


def test_adapted_norm_equivalence_constants():
    s = split_spectrum(_non_normal(), 1.0)
    norm = build_adapted_norm(s)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(500, 3))
    n = eval_adapted_norm(norm, x)
    e = np.linalg.norm(x, axis=1)
    assert np.all(n >= norm.equiv_lo * e * (1 - 1e-12))
    assert np.all(n <= norm.equiv_hi * e * (1 + 1e-12))


def test_adapted_norm_rejects_nan():
    norm = build_adapted_norm(split_spectrum(np.diag([2.0, 0.5]), 1.0))
    with pytest.raises(ValueError):
        eval_adapted_norm(norm, np.array([np.nan, 0.0]))
