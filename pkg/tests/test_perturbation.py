import numpy as np
import pytest
import scipy.optimize

from lipdyn.errors import PreconditionFailed
from lipdyn.graph_transform import SplitSystem
from lipdyn.hyperbolicity import certify_hyperbolic, jacobian
from lipdyn.models import cubic_map, linear_map, saddle_map
from lipdyn.perturbation import (
    PerturbationFamily,
    continue_equilibrium,
    lipschitz_closeness,
    track_equilibrium_family,
)
from lipdyn.spectral_split import split_spectrum

SPLIT = split_spectrum(np.diag([2.0, 0.5]), 1.0)


def test_family_requires_zero_and_shared_dimension():
    with pytest.raises(ValueError):
        PerturbationFamily((0.1, 0.2), (saddle_map(), saddle_map()))
    with pytest.raises(ValueError):
        PerturbationFamily((0.0, 0.1), (saddle_map(), cubic_map()))
    fam = PerturbationFamily.from_factory(lambda e: saddle_map(eta=e), [0.1, 0.0])
    assert fam.eta_values == (0.0, 0.1)
    assert fam.base is fam.models[0]


def test_continuation_matches_newton_oracle():
    base = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), SPLIT)
    for eta in (0.1, 0.05, 0.01):
        model = saddle_map(gamma=0.05, eta=eta)
        res = continue_equilibrium(base, model, radius=1.0)
        root = scipy.optimize.fsolve(lambda x: model(x) - x, np.zeros(2), xtol=1e-14)
        assert np.max(np.abs(res.x_star - root)) <= 1e-10
        assert res.residual <= 1e-12
        assert res.contraction_measured <= res.contraction_bound


def test_displacement_shrinks_with_eta():
    base = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), SPLIT)
    disp = [float(base.norm(continue_equilibrium(base, saddle_map(gamma=0.05, eta=e), radius=1.0).x_star))
            for e in (0.1, 0.05, 0.01)]
    assert disp[0] > disp[1] > disp[2] > 0


def test_explicit_epsilon_bound_holds():
    base = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), SPLIT)
    eta = 0.05
    res = continue_equilibrium(base, saddle_map(gamma=0.05, eta=eta), epsilon=0.25 * eta, radius=1.0)
    assert float(base.norm(res.x_star)) <= res.bound_delta1


def test_large_perturbation_fails_precondition():
    base = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), SPLIT)
    with pytest.raises(PreconditionFailed):
        continue_equilibrium(base, saddle_map(gamma=0.05, eta=1.0, bump=1.0), radius=0.5)


def test_linear_offset_exact():
    M = np.array([[2.0, 0.3], [0.0, 0.5]])
    base = SplitSystem(linear_map(M), np.zeros(2), split_spectrum(M, 1.0))
    off = np.array([0.02, -0.01])
    res = continue_equilibrium(base, linear_map(M, off), radius=1.0)
    assert np.allclose(res.x_star, np.linalg.solve(np.eye(2) - M, off), atol=1e-12, rtol=0)


def test_closeness_of_cosine_bump():
    eta, bump = 0.1, 0.25
    base = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), SPLIT)
    out = lipschitz_closeness(saddle_map(gamma=0.05, eta=eta), base.model, np.zeros(2), 1.0,
                              base.norm, n=20_000)
    # the difference is eta * bump * (cos y, cos x), Lip eta*bump*sin(1) on the unit ball
    assert out["lip"] <= 1.1 * eta * bump + 1e-12
    assert out["sup"] >= eta * bump * 0.99


def test_track_family_preserves_count():
    fam = PerturbationFamily.from_factory(lambda e: cubic_map(h=0.4, eta=e), [0.0, 0.001, 0.005])
    bases = []
    for x in (-1.0, 0.0, 1.0):
        pt = np.array([x])
        sp = split_spectrum(jacobian(fam.base, pt), 1.0)
        cert = certify_hyperbolic(fam.base, pt, sp, 0.02)
        bases.append((SplitSystem(fam.base, pt, sp, gamma=cert.gamma), cert))
    out = track_equilibrium_family(fam, bases)
    assert out["eta_valid_max"] == 0.005
    assert all(out["per_eta"][e]["count"] == 3 for e in fam.eta_values)
    assert out["monotone"]
    assert all(r["pass"] for r in out["rows"])
