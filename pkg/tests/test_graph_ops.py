import numpy as np
import pytest
import scipy.optimize

from lipdyn.errors import EpsilonTooLarge, NotNearIdentity, TargetOutsideGuaranteedImage
from lipdyn.graph_ops import (
    extend_near_identity,
    function_graph,
    invert_near_identity,
    near_identity_constants,
    reparametrize_stable_graph,
    reparametrize_unstable_graph,
)
from lipdyn.graph_transform import STABLE, UNSTABLE


def g(x):
    return x + 0.1 * np.sin(x)


def test_inverse_matches_bracketing_root():
    x = invert_near_identity(g, np.array([0.5]), 1.0)
    ref = scipy.optimize.brentq(lambda t: t + 0.1 * np.sin(t) - 0.5, 0.0, 1.0, xtol=1e-15)
    assert abs(x[0] - ref) <= 1e-12


def test_constants_of_sine_perturbation():
    c = near_identity_constants(g, 1, 1.0, n=20_000)
    assert 0.1 <= c["lip"] <= 0.11 + 1e-12
    assert 0.1 * np.sin(1.0) <= c["sup"] <= 1.1 * 0.1 * np.sin(1.0) + 1e-12


def test_far_from_identity_rejected():
    with pytest.raises(NotNearIdentity):
        invert_near_identity(lambda x: 2 * x, np.array([0.1]), 1.0)


def test_target_outside_guaranteed_image():
    with pytest.raises(TargetOutsideGuaranteedImage):
        invert_near_identity(g, np.array([0.99]), 1.0, {"lip": 0.1, "sup": 0.1})


def test_extension_matches_inside_and_stays_near_identity():
    ext = extend_near_identity(g, 1.0)
    assert np.array_equal(ext(np.array([[0.4]])), g(np.array([[0.4]])))
    far = np.array([[5.0]])
    assert abs(ext(far)[0, 0] - 5.0) <= 0.1


def test_translation_reparametrization_closed_form():
    theta = function_graph(lambda z: 0.3 * np.sin(z), UNSTABLE, 1.0, 201, 1)
    out = reparametrize_unstable_graph(lambda z: (z + 0.1, theta(z) + 0.05), theta, epsilon=0.1)
    w = out.nodes
    # psi_s o psi_u^{-1}(w) = theta(w - 0.1) + 0.05
    exact = 0.3 * np.sin(w - 0.1) + 0.05
    assert np.max(np.abs(out(w) - exact)) <= 1e-5
    assert out.meta["lip_ok"] and out.meta["sup_ok"]


def test_stable_reparametrization_direction_checked():
    theta = function_graph(lambda z: 0.3 * np.sin(z), UNSTABLE, 1.0, 51, 1)
    with pytest.raises(ValueError):
        reparametrize_stable_graph(lambda z: (z, theta(z)), theta)
    sigma = function_graph(lambda z: 0.2 * z, STABLE, 1.0, 51, 1)
    out = reparametrize_stable_graph(lambda z: (z + 0.02, sigma(z)), sigma, epsilon=0.02)
    assert out.meta["sup_ok"]


def test_epsilon_too_large():
    theta = function_graph(lambda z: 0.0 * z, UNSTABLE, 1.0, 51, 1)
    with pytest.raises(EpsilonTooLarge):
        reparametrize_unstable_graph(lambda z: (z, theta(z)), theta, epsilon=0.6)
