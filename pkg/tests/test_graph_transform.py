import numpy as np
import pytest

from lipdyn.graph_transform import (
    STABLE,
    UNSTABLE,
    MapModel,
    SplitSystem,
    compute_invariant_graph,
    contraction_bound,
    extend_lipschitz,
    graph_metric,
    graph_transform_step,
    lipschitz_bound,
    zero_graph,
)
from lipdyn.hyperbolicity import jacobian
from lipdyn.models import coupled_linear_saddle, saddle_map
from lipdyn.spectral_split import split_spectrum

C = 0.1


def _quadratic_system(unstable_side):
    def T(z):
        x, y = z[..., 0], z[..., 1]
        if unstable_side:
            return np.stack([2 * x, 0.5 * y + C * x * x], axis=-1)
        return np.stack([2 * x + C * y * y, 0.5 * y], axis=-1)

    split = split_spectrum(np.diag([2.0, 0.5]), 1.0)
    return SplitSystem(MapModel(T, 2), np.zeros(2), split, gamma=2 * C, extension_radius=1.0)


def test_unstable_graph_matches_closed_form():
    # theta(2x) = theta(x)/2 + c x^2 has the solution theta = c x^2 / 3.5
    g = compute_invariant_graph(_quadratic_system(True), UNSTABLE, 0.5, 201)
    x = g.axes[0]
    assert np.max(np.abs(g.values[:, 0] - C * x * x / 3.5)) <= 1e-5


def test_stable_graph_matches_closed_form():
    # 2 sigma(y) + c y^2 = sigma(y/2) has the solution sigma = -c y^2 / 1.75
    g = compute_invariant_graph(_quadratic_system(False), STABLE, 0.5, 201)
    y = g.axes[0]
    assert np.max(np.abs(g.values[:, 0] + C * y * y / 1.75)) <= 1e-5


def test_coupled_linear_unstable_line():
    k, a, b = 0.1, 2.0, 0.5
    model = coupled_linear_saddle(k, a, b)
    split = split_spectrum(jacobian(model, np.zeros(2)), 1.0)
    system = SplitSystem(model, np.zeros(2), split)
    g = compute_invariant_graph(system, UNSTABLE, 1.0, 101)
    assert np.max(np.abs(g.values)) <= 1e-12
    u = split.basis_u[:, 0]
    assert u[1] / u[0] == pytest.approx(k / (a - b), abs=1e-12)


def test_one_step_contracts_graph_metric():
    model = saddle_map(gamma=0.05)
    system = SplitSystem(model, np.zeros(2), split_spectrum(np.diag([2.0, 0.5]), 1.0))
    z = zero_graph(system, UNSTABLE, 1.0, 101)
    g1 = graph_transform_step(z, system)
    g2 = graph_transform_step(g1, system)
    ratio = graph_metric(system, g2, g1) / graph_metric(system, g1, z)
    assert ratio <= contraction_bound(system)


def test_bounds_closed_form():
    system = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), split_spectrum(np.diag([2.0, 0.5]), 1.0))
    a, b, g = system.split.a, system.split.b, 0.05
    assert contraction_bound(system) == pytest.approx((b + 2 * g) / (a - 2 * g))
    assert lipschitz_bound(system) == pytest.approx(g / (a - b - 3 * g))


def test_extension_keeps_values_inside_ball():
    def n(x):
        return np.sin(x)

    ext = extend_lipschitz(n, 1.0, lambda v: np.linalg.norm(v, axis=-1))
    inside = np.array([[0.3, -0.4]])
    outside = np.array([[3.0, 4.0]])
    assert np.array_equal(ext(inside), n(inside))
    assert np.allclose(ext(outside), n(outside / 5.0))


def test_graph_dict_is_plain_json():
    import json

    system = SplitSystem(saddle_map(gamma=0.05), np.zeros(2), split_spectrum(np.diag([2.0, 0.5]), 1.0))
    g = compute_invariant_graph(system, UNSTABLE, 1.0, 51)
    text = json.dumps(g.to_dict())
    assert json.loads(text)["direction"] == "unstable"
