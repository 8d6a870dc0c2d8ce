import numpy as np
import pytest

from lipdyn.errors import DecompositionMismatch, HypothesisFailed, NoFixedPointInBall, NotOnBothGraphs
from lipdyn.graph_ops import function_graph
from lipdyn.transversality import (
    ABSENT,
    certify_transversal,
    intersect_graphs,
    recenter_at_intersection,
    uniqueness_check,
)


def affine(slope, offset):
    return lambda y: slope * np.asarray(y, dtype=float) + offset


def test_linear_intersection_closed_form():
    out = intersect_graphs(affine(0.2, -0.1), affine(0.3, 0.01), dims=(1, 1), lip_bounds=(0.2, 0.3), r=1.0)
    assert out["path"] == "contraction"
    assert out["y1"][0] == pytest.approx(-0.02 / 0.94, abs=1e-12)
    assert out["point"][1] == pytest.approx(0.2 * (-0.02 / 0.94) - 0.1, abs=1e-12)


def test_uniqueness_from_random_seeds():
    t, s = affine(0.2, -0.1), affine(0.3, 0.01)
    out = intersect_graphs(t, s, dims=(1, 1), lip_bounds=(0.2, 0.3), r=1.0)
    assert uniqueness_check(t, s, out["y1"], 1.0, dims=(1, 1), lip_bounds=(0.2, 0.3)) <= 1e-12


def test_grid_path_when_product_exceeds_one():
    out = intersect_graphs(affine(1.5, 0.1), affine(0.9, 0.0), dims=(1, 1), lip_bounds=(1.5, 0.9), r=1.0)
    assert out["path"] == "grid"
    assert out["y1"][0] == pytest.approx(0.09 / (1 - 1.35), abs=1e-10)


def test_grid_path_reports_missing_fixed_point():
    with pytest.raises(NoFixedPointInBall):
        intersect_graphs(affine(1.0, 0.3), affine(1.5, 0.0), dims=(1, 1), lip_bounds=(1.0, 1.5), r=0.2)


def test_high_dimensional_non_contracting_case_is_absent():
    def t(y):
        return 2.0 * y

    assert intersect_graphs(t, t, dims=(4, 4), lip_bounds=(2.0, 2.0), r=1.0) is ABSENT


def test_closeness_hypothesis_checked():
    ref_t, ref_s = affine(0.2, 0.0), affine(0.3, 0.0)
    with pytest.raises(HypothesisFailed):
        intersect_graphs(affine(0.2, 0.5), ref_s, dims=(1, 1), lip_bounds=(0.2, 0.3), r=1.0,
                         reference=(ref_t, ref_s, 0.3))


def test_recentering_produces_transversal_charts():
    t, s = affine(0.2, -0.1), affine(0.3, 0.01)
    out = intersect_graphs(t, s, dims=(1, 1), lip_bounds=(0.2, 0.3), r=1.0)
    w = recenter_at_intersection(t, s, out["point"], dims=(1, 1), lip_bounds=(0.2, 0.3), radii=(1.0, 1.0))
    cert = certify_transversal(w.chart_theta, w.chart_sigma)
    assert cert["transversal"]
    assert w.radius0 == pytest.approx(1.0 - max(abs(out["point"][0]), abs(out["point"][1])))


def test_recentering_rejects_points_off_the_graphs():
    with pytest.raises(NotOnBothGraphs):
        recenter_at_intersection(affine(0.2, 0.0), affine(0.3, 0.0), np.array([0.5, 0.5]),
                                 dims=(1, 1), lip_bounds=(0.2, 0.3))


def test_same_block_charts_rejected():
    a = function_graph(lambda z: 0.1 * z, "unstable", 1.0, 11, 1)
    b = function_graph(lambda z: 0.1 * z, "unstable", 1.0, 11, 1)
    with pytest.raises(DecompositionMismatch):
        certify_transversal(a, b)
