import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tesopt.geometry import Mesh, TargetSpec, build_box_mesh
from tesopt.protocols import MetricsReport, compute_metrics, m2e_protocol


def test_m2e_examples():
    assert m2e_protocol([0.4, -0.3, 0.1, -0.2], 1.0).tolist() == [1.0, -1.0, 0.0, 0.0]
    assert m2e_protocol([2.0, -2.0, 0.0], 1.0).tolist() == [1.0, -1.0, 0.0]
    assert m2e_protocol([0.5, -0.1, -0.4], 2.0).sum() == 0.0
    for bad in ([0.0, 0.0, 0.0], [1.0, 2.0, 0.0], [-1.0, -0.5]):
        with pytest.raises(ValueError, match="no bipolar pair"):
            m2e_protocol(bad)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=10), st.floats(1e-3, 1e3))
def test_m2e_scale_invariant(p, c):
    p = np.asarray(p)
    if not (p.max() > 0 and p.min() < 0):
        return
    assert np.array_equal(m2e_protocol(p), m2e_protocol(c * p))


def _identity_field(n_elements):
    # B maps a d*N "current" vector straight to the field, so J can be set by hand
    return np.eye(2 * n_elements)


@pytest.fixture
def mesh():
    return build_box_mesh([1, 1], [2, 2])


def test_aligned_single_target(mesh):
    t = TargetSpec(np.array([0]), np.array([0.0, 1.0]))
    J = np.zeros(8)
    J[:2] = [0.0, 0.038]
    r = compute_metrics(_identity_field(4), J, t, mesh)
    assert r.cd_a == pytest.approx(0.038) and r.cd_t == pytest.approx(0.038)
    assert r.par == pytest.approx(100.0)
    assert r.nontarget_mean == 0 and r.focality_ratio is None


def test_orthogonal_field(mesh):
    t = TargetSpec(np.array([0]), np.array([0.0, 1.0]))
    J = np.zeros(8)
    J[:2] = [0.02, 0.0]
    r = compute_metrics(_identity_field(4), J, t, mesh)
    assert r.cd_t == 0 and r.par == 0


def test_two_element_hand_arithmetic(mesh):
    t = TargetSpec(np.array([0, 1]), np.array([1.0, 0.0]))
    J = np.zeros(8)
    J[0], J[2] = 0.02, -0.01
    J[4:6] = [0.0, 0.3]
    r = compute_metrics(_identity_field(4), J, t, mesh)
    assert r.cd_t == pytest.approx(0.005)
    assert r.cd_a == pytest.approx(0.015)
    assert r.par == pytest.approx(100 / 3)
    assert r.nontarget_mean == pytest.approx(0.15)
    assert r.focality_ratio == pytest.approx(0.1)


def test_volume_weighting():
    # two cells of width 1 and 2
    nodes = np.array([[0, 0], [1, 0], [3, 0], [0, 1], [1, 1], [3, 1]], dtype=float)
    uneven = Mesh(dimension=2, nodes=nodes, elements=np.array([[0, 1, 4, 3], [1, 2, 5, 4]]),
                  element_compartment=np.array(["brain"] * 2), boundary_faces=np.array([[0, 3], [1, 1]]),
                  face_dirichlet=np.array([True, False]), element_volume=np.array([1.0, 2.0]))
    t = TargetSpec(np.array([0, 1]), np.array([1.0, 0.0]))
    r = compute_metrics(np.eye(4), np.array([1.0, 0.0, 4.0, 0.0]), t, uneven)
    assert r.cd_a == pytest.approx((1 * 1 + 2 * 4) / 3)


def test_nontarget_region(mesh):
    t = TargetSpec(np.array([0]), np.array([1.0, 0.0]))
    J = np.array([1.0, 0, 2.0, 0, 4.0, 0, 0, 0])
    assert compute_metrics(np.eye(8), J, t, mesh, region=np.array([1])).nontarget_mean == pytest.approx(2.0)
    assert compute_metrics(np.eye(8), J, t, mesh).nontarget_mean == pytest.approx(2.0)


def test_zero_field_reports_absent_par(mesh):
    t = TargetSpec(np.array([0]), np.array([1.0, 0.0]))
    r = compute_metrics(_identity_field(4), np.zeros(8), t, mesh)
    assert r.par is None and r.cd_a == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_metrics_scale_linearly_and_par_is_invariant(seed, c):
    rng = np.random.default_rng(seed)
    m = build_box_mesh([1, 1], [3, 3])
    B = rng.normal(size=(18, 4))
    cur = rng.normal(size=4)
    t = TargetSpec(np.array([0, 4]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    a, b = compute_metrics(B, cur, t, m), compute_metrics(B, c * cur, t, m)
    assert b.cd_a == pytest.approx(c * a.cd_a, rel=1e-12)
    assert b.cd_t == pytest.approx(c * a.cd_t, rel=1e-12, abs=1e-300)
    assert b.par == pytest.approx(a.par, rel=1e-12, abs=1e-12)
    assert -100 - 1e-9 <= a.par <= 100 + 1e-9
    assert a.cd_a >= abs(a.cd_t) - 1e-15


def test_metrics_row_order():
    r = MetricsReport(1.0, 2.0, 3.0, 4.0, 5.0)
    assert r.row() == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert MetricsReport.FIELDS[-1] == "focality_ratio"
