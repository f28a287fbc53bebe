import math

import numpy as np
import pytest

from tesopt.geometry import (
    ElectrodeMontage, MeshError, TargetSpec, assign_conductivity, build_box_mesh, build_layered_disk_mesh,
    neumann_boundary_path, orientation_vectors, place_electrodes, ring_targets, select_target,
)
from tesopt.fem import _physical_gradients

from helpers import CONDUCTIVITIES, PHANTOM_LAYERS

RATIOS = [(r / 0.092, lab) for r, lab in PHANTOM_LAYERS]


def test_single_layer_coarse_disk():
    m = build_layered_disk_mesh([(1.0, "brain")], 0.5)
    assert np.all(m.element_volume > 0)
    # 12 of the 16 cells of the 4x4 grid over [-1, 1]^2 are kept
    assert m.n_elements == 12
    assert m.element_volume.sum() == pytest.approx(12 * 0.25)
    assert m.face_dirichlet.any()


def test_two_layer_labels_follow_centroid_radius():
    m = build_layered_disk_mesh([(0.5, "brain"), (1.0, "skin")], 0.05)
    rho = np.linalg.norm(m.centroids(), axis=1)
    assert np.all(m.element_compartment[rho < 0.5] == "brain")
    assert np.all(m.element_compartment[rho >= 0.5] == "skin")


@pytest.mark.parametrize("h", [1 / 20, 1 / 25, 1 / 40, 1 / 64])
def test_layered_disk_area(h):
    m = build_layered_disk_mesh(RATIOS, h)
    assert abs(m.element_volume.sum() / math.pi - 1) < 5e-3
    assert set(m.compartment_labels()) == {lab for _, lab in RATIOS}


def test_mesh_invariants():
    m = build_layered_disk_mesh(RATIOS, 1 / 30)
    assert m.elements.min() >= 0 and m.elements.max() < m.n_nodes
    for det, _ in _physical_gradients(m):
        assert np.all(det > 0)
    # every boundary face is classified exactly once
    assert len(m.face_dirichlet) == len(m.boundary_faces)
    assert 0 < m.face_dirichlet.sum() < len(m.face_dirichlet)
    assert len(np.intersect1d(m.neumann_nodes, m.dirichlet_nodes)) == 0


def test_dirichlet_arc_sits_at_the_bottom():
    m = build_layered_disk_mesh(RATIOS, 1 / 40)
    pts = m.nodes[m.dirichlet_nodes]
    theta = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
    assert np.all((theta > -100) & (theta < -80))


def test_disk_errors():
    with pytest.raises(MeshError, match="resolution too coarse"):
        build_layered_disk_mesh([(0.01, "brain"), (1.0, "skin")], 0.05)
    with pytest.raises(MeshError):
        build_layered_disk_mesh([(1.0, "brain")], 0.05, (0.2, 0.2))
    with pytest.raises(MeshError):
        build_layered_disk_mesh([(1.0, "a"), (0.5, "b")], 0.05)
    with pytest.raises(MeshError):
        build_layered_disk_mesh([(1.0, "a")], 0.0)


def test_disk_is_deterministic():
    a = build_layered_disk_mesh(RATIOS, 1 / 30)
    b = build_layered_disk_mesh(RATIOS, 1 / 30)
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.element_compartment, b.element_compartment)
    assert np.array_equal(place_electrodes(a, 16).electrode_nodes, place_electrodes(b, 16).electrode_nodes)


@pytest.mark.parametrize("extent,n,n_el,n_nodes", [([1, 1], [2, 2], 4, 9), ([1, 1, 1], [1, 1, 1], 1, 8)])
def test_box_counts(extent, n, n_el, n_nodes):
    m = build_box_mesh(extent, n)
    assert (m.n_elements, m.n_nodes) == (n_el, n_nodes)


def test_box_boundary_faces():
    m = build_box_mesh([1, 1], [10, 10])
    assert len(m.boundary_faces) == 40
    assert m.face_dirichlet.sum() == 10


def test_box_errors():
    with pytest.raises(MeshError):
        build_box_mesh([1, 0], [2, 2])
    with pytest.raises(MeshError):
        build_box_mesh([1, 1], [0, 2])


def test_box_volume_3d():
    m = build_box_mesh([0.2, 0.3, 0.4], [2, 3, 4])
    assert m.element_volume.sum() == pytest.approx(0.024)


def test_conductivity_scalars():
    m = build_layered_disk_mesh([(0.5, "white_matter"), (1.0, "skin")], 0.1)
    sig = assign_conductivity(m, CONDUCTIVITIES)
    skin = m.element_compartment == "skin"
    assert np.allclose(sig.tensors[skin], 0.43 * np.eye(2))
    assert np.allclose(sig.tensors[~skin], 0.14 * np.eye(2))
    assert sig.sigma_min == pytest.approx(0.14)


def test_conductivity_anisotropic_and_invalid():
    m = build_box_mesh([1, 1], [2, 2])
    sig = assign_conductivity(m, {"brain": [0.14, 0.014]})
    assert np.allclose(sig.tensors[0], np.diag([0.14, 0.014]))
    with pytest.raises(ValueError):
        assign_conductivity(m, {"brain": [0.14, -0.01]})
    with pytest.raises(ValueError):
        assign_conductivity(m, {"brain": [[1.0, 0.5], [0.0, 1.0]]})
    with pytest.raises(KeyError, match="brain"):
        assign_conductivity(m, {"skin": 0.43})


def test_two_electrodes_on_three_free_sides_are_extreme():
    m = build_box_mesh([1, 1], [4, 4], dirichlet_face=(0, 0))
    mont = place_electrodes(m, 2)
    path = neumann_boundary_path(m)
    free = np.isin(path, m.neumann_nodes)
    idx = [int(np.flatnonzero(path == n)[0]) for n in mont.electrode_nodes]
    # first and last free node on the path
    assert sorted(idx) == [np.flatnonzero(free)[0], np.flatnonzero(free)[-1]]
    mont.validate(m)


def test_many_electrodes_are_distinct_and_on_gamma():
    m = build_layered_disk_mesh(RATIOS, 1 / 80)
    mont = place_electrodes(m, 74)
    assert len(np.unique(mont.electrode_nodes)) == 74
    mont.validate(m)
    assert mont.reference_index == 73


def test_electrode_spacing_is_even_in_arc_length():
    m = build_layered_disk_mesh(RATIOS, 1 / 60)
    path = neumann_boundary_path(m)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(m.nodes[path], axis=0), axis=1))])
    pos = s[[int(np.flatnonzero(path == n)[0]) for n in place_electrodes(m, 12).electrode_nodes]]
    gaps = np.diff(pos)
    assert np.all(gaps > 0)
    # stations are nominally s_total / 11 apart; snapping to nodes moves each by < one edge
    assert np.allclose(gaps, s[-1] / 11, atol=2 / 60)


def test_too_many_electrodes():
    m = build_box_mesh([1, 1], [2, 2])
    with pytest.raises(ValueError):
        place_electrodes(m, 50)


def test_electrodes_in_3d():
    m = build_box_mesh([1, 1, 1], [3, 3, 3], dirichlet_face=(2, 0))
    mont = place_electrodes(m, 6)
    mont.validate(m)
    assert len(np.unique(mont.electrode_nodes)) == 6


def test_montage_protocol_roundtrip():
    mont = ElectrodeMontage(np.array([3, 5, 7]))
    full = mont.full_protocol([2.0, -1.0])
    assert full.tolist() == [2.0, -1.0, -1.0]
    assert mont.reduce(full).tolist() == [2.0, -1.0]
    with pytest.raises(ValueError):
        ElectrodeMontage(np.array([1, 1]))
    with pytest.raises(ValueError):
        ElectrodeMontage(np.array([1]))


def test_montage_rejects_dirichlet_node():
    m = build_box_mesh([1, 1], [2, 2])
    mont = ElectrodeMontage(np.array([m.dirichlet_nodes[0], m.neumann_nodes[0]]))
    with pytest.raises(ValueError, match="Dirichlet"):
        mont.validate(m)


def test_target_spec_checks():
    with pytest.raises(ValueError):
        TargetSpec(np.array([], dtype=int), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        TargetSpec(np.array([0]), np.array([[1.0, 1.0]]))
    t = TargetSpec(np.array([1, 2]), np.array([0.0, 1.0]))
    assert t.target_vectors.shape == (2, 2)


def test_target_outside_brain_is_rejected():
    m = build_layered_disk_mesh([(0.5, "brain"), (1.0, "skin")], 0.1)
    skin = int(m.elements_in(["skin"])[0])
    with pytest.raises(ValueError, match="outside the brain"):
        TargetSpec(np.array([skin]), np.array([1.0, 0.0])).validate(m)


def test_orientation_vectors_are_tangent_and_inward():
    m = build_layered_disk_mesh(RATIOS, 1 / 30)
    el = np.arange(0, m.n_elements, 37)
    r = m.centroids()[el]
    tan = orientation_vectors(m, el, "tangential")
    rad = orientation_vectors(m, el, "radial")
    assert np.allclose(np.linalg.norm(tan, axis=1), 1)
    assert np.allclose(np.einsum("ij,ij->i", tan, r), 0, atol=1e-12)
    assert np.all(np.einsum("ij,ij->i", rad, r) < 0)
    # counter-clockwise: z-component of r x t is positive
    assert np.all(r[:, 0] * tan[:, 1] - r[:, 1] * tan[:, 0] > 0)


def test_select_target_box_and_fallback():
    m = build_layered_disk_mesh([(0.8, "brain"), (1.0, "skin")], 0.05)
    t = select_target(m, [0.0, 0.5], [0.1, 0.1], "tangential")
    c = m.centroids()[t.target_elements]
    assert len(t.target_elements) == 4
    assert np.all(np.abs(c - [0.0, 0.5]) <= 0.05 + 1e-12)
    one = select_target(m, [0.013, 0.5], 0.0)
    assert len(one.target_elements) == 1


def test_ring_targets():
    m = build_layered_disk_mesh([(0.8, "brain"), (1.0, "skin")], 0.05)
    ts = ring_targets(m, 0.5, 8)
    assert len(ts) == 8
    assert len({int(t.target_elements[0]) for t in ts}) == 8
