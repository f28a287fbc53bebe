"""Structured phantom meshes, conductivity fields and electrode placement.

All quantities are SI: coordinates in m, conductivities in S/m, angles in rad.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

# Reference-element node signs; node order matches VTK_QUAD / VTK_HEXAHEDRON.
QUAD_SIGNS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
HEX_SIGNS = np.array(
    [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
    dtype=float,
)
QUAD_FACES = ((0, 1), (1, 2), (2, 3), (3, 0))
HEX_FACES = (
    (0, 3, 7, 4), (1, 2, 6, 5),
    (0, 1, 5, 4), (3, 2, 6, 7),
    (0, 1, 2, 3), (4, 5, 6, 7),
)

BRAIN_LABELS = frozenset({"gray_matter", "white_matter", "brain"})

# Compartment conductivities in S/m used for the layered head phantom.
DEFAULT_CONDUCTIVITIES = {
    "skin": 0.43,
    "skull_compacta": 0.007,
    "skull_spongiosa": 0.025,
    "csf": 1.79,
    "gray_matter": 0.33,
    "white_matter": 0.14,
}

# Head-phantom layers (outer radius in m, label), innermost first.
HEAD_LAYERS = (
    (0.070, "white_matter"),
    (0.078, "gray_matter"),
    (0.080, "csf"),
    (0.0815, "skull_compacta"),
    (0.084, "skull_spongiosa"),
    (0.0855, "skull_compacta"),
    (0.092, "skin"),
)


class MeshError(ValueError):
    """Raised for invalid mesh construction requests."""


def element_signs(dim: int) -> np.ndarray:
    if dim == 2:
        return QUAD_SIGNS
    if dim == 3:
        return HEX_SIGNS
    raise MeshError(f"unsupported dimension {dim}")


def local_faces(dim: int):
    return QUAD_FACES if dim == 2 else HEX_FACES


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured quadrilateral (2D) or hexahedral (3D) volume mesh.

    ``boundary_faces`` holds ``(element, local_face)`` pairs and
    ``face_dirichlet`` flags the faces belonging to the grounded part of the
    boundary; all other boundary faces carry Neumann data.
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    element_compartment: np.ndarray
    boundary_faces: np.ndarray
    face_dirichlet: np.ndarray
    element_volume: np.ndarray
    center: np.ndarray | None = None
    layers: tuple = ()

    def __post_init__(self):
        for name in ("nodes", "elements", "element_compartment", "boundary_faces",
                     "face_dirichlet", "element_volume"):
            getattr(self, name).setflags(write=False)
        n_nodes = len(self.nodes)
        if self.elements.min() < 0 or self.elements.max() >= n_nodes:
            raise MeshError("element node index out of range")
        if not self.face_dirichlet.any():
            raise MeshError("Dirichlet boundary is empty; forward solution would not be unique")
        if np.any(self.element_volume <= 0):
            raise MeshError("non-positive element volume")

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def face_nodes(self, mask: np.ndarray | None = None) -> np.ndarray:
        """Global node indices of boundary faces, shape ``(n_faces, nodes_per_face)``."""
        table = np.array(local_faces(self.dimension))
        faces = self.boundary_faces if mask is None else self.boundary_faces[mask]
        return self.elements[faces[:, 0][:, None], table[faces[:, 1]]]

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.face_nodes(self.face_dirichlet))

    @property
    def neumann_nodes(self) -> np.ndarray:
        """Nodes on the Neumann boundary that are not grounded."""
        gamma = np.unique(self.face_nodes(~self.face_dirichlet))
        return np.setdiff1d(gamma, self.dirichlet_nodes)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def compartment_labels(self) -> list[str]:
        return sorted(set(self.element_compartment.tolist()))

    def elements_in(self, labels) -> np.ndarray:
        return np.flatnonzero(np.isin(self.element_compartment, list(labels)))


def _boundary_faces(elements: np.ndarray, dim: int) -> np.ndarray:
    table = local_faces(dim)
    n_el = len(elements)
    keys = {}
    for lf, loc in enumerate(table):
        fn = np.sort(elements[:, list(loc)], axis=1)
        for e in range(n_el):
            key = tuple(fn[e])
            if key in keys:
                keys[key] = None
            else:
                keys[key] = (e, lf)
    faces = [v for v in keys.values() if v is not None]
    faces.sort()
    return np.array(faces, dtype=np.int64).reshape(-1, 2)


def _element_volumes(nodes: np.ndarray, elements: np.ndarray, dim: int) -> np.ndarray:
    signs = element_signs(dim)
    g = 1.0 / math.sqrt(3.0)
    coords = nodes[elements]
    vol = np.zeros(len(elements))
    for gp in np.array(np.meshgrid(*[[-g, g]] * dim, indexing="ij")).reshape(dim, -1).T:
        dndxi = shape_derivatives(signs, gp)
        jac = np.einsum("ak,eal->ekl", dndxi, coords)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            raise MeshError("element Jacobian determinant is not positive")
        vol += det
    return vol


def shape_derivatives(signs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """dN_a/dxi_k for tensor-product linear shape functions at point ``xi``."""
    factors = (1.0 + signs * xi) / 2.0
    d = signs.shape[1]
    out = np.empty_like(signs)
    for k in range(d):
        others = np.prod(np.delete(factors, k, axis=1), axis=1)
        out[:, k] = signs[:, k] / 2.0 * others
    return out


def _grid_elements(shape: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Element connectivity of a tensor grid with ``shape`` cells per axis.

    Returns connectivity into the node grid of shape ``shape + 1`` (C order)
    and the per-element cell multi-index.
    """
    dim = len(shape)
    node_shape = tuple(s + 1 for s in shape)
    cells = np.array(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")).reshape(dim, -1).T
    signs = element_signs(dim)
    offsets = ((signs + 1) / 2).astype(np.int64)
    idx = cells[:, None, :] + offsets[None, :, :]
    conn = np.ravel_multi_index(tuple(idx[..., k] for k in range(dim)), node_shape)
    return conn, cells


def _compact(nodes: np.ndarray, elements: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    used = np.unique(elements)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return nodes[used], remap[elements]


def build_box_mesh(
    extent: Sequence[float],
    n: Sequence[int],
    compartment_fn: Callable[[np.ndarray], str] | None = None,
    dirichlet_face: tuple[int, int] = (0, 0),
    origin: Sequence[float] | None = None,
) -> Mesh:
    """Tensor-product box mesh with one grounded face.

    Parameters
    ----------
    extent : per-axis edge lengths in m.
    n : cells per axis.
    compartment_fn : maps an element centroid to a label (default ``"brain"``).
    dirichlet_face : ``(axis, side)`` with side 0 for the minimum face.
    """
    extent = np.asarray(extent, dtype=float)
    n = tuple(int(v) for v in n)
    dim = len(extent)
    if dim not in (2, 3) or len(n) != dim:
        raise MeshError("extent and n must both have 2 or 3 entries")
    if np.any(extent <= 0):
        raise MeshError("box extent must be positive on every axis")
    if min(n) < 1:
        raise MeshError("need at least one cell per axis")
    axis, side = dirichlet_face
    if not (0 <= axis < dim and side in (0, 1)):
        raise MeshError(f"invalid dirichlet_face {dirichlet_face}")
    origin = np.zeros(dim) if origin is None else np.asarray(origin, dtype=float)

    axes = [origin[k] + np.linspace(0.0, extent[k], n[k] + 1) for k in range(dim)]
    nodes = np.array(np.meshgrid(*axes, indexing="ij")).reshape(dim, -1).T
    elements, _ = _grid_elements(n)
    centroids = nodes[elements].mean(axis=1)
    fn = compartment_fn or (lambda c: "brain")
    labels = np.array([fn(c) for c in centroids])

    faces = _boundary_faces(elements, dim)
    table = np.array(local_faces(dim))
    fn_coords = nodes[elements[faces[:, 0][:, None], table[faces[:, 1]]]]
    target = origin[axis] + side * extent[axis]
    tol = 1e-9 * extent[axis]
    dirichlet = np.all(np.abs(fn_coords[..., axis] - target) < tol, axis=1)
    return Mesh(
        dimension=dim,
        nodes=nodes,
        elements=elements,
        element_compartment=labels,
        boundary_faces=faces,
        face_dirichlet=dirichlet,
        element_volume=_element_volumes(nodes, elements, dim),
    )


def _angle_in_arc(theta: np.ndarray, arc: tuple[float, float]) -> np.ndarray:
    start, stop = arc
    width = stop - start
    return np.mod(theta - start, 2 * math.pi) <= width


def _area_matched_radius(rho: np.ndarray, h: float, outer: float) -> float:
    """Centroid-radius cut whose kept cells best match the disk area.

    Cells with equal centroid radius are kept or dropped together, so the
    grid symmetry survives.
    """
    key = np.round(rho / h, 9)
    radii, counts = np.unique(key, return_counts=True)
    covered = np.cumsum(counts) * h * h
    best = int(np.argmin(np.abs(covered - math.pi * outer ** 2)))
    return (radii[best] + 1e-9) * h


def build_layered_disk_mesh(
    layer_radii: Sequence[tuple[float, str]],
    h: float,
    dirichlet_arc: tuple[float, float] = (math.radians(-95.0), math.radians(-85.0)),
) -> Mesh:
    """Stair-cased quadrilateral mesh of a concentric multi-layer disk.

    Cells of a uniform grid over ``[-R, R]^2`` are kept in order of centroid
    radius until their total area best matches ``pi R^2``, and labeled by the
    layer containing the centroid. Outer-boundary faces whose midpoint angle falls within
    ``dirichlet_arc`` (radians, counter-clockwise from +x) are grounded.
    """
    radii = np.array([r for r, _ in layer_radii], dtype=float)
    labels = [lab for _, lab in layer_radii]
    if len(radii) == 0:
        raise MeshError("at least one layer is required")
    if radii[0] <= 0 or np.any(np.diff(radii) <= 0):
        raise MeshError("layer radii must be positive and strictly increasing")
    if h <= 0:
        raise MeshError("element size h must be positive")
    if h > radii[0]:
        raise MeshError(f"resolution too coarse: h={h} exceeds innermost layer thickness {radii[0]}")
    arc = (float(dirichlet_arc[0]), float(dirichlet_arc[1]))
    width = arc[1] - arc[0]
    if not (0 < width < 2 * math.pi):
        raise MeshError("dirichlet_arc must be a nonzero proper sub-arc of the outer boundary")

    outer = radii[-1]
    n = max(1, int(math.ceil(2 * outer / h)))
    axis = np.linspace(-outer, outer, n + 1)
    grid_nodes = np.array(np.meshgrid(axis, axis, indexing="ij")).reshape(2, -1).T
    conn, _ = _grid_elements((n, n))
    rho = np.linalg.norm(grid_nodes[conn].mean(axis=1), axis=1)
    keep = rho <= _area_matched_radius(rho, axis[1] - axis[0], outer)
    nodes, elements = _compact(grid_nodes, conn[keep])
    layer = np.minimum(np.searchsorted(radii, rho[keep], side="right"), len(radii) - 1)
    element_labels = np.array([labels[i] for i in layer])

    faces = _boundary_faces(elements, 2)
    mids = nodes[elements[faces[:, 0][:, None], np.array(QUAD_FACES)[faces[:, 1]]]].mean(axis=1)
    theta = np.arctan2(mids[:, 1], mids[:, 0])
    dirichlet = _angle_in_arc(theta, arc)
    if not dirichlet.any():
        # arc narrower than one face: ground the face nearest the arc midpoint
        mid = arc[0] + width / 2
        gap = np.abs(np.angle(np.exp(1j * (theta - mid))))
        dirichlet = gap <= gap.min() + 1e-12
    return Mesh(
        dimension=2,
        nodes=nodes,
        elements=elements,
        element_compartment=element_labels,
        boundary_faces=faces,
        face_dirichlet=dirichlet,
        element_volume=_element_volumes(nodes, elements, 2),
        center=np.zeros(2),
        layers=tuple((float(r), lab) for r, lab in layer_radii),
    )


@dataclass(frozen=True, eq=False)
class ConductivityField:
    """Per-element symmetric positive-definite conductivity tensors (S/m)."""

    tensors: np.ndarray
    sigma_min: float = field(init=False)

    def __post_init__(self):
        t = self.tensors
        if not np.allclose(t, np.swapaxes(t, 1, 2), rtol=0, atol=1e-14 * np.abs(t).max()):
            raise ValueError("conductivity tensors must be symmetric")
        eig = np.linalg.eigvalsh(t)
        if eig.min() <= 0:
            raise ValueError("conductivity tensors must be positive definite")
        object.__setattr__(self, "sigma_min", float(eig.min()))
        t.setflags(write=False)

    def __len__(self):
        return len(self.tensors)

    def scaled(self, factor: float) -> "ConductivityField":
        return ConductivityField(self.tensors * factor)


def _as_tensor(value, dim: int, label: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        tensor = float(arr) * np.eye(dim)
    elif arr.shape == (dim,):
        tensor = np.diag(arr)
    elif arr.shape == (dim, dim):
        tensor = arr.copy()
    else:
        raise ValueError(f"conductivity for {label!r} has shape {arr.shape}, expected scalar, ({dim},) or ({dim},{dim})")
    if not np.allclose(tensor, tensor.T):
        raise ValueError(f"conductivity for {label!r} is not symmetric")
    if np.linalg.eigvalsh(tensor).min() <= 0:
        raise ValueError(f"conductivity for {label!r} is not positive definite")
    return tensor


def assign_conductivity(mesh: Mesh, conductivities: Mapping[str, object]) -> ConductivityField:
    """Expand a label -> conductivity map into per-element tensors.

    Scalars become ``sigma * I``, length-d vectors a diagonal tensor and
    d x d arrays are used verbatim after an SPD check.
    """
    missing = [lab for lab in mesh.compartment_labels() if lab not in conductivities]
    if missing:
        raise KeyError(f"no conductivity given for compartment(s): {', '.join(missing)}")
    table = {lab: _as_tensor(conductivities[lab], mesh.dimension, lab) for lab in mesh.compartment_labels()}
    tensors = np.stack([table[lab] for lab in mesh.element_compartment])
    return ConductivityField(tensors)


@dataclass(frozen=True, eq=False)
class ElectrodeMontage:
    """Point electrodes on Neumann boundary nodes.

    The current at ``reference_index`` is eliminated through the zero-sum
    condition; the remaining electrodes, in order, make up the reduced
    current vector.
    """

    electrode_nodes: np.ndarray
    reference_index: int = -1

    def __post_init__(self):
        nodes = np.asarray(self.electrode_nodes, dtype=np.int64)
        object.__setattr__(self, "electrode_nodes", nodes)
        if len(nodes) < 2:
            raise ValueError("a montage needs at least two electrodes")
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("electrode nodes must be pairwise distinct")
        ref = self.reference_index % len(nodes)
        object.__setattr__(self, "reference_index", int(ref))
        nodes.setflags(write=False)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_nodes)

    @property
    def active_indices(self) -> np.ndarray:
        """Electrode indices carrying the reduced currents."""
        return np.delete(np.arange(self.n_electrodes), self.reference_index)

    def full_protocol(self, reduced) -> np.ndarray:
        """Complete reduced currents with the zero-sum reference current."""
        reduced = np.asarray(reduced, dtype=float)
        full = np.empty(self.n_electrodes)
        full[self.active_indices] = reduced
        full[self.reference_index] = -math.fsum(reduced)
        return full

    def reduce(self, protocol) -> np.ndarray:
        return np.asarray(protocol, dtype=float)[self.active_indices]

    def validate(self, mesh: Mesh) -> None:
        if np.any(self.electrode_nodes >= mesh.n_nodes) or np.any(self.electrode_nodes < 0):
            raise ValueError("electrode node index out of range")
        bad = np.intersect1d(self.electrode_nodes, mesh.dirichlet_nodes)
        if len(bad):
            raise ValueError(f"electrode node(s) {bad.tolist()} lie on the Dirichlet boundary")
        off = np.setdiff1d(self.electrode_nodes, mesh.neumann_nodes)
        if len(off):
            raise ValueError(f"electrode node(s) {off.tolist()} are not on the Neumann boundary")


def neumann_boundary_path(mesh: Mesh) -> np.ndarray:
    """Order the Neumann boundary edges of a 2D mesh into one node path.

    The path starts and ends at grounded nodes when the Dirichlet part is a
    single contiguous run, so interior path nodes are exactly the free
    boundary nodes.
    """
    if mesh.dimension != 2:
        raise ValueError("boundary paths are only defined in 2D")
    edges = mesh.face_nodes(~mesh.face_dirichlet)
    adj: dict[int, list[int]] = {}
    for a, b in edges.tolist():
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    ends = sorted(v for v, nb in adj.items() if len(nb) == 1)
    if any(len(nb) > 2 for nb in adj.values()):
        raise ValueError("Neumann boundary is not a simple curve")
    start = ends[0] if ends else min(adj)
    path = [start]
    prev, cur = -1, start
    while True:
        nxt = [v for v in adj[cur] if v != prev]
        if not nxt or nxt[0] == start:
            break
        prev, cur = cur, nxt[0]
        path.append(cur)
    if len(path) != len(adj):
        raise ValueError("Neumann boundary has several components")
    return np.array(path, dtype=np.int64)


def place_electrodes(mesh: Mesh, n_electrodes: int) -> ElectrodeMontage:
    """Place ``n_electrodes`` point electrodes evenly on the Neumann boundary.

    In 2D the nodes nearest to equal arc-length stations (end points
    included) along the boundary path are used; in 3D farthest-point
    sampling over the free boundary nodes is used instead. The last
    electrode is the reference.
    """
    free = mesh.neumann_nodes
    if n_electrodes < 2:
        raise ValueError("need at least two electrodes")
    if n_electrodes > len(free):
        raise ValueError(f"{n_electrodes} electrodes requested but only {len(free)} Neumann nodes available")

    if mesh.dimension == 2:
        path = neumann_boundary_path(mesh)
        seg = np.linalg.norm(np.diff(mesh.nodes[path], axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        is_free = np.isin(path, free)
        cand_s, cand_nodes = s[is_free], path[is_free]
        stations = np.linspace(0.0, s[-1], n_electrodes)
        chosen: list[int] = []
        taken = np.zeros(len(cand_nodes), dtype=bool)
        for st in stations:
            order = np.argsort(np.abs(cand_s - st), kind="stable")
            pick = next(i for i in order if not taken[i])
            taken[pick] = True
            chosen.append(int(cand_nodes[pick]))
        return ElectrodeMontage(np.array(chosen))

    pts = mesh.nodes[free]
    chosen_idx = [0]
    dist = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(n_electrodes - 1):
        nxt = int(np.argmax(dist))
        chosen_idx.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return ElectrodeMontage(free[np.array(chosen_idx)])


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Target elements with one unit orientation vector each."""

    target_elements: np.ndarray
    target_vectors: np.ndarray

    def __post_init__(self):
        el = np.asarray(self.target_elements, dtype=np.int64).ravel()
        vec = np.atleast_2d(np.asarray(self.target_vectors, dtype=float))
        if len(el) == 0:
            raise ValueError("target region is empty")
        if len(np.unique(el)) != len(el):
            raise ValueError("target elements must be distinct")
        if vec.shape[0] == 1 and len(el) > 1:
            vec = np.repeat(vec, len(el), axis=0)
        if vec.shape[0] != len(el):
            raise ValueError("one target vector per target element is required")
        norms = np.linalg.norm(vec, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("target vectors must have unit length")
        object.__setattr__(self, "target_elements", el)
        object.__setattr__(self, "target_vectors", vec)

    def validate(self, mesh: Mesh, brain_labels=BRAIN_LABELS) -> None:
        if self.target_elements.max() >= mesh.n_elements or self.target_elements.min() < 0:
            raise ValueError("target element index out of range")
        if self.target_vectors.shape[1] != mesh.dimension:
            raise ValueError("target vector dimension does not match the mesh")
        labels = mesh.element_compartment[self.target_elements]
        outside = sorted(set(labels.tolist()) - set(brain_labels))
        if outside:
            raise ValueError(f"target elements lie outside the brain compartment: {outside}")


def orientation_vectors(mesh: Mesh, elements: np.ndarray, orientation) -> np.ndarray:
    """Unit target vectors for ``elements``.

    ``"tangential"`` is the counter-clockwise tangent and ``"radial"`` the
    inward radial direction about the mesh center (2D); any array-like is
    normalized and broadcast.
    """
    if isinstance(orientation, str):
        if mesh.dimension != 2:
            raise ValueError("named orientations are only defined for 2D phantoms")
        center = mesh.center if mesh.center is not None else mesh.nodes.mean(axis=0)
        r = mesh.centroids()[elements] - center
        r /= np.linalg.norm(r, axis=1, keepdims=True)
        if orientation == "tangential":
            return np.column_stack([-r[:, 1], r[:, 0]])
        if orientation == "radial":
            return -r
        raise ValueError(f"unknown orientation {orientation!r}")
    v = np.asarray(orientation, dtype=float)
    v = v / np.linalg.norm(v)
    return np.repeat(v[None, :], len(elements), axis=0)


def select_target(
    mesh: Mesh,
    center: Sequence[float],
    extent: Sequence[float] | float = 0.0,
    orientation="tangential",
    brain_labels=BRAIN_LABELS,
) -> TargetSpec:
    """Brain elements whose centroid lies in the box ``center +/- extent/2``.

    Falls back to the brain element nearest ``center`` when the box holds no
    centroid.
    """
    center = np.asarray(center, dtype=float)
    half = np.broadcast_to(np.asarray(extent, dtype=float) / 2.0, center.shape)
    brain = mesh.elements_in(brain_labels)
    if len(brain) == 0:
        raise ValueError("mesh has no brain elements")
    c = mesh.centroids()[brain]
    inside = np.all(np.abs(c - center) <= half + 1e-12, axis=1)
    chosen = brain[inside]
    if len(chosen) == 0:
        chosen = brain[[int(np.argmin(np.linalg.norm(c - center, axis=1)))]]
    return TargetSpec(chosen, orientation_vectors(mesh, chosen, orientation))


def ring_targets(
    mesh: Mesh,
    radius: float,
    k: int,
    orientation="tangential",
    brain_labels=BRAIN_LABELS,
    phase: float = math.pi / 2,
) -> list[TargetSpec]:
    """``k`` single-element targets equispaced on a circle around the center."""
    if k < 1:
        raise ValueError("need at least one target")
    center = mesh.center if mesh.center is not None else mesh.nodes.mean(axis=0)
    out = []
    for j in range(k):
        th = phase + 2 * math.pi * j / k
        p = center + radius * np.array([math.cos(th), math.sin(th)])
        out.append(select_target(mesh, p, 0.0, orientation, brain_labels))
    return out
