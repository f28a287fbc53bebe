"""Bilinear/trilinear finite elements for the forward problem.

Solves ``div(sigma grad phi) = 0`` with point-current Neumann data on the
free boundary and ``phi = 0`` on the grounded boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import ConductivityField, ElectrodeMontage, Mesh, element_signs, shape_derivatives

GAUSS = 1.0 / math.sqrt(3.0)


class ConvergenceError(RuntimeError):
    """Iterative solve did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def gauss_points(dim: int) -> np.ndarray:
    """Tensor 2-point Gauss rule on ``[-1, 1]^dim``; all weights are 1."""
    return np.array(np.meshgrid(*[[-GAUSS, GAUSS]] * dim, indexing="ij")).reshape(dim, -1).T


def _physical_gradients(mesh: Mesh):
    """Yield ``(det J, grad N)`` per Gauss point; grad N has shape (N, d, nodes)."""
    signs = element_signs(mesh.dimension)
    coords = mesh.nodes[mesh.elements]
    for gp in gauss_points(mesh.dimension):
        dndxi = shape_derivatives(signs, gp)
        jac = np.einsum("ak,eal->ekl", dndxi, coords)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            bad = int(np.flatnonzero(det <= 0)[0])
            raise np.linalg.LinAlgError(f"singular or inverted Jacobian in element {bad}")
        inv = np.linalg.inv(jac)
        yield det, np.einsum("elk,ak->ela", inv, dndxi)


def element_stiffness(mesh: Mesh, sigma: ConductivityField) -> np.ndarray:
    """Local stiffness matrices, shape ``(N, nodes_per_element, nodes_per_element)``."""
    nn = mesh.elements.shape[1]
    ke = np.zeros((mesh.n_elements, nn, nn))
    for det, grad in _physical_gradients(mesh):
        ke += det[:, None, None] * np.einsum("eia,eij,ejb->eab", grad, sigma.tensors, grad)
    return ke


@dataclass(frozen=True, eq=False)
class StiffnessSystem:
    """Assembled stiffness matrix with grounded nodes eliminated.

    ``K`` acts on free nodes only; ``dof_map[node]`` is the row of a free
    node and -1 for grounded ones. ``K_full`` keeps the unreduced matrix for
    Dirichlet lifting.
    """

    K: sp.csr_matrix
    K_full: sp.csr_matrix
    free_nodes: np.ndarray
    dof_map: np.ndarray
    diagonal: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free_nodes)

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        return np.asarray(nodal)[self.free_nodes]

    def expand(self, free_values: np.ndarray, dirichlet_values: np.ndarray | None = None) -> np.ndarray:
        n = len(self.dof_map)
        full = np.zeros(n) if dirichlet_values is None else np.array(dirichlet_values, dtype=float)
        full[self.free_nodes] = free_values
        return full


def assemble_stiffness(mesh: Mesh, sigma: ConductivityField, eliminate_dirichlet: bool = True) -> StiffnessSystem:
    if len(sigma) != mesh.n_elements:
        raise ValueError("conductivity field does not match the mesh")
    ke = element_stiffness(mesh, sigma)
    nn = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, nn, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nn)).ravel()
    K_full = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
    K_full.sum_duplicates()
    if eliminate_dirichlet:
        free = np.setdiff1d(np.arange(mesh.n_nodes), mesh.dirichlet_nodes)
    else:
        free = np.arange(mesh.n_nodes)
    dof_map = -np.ones(mesh.n_nodes, dtype=np.int64)
    dof_map[free] = np.arange(len(free))
    K = K_full[free][:, free].tocsr()
    # exact symmetry regardless of summation order
    K = ((K + K.T) * 0.5).tocsr()
    return StiffnessSystem(K=K, K_full=K_full, free_nodes=free, dof_map=dof_map, diagonal=K.diagonal())


def neumann_load(system: StiffnessSystem, montage: ElectrodeMontage, reduced_currents) -> np.ndarray:
    """Point loads over free dofs for the reduced electrode currents (A)."""
    reduced = np.asarray(reduced_currents, dtype=float).ravel()
    if len(reduced) != montage.n_electrodes - 1:
        raise ValueError(f"expected {montage.n_electrodes - 1} reduced currents, got {len(reduced)}")
    if not np.all(np.isfinite(reduced)):
        raise ValueError("currents must be finite")
    rows = system.dof_map[montage.electrode_nodes]
    if np.any(rows < 0):
        raise ValueError("electrode node lies on the Dirichlet boundary")
    load = np.zeros(system.n_free)
    np.add.at(load, rows, montage.full_protocol(reduced))
    return load


@dataclass(frozen=True)
class ForwardSolution:
    phi: np.ndarray
    residual_norm: float
    iterations: int


def pcg(K, b, diagonal, tol: float = 1e-10, max_iter: int | None = None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, relative_residual, iterations)``; the residual is the true
    ``||b - K x|| / ||b||`` of the returned iterate.
    """
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0.0, 0
    minv = 1.0 / diagonal
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        if np.linalg.norm(r) <= tol * bnorm:
            true_res = np.linalg.norm(b - K @ x) / bnorm
            if true_res <= tol:
                return x, true_res, it
            # recurrence drifted; restart from the current iterate
            r = b - K @ x
            z = minv * r
            p = z.copy()
            rz = r @ z
        q = K @ p
        step = rz / (p @ q)
        x += step * p
        r -= step * q
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    res = np.linalg.norm(b - K @ x) / bnorm
    if res <= tol:
        return x, res, it
    raise ConvergenceError("CG did not converge", res, it)


def solve_forward(system: StiffnessSystem, load, tol: float = 1e-10, max_iter: int | None = None) -> ForwardSolution:
    """Potential on free dofs for a given load vector."""
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    load = np.asarray(load, dtype=float)
    if load.shape != (system.n_free,):
        raise ValueError(f"load has shape {load.shape}, expected ({system.n_free},)")
    phi, res, it = pcg(system.K, load, system.diagonal, tol=tol, max_iter=max_iter)
    return ForwardSolution(phi=phi, residual_norm=res, iterations=it)


def element_gradient_mean(mesh: Mesh, sigma: ConductivityField, phi_nodal) -> np.ndarray:
    """Element-mean current density ``sigma grad phi``, shape ``(N, d)``.

    ``phi_nodal`` holds values at every mesh node (grounded nodes included).
    """
    phi_nodal = np.asarray(phi_nodal, dtype=float)
    if phi_nodal.shape != (mesh.n_nodes,):
        raise ValueError(f"potential has shape {phi_nodal.shape}, expected ({mesh.n_nodes},)")
    phi_e = phi_nodal[mesh.elements]
    acc = np.zeros((mesh.n_elements, mesh.dimension))
    for det, grad in _physical_gradients(mesh):
        acc += det[:, None] * np.einsum("ela,ea->el", grad, phi_e)
    mean_grad = acc / mesh.element_volume[:, None]
    return np.einsum("eij,ej->ei", sigma.tensors, mean_grad)


def current_density(mesh: Mesh, sigma: ConductivityField, system: StiffnessSystem,
                    solution: ForwardSolution) -> np.ndarray:
    return element_gradient_mean(mesh, sigma, system.expand(solution.phi))


def face_normals(mesh: Mesh, mask: np.ndarray | None = None) -> np.ndarray:
    """Outward unit normals of (axis-aligned or planar) boundary faces."""
    fnodes = mesh.nodes[mesh.face_nodes(mask)]
    faces = mesh.boundary_faces if mask is None else mesh.boundary_faces[mask]
    cent = mesh.centroids()[faces[:, 0]]
    if mesh.dimension == 2:
        t = fnodes[:, 1] - fnodes[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(fnodes[:, 1] - fnodes[:, 0], fnodes[:, 3] - fnodes[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = np.einsum("ij,ij->i", n, fnodes.mean(axis=1) - cent) < 0
    n[flip] *= -1
    return n


def neumann_flux_load(mesh: Mesh, flux) -> np.ndarray:
    """Nodal load ``int_Gamma g psi`` for a distributed flux ``g(x, n)``.

    Uses a 2-point Gauss rule per face direction on the Neumann faces. Only
    meant for manufactured-solution checks; electrodes use point loads.
    """
    mask = ~mesh.face_dirichlet
    fnodes = mesh.face_nodes(mask)
    coords = mesh.nodes[fnodes]
    normals = face_normals(mesh, mask)
    load = np.zeros(mesh.n_nodes)
    if mesh.dimension == 2:
        length = np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        for t in (-GAUSS, GAUSS):
            w = np.array([(1 - t) / 2, (1 + t) / 2])
            x = w[0] * coords[:, 0] + w[1] * coords[:, 1]
            g = flux(x, normals)
            for a in range(2):
                np.add.at(load, fnodes[:, a], g * w[a] * length / 2)
    else:
        # planar quads in node order 0-1-2-3 around the face; bilinear map
        signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
        for gp in gauss_points(2):
            w = (1 + signs[:, 0] * gp[0]) * (1 + signs[:, 1] * gp[1]) / 4
            x = np.einsum("a,fad->fd", w, coords)
            dxi = np.einsum("a,fad->fd", signs[:, 0] * (1 + signs[:, 1] * gp[1]) / 4, coords)
            deta = np.einsum("a,fad->fd", signs[:, 1] * (1 + signs[:, 0] * gp[0]) / 4, coords)
            area = np.linalg.norm(np.cross(dxi, deta), axis=1)
            g = flux(x, normals)
            for a in range(4):
                np.add.at(load, fnodes[:, a], g * w[a] * area)
    return load


def solve_with_dirichlet(system: StiffnessSystem, nodal_load, dirichlet_values,
                         tol: float = 1e-10) -> np.ndarray:
    """Solve with non-homogeneous Dirichlet data by lifting; returns nodal potential."""
    g = np.asarray(dirichlet_values, dtype=float)
    lifted = np.zeros(len(system.dof_map))
    grounded = system.dof_map < 0
    lifted[grounded] = g[grounded]
    rhs = system.restrict(np.asarray(nodal_load) - system.K_full @ lifted)
    sol = solve_forward(system, rhs, tol=tol)
    return system.expand(sol.phi, lifted)
