"""Electrode-to-brain transfer matrix, target field and constraint weights."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fem import ConvergenceError, assemble_stiffness, element_gradient_mean, neumann_load, solve_forward
from .geometry import BRAIN_LABELS, ConductivityField, ElectrodeMontage, Mesh, TargetSpec


def build_transfer_matrix(system, montage: ElectrodeMontage, mesh: Mesh, sigma: ConductivityField,
                          tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Dense ``(d*N, S-1)`` matrix of element-mean current densities per unit current.

    Column ``j`` is the field for +1 A at the ``j``-th active electrode and
    -1 A at the reference. Element blocks of ``d`` rows are contiguous.
    """
    montage.validate(mesh)
    n_cols = montage.n_electrodes - 1
    d = mesh.dimension
    B = np.empty((d * mesh.n_elements, n_cols))
    for j in range(n_cols):
        unit = np.zeros(n_cols)
        unit[j] = 1.0
        try:
            sol = solve_forward(system, neumann_load(system, montage, unit), tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            raise ConvergenceError(f"forward solve for electrode column {j} failed",
                                   exc.residual, exc.iterations) from exc
        B[:, j] = element_gradient_mean(mesh, sigma, system.expand(sol.phi)).ravel()
    return B


def build_target_field(mesh: Mesh, target: TargetSpec, brain_labels=BRAIN_LABELS) -> np.ndarray:
    """Length ``d*N`` vector holding the target direction on target elements."""
    target.validate(mesh, brain_labels)
    e = np.zeros((mesh.n_elements, mesh.dimension))
    e[target.target_elements] = target.target_vectors
    return e.ravel()


def build_weight_field(mesh: Mesh, target: TargetSpec, omega_low: float = 1e-3,
                       brain_labels=BRAIN_LABELS, mode: str = "brain") -> np.ndarray:
    """Per-element state-constraint weights.

    ``mode="brain"`` keeps weight 1 only on non-target brain elements;
    ``mode="all"`` uses weight 1 on every non-target element. Target
    elements always get ``omega_low``.
    """
    if not 0 < omega_low < 1:
        raise ValueError("omega_low must lie in (0, 1)")
    if mode == "brain":
        w = np.where(np.isin(mesh.element_compartment, list(brain_labels)), 1.0, omega_low)
    elif mode == "all":
        w = np.ones(mesh.n_elements)
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    w[target.target_elements] = omega_low
    return w


class TransferOperator(TransformerMixin, BaseEstimator):
    """Forward model mapping reduced electrode currents to element current densities.

    ``fit`` assembles the stiffness matrix once and runs one forward solve per
    active electrode; ``transform`` applies the resulting matrix to rows of
    reduced currents.

    Parameters
    ----------
    tol : relative residual for the CG solves.
    max_iter : CG iteration cap per column (default ``10 * n_free``).
    """

    def __init__(self, tol: float = 1e-10, max_iter: int | None = None):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, mesh: Mesh, conductivity: ConductivityField, montage: ElectrodeMontage):
        self.system_ = assemble_stiffness(mesh, conductivity)
        self.matrix_ = build_transfer_matrix(self.system_, montage, mesh, conductivity,
                                             tol=self.tol, max_iter=self.max_iter)
        self.matrix_.setflags(write=False)
        self.dimension_ = mesh.dimension
        self.n_elements_ = mesh.n_elements
        self.n_electrodes_ = montage.n_electrodes
        self.n_features_in_ = montage.n_electrodes - 1
        return self

    def transform(self, X):
        """Current densities for each row of reduced currents, shape ``(n, d*N)``."""
        check_is_fitted(self, "matrix_")
        X = check_array(X, ensure_2d=False)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} reduced currents, got {X.shape[1]}")
        out = X @ self.matrix_.T
        return out[0] if single else out

    def field(self, currents) -> np.ndarray:
        """Current density of one protocol as an ``(N, d)`` array."""
        return self.transform(np.asarray(currents, dtype=float)).reshape(self.n_elements_, self.dimension_)
