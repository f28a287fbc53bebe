"""Bipolar baseline montage and focality/orientation metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import Mesh, TargetSpec


@dataclass(frozen=True)
class MetricsReport:
    """Volume-weighted current-density summary of one protocol (A/m^2, %).

    ``focality_ratio`` (cd_a over the non-target mean) is a convenience
    scalar for trend checks, not a standard tDCS metric.
    """

    cd_a: float
    nontarget_mean: float
    cd_t: float
    par: float | None
    focality_ratio: float | None

    FIELDS = ("cd_a", "nontarget_mean", "cd_t", "par", "focality_ratio")

    def row(self) -> list:
        d = asdict(self)
        return [d["cd_a"], d["nontarget_mean"], d["cd_t"], d["par"], d["focality_ratio"]]


def m2e_protocol(protocol, total: float = 1.0) -> np.ndarray:
    """Keep only the strongest anode and cathode, driven at ``+/- total``."""
    protocol = np.asarray(protocol, dtype=float)
    if not (protocol.max(initial=0.0) > 0 and protocol.min(initial=0.0) < 0):
        raise ValueError("no bipolar pair: protocol needs a positive and a negative current")
    out = np.zeros_like(protocol)
    out[int(np.argmax(protocol))] = total
    out[int(np.argmin(protocol))] = -total
    return out


def compute_metrics(B, currents, target: TargetSpec, mesh: Mesh, region=None) -> MetricsReport:
    """Metrics of the field ``B @ currents``.

    ``region`` restricts the non-target average to a subset of elements
    (e.g. the brain); by default every non-target element counts.
    """
    J = (np.asarray(B) @ np.asarray(currents, dtype=float)).reshape(mesh.n_elements, mesh.dimension)
    vol = mesh.element_volume
    t = target.target_elements
    mag = np.linalg.norm(J, axis=1)
    vt = vol[t]
    cd_a = float(vt @ mag[t] / vt.sum())
    cd_t = float(vt @ np.einsum("ij,ij->i", J[t], target.target_vectors) / vt.sum())
    rest = np.ones(mesh.n_elements, dtype=bool) if region is None else np.isin(np.arange(mesh.n_elements), region)
    rest[t] = False
    nontarget = float(vol[rest] @ mag[rest] / vol[rest].sum()) if rest.any() else 0.0
    par = 100.0 * cd_t / cd_a if cd_a > 0 else None
    focality = cd_a / nontarget if nontarget > 0 else None
    return MetricsReport(cd_a=cd_a, nontarget_mean=nontarget, cd_t=cd_t, par=par, focality_ratio=focality)
