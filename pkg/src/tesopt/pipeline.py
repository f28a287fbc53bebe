"""Scenario orchestration: mesh -> transfer matrix -> ADMM -> rescaling -> metrics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import io
from .admm import AdmmParams, OptResult, rescale_to_safety, run_admm
from .config import ScenarioConfig
from .geometry import (
    ElectrodeMontage, Mesh, TargetSpec, assign_conductivity, build_box_mesh, build_layered_disk_mesh,
    place_electrodes, ring_targets, select_target,
)
from .protocols import MetricsReport, compute_metrics, m2e_protocol
from .transfer import TransferOperator, build_target_field, build_weight_field

log = logging.getLogger(__name__)

# Optimizer currents are in mA; the transfer matrix is stored per A.
MA = 1e-3


@dataclass
class Phantom:
    mesh: Mesh
    montage: ElectrodeMontage
    B: np.ndarray  # (A/m^2) per mA


@dataclass
class MethodRun:
    method: str
    currents: np.ndarray  # applied reduced currents, mA
    protocol: np.ndarray  # applied full protocol, mA
    raw_protocol: np.ndarray  # before safety rescaling, mA
    metrics: MetricsReport
    result: OptResult | None = None
    delta: float | None = None


def build_phantom(cfg: ScenarioConfig) -> Phantom:
    g = cfg.geometry
    if g.kind == "disk":
        mesh = build_layered_disk_mesh(g.layers, g.h, g.dirichlet_arc)
    else:
        label = g.label
        mesh = build_box_mesh(g.extent, g.n, lambda c: label, g.dirichlet_face)
    sigma = assign_conductivity(mesh, cfg.conductivities)
    montage = place_electrodes(mesh, cfg.n_electrodes)
    op = TransferOperator().fit(mesh, sigma, montage)
    return Phantom(mesh=mesh, montage=montage, B=op.matrix_ * MA)


def scenario_target(cfg: ScenarioConfig, mesh: Mesh) -> TargetSpec:
    t = cfg.target
    return select_target(mesh, t.center, t.extent, t.orientation, cfg.optimizer.brain_labels)


def method_params(cfg: ScenarioConfig, method: str, epsilon: float | None = None) -> AdmmParams:
    o = cfg.optimizer
    alpha, beta = {"L2R": (o.alpha, 0.0), "L1R": (0.0, o.beta), "elastic": (o.alpha, o.beta)}[method]
    return AdmmParams(mu1=o.mu1, mu2=o.mu2, alpha=alpha, beta=beta,
                      epsilon=o.epsilon if epsilon is None else epsilon,
                      tol=o.tol, max_iter=o.max_iter, state_constraint=o.state_constraint)


def _region(cfg: ScenarioConfig, mesh: Mesh):
    if cfg.optimizer.metrics_region == "brain":
        return mesh.elements_in(cfg.optimizer.brain_labels)
    return None


def optimize(cfg: ScenarioConfig, ph: Phantom, target: TargetSpec, method: str,
             epsilon: float | None = None) -> MethodRun:
    o = cfg.optimizer
    e = build_target_field(ph.mesh, target, o.brain_labels)
    w = build_weight_field(ph.mesh, target, o.omega_low, o.brain_labels, o.weight_mode)
    params = method_params(cfg, method, epsilon)
    res = run_admm(ph.B, params, w, e, reference_index=ph.montage.reference_index)
    if res.total_variation > 0:
        applied, delta = rescale_to_safety(res.currents, params.epsilon, ph.montage.reference_index)
    else:
        applied, delta = res.currents, None
    metrics = compute_metrics(ph.B, applied, target, ph.mesh, _region(cfg, ph.mesh))
    return MethodRun(method, applied, ph.montage.full_protocol(applied), res.protocol, metrics, res, delta)


def m2e_run(cfg: ScenarioConfig, ph: Phantom, target: TargetSpec, l1r: MethodRun) -> MethodRun:
    full = m2e_protocol(l1r.protocol, cfg.optimizer.m2e_total)
    reduced = ph.montage.reduce(full)
    metrics = compute_metrics(ph.B, reduced, target, ph.mesh, _region(cfg, ph.mesh))
    return MethodRun("M2E", reduced, full, full, metrics)


def run_methods(cfg: ScenarioConfig, ph: Phantom, target: TargetSpec) -> list[MethodRun]:
    if cfg.mode == "M2E-from-L1R":
        l1r = optimize(cfg, ph, target, "L1R")
        return [l1r, m2e_run(cfg, ph, target, l1r)]
    return [optimize(cfg, ph, target, cfg.mode)]


def _write_protocols(path: Path, ph: Phantom, runs: list[MethodRun]) -> None:
    dim = ph.mesh.dimension
    coords = ["x_mm", "y_mm", "z_mm"][:dim]
    rows = []
    for run in runs:
        for j, node in enumerate(ph.montage.electrode_nodes):
            xyz = ph.mesh.nodes[node] / MA
            rows.append([run.method, j + 1, int(node), *xyz, run.raw_protocol[j], run.protocol[j]])
    io.write_csv(path, ["method", "electrode", "node", *coords, "current_mA", "rescaled_mA"], rows)


def _write_log(path: Path, runs: list[MethodRun]) -> None:
    with open(path, "w", newline="\n") as fh:
        for run in runs:
            res = run.result
            if res is None:
                fh.write(f"# method {run.method}: derived protocol, no iterations\n")
                continue
            fh.write(f"# method {run.method}\n")
            fh.write(f"# converged {res.converged} iterations {res.n_iter} "
                     f"total_variation_mA {io.fmt(res.total_variation)} delta {io.fmt(res.delta)} "
                     f"feasibility_scale {io.fmt(res.feasibility_scale)}\n")
            fh.write(" ".join(OptResult.HISTORY_COLUMNS) + "\n")
            for row in res.history:
                fh.write(f"{int(row[0])} " + " ".join(io.fmt(v) for v in row[1:]) + "\n")


def run_scenario(cfg: ScenarioConfig) -> int:
    """Run one scenario and write its artifacts; returns the process exit code."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ph = build_phantom(cfg)
    target = scenario_target(cfg, ph.mesh)
    runs = run_methods(cfg, ph, target)

    _write_protocols(out / "protocol.csv", ph, runs)
    io.write_csv(out / "metrics.csv", ["scenario", "method", *MetricsReport.FIELDS],
                 [[cfg.scenario_id, r.method, *r.metrics.row()] for r in runs])
    _write_log(out / "iterations.log", runs)
    o = cfg.optimizer
    omega = build_weight_field(ph.mesh, target, o.omega_low, o.brain_labels, o.weight_mode)
    mask = np.zeros(ph.mesh.n_elements)
    mask[target.target_elements] = 1.0
    vectors = {f"J_{r.method}": ph.B @ r.currents for r in runs}
    scalars = {"omega": omega, "target": mask}
    scalars.update({f"absJ_{r.method}": np.linalg.norm(v.reshape(ph.mesh.n_elements, -1), axis=1)
                    for r, v in zip(runs, vectors.values())})
    io.write_vtk(out / "field.vtk", ph.mesh, scalars, vectors, title=f"tesopt {cfg.scenario_id}")
    if "matrix" in cfg.formats:
        io.save_transfer_matrix(out / "transfer.bin", ph.B / MA, ph.mesh.dimension, ph.montage.n_electrodes)

    converged = all(r.result is None or r.result.converged for r in runs)
    for r in runs:
        log.info("%s: %s", r.method, r.metrics)
    if not converged:
        log.warning("optimization did not converge within max_iter; artifacts are flagged")
    return 0 if converged else 2


SWEEP_HEADER = ["epsilon", "target", "element", "angle_deg", "delta", "iterations",
                "total_variation_mA", "converged", "error"]


def sweep(cfg: ScenarioConfig, k: int, orientation: str | None = None, epsilons=None,
          radius: float | None = None, out_name: str = "sweep.csv") -> int:
    """Optimize for ``k`` ring targets (per epsilon) and tabulate delta, iterations and ||I||."""
    if k < 1:
        raise ValueError("need at least one target")
    ph = build_phantom(cfg)
    mesh = ph.mesh
    orientation = orientation or (cfg.target.orientation if isinstance(cfg.target.orientation, str) else "tangential")
    center = mesh.center if mesh.center is not None else mesh.nodes.mean(axis=0)
    radius = float(np.linalg.norm(np.asarray(cfg.target.center) - center)) if radius is None else radius
    targets = ring_targets(mesh, radius, k, orientation, cfg.optimizer.brain_labels)
    method = "L1R" if cfg.mode == "M2E-from-L1R" else cfg.mode
    epsilons = [cfg.optimizer.epsilon] if not epsilons else list(epsilons)
    rows = []
    all_ok = True
    for eps in epsilons:
        stats = []
        for j, tgt in enumerate(targets):
            el = int(tgt.target_elements[0])
            c = mesh.centroids()[el] - center
            angle = math.degrees(math.atan2(c[1], c[0]))
            try:
                run = optimize(cfg, ph, tgt, method, epsilon=eps)
                res = run.result
                rows.append([eps, j, el, angle, run.delta, res.n_iter, res.total_variation, res.converged, ""])
                stats.append((run.delta, res.n_iter, res.total_variation))
                all_ok &= res.converged
            except Exception as exc:  # recorded in-row, sweep continues
                rows.append([eps, j, el, angle, None, None, None, False, f"{type(exc).__name__}: {exc}"])
                all_ok = False
        if stats:
            deltas = [s[0] for s in stats if s[0] is not None]
            rows.append([eps, "average", "", "",
                         float(np.mean(deltas)) if deltas else None,
                         float(np.mean([s[1] for s in stats])),
                         float(np.mean([s[2] for s in stats])), "", ""])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    io.write_csv(cfg.output_dir / out_name, SWEEP_HEADER,
                 [[str(v) if isinstance(v, bool) else v for v in r] for r in rows])
    return 0 if all_ok else 2


def with_output(cfg: ScenarioConfig, out_dir) -> ScenarioConfig:
    return replace(cfg, output_dir=Path(out_dir))
