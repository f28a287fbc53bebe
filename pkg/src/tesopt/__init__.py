"""Optimized multi-electrode tDCS protocols under pointwise current-density bounds."""
from .admm import AdmmParams, CurrentOptimizer, OptResult, reference_solve, rescale_to_safety, run_admm
from .config import ConfigError, load_config, parse_config
from .fem import ConvergenceError, assemble_stiffness, solve_forward
from .geometry import (
    ConductivityField, ElectrodeMontage, Mesh, MeshError, TargetSpec, assign_conductivity,
    build_box_mesh, build_layered_disk_mesh, place_electrodes, select_target,
)
from .protocols import MetricsReport, compute_metrics, m2e_protocol
from .transfer import TransferOperator, build_target_field, build_weight_field

__version__ = "0.1.0"

__all__ = [
    "AdmmParams", "CurrentOptimizer", "OptResult", "reference_solve", "rescale_to_safety", "run_admm",
    "ConfigError", "load_config", "parse_config", "ConvergenceError", "assemble_stiffness", "solve_forward",
    "ConductivityField", "ElectrodeMontage", "Mesh", "MeshError", "TargetSpec", "assign_conductivity",
    "build_box_mesh", "build_layered_disk_mesh", "place_electrodes", "select_target",
    "MetricsReport", "compute_metrics", "m2e_protocol", "TransferOperator", "build_target_field",
    "build_weight_field",
]
