"""Shared builders for the test suite."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from tesopt.admm import AdmmParams

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

PHANTOM_LAYERS = [
    (0.070, "white_matter"), (0.078, "gray_matter"), (0.080, "csf"), (0.0815, "skull_compacta"),
    (0.084, "skull_spongiosa"), (0.0855, "skull_compacta"), (0.092, "skin"),
]
CONDUCTIVITIES = {"skin": 0.43, "skull_compacta": 0.007, "skull_spongiosa": 0.025, "csf": 1.79,
                  "gray_matter": 0.33, "white_matter": 0.14}


def toy_instance(seed: int, n_currents: int = 4, n_elements: int = 12, dim: int = 2, omega_low: float = 1e-3):
    """Random dense transfer matrix with one target element (element 0)."""
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(dim * n_elements, n_currents))
    w = np.ones(n_elements)
    w[0] = omega_low
    e = np.zeros(dim * n_elements)
    v = rng.normal(size=dim)
    e[:dim] = v / np.linalg.norm(v)
    return B, w, e


def toy_params(**kw) -> AdmmParams:
    base = dict(alpha=0.05, beta=0.05, epsilon=1.0, tol=1e-9, max_iter=100_000)
    base.update(kw)
    return AdmmParams(**base)


def active_count(protocol, rel: float = 0.01) -> int:
    p = np.abs(np.asarray(protocol))
    return int((p > rel * p.max()).sum()) if p.max() > 0 else 0


def coarse_config(tmp_path: Path, name: str = "tangential", h_mm: float = 3.0, **replacements) -> Path:
    """Copy a shipped config with a coarser grid (and optional line replacements) into tmp_path."""
    text = (CONFIGS / f"{name}.toml").read_text()
    text = text.replace("h_mm = 1.5", f"h_mm = {h_mm}")
    for old, new in replacements.items():
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / f"{name}.toml"
    path.write_text(text)
    return path
