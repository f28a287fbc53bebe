"""Scenario configuration files (TOML; lengths in mm, angles in degrees)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MODES = ("L2R", "L1R", "elastic", "M2E-from-L1R")
AXES = {"x": 0, "y": 1, "z": 2}


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}: {message}{where}")
        self.key = key
        self.message = message
        self.line = line


def locate_key(text: str, key: str) -> int | None:
    """1-based line of ``section.key`` in TOML source (section header if the key is absent)."""
    section, _, leaf = key.partition(".")
    leaf = leaf.split("[")[0]
    lines = text.splitlines()
    header = None
    for i, raw in enumerate(lines, 1):
        line = raw.strip()
        if line.startswith("["):
            if header is not None:
                break
            if line.strip("[] ") == section:
                header = i
        elif header is not None and leaf and line.split("=")[0].strip() == leaf:
            return i
    return header


@dataclass
class GeometryConfig:
    kind: str = "disk"
    h: float = 0.0015
    layers: list = field(default_factory=list)
    dirichlet_arc: tuple = (math.radians(-95.0), math.radians(-85.0))
    extent: list = field(default_factory=list)
    n: list = field(default_factory=list)
    dirichlet_face: tuple = (0, 0)
    label: str = "brain"

    def labels(self) -> list[str]:
        if self.kind == "disk":
            return sorted({lab for _, lab in self.layers})
        return [self.label]


@dataclass
class TargetConfig:
    center: list
    extent: list
    orientation: object = "tangential"


@dataclass
class OptimizerConfig:
    alpha: float = 0.01
    beta: float = 0.001
    epsilon: float = 0.001
    mu1: float = 1.0
    mu2: float = 1.0
    tol: float = 1e-6
    max_iter: int = 10_000
    omega_low: float = 1e-3
    weight_mode: str = "brain"
    state_constraint: str = "vector"
    m2e_total: float = 1.0
    brain_labels: tuple = ("gray_matter", "white_matter", "brain")
    metrics_region: str = "all"


@dataclass
class ScenarioConfig:
    scenario_id: str
    mode: str
    geometry: GeometryConfig
    conductivities: dict
    n_electrodes: int
    target: TargetConfig
    optimizer: OptimizerConfig
    output_dir: Path
    formats: tuple = ("csv", "vtk")
    source: Path | None = None


def _num(table: dict, key: str, prefix: str, default=None, positive=False, integer=False):
    name = f"{prefix}.{key}"
    if key not in table:
        if default is None:
            raise ConfigError(name, "required key is missing")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if integer and not isinstance(v, int):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(name, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _vec(table: dict, key: str, prefix: str, length: int | None = None, default=None):
    name = f"{prefix}.{key}"
    if key not in table:
        if default is None:
            raise ConfigError(name, "required key is missing")
        return list(default)
    v = table[key]
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(name, f"expected a list of numbers, got {v!r}")
    if length is not None and len(v) != length:
        raise ConfigError(name, f"expected {length} entries, got {len(v)}")
    return [float(x) for x in v]


def _section(data: dict, key: str, required=True) -> dict:
    if key not in data:
        if required:
            raise ConfigError(key, "required section is missing")
        return {}
    if not isinstance(data[key], dict):
        raise ConfigError(key, "expected a table")
    return data[key]


def _geometry(g: dict) -> GeometryConfig:
    kind = g.get("kind", "disk")
    if kind == "disk":
        layers = g.get("layers")
        if not isinstance(layers, list) or not layers:
            raise ConfigError("geometry.layers", "expected a non-empty list of [radius_mm, label]")
        parsed = []
        for i, item in enumerate(layers):
            if (not isinstance(item, list) or len(item) != 2 or not isinstance(item[0], (int, float))
                    or not isinstance(item[1], str)):
                raise ConfigError(f"geometry.layers[{i}]", f"expected [radius_mm, label], got {item!r}")
            if item[0] <= 0:
                raise ConfigError(f"geometry.layers[{i}]", "radius must be positive")
            parsed.append((float(item[0]) * 1e-3, item[1]))
        if any(b[0] <= a[0] for a, b in zip(parsed, parsed[1:])):
            raise ConfigError("geometry.layers", "radii must be strictly increasing")
        arc = _vec(g, "dirichlet_arc_deg", "geometry", 2, default=(-95.0, -85.0))
        if not 0 < arc[1] - arc[0] < 360:
            raise ConfigError("geometry.dirichlet_arc_deg", "arc must have positive length below 360 degrees")
        return GeometryConfig(kind="disk", h=_num(g, "h_mm", "geometry", positive=True) * 1e-3,
                              layers=parsed, dirichlet_arc=tuple(math.radians(a) for a in arc))
    if kind == "box":
        extent = _vec(g, "extent_mm", "geometry")
        if len(extent) not in (2, 3) or min(extent) <= 0:
            raise ConfigError("geometry.extent_mm", "expected 2 or 3 positive lengths")
        n = g.get("n")
        if not isinstance(n, list) or len(n) != len(extent) or not all(isinstance(v, int) and v >= 1 for v in n):
            raise ConfigError("geometry.n", "expected one positive integer cell count per axis")
        face = g.get("dirichlet_face", ["x", "min"])
        if (not isinstance(face, list) or len(face) != 2 or face[0] not in AXES
                or face[1] not in ("min", "max") or AXES[face[0]] >= len(extent)):
            raise ConfigError("geometry.dirichlet_face", f"expected [axis, 'min'|'max'], got {face!r}")
        label = g.get("label", "brain")
        if not isinstance(label, str):
            raise ConfigError("geometry.label", "expected a string")
        return GeometryConfig(kind="box", extent=[e * 1e-3 for e in extent], n=list(n),
                              dirichlet_face=(AXES[face[0]], 0 if face[1] == "min" else 1), label=label)
    raise ConfigError("geometry.kind", f"expected 'disk' or 'box', got {kind!r}")


def _conductivity_value(v, key):
    if isinstance(v, bool):
        raise ConfigError(key, "expected a number or array")
    if isinstance(v, (int, float)):
        if v <= 0:
            raise ConfigError(key, "conductivity must be positive")
        return float(v)
    if isinstance(v, list):
        return v
    raise ConfigError(key, f"expected a number or array, got {v!r}")


def parse_config(data: dict, source: Path | None = None, out_dir: Path | None = None) -> ScenarioConfig:
    scen = _section(data, "scenario", required=False)
    mode = scen.get("mode", "L1R")
    if mode not in MODES:
        raise ConfigError("scenario.mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
    sid = scen.get("id", source.stem if source else "scenario")
    if not isinstance(sid, str):
        raise ConfigError("scenario.id", "expected a string")

    geometry = _geometry(_section(data, "geometry"))
    cond = _section(data, "conductivities")
    conductivities = {k: _conductivity_value(v, f"conductivities.{k}") for k, v in cond.items()}
    for label in geometry.labels():
        if label not in conductivities:
            raise ConfigError(f"conductivities.{label}", f"missing conductivity for declared label '{label}'")

    el = _section(data, "electrodes")
    n_electrodes = _num(el, "count", "electrodes", integer=True)
    if n_electrodes < 2:
        raise ConfigError("electrodes.count", "need at least two electrodes")

    dim = 2 if geometry.kind == "disk" else len(geometry.extent)
    t = _section(data, "target")
    center = [c * 1e-3 for c in _vec(t, "center_mm", "target", dim)]
    extent = [c * 1e-3 for c in _vec(t, "extent_mm", "target", dim, default=[0.0] * dim)]
    orientation = t.get("orientation", "tangential")
    if isinstance(orientation, list):
        orientation = _vec(t, "orientation", "target", dim)
        if math.hypot(*orientation) == 0:
            raise ConfigError("target.orientation", "explicit vector must be nonzero")
    elif orientation not in ("tangential", "radial"):
        raise ConfigError("target.orientation", f"expected 'tangential', 'radial' or a vector, got {orientation!r}")

    o = _section(data, "optimizer", required=False)
    d = OptimizerConfig()
    brain_labels = o.get("brain_labels", list(d.brain_labels))
    if not isinstance(brain_labels, list) or not all(isinstance(s, str) for s in brain_labels):
        raise ConfigError("optimizer.brain_labels", "expected a list of labels")
    opt = OptimizerConfig(
        alpha=_num(o, "alpha", "optimizer", d.alpha),
        beta=_num(o, "beta", "optimizer", d.beta),
        epsilon=_num(o, "epsilon", "optimizer", d.epsilon, positive=True),
        mu1=_num(o, "mu1", "optimizer", d.mu1, positive=True),
        mu2=_num(o, "mu2", "optimizer", d.mu2, positive=True),
        tol=_num(o, "tol", "optimizer", d.tol, positive=True),
        max_iter=_num(o, "max_iter", "optimizer", d.max_iter, positive=True, integer=True),
        omega_low=_num(o, "omega_low", "optimizer", d.omega_low, positive=True),
        weight_mode=o.get("weight_mode", d.weight_mode),
        state_constraint=o.get("state_constraint", d.state_constraint),
        m2e_total=_num(o, "m2e_total_mA", "optimizer", d.m2e_total, positive=True),
        brain_labels=tuple(brain_labels),
        metrics_region=o.get("metrics_region", d.metrics_region),
    )
    if opt.alpha < 0:
        raise ConfigError("optimizer.alpha", "must be non-negative")
    if opt.beta < 0:
        raise ConfigError("optimizer.beta", "must be non-negative")
    if opt.omega_low >= 1:
        raise ConfigError("optimizer.omega_low", "must lie in (0, 1)")
    if opt.weight_mode not in ("brain", "all"):
        raise ConfigError("optimizer.weight_mode", "expected 'brain' or 'all'")
    if opt.state_constraint not in ("vector", "component"):
        raise ConfigError("optimizer.state_constraint", "expected 'vector' or 'component'")
    if opt.metrics_region not in ("brain", "all"):
        raise ConfigError("optimizer.metrics_region", "expected 'brain' or 'all'")
    if opt.max_iter < 3:
        raise ConfigError("optimizer.max_iter", "must be at least 3")
    if mode == "L2R" and opt.alpha <= 0:
        raise ConfigError("optimizer.alpha", "L2R mode needs alpha > 0")
    if mode in ("L1R", "M2E-from-L1R") and opt.beta <= 0:
        raise ConfigError("optimizer.beta", f"{mode} mode needs beta > 0")

    outputs = _section(data, "outputs", required=False)
    directory = outputs.get("directory", "out")
    if not isinstance(directory, str):
        raise ConfigError("outputs.directory", "expected a path string")
    formats = outputs.get("formats", ["csv", "vtk"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "vtk", "matrix"}:
        raise ConfigError("outputs.formats", "expected a subset of ['csv', 'vtk', 'matrix']")
    if out_dir is None:
        out_dir = Path(directory)
        if source is not None and not out_dir.is_absolute():
            out_dir = source.parent / out_dir

    return ScenarioConfig(
        scenario_id=sid, mode=mode, geometry=geometry, conductivities=conductivities,
        n_electrodes=n_electrodes, target=TargetConfig(center, extent, orientation), optimizer=opt,
        output_dir=Path(out_dir), formats=tuple(formats), source=source,
    )


def load_config(path, out_dir=None) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        # message carries "(at line L, column C)"
        raise ConfigError("syntax", str(exc)) from exc
    except OSError as exc:
        raise ConfigError("file", str(exc)) from exc
    try:
        return parse_config(data, source=path, out_dir=None if out_dir is None else Path(out_dir))
    except ConfigError as exc:
        if exc.line is not None:
            raise
        line = locate_key(path.read_text(), exc.key)
        raise ConfigError(exc.key, exc.message, line) from None
