"""File formats: legacy VTK meshes and fields, transfer-matrix exchange, CSV tables."""
from __future__ import annotations

import csv
import os
import struct

import numpy as np

from .geometry import Mesh

VTK_QUAD = 9
VTK_HEXAHEDRON = 12

MATRIX_MAGIC = b"TESOPTB1"
_HEADER = struct.Struct("<8sqqq")


def fmt(value) -> str:
    """Round-trip float formatting; empty string for missing values."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_vtk(path, mesh: Mesh, cell_scalars=None, cell_vectors=None, title: str | None = None) -> None:
    """Write an ASCII legacy-VTK unstructured grid with per-cell data.

    Compartments are always written as the integer scalar ``compartment``
    indexing ``mesh.compartment_labels()``; the legend goes into the title
    line.
    """
    labels = mesh.compartment_labels()
    codes = np.searchsorted(labels, mesh.element_compartment)
    legend = ",".join(f"{i}={lab}" for i, lab in enumerate(labels))
    header = (title or "tesopt mesh") + f"; compartments {legend}"
    if len(header) > 255:
        header = header[:255]
    pts = mesh.nodes if mesh.dimension == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    ctype = VTK_QUAD if mesh.dimension == 2 else VTK_HEXAHEDRON
    nn = mesh.elements.shape[1]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(header + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for p in pts:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (nn + 1)}\n")
        for cell in mesh.elements:
            fh.write(f"{nn} " + " ".join(str(int(i)) for i in cell) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("\n".join([str(ctype)] * mesh.n_elements) + "\n")
        fh.write(f"CELL_DATA {mesh.n_elements}\n")
        fh.write("SCALARS compartment int 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(str(int(c)) for c in codes) + "\n")
        for name, values in (cell_scalars or {}).items():
            values = np.asarray(values, dtype=float).ravel()
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(repr(float(v)) for v in values) + "\n")
        for name, values in (cell_vectors or {}).items():
            v = np.asarray(values, dtype=float).reshape(mesh.n_elements, mesh.dimension)
            if mesh.dimension == 2:
                v = np.column_stack([v, np.zeros(mesh.n_elements)])
            fh.write(f"VECTORS {name} double\n")
            for row in v:
                fh.write(" ".join(repr(float(c)) for c in row) + "\n")


def read_vtk_cell_data(path) -> dict:
    """Minimal reader for files produced by :func:`write_vtk` (tests, tooling)."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    out = {"title": lines[1]}
    i = 0
    n_cells = None
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = np.array([[float(x) for x in lines[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif tok[0] == "CELLS":
            n = int(tok[1])
            out["cells"] = np.array([[int(x) for x in lines[i + 1 + k].split()[1:]] for k in range(n)])
            i += n + 1
        elif tok[0] == "CELL_DATA":
            n_cells = int(tok[1])
            i += 1
        elif tok[0] == "SCALARS":
            vals = [float(x) for x in lines[i + 2:i + 2 + n_cells]]
            out[tok[1]] = np.array(vals)
            i += 2 + n_cells
        elif tok[0] == "VECTORS":
            out[tok[1]] = np.array([[float(x) for x in lines[i + 1 + k].split()] for k in range(n_cells)])
            i += 1 + n_cells
        else:
            i += 1
    return out


def save_transfer_matrix(path, B, dim: int, n_electrodes: int) -> None:
    """Binary layout: magic, int64 ``d, N, S`` (little endian), then row-major float64."""
    B = np.ascontiguousarray(B, dtype="<f8")
    n_el = B.shape[0] // dim
    if B.shape != (dim * n_el, n_electrodes - 1):
        raise ValueError("matrix shape does not match (d*N, S-1)")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, dim, n_el, n_electrodes))
        fh.write(B.tobytes(order="C"))


def load_transfer_matrix(path):
    """Returns ``(B, d, N, S)``."""
    with open(path, "rb") as fh:
        magic, dim, n_el, n_electrodes = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != MATRIX_MAGIC:
            raise ValueError(f"{path}: not a transfer-matrix file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = dim * n_el * (n_electrodes - 1)
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {data.size}")
    return data.reshape(dim * n_el, n_electrodes - 1).astype(float), dim, n_el, n_electrodes


def save_transfer_matrix_csv(path, B, dim: int, n_electrodes: int) -> None:
    B = np.asarray(B, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(f"# d={dim} N={B.shape[0] // dim} S={n_electrodes}\n")
        w = csv.writer(fh, lineterminator="\n")
        for row in B:
            w.writerow([repr(float(v)) for v in row])


def load_transfer_matrix_csv(path):
    with open(path) as fh:
        head = fh.readline().lstrip("#").split()
        meta = dict(item.split("=") for item in head)
        rows = [[float(v) for v in r] for r in csv.reader(fh) if r]
    dim, n_el, n_electrodes = int(meta["d"]), int(meta["N"]), int(meta["S"])
    B = np.array(rows, dtype=float).reshape(dim * n_el, n_electrodes - 1)
    return B, dim, n_el, n_electrodes


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
