"""Mesh ingest, legacy ASCII VTK output and flat key-value config files.

Mesh format: a header line ``NODES n`` followed by n ``x y z`` lines, a line
``TETS m`` followed by m lines of four 1-based node indices, and optionally
``BFACES k`` with three node indices plus an integer boundary tag per line.
"""

import csv
import os

import numpy as np

from .meshing import PrimalMesh, build_connectivity


class MeshFormatError(ValueError):
    """Malformed mesh file; the message carries the offending line number."""


def _tokens(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def read_mesh(path):
    """Parse the ASCII mesh format into (nodes, tets, boundary_records)."""
    stream = _tokens(path)

    def next_line(what):
        try:
            return next(stream)
        except StopIteration:
            raise MeshFormatError(f"{path}: unexpected end of file while reading {what}")

    def count_header(keyword):
        lineno, tok = next_line(f"'{keyword}' header")
        if tok[0].upper() != keyword or len(tok) != 2:
            raise MeshFormatError(f"{path}:{lineno}: expected '{keyword} <count>', got {' '.join(tok)!r}")
        try:
            return int(tok[1])
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: bad {keyword} count {tok[1]!r}")

    n_nodes = count_header("NODES")
    nodes = np.empty((n_nodes, 3))
    for i in range(n_nodes):
        lineno, tok = next_line("node coordinates")
        if len(tok) != 3:
            raise MeshFormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(tok)}")
        try:
            nodes[i] = [float(v) for v in tok]
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: bad coordinate in {' '.join(tok)!r}")

    n_tets = count_header("TETS")
    tets = np.empty((n_tets, 4), dtype=int)
    for i in range(n_tets):
        lineno, tok = next_line("tet connectivity")
        if len(tok) != 4:
            raise MeshFormatError(f"{path}:{lineno}: expected 4 node indices, got {len(tok)}")
        try:
            tets[i] = [int(v) - 1 for v in tok]
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: bad node index in {' '.join(tok)!r}")

    boundary = []
    try:
        lineno, tok = next(stream)
    except StopIteration:
        return nodes, tets, boundary
    if tok[0].upper() != "BFACES" or len(tok) != 2:
        raise MeshFormatError(f"{path}:{lineno}: expected 'BFACES <count>', got {' '.join(tok)!r}")
    for _ in range(int(tok[1])):
        lineno, tok = next_line("boundary faces")
        if len(tok) != 4:
            raise MeshFormatError(f"{path}:{lineno}: expected 3 node indices and a tag")
        try:
            boundary.append((int(tok[0]) - 1, int(tok[1]) - 1, int(tok[2]) - 1, int(tok[3])))
        except ValueError:
            raise MeshFormatError(f"{path}:{lineno}: bad boundary record {' '.join(tok)!r}")
    return nodes, tets, boundary


def load_mesh(path) -> PrimalMesh:
    nodes, tets, boundary = read_mesh(path)
    return build_connectivity(nodes, tets, boundary_faces=boundary or None)


def write_mesh(path, mesh: PrimalMesh):
    """Inverse of read_mesh, mainly for fixtures and round-trip tests."""
    with open(path, "w") as fh:
        fh.write(f"NODES {len(mesh.nodes)}\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        fh.write(f"TETS {mesh.n_tets}\n")
        for t in mesh.tets:
            fh.write(f"{t[0]+1} {t[1]+1} {t[2]+1} {t[3]+1}\n")
        bnd = mesh.boundary_faces
        if len(bnd):
            fh.write(f"BFACES {len(bnd)}\n")
            for j in bnd:
                a, b, c = mesh.face_nodes[j] + 1
                fh.write(f"{a} {b} {c} {mesh.face_tag[j]}\n")


# ---------------------------------------------------------------------------
# VTK

def write_vtk(path, mesh: PrimalMesh, cell_pressure, point_velocity, title="stagdg snapshot"):
    """Legacy ASCII unstructured-grid file with per-cell pressure and
    per-point velocity."""
    cell_pressure = np.asarray(cell_pressure, dtype=float)
    point_velocity = np.asarray(point_velocity, dtype=float)
    try:
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write(f"{title}\n")
            fh.write("ASCII\n")
            fh.write("DATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {len(mesh.nodes)} double\n")
            for x, y, z in mesh.nodes:
                fh.write(f"{x:.12g} {y:.12g} {z:.12g}\n")
            fh.write(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}\n")
            for t in mesh.tets:
                fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
            fh.write(f"CELL_TYPES {mesh.n_tets}\n")
            fh.write("10\n" * mesh.n_tets)
            fh.write(f"CELL_DATA {mesh.n_tets}\n")
            fh.write("SCALARS pressure double\nLOOKUP_TABLE default\n")
            for v in cell_pressure:
                fh.write(f"{v:.12g}\n")
            fh.write(f"POINT_DATA {len(mesh.nodes)}\n")
            fh.write("VECTORS velocity double\n")
            for u, v, w in point_velocity:
                fh.write(f"{u:.12g} {v:.12g} {w:.12g}\n")
    except OSError as exc:
        raise OSError(f"failed writing VTK file {path}: {exc}") from exc
    return path


def read_vtk_summary(path):
    """Light-weight reader for round-trip checks of our own VTK output."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    out = {"points": [], "cells": [], "pressure": [], "velocity": []}
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        elif tok[0] == "CELLS":
            n = int(tok[1])
            out["cells"] = np.array([[int(v) for v in lines[i + 1 + k].split()[1:]] for k in range(n)])
            i += n + 1
        elif tok[0] == "SCALARS":
            n = len(out["cells"])
            out["pressure"] = np.array([float(lines[i + 2 + k]) for k in range(n)])
            i += n + 2
        elif tok[0] == "VECTORS":
            n = len(out["points"])
            out["velocity"] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n + 1
        else:
            i += 1
    return out


def state_samples(ops, state):
    """Cell-mean pressure and node-averaged velocity of a state's end trace."""
    from .operators import end_trace

    mesh = ops.mesh
    pend = end_trace(ops, state.p)
    cell_p = np.einsum("ek,ek->e", ops.phi_moment, pend) / mesh.volumes

    vend = end_trace(ops, state.v_primal)
    corners = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    corner_vals = ops.nodal.eval(corners)  # (4, nphi)
    per_corner = np.einsum("ck,ekd->ecd", corner_vals, vend)
    vel = np.zeros((len(mesh.nodes), 3))
    count = np.zeros(len(mesh.nodes))
    np.add.at(vel, mesh.tets.ravel(), per_corner.reshape(-1, 3))
    np.add.at(count, mesh.tets.ravel(), 1.0)
    vel /= np.maximum(count, 1.0)[:, None]
    return cell_p, vel


class RunWriter:
    """Numbered VTK snapshots plus a per-step diagnostics table."""

    def __init__(self, out_dir, mesh, ops, label="run"):
        self.dir = out_dir
        self.mesh = mesh
        self.ops = ops
        self.label = label
        self.counter = 0
        os.makedirs(out_dir, exist_ok=True)

    def write_snapshot(self, state):
        cell_p, vel = state_samples(self.ops, state)
        path = os.path.join(self.dir, f"{self.label}_{self.counter:05d}.vtk")
        write_vtk(path, self.mesh, cell_p, vel, title=f"{self.label} t={state.t:.6g}")
        self.counter += 1
        return path

    def write_diagnostics(self, records):
        path = os.path.join(self.dir, f"{self.label}_diagnostics.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dt", "pressure_iterations", "viscous_iterations",
                        "kinetic_energy", "dissipation_rate"])
            for r in records:
                w.writerow([f"{r.t:.17E}", f"{r.dt:.17E}", r.pressure_iterations,
                            r.viscous_iterations, f"{r.energy:.17E}", f"{r.dissipation:.17E}"])
        return path


# ---------------------------------------------------------------------------
# flat config files

def parse_config(path) -> dict:
    """Flat ``key = value`` file mirroring the CLI flags.

    Boundary bindings use ``boundary.<tag> = <kind> [values...]`` with kinds
    no-slip, slip, velocity (three components) and pressure (one value).
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out
