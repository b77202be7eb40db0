"""Legacy-VTK field snapshots and the diagnostics CSV."""

from __future__ import annotations

from dataclasses import fields

import numpy as np

from .diagnostics import DiagnosticsRecord


def fmt(x) -> str:
    """17 significant digits, so every double round-trips exactly."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _block(values) -> str:
    return "".join(fmt(v) + "\n" for v in values)


def write_vtk(grid, state, path) -> None:
    """ASCII legacy VTK, STRUCTURED_GRID, point data phi/mu/sigma/displacement."""
    n = grid.n_nodes
    xy = grid.node_coords
    u = np.asarray(state.u, dtype=float).reshape(n, 2)
    parts = [
        "# vtk DataFile Version 3.0\n",
        f"mechanochem state t={fmt(state.time)}\n",
        "ASCII\n",
        "DATASET STRUCTURED_GRID\n",
        f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} 1\n",
        f"POINTS {n} double\n",
        "".join(f"{fmt(x)} {fmt(y)} 0\n" for x, y in xy),
        f"POINT_DATA {n}\n",
    ]
    for name in ("phi", "mu", "sigma"):
        parts.append(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        parts.append(_block(np.asarray(getattr(state, name), dtype=float)))
    parts.append("VECTORS displacement double\n")
    parts.append("".join(f"{fmt(a)} {fmt(b)} 0\n" for a, b in u))
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("".join(parts))


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`write_vtk`."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().split("\n")
    out: dict = {}
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "DIMENSIONS":
            out["dimensions"] = tuple(int(t) for t in tok[1:])
        elif tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n
        elif tok[0] == "POINT_DATA":
            out["n_points"] = int(tok[1])
        elif tok[0] == "SCALARS":
            n = out["n_points"]
            out[tok[1]] = np.array([float(lines[i + 2 + k]) for k in range(n)])
            i += n + 1
        elif tok[0] == "VECTORS":
            n = out["n_points"]
            out[tok[1]] = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n
        i += 1
    return out


def write_diagnostics_csv(records, path) -> None:
    """Header naming every record field, then one row per record."""
    records = list(records)
    if not records:
        raise ValueError("no records to write")
    names = [f.name for f in fields(DiagnosticsRecord)]
    lines = [",".join(names)]
    lines += [",".join(fmt(getattr(r, k)) for k in names) for r in records]
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
