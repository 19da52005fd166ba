"""Legacy VTK (ASCII, unstructured grid) field output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .material import von_mises_norm

VTK_TETRA = 10


def _fmt(x):
    return repr(float(x))


def write_fields(mesh, displacement, state, path, title="tfetiplast fields"):
    """Write nodal displacement and per-element von Mises stress, kappa, plastic flag.

    ``displacement`` is a (n_nodes, 3) array, ``state`` anything with
    ``sigma``, ``kappa`` and ``plastic`` arrays in global element order.
    The von Mises field is the Frobenius norm of the stress deviator.
    """
    u = np.asarray(displacement, dtype=float).reshape(mesh.n_nodes, 3)
    vm = von_mises_norm(state.sigma)
    n, m = mesh.n_nodes, mesh.n_tets
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    out += [" ".join(_fmt(c) for c in row) for row in mesh.nodes.tolist()]
    out.append(f"CELLS {m} {5 * m}")
    out += ["4 " + " ".join(str(i) for i in tet) for tet in mesh.tets.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += [str(VTK_TETRA)] * m
    out.append(f"POINT_DATA {n}")
    out.append("VECTORS displacement double")
    out += [" ".join(_fmt(c) for c in row) for row in u.tolist()]
    out.append(f"CELL_DATA {m}")
    for name, values, kind, fmt in (
        ("von_mises", vm, "double", _fmt),
        ("kappa", state.kappa, "double", _fmt),
        ("plastic", np.asarray(state.plastic, dtype=int), "int", str),
    ):
        out.append(f"SCALARS {name} {kind} 1")
        out.append("LOOKUP_TABLE default")
        out += [fmt(v) for v in np.asarray(values).tolist()]
    try:
        Path(path).write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise IOError(f"cannot write field file {path}: {exc}") from exc
