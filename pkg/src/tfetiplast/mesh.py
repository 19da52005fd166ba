"""Tetrahedral meshes, desk-scale generators and the ``tetmesh 1`` text format."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBox, InvalidGeometry, InvariantViolation, ParseError

# Kuhn split of the unit cube: one tet per axis permutation, all sharing the
# (0,0,0)-(1,1,1) diagonal.  Identical in every cell, hence conforming.
_KUHN_PERMS = list(itertools.permutations(range(3)))

_FACE_SELECTORS = {"x0": (0, 0), "x1": (0, 1), "y0": (1, 0), "y1": (1, 1), "z0": (2, 0), "z1": (2, 1)}

_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


@dataclass
class Mesh:
    """P1 tetrahedral mesh with per-component Dirichlet flags and Neumann faces.

    ``neumann_tractions`` holds the traction (force per unit area) of each face
    at unit load scale; the load program multiplies it by a time function.
    """

    nodes: np.ndarray
    tets: np.ndarray
    dirichlet: np.ndarray
    neumann_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    neumann_tractions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 3)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4)
        self.dirichlet = np.ascontiguousarray(self.dirichlet, dtype=bool).reshape(-1, 3)
        self.neumann_faces = np.ascontiguousarray(self.neumann_faces, dtype=np.int64).reshape(-1, 3)
        self.neumann_tractions = np.ascontiguousarray(self.neumann_tractions, dtype=float).reshape(
            -1, 3
        )

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_tets(self):
        return len(self.tets)

    def signed_volumes(self):
        x = self.nodes[self.tets]
        d = x[:, 1:] - x[:, :1]
        return np.linalg.det(d) / 6.0

    def volume(self):
        return float(self.signed_volumes().sum())

    def face_areas(self):
        x = self.nodes[self.neumann_faces]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    def validate(self):
        """Raise InvariantViolation naming the first failed invariant."""
        if len(self.dirichlet) != self.n_nodes:
            raise InvariantViolation("dirichlet flags per node", "length mismatch")
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= self.n_nodes):
            raise InvariantViolation("tet node indices in range")
        if self.neumann_faces.size and (
            self.neumann_faces.min() < 0 or self.neumann_faces.max() >= self.n_nodes
        ):
            raise InvariantViolation("neumann face node indices in range")
        if len(self.neumann_faces) != len(self.neumann_tractions):
            raise InvariantViolation("one traction per neumann face")
        vols = self.signed_volumes()
        bad = np.flatnonzero(vols <= 0.0)
        if bad.size:
            raise InvariantViolation("positive signed volume", f"tet {int(bad[0])}")
        if self.neumann_faces.size:
            counts = _face_owner_counts(self.tets, self.neumann_faces)
            bad = np.flatnonzero(counts != 1)
            if bad.size:
                raise InvariantViolation(
                    "neumann face belongs to exactly one tet",
                    f"face {int(bad[0])} found in {int(counts[bad[0]])} tets",
                )
        if not self.dirichlet.any():
            raise InvariantViolation("at least one constrained node component")
        return self


def _face_keys(faces):
    f = np.sort(np.asarray(faces), axis=1)
    return [tuple(row) for row in f.tolist()]


def _face_owner_counts(tets, faces):
    owners = {}
    for tet in tets:
        for local in _TET_FACES:
            key = tuple(sorted(int(tet[i]) for i in local))
            owners[key] = owners.get(key, 0) + 1
    return np.array([owners.get(k, 0) for k in _face_keys(faces)])


def boundary_faces(tets):
    """Faces (as node triples) that belong to exactly one tet."""
    all_faces = np.asarray(tets)[:, _TET_FACES].reshape(-1, 3)
    keys = np.sort(all_faces, axis=1)
    _, idx, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
    return all_faces[np.sort(idx[counts == 1])]


def _orient(nodes, tets):
    x = nodes[tets]
    vol = np.linalg.det(x[:, 1:] - x[:, :1])
    if np.all(vol < 0):
        tets = tets[:, [0, 2, 1, 3]]
    elif not np.all(vol > 0):
        raise InvalidGeometry("hexahedral cells too distorted for a consistent tet split")
    return np.ascontiguousarray(tets)


def _parity(perm):
    inversions = sum(1 for a in range(3) for b in range(a + 1, 3) if perm[a] > perm[b])
    return inversions % 2


def _structured_tets(shape):
    """Kuhn split of a logically structured (ni, nj, nk) cell grid."""
    ni, nj, nk = shape

    def nid(i, j, k):
        return (i * (nj + 1) + j) * (nk + 1) + k

    i, j, k = np.meshgrid(np.arange(ni), np.arange(nj), np.arange(nk), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    tets = []
    for perm in _KUHN_PERMS:
        corner = [np.zeros_like(i), np.zeros_like(j), np.zeros_like(k)]
        verts = [nid(i, j, k)]
        for axis in perm:
            corner[axis] = corner[axis] + 1
            verts.append(nid(i + corner[0], j + corner[1], k + corner[2]))
        if _parity(perm):
            verts[1], verts[2] = verts[2], verts[1]
        tets.append(np.stack(verts, axis=1))
    # order tets cell by cell for locality
    return np.stack(tets, axis=1).reshape(-1, 4)


def _structured_nodes(shape, xyz):
    ni, nj, nk = shape
    return xyz.reshape((ni + 1) * (nj + 1) * (nk + 1), 3)


def generate_box_mesh(dims, divisions, constraints=(), tractions=()):
    """Structured box ``[0,Lx]x[0,Ly]x[0,Lz]`` split into 6 tets per cell.

    Parameters
    ----------
    dims : 3 floats
    divisions : 3 ints
    constraints : iterable of (selector, (bool, bool, bool))
        Selector is one of ``x0, x1, y0, y1, z0, z1`` (min / max plane of an
        axis); the flags mark constrained displacement components.
    tractions : iterable of (selector, (tx, ty, tz))
        Unit-scale traction applied to every boundary face on the plane.
    """
    dims = np.asarray(dims, dtype=float)
    divisions = tuple(int(d) for d in divisions)
    if dims.shape != (3,) or np.any(dims <= 0) or not np.all(np.isfinite(dims)):
        raise DegenerateBox(f"box dimensions must be positive, got {dims.tolist()}")
    if len(divisions) != 3 or min(divisions) < 1:
        raise DegenerateBox(f"divisions must be >= 1, got {divisions}")

    axes = [np.linspace(0.0, L, n + 1) for L, n in zip(dims, divisions)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = _structured_nodes(divisions, np.stack([X, Y, Z], axis=-1))
    tets = _orient(nodes, _structured_tets(divisions))

    tol = 1e-9 * float(dims.max())
    planes = {}
    for sel, (axis, side) in _FACE_SELECTORS.items():
        target = dims[axis] if side else 0.0
        planes[sel] = np.abs(nodes[:, axis] - target) <= tol

    dirichlet = np.zeros((len(nodes), 3), dtype=bool)
    for sel, flags in constraints:
        dirichlet[_plane(planes, sel)] |= np.asarray(flags, dtype=bool)

    faces, trac = _traction_faces(tets, planes, tractions)
    return Mesh(nodes, tets, dirichlet, faces, trac)


def _plane(planes, sel):
    try:
        return planes[sel]
    except KeyError:
        raise ValueError(f"unknown face selector {sel!r}; expected one of {sorted(planes)}")


def _traction_faces(tets, planes, tractions):
    bfaces = boundary_faces(tets)
    faces, trac = [], []
    for sel, vec in tractions:
        on = _plane(planes, sel)[bfaces].all(axis=1)
        faces.append(bfaces[on])
        trac.append(np.tile(np.asarray(vec, dtype=float), (int(on.sum()), 1)))
    if not faces:
        return np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3))
    return np.concatenate(faces), np.concatenate(trac)


def generate_plate_with_hole(
    outer=(10.0, 10.0, 1.0), hole_radius=1.0, refinement=1, traction=(1.0, 0.0, 0.0), grading=1.5
):
    """One eighth of a thin plate with a central circular hole.

    The block ``[0,a]x[0,b]x[0,c]`` minus the quarter cylinder ``x^2+y^2<r^2`` is
    meshed by a single mapped grid: one logical axis runs along the arc / outer
    boundary, one radially from the arc to the outer boundary (graded towards
    the hole), one through the thickness.  Arc nodes lie exactly on the circle;
    chords between them cut slightly into the hole.

    Symmetry planes x=0, y=0, z=0 are constrained in their normal component,
    and the unit traction acts on the outer face x=a.
    """
    a, b, c = (float(v) for v in outer)
    r = float(hole_radius)
    refinement = int(refinement)
    if refinement < 1:
        raise InvalidGeometry("refinement must be >= 1")
    if not (0.0 < r < min(a, b)) or c <= 0.0:
        raise InvalidGeometry(f"hole radius {r} must lie inside the in-plane half-size {min(a, b)}")

    n_arc = 8 * refinement  # even, so the outer corner (a, b) is a node
    n_rad = 4 * refinement
    n_thk = refinement

    t = np.linspace(0.0, 1.0, n_arc + 1)
    theta = 0.5 * np.pi * t
    inner = r * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    # outer boundary: (a, 0) -> (a, b) -> (0, b), split at the corner
    outer_pts = np.where(
        (t <= 0.5)[:, None],
        np.stack([np.full_like(t, a), 2.0 * t * b], axis=1),
        np.stack([2.0 * (1.0 - t) * a, np.full_like(t, b)], axis=1),
    )
    s = np.linspace(0.0, 1.0, n_rad + 1) ** grading
    z = np.linspace(0.0, c, n_thk + 1)

    xy = (1.0 - s)[None, :, None] * inner[:, None, :] + s[None, :, None] * outer_pts[:, None, :]
    xyz = np.empty((n_arc + 1, n_rad + 1, n_thk + 1, 3))
    xyz[..., :2] = xy[:, :, None, :]
    xyz[..., 2] = z[None, None, :]
    shape = (n_arc, n_rad, n_thk)
    nodes = _structured_nodes(shape, xyz)
    tets = _orient(nodes, _structured_tets(shape))

    tol = 1e-9 * max(a, b, c)
    planes = {
        "x0": np.abs(nodes[:, 0]) <= tol,
        "y0": np.abs(nodes[:, 1]) <= tol,
        "z0": np.abs(nodes[:, 2]) <= tol,
        "x1": np.abs(nodes[:, 0] - a) <= tol,
    }
    dirichlet = np.zeros((len(nodes), 3), dtype=bool)
    dirichlet[planes["x0"], 0] = True
    dirichlet[planes["y0"], 1] = True
    dirichlet[planes["z0"], 2] = True
    faces, trac = _traction_faces(tets, planes, [("x1", traction)])
    mesh = Mesh(nodes, tets, dirichlet, faces, trac)
    mesh.validate()
    return mesh


def write_mesh(mesh: Mesh, path):
    lines = ["tetmesh 1", f"nodes {mesh.n_nodes}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.nodes.tolist()]
    lines.append(f"tets {mesh.n_tets}")
    lines += [" ".join(str(v) for v in tet) for tet in mesh.tets.tolist()]
    constrained = np.flatnonzero(mesh.dirichlet.any(axis=1))
    lines.append(f"dirichlet {len(constrained)}")
    for n in constrained:
        fx, fy, fz = (int(v) for v in mesh.dirichlet[n])
        lines.append(f"{n} {fx} {fy} {fz}")
    lines.append(f"neumann {len(mesh.neumann_faces)}")
    for face, tr in zip(mesh.neumann_faces.tolist(), mesh.neumann_tractions.tolist()):
        lines.append(" ".join(str(v) for v in face) + " " + " ".join(repr(v) for v in tr))
    Path(path).write_text("\n".join(lines) + "\n")


class _LineReader:
    def __init__(self, text):
        self._lines = [
            (i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())
        ]
        self._lines = [(i, ln) for i, ln in self._lines if ln]
        self._pos = 0
        self.last_line = 0

    def next(self, what):
        if self._pos >= len(self._lines):
            raise ParseError(f"unexpected end of file while reading {what}", self.last_line + 1)
        self.last_line, line = self._lines[self._pos]
        self._pos += 1
        return line.split()

    def header(self, keyword):
        tok = self.next(f"'{keyword}' section")
        if len(tok) != 2 or tok[0] != keyword:
            raise ParseError(f"expected '{keyword} <count>', got {' '.join(tok)!r}", self.last_line)
        return self.integer(tok[1])

    def integer(self, tok):
        try:
            value = int(tok)
        except ValueError:
            raise ParseError(f"expected integer, got {tok!r}", self.last_line) from None
        return value

    def floats(self, toks):
        try:
            return [float(t) for t in toks]
        except ValueError:
            raise ParseError(f"expected numbers, got {' '.join(toks)!r}", self.last_line) from None

    def row(self, width, what):
        tok = self.next(what)
        if len(tok) != width:
            raise ParseError(f"{what}: expected {width} fields, got {len(tok)}", self.last_line)
        return tok

    def done(self):
        return self._pos >= len(self._lines)


def read_mesh(path) -> Mesh:
    reader = _LineReader(Path(path).read_text())
    tok = reader.next("header")
    if tok != ["tetmesh", "1"]:
        raise ParseError(f"expected header 'tetmesh 1', got {' '.join(tok)!r}", reader.last_line)

    n = reader.header("nodes")
    nodes = [reader.floats(reader.row(3, "node")) for _ in range(n)]
    m = reader.header("tets")
    tets = [[reader.integer(v) for v in reader.row(4, "tet")] for _ in range(m)]
    k = reader.header("dirichlet")
    dirichlet = np.zeros((n, 3), dtype=bool)
    for _ in range(k):
        node, *flags = (reader.integer(v) for v in reader.row(4, "dirichlet entry"))
        if not 0 <= node < n:
            raise ParseError(f"dirichlet node {node} out of range", reader.last_line)
        if any(f not in (0, 1) for f in flags):
            raise ParseError("dirichlet flags must be 0 or 1", reader.last_line)
        dirichlet[node] = np.array(flags, dtype=bool)
    count = reader.header("neumann")
    faces, trac = [], []
    for _ in range(count):
        tok = reader.row(6, "neumann entry")
        faces.append([reader.integer(v) for v in tok[:3]])
        trac.append(reader.floats(tok[3:]))
    if not reader.done():
        raise ParseError("trailing content after neumann section", reader.last_line + 1)

    mesh = Mesh(
        np.array(nodes, dtype=float).reshape(-1, 3),
        np.array(tets, dtype=np.int64).reshape(-1, 4),
        dirichlet,
        np.array(faces, dtype=np.int64).reshape(-1, 3),
        np.array(trac, dtype=float).reshape(-1, 3),
    )
    return mesh.validate()


def _no_body_force(t):
    return np.zeros(3)


@dataclass
class LoadProgram:
    """Time grid plus the scalar traction multiplier and the body force."""

    times: np.ndarray
    traction_scale: object
    body_force: object = _no_body_force

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        if len(self.times) < 2 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("time grid must be strictly increasing with at least two points")

    @property
    def n_steps(self):
        return len(self.times) - 1

    @classmethod
    def sinusoidal(cls, amplitude, t0=0.0, t_end=0.25, steps=1, body_force=None):
        """Equidistant grid with traction scale ``amplitude * sin(2 pi t)``."""
        times = np.linspace(t0, t_end, int(steps) + 1)

        def scale(t):
            return amplitude * np.sin(2.0 * np.pi * t)

        return cls(times, scale, body_force or _no_body_force)

    @classmethod
    def linear(cls, amplitude, t0=0.0, t_end=1.0, steps=1, body_force=None):
        times = np.linspace(t0, t_end, int(steps) + 1)

        def scale(t):
            return amplitude * (t - t0) / (t_end - t0)

        return cls(times, scale, body_force or _no_body_force)
