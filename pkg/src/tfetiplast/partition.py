"""Recursive coordinate bisection and the torn (TFETI) bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooManySubdomains
from .mesh import Mesh, _TET_FACES


@dataclass(frozen=True)
class Subdomain:
    """Local view of one subdomain.

    ``l2g`` maps local node ids to global ones (sorted ascending), ``tets``
    holds local node ids and ``tet_ids`` the global element numbers.
    """

    index: int
    tet_ids: np.ndarray
    l2g: np.ndarray
    tets: np.ndarray
    nodes: np.ndarray

    @property
    def n_nodes(self):
        return len(self.l2g)

    @property
    def n_dofs(self):
        return 3 * len(self.l2g)


@dataclass(frozen=True)
class Decomposition:
    subdomain_of_tet: np.ndarray
    subdomains: tuple
    interface_pairs: np.ndarray  # rows (global node, p, q) with p < q
    offsets: np.ndarray  # torn-vector offset of each subdomain, length s + 1

    @property
    def n_subdomains(self):
        return len(self.subdomains)

    @property
    def n_torn_dofs(self):
        return int(self.offsets[-1])

    def copies(self):
        """Map global node -> list of (subdomain, local node), subdomain ascending."""
        owners = {}
        for sub in self.subdomains:
            for local, g in enumerate(sub.l2g.tolist()):
                owners.setdefault(g, []).append((sub.index, local))
        return owners

    def torn_dof(self, p, local_node, comp):
        return int(self.offsets[p]) + 3 * local_node + comp

    def gather_matrix(self, n_global_nodes):
        """Sparse 0/1 matrix L with torn = L @ global (copies every node value)."""
        import scipy.sparse as sp

        rows, cols = [], []
        for sub in self.subdomains:
            base = int(self.offsets[sub.index])
            local = np.arange(sub.n_dofs)
            rows.append(base + local)
            cols.append(3 * np.repeat(sub.l2g, 3) + np.tile(np.arange(3), sub.n_nodes))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sp.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_torn_dofs, 3 * n_global_nodes)
        )

    def to_global(self, torn, n_global_nodes):
        """Average the copies of a torn vector into a (n_nodes, 3) field."""
        L = self.gather_matrix(n_global_nodes)
        counts = np.asarray(L.sum(axis=0)).ravel()
        counts[counts == 0] = 1.0
        return (L.T @ torn / counts).reshape(-1, 3)


def _bisect(ids, centroids, s, out, label):
    if s == 1:
        out[ids] = label
        return label + 1
    pts = centroids[ids]
    extent = pts.max(axis=0) - pts.min(axis=0)
    axis = int(np.argmax(extent))
    # stable sort keeps the split deterministic for tied coordinates
    order = ids[np.argsort(pts[:, axis], kind="stable")]
    s_left = s // 2
    cut = int(round(len(ids) * s_left / s))
    cut = min(max(cut, s_left), len(ids) - (s - s_left))
    label = _bisect(order[:cut], centroids, s_left, out, label)
    return _bisect(order[cut:], centroids, s - s_left, out, label)


def _face_adjacency(tets):
    """Pairs of tets sharing a face."""
    faces = np.sort(tets[:, _TET_FACES].reshape(-1, 3), axis=1)
    owner = np.repeat(np.arange(len(tets)), 4)
    order = np.lexsort(faces.T[::-1])
    f, o = faces[order], owner[order]
    same = np.all(f[1:] == f[:-1], axis=1)
    return np.stack([o[:-1][same], o[1:][same]], axis=1)


def _components(n, edges):
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges.tolist():
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(a) for a in range(n)])


def _make_face_connected(labels, adjacency, s):
    """Move stray face-disconnected pieces to the neighbouring subdomain.

    A subdomain whose tets are not face-connected has a rigid-body kernel
    larger than six, which breaks the a-priori kernel basis.
    """
    for _ in range(4 * s + 4):
        changed = False
        for p in range(s):
            ids = np.flatnonzero(labels == p)
            if len(ids) == 0:
                continue
            local = -np.ones(len(labels), dtype=np.int64)
            local[ids] = np.arange(len(ids))
            inside = (labels[adjacency[:, 0]] == p) & (labels[adjacency[:, 1]] == p)
            comp = _components(len(ids), local[adjacency[inside]])
            roots, sizes = np.unique(comp, return_counts=True)
            if len(roots) == 1:
                continue
            keep = roots[np.argmax(sizes)]
            for root in roots:
                if root == keep:
                    continue
                piece = ids[comp == root]
                in_piece = np.zeros(len(labels), dtype=bool)
                in_piece[piece] = True
                a, b = adjacency[:, 0], adjacency[:, 1]
                cross = (in_piece[a] & ~in_piece[b]) | (in_piece[b] & ~in_piece[a])
                nbr = np.where(in_piece[a[cross]], labels[b[cross]], labels[a[cross]])
                nbr = nbr[nbr != p]
                if len(nbr) == 0:
                    continue  # genuinely disconnected mesh piece
                target = np.bincount(nbr, minlength=s).argmax()
                labels[piece] = target
                changed = True
        if not changed:
            break
    return labels


def partition(mesh: Mesh, s: int) -> Decomposition:
    """Split the tets into ``s`` face-connected subdomains by coordinate bisection."""
    s = int(s)
    if s < 1 or s > mesh.n_tets:
        raise TooManySubdomains(f"cannot split {mesh.n_tets} tets into {s} subdomains")
    centroids = mesh.nodes[mesh.tets].mean(axis=1)
    labels = np.empty(mesh.n_tets, dtype=np.int64)
    _bisect(np.arange(mesh.n_tets), centroids, s, labels, 0)
    if s > 1:
        labels = _make_face_connected(labels, _face_adjacency(mesh.tets), s)
    if len(np.unique(labels)) != s:
        raise TooManySubdomains(f"could not form {s} nonempty connected subdomains")
    return decomposition_from_labels(mesh, labels)


def decomposition_from_labels(mesh: Mesh, labels) -> Decomposition:
    labels = np.asarray(labels, dtype=np.int64)
    s = int(labels.max()) + 1
    subs = []
    offsets = [0]
    owners_of_node = [[] for _ in range(mesh.n_nodes)]
    for p in range(s):
        tet_ids = np.flatnonzero(labels == p)
        gtets = mesh.tets[tet_ids]
        l2g = np.unique(gtets)
        g2l = np.full(mesh.n_nodes, -1, dtype=np.int64)
        g2l[l2g] = np.arange(len(l2g))
        subs.append(Subdomain(p, tet_ids, l2g, g2l[gtets], mesh.nodes[l2g]))
        offsets.append(offsets[-1] + 3 * len(l2g))
        for g in l2g.tolist():
            owners_of_node[g].append(p)
    pairs = [
        (g, owners[a], owners[b])
        for g, owners in enumerate(owners_of_node)
        for a in range(len(owners))
        for b in range(a + 1, len(owners))
    ]
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 3)
    return Decomposition(labels, tuple(subs), pairs, np.array(offsets, dtype=np.int64))
