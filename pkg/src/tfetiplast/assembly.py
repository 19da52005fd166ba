"""P1 tetrahedron kinematics and per-subdomain assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import material
from .errors import DegenerateElement

VOL_RTOL = 1e-12


@dataclass(frozen=True)
class ElementGeometry:
    b_matrix: np.ndarray  # (6, 12)
    volume: float


@dataclass(frozen=True)
class ElementBatch:
    """Strain-displacement matrices, volumes and dof maps of a set of tets."""

    b: np.ndarray  # (n, 6, 12)
    volume: np.ndarray  # (n,)
    dofs: np.ndarray  # (n, 12) local dof numbers
    n_dofs: int

    def strains(self, u):
        return np.einsum("eij,ej->ei", self.b, u[self.dofs])


@dataclass
class SubdomainSystem:
    stiffness: sp.csr_matrix
    rhs: np.ndarray
    delta_sigma: np.ndarray
    delta_kappa: np.ndarray
    plastic: np.ndarray


def strain_displacement(coords, ids=None):
    """Batched G_T and |T| for tets with vertex coordinates ``coords`` (n, 4, 3)."""
    coords = np.asarray(coords, dtype=float)
    edges = coords[:, 1:] - coords[:, :1]  # rows x_b - x_1
    det = np.linalg.det(edges)
    diag = np.linalg.norm(coords.max(axis=1) - coords.min(axis=1), axis=1)
    bad = np.flatnonzero(det / 6.0 <= VOL_RTOL * diag**3)
    if bad.size:
        elem = int(bad[0]) if ids is None else int(ids[bad[0]])
        raise DegenerateElement(f"nonpositive or vanishing volume {det[bad[0]] / 6.0:g}", elem)
    inv = np.linalg.inv(edges)  # columns are gradients of N_2..N_4
    grads = np.empty((len(coords), 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)

    gx, gy, gz = grads[..., 0], grads[..., 1], grads[..., 2]
    b = np.zeros((len(coords), 6, 12))
    b[:, 0, 0::3] = gx
    b[:, 1, 1::3] = gy
    b[:, 2, 2::3] = gz
    b[:, 3, 0::3] = gy
    b[:, 3, 1::3] = gx
    b[:, 4, 1::3] = gz
    b[:, 4, 2::3] = gy
    b[:, 5, 0::3] = gz
    b[:, 5, 2::3] = gx
    return b, det / 6.0


def element_geometry(coords) -> ElementGeometry:
    b, vol = strain_displacement(np.asarray(coords, dtype=float)[None])
    return ElementGeometry(b[0], float(vol[0]))


def element_batch(nodes, tets, tet_ids=None) -> ElementBatch:
    b, vol = strain_displacement(nodes[tets], tet_ids)
    dofs = (3 * tets[:, :, None] + np.arange(3)).reshape(-1, 12)
    return ElementBatch(b, vol, dofs, 3 * len(nodes))


def subdomain_batch(sub) -> ElementBatch:
    return element_batch(sub.nodes, sub.tets, sub.tet_ids)


def _scatter(batch: ElementBatch, ke):
    rows = np.broadcast_to(batch.dofs[:, :, None], ke.shape).ravel()
    cols = np.broadcast_to(batch.dofs[:, None, :], ke.shape).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(batch.n_dofs, batch.n_dofs)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def stiffness_from_tangents(batch: ElementBatch, tangents):
    """Sum of |T| G_T^T D_T G_T with one 6x6 material matrix per element (or one shared)."""
    tangents = np.asarray(tangents, dtype=float)
    if tangents.ndim == 2:
        db = np.einsum("ij,ejk->eik", tangents, batch.b)
    else:
        db = np.einsum("eij,ejk->eik", tangents, batch.b)
    ke = np.einsum("e,eji,ejk->eik", batch.volume, batch.b, db)
    return _scatter(batch, ke)


def internal_force(batch: ElementBatch, stress):
    """Sum of |T| G_T^T sigma_T, accumulated in element order."""
    fe = np.einsum("e,eji,ej->ei", batch.volume, batch.b, stress)
    return np.bincount(batch.dofs.ravel(), weights=fe.ravel(), minlength=batch.n_dofs)


def assemble_elastic_stiffness(sub, params, batch=None):
    batch = batch or subdomain_batch(sub)
    return stiffness_from_tangents(batch, material.hooke_matrix(params))


def assemble_subdomain(sub, du_local, df_local, sigma_k, kappa_k, params, batch=None):
    """Tangent stiffness and Newton right-hand side of one subdomain.

    For the current displacement increment ``du_local`` every element gets
    ``delta_sigma = T(G du)`` and ``delta_kappa``; the right-hand side is
    ``df_local - sum |T| G^T delta_sigma`` and the stiffness uses the
    consistent tangent at the same strain increment.
    """
    batch = batch or subdomain_batch(sub)
    deps = batch.strains(np.asarray(du_local, dtype=float))
    dsig, dkap, plastic, _, tangent = material.stress_update(
        sigma_k, kappa_k, deps, params, with_tangent=True
    )
    K = stiffness_from_tangents(batch, tangent)
    rhs = np.asarray(df_local, dtype=float) - internal_force(batch, dsig)
    return SubdomainSystem(K, rhs, dsig, dkap, plastic)


def load_vector(nodes, tets, faces, tractions, traction_scale=1.0, body_force=None):
    """Nodal loads: one-point face quadrature for tractions, lumped body force."""
    f = np.zeros(3 * len(nodes))
    if len(faces):
        x = nodes[faces]
        area = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
        share = (traction_scale * area / 3.0)[:, None] * tractions
        idx = 3 * faces[:, :, None] + np.arange(3)
        np.add.at(f, idx.reshape(len(faces), -1), np.repeat(share[:, None, :], 3, axis=1).reshape(len(faces), -1))
    if body_force is not None and np.any(body_force):
        x = nodes[tets]
        vol = np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0
        share = (vol / 4.0)[:, None] * np.asarray(body_force, dtype=float)
        idx = 3 * tets[:, :, None] + np.arange(3)
        np.add.at(f, idx.reshape(len(tets), -1), np.repeat(share[:, None, :], 4, axis=1).reshape(len(tets), -1))
    return f


def torn_load_vector(mesh, decomp, traction_scale=1.0, body_force=None):
    """Load vector on the torn space; each face / tet loads its own subdomain."""
    face_owner = _face_subdomains(mesh, decomp)
    parts = []
    for sub in decomp.subdomains:
        g2l = np.full(mesh.n_nodes, -1, dtype=np.int64)
        g2l[sub.l2g] = np.arange(sub.n_nodes)
        mine = face_owner == sub.index
        parts.append(
            load_vector(
                sub.nodes,
                sub.tets,
                g2l[mesh.neumann_faces[mine]],
                mesh.neumann_tractions[mine],
                traction_scale,
                body_force,
            )
        )
    return np.concatenate(parts) if parts else np.zeros(0)


def _face_subdomains(mesh, decomp):
    if not len(mesh.neumann_faces):
        return np.zeros(0, dtype=np.int64)
    lookup = {}
    for t, tet in enumerate(mesh.tets.tolist()):
        for skip in range(4):
            key = tuple(sorted(tet[:skip] + tet[skip + 1:]))
            lookup[key] = t
    owners = [lookup[tuple(sorted(face))] for face in mesh.neumann_faces.tolist()]
    return decomp.subdomain_of_tet[np.array(owners, dtype=np.int64)]


def global_load_vector(mesh, traction_scale=1.0, body_force=None):
    return load_vector(
        mesh.nodes, mesh.tets, mesh.neumann_faces, mesh.neumann_tractions, traction_scale, body_force
    )
