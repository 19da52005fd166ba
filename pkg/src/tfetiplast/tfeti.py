"""Total FETI: constraints, kernels, generalized inverses, dual problem and PCGP.

Vectors on the primal side are *torn*: every subdomain owns its own copy of
the nodes it touches, laid out block by block (see ``Decomposition.offsets``).
Gluing between copies and the Dirichlet conditions are both enforced through
the constraint matrix ``B``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BreakdownError,
    CoarseSingular,
    FactorizationFailure,
    MaxIterations,
    RankDeficiency,
)

log = logging.getLogger(__name__)

GLUING = "gluing"
DIRICHLET = "dirichlet"

# dense Cholesky of the coarse matrix up to this size
DENSE_COARSE_LIMIT = 3000


# --------------------------------------------------------------------------
# constraints
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintMatrix:
    matrix: sp.csr_matrix
    kind: np.ndarray  # per row, GLUING or DIRICHLET

    @property
    def n_rows(self):
        return self.matrix.shape[0]

    @property
    def n_gluing(self):
        return int(np.sum(self.kind == GLUING))

    @property
    def n_dirichlet(self):
        return int(np.sum(self.kind == DIRICHLET))


def _orthonormalize_rows(rows, tol=1e-10):
    """Modified Gram-Schmidt in the given order, dropping dependent rows.

    Returns the orthonormal rows and, for each, the index of the input row it
    came from.
    """
    basis, origin = [], []
    for i, r in enumerate(rows):
        v = np.array(r, dtype=float)
        scale = np.linalg.norm(v)
        for q in basis:
            v -= (q @ v) * q
        norm = np.linalg.norm(v)
        if norm > tol * scale:
            basis.append(v / norm)
            origin.append(i)
    return basis, origin


def build_constraints(decomp, mesh, orthonormal=True) -> ConstraintMatrix:
    """Gluing and Dirichlet rows over the torn vector, ``B = [B_G; B_U]``.

    In the redundant form every pair of copies of a node gives a ``+1/-1`` row
    per component and every copy of a constrained component gets a unit row.
    The orthonormal form processes each (node, component) group separately:
    Dirichlet rows first, then the gluing pairs, orthonormalized and with the
    dependent rows removed.  A constrained group thus yields unit rows on all
    copies, an unconstrained group shared by ``q`` subdomains ``q-1`` rows.
    """
    copies = decomp.copies()
    rows = {GLUING: [], DIRICHLET: []}  # lists of (cols, vals)
    for g in sorted(copies):
        owners = copies[g]
        for comp in range(3):
            cols = np.array([decomp.torn_dof(p, loc, comp) for p, loc in owners], dtype=np.int64)
            q = len(cols)
            group = []
            if mesh.dirichlet[g, comp]:
                for a in range(q):
                    e = np.zeros(q)
                    e[a] = 1.0
                    group.append((DIRICHLET, e))
            for a in range(q):
                for b in range(a + 1, q):
                    e = np.zeros(q)
                    e[a], e[b] = 1.0, -1.0
                    group.append((GLUING, e))
            if not group:
                continue
            if orthonormal:
                basis, origin = _orthonormalize_rows([v for _, v in group])
                expected = q if mesh.dirichlet[g, comp] else q - 1
                if len(basis) != expected:
                    raise RankDeficiency(
                        f"node {g} component {comp}: {len(basis)} independent rows, expected {expected}"
                    )
                group = [(group[o][0], v) for o, v in zip(origin, basis)]
            for kind, v in group:
                nz = np.abs(v) > 0.0
                rows[kind].append((cols[nz], v[nz]))

    ordered = rows[GLUING] + rows[DIRICHLET]
    kind = np.array([GLUING] * len(rows[GLUING]) + [DIRICHLET] * len(rows[DIRICHLET]))
    indptr = np.cumsum([0] + [len(c) for c, _ in ordered])
    indices = np.concatenate([c for c, _ in ordered]) if ordered else np.zeros(0, dtype=np.int64)
    data = np.concatenate([v for _, v in ordered]) if ordered else np.zeros(0)
    B = sp.csr_matrix((data, indices, indptr), shape=(len(ordered), decomp.n_torn_dofs))
    return ConstraintMatrix(B, kind)


# --------------------------------------------------------------------------
# kernels and generalized inverses
# --------------------------------------------------------------------------


def rigid_body_modes(nodes) -> np.ndarray:
    """Orthonormal basis (3n x 6) of translations and linearized rotations."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    x = nodes - nodes.mean(axis=0)
    R = np.zeros((3 * n, 6))
    for comp in range(3):
        R[comp::3, comp] = 1.0
    # omega x (x - xbar) for unit omega along each axis
    R[0::3, 3], R[1::3, 3] = -x[:, 1], x[:, 0]
    R[1::3, 4], R[2::3, 4] = -x[:, 2], x[:, 1]
    R[0::3, 5], R[2::3, 5] = x[:, 2], -x[:, 0]
    Q, _ = np.linalg.qr(R)
    return Q


class PseudoInverse:
    """Action of ``(K + rho R R^T)^{-1}``, a generalized inverse of ``K``.

    Since ``Im K`` and ``span R`` are orthogonal, the inverse splits into
    ``K^+ + R R^T / rho``.  ``K^+`` is applied as ``P G P`` with
    ``P = I - R R^T`` and ``G`` the sparse LU inverse of ``K`` regularized on
    six fixing degrees of freedom (picked by pivoted QR of ``R^T``), which is
    itself a generalized inverse of ``K``.  No dense fill is introduced.
    """

    def __init__(self, K, R, kernel_rtol=1e-8):
        K = sp.csc_matrix(K)
        n = K.shape[0]
        self.R = np.asarray(R, dtype=float)
        self.rho = float(K.diagonal().sum()) / n
        if not self.rho > 0.0:
            raise FactorizationFailure("stiffness block has nonpositive trace")
        k_norm = spla.norm(K, ord=1)
        if np.linalg.norm(K @ self.R) > kernel_rtol * k_norm * np.sqrt(self.R.shape[1]):
            raise FactorizationFailure("rigid body modes are not in the kernel of the block")
        _, _, piv = sla.qr(self.R.T, mode="economic", pivoting=True)
        self.fixing_dofs = np.sort(piv[: self.R.shape[1]])
        reg = sp.csc_matrix(
            (np.full(len(self.fixing_dofs), self.rho), (self.fixing_dofs, self.fixing_dofs)),
            shape=(n, n),
        )
        try:
            self._lu = spla.splu(K + reg, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise FactorizationFailure(f"regularized block is singular: {exc}") from exc

    def _project(self, v):
        return v - self.R @ (self.R.T @ v)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        out = self._project(self._lu.solve(self._project(v)))
        return out + self.R @ (self.R.T @ v) / self.rho


def factorize_pseudoinverse(K_p, R_p) -> PseudoInverse:
    return PseudoInverse(K_p, R_p)


# --------------------------------------------------------------------------
# dual problem
# --------------------------------------------------------------------------


class _BlockOps:
    """Per-subdomain maps over torn vectors; optionally run on a thread pool."""

    def __init__(self, offsets, workers=1):
        self.offsets = np.asarray(offsets)
        self.workers = int(workers)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def blocks(self, v):
        return [v[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def map(self, funcs, v):
        parts = self.blocks(v)
        if self._pool is None:
            out = [f(x) for f, x in zip(funcs, parts)]
        else:
            # results are collected in subdomain order, keeping sums deterministic
            out = list(self._pool.map(lambda fx: fx[0](fx[1]), zip(funcs, parts)))
        return np.concatenate(out)


@dataclass
class DualSystem:
    """Implicit ``F = B K^+ B^T`` with explicit ``N = -R^T B^T``, ``d``, ``e``.

    Built by :func:`assemble_dual`.
    """

    B: sp.csr_matrix
    K_blocks: list
    pinvs: list
    R_blocks: list
    f: np.ndarray
    N: np.ndarray
    d: np.ndarray
    e: np.ndarray
    ops: _BlockOps
    _coarse: object = field(repr=False)

    @property
    def n_dual(self):
        return self.B.shape[0]

    def apply_kdag(self, v):
        return self.ops.map(self.pinvs, v)

    def apply_k(self, v):
        return self.ops.map([K.dot for K in self.K_blocks], v)

    def apply_r(self, alpha):
        return np.concatenate(
            [R @ alpha[6 * p: 6 * p + R.shape[1]] for p, R in enumerate(self.R_blocks)]
        )

    def apply_F(self, lam):
        return self.B @ self.apply_kdag(self.B.T @ lam)

    def coarse_solve(self, rhs):
        """Apply H = (N N^T)^{-1}."""
        return self._coarse(rhs)

    def project(self, v):
        """P_N v = v - N^T H N v."""
        return v - self.N.T @ self.coarse_solve(self.N @ v)


def _coarse_factor(NNt):
    l = NNt.shape[0]
    if l == 0:
        return lambda x: x
    if l <= DENSE_COARSE_LIMIT:
        evals = np.linalg.eigvalsh(NNt)
        if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
            raise CoarseSingular(
                f"N N^T is singular (eigenvalue ratio {evals[0] / max(evals[-1], 1e-300):.2e});"
                " the constraints do not remove all rigid body motions"
            )
        factor = sla.cho_factor(NNt)
        return lambda x: sla.cho_solve(factor, x)
    try:
        lu = spla.splu(sp.csc_matrix(NNt))
    except RuntimeError as exc:
        raise CoarseSingular(str(exc)) from exc
    return lu.solve


def assemble_dual(K_blocks, pinvs, constraints, R_blocks, f, offsets, workers=1) -> DualSystem:
    B = constraints.matrix if isinstance(constraints, ConstraintMatrix) else sp.csr_matrix(constraints)
    ops = _BlockOps(offsets, workers)
    Bc = B.tocsc()
    N = np.vstack(
        [-(Bc[:, a:b] @ R).T for (a, b), R in zip(zip(offsets[:-1], offsets[1:]), R_blocks)]
    )
    N = np.asarray(N)
    coarse = _coarse_factor(N @ N.T)
    f = np.asarray(f, dtype=float)
    kdag_f = ops.map(pinvs, f)
    e = -np.concatenate([R.T @ fp for R, fp in zip(R_blocks, ops.blocks(f))])
    return DualSystem(B, list(K_blocks), list(pinvs), list(R_blocks), f, N, B @ kdag_f, e, ops, coarse)


# --------------------------------------------------------------------------
# preconditioners
# --------------------------------------------------------------------------


def lumped_preconditioner(K_blocks, B, offsets):
    """w -> B K B^T w."""
    B = sp.csr_matrix(B)
    ops = _BlockOps(offsets)
    funcs = [K.dot for K in K_blocks]

    def apply(w):
        return B @ ops.map(funcs, B.T @ w)

    return apply


class _SchurBlock:
    def __init__(self, K, boundary):
        K = sp.csr_matrix(K)
        n = K.shape[0]
        mask = np.zeros(n, dtype=bool)
        mask[boundary] = True
        self.b = np.flatnonzero(mask)
        self.i = np.flatnonzero(~mask)
        self.K_bb = K[self.b][:, self.b]
        self.K_bi = K[self.b][:, self.i]
        self.K_ib = K[self.i][:, self.b]
        self.n = n
        self.lu = None
        if len(self.i):
            try:
                self.lu = spla.splu(sp.csc_matrix(K[self.i][:, self.i]))
            except RuntimeError as exc:
                raise FactorizationFailure(f"interior block is singular: {exc}") from exc

    def schur(self, x_b):
        y = self.K_bb @ x_b
        if self.lu is not None:
            y -= self.K_bi @ self.lu.solve(self.K_ib @ x_b)
        return y

    def __call__(self, x):
        out = np.zeros(self.n)
        out[self.b] = self.schur(x[self.b])
        return out

    def dense(self):
        """Explicit Schur complement (for small blocks and checks)."""
        return np.column_stack([self.schur(e) for e in np.eye(len(self.b))])


def dirichlet_preconditioner(K_blocks, B, offsets):
    """w -> B S B^T w with S the boundary Schur complement of each block.

    Boundary dofs are those carrying a nonzero entry of ``B``.
    """
    B = sp.csr_matrix(B)
    touched = np.zeros(B.shape[1], dtype=bool)
    touched[B.indices] = True
    blocks = []
    for K, a, b in zip(K_blocks, offsets[:-1], offsets[1:]):
        blocks.append(_SchurBlock(K, np.flatnonzero(touched[a:b])))
    ops = _BlockOps(offsets)

    def apply(w):
        return B @ ops.map(blocks, B.T @ w)

    apply.blocks = blocks
    return apply


PRECONDITIONERS = {
    "none": None,
    "lumped": lumped_preconditioner,
    "dirichlet": dirichlet_preconditioner,
}


# --------------------------------------------------------------------------
# PCGP
# --------------------------------------------------------------------------


@dataclass
class PcgpReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    preconditioner: str = "none"
    initial_residual: float = 0.0

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else 0.0


def pcgp_solve(sys: DualSystem, precond=None, eps_pcgp=1e-7, max_iterations=None, name=None):
    """Projected preconditioned CG on ``P_N F lam_ker = P_N (d - F lam_im)``.

    ``precond`` is a callable approximating ``F^{-1}`` or None.  Stops as soon
    as the projected residual satisfies ``|w| <= eps_pcgp |r0|``.

    Returns
    -------
    lam, alpha, PcgpReport
    """
    m = sys.n_dual
    if max_iterations is None:
        max_iterations = max(10 * m, 10)
    report = PcgpReport(preconditioner=name or ("none" if precond is None else "custom"))

    lam_im = sys.N.T @ sys.coarse_solve(sys.e)
    r = sys.d - sys.apply_F(lam_im)
    r0_norm = float(np.linalg.norm(r))
    report.initial_residual = r0_norm
    lam_ker = np.zeros(m)
    p = None
    yw_prev = None

    while True:
        w = sys.project(r)
        w_norm = float(np.linalg.norm(w))
        report.residual_history.append(w_norm)
        if w_norm <= eps_pcgp * r0_norm:
            break
        if report.iterations >= max_iterations:
            raise MaxIterations(
                f"PCGP did not reach {eps_pcgp:g} in {max_iterations} iterations "
                f"(|w| = {w_norm:.3e}, |r0| = {r0_norm:.3e})",
                report,
            )
        y = sys.project(precond(w)) if precond is not None else w
        yw = float(y @ w)
        if yw <= 0.0:
            raise BreakdownError(f"preconditioner is not positive on Ker N (y.w = {yw:.3e})")
        p = y.copy() if p is None else y + (yw / yw_prev) * p
        Fp = sys.apply_F(p)
        pFp = float(p @ Fp)
        if pFp <= 0.0:
            raise BreakdownError(f"nonpositive curvature p.Fp = {pFp:.3e}")
        gamma = yw / pFp
        lam_ker += gamma * p
        r -= gamma * Fp
        yw_prev = yw
        report.iterations += 1

    lam = lam_im + lam_ker
    alpha = sys.coarse_solve(sys.N @ (sys.d - sys.apply_F(lam)))
    return lam, alpha, report


def recover_primal(sys: DualSystem, lam, alpha):
    """u = K^+ (f - B^T lam) + R alpha."""
    return sys.apply_kdag(sys.f - sys.B.T @ lam) + sys.apply_r(alpha)


# --------------------------------------------------------------------------
# convenience driver for repeated solves on a fixed decomposition
# --------------------------------------------------------------------------


class TfetiSolver:
    """Solve ``min 1/2 u^T K u - f^T u`` s.t. ``B u = 0`` for changing K and f.

    B and the kernel bases depend only on the mesh and its decomposition, so
    they are built once.
    """

    def __init__(self, mesh, decomp, preconditioner="lumped", eps_pcgp=1e-7, workers=1,
                 max_iterations=None):
        if preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {preconditioner!r}")
        self.decomp = decomp
        self.constraints = build_constraints(decomp, mesh)
        self.R_blocks = [rigid_body_modes(sub.nodes) for sub in decomp.subdomains]
        self.preconditioner = preconditioner
        self.eps_pcgp = eps_pcgp
        self.workers = workers
        self.max_iterations = max_iterations

    def solve(self, K_blocks, f):
        offsets = self.decomp.offsets
        pinvs = [PseudoInverse(K, R) for K, R in zip(K_blocks, self.R_blocks)]
        sys = assemble_dual(K_blocks, pinvs, self.constraints, self.R_blocks, f, offsets,
                            self.workers)
        builder = PRECONDITIONERS[self.preconditioner]
        precond = None if builder is None else builder(K_blocks, sys.B, offsets)
        lam, alpha, report = pcgp_solve(
            sys, precond, self.eps_pcgp, self.max_iterations, name=self.preconditioner
        )
        return recover_primal(sys, lam, alpha), report
