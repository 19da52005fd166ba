"""Implicit Euler time stepping with a semismooth Newton solve per step."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly, material
from .errors import LinearSolveFailure, NoConvergence, TfetiPlastError
from .partition import partition
from .tfeti import PRECONDITIONERS, PcgpReport, TfetiSolver

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    eps_newton: float = 1e-4
    eps_pcgp: float = 1e-7
    max_newton: int = 50
    preconditioner: str = "lumped"
    linear_solver: str = "tfeti"
    subdomains: int = 1
    workers: int = 1
    max_pcgp: int | None = None

    def __post_init__(self):
        for name in ("eps_newton", "eps_pcgp"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
        if int(self.max_newton) < 1:
            raise ValueError("max_newton must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.linear_solver not in ("tfeti", "direct"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")
        if int(self.subdomains) < 1:
            raise ValueError("subdomains must be >= 1")


@dataclass
class NewtonRecord:
    step: int
    newton_iter: int
    stopping_criterion: float
    pcgp_iters: int
    plastic_elements: int
    seconds: float


@dataclass
class StepRecord:
    step: int
    time: float
    newton: list
    plastic_elements: int
    seconds: float

    @property
    def newton_iterations(self):
        return len(self.newton)

    @property
    def pcgp_iterations(self):
        return sum(r.pcgp_iters for r in self.newton)


@dataclass
class SolveReport:
    steps: list = field(default_factory=list)

    @property
    def rows(self):
        return [r for step in self.steps for r in step.newton]

    @property
    def total_newton(self):
        return sum(s.newton_iterations for s in self.steps)

    @property
    def total_pcgp(self):
        return sum(s.pcgp_iterations for s in self.steps)


@dataclass
class FieldState:
    """Per-element history (global element order)."""

    sigma: np.ndarray
    kappa: np.ndarray
    eps: np.ndarray
    plastic: np.ndarray

    @classmethod
    def zeros(cls, n_tets):
        return cls(np.zeros((n_tets, 6)), np.zeros(n_tets), np.zeros((n_tets, 6)),
                   np.zeros(n_tets, dtype=bool))

    def copy(self):
        return FieldState(self.sigma.copy(), self.kappa.copy(), self.eps.copy(), self.plastic.copy())


class DirectSolver:
    """Monolithic sparse solve of the glued problem, same interface as TfetiSolver."""

    def __init__(self, mesh, decomp):
        self.L = decomp.gather_matrix(mesh.n_nodes)
        self.free = np.flatnonzero(~mesh.dirichlet.ravel())

    def solve(self, K_blocks, f):
        K = (self.L.T @ sp.block_diag(K_blocks, format="csr") @ self.L).tocsr()
        fg = self.L.T @ f
        u = np.zeros(K.shape[0])
        Kf = sp.csc_matrix(K[self.free][:, self.free])
        try:
            u[self.free] = spla.splu(Kf).solve(fg[self.free])
        except RuntimeError as exc:
            raise LinearSolveFailure(f"direct solve failed: {exc}") from exc
        return self.L @ u, PcgpReport(preconditioner="direct")


class ElastoplasticProblem:
    """Mesh, decomposition, material and solver settings of one simulation."""

    def __init__(self, mesh, params, cfg: SolverConfig | None = None, decomp=None):
        self.mesh = mesh
        self.params = params
        self.cfg = cfg or SolverConfig()
        self.decomp = decomp if decomp is not None else partition(mesh, self.cfg.subdomains)
        self.batches = [assembly.subdomain_batch(sub) for sub in self.decomp.subdomains]
        if self.cfg.linear_solver == "direct":
            self.linear = DirectSolver(mesh, self.decomp)
        else:
            self.linear = TfetiSolver(
                mesh, self.decomp, self.cfg.preconditioner, self.cfg.eps_pcgp,
                workers=self.cfg.workers, max_iterations=self.cfg.max_pcgp,
            )

    # -- helpers -----------------------------------------------------------

    def load(self, program, t):
        return assembly.torn_load_vector(
            self.mesh, self.decomp, program.traction_scale(t), program.body_force(t)
        )

    def blocks(self, v):
        o = self.decomp.offsets
        return [v[a:b] for a, b in zip(o[:-1], o[1:])]

    def element_strains(self, u):
        out = np.zeros((self.mesh.n_tets, 6))
        for sub, batch, up in zip(self.decomp.subdomains, self.batches, self.blocks(u)):
            out[sub.tet_ids] = batch.strains(up)
        return out

    def to_global(self, u):
        return self.decomp.to_global(u, self.mesh.n_nodes)

    # -- Newton --------------------------------------------------------------

    def newton_step(self, du, df, state: FieldState):
        """One linearization: returns (correction, PcgpReport, plastic count)."""
        K_blocks, rhs = [], []
        plastic = 0
        for sub, batch, du_p, df_p in zip(
            self.decomp.subdomains, self.batches, self.blocks(du), self.blocks(df)
        ):
            ids = sub.tet_ids
            system = assembly.assemble_subdomain(
                sub, du_p, df_p, state.sigma[ids], state.kappa[ids], self.params, batch
            )
            K_blocks.append(system.stiffness)
            rhs.append(system.rhs)
            plastic += int(system.plastic.sum())
        delta, report = self.linear.solve(K_blocks, np.concatenate(rhs))
        return delta, report, plastic

    def newton_solve(self, df, state: FieldState, step=0):
        cfg = self.cfg
        du = np.zeros(self.decomp.n_torn_dofs)
        du_norm = 0.0
        rows = []
        for i in range(1, int(cfg.max_newton) + 1):
            t0 = time.perf_counter()
            try:
                delta, report, plastic = self.newton_step(du, df, state)
            except LinearSolveFailure:
                raise
            except TfetiPlastError as exc:
                raise LinearSolveFailure(f"Newton iteration {i}: {exc}", newton_index=i) from exc
            du = du + delta
            new_norm = float(np.linalg.norm(du))
            denom = new_norm + du_norm
            criterion = float(np.linalg.norm(delta)) / denom if denom > 0.0 else 0.0
            du_norm = new_norm
            rows.append(NewtonRecord(step, i, criterion, report.iterations, plastic,
                                     time.perf_counter() - t0))
            log.debug("step %d newton %d: criterion %.4e, pcgp %d, plastic %d",
                      step, i, criterion, report.iterations, plastic)
            if criterion <= cfg.eps_newton:
                _check_tail(rows)
                return du, rows
        exc = NoConvergence(
            f"Newton did not converge in {cfg.max_newton} iterations at step {step}",
            history=[r.stopping_criterion for r in rows], step=step, rows=rows,
        )
        raise exc

    def update_state(self, du, state: FieldState):
        """Return mapping at the converged increment; returns the new state."""
        deps = self.element_strains(du)
        dsig, dkap, plastic, _, _ = material.stress_update(state.sigma, state.kappa, deps, self.params)
        return FieldState(state.sigma + dsig, state.kappa + dkap, state.eps + deps, plastic)

    def run(self, program, state: FieldState | None = None, on_step=None):
        """Time loop over ``program.times``; returns (SolveReport, u_torn, FieldState).

        ``on_step(record, u_torn, state)`` is called after every converged step.
        """
        state = state or FieldState.zeros(self.mesh.n_tets)
        u = np.zeros(self.decomp.n_torn_dofs)
        report = SolveReport()
        f_prev = self.load(program, program.times[0])
        for k, t in enumerate(program.times[1:], start=1):
            t0 = time.perf_counter()
            f_next = self.load(program, t)
            try:
                du, rows = self.newton_solve(f_next - f_prev, state, step=k)
            except NoConvergence as exc:
                exc.step = k
                raise
            state = self.update_state(du, state)
            u = u + du
            f_prev = f_next
            record = StepRecord(k, float(t), rows, int(state.plastic.sum()), time.perf_counter() - t0)
            report.steps.append(record)
            if on_step is not None:
                on_step(record, u, state)
        return report, u, state

    def solve_elastic(self, f):
        """Purely elastic solve with the current linear solver."""
        K_blocks = [assembly.stiffness_from_tangents(b, material.hooke_matrix(self.params))
                    for b in self.batches]
        return self.linear.solve(K_blocks, f)


def _check_tail(rows):
    """Warn when the criterion grows after the plastic set has settled."""
    for prev, cur in zip(rows[1:], rows[2:]):
        if prev.plastic_elements == cur.plastic_elements and cur.stopping_criterion >= prev.stopping_criterion:
            log.warning(
                "Newton criterion did not decrease with a stable plastic set: %s",
                [(r.newton_iter, r.stopping_criterion, r.plastic_elements) for r in rows],
            )
            return


def newton_step(problem: ElastoplasticProblem, iterate, df, state):
    return problem.newton_step(iterate, df, state)


def newton_solve(problem: ElastoplasticProblem, df, state, step=0):
    return problem.newton_solve(df, state, step)


def run_time_loop(mesh, params, program, cfg: SolverConfig | None = None, decomp=None):
    problem = ElastoplasticProblem(mesh, params, cfg, decomp)
    report, u, state = problem.run(program)
    return problem, report, u, state
