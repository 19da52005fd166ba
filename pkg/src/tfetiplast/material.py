"""Voigt-form tensor algebra and the one-step von Mises return mapping.

Stress vectors are ordered (s11, s22, s33, s12, s23, s13); strain vectors are
ordered (e11, e22, e33, 2*e12, 2*e23, 2*e13).  With this pairing ``sigma @ eps``
equals the Frobenius inner product of the underlying tensors.

All batched routines accept arrays with arbitrary leading dimensions and a
trailing axis of length 6.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NewType

import numpy as np

from .errors import ZeroDeviator

StressVoigt = NewType("StressVoigt", np.ndarray)
StrainVoigt = NewType("StrainVoigt", np.ndarray)

SQRT_3_2 = np.sqrt(1.5)
SQRT_2_3 = np.sqrt(2.0 / 3.0)

P_DIAG = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
HYDROSTATIC = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# relative threshold below which a deviator is treated as zero
ZERO_DEVIATOR_RTOL = 1e-14


@dataclass(frozen=True)
class MaterialParams:
    """Lame constants, initial yield stress and linear isotropic hardening modulus."""

    lam: float
    mu: float
    sigma_y: float
    hardening_modulus: float

    def __post_init__(self):
        for name in ("lam", "mu", "sigma_y", "hardening_modulus"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")

    @classmethod
    def from_engineering(cls, young, poisson, sigma_y, hardening_modulus):
        """Build parameters from Young's modulus and Poisson's ratio."""
        if not 0.0 < poisson < 0.5:
            raise ValueError(f"poisson ratio must lie in (0, 0.5), got {poisson!r}")
        lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        mu = young / (2.0 * (1.0 + poisson))
        return cls(lam, mu, sigma_y, hardening_modulus)

    @property
    def young(self):
        return self.mu * (3.0 * self.lam + 2.0 * self.mu) / (self.lam + self.mu)

    @property
    def plastic_ratio(self):
        """3mu / (3mu + H_m); the fraction of the trial overstress that is returned."""
        return 3.0 * self.mu / (3.0 * self.mu + self.hardening_modulus)

    @property
    def tangent_lower_bound(self):
        """H_m / (3mu + H_m), lower spectral bound of the tangent relative to C."""
        return self.hardening_modulus / (3.0 * self.mu + self.hardening_modulus)


@dataclass
class PlasticState:
    """History of one element: stress, accumulated plastic strain, total strain."""

    sigma: np.ndarray = field(default_factory=lambda: np.zeros(6))
    kappa: float = 0.0
    eps: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(6)
        self.eps = np.asarray(self.eps, dtype=float).reshape(6)
        self.kappa = float(self.kappa)
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")


@dataclass(frozen=True)
class ReturnMapResult:
    delta_sigma: np.ndarray
    delta_kappa: float
    plastic: bool
    trial_stress: np.ndarray


def hooke_matrix(params: MaterialParams) -> np.ndarray:
    lam, mu = params.lam, params.mu
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[[0, 1, 2], [0, 1, 2]] = lam + 2.0 * mu
    C[[3, 4, 5], [3, 4, 5]] = mu
    return C


def deviatoric_matrices():
    """Return ``(E_eps, E_sigma, P)``.

    ``E_sigma @ tau`` is the deviator of a stress vector.  ``E_eps @ eta`` maps a
    strain vector to the stress-layout vector of its deviator, so that
    ``2 mu E_eps == E_sigma @ C``.
    """
    E_eps = np.zeros((6, 6))
    E_eps[:3, :3] = -1.0 / 3.0
    E_eps[[0, 1, 2], [0, 1, 2]] = 2.0 / 3.0
    E_eps[[3, 4, 5], [3, 4, 5]] = 0.5
    P = np.diag(P_DIAG)
    return E_eps, P @ E_eps, P


def deviator(tau):
    """Batched ``E_sigma @ tau`` without forming the matrix."""
    tau = np.asarray(tau, dtype=float)
    dev = tau.copy()
    dev[..., :3] -= tau[..., :3].mean(axis=-1, keepdims=True)
    return dev


def sigma_norm(tau):
    """sqrt(tau^T P tau); the Frobenius norm of the encoded symmetric tensor."""
    tau = np.asarray(tau, dtype=float)
    return np.sqrt(np.einsum("...i,i,...i->...", tau, P_DIAG, tau))


def yield_function(tau, kappa, params: MaterialParams):
    """von Mises yield function sqrt(3/2) |dev tau| - (sigma_y + H_m kappa)."""
    return SQRT_3_2 * sigma_norm(deviator(tau)) - (
        params.sigma_y + params.hardening_modulus * np.asarray(kappa, dtype=float)
    )


def flow_direction(tau):
    """Unit (in the sigma-norm) deviatoric direction of a single stress vector."""
    tau = np.asarray(tau, dtype=float)
    dev = deviator(tau)
    norm = sigma_norm(dev)
    if norm <= ZERO_DEVIATOR_RTOL * max(1.0, float(sigma_norm(tau))):
        raise ZeroDeviator("stress deviator vanishes; flow direction undefined")
    return dev / norm


def _as_state(state_k):
    if isinstance(state_k, PlasticState):
        return state_k.sigma, state_k.kappa
    sigma, kappa = state_k[0], state_k[1]
    return np.asarray(sigma, dtype=float), float(kappa)


def return_mapping(state_k, delta_eps, params: MaterialParams) -> ReturnMapResult:
    """Elastic predictor / plastic corrector for a single element."""
    sigma_k, kappa_k = _as_state(state_k)
    dsig, dkap, plastic, trial, _ = stress_update(
        sigma_k[None], np.array([kappa_k]), np.asarray(delta_eps, dtype=float)[None], params
    )
    return ReturnMapResult(dsig[0], float(dkap[0]), bool(plastic[0]), trial[0])


def consistent_tangent(state_k, delta_eps, params: MaterialParams) -> np.ndarray:
    """Generalized derivative of the stress increment w.r.t. the strain increment."""
    sigma_k, kappa_k = _as_state(state_k)
    *_, tangent = stress_update(
        sigma_k[None],
        np.array([kappa_k]),
        np.asarray(delta_eps, dtype=float)[None],
        params,
        with_tangent=True,
    )
    return tangent[0]


def stress_update(sigma_k, kappa_k, delta_eps, params: MaterialParams, with_tangent=False):
    """Batched return mapping over ``n`` elements.

    Parameters
    ----------
    sigma_k : (n, 6) array
        Stress at the start of the step.
    kappa_k : (n,) array
        Accumulated plastic strain at the start of the step.
    delta_eps : (n, 6) array
        Strain increment.

    Returns
    -------
    delta_sigma : (n, 6) array
    delta_kappa : (n,) array
    plastic : (n,) bool array
        True where the trial stress lies strictly outside the yield surface.
    trial : (n, 6) array
    tangent : (n, 6, 6) array or None
    """
    C = hooke_matrix(params)
    sigma_k = np.asarray(sigma_k, dtype=float)
    kappa_k = np.asarray(kappa_k, dtype=float)
    delta_eps = np.asarray(delta_eps, dtype=float)

    elastic_incr = delta_eps @ C  # C is symmetric
    trial = sigma_k + elastic_incr
    dev = deviator(trial)
    dev_norm = sigma_norm(dev)
    phi = SQRT_3_2 * dev_norm - (params.sigma_y + params.hardening_modulus * kappa_k)
    plastic = phi > 0.0

    denom = 3.0 * params.mu + params.hardening_modulus
    beta = params.plastic_ratio
    delta_sigma = elastic_incr.copy()
    delta_kappa = np.zeros_like(kappa_k)
    n_hat = np.zeros_like(dev)
    if np.any(plastic):
        n_hat[plastic] = dev[plastic] / dev_norm[plastic, None]
        phi_p = phi[plastic]
        delta_kappa[plastic] = phi_p / denom
        delta_sigma[plastic] -= (beta * SQRT_2_3 * phi_p)[:, None] * n_hat[plastic]

    tangent = None
    if with_tangent:
        tangent = np.broadcast_to(C, trial.shape[:-1] + (6, 6)).copy()
        if np.any(plastic):
            E_eps, _, _ = deviatoric_matrices()
            two_mu_beta = 2.0 * params.mu * beta
            ratio = (
                SQRT_2_3
                * (params.sigma_y + params.hardening_modulus * kappa_k[plastic])
                / dev_norm[plastic]
            )
            nn = np.einsum("ni,nj->nij", n_hat[plastic], n_hat[plastic])
            tangent[plastic] = (
                C
                - two_mu_beta * E_eps
                - two_mu_beta * ratio[:, None, None] * (nn - E_eps)
            )
    return delta_sigma, delta_kappa, plastic, trial, tangent


def von_mises_norm(sigma):
    """|dev sigma|_F, the quantity plotted as von Mises stress in the field output."""
    return sigma_norm(deviator(sigma))
