"""Latent-process state-space construction and exact discretization.

Each modal discrepancy channel carries an exponential-kernel prior whose
state-space form is a scalar Ornstein-Uhlenbeck process. The modal
dynamics and the latent states are stacked into one linear SDE; the
discrete-time transition, input, and process-noise matrices come from
matrix exponentials (held input over each interval; the noise integral
via the block-exponential construction, so no quadrature is involved in
the production path).

The kernel interface is companion-form (F, L, q, H) so higher-order
stationary kernels can slot in; only the exponential kernel ships.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalError
from .modal import ModalBasis


@dataclass(frozen=True)
class GPHyperparams:
    """Per-mode amplitude and length-scale, both strictly positive."""

    alpha: np.ndarray
    ell: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        ell = np.atleast_1d(np.asarray(self.ell, dtype=float))
        if alpha.shape != ell.shape:
            raise InvalidInputError("alpha and ell must have equal length")
        if np.any(alpha <= 0.0) or np.any(ell <= 0.0):
            raise InvalidInputError("hyperparameters must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "ell", ell)

    @property
    def m(self) -> int:
        return self.alpha.size

    def to_log(self) -> np.ndarray:
        return np.concatenate([np.log(self.alpha), np.log(self.ell)])

    @staticmethod
    def from_log(vec: np.ndarray) -> "GPHyperparams":
        vec = np.asarray(vec, dtype=float)
        m = vec.size // 2
        return GPHyperparams(np.exp(vec[:m]), np.exp(vec[m:]))


@dataclass(frozen=True)
class KernelSSM:
    """Companion-form blocks of one latent channel: dx = F x dt + L dW,
    output H x, with white-noise spectral density q."""

    F: np.ndarray
    L: np.ndarray
    q: float
    H: np.ndarray


def ou_block(alpha: float, ell: float) -> tuple[float, float]:
    """Drift and diffusion of the exponential-kernel latent process.

    Returns (f, q) with f = -1/ell and q = 2*alpha^2/ell; the implied
    stationary variance q/(-2f) equals alpha^2 exactly.
    """
    if alpha <= 0.0 or ell <= 0.0:
        raise InvalidInputError("alpha and ell must be positive")
    return -1.0 / ell, 2.0 * alpha**2 / ell


def matern12_ssm(alpha: float, ell: float) -> KernelSSM:
    f, q = ou_block(alpha, ell)
    return KernelSSM(np.array([[f]]), np.array([[1.0]]), q, np.array([[1.0]]))


KERNELS = {"matern12": matern12_ssm}


@dataclass
class AugmentedSSM:
    """Stacked modal + latent system, continuous and discretized blocks."""

    A_c: np.ndarray
    B_c: np.ndarray
    Q: np.ndarray
    H_latent: np.ndarray
    m: int
    dt: float
    A: np.ndarray
    B: np.ndarray
    Q_d: np.ndarray

    @property
    def n_state(self) -> int:
        return self.A_c.shape[0]

    def latent_slice(self) -> slice:
        return slice(2 * self.m, self.n_state)

    def dump_debug(self, path) -> None:
        payload = {
            "dt": self.dt,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "Q_d": self.Q_d.tolist(),
        }
        Path(path).write_text(json.dumps(payload))


def assemble_augmented(basis: ModalBasis, theta: GPHyperparams,
                       jitter: float = 1e-12,
                       kernel: str = "matern12"):
    """Continuous blocks (A_c, B_c, Q, H_latent) of the stacked system.

    Layout: state [q, dq/dt, latent]; the latent output enters the
    acceleration row with a minus sign because the discrepancy force sits
    on the left-hand side of the modal balance.
    """
    m = basis.m
    if theta.m != m:
        raise InvalidInputError("hyperparameter count does not match basis")
    try:
        kernel_fn = KERNELS[kernel]
    except KeyError:
        raise InvalidInputError(f"unknown kernel {kernel!r}") from None
    blocks = [kernel_fn(a, l) for a, l in zip(theta.alpha, theta.ell)]
    d_total = sum(b.F.shape[0] for b in blocks)
    n = 2 * m + d_total

    A_c = np.zeros((n, n))
    A_c[:m, m:2 * m] = np.eye(m)
    A_c[m:2 * m, :m] = -np.diag(basis.omega**2)
    A_c[m:2 * m, m:2 * m] = -np.diag(basis.xi)

    H_latent = np.zeros((m, d_total))
    Q = np.zeros((n, n))
    Q[:2 * m, :2 * m] = jitter * np.eye(2 * m)
    off = 0
    for i, b in enumerate(blocks):
        d = b.F.shape[0]
        sl = slice(2 * m + off, 2 * m + off + d)
        A_c[sl, sl] = b.F
        H_latent[i, off:off + d] = b.H[0]
        Q[sl, sl] = b.L @ b.L.T * b.q
        off += d
    A_c[m:2 * m, 2 * m:] = -H_latent

    B_c = np.zeros((n, m))
    B_c[m:2 * m, :] = np.eye(m)
    return A_c, B_c, Q, H_latent


def discretize(A_c: np.ndarray, B_c: np.ndarray, Q: np.ndarray,
               dt: float):
    """Held-input discretization (A, B, Q_d) at interval ``dt``.

    B uses the augmented-exponential construction rather than inverting
    A_c, which stays valid when A_c is singular or ill-conditioned. Q_d
    comes from the block-exponential (Van Loan) identity and is
    symmetrized before return.
    """
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    n = A_c.shape[0]
    n_in = B_c.shape[1]

    aug = np.zeros((n + n_in, n + n_in))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    try:
        E = scipy.linalg.expm(aug * dt)
    except Exception as ex:  # pragma: no cover - expm rarely raises
        raise NumericalError("matrix exponential failed") from ex
    A = E[:n, :n]
    B = E[:n, n:]
    if not np.isfinite(A).all():
        raise NumericalError("matrix exponential overflowed")

    vl = np.zeros((2 * n, 2 * n))
    vl[:n, :n] = -A_c
    vl[:n, n:] = Q
    vl[n:, n:] = A_c.T
    EV = scipy.linalg.expm(vl * dt)
    Q_d = A @ EV[:n, n:]
    Q_d = 0.5 * (Q_d + Q_d.T)
    return A, B, Q_d


def build_augmented_ssm(basis: ModalBasis, theta: GPHyperparams, dt: float,
                        jitter: float = 1e-12,
                        kernel: str = "matern12") -> AugmentedSSM:
    A_c, B_c, Q, H_latent = assemble_augmented(basis, theta, jitter, kernel)
    A, B, Q_d = discretize(A_c, B_c, Q, dt)
    return AugmentedSSM(A_c, B_c, Q, H_latent, basis.m, dt, A, B, Q_d)


def qd_quadrature(A_c: np.ndarray, Q: np.ndarray, dt: float,
                  rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Adaptive-quadrature evaluation of the process-noise integral.

    Independent cross-check for the block-exponential path; integrates
    expm(A_c (dt - tau)) Q expm(A_c (dt - tau))^T over the interval.
    """
    from scipy.integrate import quad_vec

    def integrand(tau):
        Psi = scipy.linalg.expm(A_c * (dt - tau))
        return Psi @ Q @ Psi.T

    val, _err = quad_vec(integrand, 0.0, dt, epsrel=rtol, epsabs=atol)
    return val
