"""Generalized eigenanalysis, mode retention, and modal projections."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NumericalError
from .fem import FEModel

# entries within this relative band of the peak magnitude count as ties
# when fixing mode signs; the lowest DOF index wins so the convention is
# stable across meshes of the same structure
_SIGN_TIE_REL = 1e-6


@dataclass
class ModalBasis:
    """Mass-normalized truncated modal basis of an FE model.

    ``phi`` is N x m with unit modal masses, ``omega`` the ascending
    natural frequencies (rad/s) and ``xi`` the diagonal entries
    2*zeta_i*omega_i of the modal damping matrix.
    """

    phi: np.ndarray
    omega: np.ndarray
    xi: np.ndarray
    dof_map: tuple

    def __post_init__(self):
        for name in ("phi", "omega", "xi"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            setattr(self, name, arr)

    @property
    def m(self) -> int:
        return self.omega.size

    @property
    def n_dof(self) -> int:
        return self.phi.shape[0]

    def damping_ratios(self) -> np.ndarray:
        return self.xi / (2.0 * self.omega)


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    """Flip columns so the first near-largest-magnitude entry is positive."""
    phi = phi.copy()
    for j in range(phi.shape[1]):
        col = phi[:, j]
        mags = np.abs(col)
        peak = mags.max()
        pivot = int(np.argmax(mags >= peak * (1.0 - _SIGN_TIE_REL)))
        if col[pivot] < 0.0:
            phi[:, j] = -col
    return phi


def solve_modes(model: FEModel, m: int,
                damping_from_C: bool = True,
                default_ratio: float = 0.02) -> ModalBasis:
    """Lowest-frequency eigenpairs of (K, M), mass-normalized and sign-fixed.

    Modal damping comes from the diagonal of phi^T C phi when the model
    carries a damping matrix; otherwise every mode gets ``default_ratio``.
    """
    if not 1 <= m <= model.n_dof:
        raise InvalidInputError(f"m must lie in [1, {model.n_dof}]")
    if m > model.n_dof // 4 and m < model.n_dof:
        warnings.warn(
            f"retaining {m} of {model.n_dof} DOFs; reduction is marginal",
            stacklevel=2,
        )
    try:
        w2, phi = scipy.linalg.eigh(model.K, model.M, subset_by_index=(0, m - 1))
    except scipy.linalg.LinAlgError as ex:
        raise NumericalError("generalized eigensolver failed") from ex
    if np.any(w2 <= 0.0):
        raise NumericalError("non-positive eigenvalue: system has rigid modes")
    omega = np.sqrt(w2)
    order = np.argsort(omega)
    omega = omega[order]
    phi = phi[:, order]
    # scipy returns M-orthonormal vectors; renormalize defensively
    for j in range(m):
        scale = phi[:, j] @ model.M @ phi[:, j]
        phi[:, j] /= np.sqrt(scale)
    phi = _fix_signs(phi)

    if damping_from_C and np.any(model.C):
        xi = np.diag(phi.T @ model.C @ phi).copy()
    else:
        xi = 2.0 * default_ratio * omega
    return ModalBasis(phi, omega, xi, model.dof_map)


def select_mode_count(freq_axis: np.ndarray, spectrum_db: np.ndarray,
                      natural_frequencies: np.ndarray,
                      floor_db: float = 10.0) -> int:
    """Retained mode count from an averaged log-magnitude spectrum.

    A mode counts as present when the peak spectrum level inside a +-2%
    band around its natural frequency clears the median level by
    ``floor_db``. Returns the highest such mode index (1-based), with a
    floor of one mode.
    """
    freq_axis = np.asarray(freq_axis, dtype=float)
    spectrum_db = np.asarray(spectrum_db, dtype=float)
    if freq_axis.size == 0 or spectrum_db.size != freq_axis.size:
        raise InvalidInputError("empty or mismatched spectra")
    floor = np.median(spectrum_db) + floor_db
    m_sel = 0
    for i, wn in enumerate(np.asarray(natural_frequencies, dtype=float)):
        band = (freq_axis >= 0.98 * wn) & (freq_axis <= 1.02 * wn)
        if not np.any(band):
            continue
        if spectrum_db[band].max() > floor:
            m_sel = i + 1
    if m_sel == 0:
        warnings.warn("no spectral peak cleared the floor; retaining 1 mode",
                      stacklevel=2)
        m_sel = 1
    return m_sel


def project_force(basis: ModalBasis, f: np.ndarray) -> np.ndarray:
    """Reduced forcing phi^T f; accepts a vector or (n_steps, N) series."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != basis.n_dof:
        raise InvalidInputError(
            f"force has {f.shape[-1]} DOFs, basis expects {basis.n_dof}")
    return f @ basis.phi


def reconstruct(basis: ModalBasis, q: np.ndarray) -> np.ndarray:
    """Physical response phi q; accepts a vector or (n_steps, m) series."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != basis.m:
        raise InvalidInputError(
            f"modal series has {q.shape[-1]} modes, basis holds {basis.m}")
    return q @ basis.phi.T
