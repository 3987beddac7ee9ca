"""Forward prediction with the trained correction folded into the
reduced nominal dynamics.

The corrected modal balance is integrated with classical RK4, substepped
below the output interval; the correction network is queried at every
RK4 stage so the combined right-hand side keeps fourth-order accuracy.
Out-of-range inputs are never clamped, only counted and reported.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleArtifactsError, InvalidInputError, NumericalError
from .mlp import Surrogate
from .modal import ModalBasis
from .truth import Excitation

_BLOWUP_FACTOR = 1e9
_FREQ_GATE_REL = 1e-3


@dataclass
class RectifiedModel:
    basis: ModalBasis
    surrogate: Surrogate | None
    substeps: int = 10
    train_input_min: np.ndarray | None = None
    train_input_max: np.ndarray | None = None

    def __post_init__(self):
        if self.surrogate is not None:
            if self.surrogate.n_inputs != 2 * self.basis.m or \
                    self.surrogate.n_outputs != self.basis.m:
                raise IncompatibleArtifactsError(
                    f"surrogate maps {self.surrogate.n_inputs} -> "
                    f"{self.surrogate.n_outputs}, basis holds {self.basis.m} modes")


@dataclass
class PredictionResult:
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    u: np.ndarray
    extrapolation_fraction: float


def predict(model: RectifiedModel, excitation: Excitation,
            dof_indices: np.ndarray | None = None) -> PredictionResult:
    """Integrate the corrected reduced model under a physical force history.

    ``excitation`` must be bound to an FE model with the same DOF layout
    as the basis; modal forcing is its projection through the mode shapes.
    Starts from rest, returns responses on the sample grid, and reports
    the fraction of integration steps whose state left the training box
    (state bounds widened by 10% per dimension).
    """
    basis = model.basis
    spec = excitation.spec
    if excitation.n_dof != basis.n_dof:
        raise InvalidInputError("excitation mesh does not match basis mesh")
    m = basis.m
    omega2 = basis.omega**2
    xi = basis.xi
    n_steps = spec.n_steps
    dt = spec.dt
    h = dt / model.substeps
    phi = basis.phi

    sur = model.surrogate

    def modal_force(t):
        return excitation.force(t) @ phi

    def rhs(t, q, qd):
        acc = modal_force(t) - xi * qd - omega2 * q
        if sur is not None:
            acc = acc - sur.evaluate(np.concatenate([q, qd]))
        return acc

    lo = hi = None
    if model.train_input_min is not None and model.train_input_max is not None:
        span = model.train_input_max - model.train_input_min
        lo = model.train_input_min - 0.1 * span
        hi = model.train_input_max + 0.1 * span

    p_grid = modal_force(spec.times())
    static_scale = max(float(np.abs(p_grid).max()) / float(omega2.min()), 1e-300)
    blowup = _BLOWUP_FACTOR * static_scale

    q = np.zeros(m)
    qd = np.zeros(m)
    qs = np.zeros((n_steps + 1, m))
    qds = np.zeros((n_steps + 1, m))
    outside = 0
    for k in range(n_steps):
        t0 = k * dt
        for s in range(model.substeps):
            t = t0 + s * h
            k1q, k1v = qd, rhs(t, q, qd)
            q2, v2 = q + 0.5 * h * k1q, qd + 0.5 * h * k1v
            k2q, k2v = v2, rhs(t + 0.5 * h, q2, v2)
            q3, v3 = q + 0.5 * h * k2q, qd + 0.5 * h * k2v
            k3q, k3v = v3, rhs(t + 0.5 * h, q3, v3)
            q4, v4 = q + h * k3q, qd + h * k3v
            k4q, k4v = v4, rhs(t + h, q4, v4)
            q = q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
            qd = qd + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if np.abs(q).max() > blowup or not np.isfinite(q).all():
            raise NumericalError(
                f"rectified prediction diverged at t={t0 + dt:.6g} s")
        if lo is not None:
            state = np.concatenate([q, qd])
            if np.any(state < lo) or np.any(state > hi):
                outside += 1
        qs[k + 1] = q
        qds[k + 1] = qd

    rows = phi if dof_indices is None else phi[np.asarray(dof_indices, dtype=int)]
    u = qs @ rows.T
    frac = outside / n_steps if n_steps else 0.0
    return PredictionResult(spec.times(), qs, qds, u, frac)


def mesh_transfer_predict(basis_new: ModalBasis, surrogate: Surrogate,
                          excitation_new: Excitation,
                          reference_omega: np.ndarray | None = None,
                          substeps: int = 10,
                          train_input_min: np.ndarray | None = None,
                          train_input_max: np.ndarray | None = None,
                          dof_indices: np.ndarray | None = None) -> PredictionResult:
    """Run the correction trained on another mesh against a new basis.

    The retained mode counts must agree; a frequency disagreement beyond
    0.1% between the bases only warns, since it signals (but does not
    preclude) transfer across non-equivalent structures.
    """
    if surrogate.n_outputs != basis_new.m:
        raise IncompatibleArtifactsError(
            f"surrogate has {surrogate.n_outputs} outputs, new basis "
            f"retains {basis_new.m} modes")
    if reference_omega is not None:
        rel = np.abs(basis_new.omega - reference_omega) / reference_omega
        if np.any(rel > _FREQ_GATE_REL):
            warnings.warn(
                f"basis frequencies differ by up to {rel.max():.2%}; "
                "meshes may not describe the same structure", stacklevel=2)
    model = RectifiedModel(basis_new, surrogate, substeps,
                           train_input_min, train_input_max)
    return predict(model, excitation_new, dof_indices)
