"""Reference ("measured") system simulation and the discrepancy oracle.

Linear reference systems are propagated exactly (substepped matrix
exponential with midpoint-held forcing); the optional cubic restoring
force switches to classical RK4 on first-order form, which needs no
implicit solves. Records live on the grid t_k = k*dt for
k = 0..n_steps inclusive; measurement rows are k >= 1 (the k = 0 state
is pinned by the zero initial conditions).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.interpolate
import scipy.linalg
import scipy.signal

from .errors import InvalidInputError, NumericalError
from .fem import DOF_TRANSLATION, FEModel

_BLOWUP_FACTOR = 1e12


@dataclass(frozen=True)
class SineLoad:
    """Point force A*sin(omega*t + phase) at coordinate ``x``."""

    x: float
    amplitude: float
    omega: float
    phase: float = 0.0
    kind: str = DOF_TRANSLATION


@dataclass(frozen=True)
class BandLimitedLoad:
    """Filtered-Gaussian point force: white noise through a 4th-order
    Butterworth filter, rescaled to sample std ``scale``."""

    x: float
    scale: float
    band_low_hz: float
    band_high_hz: float
    seed: int
    kind: str = DOF_TRANSLATION


@dataclass(frozen=True)
class ExcitationSpec:
    loads: tuple
    duration: float
    dt: float

    def __post_init__(self):
        if self.duration <= 0.0 or self.dt <= 0.0:
            raise InvalidInputError("duration and dt must be positive")
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise InvalidInputError("duration must be an integer number of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


class Excitation:
    """Excitation spec bound to a model's DOF layout; evaluable at any t."""

    def __init__(self, spec: ExcitationSpec, model: FEModel):
        self.spec = spec
        self.n_dof = model.n_dof
        self._sines = []
        self._smooth = []
        tol = _snap_tolerance(model)
        for load in spec.loads:
            idx = model.dof_index(load.x, load.kind, tol)
            if isinstance(load, SineLoad):
                self._sines.append((idx, load.amplitude, load.omega, load.phase))
            elif isinstance(load, BandLimitedLoad):
                self._smooth.append((idx, _bandlimited_spline(load, spec)))
            else:
                raise InvalidInputError(f"unknown load type {type(load)!r}")

    def force(self, t) -> np.ndarray:
        """Force vector(s); shape (N,) for scalar t, (len(t), N) otherwise."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((t_arr.size, self.n_dof))
        for idx, amp, omega, phase in self._sines:
            out[:, idx] += amp * np.sin(omega * t_arr + phase)
        for idx, spline in self._smooth:
            out[:, idx] += spline(np.clip(t_arr, 0.0, self.spec.duration))
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out

    def grid_forces(self) -> np.ndarray:
        return self.force(self.spec.times())

    def held_forces(self) -> np.ndarray:
        """Per-interval held inputs, sampled at interval midpoints.

        Entry k is the value held over [t_k, t_{k+1}); midpoint sampling
        cancels the half-interval delay a left-endpoint hold would add.
        """
        mids = (np.arange(self.spec.n_steps) + 0.5) * self.spec.dt
        return self.force(mids)


def _snap_tolerance(model: FEModel) -> float:
    xs = np.unique([d.x for d in model.dof_map])
    if xs.size < 2:
        return np.inf
    return float(np.diff(xs).min()) / 2.0


def _bandlimited_spline(load: BandLimitedLoad, spec: ExcitationSpec):
    if load.band_high_hz <= 0.0:
        raise InvalidInputError("band_high_hz must be positive")
    fs = 1.0 / spec.dt
    nyq = fs / 2.0
    if load.band_high_hz >= nyq:
        raise InvalidInputError("band_high_hz must be below Nyquist")
    rng = np.random.default_rng(load.seed)
    n = spec.n_steps + 1
    white = rng.standard_normal(n)
    if load.band_low_hz > 0.0:
        sos = scipy.signal.butter(4, [load.band_low_hz, load.band_high_hz],
                                  btype="bandpass", fs=fs, output="sos")
    else:
        sos = scipy.signal.butter(4, load.band_high_hz, btype="lowpass",
                                  fs=fs, output="sos")
    sig = scipy.signal.sosfilt(sos, white)
    std = sig.std()
    if std > 0.0:
        sig = sig * (load.scale / std)
    return scipy.interpolate.CubicSpline(spec.times(), sig)


@dataclass(frozen=True)
class NonlinearRestoringSpec:
    """Extra restoring force: none, or kappa3*u^3 on translational DOFs."""

    kind: str = "none"
    kappa3: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "cubic-stiffness"):
            raise InvalidInputError(f"unknown nonlinearity {self.kind!r}")
        if self.kappa3 < 0.0:
            raise InvalidInputError("kappa3 must be non-negative")


@dataclass(frozen=True)
class SensorSpec:
    """Translation sensors at the given coordinates plus the noise model."""

    coordinates: tuple
    noise_pct: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_pct < 0.0:
            raise InvalidInputError("noise_pct must be non-negative")
        if len(self.coordinates) == 0:
            raise InvalidInputError("at least one sensor required")


@dataclass
class TruthRecord:
    """Simulated reference trajectories on the sample grid (k = 0..n)."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    f: np.ndarray
    dof_map: tuple
    sensor_indices: np.ndarray | None = None
    clean_y: np.ndarray | None = None
    noisy_y: np.ndarray | None = None
    sigma_n: float | None = None

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def measurement_times(self) -> np.ndarray:
        return self.t[1:]


def _make_rhs(model: FEModel, g: NonlinearRestoringSpec, force_fn):
    # mass matrices here are SPD and well-conditioned, so a precomputed
    # inverse is safe and much cheaper than per-stage solves
    M_inv = scipy.linalg.inv(model.M)
    C = model.C
    K = model.K
    cubic_idx = None
    if g.kind == "cubic-stiffness" and g.kappa3 > 0.0:
        cubic_idx = model.translation_indices()
        kappa3 = g.kappa3

    def rhs(t, u, v):
        resid = force_fn(t) - C @ v - K @ u
        if cubic_idx is not None:
            resid[cubic_idx] -= kappa3 * u[cubic_idx] ** 3
        return M_inv @ resid

    return rhs


def simulate_truth(model: FEModel, g: NonlinearRestoringSpec,
                   exc: ExcitationSpec | Excitation,
                   substeps: int = 10,
                   hold_input: bool = False,
                   method: str = "auto") -> TruthRecord:
    """Integrate M u'' + C u' + K u + g(u) = f(t) from zero initial conditions.

    Linear systems are propagated with the exact matrix exponential on the
    substep grid (forcing held at substep midpoints), which stays stable
    regardless of the highest mesh frequency. The cubic restoring force
    falls back to classical RK4; since explicit RK4 is stability-limited
    by the stiffest mesh mode, the substep count is raised automatically
    when the requested one would blow up.

    With ``hold_input`` the forcing is instead frozen over each full
    sample interval (midpoint value), which makes the run comparable
    against an exact held-input discrete solution at the sample rate.
    ``method`` may pin "rk4" or "exact" explicitly.
    """
    excitation = exc if isinstance(exc, Excitation) else Excitation(exc, model)
    linear = g.kind == "none" or g.kappa3 == 0.0
    if method == "auto":
        method = "exact" if linear else "rk4"
    if method == "exact" and not linear:
        raise InvalidInputError("exact propagation requires a linear system")
    if method == "exact":
        us, vs = _propagate_exact(model, excitation, substeps, hold_input)
    elif method == "rk4":
        us, vs = _propagate_rk4(model, g, excitation, substeps, hold_input)
    else:
        raise InvalidInputError(f"unknown integrator {method!r}")

    spec = excitation.spec
    ts = spec.times()
    fs = excitation.grid_forces()
    rhs = _make_rhs(model, g, excitation.force)
    accel = np.zeros_like(us)
    for k in range(spec.n_steps + 1):
        accel[k] = rhs(ts[k], us[k], vs[k])
    return TruthRecord(ts, us, vs, accel, fs, model.dof_map)


def _propagate_exact(model: FEModel, excitation: Excitation,
                     substeps: int, hold_input: bool):
    """Held-input exponential propagation on the substep grid."""
    n = model.n_dof
    spec = excitation.spec
    n_steps = spec.n_steps
    dt = spec.dt
    h = dt / substeps

    M_inv = scipy.linalg.inv(model.M)
    A_c = np.zeros((2 * n, 2 * n))
    A_c[:n, n:] = np.eye(n)
    A_c[n:, :n] = -M_inv @ model.K
    A_c[n:, n:] = -M_inv @ model.C
    aug = np.zeros((3 * n, 3 * n))
    aug[:2 * n, :2 * n] = A_c
    aug[n:2 * n, 2 * n:] = M_inv
    E = scipy.linalg.expm(aug * h)
    A_sub = np.ascontiguousarray(E[:2 * n, :2 * n])
    B_sub = np.ascontiguousarray(E[:2 * n, 2 * n:])

    blowup = _blowup_level(excitation)
    z = np.zeros(2 * n)
    us = np.zeros((n_steps + 1, n))
    vs = np.zeros((n_steps + 1, n))
    for k in range(n_steps):
        t0 = k * dt
        if hold_input:
            f_interval = excitation.force(t0 + dt / 2.0)
        for s in range(substeps):
            if hold_input:
                f_held = f_interval
            else:
                f_held = excitation.force(t0 + (s + 0.5) * h)
            z = A_sub @ z + B_sub @ f_held
        if np.abs(z).max() > blowup or not np.isfinite(z).all():
            raise NumericalError(
                f"unstable integration at step {k + 1} with {substeps} substeps")
        us[k + 1] = z[:n]
        vs[k + 1] = z[n:]
    return us, vs


def stable_rk4_substeps(model: FEModel, dt: float, requested: int) -> int:
    """Substep count keeping the stiffest undamped mode inside the RK4
    stability region (|omega_max * h| <= 2.5 with margin)."""
    w2_max = scipy.linalg.eigh(model.K, model.M,
                               subset_by_index=(model.n_dof - 1,
                                                model.n_dof - 1),
                               eigvals_only=True)[0]
    needed = int(np.ceil(dt * np.sqrt(max(w2_max, 0.0)) / 2.5))
    return max(requested, needed)


def _propagate_rk4(model: FEModel, g: NonlinearRestoringSpec,
                   excitation: Excitation, substeps: int, hold_input: bool):
    spec = excitation.spec
    n = model.n_dof
    n_steps = spec.n_steps
    dt = spec.dt
    effective = stable_rk4_substeps(model, dt, substeps)
    if effective > substeps:
        warnings.warn(
            f"raising RK4 substeps {substeps} -> {effective} for stability",
            stacklevel=3)
    h = dt / effective

    blowup = _blowup_level(excitation)
    u = np.zeros(n)
    v = np.zeros(n)
    us = np.zeros((n_steps + 1, n))
    vs = np.zeros((n_steps + 1, n))
    rhs = _make_rhs(model, g, excitation.force)
    rhs_held = _make_held_rhs(model, g) if hold_input else None
    for k in range(n_steps):
        t0 = k * dt
        if hold_input:
            f_held = excitation.force(t0 + dt / 2.0)
            step_rhs = _freeze_input(rhs_held, f_held)
        else:
            step_rhs = rhs
        for s in range(effective):
            u, v = _rk4_step(step_rhs, t0 + s * h, u, v, h)
        if np.abs(u).max() > blowup or not np.isfinite(u).all():
            raise NumericalError(
                f"unstable integration at step {k + 1} with {effective} substeps")
        us[k + 1] = u
        vs[k + 1] = v
    return us, vs


def _blowup_level(excitation: Excitation) -> float:
    force_scale = float(np.abs(excitation.grid_forces()).max())
    return _BLOWUP_FACTOR * max(force_scale, 1.0)


def _freeze_input(rhs_held, f_held):
    return lambda t, uu, vv: rhs_held(uu, vv, f_held)


def _make_held_rhs(model: FEModel, g: NonlinearRestoringSpec):
    M_inv = scipy.linalg.inv(model.M)
    cubic_idx = None
    if g.kind == "cubic-stiffness" and g.kappa3 > 0.0:
        cubic_idx = model.translation_indices()

    def rhs(u, v, f_held):
        resid = f_held - model.C @ v - model.K @ u
        if cubic_idx is not None:
            resid[cubic_idx] -= g.kappa3 * u[cubic_idx] ** 3
        return M_inv @ resid

    return rhs


def _rk4_step(rhs, t, u, v, h):
    k1u = v
    k1v = rhs(t, u, v)
    k2u = v + 0.5 * h * k1v
    k2v = rhs(t + 0.5 * h, u + 0.5 * h * k1u, k2u)
    k3u = v + 0.5 * h * k2v
    k3v = rhs(t + 0.5 * h, u + 0.5 * h * k2u, k3u)
    k4u = v + h * k3v
    k4v = rhs(t + h, u + h * k3u, k4u)
    u_next = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    v_next = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return u_next, v_next


def sensor_indices(model: FEModel, sensors: SensorSpec) -> np.ndarray:
    tol = _snap_tolerance(model)
    idx = []
    for x in sensors.coordinates:
        try:
            idx.append(model.dof_index(float(x), DOF_TRANSLATION, tol))
        except InvalidInputError as ex:
            raise InvalidInputError(f"sensor at x={x} is off-mesh: {ex}") from ex
    return np.array(idx, dtype=int)


def apply_sensors_and_noise(record: TruthRecord, sensors: SensorSpec,
                            model: FEModel) -> TruthRecord:
    """Extract sensor channels and add shared-std Gaussian noise.

    One noise std is used for every channel:
    sigma_n = (p/100) * mean over channels of the per-channel RMS,
    with the RMS taken over the measurement rows (k >= 1).
    """
    idx = sensor_indices(model, sensors)
    clean = record.u[:, idx]
    meas = clean[1:]
    rms = np.sqrt(np.mean(meas**2, axis=0))
    sigma_n = float(sensors.noise_pct / 100.0 * np.mean(rms))
    rng = np.random.default_rng(sensors.seed)
    noise = rng.standard_normal(meas.shape) * sigma_n
    noisy = clean.copy()
    noisy[1:] = meas + noise
    return replace(record, sensor_indices=idx, clean_y=clean,
                   noisy_y=noisy, sigma_n=sigma_n)


def true_discrepancy_oracle(model_nominal: FEModel, basis,
                            record: TruthRecord) -> np.ndarray:
    """Modal residual of the nominal equations driven by the reference run.

    Returns the (n_steps + 1, m) series
    phi^T [f - M a - C v - K u] evaluated with nominal matrices.
    """
    shapes = {record.u.shape, record.v.shape, record.a.shape, record.f.shape}
    if len(shapes) != 1:
        raise InvalidInputError("truth record arrays are not grid-aligned")
    if record.u.shape[1] != model_nominal.n_dof:
        raise InvalidInputError("record DOF count does not match nominal model")
    resid = (record.f - record.a @ model_nominal.M.T
             - record.v @ model_nominal.C.T - record.u @ model_nominal.K.T)
    return resid @ basis.phi
