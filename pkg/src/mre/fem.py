"""Finite-element model builders: planar beams and shear buildings.

Two beam formulations are provided. The Hermite-cubic element carries
(deflection, slope) per node and ignores shear deformation; the linear
shear-flexible element carries (deflection, cross-section rotation) per
node and uses one-point reduced integration of the shear terms so the
thin-beam limit is locking-free. Supports are handled by row/column
elimination, so the constrained mass and stiffness matrices are exactly
symmetric positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np
import scipy.linalg

from .errors import AssemblyError, InvalidInputError

DOF_TRANSLATION = "translation"
DOF_ROTATION = "rotation"

BC_SIMPLY_SUPPORTED = "simply-supported"
BC_ROTARY_SPRING = "simply-supported-with-right-rotary-spring"


@dataclass(frozen=True)
class BeamProperties:
    """Geometry and material data for a prismatic rectangular beam.

    Units: SI throughout (m, Pa, kg/m^3). ``damping_w`` is a viscous
    coefficient per unit length acting on deflection rates (N.s/m^2),
    ``damping_beta`` the analogous coefficient on rotation rates.
    """

    length: float
    width: float
    height: float
    youngs_modulus: float
    poisson_ratio: float
    density: float
    shear_correction: float = 5.0 / 6.0
    damping_w: float = 0.0
    damping_beta: float = 0.0

    def __post_init__(self):
        for name in ("length", "width", "height", "youngs_modulus", "density"):
            if getattr(self, name) <= 0.0:
                raise InvalidInputError(f"{name} must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise InvalidInputError("poisson_ratio must lie in [0, 0.5)")
        if self.shear_correction <= 0.0:
            raise InvalidInputError("shear_correction must be positive")
        if self.damping_w < 0.0 or self.damping_beta < 0.0:
            raise InvalidInputError("damping coefficients must be non-negative")

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def inertia(self) -> float:
        return self.width * self.height**3 / 12.0

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))


@dataclass(frozen=True)
class BoundarySpec:
    """End support description for the beam builders."""

    kind: str = BC_SIMPLY_SUPPORTED
    rotary_stiffness: float | None = None

    def __post_init__(self):
        if self.kind not in (BC_SIMPLY_SUPPORTED, BC_ROTARY_SPRING):
            raise InvalidInputError(f"unknown boundary kind {self.kind!r}")
        if self.kind == BC_ROTARY_SPRING:
            if self.rotary_stiffness is None or self.rotary_stiffness <= 0.0:
                raise InvalidInputError("rotary_stiffness must be positive")


@dataclass(frozen=True)
class ShearBuildingSpec:
    """Uniform-or-per-story planar shear building with optional damage.

    ``damage_story`` is 1-based counting from the ground; the damaged
    story keeps ``(1 - damage_fraction)`` of its lateral stiffness.
    """

    n_stories: int
    story_mass: float | tuple[float, ...]
    story_stiffness: float | tuple[float, ...]
    damage_story: int | None = None
    damage_fraction: float = 0.0

    def __post_init__(self):
        if self.n_stories < 1:
            raise InvalidInputError("n_stories must be >= 1")
        for m in self.masses():
            if m <= 0.0:
                raise InvalidInputError("story masses must be positive")
        for k in self.stiffnesses():
            if k <= 0.0:
                raise InvalidInputError("story stiffnesses must be positive")
        if not 0.0 <= self.damage_fraction < 1.0:
            raise InvalidInputError("damage_fraction must lie in [0, 1)")
        if self.damage_story is not None and not (
            1 <= self.damage_story <= self.n_stories
        ):
            raise InvalidInputError("damage_story out of range")

    def _per_story(self, value) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            arr = np.full(self.n_stories, arr[0])
        if arr.size != self.n_stories:
            raise InvalidInputError("per-story value length mismatch")
        return arr

    def masses(self) -> np.ndarray:
        return self._per_story(self.story_mass)

    def stiffnesses(self) -> np.ndarray:
        return self._per_story(self.story_stiffness)


@dataclass(frozen=True)
class DofInfo:
    """Free-DOF metadata: axial coordinate (stories use the index) and kind."""

    x: float
    kind: str


@dataclass
class FEModel:
    """Assembled free-DOF system matrices plus DOF metadata.

    Matrices are stored dense and marked read-only; treat instances as
    immutable and derive modified models through the builder functions.
    """

    n_dof: int
    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    dof_map: tuple[DofInfo, ...]
    element_count: int

    def __post_init__(self):
        for name in ("M", "C", "K"):
            mat = np.ascontiguousarray(getattr(self, name), dtype=float)
            mat.setflags(write=False)
            setattr(self, name, mat)

    def with_damping(self, C_new: np.ndarray) -> "FEModel":
        return FEModel(self.n_dof, self.M, C_new, self.K, self.dof_map,
                       self.element_count)

    def translation_indices(self) -> np.ndarray:
        return np.array(
            [i for i, d in enumerate(self.dof_map) if d.kind == DOF_TRANSLATION],
            dtype=int,
        )

    def dof_index(self, x: float, kind: str, tol: float) -> int:
        """Index of the free DOF of ``kind`` nearest to coordinate ``x``.

        Raises InvalidInputError when the nearest matching DOF is farther
        than ``tol`` (callers pass half the element length).
        """
        best, best_dist = -1, np.inf
        for i, d in enumerate(self.dof_map):
            if d.kind != kind:
                continue
            dist = abs(d.x - x)
            if dist < best_dist:
                best, best_dist = i, dist
        if best < 0 or best_dist > tol:
            raise InvalidInputError(
                f"no {kind} DOF within {tol:g} of x={x:g} (nearest {best_dist:g})"
            )
        return best


def _hermite_element(props: BeamProperties, ell: float):
    """Stiffness/mass/damping element matrices, node order (w1, t1, w2, t2)."""
    EI = props.youngs_modulus * props.inertia
    rhoA = props.density * props.area
    L = ell
    k = EI / L**3 * np.array(
        [
            [12.0, 6.0 * L, -12.0, 6.0 * L],
            [6.0 * L, 4.0 * L**2, -6.0 * L, 2.0 * L**2],
            [-12.0, -6.0 * L, 12.0, -6.0 * L],
            [6.0 * L, 2.0 * L**2, -6.0 * L, 4.0 * L**2],
        ]
    )
    m = rhoA * L / 420.0 * np.array(
        [
            [156.0, 22.0 * L, 54.0, -13.0 * L],
            [22.0 * L, 4.0 * L**2, 13.0 * L, -3.0 * L**2],
            [54.0, 13.0 * L, 156.0, -22.0 * L],
            [-13.0 * L, -3.0 * L**2, -22.0 * L, 4.0 * L**2],
        ]
    )
    return k, m


def _shear_flexible_element(props: BeamProperties, ell: float):
    """Linear element with one-point reduced shear integration.

    Node order (w1, b1, w2, b2). Full integration of the shear term locks
    for thin beams; the single midpoint sample keeps the element rank
    correct while removing the spurious constraint.
    """
    EI = props.youngs_modulus * props.inertia
    kGA = props.shear_correction * props.shear_modulus * props.area
    rhoA = props.density * props.area
    rhoI = props.density * props.inertia
    L = ell

    k_bend = np.zeros((4, 4))
    kb = EI / L * np.array([[1.0, -1.0], [-1.0, 1.0]])
    k_bend[np.ix_([1, 3], [1, 3])] = kb

    # shear strain at the midpoint: gamma = (w2 - w1)/L - (b1 + b2)/2
    g = np.array([-1.0 / L, -0.5, 1.0 / L, -0.5])
    k_shear = kGA * L * np.outer(g, g)

    m = np.zeros((4, 4))
    m2 = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0 * L
    m[np.ix_([0, 2], [0, 2])] = rhoA * m2
    m[np.ix_([1, 3], [1, 3])] = rhoI * m2
    return k_bend + k_shear, m


def _assemble_beam(props: BeamProperties, n_elements: int, bc: BoundarySpec,
                   element_fn) -> FEModel:
    if n_elements < 4:
        raise InvalidInputError("n_elements must be >= 4")
    n_nodes = n_elements + 1
    n_full = 2 * n_nodes
    ell = props.length / n_elements

    K = np.zeros((n_full, n_full))
    M = np.zeros((n_full, n_full))
    for e in range(n_elements):
        ke, me = element_fn(props, ell)
        idx = np.array([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3])
        K[np.ix_(idx, idx)] += ke
        M[np.ix_(idx, idx)] += me

    # distributed viscous terms, lumped on the DOF kinds they act on
    C = np.zeros((n_full, n_full))
    trib = np.full(n_nodes, ell)
    trib[0] = trib[-1] = ell / 2.0
    for node in range(n_nodes):
        C[2 * node, 2 * node] += props.damping_w * trib[node]
        C[2 * node + 1, 2 * node + 1] += props.damping_beta * trib[node]

    if bc.kind == BC_ROTARY_SPRING:
        K[n_full - 1, n_full - 1] += bc.rotary_stiffness

    # simple supports: remove the end deflections
    constrained = [0, 2 * (n_nodes - 1)]
    free = np.array([i for i in range(n_full) if i not in constrained])
    K = K[np.ix_(free, free)]
    M = M[np.ix_(free, free)]
    C = C[np.ix_(free, free)]

    dof_map = []
    for i in free:
        node, local = divmod(i, 2)
        x = node * ell
        dof_map.append(DofInfo(x, DOF_TRANSLATION if local == 0 else DOF_ROTATION))

    _check_spd(K, "stiffness")
    _check_spd(M, "mass")
    return FEModel(len(free), M, C, K, tuple(dof_map), n_elements)


def _check_spd(mat: np.ndarray, name: str) -> None:
    if not np.allclose(mat, mat.T, rtol=0.0, atol=1e-12 * _infnorm(mat)):
        raise AssemblyError(f"{name} matrix not symmetric")
    try:
        scipy.linalg.cholesky(mat)
    except scipy.linalg.LinAlgError as ex:
        raise AssemblyError(f"constrained {name} matrix is not SPD") from ex


def _infnorm(mat: np.ndarray) -> float:
    return float(np.abs(mat).sum(axis=1).max())


def assemble_euler_bernoulli(props: BeamProperties, n_elements: int,
                             bc: BoundarySpec | None = None) -> FEModel:
    """Simply supported Hermite-cubic beam; DOFs are (w, w') per node."""
    bc = bc or BoundarySpec()
    return _assemble_beam(props, n_elements, bc, _hermite_element)


def assemble_timoshenko(props: BeamProperties, n_elements: int,
                        bc: BoundarySpec | None = None) -> FEModel:
    """Shear-flexible beam; DOFs are (w, beta) per node.

    A rotary end spring, when present in ``bc``, is added to the rotation
    DOF of the right support node.
    """
    bc = bc or BoundarySpec()
    return _assemble_beam(props, n_elements, bc, _shear_flexible_element)


def assemble_shear_building(spec: ShearBuildingSpec) -> FEModel:
    """Chain model: diagonal mass, tridiagonal stiffness, fixed base."""
    n = spec.n_stories
    masses = spec.masses()
    ks = spec.stiffnesses().copy()
    if spec.damage_story is not None:
        ks[spec.damage_story - 1] *= 1.0 - spec.damage_fraction

    K = np.zeros((n, n))
    for i in range(n):
        K[i, i] += ks[i]
        if i + 1 < n:
            K[i, i] += ks[i + 1]
            K[i, i + 1] -= ks[i + 1]
            K[i + 1, i] -= ks[i + 1]
    M = np.diag(masses)
    C = np.zeros((n, n))
    dof_map = tuple(DofInfo(float(i + 1), DOF_TRANSLATION) for i in range(n))
    _check_spd(K, "stiffness")
    _check_spd(M, "mass")
    return FEModel(n, M, C, K, dof_map, n)


def rayleigh_coefficients(zeta_i: float, omega_i: float,
                          zeta_j: float, omega_j: float) -> tuple[float, float]:
    """Solve the 2x2 system pinning damping ratios at two frequencies."""
    if omega_i <= 0.0 or omega_j <= 0.0:
        raise InvalidInputError("target frequencies must be positive")
    if omega_i == omega_j:
        raise InvalidInputError("degenerate targets: omega_i == omega_j")
    A = 0.5 * np.array([[1.0 / omega_i, omega_i], [1.0 / omega_j, omega_j]])
    alpha, beta = np.linalg.solve(A, np.array([zeta_i, zeta_j]))
    return float(alpha), float(beta)


def build_rayleigh_damping(M: np.ndarray, K: np.ndarray,
                           targets: tuple[float, float, float, float]) -> np.ndarray:
    """alpha*M + beta*K with coefficients from (zeta_i, omega_i, zeta_j, omega_j)."""
    alpha, beta = rayleigh_coefficients(*targets)
    return alpha * M + beta * K


def modal_damping_matrix(M: np.ndarray, K: np.ndarray,
                         ratios) -> np.ndarray:
    """Damping matrix that is diagonal in the full modal basis.

    ``ratios`` lists damping ratios from the lowest mode upward; a short
    list is extended with its last value so every mode is damped.
    """
    ratios = np.atleast_1d(np.asarray(ratios, dtype=float))
    if np.any(ratios <= 0.0) or np.any(ratios >= 1.0):
        raise InvalidInputError("modal ratios must lie in (0, 1)")
    w2, phi = scipy.linalg.eigh(K, M)
    omega = np.sqrt(np.maximum(w2, 0.0))
    n = omega.size
    if ratios.size < n:
        ratios = np.concatenate([ratios, np.full(n - ratios.size, ratios[-1])])
    ratios = ratios[:n]
    Xi = 2.0 * ratios * omega
    # phi is M-orthonormal, so M phi Xi phi^T M projects each mode onto
    # its own viscous term
    Mp = M @ phi
    return (Mp * Xi) @ Mp.T


def export_matrices(model: FEModel, directory, fmt: str = "csv") -> None:
    """Dump M, C, K for debugging (row-major, full decimal precision)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mats = {"M": model.M, "C": model.C, "K": model.K}
    if fmt == "csv":
        for name, mat in mats.items():
            np.savetxt(directory / f"{name}.csv", mat, delimiter=",", fmt="%.17g")
    elif fmt == "json":
        payload = {name: mat.tolist() for name, mat in mats.items()}
        payload["dof_map"] = [{"x": d.x, "kind": d.kind} for d in model.dof_map]
        (directory / "matrices.json").write_text(json.dumps(payload))
    else:
        raise InvalidInputError(f"unknown export format {fmt!r}")
