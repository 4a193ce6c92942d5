"""Finite-rank noise coefficients, Wiener sampling and deterministic controls.

The noise coefficient maps a velocity field to a finite-rank operator from the
noise space K = R^J into H.  Two concrete families are shipped:

* ``additive``:  G(u) h = sum_j sigma_j h_j phi_j
* ``projection-multiplicative``:  G(u) h = sum_j sigma_j ((u, psi_j)_H + c_j) h_j phi_j

with fixed unit-H-norm divergence-free output directions ``phi_j`` (and unit
probes ``psi_j``).  Both are Lipschitz and of linear growth in the
Hilbert-Schmidt norms of HS(K, H) and HS(K, V) with the constructive constant
``C = sum_j sigma_j * max(1, ||phi_j||_V)``; offsets are restricted to
``|c_j| <= 1`` so the same constant also bounds the growth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spectral import SpectralField, TorusLattice, eigenmode_field

ADDITIVE = "additive"
MULTIPLICATIVE = "projection-multiplicative"


@dataclass(frozen=True)
class NoiseOperator:
    """Finite-rank noise coefficient G with ``rank`` output directions."""

    lattice: TorusLattice
    variant: str
    sigma: np.ndarray            # (J,), positive amplitudes
    outputs: np.ndarray          # (J, 2, n, n) unit-H-norm divergence-free fields
    probes: np.ndarray | None = None   # (J, 2, n, n), multiplicative only
    offsets: np.ndarray | None = None  # (J,), multiplicative only, |c_j| <= 1

    def __post_init__(self):
        if self.variant not in (ADDITIVE, MULTIPLICATIVE):
            raise ValueError(f"unknown noise variant {self.variant!r}")
        sigma = np.asarray(self.sigma, float)
        if sigma.ndim != 1 or sigma.size == 0 or np.any(sigma <= 0):
            raise ValueError("sigma must be a nonempty vector of positive amplitudes")
        object.__setattr__(self, "sigma", sigma)
        J = sigma.size
        n = self.lattice.n
        if self.outputs.shape != (J, 2, n, n):
            raise ValueError("outputs must have shape (J, 2, n, n)")
        hnorm = self.lattice.norm_h(self.outputs)
        if np.abs(hnorm - 1.0).max() > 1e-8:
            raise ValueError("output directions must have unit H-norm")
        div = self.lattice.k1 * self.outputs[:, 0] + self.lattice.k2 * self.outputs[:, 1]
        if np.abs(div).max() > 1e-10:
            raise ValueError("output directions must be divergence-free")
        if self.variant == MULTIPLICATIVE:
            if self.probes is None or self.offsets is None:
                raise ValueError("multiplicative noise needs probes and offsets")
            if self.probes.shape != (J, 2, n, n):
                raise ValueError("probes must have shape (J, 2, n, n)")
            offsets = np.asarray(self.offsets, float)
            if offsets.shape != (J,):
                raise ValueError("offsets must have shape (J,)")
            if np.any(np.abs(offsets) > 1.0):
                raise ValueError("offsets must satisfy |c_j| <= 1")
            object.__setattr__(self, "offsets", offsets)

    @property
    def rank(self) -> int:
        return int(self.sigma.size)

    def coefficients(self, u: np.ndarray | None) -> np.ndarray:
        """Per-direction scalar weights sigma_j * ((u, psi_j) + c_j) (or sigma_j)."""
        if self.variant == ADDITIVE:
            if u is None:
                return self.sigma
            return np.broadcast_to(self.sigma, u.shape[:-3] + (self.rank,))
        if u is None:
            raise ValueError("multiplicative noise needs the current field")
        proj = (2.0 * np.pi) ** 2 * np.einsum(
            "...cij,kcij->...k", u, np.conj(self.probes)
        ).real
        return self.sigma * (proj + self.offsets)

    def apply(self, u: np.ndarray | None, coords: np.ndarray) -> np.ndarray:
        """``G(u) . coords`` as a raw coefficient array (batch axes allowed)."""
        coords = np.asarray(coords, float)
        if coords.shape[-1] != self.rank:
            raise ValueError(f"expected {self.rank} noise coordinates, got {coords.shape[-1]}")
        w = self.coefficients(u) * coords
        return np.einsum("...k,kcij->...cij", w, self.outputs)

    def apply_smoothed(self, u, coords, alpha: float) -> np.ndarray:
        return self.lattice.smooth(self.apply(u, coords), alpha)

    def hs_norms(self, u: np.ndarray | None) -> tuple[float, float]:
        """Hilbert-Schmidt norms of G(u) into H and into V (exact, finite rank)."""
        w = self.coefficients(u)
        h2 = self.lattice.norm_h(self.outputs) ** 2
        v2 = self.lattice.norm_v(self.outputs) ** 2
        return (
            float(np.sqrt(np.sum(w**2 * h2, axis=-1))),
            float(np.sqrt(np.sum(w**2 * v2, axis=-1))),
        )

    def lipschitz_constant(self) -> float:
        """Constructive Lipschitz/growth constant sum_j sigma_j max(1, ||phi_j||_V)."""
        vnorm = self.lattice.norm_v(self.outputs)
        return float(np.sum(self.sigma * np.maximum(1.0, vnorm)))


def additive_noise(
    lattice: TorusLattice,
    sigma: Sequence[float],
    modes: Sequence[tuple[int, int]],
    phases: Sequence[float] | None = None,
) -> NoiseOperator:
    """Additive noise pushing rank-j amplitudes onto fixed eigenmode directions."""
    sigma = np.asarray(sigma, float)
    if len(modes) != sigma.size:
        raise ValueError("one wavevector per noise rank is required")
    phases = [0.0] * sigma.size if phases is None else list(phases)
    outputs = np.stack(
        [eigenmode_field(lattice, k, phase=ph).coeffs for k, ph in zip(modes, phases)]
    )
    return NoiseOperator(lattice, ADDITIVE, sigma, outputs)


def projection_multiplicative_noise(
    lattice: TorusLattice,
    sigma: Sequence[float],
    modes: Sequence[tuple[int, int]],
    probe_modes: Sequence[tuple[int, int]],
    offsets: Sequence[float],
) -> NoiseOperator:
    sigma = np.asarray(sigma, float)
    if not (len(modes) == len(probe_modes) == sigma.size == len(tuple(offsets))):
        raise ValueError("sigma, modes, probe_modes and offsets must share length")
    outputs = np.stack([eigenmode_field(lattice, k).coeffs for k in modes])
    probes = np.stack([eigenmode_field(lattice, k).coeffs for k in probe_modes])
    return NoiseOperator(
        lattice, MULTIPLICATIVE, sigma, outputs, probes, np.asarray(offsets, float)
    )


def apply_g(noise: NoiseOperator, u: SpectralField | None, coords) -> SpectralField:
    c = noise.apply(None if u is None else u.coeffs, np.asarray(coords, float))
    return SpectralField(noise.lattice, c)


def apply_g_alpha(noise: NoiseOperator, u: SpectralField | None, coords, alpha: float) -> SpectralField:
    c = noise.apply_smoothed(None if u is None else u.coeffs, np.asarray(coords, float), alpha)
    return SpectralField(noise.lattice, c)


def hs_norms(noise: NoiseOperator, u: SpectralField | None) -> tuple[float, float]:
    return noise.hs_norms(None if u is None else u.coeffs)


# ---------------------------------------------------------------------------
# Wiener paths and controls
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WienerPath:
    """Truncated cylindrical Wiener increments: (steps, J) of N(0, dt) draws."""

    dt: float
    increments: np.ndarray
    seed: object = None

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def rank(self) -> int:
        return self.increments.shape[1]


def sample_wiener(J: int, dt: float, steps: int, seed) -> WienerPath:
    """Reproducible increments; ``seed`` may be an int or a sequence of ints."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    inc = rng.standard_normal((steps, J)) * np.sqrt(dt)
    return WienerPath(dt, inc, seed)


def trajectory_wiener(J: int, dt: float, steps: int, master_seed: int, index: int) -> WienerPath:
    """Independent per-trajectory stream derived from (master seed, index)."""
    return sample_wiener(J, dt, steps, (int(master_seed), int(index)))


@dataclass(frozen=True)
class Control:
    """Piecewise-constant deterministic control on the solver time grid."""

    dt: float
    values: np.ndarray  # (steps, J)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def rank(self) -> int:
        return self.values.shape[1]

    def same_grid(self, other: "Control") -> None:
        if self.values.shape != other.values.shape or self.dt != other.dt:
            raise ValueError("controls are defined on different grids")

    def __add__(self, other):
        self.same_grid(other)
        return Control(self.dt, self.values + other.values)

    def __mul__(self, scalar):
        return Control(self.dt, self.values * float(scalar))

    __rmul__ = __mul__


def zero_control(J: int, dt: float, steps: int) -> Control:
    return Control(dt, np.zeros((steps, J)))


def control_cost(h: Control) -> float:
    """Energy ``0.5 * integral ||h||_K^2 dt`` of a piecewise-constant control."""
    return 0.5 * h.dt * float(np.sum(h.values**2))


def sine_control(J: int, dt: float, steps: int, oscillation: int, direction=None,
                 amplitude: float = 1.0, t_final: float | None = None) -> Control:
    """``h(t) = amplitude * sin(2 pi q t / T) * direction`` sampled on the grid."""
    T = dt * steps if t_final is None else t_final
    direction = np.eye(J)[0] if direction is None else np.asarray(direction, float)
    t = np.arange(steps) * dt
    vals = amplitude * np.sin(2.0 * np.pi * oscillation * t / T)[:, None] * direction[None, :]
    return Control(dt, vals)


def weak_distance(h: Control, g: Control, basis_count: int = 128) -> float:
    """Truncated weak-topology metric between two controls.

    Uses the first ``basis_count`` elements of the orthonormal tensor basis
    ``sqrt(2/T) sin(pi q t / T) x e_j`` of L2(0, T; K), enumerated
    time-frequency-major, with weights ``2^-m``; the time integrals of the
    piecewise-constant controls against each basis element are exact.
    """
    h.same_grid(g)
    diff = h.values - g.values
    T = h.dt * h.steps
    tl = np.arange(h.steps) * h.dt
    tr = tl + h.dt
    total = 0.0
    m = 0
    q = 1
    while m < basis_count:
        cell = np.sqrt(2.0 / T) * (T / (np.pi * q)) * (
            np.cos(np.pi * q * tl / T) - np.cos(np.pi * q * tr / T)
        )
        for j in range(h.rank):
            m += 1
            if m > basis_count:
                break
            total += 0.5**m * abs(float(np.sum(diff[:, j] * cell)))
        q += 1
    return total
