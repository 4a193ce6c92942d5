"""Semi-implicit time integrators for the four model systems.

All solvers share one first-order scheme: the Stokes term is treated
implicitly (exact diagonal solve ``(I + dt nu A)^{-1}``), every other drift
term explicitly at the left endpoint, and noise by explicit Euler-Maruyama.
This keeps the linear part unconditionally stable and makes the discrete
difference-quotient identity between the smoothed system, the limit system
and the unified fluctuation system exact (see ``solve_unified``).

Systems
-------
* ``solve_nse``       du/dt + nu A u + B(u, u) = 0
* ``solve_lans``      du + [nu A u + Btilde_a(u, v)] dt = sqrt(a) G_a(u) dW,
  with v = (I + a^2 A) u
* ``solve_unified``   the delta-parameterized fluctuation system with control
  and noise (delta=0 reproduces ``solve_lans``; delta=1 evolves the rescaled
  difference from the limit system)
* ``solve_skeleton``  the deterministic controlled system whose solution map
  defines the deviation rate function (no smoothing; alpha-free)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .noise import Control, NoiseOperator, WienerPath
from .spectral import SpectralField, TorusLattice

_BLOWUP_FACTOR = 1.0e6


class BlowupError(RuntimeError):
    """Numeric abort: the solution became non-finite or grew past the sentinel."""

    def __init__(self, message, record=None, step=None):
        super().__init__(message)
        self.record = record
        self.step = step


@dataclass(frozen=True)
class ScalingLaw:
    """Deviation scaling ``lambda(a) = a**-kappa`` with the delta switch.

    ``lam_delta`` is 1 for delta=0 and ``sqrt(a) * lambda(a)`` for delta=1;
    the associated deviation speed is ``lam_delta(a)^2 / a``.
    """

    kappa: float = 0.25
    delta: int = 0

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ValueError("kappa must lie in (0, 1/2)")
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")

    def lam(self, alpha: float) -> float:
        return float(alpha) ** (-self.kappa)

    def lam_delta(self, alpha: float) -> float:
        if self.delta == 0:
            return 1.0
        return math.sqrt(alpha) * self.lam(alpha)

    def speed(self, alpha: float) -> float:
        """LDP/MDP speed: 1/alpha for delta=0, lambda(alpha)^2 for delta=1."""
        return self.lam_delta(alpha) ** 2 / alpha


@dataclass(frozen=True)
class SolverConfig:
    """Shared solver settings; ``steps * dt`` must reproduce ``t_final``."""

    lattice: TorusLattice
    dt: float
    t_final: float
    alpha: float = 0.0
    scaling: ScalingLaw = field(default_factory=ScalingLaw)
    noise: Optional[NoiseOperator] = None
    viscosity: float = 1.0
    record_stride: int = 1
    store_fields: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_final <= 0:
            raise ValueError("dt and t_final must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        steps = round(self.t_final / self.dt)
        if steps < 1 or abs(steps * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ValueError("t_final must be an integer multiple of dt")
        if self.noise is not None and self.noise.lattice.n != self.lattice.n:
            raise ValueError("noise operator lives on a different lattice")

    @property
    def steps(self) -> int:
        return round(self.t_final / self.dt)

    def implicit_multiplier(self) -> np.ndarray:
        return 1.0 / (1.0 + self.dt * self.viscosity * self.lattice.eigenvalue)


@dataclass
class TrajectoryRecord:
    """Scalar time series (and optional snapshots) produced by one solver run.

    ``dissipation`` is the running sum ``sum dt * ||y_m||_V^2`` over all steps
    taken so far, i.e. the discrete dissipation integral appearing in the
    energy inequality.
    """

    times: np.ndarray
    norm_h: np.ndarray
    norm_v: np.ndarray
    norm_a: np.ndarray
    norm_alpha: np.ndarray
    dissipation: np.ndarray
    alpha: float
    dt: float
    fields: Optional[list] = None

    def __len__(self):
        return self.times.size

    def field_at(self, i: int, lattice: TorusLattice) -> SpectralField:
        if self.fields is None:
            raise ValueError("this record was produced without snapshots")
        return SpectralField(lattice, self.fields[i])

    def scalars_dict(self) -> dict:
        return {
            "time": self.times,
            "norm_h": self.norm_h,
            "norm_v": self.norm_v,
            "norm_a": self.norm_a,
            "norm_alpha": self.norm_alpha,
            "dissipation": self.dissipation,
        }


class _Recorder:
    def __init__(self, cfg: SolverConfig, alpha: float):
        self.cfg = cfg
        self.alpha = alpha
        self.times, self.nh, self.nv, self.na, self.nal, self.diss = [], [], [], [], [], []
        self.fields = [] if cfg.store_fields else None
        self._dissipation = 0.0

    def accumulate(self, y):
        self._dissipation += self.cfg.dt * float(self.cfg.lattice.norm_v(y)) ** 2

    def record(self, t, y):
        lat = self.cfg.lattice
        self.times.append(t)
        self.nh.append(float(lat.norm_h(y)))
        self.nv.append(float(lat.norm_v(y)))
        self.na.append(float(lat.norm_a(y)))
        self.nal.append(float(lat.norm_alpha(y, self.alpha)))
        self.diss.append(self._dissipation)
        if self.fields is not None:
            self.fields.append(y.copy())

    def build(self) -> TrajectoryRecord:
        return TrajectoryRecord(
            np.asarray(self.times),
            np.asarray(self.nh),
            np.asarray(self.nv),
            np.asarray(self.na),
            np.asarray(self.nal),
            np.asarray(self.diss),
            self.alpha,
            self.cfg.dt,
            self.fields,
        )


def _drive(cfg: SolverConfig, y0: np.ndarray, step_fn, alpha_for_norms: float) -> TrajectoryRecord:
    rec = _Recorder(cfg, alpha_for_norms)
    lat = cfg.lattice
    y = y0.copy()
    scale = max(1.0, float(lat.norm_h(y)))
    rec.record(0.0, y)
    stride, steps = cfg.record_stride, cfg.steps
    for m in range(steps):
        y = step_fn(m, y)
        nh = float(lat.norm_h(y))
        if not np.isfinite(nh) or nh > _BLOWUP_FACTOR * scale:
            raise BlowupError(
                f"solution blew up at step {m + 1}: |y| = {nh:.3e}", rec.build(), m + 1
            )
        rec.accumulate(y)
        if (m + 1) % stride == 0 or m + 1 == steps:
            rec.record((m + 1) * cfg.dt, y)
    return rec.build()


# ---------------------------------------------------------------------------
# The four systems
# ---------------------------------------------------------------------------


def solve_nse(xi: SpectralField, cfg: SolverConfig) -> TrajectoryRecord:
    """Limit system: implicit Stokes step, explicit advection."""
    lat = cfg.lattice
    S = cfg.implicit_multiplier()
    dt = cfg.dt

    def step(m, u):
        return S * (u - dt * lat.bilinear_b(u, u))

    return _drive(cfg, xi.coeffs, step, alpha_for_norms=0.0)


def dense_nse(xi: SpectralField, cfg: SolverConfig) -> TrajectoryRecord:
    """Reference run with snapshots at every step (for delta=1 solvers)."""
    dense_cfg = replace(cfg, record_stride=1, store_fields=True, noise=None)
    return solve_nse(xi, dense_cfg)


def _require_noise(cfg):
    if cfg.noise is None:
        raise ValueError("this run needs a noise operator in the config")


def _check_wiener(cfg, wiener):
    if wiener is not None:
        if wiener.steps < cfg.steps:
            raise ValueError("Wiener path is shorter than the run")
        if abs(wiener.dt - cfg.dt) > 1e-15:
            raise ValueError("Wiener path dt does not match the config")
        if cfg.noise is not None and wiener.rank != cfg.noise.rank:
            raise ValueError("Wiener path rank does not match the noise rank")


def solve_lans(xi: SpectralField, cfg: SolverConfig, wiener: Optional[WienerPath] = None) -> TrajectoryRecord:
    """Smoothed stochastic system in velocity form, noise scaled by sqrt(alpha)."""
    if not 0.0 < cfg.alpha <= 1.0:
        raise ValueError("solve_lans needs alpha in (0, 1]")
    _check_wiener(cfg, wiener)
    lat = cfg.lattice
    S = cfg.implicit_multiplier()
    dt, alpha = cfg.dt, cfg.alpha
    sqrt_alpha = math.sqrt(alpha)
    noise = cfg.noise
    inc = None if (noise is None or wiener is None) else wiener.increments

    def step(m, u):
        v = lat.unsmooth(u, alpha)
        rhs = u - dt * lat.btilde_alpha(u, v, alpha)
        if inc is not None:
            rhs = rhs + sqrt_alpha * noise.apply_smoothed(u, inc[m], alpha)
        return S * rhs

    return _drive(cfg, xi.coeffs, step, alpha_for_norms=alpha)


class UnifiedStepper:
    """One step of the delta-parameterized controlled/stochastic system.

    Batched: ``y`` may carry leading axes; ``u_n`` (the reference-system state
    at the left endpoint, required for delta=1) broadcasts against it.
    """

    def __init__(self, cfg: SolverConfig, delta: int):
        if not 0.0 < cfg.alpha <= 1.0:
            raise ValueError("the unified system needs alpha in (0, 1]")
        if delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        self.lat = cfg.lattice
        self.S = cfg.implicit_multiplier()
        self.dt = cfg.dt
        self.alpha = cfg.alpha
        self.delta = delta
        self.lam_delta = 1.0 if delta == 0 else ScalingLaw(cfg.scaling.kappa, 1).lam_delta(cfg.alpha)
        self.sqrt_alpha = math.sqrt(cfg.alpha)
        self.noise = cfg.noise

    def coefficient_argument(self, y, u_n):
        if self.delta == 0:
            return y
        return u_n + self.lam_delta * y

    def step(self, y, u_n=None, dw=None, h_n=None):
        lat, dt, alpha = self.lat, self.dt, self.alpha
        ld = self.lam_delta
        z = lat.unsmooth(y, alpha)
        drift = ld * lat.btilde_alpha(y, z, alpha)
        if self.delta == 1:
            if u_n is None:
                raise ValueError("delta=1 needs the reference-system state u_n")
            jinv_u = lat.unsmooth(u_n, alpha)
            drift = drift + lat.btilde_alpha(u_n, z, alpha) + lat.btilde_alpha(y, jinv_u, alpha)
            drift = drift + (1.0 / ld) * (
                lat.btilde_alpha(u_n, jinv_u, alpha) - lat.bilinear_b(u_n, u_n)
            )
        rhs = y - dt * drift
        if (dw is not None or h_n is not None) and self.noise is not None:
            arg = self.coefficient_argument(y, u_n)
            if h_n is not None:
                rhs = rhs + dt * self.noise.apply_smoothed(arg, h_n, alpha)
            if dw is not None:
                rhs = rhs + self.sqrt_alpha * (1.0 / ld) * self.noise.apply_smoothed(
                    arg, dw, alpha
                )
        return self.S * rhs


def _dense_fields(nse: Optional[TrajectoryRecord], cfg: SolverConfig, what: str):
    if nse is None:
        raise ValueError(f"delta=1 {what} needs the dense reference record (run dense_nse first)")
    if nse.fields is None or len(nse) != cfg.steps + 1:
        raise ValueError("reference record must hold snapshots at every step of the same grid")
    if abs(nse.dt - cfg.dt) > 1e-15:
        raise ValueError("reference record dt does not match the config")
    return nse.fields


def solve_unified(
    delta: int,
    xi: SpectralField,
    cfg: SolverConfig,
    h: Optional[Control] = None,
    wiener: Optional[WienerPath] = None,
    nse: Optional[TrajectoryRecord] = None,
) -> TrajectoryRecord:
    """Unified fluctuation system; initial value ``(1 - delta) xi``.

    delta=0 reproduces ``solve_lans`` step for step; delta=1 evolves
    ``(u_smoothed - u) / lam_delta`` exactly for the discrete scheme, with the
    reference states taken from the dense ``nse`` record at left endpoints.
    """
    _check_wiener(cfg, wiener)
    if h is not None:
        if h.steps < cfg.steps or abs(h.dt - cfg.dt) > 1e-15:
            raise ValueError("control grid does not match the config")
        _require_noise(cfg)
    stepper = UnifiedStepper(cfg, delta)
    u_fields = _dense_fields(nse, cfg, "solve_unified") if delta == 1 else None
    inc = None if (wiener is None or cfg.noise is None) else wiener.increments
    hv = None if h is None else h.values
    y0 = np.zeros_like(xi.coeffs) if delta == 1 else xi.coeffs

    def step(m, y):
        return stepper.step(
            y,
            u_n=None if u_fields is None else u_fields[m],
            dw=None if inc is None else inc[m],
            h_n=None if hv is None else hv[m],
        )

    return _drive(cfg, y0, step, alpha_for_norms=cfg.alpha)


class SkeletonStepper:
    """One step of the deterministic controlled system (alpha-free).

    delta=0: controlled limit system around the state itself; delta=1: the
    linearization around the reference flow, driven through the fixed
    coefficient G(u).
    """

    def __init__(self, cfg: SolverConfig, delta: int):
        if delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        self.lat = cfg.lattice
        self.S = cfg.implicit_multiplier()
        self.dt = cfg.dt
        self.delta = delta
        self.noise = cfg.noise

    def coefficient_argument(self, y, u_n):
        return y if self.delta == 0 else u_n

    def drift(self, y, u_n):
        lat = self.lat
        if self.delta == 0:
            return lat.bilinear_b(y, y)
        return lat.bilinear_b(u_n, y) + lat.bilinear_b(y, u_n)

    def step(self, y, u_n=None, h_n=None):
        rhs = y - self.dt * self.drift(y, u_n)
        if h_n is not None and self.noise is not None:
            arg = self.coefficient_argument(y, u_n)
            rhs = rhs + self.dt * self.noise.apply(arg, h_n)
        return self.S * rhs


def solve_skeleton(
    delta: int,
    xi: SpectralField,
    cfg: SolverConfig,
    h: Control,
    nse: Optional[TrajectoryRecord] = None,
) -> TrajectoryRecord:
    """Deterministic controlled system: the rate-function solution map."""
    if h is None:
        raise ValueError("solve_skeleton needs a control (possibly zero)")
    if h.steps < cfg.steps or abs(h.dt - cfg.dt) > 1e-15:
        raise ValueError("control grid does not match the config")
    if cfg.noise is None:
        raise ValueError("solve_skeleton needs the noise operator that shapes the control")
    stepper = SkeletonStepper(cfg, delta)
    u_fields = _dense_fields(nse, cfg, "solve_skeleton") if delta == 1 else None
    hv = h.values
    y0 = np.zeros_like(xi.coeffs) if delta == 1 else xi.coeffs

    def step(m, y):
        return stepper.step(
            y, u_n=None if u_fields is None else u_fields[m], h_n=hv[m]
        )

    return _drive(cfg, y0, step, alpha_for_norms=0.0)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    sup_norm_alpha_sq: float       # sup_t ||y||_a^2
    sup_norm_alpha_4: float        # sup_t ||y||_a^4
    dissipation_integral: float    # int ||y||_V^2 dt over the run
    phi_integral: float            # int Phi_delta dt along the reference
    growth_bound: float            # (1 + ||y(0)||_a^2) * exp(phi_integral), capped
    flagged: bool


def energy_report(
    traj: TrajectoryRecord,
    cfg: SolverConfig,
    u_ref: Optional[TrajectoryRecord] = None,
    h: Optional[Control] = None,
    delta: int = 0,
    warn_factor: float = 1.0,
) -> EnergyReport:
    """Moment functionals of a trajectory plus the Gronwall-style growth flag.

    ``Phi_delta = 1 + ||h||_K + delta^2 (|A u|^2 + |u|^2) + |B(u,u)|^2
    + |A u|^2 ||u||_V^2`` integrated along the reference record (u = 0 when no
    reference is given).  The flag compares ``sup_t ||y||_a^2`` against
    ``warn_factor * (1 + ||y(0)||_a^2) * exp(int Phi)``; constants in the
    underlying estimate are unknown, so this is a trend check only.
    """
    sup2 = float(np.max(traj.norm_alpha**2))
    sup4 = float(np.max(traj.norm_alpha**4))
    diss = float(traj.dissipation[-1])

    steps = cfg.steps
    phi = np.ones(steps)
    if h is not None:
        phi += np.sqrt(np.sum(h.values[:steps] ** 2, axis=1))
    if u_ref is not None:
        lat = cfg.lattice
        fields = _dense_fields(u_ref, cfg, "energy_report")
        for m in range(steps):
            u = fields[m]
            au2 = float(lat.norm_a(u)) ** 2
            vu2 = float(lat.norm_v(u)) ** 2
            hu2 = float(lat.norm_h(u)) ** 2
            b2 = float(lat.norm_h(lat.bilinear_b(u, u))) ** 2
            phi[m] += delta**2 * (au2 + hu2) + b2 + au2 * vu2
    phi_int = float(np.sum(phi) * cfg.dt)

    with np.errstate(over="ignore"):
        bound = warn_factor * (1.0 + float(traj.norm_alpha[0]) ** 2) * math.exp(min(phi_int, 700.0))
    flagged = sup2 > bound
    return EnergyReport(sup2, sup4, diss, phi_int, bound, flagged)
