"""Rate functions, small-noise Monte Carlo and limit probes.

The rate function of the deviation principle is the minimum control energy
``0.5 * int ||h||_K^2 dt`` over controls steering the deterministic controlled
system to a target.  Here this is solved on the discrete grid:

* delta=1 targets are linear-quadratic.  Scalar terminal observables are
  solved exactly through the discrete controllability Gramian assembled by one
  adjoint sweep; terminal-field targets by conjugate gradients on the Gramian
  operator (forward + adjoint applications only).
* delta=0 targets use a quadratic-penalty formulation with an increasing
  weight schedule and L-BFGS descent driven by the exact discrete adjoint
  gradient; results are upper bounds (the problem is nonconvex).

Monte Carlo tail estimation runs independent trajectories of the stochastic
system (vectorized in batches, reproducible per-trajectory streams) and
reports Wilson-interval uncertainty alongside the speed-normalized rate
estimate.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .dynamics import (
    ScalingLaw,
    SkeletonStepper,
    SolverConfig,
    TrajectoryRecord,
    UnifiedStepper,
    dense_nse,
    solve_skeleton,
)
from .noise import Control, sine_control, zero_control
from .spectral import SpectralField

# ---------------------------------------------------------------------------
# Problem statements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TerminalObservable:
    """Scalar target: steer ``<y(T), g>_H`` to ``level``."""

    g: SpectralField
    level: float


@dataclass(frozen=True)
class TerminalField:
    """Field target: steer ``y(T)`` to ``x`` in H."""

    x: SpectralField


Target = Union[TerminalObservable, TerminalField]


@dataclass(frozen=True)
class RateProblem:
    delta: int
    target: Target
    beta_schedule: tuple = (1e1, 1e2, 1e3, 1e4)
    tolerance: float = 1e-3
    max_iterations: int = 500

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValueError("delta must be 0 or 1")
        betas = tuple(float(b) for b in self.beta_schedule)
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("beta schedule must be strictly increasing")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        object.__setattr__(self, "beta_schedule", betas)


@dataclass
class RateResult:
    cost: float                 # 0.5 * int ||h*||^2; +inf when infeasible
    control: Control
    residual: float             # terminal constraint residual of h*
    converged: bool
    kkt_residual: Optional[float] = None
    details: dict = field(default_factory=dict)


@dataclass
class TailEstimate:
    alpha: float
    delta: int
    event: str
    n_samples: int
    hits: int
    p_hat: float
    speed: float                       # alpha^-1 * lam_delta(alpha)^2
    rate_estimate: Optional[float]     # -log(p_hat) / speed, None when p_hat = 0
    wilson_low: float
    wilson_high: float
    master_seed: int


# ---------------------------------------------------------------------------
# Discrete adjoint of the controlled skeleton
# ---------------------------------------------------------------------------


def _skeleton_forward(delta, hv, cfg, xi, u_fields):
    """March the controlled system, returning all states (steps+1 arrays)."""
    stepper = SkeletonStepper(cfg, delta)
    y = np.zeros_like(xi.coeffs) if delta == 1 else xi.coeffs.copy()
    states = [y]
    for m in range(cfg.steps):
        y = stepper.step(y, u_n=None if u_fields is None else u_fields[m], h_n=hv[m])
        if not np.isfinite(y.view(float)).all():
            raise FloatingPointError(f"skeleton forward pass produced non-finite values at step {m}")
        states.append(y)
    return states


def _adjoint_sweep(delta, hv, cfg, states, u_fields, p_terminal, noise):
    """Backward pass: returns d<terminal functional>/dh as a (steps, J) array.

    ``p_terminal`` is the H-gradient of the terminal functional at y(T); the
    cost term of the objective is *not* included here.
    """
    lat = cfg.lattice
    S = cfg.implicit_multiplier()
    dt = cfg.dt
    J = noise.rank
    grad = np.zeros((cfg.steps, J))
    phi_h = lat.inner_h  # pairing for the control columns
    p = p_terminal
    for m in range(cfg.steps - 1, -1, -1):
        s = S * p
        w_m = states[m] if delta == 0 else u_fields[m]
        coeff = noise.coefficients(w_m)
        for j in range(J):
            grad[m, j] = dt * coeff[j] * float(phi_h(s, noise.outputs[j]))
        # transpose of the drift linearization
        if delta == 0:
            y_m = states[m]
            dn_star = lat.adjoint_b_first(y_m, s) - lat.bilinear_b(y_m, s)
        else:
            u_m = u_fields[m]
            dn_star = lat.adjoint_b_first(u_m, s) - lat.bilinear_b(u_m, s)
        p = s - dt * dn_star
        if delta == 0 and noise.probes is not None:
            # multiplicative coefficient depends on the state
            w = noise.sigma * hv[m] * np.array(
                [float(phi_h(noise.outputs[j], s)) for j in range(J)]
            )
            p = p + dt * np.einsum("k,kcij->cij", w, noise.probes)
    return grad


def _terminal_pieces(target, lat, y_terminal):
    """Residual rho and the terminal H-gradient seed for the penalty term."""
    if isinstance(target, TerminalObservable):
        rho = float(lat.inner_h(y_terminal, target.g.coeffs)) - target.level
        return rho, target.g.coeffs
    diff = y_terminal - target.x.coeffs
    return float(lat.norm_h(diff)), diff


def skeleton_gradient(
    delta: int,
    h: Control,
    target: Target,
    cfg: SolverConfig,
    xi: SpectralField,
    beta: float,
    nse: Optional[TrajectoryRecord] = None,
):
    """Value and exact gradient of ``J_beta(h) = cost(h) + (beta/2) rho(h)^2``.

    ``rho`` is the terminal constraint residual (scalar-observable gap or
    H-distance to the field target).  The gradient is the exact reverse-mode
    derivative of the discrete forward scheme, returned as a (steps, J) array.
    """
    if cfg.noise is None:
        raise ValueError("rate machinery needs the noise operator in the config")
    u_fields = None
    if delta == 1:
        if nse is None or nse.fields is None:
            raise ValueError("delta=1 needs the dense reference record")
        u_fields = nse.fields
    lat = cfg.lattice
    hv = h.values
    states = _skeleton_forward(delta, hv, cfg, xi, u_fields)
    rho, rho_grad = _terminal_pieces(target, lat, states[-1])
    cost = 0.5 * cfg.dt * float(np.sum(hv**2))
    value = cost + 0.5 * beta * rho**2
    if isinstance(target, TerminalObservable):
        p_terminal = beta * rho * rho_grad
    else:
        p_terminal = beta * rho_grad  # gradient of (beta/2)|y - x|^2
    grad = cfg.dt * hv + _adjoint_sweep(delta, hv, cfg, states, u_fields, p_terminal, cfg.noise)
    return value, grad


def _response_functional(cfg, g_coeffs, u_fields, noise):
    """One adjoint sweep with terminal vector g: the linear map h -> <y(T), g>."""
    hv = np.zeros((cfg.steps, noise.rank))
    return _adjoint_sweep(1, hv, cfg, None, u_fields, g_coeffs, noise)


def _exact_lq_observable(problem, cfg, xi, nse):
    lat = cfg.lattice
    noise = cfg.noise
    target = problem.target
    L = _response_functional(cfg, target.g.coeffs, nse.fields, noise)
    gram = float(np.sum(L**2)) / cfg.dt
    if gram <= 0.0:
        return RateResult(
            math.inf, zero_control(noise.rank, cfg.dt, cfg.steps), abs(target.level),
            False, None, {"gramian": gram, "reason": "target not reachable (zero Gramian)"},
        )
    cost = target.level**2 / (2.0 * gram)
    mu = target.level / gram
    hv = mu * L / cfg.dt
    h_star = Control(cfg.dt, hv)
    # independent feasibility check: run the actual controlled system
    y = solve_skeleton(1, xi, replace(cfg, record_stride=cfg.steps, store_fields=True), h_star, nse=nse)
    reached = float(lat.inner_h(y.fields[-1], target.g.coeffs))
    residual = abs(reached - target.level)
    stationarity = float(np.max(np.abs(cfg.dt * hv - mu * L))) if hv.size else 0.0
    kkt = stationarity + residual
    scale = max(1.0, abs(target.level))
    return RateResult(
        cost, h_star, residual, residual <= problem.tolerance * scale, kkt,
        {"gramian": gram, "multiplier": mu, "bound": "exact"},
    )


def _gramian_cg_field(problem, cfg, xi, nse):
    """Minimum-energy control onto a terminal field by CG on the Gramian operator."""
    lat = cfg.lattice
    noise = cfg.noise
    x = problem.target.x.coeffs
    u_fields = nse.fields

    def apply_gram(mu):
        hv = _adjoint_sweep(1, None, cfg, None, u_fields, mu, noise) / cfg.dt
        states = _skeleton_forward(1, hv, cfg, xi, u_fields)
        return states[-1], hv

    mu = np.zeros_like(x)
    r = x.copy()
    d = r.copy()
    rr = float(lat.inner_h(r, r))
    x_norm = math.sqrt(max(float(lat.inner_h(x, x)), 1e-300))
    tol = problem.tolerance
    iterations = 0
    for iterations in range(1, problem.max_iterations + 1):
        q, _ = apply_gram(d)
        dq = float(lat.inner_h(d, q))
        if dq <= 0:
            break
        a = rr / dq
        mu = mu + a * d
        r = r - a * q
        rr_new = float(lat.inner_h(r, r))
        if math.sqrt(rr_new) <= tol * x_norm:
            rr = rr_new
            break
        d = r + (rr_new / rr) * d
        rr = rr_new
    best_hv = _adjoint_sweep(1, None, cfg, None, u_fields, mu, noise) / cfg.dt
    states = _skeleton_forward(1, best_hv, cfg, xi, u_fields)
    residual = float(lat.norm_h(states[-1] - x))
    converged = residual <= tol * x_norm
    cost = 0.5 * cfg.dt * float(np.sum(best_hv**2))
    result_cost = cost if converged else math.inf
    return RateResult(
        result_cost, Control(cfg.dt, best_hv), residual, converged, math.sqrt(rr),
        {"iterations": iterations, "feasible_cost": cost, "bound": "exact" if converged else "infeasible"},
    )


def _target_scale(target):
    if isinstance(target, TerminalObservable):
        return max(1.0, abs(target.level))
    return max(1.0, float(target.x.lattice.norm_h(target.x.coeffs)))


def _penalized_descent(problem, cfg, xi, nse):
    from scipy.optimize import minimize

    noise = cfg.noise
    steps, J = cfg.steps, noise.rank
    shape = (steps, J)
    hv = np.zeros(shape)
    scale = _target_scale(problem.target)
    history = []
    for beta in problem.beta_schedule:
        def fun(flat):
            val, grad = skeleton_gradient(
                problem.delta, Control(cfg.dt, flat.reshape(shape)), problem.target,
                cfg, xi, beta, nse=nse,
            )
            return val, grad.ravel()

        res = minimize(
            fun, hv.ravel(), jac=True, method="L-BFGS-B",
            options={"maxiter": problem.max_iterations, "ftol": 1e-14, "gtol": 1e-12},
        )
        hv = res.x.reshape(shape)
        h_beta = Control(cfg.dt, hv)
        states = _skeleton_forward(
            problem.delta, hv, cfg, xi, None if problem.delta == 0 else nse.fields
        )
        rho, _ = _terminal_pieces(problem.target, cfg.lattice, states[-1])
        cost = 0.5 * cfg.dt * float(np.sum(hv**2))
        history.append({"beta": beta, "cost": cost, "residual": abs(rho)})
    # extrapolate cost(beta) = cost_inf - a / beta using the last two weights
    if len(history) >= 2:
        b1, b2 = history[-2]["beta"], history[-1]["beta"]
        c1, c2 = history[-2]["cost"], history[-1]["cost"]
        a = (c2 - c1) / (1.0 / b1 - 1.0 / b2)
        cost_inf = c2 + a / b2
    else:
        cost_inf = history[-1]["cost"]
    residual = history[-1]["residual"]
    converged = residual <= problem.tolerance * scale
    return RateResult(
        cost_inf if converged else math.inf,
        Control(cfg.dt, hv),
        residual,
        converged,
        None,
        {"schedule": history, "extrapolated_cost": cost_inf,
         "final_cost": history[-1]["cost"], "bound": "upper"},
    )


def rate_function(
    problem: RateProblem,
    cfg: SolverConfig,
    xi: SpectralField,
    nse: Optional[TrajectoryRecord] = None,
) -> RateResult:
    """Minimum control energy steering the controlled system to the target.

    Infeasible targets carry ``cost = inf`` (the empty infimum) with
    ``converged = False`` and the stalled residual reported.
    """
    if cfg.noise is None:
        raise ValueError("rate_function needs the noise operator in the config")
    if problem.delta == 1:
        if nse is None or nse.fields is None:
            nse = dense_nse(xi, cfg)
        if isinstance(problem.target, TerminalObservable):
            return _exact_lq_observable(problem, cfg, xi, nse)
        return _gramian_cg_field(problem, cfg, xi, nse)
    return _penalized_descent(problem, cfg, xi, nse)


# ---------------------------------------------------------------------------
# Monte Carlo tails
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupNormEvent:
    """Event: the running H-norm exceeds ``threshold`` at any step."""

    threshold: float

    def describe(self):
        return f"sup-norm > {self.threshold:g}"


@dataclass(frozen=True)
class TerminalObservableEvent:
    """Event: the terminal observable ``<y(T), g>`` exceeds ``level``."""

    g: SpectralField
    level: float

    def describe(self):
        return f"terminal-observable > {self.level:g}"


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054):
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def wilson_upper_zero(n: int, z: float = 1.6448536269514722) -> float:
    """One-sided 95% upper bound on p when no hits were observed."""
    return z * z / (n + z * z)


def _chunk_increments(J, dt, steps, master_seed, start, stop):
    out = np.empty((stop - start, steps, J))
    root = np.sqrt(dt)
    for i in range(start, stop):
        rng = np.random.default_rng((int(master_seed), int(i)))
        out[i - start] = rng.standard_normal((steps, J)) * root
    return out


def _mc_chunk(args):
    delta, cfg, xi_coeffs, u_fields, event, master_seed, start, stop = args
    lat = cfg.lattice
    stepper = UnifiedStepper(cfg, delta)
    steps = cfg.steps
    inc = None
    if cfg.noise is not None:
        inc = _chunk_increments(cfg.noise.rank, cfg.dt, steps, master_seed, start, stop)
    B = stop - start
    y0 = np.zeros_like(xi_coeffs) if delta == 1 else xi_coeffs
    y = np.broadcast_to(y0, (B,) + y0.shape).copy()
    run_max = lat.norm_h(y)
    for m in range(steps):
        y = stepper.step(
            y,
            u_n=None if u_fields is None else u_fields[m],
            dw=None if inc is None else inc[:, m, :],
        )
        if not np.isfinite(y.view(float)).all():
            raise FloatingPointError(f"Monte Carlo batch became non-finite at step {m}")
        run_max = np.maximum(run_max, lat.norm_h(y))
    if isinstance(event, SupNormEvent):
        hit = run_max > event.threshold
    else:
        terminal = lat.inner_h(y, event.g.coeffs)
        hit = terminal > event.level
    return int(np.sum(hit))


def mc_tail(
    delta: int,
    alpha: float,
    event,
    n_samples: int,
    cfg: SolverConfig,
    xi: SpectralField,
    master_seed: int = 0,
    workers: int = 1,
    chunk_size: int = 20000,
    nse: Optional[TrajectoryRecord] = None,
) -> TailEstimate:
    """Empirical tail probability of ``event`` under the stochastic system.

    Trajectory ``i`` always consumes the stream derived from
    ``(master_seed, i)``, so the estimate is independent of worker count and
    chunking; chunks are merged by summing hit counts.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    run_cfg = replace(cfg, alpha=float(alpha))
    u_fields = None
    if delta == 1:
        if nse is None or nse.fields is None:
            nse = dense_nse(xi, run_cfg)
        u_fields = nse.fields
    bounds = list(range(0, n_samples, chunk_size)) + [n_samples]
    tasks = [
        (delta, run_cfg, xi.coeffs, u_fields, event, master_seed, a, b)
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(processes=workers) as pool:
            counts = pool.map(_mc_chunk, tasks)
    else:
        counts = [_mc_chunk(t) for t in tasks]
    hits = int(sum(counts))
    p_hat = hits / n_samples
    speed = ScalingLaw(run_cfg.scaling.kappa, delta).speed(alpha)
    if hits == 0:
        lo, hi, rate = 0.0, wilson_upper_zero(n_samples), None
    else:
        lo, hi = wilson_interval(hits, n_samples)
        rate = -math.log(p_hat) / speed if p_hat < 1.0 else 0.0
    return TailEstimate(
        alpha, delta, event.describe(), n_samples, hits, p_hat, speed, rate, lo, hi,
        master_seed,
    )


# ---------------------------------------------------------------------------
# Limit and continuity probes
# ---------------------------------------------------------------------------


def convergence_study(
    alpha_grid: Sequence[float],
    n_samples: int,
    cfg: SolverConfig,
    xi: SpectralField,
    master_seed: int = 0,
) -> list[dict]:
    """Estimate ``E[sup_t |u_a - u|^2 + int ||u_a - u||_V^2 dt]`` per alpha.

    Shared-seed batches: sample ``i`` uses the same Wiener stream at every
    alpha, so the decay across the grid is not masked by sampling noise.
    """
    lat = cfg.lattice
    steps = cfg.steps
    S = cfg.implicit_multiplier()
    # reference trajectory, one deterministic run
    u_path = [xi.coeffs.copy()]
    u = xi.coeffs.copy()
    for _ in range(steps):
        u = S * (u - cfg.dt * lat.bilinear_b(u, u))
        u_path.append(u)
    J = cfg.noise.rank if cfg.noise is not None else 1
    inc = _chunk_increments(J, cfg.dt, steps, master_seed, 0, n_samples)
    rows = []
    for alpha in alpha_grid:
        run_cfg = replace(cfg, alpha=float(alpha))
        stepper = UnifiedStepper(run_cfg, 0)
        y = np.broadcast_to(xi.coeffs, (n_samples,) + xi.coeffs.shape).copy()
        sup_sq = np.zeros(n_samples)
        diss = np.zeros(n_samples)
        for m in range(steps):
            if cfg.noise is not None:
                y = stepper.step(y, dw=inc[:, m, :])
            else:
                y = stepper.step(y)
            diff = y - u_path[m + 1]
            sup_sq = np.maximum(sup_sq, lat.norm_h(diff) ** 2)
            diss += cfg.dt * lat.norm_v(diff) ** 2
        rows.append(
            {
                "alpha": float(alpha),
                "estimate": float(np.mean(sup_sq + diss)),
                "sup_mean": float(np.mean(sup_sq)),
                "dissipation_mean": float(np.mean(diss)),
                "n_samples": n_samples,
            }
        )
    return rows


def weak_continuity_probe(
    delta: int,
    n_list: Sequence[int],
    cfg: SolverConfig,
    xi: SpectralField,
    direction: Optional[np.ndarray] = None,
    amplitude: float = 1.0,
    basis_count: int = 128,
    nse: Optional[TrajectoryRecord] = None,
) -> list[dict]:
    """Response of the controlled system to oscillatory controls h_n -> 0 weakly.

    For each oscillation index, reports
    ``e(n) = sup_t |y_hn - y_0|_H + (int ||y_hn - y_0||_V^2 dt)^(1/2)`` and the
    weak distance ``d1(h_n, 0)``; both decrease as the control oscillates away.
    """
    if cfg.noise is None:
        raise ValueError("weak_continuity_probe needs a noise operator")
    from .noise import weak_distance

    J = cfg.noise.rank
    steps = cfg.steps
    if delta == 1 and (nse is None or nse.fields is None):
        nse = dense_nse(xi, cfg)
    u_fields = nse.fields if delta == 1 else None
    zero = zero_control(J, cfg.dt, steps)
    base_states = _skeleton_forward(delta, zero.values, cfg, xi, u_fields)
    lat = cfg.lattice
    rows = []
    for osc in n_list:
        h_n = sine_control(J, cfg.dt, steps, osc, direction=direction, amplitude=amplitude)
        stepper = SkeletonStepper(cfg, delta)
        y = np.zeros_like(xi.coeffs) if delta == 1 else xi.coeffs.copy()
        sup = 0.0
        diss = 0.0
        for m in range(steps):
            y = stepper.step(y, u_n=None if u_fields is None else u_fields[m], h_n=h_n.values[m])
            diff = y - base_states[m + 1]
            sup = max(sup, float(lat.norm_h(diff)))
            diss += cfg.dt * float(lat.norm_v(diff)) ** 2
        rows.append(
            {
                "oscillation": int(osc),
                "e": sup + math.sqrt(diss),
                "d1": weak_distance(h_n, zero, basis_count=basis_count),
                "control_cost": 0.5 * cfg.dt * float(np.sum(h_n.values**2)),
            }
        )
    return rows


def mdp_rescale(
    u_alpha_traj: TrajectoryRecord,
    u_traj: TrajectoryRecord,
    scaling: ScalingLaw,
    lattice,
) -> TrajectoryRecord:
    """Pointwise ``(u_a(t) - u(t)) / (sqrt(a) lambda(a))`` with fresh scalars."""
    if u_alpha_traj.fields is None or u_traj.fields is None:
        raise ValueError("mdp_rescale needs snapshots in both records")
    if len(u_alpha_traj) != len(u_traj) or not np.allclose(
        u_alpha_traj.times, u_traj.times
    ):
        raise ValueError("records live on different time grids")
    alpha = u_alpha_traj.alpha
    fac = 1.0 / (math.sqrt(alpha) * scaling.lam(alpha))
    fields = [fac * (a - b) for a, b in zip(u_alpha_traj.fields, u_traj.fields)]
    nh = np.array([float(lattice.norm_h(f)) for f in fields])
    nv = np.array([float(lattice.norm_v(f)) for f in fields])
    na = np.array([float(lattice.norm_a(f)) for f in fields])
    nal = np.array([float(lattice.norm_alpha(f, alpha)) for f in fields])
    dts = np.diff(u_alpha_traj.times)
    diss = np.concatenate([[0.0], np.cumsum(dts * nv[1:] ** 2)])
    return TrajectoryRecord(
        u_alpha_traj.times.copy(), nh, nv, na, nal, diss, alpha, u_alpha_traj.dt, fields
    )


def ldp_speed(scaling: ScalingLaw, alpha: float) -> float:
    """Deviation speed: ``1/alpha`` for delta=0, ``lambda(alpha)^2`` for delta=1."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return scaling.speed(alpha)
