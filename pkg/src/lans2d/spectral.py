"""Fourier-space machinery for divergence-free velocity fields on the 2D torus.

Fields live on ``[0, 2*pi]**2`` and are stored as truncated Fourier
coefficients ``uhat[c, i1, i2]`` (component ``c`` in {0, 1}, numpy FFT index
ordering per axis).  The physical field is ``u(x) = sum_k uhat(k) e^{i k.x}``,
so the L2 pairing carries the ``(2*pi)**2`` area factor and Parseval is exact.

Everything diagonal in Fourier space (Stokes powers, the Helmholtz smoother)
is applied exactly; quadratic terms are formed pseudo-spectrally with the
two-thirds dealiasing rule.  All operations accept leading batch axes on the
raw coefficient arrays, i.e. shape ``(..., 2, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TWO_PI = 2.0 * np.pi


class LatticeMismatchError(ValueError):
    """Raised when two fields do not share a lattice."""


@dataclass(frozen=True)
class TorusLattice:
    """Wavevector lattice for ``n`` modes per dimension on the 2D torus.

    Parameters
    ----------
    n : int
        Modes per dimension; must be even and at least 4.

    Attributes
    ----------
    k1, k2 : ndarray of int, shape (n, n)
        Integer wavevector components in numpy FFT ordering.
    eigenvalue : ndarray, shape (n, n)
        Stokes eigenvalues ``|k|**2 = k1**2 + k2**2``.
    dealias_mask : ndarray of bool, shape (n, n)
        True where ``max(|k1|, |k2|) <= n // 3`` (two-thirds rule).
    active : ndarray of bool, shape (n, n)
        Retained modes: dealias-kept and k != 0 (zero-mean constraint).
    """

    n: int
    k1: np.ndarray = field(init=False, repr=False, compare=False)
    k2: np.ndarray = field(init=False, repr=False, compare=False)
    eigenvalue: np.ndarray = field(init=False, repr=False, compare=False)
    dealias_mask: np.ndarray = field(init=False, repr=False, compare=False)
    active: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n % 2 != 0 or self.n < 4:
            raise ValueError(f"lattice size must be even and >= 4, got {self.n}")
        k1d = np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.int64)
        k1 = np.broadcast_to(k1d[:, None], (self.n, self.n)).copy()
        k2 = np.broadcast_to(k1d[None, :], (self.n, self.n)).copy()
        lam = (k1**2 + k2**2).astype(np.float64)
        mask = np.maximum(np.abs(k1), np.abs(k2)) <= self.n // 3
        nonzero = lam > 0
        for name, arr in (
            ("k1", k1),
            ("k2", k2),
            ("eigenvalue", lam),
            ("dealias_mask", mask),
            ("active", mask & nonzero),
            ("_nonzero", nonzero),
            ("_lam_safe", np.where(nonzero, lam, 1.0)),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # -- transforms ---------------------------------------------------------

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        """Collocation samples of a Hermitian coefficient array (real output)."""
        return np.fft.ifft2(coeffs, axes=(-2, -1)).real * (self.n * self.n)

    def to_spectral(self, phys: np.ndarray) -> np.ndarray:
        return np.fft.fft2(phys, axes=(-2, -1)) / (self.n * self.n)

    def grid(self):
        """Physical collocation points (X, Y), each shape (n, n)."""
        x = TWO_PI * np.arange(self.n) / self.n
        return np.meshgrid(x, x, indexing="ij")

    # -- diagonal operators --------------------------------------------------

    def leray(self, coeffs: np.ndarray) -> np.ndarray:
        """Helmholtz-Leray projection ``I - k k^T / |k|^2``; zeroes the mean mode."""
        kdot = self.k1 * coeffs[..., 0, :, :] + self.k2 * coeffs[..., 1, :, :]
        fac = kdot / self._lam_safe
        out = np.stack(
            [coeffs[..., 0, :, :] - self.k1 * fac, coeffs[..., 1, :, :] - self.k2 * fac],
            axis=-3,
        )
        out[..., ~self._nonzero] = 0.0
        return out

    def stokes(self, coeffs: np.ndarray, power: float) -> np.ndarray:
        """Apply ``A**power`` (diagonal: ``|k|**(2*power)``); mean mode stays 0."""
        if power == 0:
            return coeffs.copy()
        mult = np.where(self._nonzero, self._lam_safe**power, 0.0)
        return coeffs * mult

    def smooth(self, coeffs: np.ndarray, alpha: float) -> np.ndarray:
        """Helmholtz smoother ``(I + alpha^2 A)^{-1}``, exact per mode."""
        return coeffs / (1.0 + alpha * alpha * self.eigenvalue)

    def unsmooth(self, coeffs: np.ndarray, alpha: float) -> np.ndarray:
        """Inverse smoother ``I + alpha^2 A``."""
        return coeffs * (1.0 + alpha * alpha * self.eigenvalue)

    # -- pairings ------------------------------------------------------------

    def inner_h(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """L2 inner product over the torus; reduces the trailing (2, n, n) axes."""
        return TWO_PI**2 * np.sum((a * np.conj(b)).real, axis=(-3, -2, -1))

    def norm_h(self, a: np.ndarray) -> np.ndarray:
        return np.sqrt(TWO_PI**2 * np.sum((a.real**2 + a.imag**2), axis=(-3, -2, -1)))

    def norm_v(self, a: np.ndarray) -> np.ndarray:
        w = self.eigenvalue * (a.real**2 + a.imag**2)
        return np.sqrt(TWO_PI**2 * np.sum(w, axis=(-3, -2, -1)))

    def norm_a(self, a: np.ndarray) -> np.ndarray:
        """``|A u|`` (H-norm of the Stokes image)."""
        w = self.eigenvalue**2 * (a.real**2 + a.imag**2)
        return np.sqrt(TWO_PI**2 * np.sum(w, axis=(-3, -2, -1)))

    def norm_alpha(self, a: np.ndarray, alpha: float) -> np.ndarray:
        # |u|^2 + alpha^2 |A u|^2
        w = (1.0 + alpha * alpha * self.eigenvalue**2) * (a.real**2 + a.imag**2)
        return np.sqrt(TWO_PI**2 * np.sum(w, axis=(-3, -2, -1)))

    # -- quadratic terms ------------------------------------------------------

    def _gradients(self, coeffs):
        dx = self.to_physical(1j * self.k1 * coeffs)
        dy = self.to_physical(1j * self.k2 * coeffs)
        return dx, dy

    def bilinear_b(self, cu: np.ndarray, cv: np.ndarray) -> np.ndarray:
        """Pseudo-spectral ``B(u, v) = P(u . grad v)``, dealiased then projected."""
        up = self.to_physical(cu)
        dvx, dvy = self._gradients(cv)
        w = up[..., 0:1, :, :] * dvx + up[..., 1:2, :, :] * dvy
        return self.leray(self.to_spectral(w) * self.dealias_mask)

    def bilinear_btilde(self, cu: np.ndarray, cv: np.ndarray) -> np.ndarray:
        """``Btilde(u, v) = P(u . grad v + sum_j v_j grad u_j)``."""
        up = self.to_physical(cu)
        vp = self.to_physical(cv)
        dvx, dvy = self._gradients(cv)
        dux, duy = self._gradients(cu)
        w0 = (
            up[..., 0, :, :] * dvx[..., 0, :, :]
            + up[..., 1, :, :] * dvy[..., 0, :, :]
            + vp[..., 0, :, :] * dux[..., 0, :, :]
            + vp[..., 1, :, :] * dux[..., 1, :, :]
        )
        w1 = (
            up[..., 0, :, :] * dvx[..., 1, :, :]
            + up[..., 1, :, :] * dvy[..., 1, :, :]
            + vp[..., 0, :, :] * duy[..., 0, :, :]
            + vp[..., 1, :, :] * duy[..., 1, :, :]
        )
        w = np.stack([w0, w1], axis=-3)
        return self.leray(self.to_spectral(w) * self.dealias_mask)

    def btilde_alpha(self, cu: np.ndarray, cv: np.ndarray, alpha: float) -> np.ndarray:
        return self.smooth(self.bilinear_btilde(cu, cv), alpha)

    # -- adjoints of the linearized quadratic terms (H pairing) ---------------

    def adjoint_b_first(self, ca: np.ndarray, cp: np.ndarray) -> np.ndarray:
        """Adjoint of ``v -> B(v, a)``: returns ``P((grad a)^T p)`` dealiased."""
        dax, day = self._gradients(ca)
        pp = self.to_physical(cp)
        q0 = pp[..., 0, :, :] * dax[..., 0, :, :] + pp[..., 1, :, :] * dax[..., 1, :, :]
        q1 = pp[..., 0, :, :] * day[..., 0, :, :] + pp[..., 1, :, :] * day[..., 1, :, :]
        q = np.stack([q0, q1], axis=-3)
        return self.leray(self.to_spectral(q) * self.dealias_mask)

    def adjoint_b_second(self, ca: np.ndarray, cp: np.ndarray) -> np.ndarray:
        """Adjoint of ``v -> B(a, v)``: returns ``-B(a, p)`` (a divergence-free)."""
        return -self.bilinear_b(ca, cp)

    # -- field construction ----------------------------------------------------

    def hermitian_symmetrize(self, coeffs: np.ndarray) -> np.ndarray:
        flipped = np.roll(coeffs[..., ::-1, ::-1], 1, axis=(-2, -1))
        return 0.5 * (coeffs + np.conj(flipped))

    def clean(self, coeffs: np.ndarray) -> np.ndarray:
        """Symmetrize, dealias, project and zero the mean: a valid field."""
        c = self.hermitian_symmetrize(coeffs) * self.dealias_mask
        return self.leray(c)


def make_lattice(n: int) -> TorusLattice:
    """Build the wavevector lattice for ``n`` modes per dimension (even, >= 4)."""
    return TorusLattice(n)


@dataclass(frozen=True)
class SpectralField:
    """A real, zero-mean, divergence-free velocity field in truncated Fourier form.

    ``coeffs`` has shape (2, n, n); invariants (Hermitian symmetry,
    incompressibility, zero mean, dealiased support) are checked by
    :meth:`validate` and preserved by every operation in this module.
    """

    lattice: TorusLattice
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (2, self.lattice.n, self.lattice.n):
            raise ValueError(f"coefficient array must have shape (2, n, n), got {c.shape}")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def validate(self, tol: float = 1e-12) -> None:
        lat, c = self.lattice, self.coeffs
        scale = max(float(np.abs(c).max()), 1e-300)
        flipped = np.roll(c[:, ::-1, ::-1], 1, axis=(-2, -1))
        if np.abs(c - np.conj(flipped)).max() > tol * scale:
            raise ValueError("field is not Hermitian-symmetric (not real-valued)")
        div = np.abs(lat.k1 * c[0] + lat.k2 * c[1]).max()
        if div > tol * scale * lat.n:
            raise ValueError(f"field is not divergence-free (residual {div:.3e})")
        if np.abs(c[:, 0, 0]).max() > tol * scale:
            raise ValueError("field has a nonzero mean mode")
        if np.abs(c[:, ~lat.dealias_mask]).max() > 0.0:
            raise ValueError("field has support outside the dealiased band")

    def same_lattice(self, other: "SpectralField") -> None:
        if self.lattice.n != other.lattice.n:
            raise LatticeMismatchError(
                f"lattice mismatch: n={self.lattice.n} vs n={other.lattice.n}"
            )

    def __add__(self, other):
        self.same_lattice(other)
        return SpectralField(self.lattice, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self.same_lattice(other)
        return SpectralField(self.lattice, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.lattice, self.coeffs * float(scalar))

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# Field-level operations
# ---------------------------------------------------------------------------


def project_leray(f: SpectralField) -> SpectralField:
    return SpectralField(f.lattice, f.lattice.leray(f.coeffs))


def apply_stokes(u: SpectralField, s: float) -> SpectralField:
    return SpectralField(u.lattice, u.lattice.stokes(u.coeffs, s))


def apply_j_alpha(u: SpectralField, alpha: float) -> SpectralField:
    return SpectralField(u.lattice, u.lattice.smooth(u.coeffs, alpha))


def apply_j_alpha_inverse(u: SpectralField, alpha: float) -> SpectralField:
    return SpectralField(u.lattice, u.lattice.unsmooth(u.coeffs, alpha))


def inner_h(u: SpectralField, v: SpectralField) -> float:
    u.same_lattice(v)
    return float(u.lattice.inner_h(u.coeffs, v.coeffs))


def norm_h(u: SpectralField) -> float:
    return float(u.lattice.norm_h(u.coeffs))


def norm_v(u: SpectralField) -> float:
    return float(u.lattice.norm_v(u.coeffs))


def norm_alpha(u: SpectralField, alpha: float) -> float:
    return float(u.lattice.norm_alpha(u.coeffs, alpha))


def bilinear_b(u: SpectralField, v: SpectralField) -> SpectralField:
    u.same_lattice(v)
    return SpectralField(u.lattice, u.lattice.bilinear_b(u.coeffs, v.coeffs))


def bilinear_btilde(u: SpectralField, v: SpectralField) -> SpectralField:
    u.same_lattice(v)
    return SpectralField(u.lattice, u.lattice.bilinear_btilde(u.coeffs, v.coeffs))


def btilde_alpha(u: SpectralField, v: SpectralField, alpha: float) -> SpectralField:
    u.same_lattice(v)
    return SpectralField(u.lattice, u.lattice.btilde_alpha(u.coeffs, v.coeffs, alpha))


# ---------------------------------------------------------------------------
# Canonical fields
# ---------------------------------------------------------------------------


def zero_field(lattice: TorusLattice) -> SpectralField:
    return SpectralField(lattice, np.zeros((2, lattice.n, lattice.n), np.complex128))


def taylor_green(lattice: TorusLattice, amplitude: float = 1.0) -> SpectralField:
    """``(sin x cos y, -cos x sin y)``: Stokes eigenfield with eigenvalue 2."""
    X, Y = lattice.grid()
    phys = amplitude * np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)])
    return SpectralField(lattice, lattice.leray(lattice.to_spectral(phys) * lattice.dealias_mask))


def single_shear(lattice: TorusLattice, k: tuple[int, int] = (0, 1), amplitude: float = 1.0) -> SpectralField:
    """Unidirectional shear: one +-k mode pair, velocity perpendicular to k."""
    return eigenmode_field(lattice, k, amplitude=amplitude)


def eigenmode_field(
    lattice: TorusLattice, k: tuple[int, int], phase: float = 0.0, amplitude: float = 1.0
) -> SpectralField:
    """Unit-H-norm real divergence-free mode supported on the +-k pair.

    The velocity direction is ``k_perp / |k|``; ``phase`` rotates between the
    cosine (0) and sine (-pi/2) profiles.
    """
    k1, k2 = int(k[0]), int(k[1])
    if (k1, k2) == (0, 0):
        raise ValueError("mode (0, 0) is excluded (zero-mean constraint)")
    if max(abs(k1), abs(k2)) > lattice.n // 3:
        raise ValueError(f"mode {k} lies outside the dealiased band of n={lattice.n}")
    c = np.zeros((2, lattice.n, lattice.n), np.complex128)
    kperp = np.array([-k2, k1], float) / np.hypot(k1, k2)
    amp = amplitude * np.exp(1j * phase) / (TWO_PI * np.sqrt(2.0))
    c[:, k1 % lattice.n, k2 % lattice.n] = amp * kperp
    c[:, (-k1) % lattice.n, (-k2) % lattice.n] = np.conj(amp) * kperp
    return SpectralField(lattice, c)


def random_field(
    lattice: TorusLattice,
    rng: np.random.Generator,
    decay: float = 2.0,
    norm: float | None = 1.0,
) -> SpectralField:
    """Random valid field: i.i.d. complex Gaussians shaped by ``|k|**-decay``.

    The default decay keeps ``|A u|`` finite at desk resolution.  ``norm``
    rescales to the requested H-norm (None leaves the raw scale).
    """
    c = rng.standard_normal((2, lattice.n, lattice.n)) + 1j * rng.standard_normal(
        (2, lattice.n, lattice.n)
    )
    c *= np.where(lattice._nonzero, lattice._lam_safe ** (-decay / 2.0), 0.0)
    c = lattice.clean(c)
    f = SpectralField(lattice, c)
    if norm is not None:
        h = norm_h(f)
        if h > 0:
            f = f * (norm / h)
    return f


# ---------------------------------------------------------------------------
# Operator-bound and identity reports
# ---------------------------------------------------------------------------


@dataclass
class OperatorBoundsReport:
    alpha: float
    max_smoother_damping: float      # max over retained k of a^2 l / (1 + a^2 l), bound 1
    max_halfpower_damping: float     # max over retained k of a sqrt(l) / (1 + a^2 l), bound 0.5
    smoothing_gap_max_ratio: float   # max |<phi - J_a phi, w>| / ((a/2)|phi||A^1/2 w|)
    trials: int
    ok: bool


def verify_operator_bounds(
    lattice: TorusLattice, alpha: float, trials: int = 100, seed: int = 0
) -> OperatorBoundsReport:
    """Check the smoother damping factors and the O(alpha) smoothing-gap bound.

    Reports the lattice maxima of ``a^2 l/(1+a^2 l)`` (must be <= 1) and
    ``a sqrt(l)/(1+a^2 l)`` (must be <= 1/2), and the worst ratio of
    ``|<phi - J_a phi, w>|`` against ``(a/2) |phi| |A^(1/2) w|`` over random
    field pairs (must be <= 1).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    lam = lattice.eigenvalue[lattice.active]
    d1 = float(np.max(alpha**2 * lam / (1.0 + alpha**2 * lam)))
    d2 = float(np.max(alpha * np.sqrt(lam) / (1.0 + alpha**2 * lam)))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        phi = random_field(lattice, rng, norm=None)
        w = random_field(lattice, rng, norm=None)
        gap = phi.coeffs - lattice.smooth(phi.coeffs, alpha)
        lhs = abs(float(lattice.inner_h(gap, w.coeffs)))
        rhs = 0.5 * alpha * norm_h(phi) * norm_v(w)
        worst = max(worst, lhs / rhs)
    ok = d1 <= 1.0 and d2 <= 0.5 + 1e-15 and worst <= 1.0 + 1e-12
    return OperatorBoundsReport(alpha, d1, d2, worst, trials, ok)


def identity_report(lattice: TorusLattice, trials: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst relative residual of each bilinear identity over random triples.

    Residuals are normalized by the product of the field H-norms (pairing
    identities) or by ``|u|^2`` (the ``Btilde(u,u) = B(u,u)`` identity).
    """
    rng = np.random.default_rng(seed)
    lat = lattice
    worst = {
        "skew_symmetry": 0.0,        # (B(u,v),w) = -(B(u,w),v)
        "cancel_b": 0.0,             # (B(u,v),v) = 0
        "cancel_btilde": 0.0,        # (Btilde(u,v),u) = 0
        "btilde_decomposition": 0.0, # (Btilde(u,v),w) = (B(u,v),w) - (B(w,v),u)
        "btilde_diag_equals_b": 0.0, # Btilde(u,u) = B(u,u)
        "cancel_btilde_alpha": 0.0,  # (J_a Btilde(u,v), u + a^2 A u) = 0
    }
    alpha = 0.3
    for _ in range(trials):
        u = random_field(lat, rng)
        v = random_field(lat, rng)
        w = random_field(lat, rng)
        scale = norm_h(u) * norm_h(v) * norm_h(w)
        buv = lat.bilinear_b(u.coeffs, v.coeffs)
        buw = lat.bilinear_b(u.coeffs, w.coeffs)
        bwv = lat.bilinear_b(w.coeffs, v.coeffs)
        btuv = lat.bilinear_btilde(u.coeffs, v.coeffs)
        worst["skew_symmetry"] = max(
            worst["skew_symmetry"],
            abs(float(lat.inner_h(buv, w.coeffs) + lat.inner_h(buw, v.coeffs))) / scale,
        )
        worst["cancel_b"] = max(
            worst["cancel_b"], abs(float(lat.inner_h(buv, v.coeffs))) / scale
        )
        worst["cancel_btilde"] = max(
            worst["cancel_btilde"], abs(float(lat.inner_h(btuv, u.coeffs))) / scale
        )
        worst["btilde_decomposition"] = max(
            worst["btilde_decomposition"],
            abs(
                float(
                    lat.inner_h(btuv, w.coeffs)
                    - lat.inner_h(buv, w.coeffs)
                    + lat.inner_h(bwv, u.coeffs)
                )
            )
            / scale,
        )
        diag = lat.bilinear_btilde(u.coeffs, u.coeffs) - lat.bilinear_b(u.coeffs, u.coeffs)
        worst["btilde_diag_equals_b"] = max(
            worst["btilde_diag_equals_b"], float(lat.norm_h(diag)) / norm_h(u) ** 2
        )
        zu = lat.unsmooth(u.coeffs, alpha)
        worst["cancel_btilde_alpha"] = max(
            worst["cancel_btilde_alpha"],
            abs(float(lat.inner_h(lat.smooth(btuv, alpha), zu))) / scale,
        )
    return worst


# name -> (lhs, rhs) for the bilinear estimate shapes; constants are calibrated
# empirically (the sharp values are not pinned anywhere usable).
ESTIMATE_FORMS: dict[str, Callable] = {}


def _estimate(name):
    def deco(fn):
        ESTIMATE_FORMS[name] = fn
        return fn
    return deco


def _norms(lat, f):
    return (
        float(lat.norm_h(f)),
        float(lat.norm_v(f)),
        float(lat.norm_a(f)),
    )


@_estimate("v_dual_bound")  # |<X(u,v),w>| <= c |u|^1/2 ||u||^1/2 ||v|| ||w||, X in {B, Btilde}
def _est_v_dual(lat, u, v, w):
    hu, vu, _ = _norms(lat, u)
    _, vv, _ = _norms(lat, v)
    _, vw, _ = _norms(lat, w)
    lhs = max(
        abs(float(lat.inner_h(lat.bilinear_b(u, v), w))),
        abs(float(lat.inner_h(lat.bilinear_btilde(u, v), w))),
    )
    return lhs, np.sqrt(hu * vu) * vv * vw


@_estimate("agmon_first_slot")  # |(X(u,v),w)| <= c ||u||^1/2 |Au|^1/2 ||v|| |w|
def _est_agmon_first(lat, u, v, w):
    _, vu, au = _norms(lat, u)
    _, vv, _ = _norms(lat, v)
    hw, _, _ = _norms(lat, w)
    lhs = max(
        abs(float(lat.inner_h(lat.bilinear_b(u, v), w))),
        abs(float(lat.inner_h(lat.bilinear_btilde(u, v), w))),
    )
    return lhs, np.sqrt(vu * au) * vv * hw


@_estimate("agmon_second_slot")  # |(B(u,v),w)| <= c ||u|| ||v||^1/2 |Av|^1/2 |w|
def _est_agmon_second(lat, u, v, w):
    _, vu, _ = _norms(lat, u)
    _, vv, av = _norms(lat, v)
    hw, _, _ = _norms(lat, w)
    lhs = abs(float(lat.inner_h(lat.bilinear_b(u, v), w)))
    return lhs, vu * np.sqrt(vv * av) * hw


@_estimate("interpolated_second_slot")  # |(B(u,v),w)| <= c |u|^1/2 ||u||^1/2 ||v||^1/2 |Av|^1/2 |w|
def _est_refined(lat, u, v, w):
    hu, vu, _ = _norms(lat, u)
    _, vv, av = _norms(lat, v)
    hw, _, _ = _norms(lat, w)
    lhs = abs(float(lat.inner_h(lat.bilinear_b(u, v), w)))
    return lhs, np.sqrt(hu * vu) * np.sqrt(vv * av) * hw


@_estimate("rough_middle_slot")  # |<Btilde(u,v),w>| <= c ||u|| |v| |Aw|
def _est_rough_mid(lat, u, v, w):
    _, vu, _ = _norms(lat, u)
    hv, _, _ = _norms(lat, v)
    _, _, aw = _norms(lat, w)
    lhs = abs(float(lat.inner_h(lat.bilinear_btilde(u, v), w)))
    return lhs, vu * hv * aw


@_estimate("rough_middle_slot_sym")  # |<Btilde(u,v),w>| <= c |Au| |v| ||w||
def _est_rough_mid_sym(lat, u, v, w):
    _, _, au = _norms(lat, u)
    hv, _, _ = _norms(lat, v)
    _, vw, _ = _norms(lat, w)
    lhs = abs(float(lat.inner_h(lat.bilinear_btilde(u, v), w)))
    return lhs, au * hv * vw


@_estimate("extended_pairing")  # <Btilde(u,v),w> <= c [|u|^1/2 ||u||^1/2 ||w||^1/2 |Aw|^1/2 + |Aw| ||u||] |v|
def _est_extended(lat, u, v, w):
    hu, vu, _ = _norms(lat, u)
    hv, _, _ = _norms(lat, v)
    _, vw, aw = _norms(lat, w)
    lhs = abs(float(lat.inner_h(lat.bilinear_btilde(u, v), w)))
    return lhs, (np.sqrt(hu * vu) * np.sqrt(vw * aw) + aw * vu) * hv


def calibrate_estimates(
    lattice: TorusLattice, trials: int = 1000, seed: int = 0
) -> dict[str, float]:
    """Empirical constant per estimate: max lhs/rhs over random triples."""
    rng = np.random.default_rng(seed)
    out = {name: 0.0 for name in ESTIMATE_FORMS}
    for _ in range(trials):
        u = random_field(lattice, rng, norm=None)
        v = random_field(lattice, rng, norm=None)
        w = random_field(lattice, rng, norm=None)
        for name, fn in ESTIMATE_FORMS.items():
            lhs, rhs = fn(lattice, u.coeffs, v.coeffs, w.coeffs)
            out[name] = max(out[name], lhs / rhs)
    return out
