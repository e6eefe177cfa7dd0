"""Truncated Fourier fields on the circle and the operations acting on them.

Coefficients are stored with the mode index n = -N..N along the last axis, so a
field with truncation N has 2N+1 entries and coefficient n sits at position
n + N.  Products and other pointwise nonlinear maps are evaluated on a
collocation grid of K = 4N+4 points, which is alias-free for quadratic terms
and keeps the error of smooth non-polynomial maps at round-off for the
amplitudes used here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DiffeoDegenerateError

HERMITIAN_RTOL = 1e-12


def modes(n_max: int) -> np.ndarray:
    return np.arange(-n_max, n_max + 1)


def n_max_of(c: np.ndarray) -> int:
    return (np.shape(c)[-1] - 1) // 2


def grid_size(n_max: int) -> int:
    """Padded collocation size used for pointwise work."""
    return 4 * n_max + 4


def grid_nodes(k: int) -> np.ndarray:
    return 2 * np.pi * np.arange(k) / k


def bracket(n) -> np.ndarray:
    """Japanese bracket <n> = (1 + n^2)^(1/2)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + n * n)


def hermitian_part(c: np.ndarray) -> np.ndarray:
    """Coefficients of the real part of the represented function."""
    return 0.5 * (c + np.conj(c[..., ::-1]))


def hermitian_defect(c: np.ndarray) -> float:
    c = np.asarray(c)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(c - np.conj(c[..., ::-1]))) / scale)


# grid transforms --------------------------------------------------------

def to_grid(c: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Complex values at the k equispaced nodes."""
    c = np.asarray(c, dtype=complex)
    n = n_max_of(c)
    k = k or grid_size(n)
    if k < 2 * n + 1:
        raise ValueError("grid too coarse for the truncation")
    buf = np.zeros(c.shape[:-1] + (k,), dtype=complex)
    buf[..., modes(n) % k] = c
    return np.fft.ifft(buf, axis=-1) * k


def to_grid_real(c: np.ndarray, k: Optional[int] = None) -> np.ndarray:
    """Real values at the nodes; only the n >= 0 half of ``c`` is read."""
    c = np.asarray(c, dtype=complex)
    n = n_max_of(c)
    k = k or grid_size(n)
    if k < 2 * n + 2:
        raise ValueError("grid too coarse for the truncation")
    half = np.zeros(c.shape[:-1] + (k // 2 + 1,), dtype=complex)
    half[..., : n + 1] = c[..., n:]
    half[..., 0] = half[..., 0].real
    return np.fft.irfft(half, n=k, axis=-1) * k


def from_grid(v: np.ndarray, n_max: int) -> np.ndarray:
    k = v.shape[-1]
    c = np.fft.fft(v, axis=-1) / k
    return c[..., modes(n_max) % k]


def from_grid_real(v: np.ndarray, n_max: int) -> np.ndarray:
    """Truncated coefficients of real samples, Hermitian to the last bit."""
    v = np.asarray(v, dtype=float)
    k = v.shape[-1]
    if k < 2 * n_max + 2:
        raise ValueError("grid too coarse for the truncation")
    r = np.fft.rfft(v, axis=-1) / k
    pos = r[..., : n_max + 1]
    return np.concatenate([np.conj(pos[..., :0:-1]), pos], axis=-1)


def evaluate_at(c: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate sum_n c_n e^{iny} at arbitrary points by Horner in e^{iy}.

    ``c`` has shape (..., 2N+1) and ``y`` shape (..., P) with matching
    leading dimensions (broadcasting allowed).
    """
    c = np.asarray(c, dtype=complex)
    n = n_max_of(c)
    z = np.exp(1j * np.asarray(y, dtype=float))
    acc = np.zeros(np.broadcast_shapes(c.shape[:-1] + (1,), z.shape), dtype=complex)
    for j in range(2 * n, -1, -1):
        acc = acc * z + c[..., j:j + 1]
    return acc * z ** (-n)


def resize(c: np.ndarray, n_new: int) -> np.ndarray:
    """Zero-pad or truncate to a new mode range."""
    c = np.asarray(c)
    n = n_max_of(c)
    out = np.zeros(c.shape[:-1] + (2 * n_new + 1,), dtype=complex)
    m = min(n, n_new)
    out[..., n_new - m:n_new + m + 1] = c[..., n - m:n + m + 1]
    return out


# field types -------------------------------------------------------------

def _check_coeffs(c, is_real, ndim):
    c = np.array(c, dtype=complex)
    if c.ndim != ndim or c.shape[-1] % 2 == 0:
        raise ValueError(f"expected {ndim}-d coefficients with odd last axis, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite coefficients")
    if is_real and hermitian_defect(c) > HERMITIAN_RTOL:
        raise ValueError("coefficients are not Hermitian but is_real was asserted")
    c.setflags(write=False)
    return c


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Function on the circle given by coefficients of e^{inx}, |n| <= N."""

    coeffs: np.ndarray
    is_real: bool = True

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _check_coeffs(self.coeffs, self.is_real, 1))

    @property
    def n_max(self) -> int:
        return n_max_of(self.coeffs)

    @classmethod
    def zeros(cls, n_max, is_real=True):
        return cls(np.zeros(2 * n_max + 1, dtype=complex), is_real)

    @classmethod
    def from_function(cls, fn: Callable, n_max: int, k: Optional[int] = None):
        k = k or grid_size(n_max)
        vals = np.asarray(fn(grid_nodes(k)))
        if np.iscomplexobj(vals):
            return cls(from_grid(vals, n_max), is_real=False)
        return cls(from_grid_real(vals, n_max))

    @classmethod
    def from_values(cls, vals, n_max):
        if np.iscomplexobj(vals):
            return cls(from_grid(vals, n_max), is_real=False)
        return cls(from_grid_real(vals, n_max))

    @classmethod
    def mode(cls, n, n_max, amplitude=1.0):
        c = np.zeros(2 * n_max + 1, dtype=complex)
        c[n + n_max] = amplitude
        return cls(c, is_real=False)

    def values(self, k: Optional[int] = None) -> np.ndarray:
        if self.is_real:
            return to_grid_real(self.coeffs, k)
        return to_grid(self.coeffs, k)

    def coefficient(self, n):
        return self.coeffs[n + self.n_max]

    def _wrap(self, c, is_real=None):
        real = self.is_real if is_real is None else is_real
        return PeriodicField(hermitian_part(c) if real else c, real)

    def __add__(self, other):
        if isinstance(other, PeriodicField):
            return self._wrap(self.coeffs + other.coeffs, self.is_real and other.is_real)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, PeriodicField):
            return self._wrap(self.coeffs - other.coeffs, self.is_real and other.is_real)
        return NotImplemented

    def __neg__(self):
        return self._wrap(-self.coeffs)

    def __mul__(self, a):
        if isinstance(a, PeriodicField):
            return multiply(self, a)
        real = self.is_real and np.isreal(a)
        return self._wrap(self.coeffs * a, real)

    __rmul__ = __mul__


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes t_k = kT/M on [0, T]."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("need at least one step")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * (self.T / self.n_steps)
        t[-1] = self.T
        return t

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def refine(self, factor=2):
        return TimeGrid(self.T, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Trajectory t_k -> PeriodicField, coefficients of shape (M+1, 2N+1)."""

    grid: TimeGrid
    coeffs: np.ndarray
    is_real: bool = True

    def __post_init__(self):
        c = _check_coeffs(self.coeffs, self.is_real, 2)
        if c.shape[0] != self.grid.n_steps + 1:
            raise ValueError("snapshot count must equal n_steps + 1")
        object.__setattr__(self, "coeffs", c)

    @property
    def n_max(self) -> int:
        return n_max_of(self.coeffs)

    @property
    def snapshots(self):
        return [PeriodicField(c, self.is_real) for c in self.coeffs]

    def snapshot(self, k) -> PeriodicField:
        return PeriodicField(self.coeffs[k], self.is_real)

    @classmethod
    def zeros(cls, grid, n_max, is_real=True):
        return cls(grid, np.zeros((grid.n_steps + 1, 2 * n_max + 1), dtype=complex), is_real)

    @classmethod
    def from_function(cls, fn: Callable, grid: TimeGrid, n_max: int, k: Optional[int] = None):
        """Sample fn(t, x) with t a column and x a row."""
        k = k or grid_size(n_max)
        vals = np.asarray(fn(grid.nodes[:, None], grid_nodes(k)[None, :]))
        vals = np.broadcast_to(vals, (grid.n_steps + 1, k))
        if np.iscomplexobj(vals):
            return cls(grid, from_grid(vals, n_max), is_real=False)
        return cls(grid, from_grid_real(vals, n_max))

    @classmethod
    def from_snapshots(cls, grid, snaps):
        c = np.stack([s.coeffs for s in snaps])
        return cls(grid, c, all(s.is_real for s in snaps))

    @classmethod
    def constant(cls, grid, u: PeriodicField):
        c = np.repeat(u.coeffs[None, :], grid.n_steps + 1, axis=0)
        return cls(grid, c, u.is_real)

    @classmethod
    def from_scalar(cls, grid, values):
        """Space-constant trajectory from per-node scalars (N_max = 0)."""
        v = np.asarray(values)
        return cls(grid, v.astype(complex)[:, None], not np.iscomplexobj(v))

    def values(self, k: Optional[int] = None) -> np.ndarray:
        if self.is_real:
            return to_grid_real(self.coeffs, k)
        return to_grid(self.coeffs, k)

    def with_coeffs(self, c, is_real=None):
        real = self.is_real if is_real is None else is_real
        return SpaceTimeField(self.grid, hermitian_part(c) if real else c, real)

    def _same_grid(self, other):
        if other.grid != self.grid or other.coeffs.shape != self.coeffs.shape:
            from .errors import GridMismatchError
            raise GridMismatchError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, SpaceTimeField):
            self._same_grid(other)
            return self.with_coeffs(self.coeffs + other.coeffs, self.is_real and other.is_real)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpaceTimeField):
            self._same_grid(other)
            return self.with_coeffs(self.coeffs - other.coeffs, self.is_real and other.is_real)
        return NotImplemented

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, a):
        if isinstance(a, SpaceTimeField):
            return multiply(self, a)
        real = self.is_real and np.isreal(a)
        return self.with_coeffs(self.coeffs * a, real)

    __rmul__ = __mul__


def _coeffs(h):
    return h.coeffs if isinstance(h, (PeriodicField, SpaceTimeField)) else np.asarray(h)


def _rewrap(h, c, is_real=None):
    if isinstance(h, SpaceTimeField):
        return h.with_coeffs(c, is_real)
    if isinstance(h, PeriodicField):
        return h._wrap(c, is_real)
    return c


def apply_symbol(h, symbol: Callable, real_symbol=True):
    """Fourier multiplier n -> symbol(n) on fields or raw coefficient arrays."""
    c = _coeffs(h)
    out = c * symbol(modes(n_max_of(c)))
    return _rewrap(h, out, None if real_symbol else False)


# norms -------------------------------------------------------------------

def sobolev_norm(u, s: float) -> float:
    c = _coeffs(u)
    w = bracket(modes(n_max_of(c))) ** (2.0 * s)
    return float(np.sqrt(np.sum(np.abs(c) ** 2 * w)))


def sobolev_norms(c: np.ndarray, s: float) -> np.ndarray:
    """Per-row H^s norms of a (..., 2N+1) array."""
    w = bracket(modes(n_max_of(c))) ** (2.0 * s)
    return np.sqrt(np.sum(np.abs(c) ** 2 * w, axis=-1))


def traj_norm(u, s: float) -> float:
    """sup over time nodes of the H^s norm."""
    c = _coeffs(u)
    if c.size == 0:
        return 0.0
    return float(np.max(sobolev_norms(np.atleast_2d(c), s)))


def inner(u, v) -> complex:
    """L^2 pairing normalised by 2pi, i.e. sum_n u_n conj(v_n)."""
    return complex(np.sum(_coeffs(u) * np.conj(_coeffs(v))))


# multipliers ------------------------------------------------------------

def derivative(h, order: int = 1):
    return apply_symbol(h, lambda n: (1j * n) ** order)


def pi0(h):
    return apply_symbol(h, lambda n: (n != 0).astype(float))


def dx_inverse(h):
    """Zero-mean primitive; the mean of ``h`` is discarded first."""
    def sym(n):
        out = np.zeros(n.shape, dtype=complex)
        nz = n != 0
        out[nz] = 1.0 / (1j * n[nz])
        return out
    return apply_symbol(h, sym)


def lambda_s(h, s: float):
    return apply_symbol(h, lambda n: bracket(n) ** s)


def mean(h):
    """Spatial average (1/2pi) int h dx, per time node for trajectories."""
    c = _coeffs(h)
    return c[..., n_max_of(c)]


def multiply(u, v, k: Optional[int] = None):
    """Product on the padded grid, truncated back to the common N_max."""
    cu, cv = _coeffs(u), _coeffs(v)
    n = max(n_max_of(cu), n_max_of(cv))
    cu, cv = resize(cu, n), resize(cv, n)
    k = k or grid_size(n)
    real = getattr(u, "is_real", False) and getattr(v, "is_real", False)
    if real:
        c = from_grid_real(to_grid_real(cu, k) * to_grid_real(cv, k), n)
    else:
        c = from_grid(to_grid(cu, k) * to_grid(cv, k), n)
    base = u if isinstance(u, (PeriodicField, SpaceTimeField)) else v
    return _rewrap(base, c, real)


def pointwise(fn: Callable, *fields, n_max=None, k=None):
    """Apply a real pointwise map to real fields on the padded grid."""
    cs = [_coeffs(f) for f in fields]
    n = n_max if n_max is not None else max(n_max_of(c) for c in cs)
    k = k or grid_size(n)
    vals = fn(*[to_grid_real(c, k) for c in cs])
    return from_grid_real(vals, n)


# smoothing ----------------------------------------------------------------

def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _bump_prime(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    a, b = _bump(s), _bump(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def default_profile(xi):
    """phi = 1 on |xi| <= 1, 0 on |xi| >= 2, smooth and monotone between."""
    x = np.abs(np.asarray(xi, dtype=float))
    a, b = _bump(2.0 - x), _bump(x - 1.0)
    return a / (a + b)


def default_profile_prime(xi):
    xi = np.asarray(xi, dtype=float)
    x = np.abs(xi)
    a, b = _bump(2.0 - x), _bump(x - 1.0)
    da, db = -_bump_prime(2.0 - x), _bump_prime(x - 1.0)
    return np.sign(xi) * (da * b - a * db) / (a + b) ** 2


@dataclass(frozen=True)
class SmoothingConfig:
    """Cutoff profile phi and its derivative; S_theta has symbol phi(n/theta)."""

    profile: Callable = default_profile
    profile_prime: Optional[Callable] = default_profile_prime

    def symbol(self, n, theta):
        return self.profile(np.asarray(n, dtype=float) / theta)

    def symbol_dtheta(self, n, theta):
        """d/dtheta phi(n/theta) = -(n/theta^2) phi'(n/theta)."""
        xi = np.asarray(n, dtype=float) / theta
        if self.profile_prime is not None:
            dphi = self.profile_prime(xi)
        else:
            eps = 1e-6
            dphi = (self.profile(xi + eps) - self.profile(xi - eps)) / (2 * eps)
        return -xi / theta * dphi


DEFAULT_SMOOTHING = SmoothingConfig()


def smooth(h, theta: float, cfg: SmoothingConfig = DEFAULT_SMOOTHING):
    if not theta >= 1:
        raise ValueError("theta must be >= 1")
    return apply_symbol(h, lambda n: cfg.symbol(n, theta))


def smooth_dtheta(h, theta: float, cfg: SmoothingConfig = DEFAULT_SMOOTHING):
    if not theta >= 1:
        raise ValueError("theta must be >= 1")
    return apply_symbol(h, lambda n: cfg.symbol_dtheta(n, theta))


# diffeomorphisms of the circle ------------------------------------------

SLOPE_BOUND = 0.5


def _slope_check(bc, k):
    slope = to_grid_real(bc * (1j * modes(n_max_of(bc))), k)
    worst = float(np.max(np.abs(slope))) if slope.size else 0.0
    if worst > SLOPE_BOUND + 1e-12:
        raise DiffeoDegenerateError(f"displacement slope {worst:.3g} exceeds 1/2", slope=worst)


def compose_coeffs(hc, bc, real=True, k=None):
    """Coefficients of x -> h(x + beta(x)); leading axes of hc, bc broadcast."""
    hc, bc = np.asarray(hc, dtype=complex), np.asarray(bc, dtype=complex)
    n = n_max_of(hc)
    k = k or grid_size(max(n, n_max_of(bc)))
    _slope_check(bc, k)
    y = grid_nodes(k) + to_grid_real(bc, k)
    vals = evaluate_at(hc, y)
    if real:
        return from_grid_real(vals.real, n)
    return from_grid(vals, n)


def compose_with_diffeo(h, displacement):
    """h(x + beta(x)) re-interpolated on the collocation grid."""
    real = h.is_real
    c = compose_coeffs(_coeffs(h), _coeffs(displacement), real)
    return _rewrap(h, c, real)


def invert_coeffs(bc, tol=1e-12, max_iter=200, k=None):
    """Fixed point bt <- -beta(y + bt) on the padded grid."""
    bc = np.asarray(bc, dtype=complex)
    n = n_max_of(bc)
    k = k or grid_size(n)
    _slope_check(bc, k)
    y = grid_nodes(k)
    bt = -to_grid_real(bc, k)
    for _ in range(max_iter):
        new = -evaluate_at(bc, y + bt).real
        step = np.max(np.abs(new - bt)) if new.size else 0.0
        bt = new
        if step <= tol:
            return from_grid_real(bt, n)
    raise DiffeoDegenerateError("inverse diffeomorphism iteration did not converge")


def invert_diffeo(displacement):
    return _rewrap(displacement, invert_coeffs(_coeffs(displacement)), True)
