"""Quasi-linear nonlinearity N = N1 + N0 and its derivatives.

The highest-order part comes from a density F(x, z0, z1):

    N1(u) = d/dx [F_z0(x, u, u_x)] - d^2/dx^2 [F_z1(x, u, u_x)]

and N0(x, z0, z1) is a lower-order term.  Pointwise maps are evaluated on the
padded grid, truncated to N_max and differentiated spectrally, so every
function here is the exact derivative of the discrete map below it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .errors import DomainError, GridMismatchError
from .spectral import (SpaceTimeField, from_grid_real, grid_nodes, grid_size,
                       modes, n_max_of, to_grid_real)
from .timeops import time_derivative


def _zero(x, z0, z1):
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(z0), np.shape(z1)))


@dataclass(frozen=True)
class NonlinearitySpec:
    """Closures for F and N0 and the partials the toolkit needs.

    Keys of ``F`` are strings of z-indices: "0", "1", "00", "01", "11",
    "000", "001", "011", "111".  Keys of ``N0`` are "", "0", "1", "00",
    "01", "11".  Missing keys mean the partial is identically zero.
    """

    name: str
    F: Dict[str, Callable] = field(default_factory=dict)
    N0: Dict[str, Callable] = field(default_factory=dict)
    quadraticity_radius: float = 1.0
    params: dict = field(default_factory=dict)

    def f(self, key):
        return self.F.get(key, _zero)

    def n0(self, key):
        return self.N0.get(key, _zero)

    @property
    def hamiltonian_only(self):
        return not self.N0


@dataclass
class LinearizedCoefficients:
    """a3 h_xxx + a2 h_xx + a1 h_x + a0 h, each a trajectory."""

    a0: SpaceTimeField
    a1: SpaceTimeField
    a2: SpaceTimeField
    a3: SpaceTimeField

    @property
    def grid(self):
        return self.a3.grid

    @property
    def n_max(self):
        return self.a3.n_max

    @classmethod
    def zeros(cls, grid, n_max):
        z = SpaceTimeField.zeros(grid, n_max)
        return cls(z, z, z, z)

    def scaled(self, factor):
        return LinearizedCoefficients(self.a0 * factor, self.a1 * factor,
                                      self.a2 * factor, self.a3 * factor)


# built-in library ---------------------------------------------------------

def kdv_spec(c: float = 1.0, x_mod: float = 0.0, radius: float = 1.0) -> NonlinearitySpec:
    """F = -c (1 + x_mod cos x) z0^3 / 6, so N = -c u u_x when x_mod = 0."""
    w = lambda x: c * (1.0 + x_mod * np.cos(x))
    F = {
        "0": lambda x, z0, z1: -w(x) * z0 ** 2 / 2,
        "00": lambda x, z0, z1: -w(x) * z0 + 0 * z1,
        "000": lambda x, z0, z1: -w(x) + 0 * z0,
    }
    return NonlinearitySpec("kdv", F, {}, radius, {"c": c, "x_mod": x_mod})


def quasilinear_spec(c: float = 1.0, radius: float = 1.0) -> NonlinearitySpec:
    """F = c z0 z1^2; the linearization has a3 = -2 c u."""
    F = {
        "0": lambda x, z0, z1: c * z1 ** 2 + 0 * z0,
        "1": lambda x, z0, z1: 2 * c * z0 * z1,
        "01": lambda x, z0, z1: 2 * c * z1 + 0 * z0,
        "11": lambda x, z0, z1: 2 * c * z0 + 0 * z1,
        "011": lambda x, z0, z1: 2 * c + 0 * z0 * z1,
    }
    return NonlinearitySpec("quasilinear", F, {}, radius, {"c": c})


def lower_order_spec(c: float = 1.0, kdv: float = 0.0, radius: float = 1.0) -> NonlinearitySpec:
    """N0 = c z0 z1 (not of divergence form), optionally plus a KdV part."""
    base = kdv_spec(kdv) if kdv else NonlinearitySpec("none")
    N0 = {
        "": lambda x, z0, z1: c * z0 * z1,
        "0": lambda x, z0, z1: c * z1 + 0 * z0,
        "1": lambda x, z0, z1: c * z0 + 0 * z1,
        "01": lambda x, z0, z1: c + 0 * z0 * z1,
    }
    return NonlinearitySpec("lower_order", dict(base.F), N0, radius, {"c": c, "kdv": kdv})


def airy_spec() -> NonlinearitySpec:
    return NonlinearitySpec("airy", {}, {}, np.inf, {})


_REGISTRY: Dict[str, Callable[..., NonlinearitySpec]] = {
    "airy": airy_spec,
    "kdv": kdv_spec,
    "quasilinear": quasilinear_spec,
    "lower_order": lower_order_spec,
}


def register_spec(name: str, factory: Callable[..., NonlinearitySpec]):
    _REGISTRY[name] = factory


def get_spec(name: str, **params) -> NonlinearitySpec:
    if name not in _REGISTRY:
        raise KeyError(f"unknown nonlinearity {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](**params)


# evaluation ----------------------------------------------------------------

def _jet(uc, k):
    """Grid values of u and u_x for coefficients uc (..., 2N+1)."""
    n = modes(n_max_of(uc))
    return to_grid_real(uc, k), to_grid_real(uc * (1j * n), k)


def _dx(c, order=1):
    return c * (1j * modes(n_max_of(c))) ** order


def _check_radius(spec, z0, z1):
    r = spec.quadraticity_radius
    if np.isfinite(r):
        amp = max(float(np.max(np.abs(z0), initial=0.0)), float(np.max(np.abs(z1), initial=0.0)))
        if amp > r:
            raise DomainError(f"amplitude {amp:.3g} outside quadraticity radius {r}", amplitude=amp)


def _setup(uc, spec, check=True):
    uc = np.asarray(uc, dtype=complex)
    n = n_max_of(uc)
    k = grid_size(n)
    z0, z1 = _jet(uc, k)
    if check:
        _check_radius(spec, z0, z1)
    return n, k, grid_nodes(k), z0, z1


def N_coeffs(uc, spec: NonlinearitySpec, check=True) -> np.ndarray:
    """N(u) for coefficient arrays of any leading shape."""
    n, k, x, z0, z1 = _setup(uc, spec, check)
    A = from_grid_real(spec.f("0")(x, z0, z1), n)
    B = from_grid_real(spec.f("1")(x, z0, z1), n)
    out = _dx(A) - _dx(B, 2)
    if spec.N0:
        out = out + from_grid_real(spec.n0("")(x, z0, z1), n)
    return out


def N_prime_coeffs(uc, hc, spec, check=True) -> np.ndarray:
    """Exact derivative of N_coeffs at u in direction h."""
    n, k, x, z0, z1 = _setup(uc, spec, check)
    h0, h1 = _jet(hc, k)
    f = spec.f
    A = f("00")(x, z0, z1) * h0 + f("01")(x, z0, z1) * h1
    B = f("01")(x, z0, z1) * h0 + f("11")(x, z0, z1) * h1
    out = _dx(from_grid_real(A, n)) - _dx(from_grid_real(B, n), 2)
    if spec.N0:
        g = spec.n0("0")(x, z0, z1) * h0 + spec.n0("1")(x, z0, z1) * h1
        out = out + from_grid_real(g, n)
    return out


def N_second_coeffs(uc, h1c, h2c, spec, check=True) -> np.ndarray:
    n, k, x, z0, z1 = _setup(uc, spec, check)
    p0, p1 = _jet(h1c, k)
    q0, q1 = _jet(h2c, k)
    f = spec.f
    mixed = p0 * q1 + p1 * q0
    A = f("000")(x, z0, z1) * p0 * q0 + f("001")(x, z0, z1) * mixed + f("011")(x, z0, z1) * p1 * q1
    B = f("001")(x, z0, z1) * p0 * q0 + f("011")(x, z0, z1) * mixed + f("111")(x, z0, z1) * p1 * q1
    out = _dx(from_grid_real(A, n)) - _dx(from_grid_real(B, n), 2)
    if spec.N0:
        g = (spec.n0("00")(x, z0, z1) * p0 * q0 + spec.n0("01")(x, z0, z1) * mixed
             + spec.n0("11")(x, z0, z1) * p1 * q1)
        out = out + from_grid_real(g, n)
    return out


def coefficients_coeffs(uc, spec, check=True):
    """(a0, a1, a2, a3) as coefficient arrays."""
    n, k, x, z0, z1 = _setup(uc, spec, check)
    f = spec.f
    A0 = from_grid_real(f("00")(x, z0, z1), n)
    A1 = from_grid_real(f("01")(x, z0, z1), n)
    B1 = from_grid_real(f("11")(x, z0, z1), n)
    a3 = -B1
    a2 = 2 * _dx(a3)
    a1 = A0 - _dx(A1) - _dx(B1, 2)
    a0 = _dx(A0) - _dx(A1, 2)
    if spec.N0:
        a1 = a1 + from_grid_real(spec.n0("1")(x, z0, z1), n)
        a0 = a0 + from_grid_real(spec.n0("0")(x, z0, z1), n)
    return a0, a1, a2, a3


# trajectory wrappers ---------------------------------------------------------

def _airy_part(u: SpaceTimeField):
    ut = time_derivative(u.coeffs, u.grid.dt)
    return ut + _dx(u.coeffs, 3)


def eval_N(u: SpaceTimeField, spec) -> SpaceTimeField:
    return u.with_coeffs(N_coeffs(u.coeffs, spec), True)


def eval_P(u: SpaceTimeField, spec) -> SpaceTimeField:
    """u_t + u_xxx + N(u), time derivative by fourth-order differences."""
    return u.with_coeffs(_airy_part(u) + N_coeffs(u.coeffs, spec), True)


def linearized_coefficients(u: SpaceTimeField, spec) -> LinearizedCoefficients:
    a0, a1, a2, a3 = coefficients_coeffs(u.coeffs, spec)
    w = lambda c: SpaceTimeField(u.grid, c)
    return LinearizedCoefficients(w(a0), w(a1), w(a2), w(a3))


def _shared(*fields):
    g = fields[0].grid
    shape = fields[0].coeffs.shape
    for f in fields[1:]:
        if f.grid != g or f.coeffs.shape != shape:
            raise GridMismatchError("fields live on different grids")


def apply_P_prime(u: SpaceTimeField, h: SpaceTimeField, spec) -> SpaceTimeField:
    _shared(u, h)
    out = _airy_part(h) + N_prime_coeffs(u.coeffs, h.coeffs, spec)
    return h.with_coeffs(out, u.is_real and h.is_real)


def apply_P_second(u, h1, h2, spec) -> SpaceTimeField:
    _shared(u, h1, h2)
    out = N_second_coeffs(u.coeffs, h1.coeffs, h2.coeffs, spec)
    return h1.with_coeffs(out, h1.is_real and h2.is_real)


def apply_linear_operator(coeffs: LinearizedCoefficients, h: SpaceTimeField, ht=None) -> SpaceTimeField:
    """h_t + (1 + a3) h_xxx + a2 h_xx + a1 h_x + a0 h with dealiased products."""
    from .spectral import multiply
    hc = h.coeffs
    ht = time_derivative(hc, h.grid.dt) if ht is None else ht
    out = ht + _dx(hc, 3)
    for a, order in ((coeffs.a3, 3), (coeffs.a2, 2), (coeffs.a1, 1), (coeffs.a0, 0)):
        out = out + multiply(a.coeffs, _dx(hc, order))
    return h.with_coeffs(out, h.is_real)


def check_quadraticity(spec, n_max=8, grid=None) -> float:
    """Largest |N(0)| or |a_i(0)| coefficient; zero for admissible specs."""
    uc = np.zeros((1, 2 * n_max + 1), dtype=complex)
    worst = float(np.max(np.abs(N_coeffs(uc, spec))))
    for a in coefficients_coeffs(uc, spec):
        worst = max(worst, float(np.max(np.abs(a))))
    return worst


# matrix form of N'(u) ------------------------------------------------------------

def _toeplitz(c, n):
    from .reduction import toeplitz_stack
    return toeplitz_stack(c, n)


def _assemble(n, k, A, B, C, a, b):
    """Mode matrices of h -> d[A h + B h_x] - d^2[B h + C h_x] + a h + b h_x.

    A, B, C, a, b are grid values; products of a grid function with an N-mode
    field are exact through its 2N-mode DFT coefficients, so the stacks equal
    the spectral evaluation column by column.
    """
    D = 1j * modes(n)
    c = lambda v: _toeplitz(from_grid_real(v, 2 * n), n)
    TA, TB, TC = c(A), c(B), c(C)
    L = (D[:, None] * (TA + TB * D) - (D ** 2)[:, None] * (TB + TC * D))
    if a is not None:
        L = L + c(a) + c(b) * D
    return L


def linearization_stack(uc, spec, check=True) -> np.ndarray:
    """Matrices L(u) with L(u) h = N'(u)[h], shape (..., 2N+1, 2N+1)."""
    n, k, x, z0, z1 = _setup(uc, spec, check)
    f = spec.f
    a = b = None
    if spec.N0:
        a, b = spec.n0("0")(x, z0, z1), spec.n0("1")(x, z0, z1)
    return _assemble(n, k, f("00")(x, z0, z1), f("01")(x, z0, z1), f("11")(x, z0, z1), a, b)


def linearization_stack_prime(uc, gc, spec, check=True) -> np.ndarray:
    """Derivative of linearization_stack at u in direction g."""
    n, k, x, z0, z1 = _setup(uc, spec, check)
    g0, g1 = _jet(gc, k)
    f = spec.f
    d = lambda key0, key1: f(key0)(x, z0, z1) * g0 + f(key1)(x, z0, z1) * g1
    a = b = None
    if spec.N0:
        n0 = spec.n0
        a = n0("00")(x, z0, z1) * g0 + n0("01")(x, z0, z1) * g1
        b = n0("01")(x, z0, z1) * g0 + n0("11")(x, z0, z1) * g1
    return _assemble(n, k, d("000", "001"), d("001", "011"), d("011", "111"), a, b)
