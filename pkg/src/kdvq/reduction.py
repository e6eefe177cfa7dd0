"""Reduction of the linearized operator to constant coefficients.

Starting from

    L0 = d/dt + (1 + a3) d^3 + a2 d^2 + a1 d + a0        (d = d/dx)

five changes of variables are applied in turn:

    A  h(t, x + beta(t, x))            space diffeomorphism
    B  h(psi(t), y)                    time reparametrization
    M  q(tau, y) h                     multiplication
    T  h(tau, x + p(tau))              translation
    S  (I + gamma d^{-1}) h            order-one correction

and the result is L5 = d/dt + m d^3 + R with R bounded.  With W = M T S,

    L0 = A B rho W L5 W^{-1} B^{-1} A^{-1}

where rho(tau) multiplies in the reparametrized time.  All fields are kept as
coefficient arrays of shape (M+1, 2N+1) on a shared TimeGrid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ReductionDomainError, SmallnessError, StructuralError
from .nonlinearity import LinearizedCoefficients
from .spectral import (SpaceTimeField, TimeGrid, compose_coeffs, from_grid,
                       from_grid_real, grid_size, hermitian_part,
                       invert_coeffs, modes, multiply, n_max_of,
                       sobolev_norms, to_grid_real)
from .timeops import (cumulative_integral, invert_monotone, lagrange_interp,
                      time_derivative)

ZERO_MEAN_TOL = 1e-8


@dataclass(frozen=True)
class ReductionThresholds:
    """Empirical smallness gates standing in for the abstract ones."""

    a3_h3_max: float = 0.1
    neumann_max: float = 0.5


def _dx(c, order=1):
    return c * (1j * modes(n_max_of(c))) ** order


def _dxinv(c):
    n = modes(n_max_of(c))
    sym = np.zeros(n.shape, dtype=complex)
    sym[n != 0] = 1.0 / (1j * n[n != 0])
    return c * sym


def _mean(c):
    return c[..., n_max_of(c)]


def _prod(a, b, real=True):
    """Dealiased product of coefficient arrays."""
    n = n_max_of(b)
    k = grid_size(n)
    if real:
        return from_grid_real(to_grid_real(a, k) * to_grid_real(b, k), n)
    from .spectral import to_grid
    return from_grid(to_grid(a, k) * to_grid(b, k), n)


def _pointwise(fn, *cs, n=None):
    n = n if n is not None else n_max_of(cs[0])
    k = grid_size(n)
    return from_grid_real(fn(*[to_grid_real(c, k) for c in cs]), n)


def _is_real_array(c):
    return np.allclose(c, np.conj(c[..., ::-1]), atol=1e-14 * (1 + np.max(np.abs(c), initial=0)))


def toeplitz_stack(a: np.ndarray, n_max: int) -> np.ndarray:
    """Matrices [a_{n-k}]_{|n|,|k|<=N} for each leading index of ``a``."""
    a = np.asarray(a, dtype=complex)
    na = n_max_of(a)
    n = modes(n_max)
    diff = n[:, None] - n[None, :]
    inside = np.abs(diff) <= na
    idx = np.clip(diff + na, 0, 2 * na)
    return np.where(inside, a[..., idx], 0.0)


# step 1 ----------------------------------------------------------------------

def step1_space_diffeo(a3, thresholds: ReductionThresholds = ReductionThresholds()):
    """Displacement beta with (1 + a3)(1 + beta_x)^3 = b(t).

    Returns (beta, beta_tilde, b) as coefficient arrays and per-node scalars.
    """
    a3c = a3.coeffs if isinstance(a3, SpaceTimeField) else np.asarray(a3)
    n = n_max_of(a3c)
    k = grid_size(n)
    vals = 1.0 + to_grid_real(a3c, k)
    if np.min(vals) <= 0.5:
        raise ReductionDomainError("1 + a3 drops to 1/2 or below", minimum=float(np.min(vals)))
    h3 = float(np.max(sobolev_norms(a3c, 3)))
    if h3 > thresholds.a3_h3_max:
        raise ReductionDomainError(f"||a3||_T,3 = {h3:.3g} exceeds {thresholds.a3_h3_max}", norm=h3)
    root = vals ** (-1.0 / 3.0)
    avg = np.mean(root, axis=-1)
    b = avg ** (-3.0)
    rho0 = from_grid_real(root / avg[:, None] - 1.0, n)
    beta = _dxinv(rho0)
    beta_tilde = invert_coeffs(beta)
    return beta, beta_tilde, b


def step1_residual(a3c, beta, b):
    """(1 + a3)(1 + beta_x)^3 - b on the padded grid."""
    k = grid_size(n_max_of(a3c))
    bx = to_grid_real(_dx(beta), k)
    return (1.0 + to_grid_real(a3c, k)) * (1.0 + bx) ** 3 - b[:, None]


# step 2 ----------------------------------------------------------------------

def step2_time_reparam(b, grid: TimeGrid):
    """m = mean of b, psi(t) = (1/m) int_0^t b, rho(tau) = b(psi^{-1} tau)/m."""
    b = np.asarray(b, dtype=float)
    cum = cumulative_integral(b, grid.dt)
    m = cum[-1] / grid.T
    psi = cum / m
    psi[0], psi[-1] = 0.0, grid.T
    psi_inv = invert_monotone(psi, grid.dt, grid.nodes)
    psi_inv[0], psi_inv[-1] = 0.0, grid.T
    rho = lagrange_interp(b, grid.dt, psi_inv) / m
    return float(m), psi, psi_inv, rho


def _carrier_phase(n_max, m_c, t):
    return np.exp(1j * m_c * np.outer(t, modes(n_max).astype(float) ** 3))


def resample(hc, dt, tq, carrier: Optional[float] = None):
    """Values of a sampled trajectory at times tq.

    With a carrier m_c the oscillating factor e^{i m_c n^3 t} is removed before
    interpolation and restored after, so dispersive data resample accurately.
    """
    hc = np.asarray(hc)
    if carrier is None or carrier == 0.0:
        return lagrange_interp(hc, dt, tq)
    n = n_max_of(hc)
    t = np.arange(hc.shape[0]) * dt
    extra = (1,) * (hc.ndim - 2)
    prof = hc * np.conj(_carrier_phase(n, carrier, t)).reshape(_carrier_phase(n, carrier, t).shape + extra)
    out = lagrange_interp(prof, dt, tq)
    ph = _carrier_phase(n, carrier, np.asarray(tq))
    return out * ph.reshape(ph.shape + extra)


def apply_B(h, psi, variant="plain", grid: Optional[TimeGrid] = None, psi_inv=None, carrier=None):
    """(B h)(t) = h(psi(t)); the inverse samples at psi^{-1}(tau)."""
    if isinstance(h, SpaceTimeField):
        grid = h.grid
        hc = h.coeffs
    else:
        hc = np.asarray(h)
    psi = np.asarray(psi, dtype=float)
    if variant == "plain":
        tq = psi
    elif variant == "inverse":
        tq = psi_inv if psi_inv is not None else invert_monotone(psi, grid.dt, grid.nodes)
    else:
        raise ValueError(f"unknown variant {variant}")
    out = resample(hc, grid.dt, tq, carrier)
    if isinstance(h, SpaceTimeField):
        return h.with_coeffs(out)
    return out


# step 3 ----------------------------------------------------------------------

def step3_multiplication(a8, m: float):
    """q = exp(-(1/3m) d^{-1} a8), the periodic solution of 3 m q_y + a8 q = 0."""
    a8c = a8.coeffs if isinstance(a8, SpaceTimeField) else np.asarray(a8)
    scale = max(1.0, float(np.max(np.abs(a8c), initial=0.0)))
    if np.max(np.abs(_mean(a8c)), initial=0.0) > ZERO_MEAN_TOL * scale:
        raise StructuralError("a8 has nonzero spatial mean; no periodic q exists")
    expo = -_dxinv(a8c) / (3.0 * m)
    return _pointwise(np.exp, expo)


# step 4 ----------------------------------------------------------------------

def step4_translation(a12, grid: TimeGrid):
    """p(tau) = -int_0^tau mean(a12); returns (p, p')."""
    a12c = a12.coeffs if isinstance(a12, SpaceTimeField) else np.asarray(a12)
    p_dot = -_mean(a12c).real
    return cumulative_integral(p_dot, grid.dt), p_dot


def translate(hc, p, inverse=False):
    n = n_max_of(hc)
    sign = -1.0 if inverse else 1.0
    ph = np.exp(1j * sign * np.outer(p, modes(n)))
    return hc * ph.reshape(ph.shape + (1,) * (np.ndim(hc) - 2))


# step 5 ----------------------------------------------------------------------

@dataclass
class OrderOneCorrection:
    """S = I + gamma d^{-1} and R = S^{-1}(a15 + c17 pi0 + a18 d^{-1})."""

    gamma: np.ndarray
    a15: np.ndarray
    c17: np.ndarray
    a18: np.ndarray
    neumann_tol: float = 1e-15

    def apply_S(self, hc, k=None, inverse=False, transpose=False):
        """S, S^{-1}, S^T or S^{-T} at every node (or node k)."""
        g = self.gamma if k is None else self.gamma[k]
        hc = np.asarray(hc)
        real = _is_real_array(hc)
        if transpose:
            op = lambda x: -_dxinv(_prod(g, x, real))
        else:
            op = lambda x: _prod(g, _dxinv(x), real)
        if not inverse:
            return hc + op(hc)
        out = hc.copy()
        term = hc
        scale = np.max(np.abs(hc), initial=0.0)
        for _ in range(200):
            term = -op(term)
            out = out + term
            if np.max(np.abs(term), initial=0.0) <= self.neumann_tol * max(scale, 1e-300):
                break
        return out

    def apply_R(self, hc, k=None):
        sl = slice(None) if k is None else k
        real = _is_real_array(np.asarray(hc))
        rhs = (_prod(self.a15[sl], hc, real) + _prod(self.c17[sl], hc - _pi0_mean(hc), real)
               + _prod(self.a18[sl], _dxinv(hc), real))
        return self.apply_S(rhs, k, inverse=True)

    def matrices(self, n_max, nodes=None):
        """Dense R(t_j) stack, assembled by a batched linear solve with S."""
        sl = slice(None) if nodes is None else nodes
        n = modes(n_max)
        dinv = np.zeros(n.shape, dtype=complex)
        dinv[n != 0] = 1.0 / (1j * n[n != 0])
        p0 = (n != 0).astype(float)
        G = toeplitz_stack(self.gamma[sl], n_max)
        S = np.eye(n.size) + G * dinv[None, None, :]
        rhs = (toeplitz_stack(self.a15[sl], n_max) + toeplitz_stack(self.c17[sl], n_max) * p0[None, None, :]
               + toeplitz_stack(self.a18[sl], n_max) * dinv[None, None, :])
        return np.linalg.solve(S, rhs)


def _pi0_mean(hc):
    out = np.zeros_like(hc)
    out[..., n_max_of(hc)] = hc[..., n_max_of(hc)]
    return out


def step5_order_one(a14, a15, m: float, grid: TimeGrid,
                    thresholds: ReductionThresholds = ReductionThresholds()):
    a14c = a14.coeffs if isinstance(a14, SpaceTimeField) else np.asarray(a14)
    a15c = a15.coeffs if isinstance(a15, SpaceTimeField) else np.asarray(a15)
    gamma = -_dxinv(a14c) / (3.0 * m)
    sup = float(np.max(np.abs(to_grid_real(gamma))))
    if sup >= thresholds.neumann_max:
        raise SmallnessError(f"Neumann estimate sup|gamma| = {sup:.3g} too large", estimate=sup)
    gamma_t = time_derivative(gamma, grid.dt)
    c17 = 3 * m * _dx(gamma, 2) + _prod(a14c, gamma)
    a18 = (gamma_t + m * _dx(gamma, 3) + _prod(a14c, _dx(gamma)) + _prod(a15c, gamma))
    return gamma, OrderOneCorrection(gamma, a15c, c17, a18)


# the assembled chain ---------------------------------------------------------

@dataclass
class ReductionChain:
    grid: TimeGrid
    n_max: int
    coeffs: LinearizedCoefficients
    beta: np.ndarray
    beta_tilde: np.ndarray
    b: np.ndarray
    m: float
    psi: np.ndarray
    psi_inv: np.ndarray
    rho: np.ndarray
    q: np.ndarray
    p: np.ndarray
    p_dot: np.ndarray
    gamma: np.ndarray
    ladder: dict = field(default_factory=dict)
    correction: Optional[OrderOneCorrection] = None

    # transformations on coefficient arrays (M+1, 2N+1) ----------------------

    def A(self, hc, variant="plain"):
        hc = np.asarray(hc)
        real = _is_real_array(hc)
        if variant == "plain":
            return compose_coeffs(hc, self.beta, real)
        if variant == "inverse":
            return compose_coeffs(hc, self.beta_tilde, real)
        if variant == "transpose":
            return _prod(1.0 * _unit(self.beta_tilde) + _dx(self.beta_tilde),
                         compose_coeffs(hc, self.beta_tilde, real), real)
        if variant == "inverse_transpose":
            return _prod(1.0 * _unit(self.beta) + _dx(self.beta),
                         compose_coeffs(hc, self.beta, real), real)
        raise ValueError(f"unknown variant {variant}")

    def B(self, hc, variant="plain", carrier=None):
        return apply_B(hc, self.psi, variant, self.grid, self.psi_inv, carrier)

    def M(self, hc, inverse=False):
        hc = np.asarray(hc)
        q = _pointwise(lambda v: 1.0 / v, self.q) if inverse else self.q
        return _prod(q, hc, _is_real_array(hc))

    def T(self, hc, inverse=False):
        return translate(hc, self.p, inverse)

    def S(self, hc, inverse=False, transpose=False):
        if self.correction is None:
            return np.asarray(hc)
        return self.correction.apply_S(hc, inverse=inverse, transpose=transpose)

    def W(self, hc, inverse=False):
        """W = M T S and its inverse."""
        if inverse:
            return self.S(self.T(self.M(hc, True), True), inverse=True)
        return self.M(self.T(self.S(hc)))

    def rho_mul(self, hc, power=1):
        return hc * (self.rho ** power)[:, None]

    def apply_R(self, hc):
        if self.correction is None:
            return np.zeros_like(hc)
        return self.correction.apply_R(hc)

    def remainder_matrices(self):
        if self.correction is None:
            d = 2 * self.n_max + 1
            return np.zeros((self.grid.n_steps + 1, d, d), dtype=complex)
        return self.correction.matrices(self.n_max)

    # the operators L0..L5 on smooth-in-time test functions ---------------------

    def operator_coefficients(self, level: int):
        """(c3, c2, c1, c0) with c3 possibly a per-node scalar."""
        L = self.ladder
        if level == 0:
            c = self.coeffs
            one = _unit(c.a3.coeffs)
            return one + c.a3.coeffs, c.a2.coeffs, c.a1.coeffs, c.a0.coeffs
        if level == 1:
            return self.b, L["a5"], L["a6"], L["a7"]
        if level == 2:
            return self.m, L["a8"], L["a9"], L["a10"]
        if level == 3:
            return self.m, None, L["a12"], L["a13"]
        if level == 4:
            return self.m, None, L["a14"], L["a15"]
        raise ValueError("level 5 has a nonlocal remainder; use apply_L")

    def apply_L(self, level: int, hc, ht=None):
        hc = np.asarray(hc)
        ht = time_derivative(hc, self.grid.dt) if ht is None else ht
        real = _is_real_array(hc)
        if level == 5:
            return ht + self.m * _dx(hc, 3) + self.apply_R(hc)
        c3, c2, c1, c0 = self.operator_coefficients(level)
        out = ht.astype(complex)
        for c, order in ((c3, 3), (c2, 2), (c1, 1), (c0, 0)):
            if c is None:
                continue
            if np.ndim(c) == 0:
                out = out + c * _dx(hc, order)
            elif np.ndim(c) == 1:
                out = out + c[:, None] * _dx(hc, order)
            else:
                out = out + _prod(c, _dx(hc, order), real)
        return out

    def zero_mean_defects(self):
        L = self.ladder
        return {k: float(np.max(np.abs(_mean(L[k])))) for k in ("a5", "a8", "a14")}

    def summary(self):
        return {"m": self.m, "sup_beta": float(np.max(np.abs(to_grid_real(self.beta)))),
                "sup_gamma": float(np.max(np.abs(to_grid_real(self.gamma)))),
                "min_q": float(np.min(to_grid_real(self.q))),
                "max_abs_p": float(np.max(np.abs(self.p))),
                **{f"mean_{k}": v for k, v in self.zero_mean_defects().items()}}

    def fields(self):
        """Every coefficient field as a SpaceTimeField, for dumping."""
        out = {}
        g = self.grid
        for name in ("beta", "beta_tilde", "q", "gamma"):
            out[name] = SpaceTimeField(g, hermitian_part(getattr(self, name)))
        for name in ("b", "psi", "psi_inv", "rho", "p", "p_dot"):
            out[name] = SpaceTimeField.from_scalar(g, np.real(getattr(self, name)))
        for name, c in self.ladder.items():
            out[name] = SpaceTimeField(g, hermitian_part(np.asarray(c)))
        return out


def _unit(c):
    out = np.zeros_like(np.asarray(c), dtype=complex)
    out[..., n_max_of(out)] = 1.0
    return out


def build_chain(coeffs: LinearizedCoefficients,
                thresholds: ReductionThresholds = ReductionThresholds()) -> ReductionChain:
    grid = coeffs.grid
    n = coeffs.n_max
    a0, a1, a2, a3 = (coeffs.a0.coeffs, coeffs.a1.coeffs, coeffs.a2.coeffs, coeffs.a3.coeffs)
    k = grid_size(n)

    beta, beta_tilde, b = step1_space_diffeo(a3, thresholds)
    bx, bxx, bxxx = (to_grid_real(_dx(beta, j), k) for j in (1, 2, 3))
    bt = to_grid_real(time_derivative(beta, grid.dt), k)
    A3, A2, A1 = (to_grid_real(c, k) for c in (a3, a2, a1))
    pre5 = from_grid_real(A2 * (1 + bx) ** 2 + 3 * (1 + A3) * bxx * (1 + bx), n)
    pre6 = from_grid_real(bt + (1 + A3) * bxxx + A2 * bxx + A1 * (1 + bx), n)
    a5 = compose_coeffs(pre5, beta_tilde)
    a6 = compose_coeffs(pre6, beta_tilde)
    a7 = compose_coeffs(a0, beta_tilde)

    m, psi, psi_inv, rho = step2_time_reparam(b, grid)
    inv = lambda c: lagrange_interp(c, grid.dt, psi_inv) / rho[:, None]
    a8, a9, a10 = inv(a5), inv(a6), inv(a7)

    q = step3_multiplication(a8, m)
    qy, qyy, qyyy = _dx(q), _dx(q, 2), _dx(q, 3)
    qt = time_derivative(q, grid.dt)
    Q = to_grid_real(q, k)
    G = lambda c: to_grid_real(c, k)
    a12 = from_grid_real(G(a9) + (2 * G(a8) * G(qy) + 3 * m * G(qyy)) / Q, n)
    a13 = from_grid_real((G(qt) + m * G(qyyy) + G(a8) * G(qyy) + G(a9) * G(qy) + G(a10) * Q) / Q, n)

    p, p_dot = step4_translation(a12, grid)
    a14 = translate(a12, p, inverse=True)
    a14[:, n] += p_dot
    a15 = translate(a13, p, inverse=True)
    a14, a15 = hermitian_part(a14), hermitian_part(a15)

    gamma, corr = step5_order_one(a14, a15, m, grid, thresholds)
    ladder = {"a5": a5, "a6": a6, "a7": a7, "a8": a8, "a9": a9, "a10": a10,
              "a12": a12, "a13": a13, "a14": a14, "a15": a15,
              "a16": 3 * m * _dx(gamma) + a14, "a17": corr.c17, "a18": corr.a18}
    return ReductionChain(grid, n, coeffs, beta, beta_tilde, np.asarray(b, float), m, psi,
                          psi_inv, rho, q, p, p_dot, gamma, ladder, corr)


def trivial_chain(grid: TimeGrid, n_max: int) -> ReductionChain:
    return build_chain(LinearizedCoefficients.zeros(grid, n_max))


def adjoint_coefficients(coeffs: LinearizedCoefficients) -> LinearizedCoefficients:
    """Coefficients of -L0^*, which is again of the form of L0."""
    a0, a1, a2, a3 = (coeffs.a0.coeffs, coeffs.a1.coeffs, coeffs.a2.coeffs, coeffs.a3.coeffs)
    s3 = a3
    s2 = 3 * _dx(a3) - a2
    s1 = 3 * _dx(a3, 2) - 2 * _dx(a2) + a1
    s0 = _dx(a3, 3) - _dx(a2, 2) + _dx(a1) - a0
    w = lambda c: coeffs.a3.with_coeffs(c)
    return LinearizedCoefficients(w(s0), w(s1), w(s2), w(s3))


def conjugation_residual(chain: ReductionChain, hc) -> float:
    """||rho^{-1} W^{-1} B^{-1} A^{-1} L0 A B W h - L5 h||_{T,0} for a trajectory h
    that is smooth in time."""
    hc = np.asarray(hc)
    Y = chain.A(chain.B(chain.W(hc)))
    back = chain.W(chain.B(chain.A(chain.apply_L(0, Y), "inverse"), "inverse"), inverse=True)
    r = chain.rho_mul(back, -1) - chain.apply_L(5, hc)
    return float(np.max(np.sqrt(np.sum(np.abs(r) ** 2, axis=-1))))


def random_trajectory(rng, grid: TimeGrid, n_max: int, amp: float, n_modes: int = 3) -> np.ndarray:
    """Real trajectory with a few low modes, smooth (trigonometric) in time,
    scaled so that its sup over (t, x) is ``amp``."""
    t = grid.nodes
    c = np.zeros((t.size, 2 * n_max + 1), dtype=complex)
    for j in range(1, min(n_modes, n_max) + 1):
        a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        w, ph = rng.uniform(0.5, 3.0), rng.uniform(0.0, 6.0)
        c[:, n_max + j] = (a + b * np.sin(w * t + ph)) / j ** 3
    c[:, n_max] = rng.standard_normal() * np.cos(t)
    c = hermitian_part(c)
    peak = float(np.max(np.abs(to_grid_real(c))))
    return c * (amp / peak) if peak > 0 else c


def random_coefficients(rng, grid: TimeGrid, n_max: int, amp: float) -> LinearizedCoefficients:
    """Random coefficients satisfying the Hamiltonian relation a2 = 2 d_x a3."""
    a3 = random_trajectory(rng, grid, n_max, amp)
    a1 = random_trajectory(rng, grid, n_max, amp)
    a0 = random_trajectory(rng, grid, n_max, amp)
    w = lambda c: SpaceTimeField(grid, c)
    return LinearizedCoefficients(w(a0), w(a1), w(2 * _dx(a3)), w(a3))
