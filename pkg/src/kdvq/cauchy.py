"""Forward and backward solvers for d/dt + m d^3 + R and, through the
reduction chain, for L0..L4 and their adjoints.

Everything is done on mode vectors.  With D = m d^3 the free flow is
e^{-tD} = diag(e^{i m n^3 t}) and the mild form of

    v_t + D v + X(t) v = f + K(t) z,        v(0) = alpha

is integrated step by step.  On each step the slowly varying profile of the
integrand is replaced by its cubic interpolant through four nodes and the
oscillatory factor is integrated exactly (Filon weights).  Terms acting on a
trajectory that itself carries the free oscillation (X v and K z) use pair
weights indexed by the output mode n and the input mode k, so the phase
e^{i m k^3 t} of the input is also integrated exactly.  The implicit X v term
is resolved by Picard iteration on sub-intervals of length about 1/(2|X|).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import SolverStagnationError
from .spectral import (PeriodicField, SpaceTimeField, TimeGrid, hermitian_defect,
                       hermitian_part, modes, n_max_of)
from .timeops import STENCIL_OFFSETS, filon_weights, step_cases

PICARD_TOL = 1e-13
PICARD_MAX_ITER = 60


@lru_cache(maxsize=32)
def _kernel(m: float, dt: float, n_max: int):
    return PairKernel(m, dt, n_max)


class PairKernel:
    """Step weights for one (m, dt, N_max)."""

    def __init__(self, m, dt, n_max):
        self.m, self.dt, self.n_max = float(m), float(dt), int(n_max)
        n = modes(n_max).astype(float)
        self.omega = self.m * n ** 3
        self.E = np.exp(1j * self.omega * dt)
        self.mode_w = np.stack([dt * filon_weights(self.omega * dt, o) for o in STENCIL_OFFSETS])
        z = (self.omega[:, None] - self.omega[None, :]) * dt
        pair = []
        for offs in STENCIL_OFFSETS:
            w = dt * filon_weights(z, offs)
            shift = np.exp(1j * self.omega[None, None, :] * dt * (1 - np.asarray(offs, float))[:, None, None])
            pair.append(w * shift)
        self.pair_w = np.stack(pair)

    def mode_weights_carrier(self, nu):
        """Per-mode weights for forcing that oscillates like e^{i nu_n t}."""
        nu = np.asarray(nu, dtype=float)
        z = (self.omega - nu) * self.dt
        out = []
        for offs in STENCIL_OFFSETS:
            w = self.dt * filon_weights(z, offs)
            out.append(w * np.exp(1j * nu[None, :] * self.dt * (1 - np.asarray(offs, float))[:, None]))
        return np.stack(out)


def kernel(m, dt, n_max) -> PairKernel:
    return _kernel(float(m), float(dt), int(n_max))


def _expand(a, batch):
    return a if not batch else a[..., None]


class PairOperator:
    """A matrix stack X(t_j) with the interior pair weights folded in."""

    def __init__(self, kern: PairKernel, X: np.ndarray):
        self.kern = kern
        self.X = np.asarray(X, dtype=complex)
        self._interior = None
        self._norm = None

    @property
    def interior(self):
        """Stacks w_i X for the centred (interior) stencil at every node."""
        if self._interior is None:
            w = self.kern.pair_w[1]
            self._interior = np.stack([w[i][None] * self.X for i in range(4)])
        return self._interior

    def step_integrals(self, z, a, b, predict=True):
        """Pair-weighted step integrals of X z over global steps a..b-1.

        Stencils follow ``block_cases``: centred in the interior of [0, T],
        one-sided at t = 0, t = T and on a trailing prediction step.
        """
        batch = z.ndim == 3
        out = np.zeros((b - a,) + z.shape[1:], dtype=complex)
        mm = (lambda A, v: np.matmul(A, v)) if batch else (lambda A, v: np.matmul(A, v[..., None])[..., 0])
        case, start = block_cases(self.X.shape[0] - 1, a, b, predict)
        for c in range(3):
            sel = np.nonzero(case == c)[0]
            if sel.size == 0:
                continue
            if c == 1:
                H = self.interior
                for i in range(4):
                    out[sel] += mm(H[i][start[sel] + i], z[start[sel] + i])
                continue
            w = self.kern.pair_w[c]
            for i in range(4):
                out[sel] += mm(w[i][None] * self.X[start[sel] + i], z[start[sel] + i])
        return out

    def norm_estimate(self, iters=20, seed=0):
        """Power-iteration estimate of max_j |X(t_j)| on l^2 (cached)."""
        if self._norm is not None:
            return self._norm
        X = self.X
        if not np.any(X):
            self._norm = 0.0
            return 0.0
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(X.shape[:2]) + 1j * rng.standard_normal(X.shape[:2])
        est = np.zeros(X.shape[0])
        for _ in range(iters):
            w = np.einsum("jnk,jk->jn", X, v)
            w = np.einsum("jkn,jk->jn", np.conj(X), w)
            nrm = np.linalg.norm(w, axis=1)
            est = np.sqrt(nrm / np.maximum(np.linalg.norm(v, axis=1), 1e-300))
            v = w / np.maximum(nrm, 1e-300)[:, None]
        self._norm = float(np.max(est))
        return self._norm


def block_cases(n_steps, a, b, predict=True):
    """Stencil case and start node for global steps a..b-1.

    Cases are those of the whole grid.  With ``predict`` and b < n_steps the
    last step is a prediction step and uses the one-sided rule (nodes
    b-3..b), so nothing beyond node b is read.
    """
    case, start = step_cases(n_steps)
    case, start = case[a:b].copy(), start[a:b].copy()
    if predict and b < n_steps:
        case[-1] = 2
        start[-1] = b - 3
    return case, start


def _mode_step_integrals(kern: PairKernel, f, a, b, weights=None, predict=True):
    """Per-mode Filon step integrals of a known forcing on global steps a..b-1."""
    W = kern.mode_w if weights is None else weights
    batch = f.ndim == 3
    case, start = block_cases(f.shape[0] - 1, a, b, predict)
    out = np.zeros((b - a,) + f.shape[1:], dtype=complex)
    for c in range(3):
        sel = np.nonzero(case == c)[0]
        if sel.size == 0:
            continue
        for i in range(4):
            out[sel] += _expand(W[c, i], batch)[None] * f[start[sel] + i]
    return out


def _march(kern, v0, I, batch):
    """v_j = e^{i w tau_j}[v0 + sum_{k<j} e^{-i w tau_{k+1}} I_k] on one block."""
    L = I.shape[0]
    tau = np.arange(L + 1) * kern.dt
    ph = np.exp(1j * np.outer(tau, kern.omega))
    if batch:
        ph = ph[..., None]
    acc = np.zeros((L + 1,) + I.shape[1:], dtype=complex)
    acc[0] = v0
    acc[1:] = v0[None] + np.cumsum(np.conj(ph[1:]) * I, axis=0)
    return ph * acc


@dataclass
class SolveStats:
    sub_intervals: int = 0
    picard_iterations: int = 0
    norm_estimate: float = 0.0
    splits: int = 0
    sweeps: int = 0


def solve_forward(m, grid: TimeGrid, alpha, forcing=None, X=None, pair_forcing=(),
                  carrier_forcing=(), tol=PICARD_TOL, max_iter=PICARD_MAX_ITER,
                  initial_guess=None, stats: Optional[SolveStats] = None):
    """Mild solution of v_t + m v_xxx + X v = forcing + sum K z, v(0) = alpha.

    alpha has shape (d,) or (d, B); forcing (M+1, d[, B]) is interpolated per
    mode; X, K are (M+1, d, d) stacks or PairOperator instances; each pair
    forcing (K, z) has z carrying the free oscillation of the same m.
    ``carrier_forcing`` holds (nu, g) with g_n oscillating like e^{i nu_n t}.
    """
    alpha = np.asarray(alpha, dtype=complex)
    d = alpha.shape[0]
    n_max = n_max_of(np.empty(d))
    batch = alpha.ndim == 2
    M = grid.n_steps
    kern = kernel(m, grid.dt, n_max)
    stats = stats if stats is not None else SolveStats()

    # forcing contributions do not depend on v; computed per block
    Xop = None
    if X is not None:
        Xop = X if isinstance(X, PairOperator) else PairOperator(kern, X)
    pairs = [(K if isinstance(K, PairOperator) else PairOperator(kern, K), np.asarray(z, complex))
             for K, z in pair_forcing]
    cars = [(kern.mode_weights_carrier(nu), np.asarray(g, complex)) for nu, g in carrier_forcing]
    if forcing is not None:
        forcing = np.asarray(forcing, dtype=complex)

    def fixed(a, b, predict=True):
        I = np.zeros((b - a,) + alpha.shape, dtype=complex)
        if forcing is not None:
            I += _mode_step_integrals(kern, forcing, a, b, None, predict)
        for W, g in cars:
            I += _mode_step_integrals(kern, g, a, b, W, predict)
        for K, z in pairs:
            I += K.step_integrals(z, a, b, predict)
        return I

    v = np.zeros((M + 1,) + alpha.shape, dtype=complex)
    v[0] = alpha
    if Xop is None:
        stats.sub_intervals = 1
        return _march(kern, alpha, fixed(0, M), batch)

    est = Xop.norm_estimate()
    stats.norm_estimate = est
    n_sub = max(1, int(np.ceil(2 * grid.T * est)))
    n_sub = min(n_sub, max(1, M // 3))
    bounds = list(np.round(np.linspace(0, M, n_sub + 1)).astype(int))
    blocks = list(zip(bounds[:-1], bounds[1:]))
    guess = None if initial_guess is None else np.asarray(initial_guess, complex)

    def picard(a, b, start_guess, predict):
        """Converge the block a..b; without ``predict`` node b+1 is read as data."""
        I0 = fixed(a, b, predict)
        block = _march(kern, v[a], I0, batch) if start_guess is None else start_guess
        block[0] = v[a]
        prev = np.inf
        for it in range(max_iter):
            v[a:b + 1] = block
            new = _march(kern, v[a], I0 - Xop.step_integrals(v, a, b, predict), batch)
            diff = float(np.max(np.abs(new - block)))
            scale = max(float(np.max(np.abs(new))), 1e-300)
            block = new
            stats.picard_iterations += 1
            if diff <= tol * scale or (diff >= prev and diff <= 1e-10 * scale):
                return block
            if it > 3 and diff > 0.9 * prev:
                return None
            prev = diff
        return None

    # The first sweep solves each block with one trailing prediction step;
    # later sweeps re-solve the blocks reading the look-ahead node from the
    # neighbour, until the whole trajectory satisfies the global (centred)
    # scheme independently of the block partition.
    sweep = 0
    prev_change = np.inf
    while True:
        change = 0.0
        done = []
        queue = list(blocks)
        while queue:
            a, b = queue.pop(0)
            be = min(b + 1, M) if sweep == 0 else b
            if sweep > 0:
                start_guess = v[a:be + 1].copy()
            elif guess is not None:
                start_guess = guess[a:be + 1].copy()
            else:
                start_guess = None
            old = v[a:b + 1].copy()
            block = picard(a, be, start_guess, sweep == 0)
            if block is None:
                if b - a >= 6:
                    mid = (a + b) // 2
                    queue[:0] = [(a, mid), (mid, b)]
                    stats.splits += 1
                    continue
                raise SolverStagnationError("Picard iteration stagnated on a minimal sub-interval",
                                            block=(a, b), norm=est)
            v[a:be + 1] = block
            if sweep > 0:
                change = max(change, float(np.max(np.abs(block[:b - a + 1] - old))))
            done.append((a, b))
        blocks = done
        stats.sub_intervals = len(blocks)
        scale = max(float(np.max(np.abs(v))), 1e-300)
        if len(blocks) == 1 or (sweep > 0 and (change <= max(tol, 1e-12) * scale or
                                                (change >= prev_change and change <= 1e-10 * scale))):
            break
        if sweep > 0:
            prev_change = change
        sweep += 1
        if sweep > 20:
            raise SolverStagnationError("look-ahead sweeps did not settle", change=change)
    stats.sweeps = sweep
    return v


def solve_backward(m, grid, alpha_T, forcing=None, X=None, pair_forcing=(), carrier_forcing=(), **kw):
    """Same equation with the datum prescribed at t = T (time reversal)."""
    rev = lambda a: None if a is None else np.asarray(a)[::-1]
    Xr = None
    if X is not None:
        Xr = -(X.X if isinstance(X, PairOperator) else np.asarray(X))[::-1]
    pf = [(-(K.X if isinstance(K, PairOperator) else np.asarray(K))[::-1], rev(z)) for K, z in pair_forcing]
    cf = [(-np.asarray(nu), -rev(g)) for nu, g in carrier_forcing]
    f = None if forcing is None else -rev(forcing)
    out = solve_forward(-m, grid, alpha_T, f, Xr, pf, cf, **kw)
    return out[::-1]


# spec-level entry points ----------------------------------------------------

def airy_duhamel(f: SpaceTimeField, m: float = 1.0) -> SpaceTimeField:
    """(A f)_n(t) = int_0^t e^{i m n^3 (t - tau)} f_n(tau) dtau."""
    d = f.coeffs.shape[1]
    v = solve_forward(m, f.grid, np.zeros(d, complex), forcing=f.coeffs)
    return _wrap(f.grid, v, f.is_real)


def pair_duhamel(X, z: np.ndarray, m: float, grid: TimeGrid) -> np.ndarray:
    """int_0^t e^{-(t - tau) D} X(tau) z(tau) dtau with pair weights."""
    z = np.asarray(z, dtype=complex)
    return solve_forward(m, grid, np.zeros(z.shape[1:], complex), pair_forcing=[(X, z)])


def free_flow(alpha, m, grid: TimeGrid):
    """e^{-tD} alpha at every node."""
    alpha = np.asarray(alpha, dtype=complex)
    om = m * modes(n_max_of(np.empty(alpha.shape[0]))).astype(float) ** 3
    ph = np.exp(1j * np.outer(grid.nodes, om))
    return ph * alpha[None] if alpha.ndim == 1 else ph[..., None] * alpha[None]


def _wrap(grid, v, real):
    if real and hermitian_defect(v) < 1e-9:
        return SpaceTimeField(grid, hermitian_part(v))
    return SpaceTimeField(grid, v, is_real=False)


def remainder_stack(R, grid: TimeGrid, n_max: int):
    """Normalize the accepted remainder descriptions to an (M+1, d, d) stack."""
    d = 2 * n_max + 1
    if R is None:
        return None
    if isinstance(R, PairOperator):
        return R.X
    if np.isscalar(R):
        return np.broadcast_to(R * np.eye(d), (grid.n_steps + 1, d, d)).astype(complex)
    if hasattr(R, "remainder_matrices"):
        return R.remainder_matrices()
    if hasattr(R, "matrices"):
        return R.matrices(n_max)
    R = np.asarray(R, dtype=complex)
    if R.ndim == 2:
        return np.broadcast_to(R, (grid.n_steps + 1, d, d))
    return R


def multiplication_remainder(a: SpaceTimeField, n_max: Optional[int] = None):
    """Matrix stack of h -> a h (dealiased product)."""
    from .reduction import toeplitz_stack
    return toeplitz_stack(a.coeffs, n_max if n_max is not None else a.n_max)


def solve_L5(alpha: PeriodicField, f: Optional[SpaceTimeField], m: float, R=None,
             grid: Optional[TimeGrid] = None, backward=False, stats=None) -> SpaceTimeField:
    """u_t + m u_xxx + R u = f with u(0) = alpha (or u(T) = alpha if backward)."""
    grid = grid if grid is not None else f.grid
    n = alpha.n_max
    X = remainder_stack(R, grid, n)
    fc = None if f is None else f.coeffs
    solver = solve_backward if backward else solve_forward
    v = solver(m, grid, alpha.coeffs, fc, X, stats=stats)
    real = alpha.is_real and (f is None or f.is_real) and (X is None or _real_stack(X))
    return _wrap(grid, v, real)


def _real_stack(X):
    """A mode matrix maps real fields to real fields iff X[-n,-k] = conj X[n,k]."""
    X = np.asarray(X)
    return np.allclose(X, np.conj(X[:, ::-1, ::-1]), atol=1e-13 * (1 + np.max(np.abs(X))))


# the chain route ---------------------------------------------------------------

@dataclass
class CauchyProblem:
    tag: str                                  # "L0".."L5" or "L0*".."L5*"
    datum: PeriodicField
    forcing: Optional[SpaceTimeField] = None
    chain: object = None
    direction: str = "forward"
    m: float = 1.0
    R: object = None
    grid: Optional[TimeGrid] = None
    forcing_carrier: Optional[float] = None

    @property
    def level(self):
        return int(self.tag[1])

    @property
    def adjoint(self):
        return self.tag.endswith("*")


def _W_at(chain, hc, q, p, gamma, mode):
    """Apply M T S (or related products) with data sampled at arbitrary times.

    mode: "W", "W_inv", "W_T", "W_inv_T".
    """
    from .reduction import OrderOneCorrection, _pointwise, _prod, translate
    corr = OrderOneCorrection(gamma, None, None, None)
    real = hermitian_defect(hc) < 1e-12
    qi = lambda: _pointwise(lambda v: 1.0 / v, q)
    if mode == "W":
        return _prod(q, translate(corr.apply_S(hc), p), real)
    if mode == "W_inv":
        return corr.apply_S(translate(_prod(qi(), hc, real), p, True), inverse=True)
    if mode == "W_T":        # S^T T^{-1} M
        return corr.apply_S(translate(_prod(q, hc, real), p, True), transpose=True)
    if mode == "W_inv_T":    # M^{-1} T S^{-T}
        return _prod(qi(), translate(corr.apply_S(hc, inverse=True, transpose=True), p), real)
    raise ValueError(mode)


def _sampled_data(chain, times):
    from .timeops import lagrange_interp
    dt = chain.grid.dt
    q = lagrange_interp(chain.q, dt, times)
    p = lagrange_interp(chain.p, dt, times)
    g = lagrange_interp(chain.gamma, dt, times)
    return hermitian_part(q), p.real, hermitian_part(g)


def lift(chain, ut, level, adjoint=False):
    """Map an L5 (or L5*) trajectory back to level-``level`` variables.

    Below level 2 the reduced trajectory is resampled at psi(t) with the free
    carrier removed and W is applied with data sampled at psi(t), so no
    dispersive trajectory is ever interpolated in time after mixing.
    """
    if level >= 2:
        hc = ut
        if level <= 4:
            hc = chain.S(hc, inverse=adjoint, transpose=adjoint)
        if level <= 3:
            hc = chain.T(hc)
        if level <= 2:
            hc = chain.M(hc, inverse=adjoint)
        return hc
    from .reduction import resample
    times = chain.psi
    us = resample(ut, chain.grid.dt, times, carrier=chain.m)
    q, p, g = _sampled_data(chain, times)
    hc = _W_at(chain, us, q, p, g, "W_inv_T" if adjoint else "W")
    if level == 0:
        hc = chain.A(hc, "inverse_transpose" if adjoint else "plain")
    return hc


def descend_forcing(chain, fc, level, adjoint=False, carrier=None):
    """Forcing of the reduced problem."""
    if level >= 2:
        hc = fc
        if level <= 2:
            hc = chain.M(hc, inverse=not adjoint)
        if level <= 3:
            hc = chain.T(hc, inverse=True)
        if level <= 4:
            hc = chain.S(hc, inverse=not adjoint, transpose=adjoint)
        return hc
    hc = fc
    if level == 0:
        hc = chain.A(hc, "transpose" if adjoint else "inverse")
    hc = chain.B(hc, "inverse", carrier=carrier)
    hc = chain.rho_mul(hc, -1)
    return chain.W(hc, inverse=True) if not adjoint else _W_at(chain, hc, chain.q, chain.p, chain.gamma, "W_T")


def descend_datum(chain, ac, level, at_end, adjoint=False):
    """Reduced datum at t = 0 (or T); psi fixes both endpoints."""
    j = -1 if at_end else 0
    q, p, g = chain.q[j:j + 1 or None], chain.p[j:j + 1 or None], chain.gamma[j:j + 1 or None]
    hc = np.asarray(ac)[None]
    if level == 0:
        from .spectral import compose_coeffs
        from .reduction import _prod, _unit, _dx
        bt = chain.beta_tilde[j:j + 1 or None]
        real = hermitian_defect(hc) < 1e-12
        hc = compose_coeffs(hc, bt, real)
        if adjoint:
            hc = _prod(_unit(bt) + _dx(bt), hc, real)
    if level <= 2:
        hc = _W_at(chain, hc, q, p, g, "W_T" if adjoint else "W_inv")
    elif level == 3:
        from .reduction import OrderOneCorrection, translate
        corr = OrderOneCorrection(g, None, None, None)
        hc = corr.apply_S(translate(hc, p, True), inverse=not adjoint, transpose=adjoint)
    elif level == 4:
        from .reduction import OrderOneCorrection
        corr = OrderOneCorrection(g, None, None, None)
        hc = corr.apply_S(hc, inverse=not adjoint, transpose=adjoint)
    return hc[0]


def solve(problem: CauchyProblem, stats: Optional[SolveStats] = None) -> SpaceTimeField:
    """Solve L_i u = f (or L_i^* u = f) forward or backward in time."""
    chain = problem.chain
    backward = problem.direction == "backward"
    level, adj = problem.level, problem.adjoint
    if chain is None:
        if level != 5:
            raise ValueError("a reduction chain is required below L5")
        grid = problem.grid or problem.forcing.grid
        X = remainder_stack(problem.R, grid, problem.datum.n_max)
        fc = None if problem.forcing is None else problem.forcing.coeffs
        m = problem.m
    else:
        grid = chain.grid
        m = chain.m
        X = chain.remainder_matrices()
        fc = None if problem.forcing is None else problem.forcing.coeffs
    ac = problem.datum.coeffs
    if chain is not None and level < 5:
        if fc is not None:
            fc = descend_forcing(chain, fc, level, adj, problem.forcing_carrier)
        ac = descend_datum(chain, ac, level, backward, adj)
    if adj:
        # L5^* v = f  <=>  v_t + m v_xxx - R^H v = -f
        X = None if X is None else -np.conj(np.swapaxes(X, 1, 2))
        fc = None if fc is None else -fc
    solver = solve_backward if backward else solve_forward
    ut = solver(m, grid, ac, fc, X, stats=stats)
    if chain is not None and level < 5:
        ut = lift(chain, ut, level, adj)
    real = problem.datum.is_real and (problem.forcing is None or problem.forcing.is_real)
    return _wrap(grid, ut, real)
