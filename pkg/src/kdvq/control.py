"""Observability diagnostics and HUM control synthesis.

Controls act through a smooth cutoff chi supported in a window made of arcs.
The Gramian is assembled in the reduced variables of the chain, where the
adjoint flow is v_t + m v_xxx - R^H v = 0 and the control enters through

    K(tau) = S^{-1} zeta S^{-T},
    zeta   = rho^{-1} T^{-1}[ q^{-2} B^{-1} A^{-1}((1 + beta_x) chi) ],

a Hermitian positive semidefinite mode matrix at every node.  Conjugating
chi A^{-T} B W^{-T} back through A B W gives exactly this, so the reduced
Gramian is the original one up to the fixed change of variables at t = T.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .cauchy import (CauchyProblem, PairOperator, descend_datum, kernel, lift,
                     remainder_stack, solve, solve_backward, solve_forward)
from .errors import ConfigError, ObservabilityError
from .nonlinearity import LinearizedCoefficients, coefficients_coeffs
from .reduction import (ReductionThresholds, _dx, _pointwise, _prod, _unit,
                        build_chain, resample, toeplitz_stack, translate,
                        trivial_chain)
from .spectral import (PeriodicField, SpaceTimeField, TimeGrid, bracket,
                       compose_coeffs, from_grid_real, grid_nodes,
                       hermitian_defect, hermitian_part, modes, multiply,
                       n_max_of, resize, smooth_step, sobolev_norm,
                       sobolev_norms, traj_norm)
from .timeops import STENCIL_OFFSETS, filon_weights, step_cases, time_derivative

TWO_PI = 2.0 * np.pi


# window and cutoff ------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    """A finite union of disjoint arcs [a, b] with 0 <= a < b <= 2 pi."""

    arcs: tuple

    def __post_init__(self):
        try:
            arcs = tuple(sorted((float(a), float(b)) for a, b in self.arcs))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed arcs {self.arcs!r}") from exc
        if not arcs:
            raise ConfigError("window needs at least one arc")
        for a, b in arcs:
            if not (0.0 <= a < TWO_PI and a < b <= TWO_PI):
                raise ConfigError(f"arc ({a}, {b}) must satisfy 0 <= a < b <= 2 pi", arc=(a, b))
        for (a0, b0), (a1, b1) in zip(arcs, arcs[1:]):
            if a1 < b0:
                raise ConfigError("arcs overlap", arcs=arcs)
        object.__setattr__(self, "arcs", arcs)

    @classmethod
    def arc(cls, start: float, length: float):
        return cls(((start, start + length),))

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.arcs))

    def indicator(self, x):
        x = np.mod(np.asarray(x, dtype=float), TWO_PI)
        out = np.zeros(x.shape)
        for a, b in self.arcs:
            out[(x >= a) & (x <= b)] = 1.0
        return out

    def integrals(self, j):
        """I(j) = int_omega e^{i j x} dx."""
        j = np.asarray(j, dtype=float)
        out = np.zeros(j.shape, dtype=complex)
        nz = j != 0
        for a, b in self.arcs:
            out[~nz] += b - a
            out[nz] += (np.exp(1j * j[nz] * b) - np.exp(1j * j[nz] * a)) / (1j * j[nz])
        return out


@lru_cache(maxsize=64)
def _cutoff_coeffs(arcs, n_max, k):
    c = Cutoff(Window(arcs))
    return from_grid_real(c.values(grid_nodes(k)), n_max)


@dataclass(frozen=True)
class Cutoff:
    """chi = product of smooth steps on each arc; transition a quarter of the
    arc on each side, so chi = 1 on the middle half and 0 outside the arc."""

    window: Window

    def values(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for a, b in self.window.arcs:
            L = b - a
            w = L / 4.0
            y = np.mod(x - a, TWO_PI)
            inside = y <= L
            val = smooth_step(y / w) * smooth_step((L - y) / w)
            out = out + np.where(inside, val, 0.0)
        return out

    def coeffs(self, n_max: int) -> np.ndarray:
        """Fourier coefficients up to n_max from a fine grid (aliasing negligible)."""
        k = max(1024, 16 * n_max)
        return _cutoff_coeffs(self.window.arcs, int(n_max), k)

    def field(self, n_max: int) -> PeriodicField:
        return PeriodicField(self.coeffs(n_max))

    def check(self, k: int = 4096) -> dict:
        x = grid_nodes(k)
        v = self.values(x)
        outside = self.window.indicator(x) == 0
        return {"min": float(v.min()), "max": float(v.max()),
                "max_outside": float(np.max(np.abs(v[outside]), initial=0.0)),
                "plateau_points": int(np.sum(v == 1.0))}


# Ingham finite sections ---------------------------------------------------------

def ingham_gram(mode_set: Sequence[int], m: float, T: float):
    """Gram matrix G_nk = int_0^T e^{i m (n^3 - k^3) t} dt and its smallest eigenvalue."""
    n = np.asarray(mode_set, dtype=float)
    x = m * (n[:, None] ** 3 - n[None, :] ** 3) * T
    G = T * np.exp(0.5j * x) * np.sinc(x / TWO_PI)
    lam = float(np.linalg.eigvalsh(G)[0])
    return G, lam


def cascade_constants(C1: float, window: Window) -> dict:
    """Reference thresholds of the observability cascade at zero coefficients."""
    C2 = C1 * window.measure
    C3 = C2 / 4.0
    return {"C1": C1, "C2": C2, "C3": C3, "C4": C3 / 16.0}


# quadratic forms integrated in time ------------------------------------------------

@lru_cache(maxsize=16)
def _quadratic_weights(m, dt, n_steps, n_max):
    n = modes(n_max).astype(float)
    om = m * n ** 3
    delta = om[None, :] - om[:, None]
    case, start = step_cases(n_steps)
    nodes = np.arange(n_steps + 1) * dt
    C = np.zeros((n_steps + 1, n.size, n.size), dtype=complex)
    for c, offs in enumerate(STENCIL_OFFSETS):
        sel = np.nonzero(case == c)[0]
        if sel.size == 0:
            continue
        W = dt * filon_weights(-delta * dt, offs)
        ph = np.exp(1j * delta[None] * nodes[sel + 1][:, None, None])
        for i in range(4):
            np.add.at(C, start[sel] + i, W[i][None] * ph)
    return C


def quadratic_time_integral(v, J, m: float, grid: TimeGrid):
    """int_0^T sum conj(v_n) J_nk v_k dt for trajectories carrying e^{i m n^3 t}.

    v has shape (M+1, d) or (M+1, d, B); the slowly varying profiles are
    interpolated by cubics and the pair phases integrated exactly.
    """
    v = np.asarray(v, dtype=complex)
    n_max = n_max_of(np.empty(v.shape[1]))
    C = _quadratic_weights(float(m), grid.dt, grid.n_steps, n_max) * J[None]
    om = m * modes(n_max).astype(float) ** 3
    ph = np.exp(-1j * np.outer(grid.nodes, om))
    w = v * (ph if v.ndim == 2 else ph[..., None])
    if v.ndim == 2:
        return float(np.real(np.einsum("jn,jnk,jk->", np.conj(w), C, w)))
    return np.real(np.einsum("jnb,jnk,jkb->b", np.conj(w), C, w))


def window_weight(window: Window, n_max: int, weight: str = "indicator"):
    n = modes(n_max)
    if weight == "indicator":
        return window.integrals(n[None, :] - n[:, None])
    if weight == "cutoff":
        return TWO_PI * toeplitz_stack(Cutoff(window).coeffs(2 * n_max), n_max)
    raise ValueError(f"unknown weight {weight!r}")


# backward solutions ------------------------------------------------------------------

def _carrier(level, chain, m):
    if chain is None:
        return m
    return 1.0 if level <= 1 else chain.m


def backward_solutions(op_tag: str, chain, VT, m: float = 1.0, R=None, grid=None):
    """Solutions with data VT (d, B) prescribed at t = T; returns (B, M+1, d)."""
    VT = np.asarray(VT, dtype=complex)
    level, adj = int(op_tag[1]), op_tag.endswith("*")
    if chain is None:
        if level != 5:
            raise ValueError("a reduction chain is required below L5")
        X = remainder_stack(R, grid, n_max_of(np.empty(VT.shape[0])))
        mm = m
    else:
        grid, mm = chain.grid, chain.m
        X = chain.remainder_matrices()
        if level < 5:
            VT = np.stack([descend_datum(chain, VT[:, b], level, True, adj) for b in range(VT.shape[1])], axis=1)
    if adj and X is not None:
        X = -np.conj(np.swapaxes(X, 1, 2))
    out = solve_backward(mm, grid, VT, X=X)
    out = np.moveaxis(out, 2, 0)
    if chain is not None and level < 5:
        out = np.stack([lift(chain, out[b], level, adj) for b in range(out.shape[0])])
    return out


def observability_ratio(op_tag: str, chain, vT, window: Window, weight="indicator",
                        m: float = 1.0, R=None, grid: Optional[TimeGrid] = None):
    """(int_0^T int_omega |v|^2 dx dt) / ||v_T||_0^2 for the backward solution.

    vT is a PeriodicField, a (d,) array or a (d, B) batch; returns a float or
    an array of ratios.
    """
    single = isinstance(vT, PeriodicField) or np.ndim(vT) == 1
    V = vT.coeffs if isinstance(vT, PeriodicField) else np.asarray(vT, dtype=complex)
    V = V[:, None] if V.ndim == 1 else V
    grid = chain.grid if chain is not None else grid
    level = int(op_tag[1])
    sols = backward_solutions(op_tag, chain, V, m, R, grid)
    n_max = n_max_of(np.empty(V.shape[0]))
    J = window_weight(window, n_max, weight)
    num = quadratic_time_integral(np.moveaxis(sols, 0, 2), J, _carrier(level, chain, m), grid)
    den = np.sum(np.abs(V) ** 2, axis=0)
    ratio = num / den
    return float(ratio[0]) if single else ratio


# the reduced Gramian ------------------------------------------------------------------

def control_density(chain, cutoff: Cutoff) -> np.ndarray:
    """zeta(tau, y) on 2N modes (see module docstring)."""
    N2 = 2 * chain.n_max
    steps = chain.grid.n_steps + 1
    chi = np.broadcast_to(cutoff.coeffs(N2), (steps, 2 * N2 + 1)).astype(complex)
    beta, beta_t = resize(chain.beta, N2), resize(chain.beta_tilde, N2)
    c = _prod(_unit(beta) + _dx(beta), chi)
    c = compose_coeffs(c, beta_t, True)
    c = resample(c, chain.grid.dt, chain.psi_inv)
    inv_q2 = _pointwise(lambda v: v ** -2.0, resize(chain.q, N2))
    c = _prod(inv_q2, c)
    c = translate(c, chain.p, inverse=True)
    return hermitian_part(c / chain.rho[:, None])


class ReducedGramian:
    """phi_T -> h(T) for L5 h = K phi, h(0) = 0, where L5^* phi = 0, phi(T) = phi_T."""

    def __init__(self, chain, cutoff: Cutoff):
        self.chain = chain
        self.cutoff = cutoff
        N = chain.n_max
        g = chain.grid
        d = 2 * N + 1
        n = modes(N)
        dinv = np.zeros(d, dtype=complex)
        dinv[n != 0] = 1.0 / (1j * n[n != 0])
        S = np.eye(d) + toeplitz_stack(chain.gamma, N) * dinv[None, None, :]
        Sinv = np.linalg.solve(S, np.broadcast_to(np.eye(d), S.shape))
        Z = toeplitz_stack(control_density(chain, cutoff), N)
        self.K = Sinv @ Z @ np.conj(np.swapaxes(Sinv, 1, 2))
        R = chain.remainder_matrices()
        self.has_R = bool(np.any(R))
        m = chain.m
        kf, kb = kernel(m, g.dt, N), kernel(-m, g.dt, N)
        self._Kop = PairOperator(kf, self.K)
        self._Rop = PairOperator(kf, R) if self.has_R else None
        # adjoint flow reversed in time: X_rev = -(-R^H)[::-1]
        self._Rback = PairOperator(kb, np.conj(np.swapaxes(R, 1, 2))[::-1].copy()) if self.has_R else None
        self.applications = 0

    @property
    def d(self):
        return 2 * self.chain.n_max + 1

    def adjoint_trajectory(self, a):
        g = self.chain.grid
        out = solve_forward(-self.chain.m, g, a, X=self._Rback)
        return out[::-1]

    def forward_response(self, phi):
        g = self.chain.grid
        z = np.zeros(phi.shape[1:], dtype=complex)
        return solve_forward(self.chain.m, g, z, X=self._Rop, pair_forcing=[(self._Kop, phi)])

    def apply(self, a):
        self.applications += 1
        return self.forward_response(self.adjoint_trajectory(a))[-1]

    def matrix(self):
        """Dense Gramian (d applications batched into one)."""
        return self.forward_response(self.adjoint_trajectory(np.eye(self.d, dtype=complex)))[-1]


# conjugate gradient ----------------------------------------------------------------------

@dataclass
class CGInfo:
    iterations: int
    converged: bool
    residuals: list
    ritz: np.ndarray
    applications: int

    @property
    def ritz_min(self):
        return float(self.ritz[0]) if self.ritz.size else float("nan")

    @property
    def ritz_max(self):
        return float(self.ritz[-1]) if self.ritz.size else float("nan")


def _ritz(alphas, betas):
    if not alphas:
        return np.zeros(0)
    a = np.asarray(alphas)
    b = np.asarray(betas)
    diag = 1.0 / a
    diag[1:] += b[:-1] / a[:-1]
    off = np.sqrt(np.maximum(b[:-1], 0.0)) / a[:-1]
    return eigh_tridiagonal(diag, off, eigvals_only=True)


def conjugate_gradient(apply, b, x0=None, rtol=1e-8, max_iter=500, atol=0.0):
    """CG for a Hermitian positive semidefinite operator; Ritz values from the
    Lanczos tridiagonal built out of the CG coefficients."""
    b = np.asarray(b, dtype=complex)
    bnorm = float(np.linalg.norm(b))
    target = max(rtol * bnorm, atol)
    calls = 0
    if x0 is None or not np.any(x0):
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.asarray(x0, dtype=complex).copy()
        r = b - apply(x)
        calls += 1
    p = r.copy()
    rs = float(np.real(np.vdot(r, r)))
    res = [np.sqrt(rs)]
    alphas, betas = [], []
    converged = np.sqrt(rs) <= target
    it = 0
    while not converged and it < max_iter:
        Ap = apply(p)
        calls += 1
        pAp = float(np.real(np.vdot(p, Ap)))
        if pAp <= 0.0:
            break
        alpha = rs / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rs_new = float(np.real(np.vdot(r, r)))
        beta = rs_new / rs
        alphas.append(alpha)
        betas.append(beta)
        p = r + beta * p
        rs = rs_new
        it += 1
        res.append(np.sqrt(rs))
        converged = np.sqrt(rs) <= target
    return x, CGInfo(it, bool(converged), res, _ritz(alphas, betas), calls)


# HUM ------------------------------------------------------------------------------------

@dataclass
class ControlProblem:
    T: float
    window: Window
    g2: PeriodicField
    g3: PeriodicField
    g1: Optional[SpaceTimeField] = None
    coeffs: Optional[LinearizedCoefficients] = None
    grid: Optional[TimeGrid] = None
    cutoff: Optional[Cutoff] = None

    def __post_init__(self):
        if self.grid is None:
            for src in (self.g1, self.coeffs):
                if src is not None:
                    self.grid = src.grid
                    break
        if self.grid is None:
            raise ConfigError("a time grid is required")
        if abs(self.grid.T - self.T) > 1e-12 * max(1.0, self.T):
            raise ConfigError("horizon T does not match the time grid")
        if self.g2.n_max != self.g3.n_max:
            raise ConfigError("g2 and g3 must share N_max")
        if self.cutoff is None:
            self.cutoff = Cutoff(self.window)

    @property
    def n_max(self):
        return self.g2.n_max

    def data_norm(self, s: float = 0.0) -> float:
        out = sobolev_norm(self.g2, s) + sobolev_norm(self.g3, s)
        if self.g1 is not None:
            out += traj_norm(self.g1, s)
        return out


@dataclass
class HumResult:
    phi: SpaceTimeField
    h: SpaceTimeField
    cg: CGInfo
    gramian_applications: int
    final_defect: float
    phi_T_reduced: np.ndarray
    cutoff: Cutoff
    wall_time: float = 0.0

    def __iter__(self):
        yield self.phi
        yield self.h

    def control_values(self, k: int = 256) -> np.ndarray:
        """chi(x) phi(t, x) on k uniform points: exactly zero outside the window."""
        return self.cutoff.values(grid_nodes(k))[None, :] * self.phi.values(k)

    def control_coeffs(self) -> np.ndarray:
        N = self.phi.n_max
        T = toeplitz_stack(self.cutoff.coeffs(2 * N), N)
        return np.einsum("nk,jk->jn", T, self.phi.coeffs)


def _field(grid, c, real):
    c = np.asarray(c)
    if real and hermitian_defect(c) < 1e-8 * max(1.0, float(np.max(np.abs(c), initial=0.0))):
        return SpaceTimeField(grid, hermitian_part(c))
    return SpaceTimeField(grid, c, is_real=False)


def _free_part(problem: ControlProblem, chain):
    d = 2 * problem.n_max + 1
    g = problem.grid
    if problem.g1 is None and not np.any(problem.g2.coeffs):
        return np.zeros((g.n_steps + 1, d), dtype=complex)
    return solve(CauchyProblem("L0", problem.g2, forcing=problem.g1, chain=chain)).coeffs


def hum_solve(problem: ControlProblem, chain=None, rtol: float = 1e-8, max_iter: int = 500,
              x0=None, h0=None, gramian: Optional[ReducedGramian] = None,
              thresholds: ReductionThresholds = ReductionThresholds()) -> HumResult:
    """Control phi (an adjoint solution) and state h with L0 h = g1 + chi phi,
    h(0) = g2, h(T) = g3.

    The free part h0 (no control) comes from the chain solver unless given;
    the control part solves the reduced Gramian system by CG.
    """
    t0 = time.perf_counter()
    grid = problem.grid
    N = problem.n_max
    if chain is None:
        chain = build_chain(problem.coeffs, thresholds) if problem.coeffs is not None else trivial_chain(grid, N)
    G = gramian if gramian is not None else ReducedGramian(chain, problem.cutoff)
    start_apps = G.applications
    h0 = _free_part(problem, chain) if h0 is None else np.asarray(h0, dtype=complex)
    lam = problem.g3.coeffs - h0[-1]
    lam_t = descend_datum(chain, lam, 0, True)
    x, info = conjugate_gradient(G.apply, lam_t, x0, rtol, max_iter)
    if not info.converged:
        raise ObservabilityError(
            f"CG did not converge in {info.iterations} iterations; smallest Ritz value {info.ritz_min:.3g}",
            ritz_min=info.ritz_min, ritz_max=info.ritz_max, iterations=info.iterations)
    real = problem.g2.is_real and problem.g3.is_real and (problem.g1 is None or problem.g1.is_real)
    if not np.any(x):
        phi_c = np.zeros_like(h0)
        h_c = h0
    else:
        phit = G.adjoint_trajectory(x)
        ht = G.forward_response(phit)
        phi_c = lift(chain, phit, 0, adjoint=True)
        h_c = h0 + lift(chain, ht, 0)
    phi = _field(grid, phi_c, real)
    h = _field(grid, h_c, real)
    defect = float(np.linalg.norm(h.coeffs[-1] - problem.g3.coeffs))
    bound = 10.0 * max(rtol * float(np.linalg.norm(lam)), 1e-14) + 1e-13
    if defect > bound:
        raise ObservabilityError(f"final-state defect {defect:.3g} above tolerance {bound:.3g}",
                                 defect=defect, bound=bound)
    return HumResult(phi, h, info, G.applications - start_apps, defect, x, problem.cutoff,
                     time.perf_counter() - t0)


# higher regularity ------------------------------------------------------------------------

def commutator_norms(s: float, n_values, a_coeffs=None):
    """||[Lambda^s, a] e^{inx}||_0 for a = cos x by default."""
    out = []
    for n in n_values:
        N = int(abs(n)) + 4
        e = np.zeros(2 * N + 1, dtype=complex)
        e[N + int(n)] = 1.0
        a = np.zeros(2 * N + 1, dtype=complex)
        if a_coeffs is None:
            a[N - 1] = a[N + 1] = 0.5
        else:
            a = resize(np.asarray(a_coeffs, dtype=complex), N)
        w = bracket(modes(N)) ** s
        comm = w * multiply(a, e) - multiply(a, w * e)
        out.append(float(np.linalg.norm(comm)))
    return np.asarray(out)


def commutator_slope(s: float, n_values=(8, 16, 32, 64, 128)) -> float:
    n = np.asarray(n_values, dtype=float)
    return float(np.polyfit(np.log(n), np.log(commutator_norms(s, n_values)), 1)[0])


@dataclass
class RegularityReport:
    s: float
    ratio: float
    commutator_slope: float
    flagged: bool
    ratios: dict = field(default_factory=dict)


def higher_regularity_check(phi: SpaceTimeField, h: SpaceTimeField, problem: ControlProblem,
                            s: float, delta: float = 1.0, sweep: Sequence[float] = ()) -> RegularityReport:
    """Tame ratio ||phi, h||_{T,s} / (||g||_{T,s} + delta ||g||_{T,0}).

    ``flagged`` is raised when, across the sweep, the ratio grows like the
    largest available weight <N>^s, i.e. the solution mass sits at the
    truncation edge instead of obeying a tame bound.
    """
    def ratio(sv):
        den = problem.data_norm(sv) + delta * problem.data_norm(0.0)
        num = traj_norm(phi, sv) + traj_norm(h, sv)
        return num / den if den > 0 else 0.0

    ratios = {float(sv): ratio(sv) for sv in sorted(set(sweep) | {0.0, float(s)})}
    flagged = False
    base = ratios[0.0]
    edge = np.log(bracket(np.array([problem.n_max]))[0])
    for sv, r in ratios.items():
        if sv > 0 and base > 0 and r > 0 and np.log(r / base) / edge > sv - 0.5:
            flagged = True
    slope = commutator_slope(s) if s > 0 else 0.0
    return RegularityReport(float(s), ratios[float(s)], slope, flagged, ratios)


# the right inverse at a linearization point ------------------------------------------------

@dataclass
class PsiResult:
    h: np.ndarray
    phi: np.ndarray
    final_defect: float
    cg_iterations: int
    gramian_applications: int
    passes: int
    chain_summary: dict


def chain_at(v, spec, grid: TimeGrid, thresholds: ReductionThresholds = ReductionThresholds()):
    a0, a1, a2, a3 = coefficients_coeffs(v, spec)
    w = lambda c: SpaceTimeField(grid, hermitian_part(c))
    return build_chain(LinearizedCoefficients(w(a0), w(a1), w(a2), w(a3)), thresholds)


def steer(mild, v, h_free, target, cutoff: Cutoff, X=None, rtol=1e-10, max_iter=500,
          refine: int = 2, thresholds: ReductionThresholds = ReductionThresholds(), chain=None):
    """Add a control so that the linearized flow at v ends at ``target``.

    The Gramian is the reduced one of the chain at v; the state response to
    each control increment is recomputed with the Galerkin solver, and the
    remaining final-state mismatch (chain versus Galerkin truncation) is fed
    back for ``refine`` further passes.
    """
    grid = mild.grid
    d = mild.d
    chain = chain if chain is not None else chain_at(v, mild.spec, grid, thresholds)
    G = ReducedGramian(chain, cutoff)
    X = X if X is not None else (mild.stack(v) if (mild.spec.F or mild.spec.N0) else None)
    phi = np.zeros((grid.n_steps + 1, d), dtype=complex)
    resp = np.zeros_like(phi)
    iters = 0
    passes = 0
    lam0 = float(np.linalg.norm(target - h_free[-1]))
    for _ in range(1 + refine):
        lam = target - h_free[-1] - resp[-1]
        if float(np.linalg.norm(lam)) <= max(rtol * lam0, 1e-300):
            break
        x, info = conjugate_gradient(G.apply, descend_datum(chain, lam, 0, True), None, rtol, max_iter)
        iters += info.iterations
        passes += 1
        if not info.converged:
            raise ObservabilityError(f"CG did not converge; smallest Ritz value {info.ritz_min:.3g}",
                                     ritz_min=info.ritz_min, iterations=info.iterations)
        dphi = hermitian_part(lift(chain, G.adjoint_trajectory(x), 0, adjoint=True))
        phi = phi + dphi
        resp = resp + solve_forward(mild.m, grid, np.zeros(d, complex), X=X,
                                    pair_forcing=[(mild.chi_operator, dphi)])
    h = h_free + resp
    defect = float(np.linalg.norm(h[-1] - target))
    return h, phi, PsiResult(h, phi, defect, iters, G.applications, passes, chain.summary())


def right_inverse_mild(mild, v, G1, g2, g3, cutoff: Cutoff, **kw):
    """(h, phi) solving the Duhamel-form linearized control problem at v:

        h - e^{-tD} h(0) + A_pair[N'(v)] h - A_pair[chi] phi = G1,
        h(0) = g2, h(T) = g3,

    with h = G1 + k (G1(0) = 0 in the range of the map).
    """
    X = mild.stack(v) if (mild.spec.F or mild.spec.N0) else None
    pairs = [] if X is None else [(-X, G1)]
    k_free = mild.solve_linearized(v, g2 - G1[0], pair_forcing=pairs) if pairs else \
        mild.free(g2 - G1[0])
    k, phi, info = steer(mild, v, k_free, g3 - G1[-1], cutoff, X=X, **kw)
    h = G1 + k
    info.h = h
    return h, phi, info


def right_inverse_psi(u: SpaceTimeField, f: Optional[SpaceTimeField], g, spec, cutoff: Cutoff,
                      mild=None, **kw):
    """(h, phi) with P'(u)h - chi phi = g1, h(0) = g2, h(T) = g3.

    g1 is a forcing trajectory that is smooth in time (or None).  ``f`` is
    the current control; the linearized operator does not depend on it.
    Returns SpaceTimeFields and the PsiResult (residuals measured in
    Duhamel form, see ``mild_residual``).
    """
    from .mild import MildForm
    g1, g2, g3 = g
    grid = u.grid
    mild = mild or MildForm(spec, grid, u.n_max, cutoff)
    forcing = None if g1 is None else g1.coeffs
    h_free = mild.solve_linearized(u.coeffs, g2.coeffs, forcing=forcing)
    h, phi, info = steer(mild, u.coeffs, h_free, g3.coeffs, cutoff, **kw)
    info.residual = mild_residual(mild, u.coeffs, h, phi, forcing)
    return _field(grid, h, True), _field(grid, phi, True), info


def mild_residual(mild, u, h, phi, forcing=None) -> float:
    """||h - e^{-tD}h(0) + A_pair[N'(u)]h - A_pair[chi]phi - A[g1]||_{T,0} with the
    solver's own quadrature for N'(u) h."""
    X = mild.stack(u) if (mild.spec.F or mild.spec.N0) else None
    r = h - mild.free(h[0]) - mild.control(phi)
    if X is not None:
        r = r + mild.pair_integral([(X, h)])
    if forcing is not None:
        r = r - mild.duhamel(forcing)
    return float(np.max(np.sqrt(np.sum(np.abs(r) ** 2, axis=-1))))
