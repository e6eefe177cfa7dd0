"""Discrete Nash-Moser iteration with smoothing and correction terms.

The scheme solves Phi(u) = Phi(0) + g for a map Phi between graded scales
that has an approximate right inverse Psi(v) with loss of derivatives.  With
theta_j = j + 1 and R_j = S_{theta_{j+1}} - S_{theta_j} (R_0 = S_{theta_1}):

    g_j = R_j g,   v_j = S_{theta_j} u_j,   h_j = Psi(v_j)(g_j + y_j),
    u_{j+1} = u_j + h_j,
    y_{j+1} = -S_{theta_{j+1}} e_j - R_j E_j,   E_j = sum_{i<j} e_i,

where e_j collects the quadratic error e'_j, the linearization-point error
e''_j and the residual of Psi (which is not an exact right inverse in
floating point).  Two identities are checked at every step:

    sum_{j<=k} (e_j + y_j) = e_k + (I - S_{theta_k}) E_k
    Phi(u_{k+1}) - Phi(0)   = G_k + e_k + r_k.

Elements of the scales are numpy arrays or ``Blocks`` (tuples of arrays).
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control import Cutoff, Window, _field, right_inverse_mild
from .errors import ConfigError, DivergenceError, IdentityError, SmallnessError
from .mild import MildForm
from .spectral import (DEFAULT_SMOOTHING, PeriodicField, SpaceTimeField, TimeGrid, hermitian_part,
                       modes, n_max_of, sobolev_norms)
from .timeops import time_derivative


# scale parameters ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleParams:
    """Exponents a0, mu, a1, alpha, beta, a2 of the iteration.

    Defaults: a0 = 1, mu = 3, a1 = sigma, alpha = beta = 2 sigma, a2 = 3 sigma + 1
    with sigma = 3.
    """

    a0: float = 1.0
    mu: float = 3.0
    a1: float = 3.0
    alpha: float = 6.0
    beta: float = 6.0
    a2: float = 10.0

    def __post_init__(self):
        a0, mu, a1, al, be, a2 = self.a0, self.mu, self.a1, self.alpha, self.beta, self.a2
        bad = []
        if min(a0, mu, a1, al, be, a2) < 0:
            bad.append("all exponents non-negative")
        if not (a0 <= mu <= a1):
            bad.append("a0 <= mu <= a1")
        if not (a1 + be / 2 <= al < a1 + be <= a2):
            bad.append("a1 + beta/2 <= alpha < a1 + beta <= a2")
        if not (2 * al < a1 + a2):
            bad.append("2 alpha < a1 + a2")
        if bad:
            raise ConfigError("inadmissible scale parameters: " + "; ".join(bad), failed=bad)

    @classmethod
    def from_sigma(cls, sigma: float, a2: Optional[float] = None):
        return cls(1.0, 3.0, sigma, 2 * sigma, 2 * sigma, 3 * sigma + 1 if a2 is None else a2)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("a0", "mu", "a1", "alpha", "beta", "a2")}


def theta(j: int, geometric: bool = False) -> float:
    """theta_j = j + 1 (default) or 2^j."""
    return float(2 ** j) if geometric else float(j + 1)


# elements ---------------------------------------------------------------------------------

class Blocks(tuple):
    """A tuple of arrays with the vector-space operations done blockwise."""

    def __new__(cls, items):
        return super().__new__(cls, tuple(np.asarray(b) for b in items))

    def __add__(self, other):
        return Blocks(a + b for a, b in zip(self, other))

    def __sub__(self, other):
        return Blocks(a - b for a, b in zip(self, other))

    def __neg__(self):
        return Blocks(-a for a in self)

    def __mul__(self, s):
        return Blocks(s * a for a in self)

    __rmul__ = __mul__

    def zeros_like(self):
        return Blocks(np.zeros_like(a) for a in self)


def _zeros_like(x):
    return x.zeros_like() if isinstance(x, Blocks) else np.zeros_like(np.asarray(x))


def smooth_coeffs(x, th: float, cfg=DEFAULT_SMOOTHING):
    """S_theta on coefficient arrays (last axis = modes) or Blocks of them."""
    if isinstance(x, Blocks):
        return Blocks(smooth_coeffs(b, th, cfg) for b in x)
    x = np.asarray(x)
    return x * cfg.symbol(modes(n_max_of(x)), th)


# problem and state -------------------------------------------------------------------------

@dataclass
class NMProblem:
    """Phi, its derivatives, an approximate right inverse and the two scales.

    ``psi(v, g)`` returns (h, info) where info may carry ``cg_iterations``.
    ``defect_norm`` is the low norm of the stopping test; ``dom_norm(x, a)``
    is the graded norm used for the trace.  ``exhaust_theta`` is the theta
    beyond which S_theta is the identity on the truncated spaces (None for no
    truncation).
    """

    phi: Callable
    phi_prime: Callable
    psi: Callable
    target: object
    zero: object
    smooth_dom: Callable
    smooth_cod: Callable
    defect_norm: Callable
    dom_norm: Callable
    phi_second: Optional[Callable] = None
    params: ScaleParams = field(default_factory=ScaleParams)
    exhaust_theta: Optional[float] = None
    ball: Optional[float] = None
    geometric: bool = False

    def theta(self, j):
        return theta(j, self.geometric)

    def composition_residual(self, v, g):
        """Phi'(v) Psi(v) g - g, in the defect norm."""
        h, _ = self.psi(v, g)
        return self.defect_norm(self.phi_prime(v, h) - g)


@dataclass
class TraceRow:
    j: int
    theta: float
    h_norms: dict
    defect: float
    cg_iterations: int
    wall_time: float
    e_norm: float = 0.0
    y_norm: float = 0.0
    psi_residual: float = 0.0
    telescoping: float = 0.0
    identity: float = 0.0


@dataclass
class NMState:
    j: int
    theta: float
    u: object
    y: object
    E: object
    G: object
    sum_ey: object
    phi_u: object
    mass: float = 0.0
    v: object = None
    h: object = None
    g_j: object = None
    e_prime: object = None
    e_doubleprime: object = None
    e: object = None
    trace: list = field(default_factory=list)


@dataclass
class NMResult:
    u: object
    trace: list
    converged: bool
    reason: str
    defect: float
    state: NMState

    @property
    def iterations(self):
        return len(self.trace)


def decompose(g, J: int, smooth: Callable, geometric: bool = False):
    """g_0 = S_{theta_1} g, g_j = S_{theta_{j+1}} g - S_{theta_j} g for j = 1..J."""
    out = [smooth(g, theta(1, geometric))]
    for j in range(1, J + 1):
        out.append(smooth(g, theta(j + 1, geometric)) - smooth(g, theta(j, geometric)))
    return out


def _piece(problem, j):
    th1 = problem.theta(j + 1)
    if j == 0:
        return problem.smooth_cod(problem.target, th1)
    return problem.smooth_cod(problem.target, th1) - problem.smooth_cod(problem.target, problem.theta(j))


def initial_state(problem: NMProblem) -> NMState:
    z = problem.zero
    phi0 = problem.phi(z)
    zc = _zeros_like(phi0)
    return NMState(0, problem.theta(0), z, zc, zc, zc, zc, phi0)


def nm_step(state: NMState, problem: NMProblem, a_list: Sequence[float] = (0.0,),
            phi0=None) -> NMState:
    t0 = time.perf_counter()
    j = state.j
    th, th1 = problem.theta(j), problem.theta(j + 1)
    g_j = _piece(problem, j)
    v = problem.smooth_dom(state.u, th)
    if problem.ball is not None:
        nv = problem.dom_norm(v, problem.params.a1)
        if nv > problem.ball:
            raise SmallnessError(f"linearization point outside the admissible ball ({nv:.3g})",
                                 norm=nv, ball=problem.ball, j=j)
    h, info = problem.psi(v, g_j + state.y)
    u1 = state.u + h
    phi_u1 = problem.phi(u1)
    dphi = phi_u1 - state.phi_u
    lin_u = problem.phi_prime(state.u, h)
    lin_v = problem.phi_prime(v, h)
    e_prime = dphi - lin_u
    e_doubleprime = lin_u - lin_v
    e = dphi - (g_j + state.y)
    psi_res = e - e_prime - e_doubleprime

    # identities, each side accumulated independently
    sum_ey = state.sum_ey + e + state.y
    r = state.E - problem.smooth_cod(state.E, th)
    nrm = problem.defect_norm
    mass = state.mass + nrm(e) + nrm(state.y)
    scale = max(mass, nrm(r), 1e-300)
    tele = nrm(sum_ey - (e + r)) / scale
    G = state.G + g_j
    if phi0 is None:
        phi0 = problem.phi(problem.zero)
    lhs = phi_u1 - phi0
    scale2 = max(nrm(lhs), nrm(G) + nrm(e) + nrm(r), 1e-300)
    ident = nrm(lhs - (G + e + r)) / scale2
    if tele > 1e-12:
        raise IdentityError(f"telescoping identity violated ({tele:.3g})", j=j, value=tele)
    if ident > 1e-10:
        raise IdentityError(f"defect identity violated ({ident:.3g})", j=j, value=ident)

    y1 = -problem.smooth_cod(e, th1) - (problem.smooth_cod(state.E, th1) - problem.smooth_cod(state.E, th))
    defect = nrm(lhs - problem.target)
    row = TraceRow(j, th, {float(a): float(problem.dom_norm(h, a)) for a in a_list}, float(defect),
                   int(getattr(info, "cg_iterations", 0) if not isinstance(info, dict)
                       else info.get("cg_iterations", 0)),
                   time.perf_counter() - t0, float(nrm(e)), float(nrm(state.y)), float(nrm(psi_res)),
                   float(tele), float(ident))
    if not math.isfinite(defect):
        raise DivergenceError("non-finite defect", j=j, trace=state.trace + [row])
    return NMState(j + 1, th1, u1, y1, state.E + e, G, sum_ey, phi_u1, mass, v, h, g_j,
                   e_prime, e_doubleprime, e, state.trace + [row])


def run(problem: NMProblem, J_max: int = 20, tol: float = 1e-10, a_list: Sequence[float] = (0.0,),
        floor: float = 0.0, patience: int = 3) -> NMResult:
    """Iterate until the defect is below ``tol``, the decomposition of g is
    exhausted, or J_max steps.  Raises DivergenceError when the defect grows
    ``patience`` consecutive times while above max(tol, floor)."""
    state = initial_state(problem)
    phi0 = state.phi_u
    d0 = problem.defect_norm(phi0 - phi0 - problem.target)
    if d0 < tol:
        return NMResult(state.u, [], True, "tol", float(d0), state)
    ups, prev, reason = 0, None, "max_iter"
    for _ in range(J_max):
        state = nm_step(state, problem, a_list, phi0)
        d = state.trace[-1].defect
        if d < tol:
            reason = "tol"
            break
        if prev is not None and d > prev and d > max(tol, floor):
            ups += 1
            if ups >= patience:
                raise DivergenceError(
                    f"defect increased {patience} consecutive times; data too large for the scheme",
                    trace=state.trace)
        else:
            ups = 0
        prev = d
        if problem.exhaust_theta is not None and state.theta >= problem.exhaust_theta \
                and state.trace[-1].e_norm < max(tol, floor):
            reason = "exhausted"
            break
    d = state.trace[-1].defect if state.trace else d0
    return NMResult(state.u, state.trace, d < tol, reason, float(d), state)


# diagnostics -------------------------------------------------------------------------------

def weak_norm_proxy(x, a: float, norm: Callable, smooth: Callable, J: int, geometric=False):
    """max_j ||R_j x||_b theta_j^{a+1-b} over b in {a-1, a+1}: an upper proxy for
    the weak norm ||x||'_a (whose infimum definition is not computable)."""
    best = 0.0
    for j, piece in enumerate(decompose(x, J, smooth, geometric)):
        th = theta(j, geometric)
        for b in (a - 1.0, a + 1.0):
            best = max(best, norm(piece, b) * th ** (a + 1.0 - b))
    return best


def fit_exponent(thetas, values):
    """Least-squares slope of log(values) against log(thetas), skipping zeros."""
    t, v = np.asarray(thetas, float), np.asarray(values, float)
    keep = v > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)[0])


def trace_columns(a_list: Sequence[float]):
    return ["j", "theta"] + [f"h_norm_a{float(a):g}" for a in a_list] + \
        ["defect", "cg_iterations", "wall_time"]


def write_trace_csv(trace: Sequence[TraceRow], path, a_list: Sequence[float] = (0.0,)):
    """Norm trace as CSV; an empty trace gives the header only."""
    cols = trace_columns(a_list)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in trace:
            w.writerow([r.j, repr(r.theta)] + [repr(r.h_norms.get(float(a), float("nan"))) for a in a_list]
                       + [repr(r.defect), r.cg_iterations, repr(r.wall_time)])


# scalar toy --------------------------------------------------------------------------------

def scalar_problem(g: float) -> NMProblem:
    """Phi(u) = u + u^2 on a one-dimensional scale with S_theta = I."""
    ident = lambda x, th: x
    return NMProblem(
        phi=lambda u: u + u * u,
        phi_prime=lambda u, h: (1 + 2 * u) * h,
        phi_second=lambda u, h1, h2: 2 * h1 * h2,
        psi=lambda v, r: (r / (1 + 2 * v), {}),
        target=np.float64(g), zero=np.float64(0.0),
        smooth_dom=ident, smooth_cod=ident,
        defect_norm=lambda x: float(abs(x)), dom_norm=lambda x, a: float(abs(x)))


# graded norms of the control problem ---------------------------------------------------

class GradedNormPack:
    """X_s, E_s and F_s on trajectories of the truncated space.

    Time derivatives of dispersive trajectories use the free phase as a
    carrier: with w = e^{-i omega t} u (omega_n = m n^3),
    du/dt = e^{i omega t}(w' + i omega w) and
    d2u/dt2 = e^{i omega t}(w'' + 2 i omega w' - omega^2 w).
    """

    def __init__(self, grid: TimeGrid, m: float = 1.0):
        self.grid, self.m = grid, float(m)

    def _carrier(self, c):
        om = self.m * modes(n_max_of(c)).astype(float) ** 3
        return om, np.exp(1j * np.outer(self.grid.nodes, om))

    def dt(self, c, order=1):
        c = np.asarray(c, dtype=complex)
        om, ph = self._carrier(c)
        w = c * np.conj(ph)
        w1 = time_derivative(w, self.grid.dt, 1)
        if order == 1:
            return ph * (w1 + 1j * om * w)
        w2 = time_derivative(w, self.grid.dt, 2)
        return ph * (w2 + 2j * om * w1 - om ** 2 * w)

    @staticmethod
    def _traj(c, s):
        return float(np.max(sobolev_norms(np.atleast_2d(c), s)))

    def X(self, c, s):
        return self._traj(c, s + 6) + self._traj(self.dt(c), s + 3) + self._traj(self.dt(c, 2), s)

    def E(self, x, s):
        u, f = x
        return self.X(u, s) + self.X(f, s)

    def F(self, g, s):
        g1, g2, g3 = g
        return (self._traj(g1, s + 6) + self._traj(self.dt(g1), s)
                + float(sobolev_norms(g2, s + 6)) + float(sobolev_norms(g3, s + 6)))


def low_norm(x) -> float:
    """Sum over blocks of the sup-in-time L2 norm."""
    if isinstance(x, Blocks):
        return float(sum(low_norm(b) for b in x))
    c = np.atleast_2d(np.asarray(x))
    return float(np.max(np.sqrt(np.sum(np.abs(c) ** 2, axis=-1))))


# the control and Cauchy problems ---------------------------------------------------------

def mild_cauchy(mild: MildForm, u_in, f=None, forcing=None, tol=1e-14, max_iter=200):
    """Fixed-point solve of u = e^{-tD}u_in - A[N(u)] + A_pair[chi] f + A[forcing]."""
    base = mild.free(np.asarray(u_in, complex))
    if f is not None:
        base = base + mild.control(f)
    if forcing is not None:
        base = base + mild.duhamel(forcing)
    u = base
    scale = max(low_norm(base), 1e-300)
    for it in range(max_iter):
        new = base - mild.nonlinear(u)
        change = low_norm(new - u)
        u = new
        if change <= tol * scale:
            return u, it + 1
    raise DivergenceError("fixed-point Cauchy solve did not converge", change=change)


def _h(c):
    return hermitian_part(np.asarray(c))


def control_problem(mild: MildForm, u_in, u_end, cutoff: Cutoff, params: ScaleParams = ScaleParams(),
                    hum_rtol: float = 1e-10, refine: int = 2, geometric=False,
                    norm_pack: Optional[GradedNormPack] = None) -> NMProblem:
    """Phi(u, f) = (u - e^{-tD}u(0) + A[N(u)] - A_pair[chi] f, u(0), u(T)),
    target (0, u_in, u_end)."""
    M, d = mild.grid.n_steps, mild.d
    zero = Blocks((np.zeros((M + 1, d), complex), np.zeros((M + 1, d), complex)))
    norms = norm_pack or GradedNormPack(mild.grid, mild.m)

    def phi(x):
        u, f = x
        return Blocks((mild.residual(u, f), u[0], u[-1]))

    def phi_prime(x, dx):
        u, _ = x
        h, k = dx
        return Blocks((mild.residual_prime(u, h, k), h[0], h[-1]))

    def phi_second(x, d1, d2):
        return Blocks((mild.residual_second(x[0], d1[0], d2[0]), 0 * d1[0][0], 0 * d1[0][0]))

    def psi(v, g):
        h, ph, info = right_inverse_mild(mild, v[0], g[0], g[1], g[2], cutoff,
                                         rtol=hum_rtol, refine=refine)
        return Blocks((_h(h), _h(ph))), info

    target = Blocks((np.zeros((M + 1, d), complex), np.asarray(u_in, complex), np.asarray(u_end, complex)))
    return NMProblem(phi, phi_prime, psi, target, zero, smooth_coeffs, smooth_coeffs, low_norm,
                     lambda x, a: norms.E(x, a), phi_second, params, float(mild.n_max),
                     geometric=geometric)


def ivp_problem(mild: MildForm, u_in, forcing=None, params: ScaleParams = ScaleParams(),
                geometric=False) -> NMProblem:
    """Phi(u) = (u - e^{-tD}u(0) + A[N(u)], u(0)), target (A[forcing], u_in)."""
    M, d = mild.grid.n_steps, mild.d
    norms = GradedNormPack(mild.grid, mild.m)
    nonlinear = bool(mild.spec.F or mild.spec.N0)

    def phi(x):
        return Blocks((mild.residual(x[0]), x[0][0]))

    def phi_prime(x, dx):
        return Blocks((mild.residual_prime(x[0], dx[0]), dx[0][0]))

    def psi(v, g):
        G1, g2 = g
        if nonlinear:
            X = mild.stack(v[0])
            k = mild.solve_linearized(v[0], g2 - G1[0], pair_forcing=[(-X, G1)], X=X)
        else:
            k = mild.free(g2 - G1[0])
        return Blocks((_h(G1 + k),)), {}

    g1 = np.zeros((M + 1, d), complex) if forcing is None else mild.duhamel(np.asarray(forcing, complex))
    target = Blocks((g1, np.asarray(u_in, complex)))
    zero = Blocks((np.zeros((M + 1, d), complex),))
    return NMProblem(phi, phi_prime, psi, target, zero, smooth_coeffs, smooth_coeffs, low_norm,
                     lambda x, a: norms.X(x[0], a), None, params, float(mild.n_max),
                     geometric=geometric)


@dataclass
class ControlSolution:
    u: SpaceTimeField
    f: SpaceTimeField
    result: NMResult
    final_defect: float
    initial_defect: float
    resolve_agreement: float
    outside_max: float
    cutoff: Cutoff

    def summary(self):
        return {"iterations": self.result.iterations, "converged": self.result.converged,
                "stop_reason": self.result.reason, "defect": self.result.defect,
                "final_defect": self.final_defect, "initial_defect": self.initial_defect,
                "resolve_agreement": self.resolve_agreement, "control_outside_window": self.outside_max,
                "cg_iterations": sum(r.cg_iterations for r in self.result.trace)}


def solve_control(u_in: PeriodicField, u_end: PeriodicField, spec, T: float, window: Window,
                  n_steps: int = 128, m: float = 1.0, params: ScaleParams = ScaleParams(),
                  J_max: int = 12, tol: float = 1e-10, a_list: Sequence[float] = (0.0,),
                  hum_rtol: float = 1e-10, geometric: bool = False, cutoff: Optional[Cutoff] = None,
                  floor: float = 1e-13) -> ControlSolution:
    """(u, f) with u_t + m u_xxx + N(u) = chi f, u(0) = u_in, u(T) = u_end."""
    N = u_in.n_max
    grid = TimeGrid(T, n_steps)
    cutoff = cutoff or Cutoff(window)
    mild = MildForm(spec, grid, N, cutoff, m)
    a, b = u_in.coeffs, u_end.coeffs
    problem = control_problem(mild, a, b, cutoff, params, hum_rtol, geometric=geometric)
    res = run(problem, J_max, tol, a_list, floor)
    u, f = res.u
    final = float(np.linalg.norm(u[-1] - b))
    first = float(np.linalg.norm(u[0] - a))
    # uniqueness cross-check: re-solve the Cauchy problem with the control found
    ur, _ = mild_cauchy(mild, a, f)
    agree = low_norm(ur - u)
    uf, ff = _field(grid, u, True), _field(grid, f, True)
    x = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    outside = ~window.indicator(x).astype(bool)
    chi = cutoff.values(x)
    cf = chi[None, :] * ff.values(512)
    out_max = float(np.max(np.abs(cf[:, outside]), initial=0.0))
    return ControlSolution(uf, ff, res, final, first, agree, out_max, cutoff)


@dataclass
class IvpSolution:
    u: SpaceTimeField
    result: NMResult
    fixed_point_agreement: float


def solve_ivp(u_in: PeriodicField, f: Optional[SpaceTimeField], spec, T: float, n_steps: int = 128,
              m: float = 1.0, params: ScaleParams = ScaleParams(), J_max: int = 40, tol: float = 1e-12,
              a_list: Sequence[float] = (0.0,), geometric: bool = False, floor: float = 1e-13,
              grid: Optional[TimeGrid] = None) -> IvpSolution:
    """u_t + m u_xxx + N(u) = f, u(0) = u_in, by the Nash-Moser scheme."""
    grid = grid or (f.grid if f is not None else TimeGrid(T, n_steps))
    mild = MildForm(spec, grid, u_in.n_max, None, m)
    fc = None if f is None else f.coeffs
    problem = ivp_problem(mild, u_in.coeffs, fc, params, geometric)
    res = run(problem, J_max, tol, a_list, floor)
    (u,) = res.u
    ur, _ = mild_cauchy(mild, u_in.coeffs, forcing=fc)
    return IvpSolution(_field(grid, u, u_in.is_real and (f is None or f.is_real)), res, low_norm(ur - u))
