"""Duhamel (mild) form of the nonlinear problem on the truncated space.

With D = d^3 and the free flow e^{-tD}, the equation u_t + u_xxx + N(u) = F
is equivalent to

    u - e^{-tD} u(0) + A[N(u)] = A[F]

where A is the Duhamel integral.  Time derivatives of dispersive trajectories
are never formed: every integral is evaluated with the pair weights of the
solver, so the map below and its derivative are exact at the discrete level.

N(u) is written as int_0^1 N'(s u) u ds (N(0) = 0) and the s-integral uses
Gauss-Legendre nodes, exact for polynomial nonlinearities of low degree.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .cauchy import PairOperator, free_flow, kernel, solve_forward
from .nonlinearity import linearization_stack, linearization_stack_prime
from .reduction import toeplitz_stack
from .spectral import TimeGrid


class MildForm:
    """Discrete Duhamel operators for one (spec, grid, N_max, cutoff)."""

    def __init__(self, spec, grid: TimeGrid, n_max: int, cutoff=None, m: float = 1.0,
                 gauss_points: int = 3):
        self.spec, self.grid, self.n_max, self.m = spec, grid, int(n_max), float(m)
        self.kern = kernel(self.m, grid.dt, self.n_max)
        s, w = np.polynomial.legendre.leggauss(gauss_points)
        self.s_nodes, self.s_weights = 0.5 * (s + 1.0), 0.5 * w
        self.cutoff = cutoff
        self._chi = None

    @property
    def d(self):
        return 2 * self.n_max + 1

    @property
    def chi_operator(self) -> PairOperator:
        """Pair operator of the multiplication by chi (constant in time)."""
        if self._chi is None:
            if self.cutoff is None:
                raise ValueError("no control cutoff configured")
            T = toeplitz_stack(self.cutoff.coeffs(2 * self.n_max), self.n_max)
            X = np.broadcast_to(T, (self.grid.n_steps + 1,) + T.shape)
            self._chi = PairOperator(self.kern, X)
        return self._chi

    def _zeros(self, z):
        return np.zeros(np.shape(z)[1:], dtype=complex)

    def pair_integral(self, pairs):
        """sum of A_pair[X] z over a list of (X, z)."""
        z0 = pairs[0][1]
        return solve_forward(self.m, self.grid, self._zeros(z0), pair_forcing=pairs)

    def free(self, alpha):
        return free_flow(alpha, self.m, self.grid)

    def duhamel(self, f):
        """A[f] for a forcing that is smooth in time."""
        f = np.asarray(f, dtype=complex)
        return solve_forward(self.m, self.grid, self._zeros(f), forcing=f)

    def stack(self, u):
        return linearization_stack(u, self.spec)

    def nonlinear(self, u):
        """A[N(u)] = sum_s w_s A_pair[L(s u)] u."""
        if not self.spec.F and not self.spec.N0:
            return np.zeros_like(u, dtype=complex)
        pairs = [(w * self.stack(s * u), u) for s, w in zip(self.s_nodes, self.s_weights)]
        return self.pair_integral(pairs)

    def nonlinear_prime(self, u, h):
        """Exact derivative of ``nonlinear`` at u in direction h."""
        if not self.spec.F and not self.spec.N0:
            return np.zeros_like(h, dtype=complex)
        pairs = []
        for s, w in zip(self.s_nodes, self.s_weights):
            pairs.append((w * self.stack(s * u), h))
            pairs.append((w * s * linearization_stack_prime(s * u, h, self.spec), u))
        return self.pair_integral(pairs)

    def control(self, f):
        """A_pair[chi] f."""
        return self.pair_integral([(self.chi_operator, np.asarray(f, complex))])

    # the map and its derivatives -------------------------------------------

    def residual(self, u, f=None):
        """u - e^{-tD} u(0) + A[N(u)] - A[chi f] (f = None drops the control)."""
        out = u - self.free(u[0]) + self.nonlinear(u)
        if f is not None:
            out = out - self.control(f)
        return out

    def residual_prime(self, u, h, k=None):
        out = h - self.free(h[0]) + self.nonlinear_prime(u, h)
        if k is not None:
            out = out - self.control(k)
        return out

    def residual_second(self, u, h1, h2, eps: Optional[float] = None):
        """Central difference of residual_prime; exact when N is at most cubic."""
        scale = max(float(np.max(np.abs(u), initial=0.0)), float(np.max(np.abs(h2), initial=0.0)), 1e-300)
        eps = eps if eps is not None else 1e-3 * scale / max(float(np.max(np.abs(h2))), 1e-300)
        plus = self.nonlinear_prime(u + eps * h2, h1)
        minus = self.nonlinear_prime(u - eps * h2, h1)
        return (plus - minus) / (2 * eps)

    # linear solves ---------------------------------------------------------

    def solve_linearized(self, v, alpha, forcing=None, pair_forcing=(), stats=None, X=None):
        """h with h_t + h_xxx + N'(v) h = forcing + sum pairs, h(0) = alpha.

        The N'(v) term is treated with the solver's pair quadrature, which is a
        consistent (not bit-identical) discretization of residual_prime.
        """
        if X is None and (self.spec.F or self.spec.N0):
            X = self.stack(v)
        return solve_forward(self.m, self.grid, alpha, forcing, X, pair_forcing, stats=stats)
