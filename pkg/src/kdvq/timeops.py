"""Operations along the time axis of sampled trajectories.

Finite differences, local Lagrange interpolation, cumulative quadrature and
the oscillatory (Filon type) weights used by the Duhamel solvers.  All of
them act on axis 0 of an array sampled on a uniform TimeGrid.
"""
from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple, order: int) -> np.ndarray:
    """Weights w with sum_j w_j f(o_j h) ~ h^order f^(order)(0)."""
    o = np.asarray(offsets, dtype=float)
    p = np.arange(len(o))
    vander = o[None, :] ** p[:, None] / np.array([factorial(i) for i in p])[:, None]
    rhs = np.zeros(len(o))
    rhs[order] = 1.0
    return np.linalg.solve(vander, rhs)


def time_derivative(arr, dt: float, order: int = 1) -> np.ndarray:
    """Fourth-order finite differences along axis 0.

    Central five-point stencils inside, one-sided closed stencils near the ends
    (five points for the first derivative, six for the second).
    """
    arr = np.asarray(arr)
    n = arr.shape[0]
    width = 5 if order == 1 else 6
    if n < width + 1:
        raise ValueError(f"need at least {width + 1} time nodes")
    out = np.empty_like(arr, dtype=np.result_type(arr, float))
    w = fd_weights((-2, -1, 0, 1, 2), order)
    out[2:n - 2] = sum(w[i] * arr[i:n - 4 + i] for i in range(5))
    for j in (0, 1):
        offs = tuple(range(-j, width - j))
        wj = fd_weights(offs, order)
        out[j] = sum(wj[i] * arr[i] for i in range(width))
        out[n - 1 - j] = sum(wj[i] * arr[n - 1 - i] for i in range(width)) * (-1) ** order
    return out / dt ** order


def lagrange_interp(arr, dt: float, tq, order: int = 8) -> np.ndarray:
    """Local Lagrange interpolation of uniformly sampled data (axis 0)."""
    arr = np.asarray(arr)
    n = arr.shape[0]
    tq = np.atleast_1d(np.asarray(tq, dtype=float))
    p = min(order, n)
    x = tq / dt
    start = np.clip(np.floor(x).astype(int) - (p // 2 - 1), 0, n - p)
    out = np.zeros((tq.size,) + arr.shape[1:], dtype=np.result_type(arr, float))
    nodes = np.arange(p)
    for i in range(p):
        li = np.ones(tq.size)
        for j in range(p):
            if j != i:
                li *= (x - start - nodes[j]) / (nodes[i] - nodes[j])
        out += li.reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[start + i]
    return out


def lagrange_interp_deriv(arr, dt: float, tq, order: int = 8) -> np.ndarray:
    """Time derivative of the local interpolant."""
    arr = np.asarray(arr)
    n = arr.shape[0]
    tq = np.atleast_1d(np.asarray(tq, dtype=float))
    p = min(order, n)
    x = tq / dt
    start = np.clip(np.floor(x).astype(int) - (p // 2 - 1), 0, n - p)
    out = np.zeros((tq.size,) + arr.shape[1:], dtype=np.result_type(arr, float))
    r = x - start
    for i in range(p):
        dli = np.zeros(tq.size)
        for k in range(p):
            if k == i:
                continue
            term = np.full(tq.size, 1.0 / (i - k))
            for j in range(p):
                if j not in (i, k):
                    term *= (r - j) / (i - j)
            dli += term
        out += dli.reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[start + i]
    return out / dt


def invert_monotone(values, dt: float, targets, tol: float = 1e-12, max_iter: int = 60):
    """Solve psi(t) = target for an increasing sampled psi.

    Bracketing by the samples, then safeguarded Newton on the local
    interpolant.
    """
    psi = np.asarray(values, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    n = psi.shape[0]
    idx = np.clip(np.searchsorted(psi, targets) - 1, 0, n - 2)
    lo = idx * dt
    hi = (idx + 1) * dt
    t = lo + (targets - psi[idx]) / (psi[idx + 1] - psi[idx]) * dt
    for _ in range(max_iter):
        f = lagrange_interp(psi, dt, t) - targets
        df = lagrange_interp_deriv(psi, dt, t)
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        nxt = t - f / df
        bad = (nxt <= lo) | (nxt >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        done = np.max(np.abs(nxt - t)) <= tol
        t = nxt
        if done:
            break
    return t


# cubic stencils for one step [t_k, t_k+1] --------------------------------

STENCIL_OFFSETS = ((0, 1, 2, 3), (-1, 0, 1, 2), (-2, -1, 0, 1))


@lru_cache(maxsize=None)
def cubic_basis(offsets: tuple) -> np.ndarray:
    """Monomial coefficients L[o, p] of the Lagrange basis on the offsets."""
    o = np.asarray(offsets, dtype=float)
    vander = o[:, None] ** np.arange(4)[None, :]
    return np.linalg.inv(vander).T


def step_cases(n_steps: int):
    """Stencil case (0 first, 1 interior, 2 last) and start node per step."""
    if n_steps < 3:
        raise ValueError("need at least three time steps")
    k = np.arange(n_steps)
    case = np.ones(n_steps, dtype=int)
    case[0] = 0
    case[-1] = 2
    start = np.clip(k - 1, 0, n_steps - 3)
    return case, start


def step_integrals(arr, dt: float) -> np.ndarray:
    """int_{t_k}^{t_k+1} of the local cubic through four nodes, per step."""
    arr = np.asarray(arr)
    n_steps = arr.shape[0] - 1
    case, start = step_cases(n_steps)
    mono = 1.0 / np.arange(1, 5)
    out = np.zeros((n_steps,) + arr.shape[1:], dtype=np.result_type(arr, float))
    for c, offs in enumerate(STENCIL_OFFSETS):
        w = cubic_basis(offs) @ mono
        sel = np.nonzero(case == c)[0]
        if sel.size == 0:
            continue
        for i in range(4):
            out[sel] += w[i] * arr[start[sel] + i]
    return out * dt


def cumulative_integral(arr, dt: float) -> np.ndarray:
    """int_0^{t_k} along axis 0, fourth order, zero at t_0."""
    steps = step_integrals(arr, dt)
    out = np.zeros((steps.shape[0] + 1,) + steps.shape[1:], dtype=steps.dtype)
    out[1:] = np.cumsum(steps, axis=0)
    return out


# oscillatory moments -------------------------------------------------------

def moments(z, p_max: int = 3) -> np.ndarray:
    """mu_p(z) = int_0^1 e^{izs} s^p ds for p = 0..p_max, shape (p_max+1, *z)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros((p_max + 1,) + z.shape, dtype=complex)
    small = np.abs(z) < 1.0
    if np.any(small):
        zs = z[small]
        term = np.ones(zs.shape, dtype=complex)
        acc = np.zeros((p_max + 1,) + zs.shape, dtype=complex)
        for k in range(30):
            for p in range(p_max + 1):
                acc[p] += term / (k + p + 1)
            term = term * (1j * zs) / (k + 1)
        out[:, small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        e = np.exp(1j * zb)
        mu = (e - 1.0) / (1j * zb)
        out[0, big] = mu
        for p in range(1, p_max + 1):
            mu = (e - p * mu) / (1j * zb)
            out[p, big] = mu
    return out


def filon_weights(z, offsets: tuple) -> np.ndarray:
    """Weights W[o] with int_0^1 e^{iz(1-s)} g(s) ds ~ sum_o W[o] g(o).

    ``g`` is replaced by its cubic interpolant through the four offsets.
    Returned shape is (4, *z).
    """
    z = np.asarray(z, dtype=float)
    mu = moments(-z)
    basis = cubic_basis(offsets)
    w = np.tensordot(basis, mu, axes=(1, 0))
    return w * np.exp(1j * z)[None]
