"""Numeric checks of tame product, algebra and smoothing inequalities.

These only measure ratios; constants are fitted from samples, never proven.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import (DEFAULT_SMOOTHING, PeriodicField, bracket, modes,
                       multiply, smooth, smooth_dtheta, sobolev_norm)


@dataclass
class TameReport:
    ratio: float
    bound: float
    flagged: bool


def verify_tame_product(u, v, s: float, s0: float, bound: float = 4.0) -> TameReport:
    """Ratio ||uv||_s / (||u||_s ||v||_s0 + ||u||_s0 ||v||_s)."""
    if not (s >= s0 > 0.5):
        raise ValueError("need s >= s0 > 1/2")
    den = sobolev_norm(u, s) * sobolev_norm(v, s0) + sobolev_norm(u, s0) * sobolev_norm(v, s)
    ratio = sobolev_norm(multiply(u, v), s) / den if den > 0 else 0.0
    return TameReport(ratio, bound, ratio > bound)


def algebra_ratio(u, v, s0: float) -> float:
    den = sobolev_norm(u, s0) * sobolev_norm(v, s0)
    return sobolev_norm(multiply(u, v), s0) / den if den > 0 else 0.0


def random_field(rng, n_max: int, decay: float = 2.0, real=True) -> PeriodicField:
    """Random coefficients with |c_n| ~ <n>^-decay."""
    n = modes(n_max)
    c = (rng.standard_normal(n.size) + 1j * rng.standard_normal(n.size)) * bracket(n) ** (-decay)
    if real:
        c = 0.5 * (c + np.conj(c[::-1]))
    return PeriodicField(c, real)


def smoothing_ratios(u, theta: float, a: float, b: float, cfg=DEFAULT_SMOOTHING) -> dict:
    """Ratios of the four smoothing axioms for one sample u.

    S1 (b <= a): ||S u||_b / ||u||_a
    S2 (a < b):  ||S u||_b / (theta^(b-a) ||u||_a)
    S3 (a > b):  ||u - S u||_b / (theta^(b-a) ||u||_a)
    S4:          ||dS/dtheta u||_b / (theta^(b-a-1) ||u||_a)
    """
    ua = sobolev_norm(u, a)
    su = smooth(u, theta, cfg)
    out = {}
    if b <= a:
        out["S1"] = sobolev_norm(su, b) / ua
    if a < b:
        out["S2"] = sobolev_norm(su, b) / (theta ** (b - a) * ua)
    if a > b:
        out["S3"] = sobolev_norm(u - su, b) / (theta ** (b - a) * ua)
    out["S4"] = sobolev_norm(smooth_dtheta(u, theta, cfg), b) / (theta ** (b - a - 1) * ua)
    return out


def smoothing_operator_norms(n_max: int, theta: float, a: float, b: float, cfg=DEFAULT_SMOOTHING) -> dict:
    """Exact (diagonal) operator norms behind the same four ratios."""
    n = modes(n_max).astype(float)
    w = bracket(n) ** (b - a)
    phi = cfg.symbol(n, theta)
    out = {}
    if b <= a:
        out["S1"] = float(np.max(phi * w))
    if a < b:
        out["S2"] = float(np.max(phi * w)) / theta ** (b - a)
    if a > b:
        out["S3"] = float(np.max((1 - phi) * w)) / theta ** (b - a)
    out["S4"] = float(np.max(np.abs(cfg.symbol_dtheta(n, theta)) * w)) / theta ** (b - a - 1)
    return out
