import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import seeds
from kdvq.cauchy import solve_L5
from kdvq.control import Window
from kdvq.errors import ConfigError, DivergenceError, IdentityError
from kdvq.nash_moser import (GradedNormPack, NMProblem, ScaleParams, decompose, fit_exponent,
                             low_norm, run, scalar_problem, smooth_coeffs, solve_control,
                             solve_ivp, theta, trace_columns, weak_norm_proxy, write_trace_csv)
from kdvq.nonlinearity import airy_spec, kdv_spec
from kdvq.spectral import PeriodicField, SpaceTimeField, TimeGrid, modes, sobolev_norms

WINDOW = Window(((0.5, 2.5),))


def decaying(N, beta):
    return (1.0 + modes(N) ** 2) ** ((-beta - 0.5) / 2) + 0j


def sob(x, a):
    return float(sobolev_norms(x, a))


# scale parameters ---------------------------------------------------------------------------

class TestScaleParams:
    def test_defaults_admissible(self):
        p = ScaleParams()
        assert p.as_dict() == {"a0": 1, "mu": 3, "a1": 3, "alpha": 6, "beta": 6, "a2": 10}
        assert ScaleParams.from_sigma(3) == p

    def test_sigma_two_rejected(self):
        with pytest.raises(ConfigError) as exc:
            ScaleParams.from_sigma(2)
        assert exc.value.details["failed"] == ["a0 <= mu <= a1"]

    @pytest.mark.parametrize("kw, rule", [
        (dict(alpha=4.0), "a1 + beta/2 <= alpha < a1 + beta <= a2"),
        (dict(a2=8.0), "a1 + beta/2 <= alpha < a1 + beta <= a2"),
        (dict(alpha=8.5, a2=13.0), "2 alpha < a1 + a2"),
        (dict(a0=-1.0), "all exponents non-negative"),
    ])
    def test_violations_named(self, kw, rule):
        with pytest.raises(ConfigError) as exc:
            ScaleParams(**kw)
        assert rule in exc.value.details["failed"]

    @given(st.floats(3.0, 20.0))
    def test_sigma_family_admissible(self, sigma):
        ScaleParams.from_sigma(sigma)


def test_theta_sequences():
    assert [theta(j) for j in range(4)] == [1, 2, 3, 4]
    assert [theta(j, True) for j in range(4)] == [1, 2, 4, 8]


# decomposition --------------------------------------------------------------------------------

class TestDecompose:
    def test_low_modes_first_piece(self):
        g = np.zeros(17, complex)
        g[7:10] = [0.3, 1.0, 0.3]
        pcs = decompose(g, 5, smooth_coeffs)
        assert np.array_equal(pcs[0], g)
        assert all(np.max(np.abs(p)) == 0 for p in pcs[1:])

    @given(seeds, st.booleans())
    @settings(max_examples=20)
    def test_telescoping(self, seed, geometric):
        rng = np.random.default_rng(seed)
        N = 32
        g = rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)
        J = 5 if geometric else N
        total = np.sum(decompose(g, J, smooth_coeffs, geometric), axis=0)
        assert np.max(np.abs(total - smooth_coeffs(g, theta(J + 1, geometric)))) < 1e-13
        assert np.max(np.abs(total - g)) < 1e-13

    @pytest.mark.parametrize("b", [0.0, 2.0, 4.0])
    def test_piece_decay(self, b):
        N, beta, J = 512, 4.0, 200
        pcs = decompose(decaying(N, beta), J, smooth_coeffs)
        pts = [(theta(j), sob(p, b)) for j, p in enumerate(pcs) if 4 <= theta(j) <= N / 4]
        assert abs(fit_exponent(*zip(*pts)) - (b - beta - 1)) < 0.3

    def test_blocks(self):
        from kdvq.nash_moser import Blocks
        g = Blocks((np.ones(9, complex), np.ones((3, 9), complex)))
        pcs = decompose(g, 8, smooth_coeffs)
        total = pcs[0]
        for p in pcs[1:]:
            total = total + p
        assert all(np.allclose(a, b, atol=1e-14) for a, b in zip(total, g))


def test_fit_exponent():
    t = np.array([1.0, 2.0, 4.0, 8.0])
    assert abs(fit_exponent(t, 3 * t ** -2.5) + 2.5) < 1e-12
    assert math.isnan(fit_exponent(t, np.zeros(4)))


def test_weak_norm_proxy():
    g = decaying(64, 4.0)
    p = weak_norm_proxy(g, 2.0, sob, smooth_coeffs, 64)
    assert 0 < p < np.inf
    assert abs(weak_norm_proxy(3 * g, 2.0, sob, smooth_coeffs, 64) - 3 * p) < 1e-12 * p
    assert weak_norm_proxy(0 * g, 2.0, sob, smooth_coeffs, 64) == 0


# the iteration on model problems ---------------------------------------------------------

class TestScalar:
    def test_zero_target(self):
        res = run(scalar_problem(0.0))
        assert res.u == 0 and res.trace == [] and res.reason == "tol"

    @given(st.floats(-0.2, 0.5))
    @settings(max_examples=30)
    def test_root(self, g):
        res = run(scalar_problem(g), J_max=40, tol=1e-13)
        root = (-1 + math.sqrt(1 + 4 * g)) / 2
        assert abs(res.u - root) < 1e-10
        assert all(r.telescoping <= 1e-12 and r.identity <= 1e-10 for r in res.trace)

    def test_quadratic_convergence(self):
        res = run(scalar_problem(0.3), J_max=40, tol=1e-15)
        d = [r.defect for r in res.trace if r.defect > 1e-14]
        # the defect squares (up to a constant) from one step to the next
        assert all(d[k + 1] < 2 * d[k] ** 2 for k in range(len(d) - 1))

    def test_composition_residual(self):
        p = scalar_problem(0.3)
        assert p.composition_residual(0.1, 0.7) < 1e-15

    def test_divergence(self):
        p = scalar_problem(0.3)
        # an overshooting inverse: each correction doubles the error
        p.psi = lambda v, r: (3 * r, {})
        with pytest.raises(DivergenceError) as exc:
            run(p, J_max=30)
        assert len(exc.value.details["trace"]) >= 4

    def test_nonlinear_smoothing_breaks_identity(self):
        p = scalar_problem(0.3)
        p.smooth_cod = lambda x, th: x + 0.5 * x * x
        with pytest.raises(IdentityError):
            run(p, J_max=10)


def linear_problem(N, g, loss=2.0):
    """Phi(u) = A u with A = <n>^{-loss}, Psi = A^{-1} exactly."""
    A = (1.0 + modes(N) ** 2) ** (-loss / 2)
    return NMProblem(phi=lambda u: A * u, phi_prime=lambda u, h: A * h,
                     psi=lambda v, r: (r / A, {}), target=g, zero=0 * g,
                     smooth_dom=smooth_coeffs, smooth_cod=smooth_coeffs,
                     defect_norm=low_norm, dom_norm=sob)


class TestLinear:
    N = 64

    def test_defect_is_truncation(self):
        g = decaying(self.N, 3.0)
        res = run(linear_problem(self.N, g), J_max=20, tol=0.0)
        for r in res.trace:
            tail = low_norm(g - smooth_coeffs(g, theta(r.j + 1)))
            assert abs(r.defect - tail) <= 1e-10 * max(tail, 1e-300) + 1e-15
        assert res.reason == "max_iter"

    def test_norm_trace_exponent(self):
        al = ScaleParams().alpha
        g = decaying(self.N, al)
        res = run(linear_problem(self.N, g, loss=0.0), J_max=30, tol=0.0, a_list=(0.0, 2.0))
        for a in (0.0, 2.0):
            pts = [(r.theta, r.h_norms[a]) for r in res.trace if r.theta >= 4]
            assert abs(fit_exponent(*zip(*pts)) - (a - al - 1)) < 0.5

    def test_exhaustion(self):
        N = 8
        g = decaying(N, 1.0)
        p = linear_problem(N, g)
        p.exhaust_theta = float(N)
        res = run(p, J_max=50, tol=1e-30, floor=1e-13)
        # S_theta is the identity on |n| <= N once theta_{j+1} = N
        assert res.reason == "exhausted" and res.iterations == N - 1
        assert res.defect < 1e-14


def test_trace_csv(tmp_path):
    a_list = (0.0, 1.5)
    path = tmp_path / "t.csv"
    write_trace_csv([], path, a_list)
    rows = list(csv.reader(open(path)))
    assert rows == [trace_columns(a_list)]
    assert rows[0] == ["j", "theta", "h_norm_a0", "h_norm_a1.5", "defect", "cg_iterations", "wall_time"]
    res = run(linear_problem(16, decaying(16, 2.0)), J_max=5, tol=0.0, a_list=a_list)
    write_trace_csv(res.trace, path, a_list)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 5
    assert [int(r["j"]) for r in rows] == list(range(5))
    assert float(rows[2]["h_norm_a1.5"]) == res.trace[2].h_norms[1.5]


# graded norms ----------------------------------------------------------------------------

class TestGradedNorms:
    grid = TimeGrid(1.0, 64)

    def free(self, N=6):
        a = decaying(N, 1.0)
        om = modes(N).astype(float) ** 3
        return a * np.exp(1j * np.outer(self.grid.nodes, om)), om

    def test_dt_of_free_flow(self):
        u, om = self.free()
        pack = GradedNormPack(self.grid)
        assert np.max(np.abs(pack.dt(u) - 1j * om * u)) < 1e-10
        assert np.max(np.abs(pack.dt(u, 2) + om ** 2 * u)) < 1e-8

    def test_dt_of_polynomial_envelope(self):
        # w = t^2 is differentiated exactly by the carrier route
        u, om = self.free()
        t = self.grid.nodes[:, None]
        v = u * t ** 2
        pack = GradedNormPack(self.grid)
        assert np.max(np.abs(pack.dt(v) - (2 * t + 1j * om * t ** 2) * u)) < 1e-9

    def test_monotone_in_s(self):
        u, _ = self.free()
        pack = GradedNormPack(self.grid)
        vals = [pack.E((u, 0.5 * u), s) for s in (0, 1, 2, 3)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        g = (u, u[0], u[-1])
        fv = [pack.F(g, s) for s in (0, 1, 2)]
        assert all(a <= b for a, b in zip(fv, fv[1:]))


# control and Cauchy drivers ---------------------------------------------------------------

def low_field(N, amp):
    a = np.zeros(2 * N + 1, complex)
    a[N + 1] = a[N - 1] = amp / 2
    a[N + 2], a[N - 2] = 0.25j * amp, -0.25j * amp
    return PeriodicField(a)


class TestSolveControl:
    def test_zero_data(self):
        z = PeriodicField.zeros(4)
        sol = solve_control(z, z, kdv_spec(), 1.0, WINDOW, n_steps=32)
        assert sol.result.trace == [] and sol.result.reason == "tol"
        assert np.max(np.abs(sol.u.coeffs)) == 0 and np.max(np.abs(sol.f.coeffs)) == 0

    def test_airy_steering(self):
        N = 4
        sol = solve_control(low_field(N, 0.5), PeriodicField.zeros(N), airy_spec(), 1.0, WINDOW,
                            n_steps=64)
        assert sol.final_defect < 1e-6 and sol.initial_defect < 1e-6
        assert sol.result.reason in ("tol", "exhausted")
        assert sol.resolve_agreement < 1e-8
        assert sol.outside_max < 1e-10
        s = sol.summary()
        assert s["iterations"] == sol.result.iterations and s["cg_iterations"] > 0


class TestSolveIvp:
    def test_zero(self):
        sol = solve_ivp(PeriodicField.zeros(4), None, kdv_spec(), 1.0, n_steps=32)
        assert sol.result.trace == [] and np.max(np.abs(sol.u.coeffs)) == 0

    def test_airy_matches_linear_solver(self):
        N = 6
        grid = TimeGrid(1.0, 64)
        f = SpaceTimeField.from_function(lambda t, x: np.cos(2 * x) * np.sin(3 * t), grid, N)
        alpha = low_field(N, 0.5)
        sol = solve_ivp(alpha, f, airy_spec(), 1.0)
        ref = solve_L5(alpha, f, 1.0, grid=grid)
        assert low_norm(sol.u.coeffs - ref.coeffs) < 1e-10

    def test_kdv_agrees_with_fixed_point(self):
        sol = solve_ivp(low_field(4, 0.3), None, kdv_spec(), 1.0, n_steps=64)
        assert sol.result.converged
        assert sol.fixed_point_agreement < 1e-10
