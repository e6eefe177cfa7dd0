import numpy as np
import pytest
from hypothesis import given, settings

from conftest import seeds
from oracles import kdv_reference
from kdvq.mild import MildForm
from kdvq.nash_moser import low_norm, mild_cauchy
from kdvq.nonlinearity import airy_spec, kdv_spec, quasilinear_spec
from kdvq.reduction import random_trajectory
from kdvq.spectral import PeriodicField, TimeGrid

N = 8
GRID = TimeGrid(1.0, 64)


def datum(amp=0.1):
    a = np.zeros(2 * N + 1, complex)
    a[N + 1] = a[N - 1] = amp / 2
    a[N + 2], a[N - 2] = 0.3j * amp, -0.3j * amp
    return a


@pytest.fixture(params=["kdv", "quasilinear"])
def mild(request):
    spec = kdv_spec() if request.param == "kdv" else quasilinear_spec(radius=10.0)
    return MildForm(spec, GRID, N)


def test_nonlinear_zero(mild):
    z = np.zeros((GRID.n_steps + 1, 2 * N + 1), complex)
    assert np.max(np.abs(mild.nonlinear(z))) == 0


def test_free_flow_has_zero_residual():
    mf = MildForm(airy_spec(), GRID, N)
    u = mf.free(datum())
    assert low_norm(mf.residual(u)) < 1e-14


@given(seeds)
@settings(max_examples=10)
def test_residual_prime_matches_difference(seed):
    rng = np.random.default_rng(seed)
    mf = MildForm(kdv_spec(), GRID, N)
    u = random_trajectory(rng, GRID, N, 0.1)
    h = random_trajectory(rng, GRID, N, 0.1)
    eps = 1e-4
    fd = (mf.residual(u + eps * h) - mf.residual(u - eps * h)) / (2 * eps)
    ex = mf.residual_prime(u, h)
    assert low_norm(fd - ex) < 1e-9 * max(low_norm(ex), 1.0)


def test_residual_second_symmetric(mild):
    rng = np.random.default_rng(3)
    u, h1, h2 = (random_trajectory(rng, GRID, N, 0.1) for _ in range(3))
    a = mild.residual_second(u, h1, h2)
    b = mild.residual_second(u, h2, h1)
    assert low_norm(a - b) < 1e-9 * low_norm(a)


@pytest.mark.parametrize("name", ["kdv", "quasilinear"])
def test_solve_linearized_consistent(name):
    # the solver and residual_prime discretize N'(v)h differently; the gap
    # closes at high order under refinement
    errs = []
    for M in (64, 128):
        grid = TimeGrid(1.0, M)
        spec = kdv_spec() if name == "kdv" else quasilinear_spec(radius=10.0)
        mf = MildForm(spec, grid, N)
        rng = np.random.default_rng(5)
        v = random_trajectory(rng, grid, N, 0.1)
        f = random_trajectory(rng, grid, N, 0.5)
        h = mf.solve_linearized(v, datum(1.0), forcing=f)
        assert np.linalg.norm(h[0] - datum(1.0)) < 1e-14
        errs.append(low_norm(mf.residual_prime(v, h) - mf.duhamel(f)))
    assert errs[1] < 1e-5
    assert errs[0] / errs[1] > 8


def test_fixed_point_matches_reference():
    mf = MildForm(kdv_spec(), GRID, N)
    u, its = mild_cauchy(mf, datum(0.3))
    ref = kdv_reference(datum(0.3), 1.0, 1.0, GRID.nodes[::8])
    assert its > 1
    assert np.max(np.abs(u[::8] - ref)) < 1e-6


def test_fixed_point_linear_is_free():
    mf = MildForm(airy_spec(), GRID, N)
    u, its = mild_cauchy(mf, datum())
    assert its == 1
    assert low_norm(u - mf.free(datum())) == 0


def test_reference_oracles_agree():
    # the two independent KdV references differ by the O(dt^2) splitting error
    from oracles import kdv_split_step
    t = GRID.nodes[::16]
    a = kdv_reference(datum(0.3), 1.0, 1.0, t)
    d = [np.max(np.abs(a - kdv_split_step(datum(0.3), 1.0, 1.0, t, steps_per_unit=k))) for k in (1000, 2000)]
    assert d[1] < 3e-8
    assert d[0] / d[1] > 3
