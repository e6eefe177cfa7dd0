import struct

import numpy as np
import pytest
from hypothesis import given

from conftest import rand_coeffs, seeds
from kdvq.fieldio import from_bytes, load_binary, load_json, save_binary, save_json, to_bytes
from kdvq.spectral import PeriodicField, SpaceTimeField, TimeGrid


def trajectory(rng, N=5, M=8, real=True):
    c = np.stack([rand_coeffs(rng, N, real=real) for _ in range(M + 1)])
    return SpaceTimeField(TimeGrid(0.75, M), c, real)


def same(a, b):
    assert type(a) is type(b) and a.n_max == b.n_max and a.is_real == b.is_real
    assert np.array_equal(a.coeffs, b.coeffs)
    if isinstance(a, SpaceTimeField):
        assert a.grid.T == b.grid.T and a.grid.n_steps == b.grid.n_steps


@given(seeds)
def test_binary_round_trip(seed):
    rng = np.random.default_rng(seed)
    for u in (PeriodicField(rand_coeffs(rng, 7)), PeriodicField(rand_coeffs(rng, 3, real=False), False),
              trajectory(rng), trajectory(rng, real=False)):
        same(u, from_bytes(to_bytes(u)))


def test_layout_decoded_by_hand():
    rng = np.random.default_rng(0)
    u = trajectory(rng, N=2, M=3)
    buf = to_bytes(u)
    assert buf[:8] == b"KDVQFLD1"
    kind, n_max, is_real, n_snap, T = struct.unpack("<4qd", buf[8:48])
    assert (kind, n_max, is_real, n_snap, T) == (2, 2, 1, 4, 0.75)
    size = n_snap * 5
    vals = struct.unpack(f"<{2 * size}d", buf[48:])
    assert len(buf) == 48 + 16 * size
    # column-major: snapshot index runs fastest
    assert vals[1] == u.coeffs[1, 0].real and vals[n_snap] == u.coeffs[0, 1].real
    assert vals[size + 2] == u.coeffs[2, 0].imag


def test_periodic_header():
    u = PeriodicField(rand_coeffs(np.random.default_rng(1), 4))
    kind, n_max, is_real, n_snap, T = struct.unpack("<4qd", to_bytes(u)[8:48])
    assert (kind, n_max, n_snap, T) == (1, 4, 1, 0.0)


def test_bad_magic():
    buf = to_bytes(PeriodicField(rand_coeffs(np.random.default_rng(2), 3)))
    with pytest.raises(ValueError):
        from_bytes(b"KDVQFLD2" + buf[8:])


def test_files(tmp_path):
    rng = np.random.default_rng(3)
    for u in (PeriodicField(rand_coeffs(rng, 6)), trajectory(rng)):
        save_binary(u, tmp_path / "f.kdvq")
        same(u, load_binary(tmp_path / "f.kdvq"))
        save_json(u, tmp_path / "f.json")
        same(u, load_json(tmp_path / "f.json"))


def test_json_count_mismatch(tmp_path):
    (tmp_path / "f.json").write_text('{"n_max": 2, "is_real": false, "re": [1, 2], "im": [0, 0]}')
    with pytest.raises(ValueError):
        load_json(tmp_path / "f.json")
