import numpy as np
import pytest

from kkpdelay.delay import DelayLine, history_from_function, transport_residual
from kkpdelay.energy import rho_integral
from kkpdelay.grid import Grid

SHAPE = (9, 8)


def test_constant_history():
    dl = DelayLine.init(2.5, SHAPE, 5, 1.0, 0.2)
    assert dl.n_rho == 5
    assert np.all(dl.slices() == 2.5)


def test_field_history_constant_in_rho():
    u0 = np.random.default_rng(0).standard_normal(SHAPE)
    dl = DelayLine.init(u0, SHAPE, 4, 2.0, 0.5)
    for rho in (0.0, 0.3, 0.5, 1.0):
        assert np.array_equal(dl.sample(rho), u0)


def test_listed_history_stored_bitwise():
    rng = np.random.default_rng(1)
    fields = [rng.standard_normal(SHAPE) for _ in range(7)]
    dl = DelayLine.init(fields, SHAPE, 6, 1.2, 0.2)
    for k, f in enumerate(fields):
        assert np.array_equal(dl.sample(dl.rho[k]), f)
    with pytest.raises(ValueError):
        DelayLine.init(fields[:-1], SHAPE, 6, 1.2, 0.2)


def test_u0_overrides_slice_zero_and_bad_inputs():
    u0 = np.ones(SHAPE)
    dl = DelayLine.init(0.0, SHAPE, 3, 0.3, 0.1, u0=u0)
    assert np.array_equal(dl.slice(0), u0) and np.all(dl.slice(3) == 0)
    with pytest.raises(ValueError):
        DelayLine.init(0.0, SHAPE, 3, 1.0, 0.1)           # delay != n_rho*dt
    with pytest.raises(ValueError):
        DelayLine.init(np.nan, SHAPE, 3, 0.3, 0.1)
    with pytest.raises(ValueError):
        dl.sample(1.5)


def test_exact_shift_after_n_rho_advances():
    rng = np.random.default_rng(2)
    n_rho = 5
    dl = DelayLine.init(0.0, SHAPE, n_rho, 1.0, 0.2)
    inputs = [rng.standard_normal(SHAPE) for _ in range(40)]
    for n, u in enumerate(inputs):
        dl.advance(u)
        if n >= n_rho:
            assert np.array_equal(dl.sample(1.0), inputs[n - n_rho])
        assert dl.slices().shape == (n_rho + 1,) + SHAPE       # memory bound


def test_constant_inputs_keep_constant():
    dl = DelayLine.init(3.0, SHAPE, 4, 1.0, 0.25)
    for _ in range(10):
        dl.advance(np.full(SHAPE, 3.0))
    assert np.all(dl.slices() == 3.0)


def test_alternating_inputs_two_step_lag():
    A, B = np.zeros(SHAPE), np.ones(SHAPE)
    dl = DelayLine.init(A, SHAPE, 2, 1.0, 0.5)
    seen = []
    for n in range(8):
        dl.advance(B if n % 2 == 0 else A)
        seen.append(dl.sample(1.0)[0, 0])
    # inputs B,A,B,A,... appear at rho = 1 two steps later
    assert seen[2:] == [1.0, 0.0, 1.0, 0.0, 1.0, 0.0]


def test_transport_residual():
    rng = np.random.default_rng(3)
    dt = 0.1
    dl = DelayLine.init([rng.standard_normal(SHAPE) for _ in range(5)], SHAPE, 4, 0.4, dt)
    prev = dl.copy()
    dl.advance(rng.standard_normal(SHAPE))
    assert transport_residual(prev, dl, dt) <= 1e-12

    const = DelayLine.init(1.0, SHAPE, 4, 0.4, dt)
    before = const.copy()
    const.advance(np.ones(SHAPE))
    assert transport_residual(before, const, dt) == 0.0

    corrupted = dl.copy()
    delta = 1e-3
    corrupted.slice(2)[4, 4] += delta
    res = transport_residual(prev, corrupted, dt)
    assert res >= 0.99 * dl.delay * delta / dt


def test_copy_is_independent():
    dl = DelayLine.init(0.0, SHAPE, 3, 0.3, 0.1)
    c = dl.copy()
    dl.advance(np.ones(SHAPE))
    assert np.all(c.slices() == 0.0)
    assert dl.last_discarded is not None and np.all(dl.last_discarded == 0.0)


def test_history_energy_from_slices_matches_full_history():
    """The rho-integral over the buffer equals the time integral over the saved past."""
    g = Grid(10, 10, 1.0)
    n_rho, h = 8, 2.0
    dt = h / n_rho
    w = np.random.default_rng(4).uniform(0, 1, g.shape)
    hist = history_from_function(lambda x, y, t: np.sin(np.pi * x) * np.cos(t) * y, g, n_rho, h)
    dl = DelayLine.init(hist, g.shape, n_rho, h, dt)
    saved = list(reversed(hist))             # saved[m] = u(t_m), t_m = -h + m dt
    rng = np.random.default_rng(5)
    for _ in range(12):
        u = rng.standard_normal(g.shape)
        dl.advance(u)
        saved.append(u)
    from kkpdelay.grid import integral

    window = saved[-(n_rho + 1):]           # u(t - h), ..., u(t)
    full = sum(dt / h * integral(w * (0.5 * (a + b)) ** 2, g) for a, b in zip(window[:-1], window[1:]))
    assert rho_integral(dl, w, g, "midpoint") == pytest.approx(full, rel=1e-13)


def test_dump_csv(tmp_path):
    g = Grid(8, 8, 1.0)
    dl = DelayLine.init(1.0, g.shape, 2, 1.0, 0.5)
    path = tmp_path / "d.csv"
    dl.dump_csv(path, g.x, g.y, header_comment="config_hash=0")
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# config_hash=0", "rho,x,y,value"]
    assert len(lines) == 2 + 3 * 64
