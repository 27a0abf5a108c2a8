import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from frepel.energy import (
    EnergyReport,
    default_epsilon,
    energy,
    local_time,
    local_time_delta,
    local_times,
    mollified_delta,
)
from frepel.errors import DomainError
from frepel.fbm import PathBundle, RngStream, TimeGrid, sample_path_cholesky

# direct double sum over ordered pairs (independent of the vectorized code)
def brute_local_time(x, dt, eps, diagonal=False):
    n, d = x.shape
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j and not diagonal:
                continue
            r2 = float(np.sum((x[i] - x[j]) ** 2))
            total += (2 * math.pi * eps) ** (-d / 2) * math.exp(-r2 / (2 * eps))
    return dt * dt * total


def random_path(seed, n=16, d=2, h=0.5, horizon=1.0):
    return sample_path_cholesky(h, TimeGrid(n, horizon), d, RngStream(seed))


def test_mollifier_values():
    assert mollified_delta([0.0], 1 / (2 * math.pi)) == pytest.approx(1.0, rel=1e-15)
    assert mollified_delta([0.0, 0.0], 1.0) == pytest.approx(0.1591549, abs=1e-7)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4), st.floats(0.01, 10))
def test_mollifier_even(x, eps):
    x = np.array(x)
    assert mollified_delta(x, eps) == mollified_delta(-x, eps)


def test_mollifier_at_origin_decreases_in_epsilon():
    eps = np.geomspace(1e-3, 1e3, 25)
    vals = [mollified_delta(np.zeros(2), e) for e in eps]
    assert np.all(np.diff(vals) < 0)


def test_mollifier_rejects_bad_width():
    for eps in (0.0, -1.0, float("nan")):
        with pytest.raises(DomainError):
            mollified_delta([0.0], eps)


def test_degenerate_zero_path_single_step():
    # two points at the same place, dt = 1, eps = 1/(2 pi): two ordered pairs
    pts = np.zeros((1, 2, 1))
    assert local_times(pts, 1.0, 1 / (2 * math.pi))[0] == pytest.approx(2.0, rel=1e-15)


def test_straight_line_local_time():
    path = PathBundle(0.5, TimeGrid(2, 2.0), 1, np.array([[0.0], [1.0], [2.0]]))
    rep = local_time(path, 1.0)
    expected = 2 * (2 * math.exp(-0.5) + math.exp(-2.0)) / math.sqrt(2 * math.pi)
    assert rep.local_time == pytest.approx(expected, rel=1e-14)
    # closed form evaluates to 1.0758648...
    assert rep.local_time == pytest.approx(1.0758648311, abs=1e-10)
    assert rep.with_coupling(0.3).energy == pytest.approx(0.3 * expected, rel=1e-14)
    assert energy(0.3, rep.local_time) == pytest.approx(0.3 * expected, rel=1e-14)


def test_diagonal_term_is_path_independent():
    for seed in range(3):
        path = random_path(seed, n=12, d=3)
        eps = 0.2
        diff = local_time(path, eps, True).local_time - local_time(path, eps, False).local_time
        expected = 13 * path.grid.dt**2 * (2 * math.pi * eps) ** -1.5
        assert diff == pytest.approx(expected, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 20), st.integers(1, 3), st.floats(0.01, 2.0),
       st.booleans())
def test_local_time_matches_brute_force(seed, n, d, eps, diag):
    path = random_path(seed, n=n, d=d, h=0.3)
    got = local_time(path, eps, diag).local_time
    assert got == pytest.approx(brute_local_time(path.positions, path.grid.dt, eps, diag), rel=1e-12)
    assert got >= 0


def test_long_path_uses_compensated_sum():
    path = random_path(1, n=1100, d=1)
    eps = default_epsilon(0.5, path.grid)
    fast = float(local_times(path.positions[None], path.grid.dt, eps)[0])
    assert local_time(path, eps).local_time == pytest.approx(fast, rel=1e-11)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_translation_rotation_and_reversal_invariance(seed):
    rng = np.random.default_rng(seed)
    path = random_path(seed, n=16, d=3, h=0.6)
    eps = 0.05
    base = local_time(path, eps).local_time
    rot = special_ortho_group.rvs(3, random_state=rng)
    moved = path.positions @ rot.T + rng.normal(size=3) * 10
    assert local_time(path.with_positions(moved), eps).local_time == pytest.approx(base, rel=1e-12)
    assert local_time(path.with_positions(path.positions[::-1]), eps).local_time == pytest.approx(
        base, rel=1e-12)


def test_batch_agrees_with_single():
    grid = TimeGrid(10, 1.0)
    paths = [sample_path_cholesky(0.4, grid, 2, RngStream(s)) for s in range(5)]
    batch = local_times(np.stack([p.positions for p in paths]), grid.dt, 0.1)
    single = [local_time(p, 0.1).local_time for p in paths]
    np.testing.assert_allclose(batch, single, rtol=1e-14)


def test_delta_noop_is_zero():
    path = random_path(2)
    assert local_time_delta(path, 0.1, 5, path.positions[5]) == 0.0


def test_delta_far_move_removes_old_pairs():
    path = random_path(3, n=16, d=2)
    eps, k = 0.1, 7
    old = local_time(path, eps).local_time
    moved = path.positions.copy()
    moved[k] = [1e6, 1e6]
    without_k = local_time(path.with_positions(moved), eps).local_time
    delta = local_time_delta(path, eps, k, moved[k])
    assert delta == pytest.approx(without_k - old, rel=1e-12)
    assert delta < 0


def test_incremental_updates_match_full_recomputation():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 4))
        path = random_path(trial, n=n, d=d, h=float(rng.uniform(0.1, 0.9)))
        eps = float(rng.uniform(0.01, 1.0))
        k = int(rng.integers(0, n + 1))
        new = path.positions[k] + rng.normal(scale=0.5, size=d)
        moved = path.positions.copy()
        moved[k] = new
        full = local_time(path.with_positions(moved), eps).local_time - local_time(path, eps).local_time
        inc = local_time_delta(path, eps, k, new)
        scale = max(abs(full), local_time(path, eps).local_time)
        worst = max(worst, abs(inc - full) / scale)
    assert worst < 1e-9


def test_diagonal_convention_cancels_in_energy_differences():
    p, q = random_path(5, d=2), random_path(6, d=2)
    for eps in (0.01, 0.3):
        a = local_time(p, eps, True).local_time - local_time(q, eps, True).local_time
        b = local_time(p, eps, False).local_time - local_time(q, eps, False).local_time
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_delta_index_out_of_range():
    path = random_path(0, n=4)
    with pytest.raises(IndexError):
        local_time_delta(path, 0.1, 5, [0.0, 0.0])


def test_energy_examples_and_validation():
    assert energy(0.0, 123.0) == 0.0
    assert energy(1.0, 2.5) == 2.5
    with pytest.raises(DomainError):
        energy(-0.1, 1.0)
    with pytest.raises(DomainError):
        energy(0.1, -1.0)


def test_local_time_continuous_in_epsilon():
    path = random_path(9, n=16, d=2, h=0.4)
    eps = np.geomspace(1.0, 1e-3, 40)
    vals = np.array([local_time(path, e).local_time for e in eps])
    assert np.all(np.isfinite(vals))
    fine = local_time(path, eps[5] * (1 + 1e-8)).local_time
    assert fine == pytest.approx(vals[5], rel=1e-6)


def test_default_epsilon_matches_grid():
    grid = TimeGrid(32, 4.0)
    assert default_epsilon(0.3, grid) == pytest.approx(grid.dt**0.6)
    assert default_epsilon(0.3, grid, 2.0) == pytest.approx(2 * grid.dt**0.6)


def test_report_records_convention():
    rep = local_time(random_path(1), 0.5, True)
    assert isinstance(rep, EnergyReport)
    assert rep.diagonal_included and rep.epsilon == 0.5 and rep.energy == 0.0
