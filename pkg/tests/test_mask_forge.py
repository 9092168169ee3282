import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvnoise import mask_forge as mf
from tvnoise.analysis import ensemble_low_freq_ratio

CFG = mf.AnnealConfig()


def brute_energy(values, sigma_s, sigma_v):
    """Double loop over ordered pixel pairs, toroidal distance spelled out."""
    h, w = values.shape
    total = 0.0
    for y1 in range(h):
        for x1 in range(w):
            for y2 in range(h):
                for x2 in range(w):
                    if (y1, x1) == (y2, x2):
                        continue
                    dy = min(abs(y1 - y2), h - abs(y1 - y2))
                    dx = min(abs(x1 - x2), w - abs(x1 - x2))
                    dv = abs(values[y1, x1] - values[y2, x2])
                    total += math.exp(-(dy * dy + dx * dx) / sigma_s**2 - math.sqrt(dv) / sigma_v**2)
    return total


def swapped(values, i, j):
    flat = values.ravel().copy()
    flat[i], flat[j] = flat[j], flat[i]
    return flat.reshape(values.shape)


class TestEnergy:
    def test_equal_pair(self):
        cfg = mf.AnnealConfig(sigma_s=1.0, sigma_v=1.0)
        assert mf.mask_energy(np.array([[0.7, 0.7]]), cfg) == pytest.approx(2 * math.exp(-1), rel=1e-15)

    def test_matches_double_loop(self, rng):
        values = rng.standard_normal((4, 5))
        assert mf.mask_energy(values, CFG) == pytest.approx(brute_energy(values, 2.1, 1.0), rel=1e-12)

    def test_adjacent_equal_values_raise_energy(self):
        values = np.arange(16, dtype=float).reshape(4, 4) * 0.37
        values[2, 2] = values[0, 0]
        e_far = mf.mask_energy(values, CFG)
        # (0,0) and (2,2) are 2*sqrt(2) apart; move the duplicate next to (0,0)
        e_near = mf.mask_energy(swapped(values, 10, 1), CFG)
        assert e_near > e_far

    def test_telescoping(self, rng):
        values = rng.standard_normal((6, 6))
        base = mf.mask_energy(values, CFG)
        current = values
        total = base
        for _ in range(40):
            i, j = rng.choice(36, 2, replace=False)
            total += mf.swap_delta_energy(current, int(i), int(j), CFG)
            current = swapped(current, i, j)
        assert total == pytest.approx(mf.mask_energy(current, CFG), rel=1e-9)

    def test_relabel_invariant(self, rng):
        values = rng.standard_normal((5, 5))
        rolled = np.roll(values, (2, 3), axis=(0, 1))
        assert mf.mask_energy(rolled, CFG) == pytest.approx(mf.mask_energy(values, CFG), rel=1e-12)
        assert mf.mask_energy(values.T, CFG) == pytest.approx(mf.mask_energy(values, CFG), rel=1e-12)

    def test_single_pixel_rejected(self):
        with pytest.raises(ValueError):
            mf.mask_energy(np.ones((1, 1)), CFG)


class TestSwapDelta:
    def test_equal_values(self, rng):
        values = rng.standard_normal((4, 4))
        values[3, 1] = values[0, 2]
        assert mf.swap_delta_energy(values, 2, 13, CFG) == 0.0

    def test_matches_recompute(self, rng):
        values = rng.standard_normal((8, 8))
        for _ in range(20):
            i, j = (int(k) for k in rng.choice(64, 2, replace=False))
            full = mf.mask_energy(swapped(values, i, j), CFG) - mf.mask_energy(values, CFG)
            delta = mf.swap_delta_energy(values, i, j, CFG)
            assert delta == pytest.approx(full, rel=1e-9, abs=1e-9 * mf.mask_energy(values, CFG))

    def test_symmetric(self, rng):
        values = rng.standard_normal((8, 8))
        assert mf.swap_delta_energy(values, 3, 50, CFG) == mf.swap_delta_energy(values, 50, 3, CFG)

    def test_errors(self, rng):
        values = rng.standard_normal((4, 4))
        with pytest.raises(IndexError):
            mf.swap_delta_energy(values, 0, 16, CFG)
        with pytest.raises(IndexError):
            mf.swap_delta_energy(values, -1, 2, CFG)
        with pytest.raises(ValueError):
            mf.swap_delta_energy(values, 5, 5, CFG)


class TestAnneal:
    def test_zero_sweeps_is_initial_draw(self):
        cfg = mf.AnnealConfig(sweeps=0, seed=9)
        mask = mf.anneal_mask(8, cfg)
        assert np.array_equal(mask.values, np.random.default_rng(9).standard_normal((8, 8)))

    def test_deterministic(self):
        cfg = mf.AnnealConfig(sweeps=2000, seed=3)
        a = mf.anneal_mask(8, cfg)
        b = mf.anneal_mask(8, cfg)
        assert a.values.tobytes() == b.values.tobytes()

    @pytest.mark.parametrize("mode", [mf.BLUE, mf.RED])
    def test_values_are_a_permutation(self, mode):
        cfg = mf.AnnealConfig(sweeps=3200, seed=4)
        initial = mf.anneal_mask(8, mf.AnnealConfig(sweeps=0, seed=4)).values
        out = mf.anneal_mask(8, cfg, mode).values
        assert np.array_equal(np.sort(out.ravel()), np.sort(initial.ravel()))
        assert not np.array_equal(out, initial)

    @pytest.mark.parametrize("mode,sign", [(mf.BLUE, 1), (mf.RED, -1)])
    def test_best_trace_monotone(self, mode, sign):
        mask = mf.anneal_mask(8, mf.AnnealConfig(sweeps=3000, seed=5), mode)
        steps = np.diff(mask.trace) * sign
        assert len(mask.trace) == 3000
        assert np.all(steps <= 0)
        # trace ends at the energy of the returned mask
        assert mask.trace[-1] == pytest.approx(mf.mask_energy(mask.values, CFG), rel=1e-9)

    def test_blue_lowers_low_frequencies(self):
        cfg = mf.AnnealConfig(sweeps=50 * 256, seed=11)
        initial = mf.anneal_mask(16, mf.AnnealConfig(sweeps=0, seed=11)).values
        blue = mf.anneal_mask(16, cfg).values
        # single masks are noisy, so compare at the coarse cutoff
        assert ensemble_low_freq_ratio(blue[None], 0.25) < ensemble_low_freq_ratio(initial[None], 0.25)

    def test_initial_draw_moments(self):
        for seed in range(20):
            v = mf.anneal_mask(16, mf.AnnealConfig(sweeps=0, seed=seed)).values
            assert abs(v.mean()) < 5 / 16
            assert abs(v.var() - 1) < 0.2

    def test_one_dimensional_shape(self):
        mask = mf.anneal_mask(64, mf.AnnealConfig(sweeps=500), shape=(1, 64))
        assert mask.shape == (1, 64)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            mf.anneal_mask(1, CFG)
        with pytest.raises(ValueError):
            mf.anneal_mask(8, CFG, mode="green")
        with pytest.raises(ValueError):
            mf.AnnealConfig(sigma_s=0)
        with pytest.raises(ValueError):
            mf.AnnealConfig(temp_decay=1.5)

    def test_decay_reaches_final_temperature(self):
        cfg = mf.AnnealConfig(sweeps=1000, temp0=2.0)
        assert cfg.temp0 * cfg.decay() ** 999 == pytest.approx(mf.FINAL_TEMPERATURE, rel=1e-9)


class TestEnsemble:
    def test_threads_do_not_change_result(self):
        cfg = mf.AnnealConfig(sweeps=500, seed=2)
        a = mf.stack(mf.anneal_ensemble(8, 6, cfg))
        b = mf.stack(mf.anneal_ensemble(8, 6, cfg, threads=3))
        assert np.array_equal(a, b)

    def test_distinct_seeds(self):
        seeds = mf.ensemble_seeds(0, 100)
        assert len(set(seeds)) == 100
        assert seeds == mf.ensemble_seeds(0, 100)


def _metropolis_reference(cfg, shape, sign):
    """Plain-Python replay of the proposal stream with full energy recomputation."""
    n = shape[0] * shape[1]
    rng = np.random.default_rng(cfg.seed)
    cur = rng.standard_normal(shape)
    first = rng.integers(0, n, size=cfg.sweeps)
    second = rng.integers(0, n - 1, size=cfg.sweeps)
    second = second + (second >= first)
    u = rng.random(cfg.sweeps)
    energy = mf.mask_energy(cur, cfg)
    best, best_e = cur, energy
    temp = cfg.temp0
    trace = []
    for k in range(cfg.sweeps):
        cand = swapped(cur, first[k], second[k])
        e_new = mf.mask_energy(cand, cfg)
        score = (e_new - energy) * sign
        if score < 0 or u[k] < math.exp(-score / temp):
            cur, energy = cand, e_new
            if energy * sign < best_e * sign:
                best, best_e = cur, energy
        trace.append(best_e)
        temp *= cfg.decay()
    return best, np.array(trace)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), red=st.booleans())
def test_metropolis_rule_matches_reference(seed, red):
    # warm start so both acceptance branches are exercised
    cfg = mf.AnnealConfig(sweeps=150, temp0=5.0, temp_decay=0.98, seed=seed)
    mode, sign = (mf.RED, -1.0) if red else (mf.BLUE, 1.0)
    best, trace = _metropolis_reference(cfg, (4, 4), sign)
    mask = mf.anneal_mask(4, cfg, mode)
    assert np.array_equal(mask.values, best)
    np.testing.assert_allclose(mask.trace, trace, rtol=1e-9)
