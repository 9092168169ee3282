import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvnoise import analysis as an
from tvnoise import mask_forge as mf


def naive_dft_power(grid):
    h, w = grid.shape
    out = np.zeros((h, w))
    for u in range(h):
        for v in range(w):
            acc = 0j
            for y in range(h):
                for x in range(w):
                    acc += grid[y, x] * np.exp(-2j * np.pi * (u * y / h + v * x / w))
            out[u, v] = abs(acc) ** 2
    out[0, 0] = 0
    return np.fft.fftshift(out)


class TestPowerSpectrum:
    def test_constant(self):
        assert np.all(an.power_spectrum(np.full((8, 8), 3.0)) == 0)

    def test_cosine_two_bins(self):
        y, x = np.mgrid[0:16, 0:16]
        spec = an.power_spectrum(np.cos(2 * np.pi * 3 * x / 16))
        nz = np.argwhere(spec > 1e-9)
        assert sorted(map(tuple, nz)) == [(8, 5), (8, 11)]
        assert spec[8, 5] == pytest.approx(spec[8, 11])

    def test_dc_centered(self, rng):
        spec = an.power_spectrum(rng.standard_normal((8, 6)) + 5)
        assert spec[4, 3] == 0

    def test_naive_dft(self, rng):
        grid = rng.standard_normal((8, 8))
        np.testing.assert_allclose(an.power_spectrum(grid), naive_dft_power(grid), rtol=1e-10, atol=1e-10)

    def test_size(self):
        with pytest.raises(ValueError):
            an.power_spectrum(np.ones((1, 8)))


@settings(max_examples=50, deadline=None)
@given(h=st.integers(2, 12), w=st.integers(2, 12), seed=st.integers(0, 2**32 - 1))
def test_parseval(h, w, seed):
    grid = np.random.default_rng(seed).standard_normal((h, w)) + 2.0
    total = an.power_spectrum(grid).sum() / (h * w)
    assert total == pytest.approx(((grid - grid.mean()) ** 2).sum(), rel=1e-9)


class TestRadial:
    def test_single_annulus(self):
        y, x = np.mgrid[0:16, 0:16]
        profile = an.radial_average(an.power_spectrum(np.cos(2 * np.pi * 4 * x / 16)))
        assert np.count_nonzero(profile > 1e-9) == 1 and profile[4] > 0

    def test_unit_width_annuli(self):
        r = an.radii((16, 16))
        assert r[8, 8] == 0 and r[8, 9] == 1 and r[9, 9] == 1 and r[8, 15] == 7 and r[0, 0] == 11

    def test_white_is_flat(self):
        grids = mf.stack(mf.white_ensemble(16, 10_000, seed=2))
        profile = an.radial_average(an.mean_power_spectrum(grids))
        band = profile[2:16 // 2 - 1]
        assert band.max() / band.min() < 1.3

    def test_blue_profile_rises(self, blue16):
        profile = an.radial_average(an.mean_power_spectrum(blue16[0]))
        plateau = profile[5:9].mean()
        assert profile[1] < plateau and profile[1] < profile[2] < profile[3]


class TestLowFreqRatio:
    def test_flat(self):
        assert an.low_freq_ratio(np.ones(12), 0.125, 16) == 1.0

    def test_size_inferred(self):
        profile = an.radial_average(np.ones((16, 16)))
        assert an.low_freq_ratio(profile) == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            an.low_freq_ratio(np.ones(12), 0.5)
        with pytest.raises(ValueError):
            an.low_freq_ratio(np.ones(12), 1 / 16, 16)

    def test_white(self, white16):
        assert 0.8 <= an.ensemble_low_freq_ratio(white16) <= 1.25

    def test_ordering(self, blue16, white16, red16):
        b = an.ensemble_low_freq_ratio(blue16[0])
        w = an.ensemble_low_freq_ratio(white16)
        r = an.ensemble_low_freq_ratio(red16[0])
        assert b < 0.3 < w < r and r > 3


class TestHarmonics:
    def test_bins(self):
        bins = an.grid_harmonic_bins((32, 32), 2)
        assert len(bins) == 3 and (16, 16) not in bins
        assert set(bins) == {(16, 0), (0, 16), (0, 0)}

    def test_contrast(self):
        spec = np.ones((8, 8))
        spec[2, 3] = 10
        assert an.neighborhood_contrast(spec, [(2, 3), (0, 0)]).tolist() == pytest.approx([10, 1])


class TestDistances:
    def test_identical(self, rng):
        a = rng.standard_normal((50, 3))
        assert an.sliced_wasserstein(a, a) == 0 and an.energy_distance(a, a) == pytest.approx(0, abs=1e-12)

    def test_point_masses(self):
        assert an.sliced_wasserstein(np.full(10, -1.0), np.full(10, 1.0)) == 2
        assert an.sliced_wasserstein(np.zeros((4, 1)), np.ones((4, 1))) == 1

    def test_unequal_sizes(self):
        assert an.wasserstein_1d([0.0, 1.0], [0.0, 0.0, 1.0, 1.0]) == pytest.approx(0)
        assert an.wasserstein_1d([0.0], [1.0, 3.0]) == pytest.approx(2)

    def test_per_projection_quantiles(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((10_000, 3))
        b = rng.standard_normal((10_000, 3)) * 1.5 + 0.2
        dirs = an._directions(3, 64, 0)
        q = (np.arange(10_000) + 0.5) / 10_000
        ref = np.mean([np.mean(np.abs(np.quantile(a @ d, q, method="inverted_cdf")
                                      - np.quantile(b @ d, q, method="inverted_cdf"))) for d in dirs])
        assert an.sliced_wasserstein(a, b, 64, 0) == pytest.approx(ref, rel=1e-9)

    def test_energy_distance_known(self):
        # 1-D point masses at 0 and 1: 2*1 - 0 - 0
        assert an.energy_distance(np.zeros(5), np.ones(3)) == pytest.approx(2)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            an.sliced_wasserstein(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))
        with pytest.raises(ValueError):
            an.energy_distance(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))
