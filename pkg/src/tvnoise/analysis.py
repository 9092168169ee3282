"""Power spectra, radial profiles and distribution distances."""

import numpy as np


def power_spectrum(grid):
    """|DFT|^2 with the DC bin zeroed, shifted so DC sits at (H//2, W//2)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or min(grid.shape) < 2:
        raise ValueError("power_spectrum needs an H x W grid with H, W >= 2")
    spec = np.abs(np.fft.fft2(grid)) ** 2
    spec[0, 0] = 0.0
    return np.fft.fftshift(spec)


def mean_power_spectrum(grids):
    """Ensemble average of :func:`power_spectrum` over a stack of grids."""
    grids = np.asarray(grids, dtype=np.float64)
    if grids.ndim == 2:
        grids = grids[None]
    spec = np.abs(np.fft.fft2(grids)) ** 2
    spec[:, 0, 0] = 0.0
    return np.fft.fftshift(spec.mean(axis=0))


def radii(shape):
    h, w = shape
    y, x = np.indices((h, w))
    return np.floor(np.hypot(y - h // 2, x - w // 2)).astype(int)


def radial_average(spectrum):
    """Mean energy per unit-width annulus; index is the integer radius."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    r = radii(spectrum.shape).ravel()
    sums = np.bincount(r, weights=spectrum.ravel())
    counts = np.bincount(r)
    return sums / np.maximum(counts, 1)


def low_freq_ratio(profile, cutoff=1 / 8, size=None):
    """Mean profile below ``cutoff * size`` over mean profile above it.

    ``size`` is the grid side the profile came from; it defaults to twice
    the largest radius that still fits inside the grid, which is exact for
    profiles returned by :func:`radial_average` on square grids. The DC
    radius is excluded and the upper band stops at ``size // 2``.
    """
    if not 0 < cutoff < 0.5:
        raise ValueError("cutoff must lie in (0, 0.5)")
    profile = np.asarray(profile, dtype=np.float64)
    if size is None:
        size = int(round((len(profile) - 1) / np.sqrt(2))) * 2
    edge = cutoff * size
    r = np.arange(len(profile))
    low = profile[(r >= 1) & (r < edge)]
    high = profile[(r >= edge) & (r <= size // 2)]
    if low.size == 0 or high.size == 0:
        raise ValueError("empty frequency band for this cutoff")
    return float(low.mean() / high.mean())


def ensemble_low_freq_ratio(grids, cutoff=1 / 8):
    grids = np.asarray(grids)
    return low_freq_ratio(radial_average(mean_power_spectrum(grids)), cutoff, grids.shape[-1])


def neighborhood_contrast(spectrum, bins):
    """Energy of each bin over the median of its 8 (toroidal) neighbours."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    h, w = spectrum.shape
    scale = max(spectrum.mean(), np.finfo(float).tiny)
    out = []
    for y, x in bins:
        ring = [spectrum[(y + dy) % h, (x + dx) % w]
                for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
        out.append(spectrum[y, x] / (np.median(ring) + 1e-12 * scale))
    return np.array(out)


def grid_harmonic_bins(shape, tile):
    """Centered-spectrum coordinates of the harmonics of a ``tile`` period.

    DC is excluded. Only grids that hold at least two tiles per axis have
    harmonics distinct from their sampling grid.
    """
    h, w = shape
    step_y, step_x = h // tile, w // tile
    bins = []
    for y in range(0, h, step_y):
        for x in range(0, w, step_x):
            if (y, x) != (0, 0):
                bins.append(((y + h // 2) % h, (x + w // 2) % w))
    return bins


def sliced_wasserstein(a, b, projections=64, seed=0):
    """Mean 1-D Wasserstein-1 distance over random unit directions."""
    a = _as_samples(a)
    b = _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets differ in dimension")
    dirs = _directions(a.shape[1], projections, seed)
    return float(np.mean([wasserstein_1d(a @ d, b @ d) for d in dirs]))


def wasserstein_1d(p, q):
    """Exact W1 between two empirical 1-D distributions."""
    p = np.sort(np.asarray(p, dtype=np.float64))
    q = np.sort(np.asarray(q, dtype=np.float64))
    if len(p) == len(q):
        return float(np.mean(np.abs(p - q)))
    # integrate |F_p - F_q| over the merged support
    grid = np.concatenate([p, q])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    fp = np.searchsorted(p, grid[:-1], side="right") / len(p)
    fq = np.searchsorted(q, grid[:-1], side="right") / len(q)
    return float(np.sum(np.abs(fp - fq) * widths))


def energy_distance(a, b):
    """2 E|X-Y| - E|X-X'| - E|Y-Y'| with Euclidean norms (V-statistic)."""
    a = _as_samples(a)
    b = _as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets differ in dimension")
    return float(2 * _mean_dist(a, b) - _mean_dist(a, a) - _mean_dist(b, b))


def _mean_dist(a, b):
    sq = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0)).mean()


def _directions(dim, count, seed):
    if dim == 1:
        return np.ones((count, 1))
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _as_samples(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    elif x.ndim > 2:
        x = x.reshape(len(x), -1)
    if len(x) == 0:
        raise ValueError("empty sample set")
    return x
