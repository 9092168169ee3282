"""Blue and red noise masks by simulated annealing over value swaps.

A mask starts as an i.i.d. standard normal draw. Proposals swap the values
of two pixels, so the value multiset never changes; only the spatial
arrangement does. The energy is a sum over ordered pixel pairs of a
toroidal spatial Gaussian times a value kernel::

    E = sum_{i != j} exp(-d(i, j)**2 / sigma_s**2 - |v_i - v_j|**0.5 / sigma_v**2)

Blue masks minimize E (similar values pushed apart), red masks maximize
it (similar values pulled together).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

BLUE = "blue"
RED = "red"
WHITE = "white"
MODES = (BLUE, RED)

FINAL_TEMPERATURE = 1e-3


@dataclass(frozen=True)
class AnnealConfig:
    sigma_s: float = 2.1
    sigma_v: float = 1.0
    sweeps: int = 12800
    temp0: float = 1.0
    # None -> geometric decay reaching FINAL_TEMPERATURE at the last proposal
    temp_decay: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if not self.sigma_v > 0:
            raise ValueError("sigma_v must be positive")
        if self.sweeps < 0:
            raise ValueError("sweeps must be non-negative")
        if not self.temp0 > 0:
            raise ValueError("temp0 must be positive")
        if self.temp_decay is not None and not 0 < self.temp_decay <= 1:
            raise ValueError("temp_decay must lie in (0, 1]")

    def decay(self):
        if self.temp_decay is not None:
            return self.temp_decay
        if self.sweeps <= 1:
            return 1.0
        return (FINAL_TEMPERATURE / self.temp0) ** (1.0 / (self.sweeps - 1))


@dataclass(frozen=True)
class Mask:
    values: np.ndarray
    seed: int
    mode: str = BLUE
    trace: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def resolution(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape


def spatial_kernel(shape, sigma_s):
    """exp(-d^2 / sigma_s^2) indexed by toroidal offset (dy, dx)."""
    h, w = shape
    dy = np.arange(h)
    dx = np.arange(w)
    dy = np.minimum(dy, h - dy).astype(np.float64)
    dx = np.minimum(dx, w - dx).astype(np.float64)
    d2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return np.exp(-d2 / sigma_s**2)


def mask_energy(mask, cfg):
    values = _values(mask)
    h, w = values.shape
    if h * w < 2:
        raise ValueError("mask needs at least two pixels")
    kern = spatial_kernel((h, w), cfg.sigma_s)
    ys, xs = np.divmod(np.arange(h * w), w)
    v = values.ravel()
    spatial = kern[(ys[:, None] - ys[None, :]) % h, (xs[:, None] - xs[None, :]) % w]
    value = np.exp(-np.sqrt(np.abs(v[:, None] - v[None, :])) / cfg.sigma_v**2)
    pair = spatial * value
    np.fill_diagonal(pair, 0.0)
    return float(pair.sum())


def swap_delta_energy(mask, i, j, cfg):
    """E(after swapping pixels i and j) - E(before), in O(n)."""
    values = _values(mask)
    h, w = values.shape
    n = h * w
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"pixel index out of range for {n} pixels")
    if i == j:
        raise ValueError("swap needs two distinct pixels")
    kern = spatial_kernel((h, w), cfg.sigma_s)
    flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    return float(_delta(flat, kern, h, w, i, j, 1.0 / cfg.sigma_v**2))


def anneal_mask(resolution, cfg, mode=BLUE, shape=None):
    """Anneal one mask; ``shape`` overrides the square ``resolution``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    shape = tuple(shape) if shape is not None else (resolution, resolution)
    if len(shape) != 2 or min(shape) < 1 or shape[0] * shape[1] < 4:
        raise ValueError(f"mask shape {shape} too small to anneal")

    h, w = shape
    n = h * w
    rng = np.random.default_rng(cfg.seed)
    values = rng.standard_normal(shape)
    if cfg.sweeps == 0:
        return Mask(values, cfg.seed, mode, np.zeros(0))

    first = rng.integers(0, n, size=cfg.sweeps)
    second = rng.integers(0, n - 1, size=cfg.sweeps)
    second = second + (second >= first)
    u = rng.random(cfg.sweeps)
    sign = 1.0 if mode == BLUE else -1.0

    flat = values.ravel().copy()
    kern = spatial_kernel(shape, cfg.sigma_s)
    e0 = mask_energy(values, cfg)
    best, trace = _anneal(
        flat, kern, h, w, 1.0 / cfg.sigma_v**2, e0, sign,
        cfg.temp0, cfg.decay(), first, second, u,
    )
    return Mask(best.reshape(shape), cfg.seed, mode, trace)


def ensemble_seeds(seed, count):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, np.uint64)]


def anneal_ensemble(resolution, count, cfg, mode=BLUE, shape=None, threads=1):
    """``count`` independently seeded masks derived from ``cfg.seed``."""
    if count < 1:
        raise ValueError("count must be positive")
    seeds = ensemble_seeds(cfg.seed, count)

    def one(s):
        return anneal_mask(resolution, _with_seed(cfg, s), mode, shape)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def white_ensemble(resolution, count, seed, shape=None):
    """Unannealed i.i.d. normal masks (the starting draws)."""
    return anneal_ensemble(resolution, count, _with_seed(AnnealConfig(sweeps=0), seed),
                           BLUE, shape)


def stack(masks):
    return np.stack([m.values for m in masks])


def _with_seed(cfg, seed):
    return AnnealConfig(cfg.sigma_s, cfg.sigma_v, cfg.sweeps, cfg.temp0, cfg.temp_decay, seed)


def _values(mask):
    values = mask.values if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("mask must be a 2-D grid")
    return values


@numba.njit(cache=True, nogil=True)
def _delta(v, kern, h, w, i, j, inv_sv2):
    vi = v[i]
    vj = v[j]
    if vi == vj:
        return 0.0
    yi, xi = i // w, i % w
    yj, xj = j // w, j % w
    acc = 0.0
    for k in range(h * w):
        if k == i or k == j:
            continue
        yk, xk = k // w, k % w
        ki = kern[(yi - yk) % h, (xi - xk) % w]
        kj = kern[(yj - yk) % h, (xj - xk) % w]
        vk = v[k]
        fi = np.exp(-np.sqrt(abs(vi - vk)) * inv_sv2)
        fj = np.exp(-np.sqrt(abs(vj - vk)) * inv_sv2)
        acc += (ki - kj) * (fj - fi)
    # every pair is counted in both directions
    return 2.0 * acc


@numba.njit(cache=True, nogil=True)
def _anneal(v, kern, h, w, inv_sv2, e0, sign, temp0, decay, first, second, u):
    steps = first.shape[0]
    trace = np.empty(steps)
    best = v.copy()
    energy = e0
    best_energy = e0
    temp = temp0
    for k in range(steps):
        i = first[k]
        j = second[k]
        d = _delta(v, kern, h, w, i, j, inv_sv2)
        score = d * sign
        if score < 0.0 or u[k] < np.exp(-score / temp):
            v[i], v[j] = v[j], v[i]
            energy += d
            if energy * sign < best_energy * sign:
                best_energy = energy
                best[:] = v
        trace[k] = best_energy
        temp *= decay
    return best, trace
