"""White, correlated and time-blended Gaussian noise.

The blended factor is ``L_t = gamma * L_w + (1 - gamma) * L_b``. When
``L_w`` is the identity its product is never formed: ``L_t eps`` is computed
as ``gamma * eps + (1 - gamma) * (L_b eps)``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

INDEPENDENT = "independent"
REPEAT = "repeat"


@dataclass(frozen=True)
class NoiseModel:
    """``factor_b`` acts on grids of ``shape`` flattened row-major.

    ``factor_w`` of None means the identity.
    """

    factor_b: np.ndarray
    shape: tuple
    factor_w: np.ndarray | None = None

    def __post_init__(self):
        n = int(np.prod(self.shape))
        if self.factor_b.shape != (n, n):
            raise ValueError(f"factor is {self.factor_b.shape}, grid {self.shape} needs {(n, n)}")
        if self.factor_w is not None and self.factor_w.shape != (n, n):
            raise ValueError("white factor has the wrong size")

    @classmethod
    def from_covariance(cls, cov, white=None):
        return cls(cov.factor, tuple(cov.shape), None if white is None else white.factor)

    @classmethod
    def white(cls, shape):
        n = int(np.prod(shape))
        return cls(np.eye(n), tuple(shape))

    @property
    def dim(self):
        return self.factor_b.shape[0]

    @cached_property
    def white_b(self):
        return bool(np.array_equal(self.factor_b, np.eye(self.dim)))

    @cached_property
    def degenerate(self):
        """L_b == L_w, so every blend L_t is the same matrix."""
        if self.factor_w is None:
            return self.white_b
        return bool(np.array_equal(self.factor_w, self.factor_b))

    @property
    def base_resolution(self):
        return self.shape[-1]

    def apply_b(self, eps):
        if self.white_b:
            return np.array(eps, dtype=np.float64)
        return _matvec(self.factor_b, eps)

    def apply_w(self, eps):
        if self.factor_w is None:
            return np.array(eps, dtype=np.float64)
        return _matvec(self.factor_w, eps)


@dataclass(frozen=True)
class NoiseSample:
    values: np.ndarray
    kind: str
    seed: int | None = None


def _matvec(factor, eps):
    eps = np.asarray(eps, dtype=np.float64)
    return eps @ factor.T


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_white(shape, seed=None):
    shape = tuple(shape)
    if len(shape) == 0 or min(shape) < 1:
        raise ValueError(f"invalid noise shape {shape}")
    values = _rng(seed).standard_normal(shape)
    return NoiseSample(values, "white", seed if isinstance(seed, int) else None)


def blend_factor(model, gamma):
    _check_gamma(gamma)
    white = np.eye(model.dim) if model.factor_w is None else model.factor_w
    return gamma * white + (1 - gamma) * model.factor_b


def correlate(model, gamma, eps):
    """``L_t eps`` for flat vectors ``eps`` of shape (..., dim)."""
    _check_gamma(gamma)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != model.dim:
        raise ValueError(f"noise has {eps.shape[-1]} entries, model expects {model.dim}")
    if gamma == 1:
        return model.apply_w(eps)
    if gamma == 0 or model.degenerate:
        return model.apply_b(eps)
    return gamma * model.apply_w(eps) + (1 - gamma) * model.apply_b(eps)


def sample_correlated(model, gamma, epsilon):
    """Correlated noise ``L_t eps`` on the model grid.

    ``epsilon`` is a NoiseSample or array whose trailing axes hold one grid
    (either ``model.shape`` or flattened).
    """
    eps = epsilon.values if isinstance(epsilon, NoiseSample) else np.asarray(epsilon)
    seed = epsilon.seed if isinstance(epsilon, NoiseSample) else None
    grid = tuple(model.shape)
    if eps.shape[-len(grid):] == grid:
        lead = eps.shape[: -len(grid)]
    elif eps.shape[-1:] == (model.dim,):
        lead = eps.shape[:-1]
    else:
        raise ValueError(f"noise of shape {eps.shape} does not match grid {grid}")
    out = correlate(model, gamma, eps.reshape(*lead, model.dim))
    out = out.reshape(eps.shape)
    return NoiseSample(out, _kind(model, gamma), seed)


def _kind(model, gamma):
    if gamma == 1:
        return "white"
    if gamma == 0:
        return "correlated"
    return f"blend({gamma:g})"


def tile_noise(model, gamma, target, mode=INDEPENDENT, seed=None):
    """Fill a ``target`` grid with tiles of the model's base grid."""
    if mode not in (INDEPENDENT, REPEAT):
        raise ValueError(f"unknown tiling mode {mode!r}")
    th, tw = model.shape
    h, w = target
    if h % th or w % tw or h < th or w < tw:
        raise ValueError(f"target {target} is not a multiple of the base grid {model.shape}")
    ny, nx = h // th, w // tw
    rng = _rng(seed)
    count = 1 if mode == REPEAT else ny * nx
    eps = rng.standard_normal((count, model.dim))
    tiles = correlate(model, gamma, eps).reshape(count, th, tw)
    if mode == REPEAT:
        out = np.tile(tiles[0], (ny, nx))
    else:
        out = tiles.reshape(ny, nx, th, tw).transpose(0, 2, 1, 3).reshape(h, w)
    return NoiseSample(out, _kind(model, gamma), seed if isinstance(seed, int) else None)


def _check_gamma(gamma):
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
