"""Pixel covariance estimation from mask ensembles, and its Cholesky factor."""

import os
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .mask_forge import Mask

JITTER_START = 1e-8
JITTER_CAP = 1e-2

RECONSTRUCTION_TOL = 1e-10
DIAGONAL_TOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CovarianceModel:
    """Correlation matrix ``sigma`` over flattened ``shape`` grids and its factor."""

    shape: tuple
    sigma: np.ndarray | None
    factor: np.ndarray
    source_count: int = 0
    regularization: float = 0.0

    @property
    def resolution(self):
        return self.shape[-1]

    @property
    def dim(self):
        return self.factor.shape[0]


def _mask_stack(masks):
    if isinstance(masks, np.ndarray):
        arr = masks.astype(np.float64, copy=False)
    else:
        masks = list(masks)
        if not masks:
            raise ValueError("empty mask ensemble")
        grids = [m.values if isinstance(m, Mask) else np.asarray(m) for m in masks]
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise ValueError(f"mixed mask resolutions: {sorted(shapes)}")
        arr = np.stack(grids).astype(np.float64)
    if arr.ndim != 3:
        raise ValueError("masks must be a (count, H, W) stack")
    return arr


def accumulate_covariance(masks, use_toroidal_shifts=True, center=False):
    """Average outer product m m^T of flattened masks, as a correlation matrix.

    With shifts, every mask contributes all of its toroidal translations.
    That average only depends on the offset between two pixels, so it is
    computed from the ensemble-mean circular autocorrelation. ``center``
    removes each mask's own mean first.
    """
    arr = _mask_stack(masks)
    count, h, w = arr.shape
    if count < 2:
        raise ValueError("need at least two masks")
    if center:
        arr = arr - arr.mean(axis=(1, 2), keepdims=True)
    n = h * w
    if use_toroidal_shifts:
        f = np.fft.fft2(arr)
        acorr = np.fft.ifft2((np.abs(f) ** 2).mean(axis=0)).real / n
        ys, xs = np.divmod(np.arange(n), w)
        sigma = acorr[(ys[None, :] - ys[:, None]) % h, (xs[None, :] - xs[:, None]) % w]
    else:
        flat = arr.reshape(count, n)
        sigma = flat.T @ flat / count
    sigma = 0.5 * (sigma + sigma.T)
    return normalize_diagonal(sigma)


def normalize_diagonal(sigma):
    d = np.sqrt(np.diag(sigma))
    if np.any(d <= 0):
        raise ValueError("covariance has a non-positive diagonal entry")
    out = sigma / (d[:, None] * d[None, :])
    np.fill_diagonal(out, 1.0)
    return out


def regularize_psd(sigma, jitter=JITTER_START, cap=JITTER_CAP):
    """Return ``(matrix, jitter_used)``; jitter is 0 if ``sigma`` already factors."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
        raise ValueError("regularize_psd needs a symmetric matrix")
    sigma = 0.5 * (sigma + sigma.T)
    if _factors(sigma):
        return sigma, 0.0
    eye = np.eye(len(sigma))
    while jitter <= cap * (1 + 1e-9):
        candidate = normalize_diagonal(sigma + jitter * eye)
        if _factors(candidate):
            return candidate, jitter
        jitter *= 10
    raise NotPositiveDefiniteError(f"matrix still indefinite at jitter cap {cap:g}")


def _factors(sigma):
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return False
    return True


def cholesky(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def build_covariance_model(masks, use_toroidal_shifts=True, keep_sigma=True, center=False):
    arr = _mask_stack(masks)
    sigma = accumulate_covariance(arr, use_toroidal_shifts, center)
    sigma, jitter = regularize_psd(sigma)
    return CovarianceModel(
        shape=tuple(arr.shape[1:]),
        sigma=sigma if keep_sigma else None,
        factor=cholesky(sigma),
        source_count=len(arr),
        regularization=jitter,
    )


def identity_model(shape):
    n = int(np.prod(shape))
    eye = np.eye(n)
    return CovarianceModel(tuple(shape), eye, eye.copy(), 0, 0.0)


def validate_factor(model):
    L = model.factor
    sigma = model.sigma if model.sigma is not None else L @ L.T
    recon = np.linalg.norm(L @ L.T - sigma) / np.linalg.norm(sigma)
    min_diag = float(np.min(np.diag(L)))
    diag_err = float(np.max(np.abs(np.diag(sigma) - 1.0)))
    lower = bool(np.all(np.triu(L, 1) == 0))
    return {
        "reconstruction_error": float(recon),
        "min_factor_diagonal": min_diag,
        "diagonal_error": diag_err,
        "lower_triangular": lower,
        "ok": bool(recon <= RECONSTRUCTION_TOL and min_diag > 0
                   and diag_err <= DIAGONAL_TOL and lower),
    }


def save_model(prefix, model, manifest=None):
    """Write ``<prefix>.factor.cnt`` (+ ``.sigma.cnt``) and the factor's manifest."""
    prefix = os.fspath(prefix)
    factor_path = prefix + ".factor.cnt"
    tensorio.write_tensor(factor_path, model.factor)
    if model.sigma is not None:
        tensorio.write_tensor(prefix + ".sigma.cnt", model.sigma)
    info = dict(manifest or {})
    info.update(
        shape=list(model.shape),
        source_count=model.source_count,
        regularization=model.regularization,
        has_sigma=model.sigma is not None,
    )
    tensorio.write_manifest(factor_path, info)
    return factor_path


def load_model(prefix):
    prefix = os.fspath(prefix)
    if prefix.endswith(".factor.cnt"):
        prefix = prefix[: -len(".factor.cnt")]
    factor_path = prefix + ".factor.cnt"
    info = tensorio.read_manifest(factor_path)
    sigma = tensorio.read_tensor(prefix + ".sigma.cnt") if info.get("has_sigma") else None
    return CovarianceModel(
        shape=tuple(info["shape"]),
        sigma=sigma,
        factor=tensorio.read_tensor(factor_path),
        source_count=info.get("source_count", 0),
        regularization=info.get("regularization", 0.0),
    )
