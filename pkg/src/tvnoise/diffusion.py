"""Forward corruption and deterministic backward sampling with blended noise.

Data and noise are flat float64 vectors of length ``model.dim`` (leading
batch axes allowed). The forward process is

    x_t = alpha_t * (L_t eps) + (1 - alpha_t) * x_0

and a denoiser returns two heads per step: ``d1 ~ x_0 - L_t eps`` and
``d2 ~ alpha_{t-1} (L_b eps - L_w eps)``.
"""

from typing import NamedTuple

import numpy as np

from .noise_model import NoiseModel, correlate
from .schedule import BLEND, DDIM, GammaParams, build_schedule


class DenoiserOutput(NamedTuple):
    d1: np.ndarray
    d2: np.ndarray


def forward_sample(x0, epsilon, alpha, gamma, model):
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(epsilon, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"data {x0.shape} and noise {eps.shape} differ in shape")
    return alpha * correlate(model, gamma, eps) + (1 - alpha) * x0


def noise_difference(model, eps):
    """(L_b - L_w) eps."""
    if model.degenerate:
        return np.zeros_like(np.asarray(eps, dtype=np.float64))
    return model.apply_b(eps) - model.apply_w(eps)


def oracle_denoiser(x0, epsilon, t, schedule, model):
    """Exact regression targets for step ``t`` given the true (x0, eps)."""
    _check_step(t, schedule)
    eps = np.asarray(epsilon, dtype=np.float64)
    d1 = np.asarray(x0, dtype=np.float64) - correlate(model, schedule.gamma[t], eps)
    d2 = schedule.alpha[t - 1] * noise_difference(model, eps)
    return DenoiserOutput(d1, d2)


def bind_oracle(x0, epsilon, schedule, model):
    """Oracle as a ``(x, t) -> DenoiserOutput`` callable for :func:`generate`."""
    if schedule.variant == DDIM:
        return lambda x, t: ddim_oracle(x0, epsilon, t, schedule, model)
    return lambda x, t: oracle_denoiser(x0, epsilon, t, schedule, model)


def backward_step(x_t, out, t, schedule):
    _check_step(t, schedule)
    x_t = np.asarray(x_t, dtype=np.float64)
    return x_t + schedule.alpha_step(t) * out.d1 + schedule.gamma_step(t) * out.d2


def generate(denoiser, schedule, shape, seed=None, early_stop=0, x_init=None):
    """Run the deterministic sampler from t = T down to ``early_stop``.

    The start is white noise of ``shape`` unless ``x_init`` is given. With
    ``early_stop`` > 0 the remaining steps are replaced by a one-step
    estimate of x_0 from the denoiser's first head.
    """
    T = schedule.T
    if not 0 <= early_stop <= T:
        raise ValueError(f"early_stop must lie in [0, {T}]")
    if x_init is None:
        x = np.random.default_rng(seed).standard_normal(shape)
    else:
        x = np.array(x_init, dtype=np.float64)

    ddim = schedule.variant == DDIM
    for t in range(T, early_stop, -1):
        out = denoiser(x, t)
        if ddim:
            x = ddim_backward_step(x, out.d1, out.d2, t, schedule)
        else:
            x = backward_step(x, out, t, schedule)

    if early_stop > 0:
        out = denoiser(x, early_stop)
        if ddim:
            ab = schedule.alpha_bar[early_stop]
            x = (x - np.sqrt(1 - ab) * out.d1) / np.sqrt(ab)
        else:
            x = x + schedule.alpha[early_stop] * out.d1
    return x


def ddim_forward(x0, epsilon, t, schedule, model):
    """sqrt(abar_t) x_0 + sqrt(1 - abar_t) L_t eps."""
    ab = schedule.alpha_bar[t]
    lt_eps = correlate(model, schedule.gamma[t], epsilon)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1 - ab) * lt_eps


def ddim_oracle(x0, epsilon, t, schedule, model):
    """Exact DDIM-variant heads: d1 = L_t eps, d2 = (L_b - L_w) eps."""
    _check_step(t, schedule)
    eps = np.asarray(epsilon, dtype=np.float64)
    return DenoiserOutput(correlate(model, schedule.gamma[t], eps), noise_difference(model, eps))


def ddim_coefficients(t, schedule):
    """(data scale, L_t eps coefficient, (L_b - L_w) eps coefficient) of one step.

    Derived by solving the forward relation at t for x_0 and substituting
    into the forward relation at t - 1.
    """
    ab_t = schedule.alpha_bar[t]
    ab_p = schedule.alpha_bar[t - 1]
    scale = np.sqrt(ab_p / ab_t)
    c_noise = np.sqrt(1 - ab_p) - np.sqrt(ab_p) * np.sqrt(1 - ab_t) / np.sqrt(ab_t)
    c_diff = schedule.gamma_step(t) * np.sqrt(1 - ab_p)
    return scale, c_noise, c_diff


def ddim_backward_step(x_t, lt_eps, diff_eps, t, schedule):
    if schedule.variant != DDIM:
        raise ValueError("ddim_backward_step needs a ddim schedule")
    _check_step(t, schedule)
    scale, c_noise, c_diff = ddim_coefficients(t, schedule)
    return scale * np.asarray(x_t, dtype=np.float64) + c_noise * lt_eps + c_diff * diff_eps


def oracle_round_trip(x0, epsilon, schedule, model, early_stop=0):
    """Start at x_T from the forward process and sample back with the oracle."""
    T = schedule.T
    if schedule.variant == DDIM:
        x_T = ddim_forward(x0, epsilon, T, schedule, model)
    else:
        x_T = forward_sample(x0, epsilon, schedule.alpha[T], schedule.gamma[T], model)
    oracle = bind_oracle(x0, epsilon, schedule, model)
    return generate(oracle, schedule, np.shape(x0), early_stop=early_stop, x_init=x_T)


def random_noise_model(dim, rng):
    """Noise model with a random well-conditioned correlation factor."""
    a = rng.standard_normal((dim, dim))
    cov = a @ a.T / dim + 0.1 * np.eye(dim)
    d = np.sqrt(np.diag(cov))
    return NoiseModel(np.linalg.cholesky(cov / np.outer(d, d)), (1, dim))


def invert_check(trials=100, T=250, variant=BLEND, seed=0, model=None, early_stop=0,
                 dim=64):
    """Max |x_0 - oracle reconstruction| over random trials.

    Each trial draws x_0 in [-1, 1], white eps and gamma parameters inside
    their allowed ranges. Without ``model`` every trial also draws a random
    correlation factor.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m = model if model is not None else random_noise_model(dim, rng)
        p = GammaParams(
            start=float(rng.uniform(-3, 0)),
            end=float(rng.uniform(1e-3, 3)),
            tau=float(np.exp(rng.uniform(np.log(0.01), np.log(1000)))),
        )
        sched = build_schedule(T, p, variant)
        x0 = rng.uniform(-1, 1, m.dim)
        eps = rng.standard_normal(m.dim)
        x_hat = oracle_round_trip(x0, eps, sched, m, early_stop)
        worst = max(worst, float(np.max(np.abs(x_hat - x0))))
    return worst


def _check_step(t, schedule):
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
