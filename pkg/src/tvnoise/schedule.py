"""Alpha (data/noise blend) and gamma (white/correlated blend) schedules."""

import math
from dataclasses import dataclass

import numpy as np

BLEND = "blend"
DDIM = "ddim"
VARIANTS = (BLEND, DDIM)

OVERRIDES = (None, "linear", "cosine")

# linear DDPM betas for T=1000, rescaled for other step counts
DDIM_BETA_START = 1e-4
DDIM_BETA_END = 2e-2
DDIM_BETA_MAX = 0.999


@dataclass(frozen=True)
class GammaParams:
    start: float = 0.0
    end: float = 3.0
    tau: float = 0.2

    def __post_init__(self):
        if not -3 <= self.start <= 0:
            raise ValueError(f"gamma start {self.start} outside [-3, 0]")
        if not 0 < self.end <= 3:
            raise ValueError(f"gamma end {self.end} outside (0, 3]")
        if not 0.01 <= self.tau <= 1000:
            raise ValueError(f"gamma tau {self.tau} outside [0.01, 1000]")


@dataclass(frozen=True)
class Schedule:
    T: int
    alpha: np.ndarray
    gamma: np.ndarray
    alpha_bar: np.ndarray | None = None
    variant: str = BLEND

    def alpha_step(self, t):
        return self.alpha[t] - self.alpha[t - 1]

    def gamma_step(self, t):
        return self.gamma[t] - self.gamma[t - 1]

    def loss_weight(self, t):
        """(gamma_t - gamma_{t-1}) / (alpha_t - alpha_{t-1})."""
        da = self.alpha_step(t)
        if np.any(da == 0):
            raise ZeroDivisionError(f"zero alpha step at t={t}")
        return self.gamma_step(t) / da


def get_alpha(t, T):
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return t / T


def get_gamma(t, T, p):
    if not 0 <= t <= T:
        raise ValueError(f"step {t} outside [0, {T}]")
    x = (p.start + (p.end - p.start) * t / T) / p.tau
    # both branches are exact forms of the logistic; pick the one that cannot overflow
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def ddim_alpha_bar(T):
    """Cumulative products of (1 - beta_t); entry 0 is 1."""
    scale = 1000.0 / T
    betas = np.linspace(DDIM_BETA_START * scale, DDIM_BETA_END * scale, T)
    betas = np.minimum(betas, DDIM_BETA_MAX)
    return np.concatenate([[1.0], np.cumprod(1.0 - betas)])


def build_schedule(T, p=None, variant=BLEND, gamma_override=None):
    if T < 1:
        raise ValueError("T must be at least 1")
    if variant not in VARIANTS:
        raise ValueError(f"unknown schedule variant {variant!r}")
    if gamma_override not in OVERRIDES:
        raise ValueError(f"unknown gamma override {gamma_override!r}")
    p = GammaParams() if p is None else p

    steps = np.arange(T + 1)
    alpha = steps / T
    if gamma_override == "linear":
        gamma = steps / T
    elif gamma_override == "cosine":
        gamma = 1.0 - np.cos(steps / T * np.pi / 2) ** 2
    else:
        gamma = np.array([get_gamma(t, T, p) for t in steps])

    alpha_bar = ddim_alpha_bar(T) if variant == DDIM else None
    sched = Schedule(T, alpha, gamma, alpha_bar, variant)
    check_schedule(sched)
    return sched


class ScheduleError(ValueError):
    pass


def check_schedule(sched):
    for name in ("alpha", "gamma"):
        arr = getattr(sched, name)
        if len(arr) != sched.T + 1:
            raise ScheduleError(f"{name} has {len(arr)} entries, expected {sched.T + 1}")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ScheduleError(f"{name} leaves [0, 1]")
        if np.any(np.diff(arr) < 0):
            raise ScheduleError(f"{name} is not monotone non-decreasing")
    if sched.alpha[0] != 0 or sched.alpha[-1] != 1:
        raise ScheduleError("alpha must run from 0 to 1")
    if sched.variant == DDIM:
        ab = sched.alpha_bar
        if ab is None or len(ab) != sched.T + 1 or ab[0] != 1:
            raise ScheduleError("alpha_bar must have T+1 entries starting at 1")
        if np.any(np.diff(ab) >= 0) or ab[-1] <= 0:
            raise ScheduleError("alpha_bar must decrease strictly and stay positive")
