"""Two-head MLP denoiser, its weighted loss, and the training loop.

The network sees ``x_t`` and time features and predicts both sampler heads
(``d1`` and ``d2``). Training runs in float32; the sampler and every
identity check stay in float64.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import tensorio
from .analysis import energy_distance, sliced_wasserstein
from .diffusion import DenoiserOutput, generate
from .noise_model import NoiseModel

log = logging.getLogger(__name__)

NOISE_MIXES = ("white_only", "blue_only", "white_blue", "white_red")
PAIRINGS = ("random", "rectified")
TIME_FREQS = 4


class TrainingDiverged(RuntimeError):
    pass


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class ToyDataset:
    """Procedural data in [-1, 1]: ``signals1d`` (64), ``blobs16`` / ``stripes16`` (16x16)."""

    kind: str = "signals1d"
    seed: int = 0

    KINDS = ("signals1d", "blobs16", "stripes16")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown dataset {self.kind!r}")

    @property
    def shape(self):
        return (1, 64) if self.kind == "signals1d" else (16, 16)

    @property
    def dim(self):
        return self.shape[0] * self.shape[1]

    def sample(self, n, rng):
        return getattr(self, "_" + self.kind)(n, rng).reshape(n, self.dim)

    def stream(self, offset=0):
        return np.random.default_rng([self.seed, offset])

    def _signals1d(self, n, rng, length=64, terms=3, max_freq=4):
        t = np.arange(length) / length
        freqs = rng.integers(1, max_freq + 1, size=(n, terms, 1))
        amps = rng.uniform(0.2, 1.0, size=(n, terms, 1))
        phase = rng.uniform(0, 2 * np.pi, size=(n, terms, 1))
        x = (amps * np.sin(2 * np.pi * freqs * t + phase)).sum(1)
        return x / amps.sum(1)

    def _blobs16(self, n, rng, size=16):
        y, x = np.mgrid[0:size, 0:size] + 0.5
        count = rng.integers(1, 4, size=(n, 1, 1, 1))
        cy, cx = rng.uniform(2, size - 2, size=(2, n, 3, 1, 1))
        width = rng.uniform(1.5, 3.5, size=(n, 3, 1, 1))
        on = np.arange(3)[None, :, None, None] < count
        g = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * width**2)) * on
        return 2 * np.clip(g.sum(1), 0, 1) - 1

    def _stripes16(self, n, rng, size=16):
        y, x = np.mgrid[0:size, 0:size]
        theta = rng.uniform(0, np.pi, size=(n, 1, 1))
        freq = rng.uniform(1, 4, size=(n, 1, 1))
        phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 1))
        u = x * np.cos(theta) + y * np.sin(theta)
        return np.sin(2 * np.pi * freq * u / size + phase)


# -- model ----------------------------------------------------------------------

def time_features(t, T):
    """t/T followed by sin/cos of (t/T) * pi * 2^k for k < TIME_FREQS."""
    s = torch.as_tensor(np.asarray(t, dtype=np.float64) / T).reshape(-1, 1)
    scales = math.pi * 2.0 ** torch.arange(TIME_FREQS, dtype=s.dtype)
    ang = s * scales
    return torch.cat([s, torch.sin(ang), torch.cos(ang)], dim=1)


class Denoiser(nn.Module):
    def __init__(self, dim, hidden=(256, 256, 256), T=250):
        super().__init__()
        self.dim = dim
        self.hidden = tuple(hidden)
        self.T = T
        widths = [dim + 1 + 2 * TIME_FREQS, *self.hidden]
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(a, b), nn.SiLU()]
        layers.append(nn.Linear(widths[-1], 2 * dim))
        self.net = nn.Sequential(*layers)

    def forward(self, x, t):
        feats = time_features(t, self.T).to(x.dtype).expand(len(x), -1)
        out = self.net(torch.cat([x, feats], dim=1))
        return out[:, : self.dim], out[:, self.dim:]

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    def __call__(self, x, t):
        """Tensors go through ``forward``; float64 arrays get a :class:`DenoiserOutput`."""
        if isinstance(x, torch.Tensor):
            return super().__call__(x, t)
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, self.dim)
        dtype = next(self.parameters()).dtype
        with torch.no_grad():
            d1, d2 = super().__call__(torch.as_tensor(flat, dtype=dtype), t)
        return DenoiserOutput(d1.double().numpy().reshape(x.shape),
                              d2.double().numpy().reshape(x.shape))


def save_denoiser(directory, denoiser, extra=None):
    os.makedirs(directory, exist_ok=True)
    params = {}
    for name, value in denoiser.state_dict().items():
        path = os.path.join(directory, name + ".cnt")
        tensorio.write_tensor(path, value.detach().cpu().numpy(), tensorio.FLOAT32)
        params[name] = list(value.shape)
    topology = {"dim": denoiser.dim, "hidden": list(denoiser.hidden), "T": denoiser.T,
                "activation": "silu", "time_features": 1 + 2 * TIME_FREQS,
                "parameters": params, "parameter_count": denoiser.parameter_count()}
    topology.update(extra or {})
    with open(os.path.join(directory, "topology.json"), "w", encoding="utf-8") as fh:
        json.dump(topology, fh, indent=2)
    return topology


def load_denoiser(directory):
    with open(os.path.join(directory, "topology.json"), encoding="utf-8") as fh:
        topology = json.load(fh)
    den = Denoiser(topology["dim"], topology["hidden"], topology["T"])
    state = {name: torch.from_numpy(tensorio.read_tensor(os.path.join(directory, name + ".cnt")))
             for name in topology["parameters"]}
    den.load_state_dict(state)
    return den


# -- pairing and loss ---------------------------------------------------------

def pair_batch(noises, targets):
    """Greedy rectified mapping.

    Noises are visited in order; each takes the closest (squared L2) target
    not yet taken. Returns ``perm`` with ``targets[perm[i]]`` paired to
    ``noises[i]``.
    """
    noises = np.asarray(noises, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(noises) != len(targets):
        raise ValueError("noise and target batches differ in length")
    n = len(noises)
    a = noises.reshape(n, -1)
    b = targets.reshape(n, -1)
    dist = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
    perm = np.empty(n, dtype=np.int64)
    for i in range(n):
        j = int(np.argmin(dist[i]))
        perm[i] = j
        dist[:, j] = np.inf
    return perm


def pairing_cost(noises, targets, perm=None):
    a = np.asarray(noises, dtype=np.float64).reshape(len(noises), -1)
    b = np.asarray(targets, dtype=np.float64).reshape(len(targets), -1)
    if perm is not None:
        b = b[perm]
    return float(((a - b) ** 2).sum())


def loss(out, target, t, schedule, weight_mode="outside"):
    """||d1 - d1*||^2 + w_t ||d2 - d2*||^2, element means, averaged over the batch.

    ``w_t = (gamma_t - gamma_{t-1}) / (alpha_t - alpha_{t-1})``. With
    ``weight_mode="inside"`` the weight multiplies the residual before
    squaring. Works on numpy arrays and torch tensors alike.
    """
    if weight_mode not in ("outside", "inside"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    if np.any(np.asarray(t) < 1):
        raise ValueError("loss is defined for t >= 1")
    w = schedule.loss_weight(np.asarray(t))
    if isinstance(out.d1, torch.Tensor):
        w = torch.as_tensor(w, dtype=out.d1.dtype)
    if np.ndim(w):
        w = w[:, None]
    e1 = (out.d1 - target.d1) ** 2
    r2 = out.d2 - target.d2
    e2 = w * r2**2 if weight_mode == "outside" else (w * r2) ** 2
    return (e1 + e2).mean()


# -- training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    steps: int = 20000
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    pairing: str = "random"
    noise_mix: str = "white_blue"
    hidden: tuple = (256, 256, 256)
    weight_mode: str = "outside"
    # noise used for rectified-mapping distances: "correlated" (L_t eps) or "white" (eps)
    pair_on: str = "correlated"
    log_every: int = 1

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.noise_mix not in NOISE_MIXES:
            raise ValueError(f"noise_mix must be one of {NOISE_MIXES}")
        if self.pair_on not in ("correlated", "white"):
            raise ValueError("pair_on must be 'correlated' or 'white'")


def select_noise(noise_mix, shape, blue=None, red=None):
    """NoiseModel carrying the (L_w, L_b) pair of an ablation mode."""
    n = shape[0] * shape[1]
    if noise_mix == "white_only":
        return NoiseModel(np.eye(n), tuple(shape))
    if noise_mix in ("blue_only", "white_blue"):
        if blue is None:
            raise ValueError(f"{noise_mix} needs a blue factor")
        factor = _factor(blue)
        white = factor if noise_mix == "blue_only" else None
        return NoiseModel(factor, tuple(shape), white)
    if noise_mix == "white_red":
        if red is None:
            raise ValueError("white_red needs a red factor")
        return NoiseModel(_factor(red), tuple(shape))
    raise ValueError(f"noise_mix must be one of {NOISE_MIXES}")


def _factor(obj):
    return obj.factor if hasattr(obj, "factor") else np.asarray(obj, dtype=np.float64)


def make_batch(dataset, cfg, schedule, model, rng, data_rng=None):
    """One training batch: inputs, targets and step indices (all float64)."""
    n = cfg.batch
    x0 = dataset.sample(n, rng if data_rng is None else data_rng)
    eps = rng.standard_normal((n, model.dim))
    t = rng.integers(1, schedule.T + 1, size=n)
    gamma = schedule.gamma[t][:, None]
    alpha = schedule.alpha[t][:, None]
    alpha_prev = schedule.alpha[t - 1][:, None]

    lb = model.apply_b(eps)
    lw = model.apply_w(eps)
    lt = gamma * lw + (1 - gamma) * lb
    if cfg.pairing == "rectified":
        perm = pair_batch(lt if cfg.pair_on == "correlated" else eps, x0)
        x0 = x0[perm]
    x_t = alpha * lt + (1 - alpha) * x0
    target = DenoiserOutput(x0 - lt, alpha_prev * (lb - lw))
    return x_t, target, t


def train(dataset, cfg, schedule, model, denoiser=None):
    """Train a :class:`Denoiser`; returns it with a per-step metrics log.

    Each log row holds the step, batch loss, and the mean / max loss weight
    of the batch.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    data_rng = dataset.stream(cfg.seed)
    if denoiser is None:
        denoiser = Denoiser(model.dim, cfg.hidden, schedule.T)
    log.info("denoiser has %d parameters", denoiser.parameter_count())
    dtype = next(denoiser.parameters()).dtype
    opt = torch.optim.AdamW(denoiser.parameters(), lr=cfg.lr, betas=(0.9, 0.999),
                            eps=1e-8, weight_decay=cfg.weight_decay)
    history = []
    last_good = None
    for step in range(cfg.steps):
        x_t, target, t = make_batch(dataset, cfg, schedule, model, rng, data_rng)
        x = torch.as_tensor(x_t, dtype=dtype)
        tgt = DenoiserOutput(torch.as_tensor(target.d1, dtype=dtype),
                             torch.as_tensor(target.d2, dtype=dtype))
        d1, d2 = denoiser(x, t)
        value = loss(DenoiserOutput(d1, d2), tgt, t, schedule, cfg.weight_mode)
        if not torch.isfinite(value):
            raise TrainingDiverged(
                f"loss became {value.item()} at step {step} "
                f"(last finite loss {last_good}, lr {cfg.lr})")
        opt.zero_grad()
        value.backward()
        opt.step()
        last_good = value.item()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            w = schedule.loss_weight(t)
            history.append({"step": step, "loss": last_good,
                            "w_mean": float(w.mean()), "w_max": float(w.max())})
    return denoiser, history


def running_loss(history, window):
    values = np.array([row["loss"] for row in history])
    return float(values[:window].mean()), float(values[-window:].mean())


def evaluate_generation(denoiser, dataset, schedule, n=512, seed=0, projections=64,
                        early_stop=0):
    """Distribution distances between ``n`` generated and ``n`` held-out samples."""
    samples = generate(denoiser, schedule, (n, dataset.dim), seed=seed, early_stop=early_stop)
    held_out = dataset.sample(n, np.random.default_rng([dataset.seed, 2**31 - 1, seed]))
    return {
        "sliced_wasserstein": sliced_wasserstein(samples, held_out, projections, seed),
        "energy_distance": energy_distance(samples, held_out),
        "n": n,
    }


def write_metrics_csv(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,w_mean,w_max\n")
        for row in history:
            fh.write(f"{row['step']},{row['loss']:.8g},{row['w_mean']:.8g},{row['w_max']:.8g}\n")


def config_dict(cfg):
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
