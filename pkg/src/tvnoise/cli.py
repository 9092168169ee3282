"""Command line driver: anneal -> estimate-cov -> sample-noise / spectrum -> train -> generate.

Every option has a dotted config key (``gamma.tau``, ``train.lr`` ...).
Values resolve as defaults < ``--config`` JSON file < flags, and the
resolved set is written to ``<out>/<command>.manifest.json``.

Exit status: 0 success, 1 runtime failure, 2 configuration error. Failures
print one line ``error kind=<config|runtime> command=<cmd> message="..."``
on stderr.
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__

log = logging.getLogger("tvnoise")

COMMANDS = ("anneal", "estimate-cov", "sample-noise", "spectrum", "train", "generate",
            "invert-check", "pair-demo")

SCHEDULE_OPTS = [
    ("T", int, 250, "number of diffusion steps"),
    ("gamma.start", float, 0.0, "gamma scheduler start"),
    ("gamma.end", float, 3.0, "gamma scheduler end"),
    ("gamma.tau", float, 0.2, "gamma scheduler temperature"),
    ("gamma.override", str, None, "replace the sigmoid scheduler: linear | cosine"),
    ("variant", str, "blend", "schedule variant: blend | ddim"),
]

OPTIONS = {
    "anneal": [
        ("resolution", int, 16, "mask side length"),
        ("height", int, None, "mask height (defaults to resolution; 1 gives 1-D masks)"),
        ("count", int, 2000, "number of masks"),
        ("mode", str, "blue", "blue | red | white (unannealed)"),
        ("anneal.sweeps", int, None, "proposed swaps per mask (default 50 * pixels)"),
        ("anneal.sigma_s", float, 2.1, "spatial kernel width"),
        ("anneal.sigma_v", float, 1.0, "value kernel width"),
        ("anneal.temp0", float, 1.0, "initial temperature"),
        ("anneal.temp_decay", float, None, "geometric cooling factor"),
        ("seed", int, 0, "base seed"),
    ],
    "estimate-cov": [
        ("masks", str, None, "CNT1 mask stack (count, H, W)"),
        ("name", str, None, "output prefix (default: masks file stem)"),
        ("shifts", bool, True, "use all toroidal shifts of every mask"),
        ("center", bool, False, "subtract each mask's mean first"),
        ("keep_sigma", bool, True, "also write the covariance matrix"),
    ],
    "sample-noise": [
        ("factor", str, None, "covariance model prefix or .factor.cnt path (omit for white)"),
        ("gamma", float, 0.0, "blend weight of white noise"),
        ("target", str, None, "HxW output size, a multiple of the base grid"),
        ("tile_mode", str, "independent", "independent | repeat"),
        ("count", int, 1, "number of samples"),
        ("previews", int, 4, "PGM previews to write"),
        ("seed", int, 0, "seed"),
    ],
    "spectrum": [
        ("input", str, None, "CNT1 stack of grids (count, H, W) or one grid"),
        ("cutoff", float, 0.125, "low-frequency cutoff as a fraction of the side"),
    ],
    "train": [
        ("dataset", str, "signals1d", "signals1d | blobs16 | stripes16"),
        ("data_seed", int, 0, "dataset seed"),
        ("blue", str, None, "blue covariance model prefix"),
        ("red", str, None, "red covariance model prefix"),
        ("train.batch", int, 64, "batch size"),
        ("train.steps", int, 20000, "optimizer steps"),
        ("train.lr", float, 1e-4, "learning rate"),
        ("train.weight_decay", float, 1e-4, "decoupled weight decay"),
        ("train.seed", int, 0, "training seed"),
        ("train.pairing", str, "random", "random | rectified"),
        ("train.noise_mix", str, "white_blue", "white_only | blue_only | white_blue | white_red"),
        ("train.hidden", str, "256,256,256", "comma-separated hidden widths"),
        ("train.weight_mode", str, "outside", "loss weight outside | inside the square"),
        ("train.pair_on", str, "correlated", "noise used for pairing: correlated | white"),
        ("train.log_every", int, 10, "metrics row every N steps"),
    ] + SCHEDULE_OPTS,
    "generate": [
        ("denoiser", str, None, "directory written by train"),
        ("count", int, 16, "samples to draw"),
        ("seed", int, 0, "seed of the starting noise"),
        ("early_stop", int, 0, "stop at this step and reconstruct in one step"),
        ("previews", int, 4, "PGM previews to write"),
    ] + [(k, t, None, h + " (default: as trained)") for k, t, _, h in SCHEDULE_OPTS],
    "invert-check": [
        ("trials", int, 100, "random (x0, eps, gamma params) triples"),
        ("dim", int, 64, "data length per trial"),
        ("early_stop", int, 0, "early stopping step"),
        ("tolerance", float, 1e-9, "maximum allowed reconstruction error"),
        ("seed", int, 0, "seed"),
        ("T", int, 250, "number of diffusion steps"),
        ("variant", str, "blend", "schedule variant: blend | ddim"),
    ],
    "pair-demo": [
        ("batch", int, 64, "batch size"),
        ("trials", int, 1000, "seeded batches"),
        ("dim", int, 64, "vector length"),
        ("seed", int, 0, "seed"),
    ],
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser():
    parser = _Parser(prog="tvnoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with dotted or nested keys")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        for key, typ, _default, help_text in OPTIONS[name]:
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, default=None, help=help_text,
                           type=_bool if typ is bool else typ)
    return parser


def flatten(tree, prefix=""):
    out = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def resolve_config(command, args):
    """Defaults < config file < flags, with type checks on file values."""
    spec = {key: (typ, default) for key, typ, default, _ in OPTIONS[command]}
    resolved = {key: default for key, (typ, default) in spec.items()}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                from_file = flatten(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        for key, value in from_file.items():
            if key not in spec:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            resolved[key] = _coerce(key, spec[key][0], value)
    for key in spec:
        value = getattr(args, key)
        if value is not None:
            resolved[key] = value
    return resolved


def _coerce(key, typ, value):
    if value is None:
        return None
    try:
        if typ is bool:
            return value if isinstance(value, bool) else _bool(value)
        if typ is str and isinstance(value, list):
            return ",".join(str(v) for v in value)
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return typ(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError):
        raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {value!r}") from None


def _schedule(cfg):
    from .schedule import GammaParams, build_schedule

    try:
        params = GammaParams(cfg["gamma.start"], cfg["gamma.end"], cfg["gamma.tau"])
        override = cfg["gamma.override"] or None
        return build_schedule(cfg["T"], params, cfg["variant"], override)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _require(cfg, key):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required option --{key.replace('_', '-')}")
    return cfg[key]


def _write_run_manifest(out, command, cfg, extra=None):
    from .tensorio import write_manifest

    info = {"command": command, "config": cfg, "version": __version__,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    info.update(extra or {})
    return write_manifest(os.path.join(out, command), info)


# -- commands -----------------------------------------------------------------

def cmd_anneal(cfg, out, threads):
    from . import mask_forge as mf
    from .tensorio import write_manifest, write_tensor

    mode = cfg["mode"]
    if mode not in ("blue", "red", "white"):
        raise ConfigError(f"unknown mode {mode!r}")
    res = cfg["resolution"]
    height = cfg["height"] or res
    shape = (height, res)
    if cfg["count"] < 1 or min(shape) < 1 or height * res < 4:
        raise ConfigError("need count >= 1 and at least 4 pixels per mask")
    sweeps = cfg["anneal.sweeps"]
    if sweeps is None:
        sweeps = 0 if mode == "white" else 50 * height * res
    try:
        acfg = mf.AnnealConfig(cfg["anneal.sigma_s"], cfg["anneal.sigma_v"], sweeps,
                               cfg["anneal.temp0"], cfg["anneal.temp_decay"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg["anneal.sweeps"] = sweeps
    masks = mf.anneal_ensemble(res, cfg["count"], acfg, "blue" if mode == "white" else mode,
                               shape, threads)
    path = os.path.join(out, f"masks_{mode}.cnt")
    write_tensor(path, mf.stack(masks))
    write_manifest(path, {"kind": "masks", "mode": mode, "seed": cfg["seed"],
                          "resolution": res, "shape": list(shape), "count": cfg["count"],
                          "anneal": {"sigma_s": acfg.sigma_s, "sigma_v": acfg.sigma_v,
                                     "sweeps": sweeps, "temp0": acfg.temp0,
                                     "temp_decay": acfg.decay()},
                          "mask_seeds": [m.seed for m in masks]})
    print(f"wrote {len(masks)} {mode} masks of shape {shape} to {path}")
    return {"masks": path}


def cmd_estimate_cov(cfg, out, threads):
    from . import covariance as cv
    from .tensorio import read_manifest, read_tensor

    src = _require(cfg, "masks")
    masks = read_tensor(src)
    if masks.ndim != 3:
        raise ConfigError(f"{src} is not a (count, H, W) stack")
    model = cv.build_covariance_model(masks, cfg["shifts"], cfg["keep_sigma"], cfg["center"])
    report = cv.validate_factor(model)
    try:
        provenance = read_manifest(src)
    except OSError:
        provenance = {}
    name = cfg["name"] or os.path.splitext(os.path.basename(src))[0]
    prefix = os.path.join(out, name)
    path = cv.save_model(prefix, model, {"kind": "covariance", "masks": src,
                                         "mask_manifest": provenance, "shifts": cfg["shifts"],
                                         "center": cfg["center"], "validation": report})
    print(f"wrote {path} regularization={model.regularization:g} "
          f"reconstruction_error={report['reconstruction_error']:.3e} ok={report['ok']}")
    return {"factor": path, "validation": report}


def _load_noise_model(ref):
    from .covariance import load_model
    from .noise_model import NoiseModel

    return NoiseModel.from_covariance(load_model(ref))


def _parse_hw(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"target must look like HxW, got {text!r}") from None
    return h, w


def cmd_sample_noise(cfg, out, threads):
    from .noise_model import NoiseModel, tile_noise
    from .tensorio import write_manifest, write_pgm, write_tensor

    model = _load_noise_model(cfg["factor"]) if cfg["factor"] else NoiseModel.white((16, 16))
    target = _parse_hw(cfg["target"]) if cfg["target"] else tuple(model.shape)
    if cfg["tile_mode"] not in ("independent", "repeat"):
        raise ConfigError(f"unknown tile mode {cfg['tile_mode']!r}")
    try:
        rng = np.random.default_rng(cfg["seed"])
        samples = np.stack([tile_noise(model, cfg["gamma"], target, cfg["tile_mode"], rng).values
                            for _ in range(cfg["count"])])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = os.path.join(out, "noise.cnt")
    write_tensor(path, samples)
    write_manifest(path, {"kind": "noise", "factor": cfg["factor"], "gamma": cfg["gamma"],
                          "target": list(target), "tile_mode": cfg["tile_mode"],
                          "seed": cfg["seed"], "count": cfg["count"]})
    for i in range(min(cfg["previews"], len(samples))):
        write_pgm(os.path.join(out, f"noise_{i:03d}.pgm"), samples[i])
    print(f"wrote {len(samples)} noise samples of shape {target} to {path}")
    return {"noise": path}


def cmd_spectrum(cfg, out, threads):
    from . import analysis as an
    from .tensorio import write_manifest, write_pgm, write_tensor, read_tensor

    grids = read_tensor(_require(cfg, "input"))
    if grids.ndim == 2:
        grids = grids[None]
    if grids.ndim != 3 or min(grids.shape[1:]) < 2:
        raise ConfigError("spectrum input must be (count, H, W) with H, W >= 2")
    spec = an.mean_power_spectrum(grids)
    profile = an.radial_average(spec)
    path = os.path.join(out, "spectrum.cnt")
    write_tensor(path, spec)
    write_pgm(os.path.join(out, "spectrum.pgm"), np.log1p(spec))
    with open(os.path.join(out, "radial.csv"), "w", encoding="utf-8") as fh:
        fh.write("radius,power\n")
        for r, v in enumerate(profile):
            fh.write(f"{r},{v:.10g}\n")
    ratio = None
    if grids.shape[1] == grids.shape[2]:
        try:
            ratio = an.low_freq_ratio(profile, cfg["cutoff"], grids.shape[-1])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    write_manifest(path, {"kind": "spectrum", "input": cfg["input"], "count": len(grids),
                          "cutoff": cfg["cutoff"], "low_freq_ratio": ratio})
    print(f"low_freq_ratio={ratio} count={len(grids)}")
    return {"spectrum": path, "low_freq_ratio": ratio}


def cmd_train(cfg, out, threads):
    import torch

    from . import trainer as tr

    torch.set_num_threads(threads)
    try:
        dataset = tr.ToyDataset(cfg["dataset"], cfg["data_seed"])
        hidden = tuple(int(v) for v in str(cfg["train.hidden"]).split(",") if v.strip())
        tcfg = tr.TrainConfig(
            batch=cfg["train.batch"], steps=cfg["train.steps"], lr=cfg["train.lr"],
            weight_decay=cfg["train.weight_decay"], seed=cfg["train.seed"],
            pairing=cfg["train.pairing"], noise_mix=cfg["train.noise_mix"], hidden=hidden,
            weight_mode=cfg["train.weight_mode"], pair_on=cfg["train.pair_on"],
            log_every=max(1, cfg["train.log_every"]))
        blue = _load_cov(cfg["blue"])
        red = _load_cov(cfg["red"])
        model = tr.select_noise(tcfg.noise_mix, dataset.shape, blue, red)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sched = _schedule(cfg)
    if sched.variant != "blend":
        raise ConfigError("training supports the blend schedule only")

    denoiser, history = tr.train(dataset, tcfg, sched, model)
    first, last = tr.running_loss(history, max(1, min(len(history) // 10, 50)))
    directory = os.path.join(out, "denoiser")
    tr.save_denoiser(directory, denoiser, {
        "dataset": dataset.kind, "data_seed": dataset.seed, "shape": list(dataset.shape),
        "noise_mix": tcfg.noise_mix, "train": tr.config_dict(tcfg),
        "schedule": {k: cfg[k] for k, *_ in SCHEDULE_OPTS},
        "blue": cfg["blue"], "red": cfg["red"]})
    tr.write_metrics_csv(os.path.join(out, "metrics.csv"), history)
    print(f"trained {tcfg.steps} steps: loss {first:.4f} -> {last:.4f}")
    return {"denoiser": directory, "initial_loss": first, "final_loss": last}


def _load_cov(ref):
    if not ref:
        return None
    from .covariance import load_model

    return load_model(ref)


def cmd_generate(cfg, out, threads):
    import torch

    from . import trainer as tr
    from .diffusion import generate
    from .tensorio import write_manifest, write_pgm, write_tensor

    torch.set_num_threads(threads)
    directory = _require(cfg, "denoiser")
    denoiser = tr.load_denoiser(directory)
    with open(os.path.join(directory, "topology.json"), encoding="utf-8") as fh:
        topology = json.load(fh)
    shape = tuple(topology.get("shape", (1, denoiser.dim)))
    trained = topology.get("schedule", {})
    for key, _typ, default, _help in SCHEDULE_OPTS:
        if cfg[key] is None:
            cfg[key] = trained.get(key, default)
    sched = _schedule(cfg)
    if sched.T != denoiser.T:
        raise ConfigError(f"denoiser was trained with T={denoiser.T}, got --T {sched.T}")
    if not 0 <= cfg["early_stop"] <= sched.T:
        raise ConfigError(f"early stop must lie in [0, {sched.T}]")
    samples = generate(denoiser, sched, (cfg["count"], denoiser.dim), seed=cfg["seed"],
                       early_stop=cfg["early_stop"])
    grids = samples.reshape(cfg["count"], *shape)
    path = os.path.join(out, "samples.cnt")
    write_tensor(path, grids)
    write_manifest(path, {"kind": "samples", "denoiser": directory, "seed": cfg["seed"],
                          "early_stop": cfg["early_stop"], "count": cfg["count"]})
    if shape[0] > 1:
        for i in range(min(cfg["previews"], len(grids))):
            write_pgm(os.path.join(out, f"sample_{i:03d}.pgm"), grids[i])
    print(f"wrote {cfg['count']} samples to {path}")
    return {"samples": path}


def cmd_invert_check(cfg, out, threads):
    from .diffusion import invert_check

    if cfg["trials"] < 1 or cfg["T"] < 1 or cfg["dim"] < 1:
        raise ConfigError("trials, T and dim must be positive")
    if not 0 <= cfg["early_stop"] <= cfg["T"]:
        raise ConfigError(f"early stop must lie in [0, {cfg['T']}]")
    if cfg["variant"] not in ("blend", "ddim"):
        raise ConfigError(f"unknown variant {cfg['variant']!r}")
    start = time.perf_counter()
    err = invert_check(cfg["trials"], cfg["T"], cfg["variant"], cfg["seed"],
                       early_stop=cfg["early_stop"], dim=cfg["dim"])
    elapsed = time.perf_counter() - start
    passed = err < cfg["tolerance"]
    print(f"max_error={err:.3e} trials={cfg['trials']} T={cfg['T']} "
          f"variant={cfg['variant']} seconds={elapsed:.2f} pass={passed}")
    if not passed:
        raise RuntimeError(f"max reconstruction error {err:.3e} exceeds {cfg['tolerance']:g}")
    return {"max_error": err, "seconds": elapsed}


def cmd_pair_demo(cfg, out, threads):
    from .trainer import pair_batch, pairing_cost

    rng = np.random.default_rng(cfg["seed"])
    n, dim = cfg["batch"], cfg["dim"]
    wins, greedy_total, random_total = 0, 0.0, 0.0
    for _ in range(cfg["trials"]):
        noise = rng.standard_normal((n, dim))
        data = rng.uniform(-1, 1, (n, dim))
        g = pairing_cost(noise, data, pair_batch(noise, data))
        r = pairing_cost(noise, data)
        wins += g <= r
        greedy_total += g
        random_total += r
    frac = wins / cfg["trials"]
    print(f"greedy<=random in {frac:.3f} of {cfg['trials']} batches; "
          f"mean cost greedy={greedy_total / cfg['trials']:.2f} "
          f"random={random_total / cfg['trials']:.2f}")
    return {"fraction": frac}


HANDLERS = {
    "anneal": cmd_anneal,
    "estimate-cov": cmd_estimate_cov,
    "sample-noise": cmd_sample_noise,
    "spectrum": cmd_spectrum,
    "train": cmd_train,
    "generate": cmd_generate,
    "invert-check": cmd_invert_check,
    "pair-demo": cmd_pair_demo,
}


def run(argv=None):
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if command is None:
            raise ConfigError(f"missing command; choose from {', '.join(COMMANDS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(command, args)
        if args.threads < 1:
            raise ConfigError("threads must be positive")
        os.makedirs(args.out, exist_ok=True)
        result = HANDLERS[command](cfg, args.out, args.threads)
        _write_run_manifest(args.out, command, cfg, {"result": result, "threads": args.threads})
    except ConfigError as exc:
        _fail("config", command, exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("runtime failure", exc_info=True)
        _fail("runtime", command, exc)
        return 1
    return 0


def _fail(kind, command, exc):
    message = str(exc).replace("\n", " ").replace('"', "'")
    print(f'error kind={kind} command={command or "-"} message="{message}"', file=sys.stderr)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
