import time

import numpy as np
import pytest

from tvnoise import mask_forge as mf
from tvnoise.covariance import build_covariance_model

ENSEMBLE = 256
RESULTS = []


def record(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture
def report():
    return record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)


def _timed_ensemble(resolution, count, mode, seed, sweeps=None, shape=None):
    cfg = mf.AnnealConfig(seed=seed) if sweeps is None else mf.AnnealConfig(sweeps=sweeps, seed=seed)
    start = time.perf_counter()
    masks = mf.anneal_ensemble(resolution, count, cfg, mode, shape)
    return mf.stack(masks), time.perf_counter() - start


@pytest.fixture(scope="session")
def blue16():
    """(stack, seconds) of 256 blue masks at R = 16 with the default 50 R^2 proposals."""
    return _timed_ensemble(16, ENSEMBLE, mf.BLUE, seed=101)


@pytest.fixture(scope="session")
def red16():
    return _timed_ensemble(16, ENSEMBLE, mf.RED, seed=202)


@pytest.fixture(scope="session")
def white16():
    return mf.stack(mf.white_ensemble(16, ENSEMBLE, seed=303))


@pytest.fixture(scope="session")
def blue16_model(blue16):
    return build_covariance_model(blue16[0])


@pytest.fixture(scope="session")
def blue8_model():
    masks, _ = _timed_ensemble(8, 256, mf.BLUE, seed=404, sweeps=50 * 64)
    return build_covariance_model(masks)


@pytest.fixture(scope="session")
def signal_factors():
    """Blue and red models for 1 x 64 signals."""
    blue, _ = _timed_ensemble(64, 256, mf.BLUE, seed=505, sweeps=50 * 64, shape=(1, 64))
    red, _ = _timed_ensemble(64, 256, mf.RED, seed=606, sweeps=50 * 64, shape=(1, 64))
    return build_covariance_model(blue), build_covariance_model(red)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
