import numpy as np
import pytest

from eeml.diffnet import Batch, NetSpec, init_params


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at ``x``."""
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    """Per-coordinate relative error, ignoring coordinates below ``floor``."""
    mask = np.abs(b) > floor
    return np.abs(a[mask] - b[mask]) / np.abs(b[mask])


def random_net(rng, sizes=(1, 40, 40, 1), activation="relu"):
    spec = NetSpec(sizes, activation)
    return init_params(spec, rng)


def random_batch(rng, n, n_in=1, n_out=1, scale=2.0):
    return Batch(rng.uniform(-scale, scale, size=(n, n_in)), rng.normal(size=(n, n_out)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted_run():
    """Two experts trained for 500 steps on the planted two-family mix (~1 min)."""
    import planted
    return planted.train_planted(seed=0)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("ACCEPTANCE")
    for n in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[n])


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Full ``desk`` preset pipeline (several minutes); returns ``(config, comparison)``."""
    from eeml.harness import pipeline
    from eeml.harness.config import resolve
    cfg = resolve("desk", out_dir=str(tmp_path_factory.mktemp("desk")), log_every=0)
    return cfg, pipeline.run_all(cfg)
