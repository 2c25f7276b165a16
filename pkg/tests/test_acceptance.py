"""Acceptance suite: one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py`` and read the ACCEPTANCE section at the
end of the terminal output.  The full-budget criterion (`paper` preset) runs only with
``EEML_PAPER=1``; set ``EEML_PAPER_DIR`` to reuse (or keep) its artifacts.
"""

import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from eeml.cluster import ClusterModel, kmeans_cosine, normalize
from eeml.diffnet import NetSpec, grad, init_params, meta_grad, mse_loss
from eeml.ensemble import (Ensemble, alpha_coefficients, beta_weights, eeml_evaluate,
                           ensemble_predict, expert_errors, softmax, task_alphas)
from eeml.errors import CheckpointError, CheckpointVersionError, NumericError
from eeml.harness import pipeline
from eeml.harness.checkpoint import load_checkpoint, save_checkpoint
from eeml.harness.config import resolve
from eeml.metacore import InnerCfg, adapt_and_eval
from eeml.tasks import sample_episode

from conftest import fd_grad, random_batch, random_net, rel_err

# tolerances and thresholds
PAPER_MAML_RANGE = (0.5, 1.2)
PAPER_EEML_RANGE = (0.08, 0.30)
DESK_RATIO_MAX = 0.8
GRAD_RTOL = 1e-4
META_GRAD_RTOL = 1e-3
PLANTED_RECOVERY_MIN = 95
SIMPLEX_TOL = 1e-9
EQUIVARIANCE_TOL = 1e-12

RESULTS = {}


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def elapsed(t0):
    return f"{time.perf_counter() - t0:.1f}s"


# 1 -------------------------------------------------------------------------

@pytest.mark.paper
def test_criterion_1_full_budget():
    if os.environ.get("EEML_PAPER") != "1":
        RESULTS[1] = "SKIP criterion 1: full-budget run needs EEML_PAPER=1"
        pytest.skip("set EEML_PAPER=1 to run the full-budget preset")
    t0 = time.perf_counter()
    out = Path(os.environ.get("EEML_PAPER_DIR", "runs/paper"))
    cfg = resolve("paper", out_dir=str(out))
    summary = out / "comparison_10shot.json"
    if summary.exists() and json.loads(summary.read_text())["config_hash"] == cfg.hash():
        result = json.loads(summary.read_text())
    else:
        try:
            result = pipeline.run_all(cfg)
        except NumericError as exc:
            verdict(1, False, f"training diverged: {exc} [{elapsed(t0)}]")
    maml, eeml = result["maml_mean"], result["eeml_mean"]
    ok = (PAPER_MAML_RANGE[0] <= maml <= PAPER_MAML_RANGE[1]
          and PAPER_EEML_RANGE[0] <= eeml <= PAPER_EEML_RANGE[1] and eeml < maml)
    verdict(1, ok, f"MAML {maml:.3f} (want {PAPER_MAML_RANGE}), EEML {eeml:.3f} "
                   f"(want {PAPER_EEML_RANGE}), EEML < MAML: {eeml < maml} [{elapsed(t0)}]")


# 2 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_2_desk_paired_comparison(desk_run):
    _, result = desk_run
    ratio = result["ratio"]
    verdict(2, ratio <= DESK_RATIO_MAX,
            f"EEML {result['eeml_mean']:.4f} +- {result['eeml_ci']:.4f} vs MAML "
            f"{result['maml_mean']:.4f} +- {result['maml_ci']:.4f} over "
            f"{result['task_count']} shared tasks, ratio {ratio:.3f} (want <= {DESK_RATIO_MAX}), "
            f"EEML better on {result['eeml_wins']} tasks")


# 3 -------------------------------------------------------------------------

def _composed(p, support, query, steps, lr):
    def f(theta):
        th = theta
        for _ in range(steps):
            th = th - lr * grad(p.replace(th), support)
        return mse_loss(p.replace(th), query)
    return f


def test_criterion_3_gradient_correctness():
    t0 = time.perf_counter()
    worst_grad = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = random_net(rng, activation=("relu", "tanh")[seed % 2])
        b = random_batch(rng, 10)
        fd = fd_grad(lambda th: mse_loss(p.replace(th), b), p.values.copy())
        worst_grad = max(worst_grad, float(np.max(rel_err(grad(p, b), fd))))
    worst_meta = 0.0
    for steps, activation in itertools.product((1, 5), ("relu", "tanh")):
        rng = np.random.default_rng(100 + steps)
        p = random_net(rng, (1, 20, 20, 1), activation)
        s, q = random_batch(rng, 10), random_batch(rng, 10)
        g = meta_grad(p, s, q, steps, 0.01, "second")
        fd = fd_grad(_composed(p, s, q, steps, 0.01), p.values.copy())
        worst_meta = max(worst_meta, float(np.max(rel_err(g, fd))))
    verdict(3, worst_grad < GRAD_RTOL and worst_meta < META_GRAD_RTOL,
            f"gradient max rel err {worst_grad:.1e} (want < {GRAD_RTOL:.0e}) on 20 nets, "
            f"second-order meta-gradient {worst_meta:.1e} (want < {META_GRAD_RTOL:.0e}) "
            f"for steps 1 and 5 [{elapsed(t0)}]")


# 4 -------------------------------------------------------------------------

def test_criterion_4_dictator_reduction(tmp_path):
    t0 = time.perf_counter()
    cfg = resolve(None, dict(K=1, pretrain_epochs=30, train_epochs=30, cluster_buffer=50,
                             eval_tasks=200, log_every=0), out_dir=str(tmp_path))
    pipeline.run_all(cfg)
    eeml = (tmp_path / "eeml_10shot.csv").read_bytes()
    maml = (tmp_path / "maml_10shot.csv").read_bytes()
    # the single expert scored directly through the plain MAML evaluation path
    ens, _, _ = load_checkpoint(tmp_path / "ensemble.ckpt")
    direct = [adapt_and_eval(ens.experts[0], ep, InnerCfg()) for ep in pipeline.eval_episodes(cfg)]
    report = json.loads((tmp_path / "comparison_10shot.json").read_text())
    rows = [float(line.split(",")[1]) for line in eeml.decode().splitlines()[1:]]
    ok = eeml == maml and rows == direct
    verdict(4, ok, f"K=1 per-task MSEs bitwise equal to MAML on {len(rows)} tasks: "
                   f"{eeml == maml}, ratio {report['ratio']!r} [{elapsed(t0)}]")


# 5 -------------------------------------------------------------------------

def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _same_partition(a, b):
    return all((a[i] == a[j]) == (b[i] == b[j])
               for i, j in itertools.combinations(range(len(a)), 2))


def _brute_force_2(X):
    best, best_labels = np.inf, None
    for mask in range(1, 2 ** (len(X) - 1)):
        labels = np.array([(mask >> i) & 1 for i in range(len(X))])
        obj = 0.0
        for k in (0, 1):
            m = X[labels == k].sum(axis=0)
            obj += np.sum(1.0 - X[labels == k] @ (m / np.linalg.norm(m)))
        if obj < best - 1e-12:
            best, best_labels = obj, labels
    return best_labels


def test_criterion_5_clustering():
    t0 = time.perf_counter()
    monotone = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        X = _unit_rows(rng.normal(size=(int(rng.integers(10, 60)), int(rng.integers(2, 8)))))
        model, _ = kmeans_cosine(X, int(rng.integers(2, 6)), seed=seed, n_init=1)
        monotone += bool(np.all(np.diff(model.objective_trace) <= 1e-12))

    recovered = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        directions = np.linalg.qr(rng.normal(size=(40, 4)))[0].T
        truth = rng.integers(4, size=200)
        truth[:4] = np.arange(4)
        X = _unit_rows(directions[truth] + 0.03 * rng.normal(size=(200, 40)))
        _, labels = kmeans_cosine(X, 4, seed=seed)
        recovered += _same_partition(labels, truth)

    agree = 0
    cases = 40
    for seed in range(cases):
        rng = np.random.default_rng(seed)
        n, dim = int(rng.integers(3, 9)), int(rng.integers(2, 6))
        groups = rng.integers(2, size=n)
        groups[:2] = [0, 1]
        X = _unit_rows(_unit_rows(rng.normal(size=(2, dim)))[groups]
                       + 0.25 * rng.normal(size=(n, dim)))
        _, labels = kmeans_cosine(X, 2, seed=seed)
        agree += _same_partition(labels, _brute_force_2(X))

    ok = monotone == 100 and recovered >= PLANTED_RECOVERY_MIN and agree == cases
    verdict(5, ok, f"monotone objective {monotone}/100, planted recovery {recovered}/100 "
                   f"(want >= {PLANTED_RECOVERY_MIN}), brute-force agreement {agree}/{cases} "
                   f"[{elapsed(t0)}]")


# 6 -------------------------------------------------------------------------

def test_criterion_6_coefficient_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    simplex_ok = 0
    for _ in range(10_000):
        K = int(rng.integers(1, 9))
        sim = rng.uniform(-1, 1, K)
        err = softmax(rng.uniform(0.0, 2.0, K))
        vectors = (softmax(sim), err, beta_weights(sim, err))
        simplex_ok += all(abs(v.sum() - 1) <= SIMPLEX_TOL and np.all(v > 0) for v in vectors)

    scale_ok = True
    inner = InnerCfg()
    p = random_net(rng, (1, 12, 12, 1))
    ep = sample_episode(rng)
    cluster = ClusterModel(_unit_rows(rng.normal(size=(4, p.spec.n_params))))
    g = meta_grad(p, ep.support, ep.query, inner.steps, inner.lr)
    base = task_alphas(p, [ep], cluster, inner)[0]
    for s in (1e-6, 0.1, 10.0, 1e6):
        scale_ok &= bool(np.max(np.abs(alpha_coefficients(normalize(s * g), cluster) - base)) < 1e-15)

    worst = 0.0
    for _ in range(10):
        theta = random_net(rng)
        experts = [theta.replace(theta.values + 0.05 * rng.normal(size=len(theta)))
                   for _ in range(4)]
        ens = Ensemble(experts, ClusterModel(_unit_rows(rng.normal(size=(4, len(theta))))))
        perm = rng.permutation(4)
        permuted = Ensemble([experts[i] for i in perm], ClusterModel(ens.cluster.centers[perm]))
        task = sample_episode(rng)
        a = eeml_evaluate(ens, theta, task, inner)
        b = eeml_evaluate(permuted, theta, task, inner)
        pa = ensemble_predict(a["adapted"], a["beta"], task.query.inputs)
        pb = ensemble_predict(b["adapted"], b["beta"], task.query.inputs)
        err_a = expert_errors(a["adapted"], task.support)
        err_b = expert_errors(b["adapted"], task.support)
        worst = max(worst, float(np.max(np.abs(pa - pb))),
                    float(np.max(np.abs(a["beta"][perm] - b["beta"]))),
                    float(np.max(np.abs(err_a[perm] - err_b))))

    ok = simplex_ok == 10_000 and scale_ok and worst <= EQUIVARIANCE_TOL
    verdict(6, ok, f"simplex contracts {simplex_ok}/10000, alpha scale invariance {scale_ok}, "
                   f"permutation deviation {worst:.1e} (want <= {EQUIVARIANCE_TOL:.0e}) "
                   f"[{elapsed(t0)}]")


# 7 -------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_specialization(planted_run):
    import planted
    t0 = time.perf_counter()
    _, ens, owner = planted_run
    inner = InnerCfg()
    losses = {}
    for family in planted.FAMILIES:
        tasks = planted.family_episodes(1000, family, 200)
        losses[family] = [float(np.mean([adapt_and_eval(e, ep, inner) for ep in tasks]))
                          for e in ens.experts]
    ok = len(set(owner)) == 2 and all(losses[owner[j]][j] < losses[owner[j]][1 - j]
                                      for j in range(2))
    detail = ", ".join(f"expert {j} ({owner[j]}) {losses[owner[j]][j]:.3f} vs "
                       f"{losses[owner[j]][1 - j]:.3f}" for j in range(2))
    verdict(7, ok, f"own-family query loss after 500 steps: {detail} [{elapsed(t0)}]")


# 8 -------------------------------------------------------------------------

def test_criterion_8_persistence(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    spec = NetSpec((1, 40, 40, 1))
    experts = [init_params(spec, rng) for _ in range(4)]
    ens = Ensemble(experts, ClusterModel(_unit_rows(rng.normal(size=(4, spec.n_params))),
                                         seed=3, inertia=0.5, iters_run=9), {"seed": 3})
    exact = True
    for name, obj in (("p", experts[0]), ("c", ens.cluster), ("e", ens)):
        save_checkpoint(tmp_path / name, obj)
        exact &= load_checkpoint(tmp_path / name)[0] == obj
    clean = (tmp_path / "e").read_bytes()

    typed = crashes = 0
    corruptions = [clean[:n] for n in (0, 5, 12, 100, len(clean) - 1)]
    corruptions += [b"XXXX" + clean[4:], clean + b"\0"]
    for _ in range(100):
        data = bytearray(clean)
        data[int(rng.integers(0, 300))] ^= 0xFF
        corruptions.append(bytes(data))
    for data in corruptions:
        (tmp_path / "bad").write_bytes(data)
        try:
            load_checkpoint(tmp_path / "bad")
        except CheckpointError:
            typed += 1
        except Exception:
            crashes += 1
    version = bytearray(clean)
    version[4] = 9
    (tmp_path / "v").write_bytes(bytes(version))
    try:
        load_checkpoint(tmp_path / "v")
        version_ok = False
    except CheckpointVersionError:
        version_ok = True

    ok = exact and crashes == 0 and version_ok
    verdict(8, ok, f"bit-exact round trip {exact}, {typed} typed errors and {crashes} crashes "
                   f"over {len(corruptions)} corrupted files, version mismatch typed "
                   f"{version_ok} [{elapsed(t0)}]")
