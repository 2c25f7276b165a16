"""Experiment stages: pretrain -> cluster -> train -> eval, plus the MAML baseline.

Each stage reads its inputs from and writes its artifacts to ``cfg.out_dir``.
Random streams are separated by namespace so evaluation tasks never share a
stream with any training stage.
"""

from __future__ import annotations

import collections
import json
import logging
from pathlib import Path

import numpy as np

from .. import metacore
from .._parallel import ordered_map
from ..cluster import kmeans_cosine, task_embedding
from ..diffnet import NetSpec
from ..ensemble import ensemble_train, eeml_adapt_and_eval, init_experts
from ..errors import DependencyError
from ..metacore import InnerCfg, OuterCfg
from ..tasks import TaskSource
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .report import MetricsReport, write_history, write_report

log = logging.getLogger(__name__)

# seed namespaces
PRETRAIN, CLUSTER, TRAIN, EVAL = 1, 2, 3, 4

THETA_CLU = "theta_clu.ckpt"
CLUSTER_CKPT = "cluster.ckpt"
ENSEMBLE = "ensemble.ckpt"
MAML = "maml.ckpt"


def stream(seed: int, namespace: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(namespace,)))


def inner_cfg(cfg: ExperimentConfig) -> InnerCfg:
    return InnerCfg(cfg.inner_steps, cfg.inner_lr)


def outer_cfg(cfg: ExperimentConfig, epochs: int) -> OuterCfg:
    return OuterCfg(lr=cfg.outer_lr, batch_size=cfg.batch_size, epochs=epochs,
                    order=cfg.order, average_outer=cfg.average_outer,
                    momentum=cfg.momentum)


def train_source(cfg):
    return TaskSource(cfg.mix, cfg.shots, cfg.train_query, cfg.noise_sd, cfg.x_range)


def eval_source(cfg):
    return TaskSource(cfg.mix, cfg.shots, cfg.q_query, cfg.noise_sd, cfg.x_range)


def eval_episodes(cfg, n_tasks=None):
    return eval_source(cfg)(stream(cfg.seed, EVAL), n_tasks or cfg.eval_tasks)


def _path(cfg, name) -> Path:
    return Path(cfg.out_dir) / name


def _load(cfg, name, kind):
    path = _path(cfg, name)
    if not path.exists():
        raise DependencyError(f"missing {path}; run the stage that produces it first",
                              path=str(path))
    return load_checkpoint(path, expect=kind)


def _meta(cfg, **extra):
    return {"config_hash": cfg.hash(), "seed": cfg.seed, **extra}


def _log_config(cfg, stage):
    log.info("%s: resolved config %s", stage, json.dumps(cfg.to_dict(), sort_keys=True))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def run_pretrain(cfg: ExperimentConfig):
    _log_config(cfg, "pretrain")
    spec = NetSpec(cfg.layer_sizes, cfg.activation)
    theta, history = metacore.pretrain(stream(cfg.seed, PRETRAIN), train_source(cfg),
                                       inner_cfg(cfg), outer_cfg(cfg, cfg.pretrain_epochs),
                                       spec=spec, log_every=cfg.log_every)
    save_checkpoint(_path(cfg, THETA_CLU), theta, _meta(cfg, epochs=cfg.pretrain_epochs))
    write_history(history, _path(cfg, "pretrain_loss.csv"), ["step", "mean_query_loss"])
    return theta, history


def run_cluster(cfg: ExperimentConfig):
    _log_config(cfg, "cluster")
    theta, _, theta_hash = _load(cfg, THETA_CLU, "params")
    inner = inner_cfg(cfg)
    episodes = train_source(cfg)(stream(cfg.seed, CLUSTER), cfg.cluster_buffer)
    embeddings = ordered_map(
        lambda ep: task_embedding(theta, ep, inner, "query_grad", cfg.order), episodes)
    model, labels = kmeans_cosine(embeddings, cfg.K, seed=cfg.seed,
                                  max_iter=cfg.kmeans_max_iter)
    save_checkpoint(_path(cfg, CLUSTER_CKPT), model, _meta(cfg, theta_clu=theta_hash))
    families = collections.defaultdict(collections.Counter)
    for ep, k in zip(episodes, labels):
        families[int(k)][ep.family] += 1
    summary = {
        "K": model.K,
        "inertia": model.inertia,
        "iters_run": model.iters_run,
        "cluster_families": {str(k): dict(sorted(families[k].items())) for k in range(model.K)},
    }
    _path(cfg, "cluster_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info("cluster: inertia %.4f after %d iterations", model.inertia, model.iters_run)
    return model, labels


def run_train(cfg: ExperimentConfig):
    _log_config(cfg, "train")
    theta, _, theta_hash = _load(cfg, THETA_CLU, "params")
    cluster, _, cluster_hash = _load(cfg, CLUSTER_CKPT, "cluster")
    ens = init_experts(theta, cluster, {"seed": cfg.seed, "config_hash": cfg.hash()})
    ens, history = ensemble_train(ens, stream(cfg.seed, TRAIN), train_source(cfg), theta,
                                  inner_cfg(cfg), outer_cfg(cfg, cfg.train_epochs),
                                  log_every=cfg.log_every)
    save_checkpoint(_path(cfg, ENSEMBLE), ens,
                    _meta(cfg, theta_clu=theta_hash, cluster=cluster_hash))
    write_history(history, _path(cfg, "train_loss.csv"),
                  ["step", *(f"expert_{j}" for j in range(ens.K))])
    return ens, history


def train_baseline(cfg: ExperimentConfig):
    """MAML baseline: ``theta_clu`` trained further on the same stream the experts see."""
    theta, _, theta_hash = _load(cfg, THETA_CLU, "params")
    history = []
    if cfg.baseline_continue and cfg.train_epochs:
        theta, history = metacore.meta_train(theta, stream(cfg.seed, TRAIN), train_source(cfg),
                                             inner_cfg(cfg), outer_cfg(cfg, cfg.train_epochs),
                                             log_every=cfg.log_every)
    save_checkpoint(_path(cfg, MAML), theta, _meta(cfg, theta_clu=theta_hash))
    write_history(history, _path(cfg, "baseline_loss.csv"), ["step", "mean_query_loss"])
    return theta


def _report(cfg, method, values, checkpoints):
    report = MetricsReport.from_values(method, cfg.shots, values, q_query=cfg.q_query,
                                       config_hash=cfg.hash(), checkpoints=checkpoints)
    write_report(report, cfg.out_dir, f"{method}_{cfg.shots}shot")
    log.info("%s", report.line())
    return report


def run_eval(cfg: ExperimentConfig, n_tasks=None) -> MetricsReport:
    _log_config(cfg, "eval")
    ens, _, ens_hash = _load(cfg, ENSEMBLE, "ensemble")
    theta, _, theta_hash = _load(cfg, THETA_CLU, "params")
    inner = inner_cfg(cfg)
    episodes = eval_episodes(cfg, n_tasks)
    values = ordered_map(
        lambda ep: eeml_adapt_and_eval(ens, theta, ep, inner, cfg.err_on_adapted), episodes)
    return _report(cfg, "eeml", values, {ENSEMBLE: ens_hash, THETA_CLU: theta_hash})


def run_baseline(cfg: ExperimentConfig, n_tasks=None, retrain=True) -> MetricsReport:
    _log_config(cfg, "baseline")
    if retrain or not _path(cfg, MAML).exists():
        train_baseline(cfg)
    theta, _, maml_hash = _load(cfg, MAML, "params")
    inner = inner_cfg(cfg)
    values = ordered_map(lambda ep: metacore.adapt_and_eval(theta, ep, inner),
                         eval_episodes(cfg, n_tasks))
    return _report(cfg, "maml", values, {MAML: maml_hash})


def compare(cfg, eeml: MetricsReport, maml: MetricsReport) -> dict:
    """Paired EEML vs MAML comparison over the shared evaluation tasks."""
    a = np.asarray(eeml.per_task)
    b = np.asarray(maml.per_task)
    out = {
        "config_hash": cfg.hash(),
        "shots": cfg.shots,
        "task_count": int(a.size),
        "eeml_mean": eeml.mean,
        "eeml_ci": eeml.ci_half_width,
        "maml_mean": maml.mean,
        "maml_ci": maml.ci_half_width,
        "ratio": eeml.mean / maml.mean,
        "eeml_wins": int(np.sum(a < b)),
        "checkpoints": {**maml.checkpoints, **eeml.checkpoints},
    }
    _path(cfg, f"comparison_{cfg.shots}shot.json").write_text(
        json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def run_all(cfg: ExperimentConfig) -> dict:
    run_pretrain(cfg)
    run_cluster(cfg)
    run_train(cfg)
    eeml = run_eval(cfg)
    maml = run_baseline(cfg)
    return compare(cfg, eeml, maml)
