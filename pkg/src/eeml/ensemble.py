"""Ensemble of cluster-specialized experts: training and weighted-vote prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffnet
from ._parallel import ordered_map
from .cluster import ClusterModel, similarity, task_embedding
from .diffnet import ParamVector
from .errors import DegenerateEmbeddingError, InputError, NumericError
from .metacore import Descent, InnerCfg, OuterCfg, inner_adapt, weighted_sum

log = logging.getLogger(__name__)

# exp() argument cap when forming similarity / err ratios from log-errors
_MAX_EXP = 700.0


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def _logsumexp(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


@dataclass(frozen=True)
class Ensemble:
    experts: tuple
    cluster: ClusterModel
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        experts = tuple(self.experts)
        if len(experts) != self.cluster.K:
            raise InputError(f"{len(experts)} experts for K={self.cluster.K} clusters")
        if len({e.spec for e in experts}) != 1:
            raise InputError("experts must share one network layout")
        if experts[0].spec.n_params != self.cluster.dim:
            raise InputError("center dimension does not match the parameter count")
        object.__setattr__(self, "experts", experts)

    @property
    def K(self) -> int:
        return len(self.experts)

    @property
    def spec(self):
        return self.experts[0].spec

    def with_experts(self, experts) -> "Ensemble":
        return Ensemble(tuple(experts), self.cluster, dict(self.provenance))


def init_experts(theta_clu: ParamVector, cluster: ClusterModel, provenance=None) -> Ensemble:
    return Ensemble(tuple(theta_clu.copy() for _ in range(cluster.K)), cluster,
                    dict(provenance or {}))


def alpha_coefficients(u, cluster: ClusterModel) -> np.ndarray:
    """Softmax over the cosine similarities of ``u`` to the cluster centers."""
    return softmax(similarity(u, cluster))


def task_alphas(theta_clu, tasks, cluster, inner, order="second") -> np.ndarray:
    """(n_tasks, K) training weights from query-gradient embeddings at ``theta_clu``."""
    if cluster.K == 1:
        return np.ones((len(tasks), 1))

    def one(ep):
        try:
            u = task_embedding(theta_clu, ep, inner, "query_grad", order)
        except DegenerateEmbeddingError:
            log.warning("zero task gradient at theta_clu; using uniform alpha")
            return np.full(cluster.K, 1.0 / cluster.K)
        return alpha_coefficients(u, cluster)

    return np.stack(ordered_map(one, tasks))


def _expert_directions(ens, tasks, theta_clu, inner, outer, alpha=None):
    """Per-expert alpha-weighted meta-gradient sums, all from the current snapshot."""
    if not tasks:
        raise InputError("ensemble_train_step needs at least one task")
    if alpha is None:
        alpha = task_alphas(theta_clu, tasks, ens.cluster, inner, outer.order)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(tasks), ens.K):
        raise InputError(f"alpha must have shape {(len(tasks), ens.K)}, got {alpha.shape}")

    def expert_update(j):
        expert = ens.experts[j]
        losses, grads, weights = [], [], []
        for i, ep in enumerate(tasks):
            a = alpha[i, j]
            if a == 0.0:
                continue
            try:
                loss, g = diffnet.meta_value_and_grad(expert, ep.support, ep.query,
                                                      inner.steps, inner.lr, outer.order)
            except NumericError as exc:
                raise NumericError(f"expert {j}: {exc}", step=exc.step, expert=j) from exc
            losses.append(loss)
            grads.append(g)
            weights.append(None if ens.K == 1 else a)
        if not grads:
            return np.zeros(expert.spec.n_params), float("nan")
        return weighted_sum(grads, weights, outer.average_outer), float(np.mean(losses))

    results = ordered_map(expert_update, range(ens.K))
    return [r[0] for r in results], [r[1] for r in results]


def _apply(ens, directions, opts):
    new = []
    for j, (e, d, opt) in enumerate(zip(ens.experts, directions, opts)):
        values = opt.step(e.values, d)
        if not np.all(np.isfinite(values)):
            raise NumericError(f"expert {j} diverged", expert=j)
        new.append(e.replace(values))
    return ens.with_experts(new)


def ensemble_train_step(ens: Ensemble, tasks, theta_clu: ParamVector, inner: InnerCfg,
                        outer: OuterCfg, alpha=None) -> Ensemble:
    """One synchronous update of all experts on the alpha-weighted query losses.

    ``alpha`` overrides the (n_tasks, K) weight matrix; by default it is
    computed from the tasks' query-gradient embeddings at ``theta_clu``.
    """
    directions, _ = _expert_directions(ens, tasks, theta_clu, inner, outer, alpha)
    return _apply(ens, directions, [Descent(outer.lr) for _ in range(ens.K)])


def ensemble_train(ens, rng, task_source, theta_clu, inner, outer, epochs=None,
                   log_every=0):
    """Repeated :func:`ensemble_train_step`; returns ``(ensemble, history)``.

    History rows are ``(step, mean_query_loss_expert_0, ..., _K-1)``.
    """
    epochs = outer.epochs if epochs is None else epochs
    history = []
    opts = [Descent(outer.lr, outer.momentum) for _ in range(ens.K)]
    for step in range(epochs):
        tasks = task_source(rng, outer.batch_size)
        try:
            directions, losses = _expert_directions(ens, tasks, theta_clu, inner, outer)
            ens = _apply(ens, directions, opts)
        except NumericError as exc:
            raise NumericError(f"ensemble step {step}: {exc}", step=exc.step,
                               expert=exc.expert) from exc
        history.append((step, *losses))
        if log_every and step % log_every == 0:
            log.info("ensemble step %d: expert losses %s", step,
                     " ".join(f"{l:.4f}" for l in losses))
    return ens, history


def fine_tune_experts(ens: Ensemble, support, inner: InnerCfg) -> list:
    if not isinstance(inner, InnerCfg):
        raise InputError("fine_tune_experts needs an InnerCfg")
    return [inner_adapt(e, support, inner) for e in ens.experts]


def _support_losses(experts, support):
    return np.array([diffnet.mse_loss(e, support) for e in experts])


def expert_errors(adapted, support) -> np.ndarray:
    """Softmax of each expert's support loss (higher loss, higher err)."""
    if not adapted:
        raise InputError("no experts")
    return softmax(_support_losses(adapted, support))


def beta_weights(sim, err) -> np.ndarray:
    """Voting weights: softmax of the elementwise ratio ``sim / err``."""
    sim = np.asarray(sim, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if sim.shape != err.shape or sim.ndim != 1:
        raise InputError("sim and err must be vectors of equal length")
    if np.any(err <= 0):
        raise InputError("err entries must be strictly positive")
    return softmax(sim / err)


def beta_from_losses(sim, losses) -> np.ndarray:
    """:func:`beta_weights` applied to ``softmax(losses)``, evaluated in log space.

    ``softmax(losses)`` underflows to exact zeros once loss gaps exceed ~745,
    which would make ``sim / err`` undefined.  Here ``1 / err`` is
    ``exp(logsumexp(losses) - loss)`` with the exponent capped.
    """
    sim = np.asarray(sim, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    inv_err = np.exp(np.minimum(_logsumexp(losses) - losses, _MAX_EXP))
    return softmax(sim * inv_err)


def ensemble_predict(adapted, beta, query_inputs) -> np.ndarray:
    """Convex combination of the experts' outputs with weights ``beta``."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (len(adapted),):
        raise InputError(f"beta has shape {beta.shape} for {len(adapted)} experts")
    out = None
    for b, e in zip(beta, adapted):
        term = b * diffnet.forward(e, query_inputs)
        out = term if out is None else out + term
    return out


def support_similarity(ens: Ensemble, theta_clu, support) -> np.ndarray:
    """Similarity of a test task's support gradient at ``theta_clu`` to the centers."""
    g = diffnet.grad(theta_clu, support)
    norm = np.linalg.norm(g)
    if not norm > 0:
        log.warning("zero support gradient at theta_clu; using uniform similarity")
        return np.zeros(ens.K)
    return ens.cluster.centers @ (g / norm)


def eeml_evaluate(ens: Ensemble, theta_clu, episode, inner: InnerCfg,
                  err_on_adapted: bool = True) -> dict:
    """Full test-time pipeline for one episode, with intermediate quantities."""
    sim = support_similarity(ens, theta_clu, episode.support)
    adapted = fine_tune_experts(ens, episode.support, inner)
    scored = adapted if err_on_adapted else ens.experts
    losses = _support_losses(scored, episode.support)
    beta = beta_from_losses(sim, losses)
    pred = ensemble_predict(adapted, beta, episode.query.inputs)
    return {
        "sim": sim,
        "support_losses": losses,
        "beta": beta,
        "adapted": adapted,
        "mse": diffnet._mse(pred, episode.query.targets),
    }


def eeml_adapt_and_eval(ens: Ensemble, theta_clu, episode, inner: InnerCfg,
                        err_on_adapted: bool = True) -> float:
    return eeml_evaluate(ens, theta_clu, episode, inner, err_on_adapted)["mse"]
