"""MAML inner/outer loops, pretraining and per-task evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffnet
from ._parallel import ordered_map
from .diffnet import Batch, NetSpec, ParamVector
from .errors import InputError, NumericError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InnerCfg:
    steps: int = 5
    lr: float = 0.001

    def __post_init__(self):
        if not 1 <= int(self.steps) <= 100:
            raise InputError(f"inner steps must lie in [1, 100], got {self.steps}")
        if not self.lr > 0:
            raise InputError(f"inner lr must be positive, got {self.lr}")


@dataclass(frozen=True)
class OuterCfg:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 15000
    order: str = "second"
    average_outer: bool = False
    momentum: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError(f"outer lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be positive and epochs nonnegative")
        if self.order not in diffnet.ORDERS:
            raise InputError(f"unknown order {self.order!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")


def inner_adapt(params: ParamVector, support: Batch, cfg: InnerCfg) -> ParamVector:
    """``cfg.steps`` full-batch gradient steps on the support loss."""
    path = diffnet._adapt_path(params.spec, params.values, support, cfg.steps, cfg.lr)
    return params.replace(path[-1])


def weighted_sum(grads, weights=None, average=False):
    """``sum_i w_i g_i`` accumulated in list order.

    A weight of ``None`` means the gradient enters unscaled.
    """
    if weights is None:
        weights = [None] * len(grads)
    total = np.zeros_like(grads[0])
    for g, w in zip(grads, weights):
        total += g if w is None else w * g
    if average:
        total /= len(grads)
    return total


class Descent:
    """Plain gradient descent with an optional heavy-ball momentum term."""

    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def step(self, values, direction):
        if self.momentum > 0:
            if self.velocity is None:
                self.velocity = direction
            else:
                self.velocity = self.momentum * self.velocity + direction
            direction = self.velocity
        return values - self.lr * direction


def task_meta_grads(params, tasks, inner: InnerCfg, order: str):
    """(query loss, meta-gradient) for every task, in task order."""
    def one(ep):
        return diffnet.meta_value_and_grad(params, ep.support, ep.query, inner.steps,
                                           inner.lr, order)
    return ordered_map(one, tasks)


def outer_step(params: ParamVector, tasks, inner: InnerCfg, outer: OuterCfg) -> ParamVector:
    if not tasks:
        raise InputError("outer_step needs at least one task")
    results = task_meta_grads(params, tasks, inner, outer.order)
    total = weighted_sum([g for _, g in results], average=outer.average_outer)
    return params.replace(params.values - outer.lr * total)


def meta_train(params: ParamVector, rng, task_source, inner: InnerCfg, outer: OuterCfg,
               epochs: int | None = None, log_every: int = 0):
    """Run ``epochs`` outer steps (one sampled task batch each).

    Returns the final parameters and a list of ``(step, mean_query_loss)``
    rows, where the loss is the post-adaptation query loss at the start of
    each step.
    """
    epochs = outer.epochs if epochs is None else epochs
    history = []
    opt = Descent(outer.lr, outer.momentum)
    theta = params.values
    for step in range(epochs):
        tasks = task_source(rng, outer.batch_size)
        try:
            results = task_meta_grads(params.replace(theta), tasks, inner, outer.order)
        except NumericError as exc:
            raise NumericError(f"outer step {step}: {exc}", step=exc.step) from exc
        losses = [l for l, _ in results]
        history.append((step, float(np.mean(losses))))
        total = weighted_sum([g for _, g in results], average=outer.average_outer)
        theta = opt.step(theta, total)
        if not np.all(np.isfinite(theta)):
            raise NumericError(f"meta-training diverged at outer step {step}", step=step)
        if log_every and step % log_every == 0:
            log.info("outer step %d: mean query loss %.5f", step, history[-1][1])
    return params.replace(theta), history


def pretrain(rng, task_source, inner: InnerCfg, outer: OuterCfg,
             spec: NetSpec | None = None, log_every: int = 0):
    """MAML pretraining from a seeded random initialization.

    The initialization is drawn from ``rng`` before any task is sampled.
    Returns ``(theta_clu, history)``.
    """
    spec = spec or NetSpec((1, 40, 40, 1))
    init = diffnet.init_params(spec, rng)
    return meta_train(init, rng, task_source, inner, outer, log_every=log_every)


def adapt_and_eval(params: ParamVector, episode, cfg: InnerCfg) -> float:
    """Query MSE after adapting on the episode's support set."""
    if not isinstance(cfg, InnerCfg):
        raise InputError("adapt_and_eval needs an InnerCfg")
    adapted = inner_adapt(params, episode.support, cfg)
    return diffnet.mse_loss(adapted, episode.query)
