"""Few-shot regression episodes drawn from four function families."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnet import Batch
from .errors import InputError

FAMILIES = ("sinusoids", "line", "quadratic", "cubic")

PARAM_RANGES = {
    "sinusoids": ((0.1, 5.0), (0.8, 1.2), (0.0, 2.0 * math.pi)),
    "line": ((-3.0, 3.0), (-3.0, 3.0)),
    "quadratic": ((-0.2, 0.2), (-2.0, 2.0), (-3.0, 3.0)),
    "cubic": ((-0.1, 0.1), (-0.2, 0.2), (-2.0, 2.0), (-3.0, 3.0)),
}


@dataclass(frozen=True)
class FamilySpec:
    family: str
    param_ranges: tuple

    @classmethod
    def get(cls, family: str) -> "FamilySpec":
        if family not in PARAM_RANGES:
            raise InputError(f"unknown function family {family!r}")
        return cls(family, PARAM_RANGES[family])

    @property
    def arity(self) -> int:
        return len(self.param_ranges)


@dataclass(frozen=True)
class Episode:
    support: Batch
    query: Batch
    family: str
    # diagnostics only; learners never read this
    true_params: tuple


def eval_family(family: str, p, x):
    """Evaluate a family formula; ``x`` may be a scalar or an array."""
    spec = FamilySpec.get(family)
    p = tuple(float(v) for v in p)
    if len(p) != spec.arity:
        raise InputError(f"{family} takes {spec.arity} parameters, got {len(p)}")
    if family == "sinusoids":
        return p[0] * np.sin(p[1] * x + p[2])
    if family == "line":
        return p[0] * x + p[1]
    if family == "quadratic":
        return p[0] * x**2 + p[1] * x + p[2]
    return p[0] * x**3 + p[1] * x**2 + p[2] * x + p[3]


def normalize_mix(mix):
    """Turn a mapping or 4-sequence of nonnegative weights into probabilities."""
    if isinstance(mix, dict):
        unknown = set(mix) - set(FAMILIES)
        if unknown:
            raise InputError(f"unknown families in mix: {sorted(unknown)}")
        w = np.array([float(mix.get(f, 0.0)) for f in FAMILIES])
    else:
        w = np.asarray(mix, dtype=np.float64)
        if w.shape != (len(FAMILIES),):
            raise InputError(f"mix needs {len(FAMILIES)} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InputError(f"mix weights must be nonnegative with positive sum: {w}")
    return w / w.sum()


def sample_episode(rng: np.random.Generator, mix=(1, 1, 1, 1), k_shot: int = 10,
                   q_query: int = 100, noise_sd: float = 0.0,
                   x_range=(-5.0, 5.0)) -> Episode:
    if k_shot < 1 or q_query < 1:
        raise InputError("k_shot and q_query must be positive")
    if noise_sd < 0:
        raise InputError("noise_sd must be nonnegative")
    lo, hi = x_range
    if not lo < hi:
        raise InputError(f"empty x range {x_range}")
    probs = normalize_mix(mix)
    family = FAMILIES[int(rng.choice(len(FAMILIES), p=probs))]
    ranges = PARAM_RANGES[family]
    params = tuple(float(rng.uniform(a, b)) for a, b in ranges)
    x = rng.uniform(lo, hi, size=k_shot + q_query)
    y = eval_family(family, params, x)
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=y.shape)
    return Episode(
        support=Batch(x[:k_shot], y[:k_shot]),
        query=Batch(x[k_shot:], y[k_shot:]),
        family=family,
        true_params=params,
    )


def sample_batch(rng: np.random.Generator, n_tasks: int, **kwargs) -> list:
    """``n_tasks`` episodes, each from its own child stream of ``rng``."""
    if n_tasks < 1:
        raise InputError("n_tasks must be positive")
    return [sample_episode(child, **kwargs) for child in rng.spawn(n_tasks)]


class TaskSource:
    """Callable producing task batches with a fixed episode configuration."""

    def __init__(self, mix=(1, 1, 1, 1), k_shot=10, q_query=100, noise_sd=0.0,
                 x_range=(-5.0, 5.0)):
        self.kwargs = dict(mix=tuple(normalize_mix(mix)), k_shot=int(k_shot),
                           q_query=int(q_query), noise_sd=float(noise_sd),
                           x_range=tuple(x_range))

    def __call__(self, rng, n_tasks):
        return sample_batch(rng, n_tasks, **self.kwargs)

    def with_shots(self, k_shot=None, q_query=None):
        kw = dict(self.kwargs)
        if k_shot is not None:
            kw["k_shot"] = int(k_shot)
        if q_query is not None:
            kw["q_query"] = int(q_query)
        return TaskSource(**kw)
