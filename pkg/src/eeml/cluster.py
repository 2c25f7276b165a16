"""Gradient task embeddings and spherical (cosine) K-means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffnet
from .errors import DegenerateEmbeddingError, InputError

SOURCES = ("query_grad", "support_grad")
_UNIT_TOL = 1e-8


@dataclass(frozen=True)
class GradientEmbedding:
    u: np.ndarray
    source: str = "query_grad"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InputError(f"unknown embedding source {self.source!r}")


@dataclass(frozen=True)
class ClusterModel:
    centers: np.ndarray  # (K, dim), unit rows
    seed: int = 0
    inertia: float = 0.0
    iters_run: int = 0
    objective_trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.array(self.centers, dtype=np.float64, copy=True)
        if c.ndim != 2 or c.shape[0] < 1:
            raise InputError("centers must be a non-empty (K, dim) array")
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, ClusterModel)
            and np.array_equal(self.centers, other.centers)
            and (self.seed, self.inertia, self.iters_run)
            == (other.seed, other.inertia, other.iters_run)
        )


def normalize(g, source="query_grad") -> GradientEmbedding:
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(g)
    if not norm > 0 or not np.isfinite(norm):
        raise DegenerateEmbeddingError(f"cannot normalize gradient with norm {norm}")
    return GradientEmbedding(g / norm, source)


def task_embedding(theta_clu, episode, inner, source="query_grad",
                   order="second") -> GradientEmbedding:
    """Unit-norm task gradient at ``theta_clu``.

    ``query_grad`` uses the meta-gradient of the post-adaptation query loss
    (needs query labels, so training only).  ``support_grad`` uses the plain
    support-loss gradient and is what test tasks get.
    """
    if source == "query_grad":
        g = diffnet.meta_grad(theta_clu, episode.support, episode.query, inner.steps,
                              inner.lr, order)
    elif source == "support_grad":
        g = diffnet.grad(theta_clu, episode.support)
    else:
        raise InputError(f"unknown embedding source {source!r}")
    return normalize(g, source)


def _as_unit(x, name="vector"):
    x = np.asarray(getattr(x, "u", x), dtype=np.float64)
    if abs(np.linalg.norm(x) - 1.0) > _UNIT_TOL:
        raise InputError(f"{name} is not unit norm (|x| = {np.linalg.norm(x)})")
    return x


def cosine_distance(a, b) -> float:
    a = _as_unit(a, "a")
    b = _as_unit(b, "b")
    if a.shape != b.shape:
        raise InputError("dimension mismatch")
    return float(1.0 - a @ b)


def similarity(u, model: ClusterModel) -> np.ndarray:
    """Cosine similarity of an embedding to every center."""
    u = np.asarray(getattr(u, "u", u), dtype=np.float64)
    if u.shape != (model.dim,):
        raise InputError(f"embedding has shape {u.shape}, centers have dim {model.dim}")
    return model.centers @ u


def assign(u, model: ClusterModel) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(similarity(u, model)))


def _stack(embeddings):
    if isinstance(embeddings, np.ndarray):
        X = np.asarray(embeddings, dtype=np.float64)
    else:
        X = np.stack([np.asarray(getattr(e, "u", e), dtype=np.float64) for e in embeddings])
    if X.ndim != 2:
        raise InputError("embeddings must form a (n, dim) array")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise InputError("all embeddings must be unit norm")
    return X


def _seed_centers(X, K, rng):
    """k-means++ seeding with cosine distance."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.clip(1.0 - X @ X[chosen[0]], 0.0, None)
    for _ in range(1, K):
        w = dist**2
        total = w.sum()
        if total > 0:
            idx = int(rng.choice(n, p=w / total))
        else:
            # every point coincides with a chosen center; take any unused index
            idx = int(next(i for i in rng.permutation(n) if i not in chosen))
        chosen.append(idx)
        dist = np.minimum(dist, np.clip(1.0 - X @ X[idx], 0.0, None))
    return X[chosen].copy()


def _objective(X, centers, labels):
    return float(np.sum(1.0 - np.einsum("ij,ij->i", X, centers[labels])))


def _update_centers(X, labels, old, K):
    centers = old.copy()
    for k in range(K):
        members = X[labels == k]
        if len(members):
            m = members.sum(axis=0)
            norm = np.linalg.norm(m)
            # antipodal members can cancel exactly; keep the previous center then
            if norm > 0:
                centers[k] = m / norm
    return centers


def _repair_empty(X, labels, centers, K):
    """Reseed each empty cluster at the point farthest from its own center."""
    labels = labels.copy()
    centers = centers.copy()
    for k in range(K):
        if np.any(labels == k):
            continue
        counts = np.bincount(labels, minlength=K)
        dist = 1.0 - np.einsum("ij,ij->i", X, centers[labels])
        dist[counts[labels] < 2] = -np.inf
        far = int(np.argmax(dist))
        labels[far] = k
        centers[k] = X[far]
    return labels, centers


def _lloyd(X, K, rng, max_iter):
    centers = _seed_centers(X, K, rng)
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        new_labels = np.argmax(X @ centers.T, axis=1)
        if np.bincount(new_labels, minlength=K).min() == 0:
            new_labels, centers = _repair_empty(X, new_labels, centers, K)
        stable = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        centers = _update_centers(X, labels, centers, K)
        trace.append(_objective(X, centers, labels))
        if stable:
            break
    return centers, labels, trace, it


def kmeans_cosine(embeddings, K: int, seed=0, max_iter: int = 100, n_init: int = 10):
    """Lloyd iterations under cosine distance, best of ``n_init`` seeded restarts.

    Returns ``(ClusterModel, assignments)``.  ``objective_trace`` on the model
    holds the objective after every iteration of the winning restart.
    """
    X = _stack(embeddings)
    n = X.shape[0]
    K = int(K)
    if K < 1:
        raise InputError("K must be positive")
    if K > n:
        raise InputError(f"cannot form {K} clusters from {n} points")
    if max_iter < 1 or n_init < 1:
        raise InputError("max_iter and n_init must be positive")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        run = _lloyd(X, K, np.random.default_rng(child), max_iter)
        if best is None or run[2][-1] < best[2][-1]:
            best = run
    centers, labels, trace, it = best
    model = ClusterModel(centers=centers, seed=int(seed), inertia=trace[-1], iters_run=it,
                         objective_trace=tuple(trace))
    return model, labels
