"""Dense MLP evaluation with exact first and second-order derivatives.

Parameters live in one flat float64 vector.  Layer ``l`` contributes its
weight matrix of shape ``(in_l, out_l)`` in row-major order followed by its
bias of length ``out_l``.  Hidden layers apply the activation; the output
layer is linear.

Second-order meta-gradients are obtained by running the inner loop forward,
then walking it backwards with exact Hessian-vector products computed by
Pearlmutter's R-operator (forward-over-reverse through the backprop pass).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError, NumericError

ACTIVATIONS = ("relu", "tanh")
ORDERS = ("first", "second")


@dataclass(frozen=True)
class NetSpec:
    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InputError(f"invalid layer sizes {self.layer_sizes!r}")
        if self.activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @cached_property
    def slices(self):
        """Per layer: (weight slice, weight shape, bias slice)."""
        out = []
        pos = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(pos, pos + n_in * n_out)
            pos += n_in * n_out
            b = slice(pos, pos + n_out)
            pos += n_out
            out.append((w, (n_in, n_out), b))
        return tuple(out)

    @cached_property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def unpack(self, flat):
        return [(flat[w].reshape(shape), flat[b]) for w, shape, b in self.slices]


class ParamVector:
    """Immutable flat parameter array tied to the network layout it fills."""

    __slots__ = ("values", "spec")

    def __init__(self, values, spec: NetSpec):
        arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
        if arr.shape[0] != spec.n_params:
            raise InputError(
                f"parameter vector has {arr.shape[0]} entries, {spec} needs {spec.n_params}"
            )
        arr.setflags(write=False)
        self.values = arr
        self.spec = spec

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, ParamVector)
            and self.spec == other.spec
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"ParamVector(n={len(self)}, spec={self.spec})"

    def replace(self, values) -> "ParamVector":
        return ParamVector(values, self.spec)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values, self.spec)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise InputError("batch inputs and targets must be 1-D or 2-D arrays")
        if x.shape[0] == 0:
            raise InputError("empty batch")
        if x.shape[0] != y.shape[0]:
            raise InputError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]


def init_params(spec: NetSpec, rng: np.random.Generator) -> ParamVector:
    """Zero biases, weights uniform in +-1/sqrt(fan_in)."""
    flat = np.zeros(spec.n_params)
    for w, (n_in, n_out), _ in spec.slices:
        bound = 1.0 / np.sqrt(n_in)
        flat[w] = rng.uniform(-bound, bound, size=n_in * n_out)
    return ParamVector(flat, spec)


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and spec.n_in == 1:
        x = x[:, None]
    elif x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.n_in:
        raise InputError(f"expected inputs with {spec.n_in} columns, got shape {x.shape}")
    if x.shape[0] == 0:
        raise InputError("no inputs")
    return x


def _check_batch(spec, batch):
    if batch.inputs.shape[1] != spec.n_in or batch.targets.shape[1] != spec.n_out:
        raise InputError(
            f"batch dims ({batch.inputs.shape[1]}, {batch.targets.shape[1]}) "
            f"do not match network ({spec.n_in}, {spec.n_out})"
        )


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_d1(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _act_d2(name, z, a):
    if name == "relu":
        return None
    return -2.0 * a * (1.0 - a * a)


def _forward_cache(spec, layers, x):
    zs = []
    acts = [x]
    a = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        zs.append(z)
        a = z if i == last else _act(spec.activation, z)
        acts.append(a)
    return zs, acts


def _backward(spec, layers, zs, acts, d_out, out):
    """Backprop ``d_out = dL/d(output)``; writes the flat gradient into ``out``."""
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        (ws, shape, bs) = spec.slices[i]
        out[ws] = (acts[i].T @ delta).reshape(-1)
        out[bs] = delta.sum(axis=0)
        if i > 0:
            da = delta @ layers[i][0].T
            delta = da * _act_d1(spec.activation, zs[i - 1], acts[i])
    return out


def _mse(pred, targets):
    r = pred - targets
    return float(np.mean(r * r))


def forward(params: ParamVector, inputs) -> np.ndarray:
    spec = params.spec
    x = _check_inputs(spec, inputs)
    _, acts = _forward_cache(spec, spec.unpack(params.values), x)
    return acts[-1]


def mse_loss(params: ParamVector, batch: Batch) -> float:
    _check_batch(params.spec, batch)
    return _mse(forward(params, batch.inputs), batch.targets)


def _value_and_grad(spec, theta, batch):
    layers = spec.unpack(theta)
    zs, acts = _forward_cache(spec, layers, batch.inputs)
    r = acts[-1] - batch.targets
    loss = float(np.mean(r * r))
    d_out = (2.0 / r.size) * r
    return loss, _backward(spec, layers, zs, acts, d_out, np.empty(spec.n_params))


def grad(params: ParamVector, batch: Batch) -> np.ndarray:
    """Exact gradient of :func:`mse_loss` with respect to the flat parameters."""
    _check_batch(params.spec, batch)
    return _value_and_grad(params.spec, params.values, batch)[1]


def _hvp(spec, theta, batch, v):
    """Hessian of the batch MSE at ``theta`` times ``v`` (R-operator)."""
    layers = spec.unpack(theta)
    dirs = spec.unpack(v)
    act = spec.activation
    last = len(layers) - 1

    zs, acts = [], [batch.inputs]
    rzs, racts = [], [np.zeros_like(batch.inputs)]
    a, ra = batch.inputs, racts[0]
    for i, ((W, b), (VW, Vb)) in enumerate(zip(layers, dirs)):
        z = a @ W + b
        rz = a @ VW + Vb
        if i > 0:
            rz += ra @ W
        zs.append(z)
        rzs.append(rz)
        if i == last:
            a, ra = z, rz
        else:
            a = _act(act, z)
            ra = _act_d1(act, z, a) * rz
        acts.append(a)
        racts.append(ra)

    scale = 2.0 / acts[-1].size
    delta = scale * (acts[-1] - batch.targets)
    rdelta = scale * racts[-1]
    out = np.empty(spec.n_params)
    for i in range(last, -1, -1):
        ws, _, bs = spec.slices[i]
        out[ws] = (racts[i].T @ delta + acts[i].T @ rdelta).reshape(-1)
        out[bs] = rdelta.sum(axis=0)
        if i > 0:
            W, VW = layers[i][0], dirs[i][0]
            da = delta @ W.T
            rda = rdelta @ W.T + delta @ VW.T
            z, a = zs[i - 1], acts[i]
            d1 = _act_d1(act, z, a)
            delta = da * d1
            rdelta = rda * d1
            d2 = _act_d2(act, z, a)
            if d2 is not None:
                rdelta = rdelta + da * d2 * rzs[i - 1]
    return out


def hvp(params: ParamVector, batch: Batch, vector) -> np.ndarray:
    """Exact Hessian-vector product of the batch MSE at ``params``."""
    _check_batch(params.spec, batch)
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape[0] != params.spec.n_params:
        raise InputError("direction vector length does not match parameters")
    return _hvp(params.spec, params.values, batch, v)


def _check_finite(arr, what, step):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} at inner step {step}", step=step)


def _adapt_path(spec, theta, support, steps, lr):
    """Unrolled inner loop; returns the list of iterates theta_0..theta_steps."""
    path = [theta]
    # overflow surfaces as NumericError below, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            _, g = _value_and_grad(spec, path[-1], support)
            _check_finite(g, "support gradient", t)
            nxt = path[-1] - lr * g
            _check_finite(nxt, "adapted parameters", t)
            path.append(nxt)
    return path


def meta_value_and_grad(params: ParamVector, support: Batch, query: Batch, steps: int,
                        inner_lr: float, order: str = "second"):
    """Query loss after ``steps`` inner updates and its gradient w.r.t. ``params``."""
    spec = params.spec
    _check_batch(spec, support)
    _check_batch(spec, query)
    if steps < 1:
        raise InputError(f"steps must be >= 1, got {steps}")
    if inner_lr < 0:
        raise InputError(f"inner_lr must be nonnegative, got {inner_lr}")
    if order not in ORDERS:
        raise InputError(f"unknown order {order!r}")
    path = _adapt_path(spec, params.values, support, steps, inner_lr)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, v = _value_and_grad(spec, path[-1], query)
        _check_finite(v, "query gradient", steps)
        if order == "second":
            for t in range(steps - 1, -1, -1):
                v = v - inner_lr * _hvp(spec, path[t], support, v)
                _check_finite(v, "meta-gradient", t)
    return loss, v


def meta_grad(params: ParamVector, support: Batch, query: Batch, steps: int,
              inner_lr: float, order: str = "second") -> np.ndarray:
    """Gradient of the post-adaptation query loss with respect to ``params``.

    ``order="second"`` differentiates through every inner step exactly;
    ``order="first"`` returns the query gradient at the adapted point.
    """
    return meta_value_and_grad(params, support, query, steps, inner_lr, order)[1]
