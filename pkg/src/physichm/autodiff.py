"""Reverse-mode differentiation over numpy arrays.

A :class:`Var` wraps an ndarray together with the parents it was computed
from and a vector-Jacobian rule.  Graphs are built by running ordinary Python
code on Vars; :class:`CompGraph` packages such a builder with named trainable
parameters and named inputs so the same topology can be re-evaluated under
different bindings (training steps, finite-difference probes, saliency).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class GraphError(RuntimeError):
    """Raised for structural problems: bad shapes, missing bindings, bad loss."""


class NonFiniteError(FloatingPointError):
    """A node produced NaN or Inf."""


class Var:
    __slots__ = ("value", "parents", "vjp", "op", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), vjp=None, op="leaf", requires_grad=False, name=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Var({label}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, other):
        return power(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def leaf(value, requires_grad=False, name=None, dtype=None) -> Var:
    arr = np.asarray(value, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return Var(arr, requires_grad=requires_grad, name=name)


def as_var(x, like: Var | None = None) -> Var:
    if isinstance(x, Var):
        return x
    dtype = like.dtype if like is not None else None
    return leaf(x, dtype=dtype)


def _node(value, parents, vjp, op) -> Var:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite value produced by node '{op}'")
    req = any(p.requires_grad for p in parents)
    return Var(value, parents, vjp if req else None, op, req)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Var, Var]:
    if isinstance(a, Var):
        return a, as_var(b, a)
    b = as_var(b)
    return as_var(a, b), b


# --- elementwise binary ---------------------------------------------------


def add(a, b) -> Var:
    a, b = _pair(a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Var:
    a, b = _pair(a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Var:
    a, b = _pair(a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)), "mul")


def div(a, b) -> Var:
    a, b = _pair(a, b)
    out = a.value / b.value

    def vjp(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), vjp, "div")


def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def power(a, p) -> Var:
    """``a ** p``; a Var exponent requires a strictly positive base."""
    a = as_var(a)
    if not isinstance(p, Var):
        p = float(p)
        out = a.value ** p
        return _node(out, (a,), lambda g: (g * p * a.value ** (p - 1.0),), "power")
    p = as_var(p, a)
    if np.any(a.value <= 0):
        raise GraphError("power with a variable exponent needs a positive base")
    out = a.value ** p.value

    def vjp(g):
        ga = g * p.value * a.value ** (p.value - 1.0)
        gp = g * out * np.log(a.value)
        return _unbroadcast(ga, a.shape), _unbroadcast(gp, p.shape)

    return _node(out, (a, p), vjp, "power")


# --- elementwise unary ----------------------------------------------------


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Var:
    a = as_var(a)
    if np.any(a.value <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(a) -> Var:
    a = as_var(a)
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def sigmoid(a) -> Var:
    a = as_var(a)
    x = a.value
    out = np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Var:
    a = as_var(a)
    x = a.value
    out = np.logaddexp(0.0, x).astype(x.dtype)

    def vjp(g):
        return (g * np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype),)

    return _node(out, (a,), vjp, "softplus")


def elu(a) -> Var:
    a = as_var(a)
    x = a.value
    neg_part = np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    return _node(out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg_part + 1.0).astype(x.dtype),), "elu")


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clamp_min(a, lo: float) -> Var:
    a = as_var(a)
    keep = a.value > lo
    out = np.where(keep, a.value, np.asarray(lo, dtype=a.dtype))
    return _node(out, (a,), lambda g: (g * keep,), "clamp_min")


def smooth_l1(a, delta: float = 1.0) -> Var:
    """Huber-style penalty: ``0.5 x^2 / delta`` inside ``|x| < delta``, else ``|x| - delta/2``."""
    a = as_var(a)
    x = a.value
    inside = np.abs(x) < delta
    out = np.where(inside, 0.5 * x * x / delta, np.abs(x) - 0.5 * delta)
    return _node(out, (a,), lambda g: (g * np.where(inside, x / delta, np.sign(x)),), "smooth_l1")


# --- linear algebra -------------------------------------------------------


def matmul(a, b) -> Var:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise GraphError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.value, b.value)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), vjp, "matmul")


def einsum(spec: str, *operands) -> Var:
    """Explicit-output einsum; every operand index must appear elsewhere in the spec."""
    ins, out_spec = spec.replace(" ", "").split("->")
    in_specs = ins.split(",")
    if len(in_specs) != len(operands):
        raise GraphError(f"einsum spec '{spec}' expects {len(in_specs)} operands")
    ops = [as_var(x) for x in operands]
    out = np.einsum(spec, *[x.value for x in ops], optimize=True)

    def vjp(g):
        grads = []
        for i, target in enumerate(in_specs):
            others = [s for j, s in enumerate(in_specs) if j != i]
            sub_spec = ",".join([out_spec] + others) + "->" + target
            vals = [x.value for j, x in enumerate(ops) if j != i]
            grads.append(np.einsum(sub_spec, g, *vals, optimize=True))
        return tuple(grads)

    return _node(np.asarray(out), tuple(ops), vjp, "einsum")


def cosine_similarity(a, b, axis: int = -1) -> Var:
    a, b = _pair(a, b)
    saa = (a.value * a.value).sum(axis=axis, keepdims=True)
    sbb = (b.value * b.value).sum(axis=axis, keepdims=True)
    if np.any(saa == 0) or np.any(sbb == 0):
        raise GraphError("cosine similarity of a zero-norm vector")
    na, nb = np.sqrt(saa), np.sqrt(sbb)
    dot = (a.value * b.value).sum(axis=axis, keepdims=True)
    # one square root of the product: sqrt(fl(s*s)) == s, so cos(a, a) is exactly 1
    cos = dot / np.sqrt(saa * sbb)

    def vjp(g):
        g = np.expand_dims(g, axis)
        ga = g * (b.value / (na * nb) - cos * a.value / (na * na))
        gb = g * (a.value / (na * nb) - cos * b.value / (nb * nb))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(np.squeeze(cos, axis), (a, b), vjp, "cosine_similarity")


# --- reductions -----------------------------------------------------------


def _expand_like(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)
    return _node(np.asarray(out), (a,), lambda g: (_expand_like(g, a.shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = np.mean(a.value, axis=axis, keepdims=keepdims)
    n = a.value.size // max(np.asarray(out).size, 1)
    return _node(np.asarray(out), (a,), lambda g: (_expand_like(g / n, a.shape, axis, keepdims),), "mean")


def max_(a, axis: int, keepdims=False) -> Var:
    """Max-reduce; the adjoint goes to the first maximal element along ``axis``."""
    a = as_var(a)
    idx = np.argmax(a.value, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.value, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx_k, gk, axis=axis)
        return (full,)

    return _node(out, (a,), vjp, "max")


def cumsum(a, axis: int, reverse: bool = False) -> Var:
    a = as_var(a)
    if reverse:
        out = np.flip(np.cumsum(np.flip(a.value, axis), axis=axis), axis)
        vjp = lambda g: (np.cumsum(g, axis=axis),)
    else:
        out = np.cumsum(a.value, axis=axis)
        vjp = lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)
    return _node(out, (a,), vjp, "cumsum")


def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), vjp, "softmax")


# --- shape manipulation ---------------------------------------------------


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Var:
    a = as_var(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i: int, j: int) -> Var:
    a = as_var(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def broadcast_to(a, shape) -> Var:
    a = as_var(a)
    return _node(np.broadcast_to(a.value, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def expand_dims(a, axis: int) -> Var:
    a = as_var(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def concat(items: Sequence, axis: int = 0) -> Var:
    items = [as_var(x) for x in items]
    out = np.concatenate([x.value for x in items], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in items])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(items), vjp, "concat")


def getitem(a, index) -> Var:
    a = as_var(a)
    out = a.value[index]
    basic = _is_basic(index)

    def vjp(g):
        full = np.zeros_like(a.value)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), vjp, "slice")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in parts)


def take_along_axis(a, indices: np.ndarray, axis: int) -> Var:
    """Gather with integer indices (indices carry no gradient)."""
    a = as_var(a)
    out = np.take_along_axis(a.value, indices, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.value)
        where = list(np.indices(indices.shape, sparse=True))
        where[axis] = indices
        np.add.at(full, tuple(where), g)
        return (full,)

    return _node(out, (a,), vjp, "take_along_axis")


def stop_gradient(a) -> Var:
    a = as_var(a)
    return Var(a.value, op="stop_gradient")


def no_adjoint(a, op: str) -> Var:
    """Wrap a value computed outside the inventory; backward through it fails."""
    a = as_var(a)
    return Var(a.value, (a,), None, op, a.requires_grad)


# --- composite helpers ----------------------------------------------------


def linear(x, w, b=None) -> Var:
    """``x @ w + b``; a single vector ``x`` is treated as a batch of one."""
    x = as_var(x, w if isinstance(w, Var) else None)
    y = matmul(expand_dims(x, 0), w)[0] if x.ndim == 1 else matmul(x, w)
    return y if b is None else add(y, b)


# --- graphs ---------------------------------------------------------------


def toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root: Var, wrt: Iterable[Var]) -> list[np.ndarray]:
    """Gradient of scalar ``root`` with respect to each Var in ``wrt``."""
    if root.value.size != 1:
        raise GraphError(f"loss must be scalar, got shape {root.shape}")
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(toposort(root)):
        if not node.parents:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            raise GraphError(f"node '{node.op}' has no registered adjoint rule")
        for p, gp in zip(node.parents, node.vjp(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = np.asarray(gp)
    out = []
    for v in wrt:
        g = grads.get(id(v))
        out.append(np.zeros_like(v.value) if g is None else np.asarray(g, order="C").reshape(v.shape))
    for v, g in zip(wrt, out):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for '{v.name}'")
    return out


@dataclass
class GraphContext:
    """What a graph builder sees: parameter and input leaves plus the RNG."""

    params: dict[str, Var]
    inputs: dict[str, Var]
    rng: np.random.Generator
    training: bool = True


Builder = Callable[[GraphContext], Mapping[str, Var]]


@dataclass
class CompGraph:
    """A re-evaluable graph with named trainable leaves and named inputs.

    ``build`` receives a :class:`GraphContext` and returns the named output
    nodes.  Stochastic nodes must draw only from ``ctx.rng`` so that a fixed
    seed freezes them.
    """

    build: Builder
    params: dict[str, np.ndarray]
    inputs: tuple[str, ...]
    training: bool = True
    _ctx: GraphContext | None = field(default=None, repr=False)
    _outputs: dict[str, Var] = field(default_factory=dict, repr=False)

    def forward(self, bindings: Mapping[str, np.ndarray], seed: int | None = 0,
                grad_inputs: Sequence[str] = ()) -> dict[str, np.ndarray]:
        missing = [n for n in self.inputs if n not in bindings]
        if missing:
            raise GraphError(f"missing binding: {', '.join(missing)}")
        params = {k: Var(v, requires_grad=True, name=k) for k, v in self.params.items()}
        inputs = {k: Var(np.asarray(bindings[k]), requires_grad=k in grad_inputs, name=k)
                  for k in self.inputs}
        ctx = GraphContext(params, inputs, np.random.default_rng(seed), self.training)
        outputs = dict(self.build(ctx))
        self._ctx, self._outputs = ctx, outputs
        return {k: v.value for k, v in outputs.items()}

    def backward(self, loss_node: str = "loss",
                 wrt_inputs: Sequence[str] = ()) -> dict[str, np.ndarray]:
        if self._ctx is None:
            raise GraphError("forward has not been evaluated")
        if loss_node not in self._outputs:
            raise GraphError(f"unknown output node '{loss_node}'")
        for name in wrt_inputs:
            if not self._ctx.inputs[name].requires_grad:
                raise GraphError(f"input '{name}' was not marked for gradients in forward")
        leaves = dict(self._ctx.params)
        leaves.update({k: self._ctx.inputs[k] for k in wrt_inputs})
        names = list(leaves)
        grads = grad(self._outputs[loss_node], [leaves[k] for k in names])
        return dict(zip(names, grads))


def forward(graph: CompGraph, bindings: Mapping[str, np.ndarray], seed: int | None = 0,
            grad_inputs: Sequence[str] = ()) -> dict[str, np.ndarray]:
    return graph.forward(bindings, seed=seed, grad_inputs=grad_inputs)


def backward(graph: CompGraph, loss_node: str = "loss",
             wrt_inputs: Sequence[str] = ()) -> dict[str, np.ndarray]:
    return graph.backward(loss_node, wrt_inputs)


def grad_check(graph: CompGraph, bindings: Mapping[str, np.ndarray], loss_node: str,
               param: str, eps: float = 1e-6, seed: int | None = 0,
               indices: Sequence[tuple[int, ...]] | None = None) -> float:
    """Largest relative error between backward and central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.  The
    stochastic draws are frozen by re-running every probe with ``seed``.
    ``indices`` restricts the probe to a subset of the parameter's elements.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    theta = graph.params[param]
    if theta.dtype != np.float64:
        raise ValueError("grad_check requires float64 parameters")
    graph.forward(bindings, seed=seed)
    analytic = graph.backward(loss_node)[param]
    if indices is None:
        indices = list(np.ndindex(theta.shape))
    worst = 0.0
    for idx in indices:
        orig = theta[idx]
        theta[idx] = orig + eps
        f_plus = float(graph.forward(bindings, seed=seed)[loss_node])
        theta[idx] = orig - eps
        f_minus = float(graph.forward(bindings, seed=seed)[loss_node])
        theta[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite perturbation result at {param}{idx}")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
