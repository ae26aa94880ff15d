"""A small reverse-mode differentiation engine over numpy arrays.

Nodes are evaluated eagerly when they are built, so every forward value is
computed exactly once.  :func:`backward` walks the graph in reverse
topological order and applies one rule per primitive from ``BACKWARD_RULES``.

Only the primitives needed by the detector loss exist; there is no
broadcasting (``add`` accepts equal shapes only) and no higher-order
differentiation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from neurstt import tensor3
from neurstt.tensor3 import NumericError, TensorShapeError

_ids = itertools.count()


class Node:
    """One value in the computation graph."""

    __slots__ = ("id", "op", "inputs", "value", "requires_grad", "name", "ctx")

    def __init__(self, op, inputs, value, requires_grad=False, name=None, ctx=None):
        self.id = next(_ids)
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.requires_grad = requires_grad
        self.name = name
        self.ctx = ctx

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{label} shape={self.shape}>"


def _make(op, inputs, value, ctx=None):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by '{op}'")
    return Node(op, inputs, value, any(n.requires_grad for n in inputs), ctx=ctx)


def leaf(value, requires_grad=True, name=None) -> Node:
    value = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite leaf value{f' for {name}' if name else ''}")
    return Node("leaf", (), value, requires_grad, name)


def constant(value, name=None) -> Node:
    return leaf(value, requires_grad=False, name=name)


def detach(x: Node) -> Node:
    return constant(x.value, name=x.name)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise TensorShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make("matmul", (a, b), a.value @ b.value)


def mode_product(x: Node, m: Node, mode: int) -> Node:
    return _make("mode_product", (x, m), tensor3.mode_product(x.value, m.value, mode), ctx=mode)


def add(a: Node, b: Node) -> Node:
    _same_shape("add", a, b)
    return _make("add", (a, b), a.value + b.value)


def scale(a: Node, c: float) -> Node:
    return _make("scale", (a,), float(c) * a.value, ctx=float(c))


def sub(a: Node, b: Node) -> Node:
    return add(a, scale(b, -1.0))


def sin(a: Node) -> Node:
    return _make("sin", (a,), np.sin(a.value))


def cos(a: Node) -> Node:
    return _make("cos", (a,), np.cos(a.value))


def tanh(a: Node) -> Node:
    return _make("tanh", (a,), np.tanh(a.value))


def relu(a: Node) -> Node:
    return _make("relu", (a,), np.maximum(a.value, 0.0))


LEAKY_SLOPE = 0.01


def leaky_relu(a: Node) -> Node:
    return _make("leaky_relu", (a,), np.where(a.value > 0, a.value, LEAKY_SLOPE * a.value))


def elementwise_mul(a: Node, b: Node) -> Node:
    _same_shape("elementwise_mul", a, b)
    return _make("elementwise_mul", (a, b), a.value * b.value)


def soft_threshold(a: Node, level: float) -> Node:
    if level < 0:
        raise TensorShapeError(f"soft_threshold level must be >= 0, got {level}")
    x = a.value
    return _make("soft_threshold", (a,), np.sign(x) * np.maximum(np.abs(x) - level, 0.0), ctx=level)


def abs_sum(a: Node) -> Node:
    return _make("abs_sum", (a,), np.sum(np.abs(a.value)))


def squared_frobenius(a: Node) -> Node:
    return _make("squared_frobenius", (a,), np.sum(a.value * a.value))


def sum_(a: Node) -> Node:
    return _make("sum", (a,), np.sum(a.value))


def nuclear_norm_slices(a: Node) -> Node:
    """Sum over frontal slices ``a[:, :, k]`` of their nuclear norms."""
    x = a.value
    if x.ndim != 3:
        raise TensorShapeError(f"nuclear_norm_slices expects a 3-D tensor, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("nuclear_norm_slices: non-finite input")
    # batched SVD over frames: (n3, n1, n2)
    u, s, vt = np.linalg.svd(np.moveaxis(x, 2, 0), full_matrices=False)
    smax = s[:, :1]
    keep = (s > tensor3.RANK_RTOL * smax) & (smax > 0)
    # subgradient U V^T restricted to the numerically nonzero spectrum
    sub = np.matmul(u * keep[:, None, :], vt)
    return _make("nuclear_norm_slices", (a,), np.sum(s), ctx=np.moveaxis(sub, 0, 2))


def evaluate(root: Node):
    """Forward value of ``root`` (nodes are evaluated as they are built)."""
    return root.value


# -- backward rules: (node, upstream grad) -> tuple of input grads ----------


def _bw_matmul(node, g):
    a, b = node.inputs
    return g @ b.value.T, a.value.T @ g


def _bw_mode_product(node, g):
    x, m = node.inputs
    mode = node.ctx
    gx = tensor3.mode_product(g, m.value.T, mode)
    gm = tensor3.unfold(g, mode) @ tensor3.unfold(x.value, mode).T
    return gx, gm


def _bw_leaky(node, g):
    x = node.inputs[0].value
    return (g * np.where(x > 0, 1.0, LEAKY_SLOPE),)


BACKWARD_RULES = {
    "matmul": _bw_matmul,
    "mode_product": _bw_mode_product,
    "add": lambda node, g: (g, g),
    "scale": lambda node, g: (node.ctx * g,),
    "sin": lambda node, g: (g * np.cos(node.inputs[0].value),),
    "cos": lambda node, g: (-g * np.sin(node.inputs[0].value),),
    "tanh": lambda node, g: (g * (1.0 - node.value**2),),
    "relu": lambda node, g: (g * (node.inputs[0].value > 0),),
    "leaky_relu": _bw_leaky,
    "elementwise_mul": lambda node, g: (g * node.inputs[1].value, g * node.inputs[0].value),
    "soft_threshold": lambda node, g: (g * (np.abs(node.inputs[0].value) > node.ctx),),
    "abs_sum": lambda node, g: (g * np.sign(node.inputs[0].value),),
    "squared_frobenius": lambda node, g: (2.0 * g * node.inputs[0].value,),
    "sum": lambda node, g: (g * np.ones_like(node.inputs[0].value),),
    "nuclear_norm_slices": lambda node, g: (g * node.ctx,),
}


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for child in node.inputs:
            if child.requires_grad and child.id not in seen:
                stack.append((child, False))
    return order


class GradientMap(dict):
    """Leaf node -> gradient array, with lookup by leaf name."""

    def by_name(self) -> dict:
        return {node.name: g for node, g in self.items()}


def backward(root: Node) -> GradientMap:
    """Reverse-mode gradients of a scalar ``root`` w.r.t. every grad-requiring leaf."""
    if root.value.ndim != 0:
        raise TensorShapeError(f"backward needs a scalar root, got shape {root.shape}")
    grads = {root.id: np.array(1.0)}
    out = GradientMap()
    for node in reversed(_topo_order(root)):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.op == "leaf":
            if node.requires_grad:
                if not np.all(np.isfinite(g)):
                    raise NumericError(f"non-finite gradient for leaf {node.name!r}")
                out[node] = g
            continue
        for child, cg in zip(node.inputs, BACKWARD_RULES[node.op](node, g)):
            if not child.requires_grad:
                continue
            if child.id in grads:
                grads[child.id] = grads[child.id] + cg
            else:
                grads[child.id] = cg
    return out


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update with coupled L2 weight decay.

    ``params`` and ``grads`` map parameter names to arrays.  Returns new
    parameter arrays; ``state`` is advanced in place and returned.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    new = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(theta):
            raise TensorShapeError(f"gradient shape {g.shape} != parameter {name!r} {np.shape(theta)}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        g = g + state.weight_decay * theta
        m = state.m.get(name, 0.0) * b1 + (1.0 - b1) * g
        v = state.v.get(name, 0.0) * b2 + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        new[name] = theta - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new, state
