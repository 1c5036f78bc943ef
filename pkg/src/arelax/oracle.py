"""Ground-truth gradients: exact reverse-mode differentiation over a Graph,
and an independent central finite-difference checker.

The loss is L = (1/batch) * sum_b 0.5 * sum_k (target - output)^2, so
dL/d(output) = (output - target) / batch. The relaxation engine is verified
against backprop(); backprop() is verified against finite_diff().
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .graph import (
    AddNode,
    ConvNode,
    DenseNode,
    FlattenNode,
    Graph,
    InputNode,
    MaxPoolNode,
    forward,
)
from .tensor import ShapeError, Tensor


@dataclass
class GradientSet:
    """node: dL/dx per node id; param: dL/dW per dense/conv node id."""

    node: dict[int, Tensor] = field(default_factory=dict)
    param: dict[int, Tensor] = field(default_factory=dict)


def loss_mse(output, target) -> float:
    """Half squared error summed over outputs, averaged over the batch."""
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise ShapeError(f"loss_mse: output {output.shape} vs target {target.shape}")
    batch = output.shape[0]
    return float(0.5 * np.sum((target - output) ** 2) / batch)


def backprop(g: Graph, acts: list[Tensor], target) -> GradientSet:
    """Exact reverse-mode gradients of loss_mse at the given activations.

    Multi-parent contributions sum per the multivariate chain rule; max-pool
    routes gradients through the argmax map recomputed at the stored
    activations (identical tie-break everywhere).
    """
    target = tensor.as_tensor(target)
    batch = acts[g.input].shape[0]
    grads = GradientSet()
    grads.node[g.output] = (acts[g.output] - target) / batch

    for j in reversed(g.topo_order):
        node = g.nodes[j]
        if isinstance(node, InputNode):
            continue
        gj = grads.node[j]
        p = g.parent_ids[j][0]

        if isinstance(node, DenseNode):
            if node.activation == "tanh":
                abar = tensor.matmul(acts[p], node.weight.T)
                gz = tensor.tanh_prime(abar) * gj
            else:
                gz = gj
            grads.param[j] = gz.T @ acts[p]
            _accumulate(grads, p, gz @ node.weight)

        elif isinstance(node, ConvNode):
            co, ci, kh, kw = node.weight.shape
            _, _, h, w = acts[p].shape
            if node.activation == "tanh":
                abar = tensor.conv2d(acts[p], node.weight)
                gz = tensor.tanh_prime(abar) * gj
            else:
                gz = gj
            gz_flat = gz.reshape(gz.shape[0], co, -1)
            cols = tensor.im2col(acts[p], kh, kw)
            grads.param[j] = np.einsum("bop,bkp->ok", gz_flat, cols).reshape(co, ci, kh, kw)
            wflat = node.weight.reshape(co, -1)
            cols_grad = np.matmul(wflat.T[None], gz_flat)
            _accumulate(grads, p, tensor.col2im(cols_grad, ci, kh, kw, h, w))

        elif isinstance(node, MaxPoolNode):
            _, _, h, w = acts[p].shape
            _, idx = tensor.maxpool2d(acts[p])
            _accumulate(grads, p, tensor.maxpool2d_scatter(gj, idx, h, w))

        elif isinstance(node, FlattenNode):
            _accumulate(grads, p, gj.reshape(acts[p].shape))

        elif isinstance(node, AddNode):
            for p in g.parent_ids[j]:
                _accumulate(grads, p, gj)

    return grads


def _accumulate(grads: GradientSet, i: int, contribution: Tensor) -> None:
    if i in grads.node:
        grads.node[i] = grads.node[i] + contribution
    else:
        grads.node[i] = contribution


def finite_diff(g: Graph, x, target, h: float = 1e-5) -> GradientSet:
    """Central differences (L(v+h) - L(v-h)) / 2h per scalar parameter and
    per input coordinate. Independent of backprop by construction."""
    if h <= 0:
        raise ValueError(f"finite_diff: step must be positive, got {h}")
    x = tensor.as_tensor(x)
    target = tensor.as_tensor(target)

    def loss_at() -> float:
        acts = forward(g, x)
        return loss_mse(acts[g.output], target)

    grads = GradientSet()
    for j in g.parametric_ids():
        w = g.nodes[j].weight
        gw = np.zeros_like(w)
        flat = w.reshape(-1)
        gflat = gw.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            lp = loss_at()
            flat[k] = orig - h
            lm = loss_at()
            flat[k] = orig
            gflat[k] = (lp - lm) / (2 * h)
        grads.param[j] = gw

    gx = np.zeros_like(x)
    xflat = x.reshape(-1)
    gxflat = gx.reshape(-1)
    for k in range(xflat.size):
        orig = xflat[k]
        xflat[k] = orig + h
        lp = loss_at()
        xflat[k] = orig - h
        lm = loss_at()
        xflat[k] = orig
        gxflat[k] = (lp - lm) / (2 * h)
    grads.node[g.input] = gx
    return grads
