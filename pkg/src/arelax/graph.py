"""Directed acyclic computation graphs and the feedforward sweep.

A graph is built from a list of node descriptors (dicts). Supported kinds:

  {"kind": "input",   "shape": (1, 28, 28)}
  {"kind": "dense",   "units": 300, "activation": "tanh", "parents": [0]}
  {"kind": "conv",    "out_channels": 32, "kernel": 5, "activation": "tanh"}
  {"kind": "maxpool"}
  {"kind": "flatten"}
  {"kind": "add",     "parents": [i, j]}

"parents" defaults to the previous node, so plain chains need no wiring.
Dense/conv descriptors may carry an explicit "weight" array; otherwise
weights are drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the
supplied Rng. Every dense/conv node also gets backwards parameters psi of
the mirrored shape, drawn independently from the same distribution, so the
learned-backwards-weights mode can be switched on without rebuilding.

Activation shapes are tracked per sample; at run time every activation
carries a leading batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .tensor import Rng, ShapeError, Tensor


class GraphError(ValueError):
    """Invalid graph structure or node descriptor."""


@dataclass
class InputNode:
    shape: tuple[int, ...]


@dataclass
class DenseNode:
    weight: Tensor          # (n_out, n_in)
    activation: str         # "tanh" | "linear"
    psi: Tensor             # (n_in, n_out), backwards parameters


@dataclass
class ConvNode:
    weight: Tensor          # (C_out, C_in, kH, kW)
    activation: str
    psi: Tensor             # same shape as weight


@dataclass
class MaxPoolNode:
    pass


@dataclass
class FlattenNode:
    pass


@dataclass
class AddNode:
    pass


PARAMETRIC = (DenseNode, ConvNode)
ACTIVATIONS = ("tanh", "linear")

# Per-node activation tensors for one minibatch, indexed by node id.
Activations = list[Tensor]


@dataclass
class Graph:
    nodes: list
    parent_ids: list[tuple[int, ...]]
    topo_order: list[int]
    output: int
    input: int
    shapes: list[tuple[int, ...]]
    _children: list[list[int]] = field(default_factory=list)

    def children(self, i: int) -> list[int]:
        if not 0 <= i < len(self.nodes):
            raise IndexError(f"node index {i} out of range (graph has {len(self.nodes)} nodes)")
        return list(self._children[i])

    def parents(self, i: int) -> list[int]:
        if not 0 <= i < len(self.nodes):
            raise IndexError(f"node index {i} out of range (graph has {len(self.nodes)} nodes)")
        return list(self.parent_ids[i])

    def parametric_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if isinstance(n, PARAMETRIC)]


def _toposort(n: int, parent_ids: list[tuple[int, ...]]) -> list[int]:
    children: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for i, ps in enumerate(parent_ids):
        indeg[i] = len(ps)
        for p in ps:
            children[p].append(i)
    order = [i for i in range(n) if indeg[i] == 0]
    queue = list(order)
    while queue:
        i = queue.pop(0)
        for c in children[i]:
            indeg[c] -= 1
            if indeg[c] == 0:
                order.append(c)
                queue.append(c)
    if len(order) != n:
        raise GraphError("cycle detected: graph is not a DAG")
    return order


def _init_uniform(rng: Rng | None, shape: tuple[int, ...], fan_in: int) -> Tensor:
    if rng is None:
        raise GraphError("an Rng is required to initialize parameters that are not given explicitly")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(shape, -bound, bound)


def build(spec: list[dict], rng: Rng | None = None) -> Graph:
    """Validate a node-descriptor list and return a ready Graph.

    Raises GraphError on cycles, shape incompatibilities, missing/duplicate
    input or output nodes, and malformed descriptors.
    """
    n = len(spec)
    if n == 0:
        raise GraphError("empty graph spec")

    parent_ids: list[tuple[int, ...]] = []
    for i, item in enumerate(spec):
        kind = item.get("kind")
        if kind == "input":
            ps: tuple[int, ...] = ()
        elif "parents" in item:
            ps = tuple(int(p) for p in item["parents"])
        else:
            if i == 0:
                raise GraphError(f"node 0 ({kind}) has no parents and is not an input")
            ps = (i - 1,)
        for p in ps:
            if not 0 <= p < n:
                raise GraphError(f"node {i}: parent index {p} out of range")
        parent_ids.append(ps)

    topo = _toposort(n, parent_ids)

    inputs = [i for i, item in enumerate(spec) if item.get("kind") == "input"]
    if len(inputs) != 1:
        raise GraphError(f"graph must have exactly one input node, found {len(inputs)}")

    children: list[list[int]] = [[] for _ in range(n)]
    for i, ps in enumerate(parent_ids):
        for p in ps:
            children[p].append(i)
    sinks = [i for i in range(n) if not children[i]]
    if len(sinks) != 1:
        raise GraphError(f"graph must have exactly one output node, found {len(sinks)}: {sinks}")

    nodes: list = [None] * n
    shapes: list[tuple[int, ...]] = [()] * n
    for i in topo:
        item = spec[i]
        kind = item.get("kind")
        ps = parent_ids[i]
        if kind == "input":
            shape = tuple(int(d) for d in item["shape"])
            if any(d < 0 for d in shape):
                raise GraphError(f"node {i}: negative extent in input shape {shape}")
            nodes[i] = InputNode(shape)
            shapes[i] = shape
            continue

        if kind == "dense":
            if len(ps) != 1:
                raise GraphError(f"node {i}: dense takes exactly one parent")
            pshape = shapes[ps[0]]
            if len(pshape) != 1:
                raise GraphError(
                    f"node {i}: dense needs a flat parent, got shape {pshape} (insert a flatten node)"
                )
            n_in = pshape[0]
            units = int(item["units"])
            act = item.get("activation", "tanh")
            if act not in ACTIVATIONS:
                raise GraphError(f"node {i}: unknown activation {act!r}")
            if "weight" in item:
                w = tensor.as_tensor(item["weight"])
                if w.shape != (units, n_in):
                    raise GraphError(
                        f"node {i}: explicit weight shape {w.shape} != ({units}, {n_in})"
                    )
            else:
                w = _init_uniform(rng, (units, n_in), n_in)
            if "psi" in item:
                psi = tensor.as_tensor(item["psi"])
                if psi.shape != (n_in, units):
                    raise GraphError(f"node {i}: explicit psi shape {psi.shape} != ({n_in}, {units})")
            else:
                psi = _init_uniform(rng, (n_in, units), n_in)
            nodes[i] = DenseNode(w, act, psi)
            shapes[i] = (units,)

        elif kind == "conv":
            if len(ps) != 1:
                raise GraphError(f"node {i}: conv takes exactly one parent")
            pshape = shapes[ps[0]]
            if len(pshape) != 3:
                raise GraphError(f"node {i}: conv needs a (C,H,W) parent, got shape {pshape}")
            c, h, w_ = pshape
            kernel = item.get("kernel", 5)
            kh, kw = (kernel, kernel) if isinstance(kernel, int) else (int(kernel[0]), int(kernel[1]))
            if kh > h or kw > w_:
                raise GraphError(f"node {i}: kernel {kh}x{kw} larger than input {h}x{w_}")
            co = int(item["out_channels"])
            act = item.get("activation", "tanh")
            if act not in ACTIVATIONS:
                raise GraphError(f"node {i}: unknown activation {act!r}")
            fan_in = c * kh * kw
            if "weight" in item:
                wk = tensor.as_tensor(item["weight"])
                if wk.shape != (co, c, kh, kw):
                    raise GraphError(
                        f"node {i}: explicit weight shape {wk.shape} != ({co}, {c}, {kh}, {kw})"
                    )
            else:
                wk = _init_uniform(rng, (co, c, kh, kw), fan_in)
            psi = tensor.as_tensor(item["psi"]) if "psi" in item else _init_uniform(
                rng, (co, c, kh, kw), fan_in
            )
            nodes[i] = ConvNode(wk, act, psi)
            shapes[i] = (co, h - kh + 1, w_ - kw + 1)

        elif kind == "maxpool":
            if len(ps) != 1:
                raise GraphError(f"node {i}: maxpool takes exactly one parent")
            pshape = shapes[ps[0]]
            if len(pshape) != 3:
                raise GraphError(f"node {i}: maxpool needs a (C,H,W) parent, got shape {pshape}")
            c, h, w_ = pshape
            if h % 2 or w_ % 2:
                raise GraphError(f"node {i}: maxpool needs even extents, got {h}x{w_}")
            nodes[i] = MaxPoolNode()
            shapes[i] = (c, h // 2, w_ // 2)

        elif kind == "flatten":
            if len(ps) != 1:
                raise GraphError(f"node {i}: flatten takes exactly one parent")
            nodes[i] = FlattenNode()
            shapes[i] = (int(np.prod(shapes[ps[0]])),)

        elif kind == "add":
            if len(ps) < 2:
                raise GraphError(f"node {i}: add needs at least two parents")
            pshapes = {shapes[p] for p in ps}
            if len(pshapes) != 1:
                raise GraphError(f"node {i}: add parents have differing shapes {sorted(pshapes)}")
            nodes[i] = AddNode()
            shapes[i] = shapes[ps[0]]

        else:
            raise GraphError(f"node {i}: unknown kind {kind!r}")

    g = Graph(
        nodes=nodes,
        parent_ids=parent_ids,
        topo_order=topo,
        output=sinks[0],
        input=inputs[0],
        shapes=shapes,
        _children=children,
    )
    return g


def _apply_activation(a: Tensor, activation: str) -> Tensor:
    return tensor.tanh(a) if activation == "tanh" else a


def forward(g: Graph, x) -> Activations:
    """Feedforward sweep. x has shape (batch, *input_shape).

    Returns per-node activations indexed by node id; these become the
    frozen values for a subsequent relaxation phase.
    """
    x = tensor.as_tensor(x)
    in_shape = g.shapes[g.input]
    if x.ndim != len(in_shape) + 1 or x.shape[1:] != in_shape:
        raise ShapeError(
            f"forward: input shape {x.shape} does not match (batch, *{in_shape})"
        )
    batch = x.shape[0]
    acts: list[Tensor] = [None] * len(g.nodes)  # type: ignore[list-item]
    acts[g.input] = x
    for i in g.topo_order:
        node = g.nodes[i]
        if isinstance(node, InputNode):
            continue
        ps = g.parent_ids[i]
        if isinstance(node, DenseNode):
            a = tensor.matmul(acts[ps[0]], node.weight.T)
            acts[i] = _apply_activation(a, node.activation)
        elif isinstance(node, ConvNode):
            a = tensor.conv2d(acts[ps[0]], node.weight)
            acts[i] = _apply_activation(a, node.activation)
        elif isinstance(node, MaxPoolNode):
            acts[i] = tensor.maxpool2d(acts[ps[0]])[0]
        elif isinstance(node, FlattenNode):
            acts[i] = acts[ps[0]].reshape(batch, -1)
        elif isinstance(node, AddNode):
            out = acts[ps[0]]
            for p in ps[1:]:
                out = tensor.add(out, acts[p])
            acts[i] = out
        else:  # pragma: no cover
            raise GraphError(f"node {i}: unhandled kind {type(node).__name__}")
    return acts
