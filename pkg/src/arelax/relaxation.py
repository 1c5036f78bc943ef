"""The activation relaxation engine.

After a feedforward sweep freezes activations xbar, every non-input node
runs a leaky-integrator update whose fixed point is the loss gradient at
that node (scaled by batch size, since the loss averages over the batch):

    output node:   dx = -x - eps_bar,          eps_bar = target - xbar
    internal node: dx = -x + sum over children j of VJP_j(x_j)
    then           x <- x + eta_x * dx         (all nodes simultaneously)

The per-edge VJP transports a child's relaxing activity back to its parent
through the local Jacobian evaluated at the frozen feedforward values: for
a dense child, (f'(abar) * x_child) @ W; a conv child routes through the
transposed-convolution position; max-pool scatters through its frozen
argmax map; flatten reshapes; add passes through unchanged.

Variants, all switchable per ARConfig:
  * backwards_mode="learned_psi": the transport matrix W (or conv kernel)
    is replaced by separate backwards parameters psi, learned by
    psi_update() as the mirror of the weight update so psi tracks the
    transpose of W.
  * nonlinearity_mode="dropped": the f' factor is omitted from both the
    relaxation transport and the weight update.
  * scopes restrict either variant to conv nodes only, dense nodes only,
    or all ("conv" / "dense" / "all").
  * unfreeze_relax_deriv: f' in the transport is re-evaluated each step at
    the current (relaxing) parent activity instead of the frozen one.
  * unfreeze_weight_deriv: same substitution inside the weight update.
  * unfreeze_weight_activity: the weight update's outer product uses the
    relaxed parent activity instead of the frozen one (known to destroy
    learning; supported so the failure is measurable).

Weight updates at equilibrium descend the loss:
    dW = -eta_theta * mean_batch[(f'(abar) * x_child_star) outer xbar_parent]
and equal -eta_theta times the exact loss gradient once the relaxation has
converged (baseline flags).
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
)
from .tensor import NonFiniteError, Tensor

DIVERGENCE_LIMIT = 1e6

BACKWARDS_MODES = ("transpose", "learned_psi")
NONLINEARITY_MODES = ("exact", "dropped")
SCOPES = ("all", "conv", "dense")


class DivergenceError(RuntimeError):
    """Relaxation activity exceeded the divergence guard or went non-finite."""

    def __init__(self, node: int, iteration: int, detail: str = ""):
        self.node = node
        self.iteration = iteration
        msg = f"relaxation diverged at node {node}, iteration {iteration}"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass
class ARConfig:
    """Step sizes, iteration budget, and variant switches.

    Setting unfreeze_relax_deriv and unfreeze_weight_deriv together gives
    the fully-unfrozen-derivative condition; eta_psi defaults to eta_theta.
    """

    eta_x: float = 0.1
    n_iters: int = 100
    eta_theta: float = 0.0005
    eta_psi: float | None = None        # defaults to eta_theta
    backwards_mode: str = "transpose"
    backwards_scope: str = "all"
    nonlinearity_mode: str = "exact"
    nonlinearity_scope: str = "all"
    unfreeze_relax_deriv: bool = False
    unfreeze_weight_deriv: bool = False
    unfreeze_weight_activity: bool = False

    def __post_init__(self):
        if not 0.0 < self.eta_x <= 1.0:
            raise ValueError(f"eta_x must be in (0, 1], got {self.eta_x}")
        if self.n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.backwards_mode not in BACKWARDS_MODES:
            raise ValueError(f"backwards_mode must be one of {BACKWARDS_MODES}")
        if self.nonlinearity_mode not in NONLINEARITY_MODES:
            raise ValueError(f"nonlinearity_mode must be one of {NONLINEARITY_MODES}")
        if self.backwards_scope not in SCOPES or self.nonlinearity_scope not in SCOPES:
            raise ValueError(f"scopes must be one of {SCOPES}")
        if self.eta_psi is None:
            self.eta_psi = self.eta_theta


def _in_scope(node, scope: str) -> bool:
    if scope == "all":
        return True
    if scope == "conv":
        return isinstance(node, ConvNode)
    return isinstance(node, DenseNode)


def _drops_nonlinearity(node, cfg: ARConfig) -> bool:
    return cfg.nonlinearity_mode == "dropped" and _in_scope(node, cfg.nonlinearity_scope)


def _uses_psi(node, cfg: ARConfig) -> bool:
    return cfg.backwards_mode == "learned_psi" and _in_scope(node, cfg.backwards_scope)


@dataclass
class RelaxState:
    """Frozen sweep data plus the relaxing activities for one minibatch.

    xbar, abar, eps_bar, fprime_bar, pool_idx and cols_bar never change
    during a phase; only x does.
    """

    xbar: list[Tensor]
    x: list[Tensor]
    abar: dict[int, Tensor]
    eps_bar: Tensor
    fprime_bar: dict[int, Tensor] = field(default_factory=dict)
    pool_idx: dict[int, Tensor] = field(default_factory=dict)
    cols_bar: dict[int, Tensor] = field(default_factory=dict)
    last_max_dx: float = float("inf")


def init_state(g: Graph, acts: list[Tensor], target, cfg: ARConfig) -> RelaxState:
    """Freeze the sweep values and start the relaxing activities at xbar."""
    target = tensor.as_tensor(target)
    s = RelaxState(
        xbar=list(acts),
        x=[a.copy() for a in acts],
        abar={},
        eps_bar=target - acts[g.output],
    )
    for j in g.parametric_ids():
        node = g.nodes[j]
        p = g.parent_ids[j][0]
        if isinstance(node, DenseNode):
            abar = tensor.matmul(acts[p], node.weight.T)
        else:
            co, ci, kh, kw = node.weight.shape
            cols = tensor.im2col(acts[p], kh, kw)
            s.cols_bar[j] = cols
            b = acts[p].shape[0]
            hp, wp = g.shapes[j][1], g.shapes[j][2]
            abar = np.matmul(node.weight.reshape(co, -1)[None], cols).reshape(b, co, hp, wp)
        s.abar[j] = abar
        if node.activation == "tanh":
            s.fprime_bar[j] = tensor.tanh_prime(abar)
    for j, node in enumerate(g.nodes):
        if isinstance(node, MaxPoolNode):
            p = g.parent_ids[j][0]
            s.pool_idx[j] = tensor.maxpool2d(acts[p])[1]
    return s


def _relax_fprime(g: Graph, s: RelaxState, cfg: ARConfig, j: int) -> Tensor | None:
    """f' factor for node j's transport; None means identity (linear)."""
    node = g.nodes[j]
    if node.activation != "tanh":
        return None
    if not cfg.unfreeze_relax_deriv:
        return s.fprime_bar[j]
    p = g.parent_ids[j][0]
    if isinstance(node, DenseNode):
        return tensor.tanh_prime(s.x[p] @ node.weight.T)
    return tensor.tanh_prime(tensor.conv2d(s.x[p], node.weight))


def _transport(g: Graph, s: RelaxState, cfg: ARConfig, j: int) -> list[tuple[int, Tensor]]:
    """VJP contributions of node j's current activity to each of its parents."""
    node = g.nodes[j]
    xj = s.x[j]
    ps = g.parent_ids[j]

    if isinstance(node, DenseNode):
        v = xj if _drops_nonlinearity(node, cfg) else _mul_fprime(_relax_fprime(g, s, cfg, j), xj)
        if _uses_psi(node, cfg):
            return [(ps[0], v @ node.psi.T)]
        return [(ps[0], v @ node.weight)]

    if isinstance(node, ConvNode):
        co, ci, kh, kw = node.weight.shape
        v = xj if _drops_nonlinearity(node, cfg) else _mul_fprime(_relax_fprime(g, s, cfg, j), xj)
        back = node.psi if _uses_psi(node, cfg) else node.weight
        vflat = v.reshape(v.shape[0], co, -1)
        cols_grad = np.matmul(back.reshape(co, -1).T[None], vflat)
        _, _, h, w = s.xbar[ps[0]].shape
        return [(ps[0], tensor.col2im(cols_grad, ci, kh, kw, h, w))]

    if isinstance(node, MaxPoolNode):
        _, _, h, w = s.xbar[ps[0]].shape
        return [(ps[0], tensor.maxpool2d_scatter(xj, s.pool_idx[j], h, w))]

    if isinstance(node, FlattenNode):
        return [(ps[0], xj.reshape(s.xbar[ps[0]].shape))]

    if isinstance(node, AddNode):
        return [(p, xj) for p in ps]

    raise NotImplementedError(type(node).__name__)  # pragma: no cover


def _mul_fprime(fp: Tensor | None, v: Tensor) -> Tensor:
    return v if fp is None else fp * v


def relax_step(g: Graph, s: RelaxState, cfg: ARConfig, target, iteration: int = 0) -> RelaxState:
    """One synchronous update: all dx computed from pre-step values, then
    applied at once, so node iteration order never affects the result."""
    incoming: dict[int, Tensor] = {}
    for j in g.topo_order:
        if isinstance(g.nodes[j], InputNode):
            continue
        try:
            for p, contribution in _transport(g, s, cfg, j):
                if isinstance(g.nodes[p], InputNode):
                    continue
                if p in incoming:
                    incoming[p] = incoming[p] + contribution
                else:
                    incoming[p] = contribution
        except NonFiniteError as exc:
            raise DivergenceError(j, iteration, str(exc)) from exc

    max_dx = 0.0
    for i in g.topo_order:
        node = g.nodes[i]
        if isinstance(node, InputNode):
            continue
        if i == g.output:
            dx = -s.x[i] - s.eps_bar
        else:
            dx = -s.x[i] + incoming[i]
        s.x[i] = s.x[i] + cfg.eta_x * dx
        max_dx = max(max_dx, float(np.max(np.abs(dx))))
        if not np.isfinite(s.x[i]).all() or np.max(np.abs(s.x[i])) > DIVERGENCE_LIMIT:
            raise DivergenceError(i, iteration)
    s.last_max_dx = max_dx
    return s


def run_relaxation(g: Graph, acts: list[Tensor], target, cfg: ARConfig) -> RelaxState:
    """Apply relax_step n_iters times; last_max_dx on the returned state is
    the final step's max |dx|, the convergence diagnostic."""
    s = init_state(g, acts, target, cfg)
    for t in range(cfg.n_iters):
        relax_step(g, s, cfg, target, iteration=t)
    return s


def _update_fprime(g: Graph, s: RelaxState, cfg: ARConfig, j: int) -> Tensor | None:
    node = g.nodes[j]
    if node.activation != "tanh":
        return None
    if not cfg.unfreeze_weight_deriv:
        return s.fprime_bar[j]
    p = g.parent_ids[j][0]
    if isinstance(node, DenseNode):
        return tensor.tanh_prime(s.x[p] @ node.weight.T)
    return tensor.tanh_prime(tensor.conv2d(s.x[p], node.weight))


def _update_outer(g: Graph, s: RelaxState, cfg: ARConfig, j: int) -> Tensor:
    """Batch-mean outer product between the (optionally f'-weighted) child
    equilibrium activity and the parent activity; shaped like the weight."""
    node = g.nodes[j]
    p = g.parent_ids[j][0]
    batch = s.xbar[p].shape[0]
    child = s.x[j]
    if not _drops_nonlinearity(node, cfg):
        child = _mul_fprime(_update_fprime(g, s, cfg, j), child)

    if isinstance(node, DenseNode):
        parent_act = s.x[p] if cfg.unfreeze_weight_activity else s.xbar[p]
        return child.T @ parent_act / batch

    co, ci, kh, kw = node.weight.shape
    if cfg.unfreeze_weight_activity:
        cols = tensor.im2col(s.x[p], kh, kw)
    else:
        cols = s.cols_bar[j]
    vflat = child.reshape(batch, co, -1)
    return np.einsum("bop,bkp->ok", vflat, cols).reshape(co, ci, kh, kw) / batch


def weight_update(g: Graph, s: RelaxState, cfg: ARConfig) -> dict[int, Tensor]:
    """Descent deltas for every dense/conv weight, computed at equilibrium."""
    return {j: -cfg.eta_theta * _update_outer(g, s, cfg, j) for j in g.parametric_ids()}


def psi_update(g: Graph, s: RelaxState, cfg: ARConfig) -> dict[int, Tensor]:
    """Deltas for the learned backwards parameters: the exact mirror of the
    weight update (transposed for dense, same-shaped for conv kernels), so
    psi tracks the transport position W would occupy."""
    if cfg.backwards_mode != "learned_psi":
        raise ValueError("psi_update requires backwards_mode='learned_psi'")
    deltas: dict[int, Tensor] = {}
    for j in g.parametric_ids():
        node = g.nodes[j]
        if not _uses_psi(node, cfg):
            continue
        outer = _update_outer(g, s, cfg, j)
        deltas[j] = -cfg.eta_psi * (outer.T if isinstance(node, DenseNode) else outer)
    return deltas


def apply_updates(
    g: Graph,
    weight_deltas: dict[int, Tensor],
    psi_deltas: dict[int, Tensor] | None = None,
) -> None:
    """Add the deltas onto the graph parameters (exclusive-write phase)."""
    for j, dw in weight_deltas.items():
        g.nodes[j].weight = g.nodes[j].weight + dw
    if psi_deltas:
        for j, dpsi in psi_deltas.items():
            g.nodes[j].psi = g.nodes[j].psi + dpsi
