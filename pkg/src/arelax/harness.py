"""Experiment runner and diagnostics.

run_experiment() drives seeded training loops (forward sweep, relaxation,
equilibrium weight update) and writes one metrics CSV with the fixed header

    seed,epoch,batch,split,loss,accuracy,max_residual,grad_angle,psi_alignment

Row conventions: batch = -1 marks a per-epoch summary; each epoch emits one
train summary and one test summary, plus an untrained test row at epoch 0.
Optional per-batch rows appear when log_every > 0, and always for batches
that diverged (loss/accuracy nan, max_residual inf). Identical configs
produce byte-identical CSVs.

gradcheck() verifies the gradient chain on random small graphs and a
reduced-width build of the configured model: relaxation equilibria against
reverse-mode gradients, and reverse-mode gradients against central finite
differences.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import data as data_mod
from . import models, oracle, relaxation
from .graph import DenseNode, Graph, build, forward
from .relaxation import ARConfig, DivergenceError, RelaxState
from .tensor import NonFiniteError, Rng, Tensor

CSV_HEADER = [
    "seed", "epoch", "batch", "split", "loss", "accuracy",
    "max_residual", "grad_angle", "psi_alignment",
]


@dataclass
class GradcheckOptions:
    graphs: int = 20          # random small graphs in the suite
    batch: int = 4
    iters: int = 500          # relaxation iterations for the equilibrium check
    tolerance: float = 1e-3   # AR equilibrium vs reverse-mode gradients
    fd_tolerance: float = 1e-4
    fd_step: float = 1e-5
    check_model: bool = True  # also check the configured model at reduced width


@dataclass
class ExperimentConfig:
    model: models.ModelSpec
    dataset: str
    ar: ARConfig
    epochs: int
    seeds: list[int]
    output: str
    mode: str = "train"
    batch_size: int = 64
    data_dir: str | None = None
    train_cap: int | None = None
    test_cap: int | None = None
    log_every: int = 0
    grad_angle_every: int = 0
    gradcheck: GradcheckOptions = field(default_factory=GradcheckOptions)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.mode not in ("train", "gradcheck"):
            raise ValueError(f"mode must be 'train' or 'gradcheck', got {self.mode!r}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    def resolve_data_dir(self) -> str:
        d = self.data_dir or os.environ.get("AR_DATA_DIR")
        if not d:
            raise data_mod.DataError(
                "no dataset root: pass data_dir / --data-dir or set AR_DATA_DIR"
            )
        return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    model = models.ModelSpec(**d.pop("model"))
    ar = ARConfig(**d.pop("ar", {}))
    gc = GradcheckOptions(**d.pop("gradcheck", {}))
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(model=model, ar=ar, gradcheck=gc, **d)


def config_from_file(path: str) -> ExperimentConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


# --------------------------------------------------------------------------
# metrics

def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_metrics(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([
                r["seed"], r["epoch"], r["batch"], r["split"],
                _fmt(r.get("loss")), _fmt(r.get("accuracy")),
                _fmt(r.get("max_residual")), _fmt(r.get("grad_angle")),
                _fmt(r.get("psi_alignment")),
            ])


def read_metrics(path: str) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            row = dict(r)
            for k in ("seed", "epoch", "batch"):
                row[k] = int(row[k])
            for k in ("loss", "accuracy", "max_residual", "grad_angle", "psi_alignment"):
                row[k] = float(row[k]) if row[k] else None
            out.append(row)
    return out


def final_test_accuracy(rows: list[dict], seed: int) -> float:
    acc = [r["accuracy"] for r in rows
           if r["seed"] == seed and r["split"] == "test" and r["batch"] == -1]
    if not acc:
        raise ValueError(f"no test rows for seed {seed}")
    return acc[-1]


# --------------------------------------------------------------------------
# diagnostics

def accuracy(output: Tensor, target: Tensor) -> float:
    """Fraction of rows whose output argmax matches the label argmax;
    argmax breaks ties toward the lowest class index."""
    return float(np.mean(np.argmax(output, axis=1) == np.argmax(target, axis=1)))


def angle_diagnostics(ar_deltas: dict[int, Tensor], oracle_grads: dict[int, Tensor]) -> float:
    """Angle in degrees between the concatenated parameter deltas and the
    negative oracle gradient; 0 means an exact descent direction."""
    keys = sorted(ar_deltas)
    if keys != sorted(oracle_grads):
        raise ValueError("ar_deltas and oracle_grads cover different nodes")
    a = np.concatenate([ar_deltas[k].ravel() for k in keys])
    b = np.concatenate([-oracle_grads[k].ravel() for k in keys])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined angle: zero-norm vector")
    cos = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return float(np.degrees(np.arccos(cos)))


def psi_alignment(g: Graph, cfg: ARConfig) -> float | None:
    """Cosine between the learned backwards parameters and the transport
    position the forward weights would occupy (W^T for dense, the kernel
    itself for conv); None when no node is in the learned-psi scope."""
    pairs = []
    for j in g.parametric_ids():
        node = g.nodes[j]
        if relaxation._uses_psi(node, cfg):
            mirror = node.weight.T if isinstance(node, DenseNode) else node.weight
            pairs.append((node.psi.ravel(), mirror.ravel()))
    if not pairs:
        return None
    a = np.concatenate([p for p, _ in pairs])
    b = np.concatenate([m for _, m in pairs])
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(np.dot(a, b) / denom) if denom else None


def rel_error(got: Tensor, want: Tensor) -> float:
    """Infinity-norm relative error of got against the reference want."""
    return float(np.max(np.abs(got - want)) / (np.max(np.abs(want)) + 1e-300))


def node_rel_errors(g: Graph, state: RelaxState, grads: oracle.GradientSet, batch: int) -> dict[int, float]:
    """Per-node relative error of the relaxed activities against the
    batch-scaled oracle gradients (the relaxation equilibrium target)."""
    return {
        i: rel_error(state.x[i], grads.node[i] * batch)
        for i in g.topo_order
        if i != g.input
    }


# --------------------------------------------------------------------------
# evaluation and training

def evaluate(g: Graph, d: data_mod.Dataset, batch_size: int) -> tuple[float, float]:
    """Mean loss and accuracy over the dataset in storage order. Batches
    that fail numerically contribute infinite loss and zero accuracy."""
    total_loss, correct, n = 0.0, 0.0, len(d)
    for start in range(0, n, batch_size):
        xb = d.images[start : start + batch_size]
        tb = d.labels[start : start + batch_size]
        try:
            out = forward(g, xb)[g.output]
            total_loss += oracle.loss_mse(out, tb) * xb.shape[0]
            correct += accuracy(out, tb) * xb.shape[0]
        except NonFiniteError:
            total_loss += float("inf")
    return total_loss / n, correct / n


def _run_seed(cfg: ExperimentConfig, seed: int,
              train: data_mod.Dataset, test: data_mod.Dataset) -> list[dict]:
    rng = Rng(seed)
    g = models.build_model(cfg.model, rng)
    learned = cfg.ar.backwards_mode == "learned_psi"
    rows: list[dict] = []

    def test_row(epoch: int):
        loss, acc = evaluate(g, test, cfg.batch_size)
        rows.append({
            "seed": seed, "epoch": epoch, "batch": -1, "split": "test",
            "loss": loss, "accuracy": acc, "max_residual": None,
            "grad_angle": None,
            "psi_alignment": psi_alignment(g, cfg.ar) if learned else None,
        })

    test_row(0)
    for epoch in range(1, cfg.epochs + 1):
        losses, accs, angles = [], [], []
        max_residual = 0.0
        for bi, (xb, tb) in enumerate(data_mod.batches(train, cfg.batch_size, rng)):
            try:
                acts = forward(g, xb)
                batch_loss = oracle.loss_mse(acts[g.output], tb)
                batch_acc = accuracy(acts[g.output], tb)
                state = relaxation.run_relaxation(g, acts, tb, cfg.ar)
                wd = relaxation.weight_update(g, state, cfg.ar)
                pd = relaxation.psi_update(g, state, cfg.ar) if learned else None
                angle = None
                if cfg.grad_angle_every and bi % cfg.grad_angle_every == 0:
                    grads = oracle.backprop(g, acts, tb)
                    angle = angle_diagnostics(wd, {j: cfg.ar.eta_theta * grads.param[j] for j in wd})
                    angles.append(angle)
                relaxation.apply_updates(g, wd, pd)
            except (DivergenceError, NonFiniteError):
                rows.append({
                    "seed": seed, "epoch": epoch, "batch": bi, "split": "train",
                    "loss": float("nan"), "accuracy": float("nan"),
                    "max_residual": float("inf"), "grad_angle": None, "psi_alignment": None,
                })
                max_residual = float("inf")
                continue
            losses.append(batch_loss)
            accs.append(batch_acc)
            max_residual = max(max_residual, state.last_max_dx)
            if cfg.log_every and bi % cfg.log_every == 0:
                rows.append({
                    "seed": seed, "epoch": epoch, "batch": bi, "split": "train",
                    "loss": batch_loss, "accuracy": batch_acc,
                    "max_residual": state.last_max_dx, "grad_angle": angle,
                    "psi_alignment": None,
                })
        rows.append({
            "seed": seed, "epoch": epoch, "batch": -1, "split": "train",
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "accuracy": float(np.mean(accs)) if accs else float("nan"),
            "max_residual": max_residual,
            "grad_angle": float(np.mean(angles)) if angles else None,
            "psi_alignment": psi_alignment(g, cfg.ar) if learned else None,
        })
        test_row(epoch)
    return rows


def run_experiment(cfg: ExperimentConfig) -> str:
    """Train per seed and write the metrics CSV; returns the output path."""
    root = cfg.resolve_data_dir()
    train = data_mod.load_dataset(cfg.dataset, root, "train").subset(cfg.train_cap)
    test = data_mod.load_dataset(cfg.dataset, root, "test").subset(cfg.test_cap)
    if train.class_count != cfg.model.class_count:
        raise ValueError(
            f"model has {cfg.model.class_count} classes but {cfg.dataset} has {train.class_count}"
        )
    rows: list[dict] = []
    for seed in cfg.seeds:
        rows.extend(_run_seed(cfg, seed, train, test))
    write_metrics(cfg.output, rows)
    return cfg.output


# --------------------------------------------------------------------------
# random graph suites and gradient checking

def random_chain_spec(rng: Rng, max_depth: int = 5, max_width: int = 32) -> list[dict]:
    """A random dense chain: tanh hidden layers plus a linear head."""
    depth = rng.integers(2, max_depth + 1)
    widths = [rng.integers(2, max_width + 1) for _ in range(depth + 1)]
    spec: list[dict] = [{"kind": "input", "shape": (widths[0],)}]
    for k in range(1, depth + 1):
        spec.append({
            "kind": "dense", "units": widths[k],
            "activation": "linear" if k == depth else "tanh",
        })
    return spec


def skip_dag_spec(width: int = 8, class_count: int = 4) -> list[dict]:
    """Branch node feeding both a dense path and an identity path into an
    add node, then a linear head; exercises multi-child gradient summation."""
    return [
        {"kind": "input", "shape": (width,)},
        {"kind": "dense", "units": width, "activation": "tanh"},
        {"kind": "dense", "units": width, "activation": "tanh", "parents": [1]},
        {"kind": "add", "parents": [1, 2]},
        {"kind": "dense", "units": class_count, "activation": "linear", "parents": [3]},
    ]


def random_case(g: Graph, rng: Rng, batch: int) -> tuple[Tensor, Tensor]:
    """Random input batch and random one-hot targets for a graph."""
    x = rng.normal((batch,) + g.shapes[g.input])
    k = g.shapes[g.output][0]
    labels = np.array([rng.integers(0, k) for _ in range(batch)])
    return x, data_mod.one_hot(labels, k)


@dataclass
class GradcheckEntry:
    label: str
    check: str          # "ar_vs_oracle" | "oracle_vs_fd"
    error: float
    tolerance: float
    node: int | None = None   # graph node with the worst error, when known

    @property
    def ok(self) -> bool:
        return self.error <= self.tolerance


@dataclass
class GradcheckReport:
    entries: list[GradcheckEntry]
    informational: bool = False

    @property
    def ok(self) -> bool:
        return self.informational or all(e.ok for e in self.entries)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            mark = "ok  " if (e.ok or self.informational) else "FAIL"
            at = f" node {e.node}" if e.node is not None else ""
            out.append(f"{mark} {e.check:<14} {e.label:<28} err={e.error:.3e} tol={e.tolerance:.1e}{at}")
        worst = max(self.entries, key=lambda e: e.error / e.tolerance, default=None)
        if worst is not None:
            at = f", node {worst.node}" if worst.node is not None else ""
            out.append(f"worst: {worst.label} ({worst.check}{at}) err={worst.error:.3e}")
        return out


def _check_graph(label: str, g: Graph, rng: Rng, cfg: ExperimentConfig,
                 entries: list[GradcheckEntry], with_fd: bool) -> None:
    gc = cfg.gradcheck
    x, target = random_case(g, rng, gc.batch)
    acts = forward(g, x)
    grads = oracle.backprop(g, acts, target)
    ar_cfg = ARConfig(
        eta_x=cfg.ar.eta_x, n_iters=gc.iters,
        backwards_mode=cfg.ar.backwards_mode, backwards_scope=cfg.ar.backwards_scope,
        nonlinearity_mode=cfg.ar.nonlinearity_mode, nonlinearity_scope=cfg.ar.nonlinearity_scope,
        unfreeze_relax_deriv=cfg.ar.unfreeze_relax_deriv,
        unfreeze_weight_deriv=cfg.ar.unfreeze_weight_deriv,
        unfreeze_weight_activity=cfg.ar.unfreeze_weight_activity,
    )
    state = relaxation.run_relaxation(g, acts, target, ar_cfg)
    errs = node_rel_errors(g, state, grads, gc.batch)
    worst_node = max(errs, key=errs.get)
    entries.append(GradcheckEntry(label, "ar_vs_oracle", errs[worst_node], gc.tolerance, node=worst_node))
    if with_fd:
        fd = oracle.finite_diff(g, x, target, h=gc.fd_step)
        perrs = {j: rel_error(grads.param[j], fd.param[j]) for j in fd.param}
        perrs[g.input] = rel_error(grads.node[g.input], fd.node[g.input])
        worst_node = max(perrs, key=perrs.get)
        entries.append(GradcheckEntry(label, "oracle_vs_fd", perrs[worst_node], gc.fd_tolerance, node=worst_node))


def gradcheck(cfg: ExperimentConfig) -> GradcheckReport:
    """Check AR equilibria against reverse-mode gradients and reverse-mode
    gradients against finite differences.

    With non-baseline variant flags the AR-vs-oracle comparison is reported
    but not gated (the variants are approximations by design).
    """
    gc = cfg.gradcheck
    entries: list[GradcheckEntry] = []
    seed = cfg.seeds[0]
    for i in range(gc.graphs):
        rng = Rng(seed + i)
        spec = skip_dag_spec() if i == gc.graphs - 1 else random_chain_spec(rng, max_width=16)
        g = build(spec, rng)
        label = "skip_dag" if i == gc.graphs - 1 else f"chain_{i}"
        _check_graph(label, g, rng, cfg, entries, with_fd=True)
    if gc.check_model:
        rng = Rng(seed)
        g = build(models.reduced_spec(cfg.model), rng)
        x, target = random_case(g, rng, gc.batch)
        acts = forward(g, x)
        grads = oracle.backprop(g, acts, target)
        state = relaxation.run_relaxation(g, acts, target, ARConfig(eta_x=cfg.ar.eta_x, n_iters=gc.iters))
        errs = node_rel_errors(g, state, grads, gc.batch)
        worst_node = max(errs, key=errs.get)
        entries.append(GradcheckEntry(f"{cfg.model.name}_reduced", "ar_vs_oracle",
                                      errs[worst_node], gc.tolerance, node=worst_node))
        fd = oracle.finite_diff(g, x, target, h=gc.fd_step)
        perrs = {j: rel_error(grads.param[j], fd.param[j]) for j in fd.param}
        worst_node = max(perrs, key=perrs.get)
        entries.append(GradcheckEntry(f"{cfg.model.name}_reduced", "oracle_vs_fd",
                                      perrs[worst_node], gc.fd_tolerance, node=worst_node))
    baseline = (
        cfg.ar.backwards_mode == "transpose"
        and cfg.ar.nonlinearity_mode == "exact"
        and not (cfg.ar.unfreeze_relax_deriv or cfg.ar.unfreeze_weight_deriv
                 or cfg.ar.unfreeze_weight_activity)
    )
    return GradcheckReport(entries, informational=not baseline)
