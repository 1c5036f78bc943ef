"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line (run with -s or read the captured output on failure).

Criteria that assert accuracy numbers on the real MNIST / Fashion-MNIST /
CIFAR datasets skip unless AR_DATA_DIR points at the actual files; they are
never run against synthetic stand-ins. The determinism criterion runs
against a synthetic dataset written in the real binary formats (the
property is dataset-independent) and additionally against real MNIST when
available.

Known honest failure: the 100-iteration clause of the gradient-equivalence
criterion demands per-node relative error <= 1e-3 on chains up to depth 5,
but with synchronous updates at step size 0.1 a node sitting j levels below
the output still carries a residual of order Binomial(100, 0.1) pmf at j
(about 1.6e-2 at j=4), so depth >= 3 chains cannot meet 1e-3 in 100
iterations. The 500-iteration clause passes with ~9 orders of margin. See
README "Known limitations".
"""

import os

import numpy as np
import pytest

from arelax.graph import build, forward
from arelax.harness import (
    ExperimentConfig,
    final_test_accuracy,
    node_rel_errors,
    random_case,
    random_chain_spec,
    read_metrics,
    rel_error,
    run_experiment,
    skip_dag_spec,
)
from arelax.models import ModelSpec
from arelax.oracle import backprop, finite_diff
from arelax.relaxation import ARConfig, relax_step, run_relaxation, weight_update
from arelax.tensor import Rng

from conftest import make_mnist_dir, real_dataset_root, require_real_dataset


def _report(cid: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {cid}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{cid}: {detail}"


# --------------------------------------------------------------------------
# criterion 1: oracle validity

def test_c1_backprop_vs_finite_differences():
    worst = 0.0
    for i in range(100):
        rng = Rng(500 + i)
        if i == 99:
            g = build(skip_dag_spec(width=8, class_count=4), rng)
        else:
            g = build(random_chain_spec(rng, max_depth=5, max_width=16), rng)
        x, t = random_case(g, rng, 2)
        acts = forward(g, x)
        grads = backprop(g, acts, t)
        fd = finite_diff(g, x, t, h=1e-5)
        for j in fd.param:
            worst = max(worst, rel_error(grads.param[j], fd.param[j]))
        worst = max(worst, rel_error(grads.node[g.input], fd.node[g.input]))
    _report("C1 oracle vs central finite differences (100 graphs)",
            worst <= 1e-4, f"max rel err {worst:.3e}, tol 1e-4")


# --------------------------------------------------------------------------
# criteria 2 and 3: gradient and weight-update equivalence

@pytest.fixture(scope="module")
def equivalence_suite():
    """100 random chain MLPs (depth <= 5, widths <= 32, batch <= 8) plus the
    skip DAG: relaxation errors at 100 and 500 iterations, and weight-delta
    errors at the converged state."""
    results = []
    for i in range(101):
        rng = Rng(1000 + i)
        if i == 100:
            spec, depth = skip_dag_spec(width=12, class_count=4), 3
        else:
            spec = random_chain_spec(rng, max_depth=5, max_width=32)
            depth = sum(1 for item in spec if item["kind"] == "dense")
        g = build(spec, rng)
        batch = rng.integers(1, 9)
        x, t = random_case(g, rng, batch)
        acts = forward(g, x)
        grads = backprop(g, acts, t)
        cfg = ARConfig(eta_x=0.1, n_iters=100)
        s = run_relaxation(g, acts, t, cfg)
        e100 = max(node_rel_errors(g, s, grads, batch).values())
        for it in range(100, 500):
            relax_step(g, s, cfg, t, iteration=it)
        e500 = max(node_rel_errors(g, s, grads, batch).values())
        wd = weight_update(g, s, cfg)
        ew = max(rel_error(wd[j], -cfg.eta_theta * grads.param[j]) for j in wd)
        results.append({"depth": depth, "e100": e100, "e500": e500, "ew": ew})
    return results


def test_c2_equilibrium_matches_oracle_after_500_iterations(equivalence_suite):
    worst = max(r["e500"] for r in equivalence_suite)
    _report("C2 relaxation equilibria vs oracle, 500 iterations",
            worst <= 1e-6, f"max per-node rel err {worst:.3e}, tol 1e-6")


def test_c2_equilibrium_matches_oracle_after_100_iterations(equivalence_suite):
    # Known honest failure for depth >= 3 chains; see the module docstring.
    worst = max(r["e100"] for r in equivalence_suite)
    by_depth = {}
    for r in equivalence_suite:
        by_depth.setdefault(r["depth"], []).append(r["e100"])
    profile = ", ".join(f"depth {d}: {max(v):.1e}" for d, v in sorted(by_depth.items()))
    _report("C2 relaxation equilibria vs oracle, 100 iterations",
            worst <= 1e-3,
            f"max per-node rel err {worst:.3e}, tol 1e-3 [{profile}] "
            "(synchronous-update cascade: residual ~ Binomial(100, 0.1) pmf "
            "at the node's distance below the output)")


def test_c3_weight_updates_equal_scaled_oracle_gradients(equivalence_suite):
    worst = max(r["ew"] for r in equivalence_suite)
    _report("C3 weight deltas vs -eta_theta * oracle gradients",
            worst <= 1e-3, f"max rel err {worst:.3e}, tol 1e-3")


# --------------------------------------------------------------------------
# criteria 4-6: MNIST training (real data required)

MNIST_SEEDS = [0, 1, 2]


def _mnist_proxy_cfg(root, out, seeds=MNIST_SEEDS, **ar_kw):
    ar = dict(eta_x=0.1, n_iters=50, eta_theta=0.0005)
    ar.update(ar_kw)
    return ExperimentConfig(
        model=ModelSpec("mlp4", 10), dataset="mnist", ar=ARConfig(**ar),
        epochs=3, seeds=list(seeds), output=out, data_dir=root,
        batch_size=64, train_cap=10000, test_cap=2000,
    )


@pytest.fixture(scope="module")
def mnist_proxy_baseline(tmp_path_factory):
    root = require_real_dataset("mnist")
    out = str(tmp_path_factory.mktemp("c4") / "baseline.csv")
    run_experiment(_mnist_proxy_cfg(root, out))
    rows = read_metrics(out)
    return root, {s: final_test_accuracy(rows, s) for s in MNIST_SEEDS}


@pytest.mark.slow
def test_c4_mnist_headline_full_run(tmp_path):
    root = require_real_dataset("mnist")
    out = str(tmp_path / "headline.csv")
    cfg = ExperimentConfig(
        model=ModelSpec("mlp4", 10), dataset="mnist",
        ar=ARConfig(eta_x=0.1, n_iters=100, eta_theta=0.0005),
        epochs=10, seeds=[0], output=out, data_dir=root, batch_size=64,
    )
    run_experiment(cfg)
    acc = final_test_accuracy(read_metrics(out), 0)
    _report("C4 MNIST headline (full data, 10 epochs)",
            acc >= 0.97, f"final test accuracy {acc:.4f}, need >= 0.97")


def test_c4_mnist_fast_proxy(mnist_proxy_baseline):
    _, accs = mnist_proxy_baseline
    mean = float(np.mean(list(accs.values())))
    _report("C4 MNIST fast proxy (10k/2k, 50 iters, 3 epochs)",
            mean >= 0.90, f"mean test accuracy {mean:.4f} over seeds {MNIST_SEEDS}, need >= 0.90")


VARIANTS = {
    "dropped_nonlinearity": {"nonlinearity_mode": "dropped"},
    "learned_psi": {"backwards_mode": "learned_psi"},
    "unfrozen_relax_deriv": {"unfreeze_relax_deriv": True},
    "unfrozen_weight_deriv": {"unfreeze_weight_deriv": True},
    "unfrozen_both_derivs": {"unfreeze_relax_deriv": True, "unfreeze_weight_deriv": True},
}


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_c5_variants_match_baseline_on_mnist_proxy(variant, mnist_proxy_baseline, tmp_path):
    root, base_accs = mnist_proxy_baseline
    base = float(np.mean(list(base_accs.values())))
    out = str(tmp_path / f"{variant}.csv")
    run_experiment(_mnist_proxy_cfg(root, out, **VARIANTS[variant]))
    rows = read_metrics(out)
    acc = float(np.mean([final_test_accuracy(rows, s) for s in MNIST_SEEDS]))
    _report(f"C5 variant {variant}",
            acc >= base - 0.03,
            f"variant {acc:.4f} vs baseline {base:.4f}, allowed drop 0.03")


def test_c6_unfrozen_weight_activity_destroys_performance(mnist_proxy_baseline, tmp_path):
    root, base_accs = mnist_proxy_baseline
    base = float(np.mean(list(base_accs.values())))
    out = str(tmp_path / "unfrozen_activity.csv")
    run_experiment(_mnist_proxy_cfg(root, out, unfreeze_weight_activity=True))
    rows = read_metrics(out)
    acc = float(np.mean([final_test_accuracy(rows, s) for s in MNIST_SEEDS]))
    ok = (base - acc >= 0.30) or (acc <= 0.15)
    _report("C6 unfrozen weight activity collapses",
            ok, f"condition-d accuracy {acc:.4f} vs baseline {base:.4f}")


# --------------------------------------------------------------------------
# criterion 7: CNN scaling on CIFAR-10 (real data required)

def _cifar_proxy_cfg(root, out, **ar_kw):
    ar = dict(eta_x=0.1, n_iters=50, eta_theta=0.0005)
    ar.update(ar_kw)
    return ExperimentConfig(
        model=ModelSpec("cnn", 10), dataset="cifar10", ar=ARConfig(**ar),
        epochs=3, seeds=[0], output=out, data_dir=root,
        batch_size=64, train_cap=5000, test_cap=1000,
    )


@pytest.fixture(scope="module")
def cifar_proxy_baseline(tmp_path_factory):
    root = require_real_dataset("cifar10")
    out = str(tmp_path_factory.mktemp("c7") / "baseline.csv")
    run_experiment(_cifar_proxy_cfg(root, out))
    return root, final_test_accuracy(read_metrics(out), 0)


def test_c7_cifar_baseline_beats_chance(cifar_proxy_baseline):
    _, acc = cifar_proxy_baseline
    _report("C7 CIFAR-10 fast proxy baseline",
            acc >= 0.25, f"accuracy {acc:.4f}, need >= chance + 0.15 = 0.25")


CNN_GRID = {
    f"{mode}_{scope}": (mode, scope)
    for mode in ("learned_psi", "dropped")
    for scope in ("conv", "dense", "all")
}


@pytest.mark.parametrize("cell", sorted(CNN_GRID))
def test_c7_cnn_variant_grid(cell, cifar_proxy_baseline, tmp_path):
    root, base = cifar_proxy_baseline
    mode, scope = CNN_GRID[cell]
    if mode == "learned_psi":
        ar_kw = {"backwards_mode": "learned_psi", "backwards_scope": scope}
    else:
        ar_kw = {"nonlinearity_mode": "dropped", "nonlinearity_scope": scope}
    out = str(tmp_path / f"{cell}.csv")
    run_experiment(_cifar_proxy_cfg(root, out, **ar_kw))
    acc = final_test_accuracy(read_metrics(out), 0)
    _report(f"C7 CNN grid {cell}",
            acc >= base - 0.05,
            f"variant {acc:.4f} vs baseline {base:.4f}, allowed drop 0.05")


# --------------------------------------------------------------------------
# criterion 8: determinism

def _determinism_cfg(root, out):
    return ExperimentConfig(
        model=ModelSpec("mlp4", 10), dataset="mnist",
        ar=ARConfig(eta_x=0.1, n_iters=20, eta_theta=0.005),
        epochs=1, seeds=[0, 1], output=out, data_dir=root,
        batch_size=64, train_cap=256, test_cap=128,
    )


def test_c8_identical_config_gives_byte_identical_csv(tmp_path):
    root = str(tmp_path / "data")
    os.makedirs(root)
    make_mnist_dir(root, n_train=256, n_test=128)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    run_experiment(_determinism_cfg(root, a))
    run_experiment(_determinism_cfg(root, b))
    same = open(a, "rb").read() == open(b, "rb").read()
    _report("C8 determinism (synthetic data, real formats)",
            same, "metrics CSVs byte-identical" if same else "CSV bytes differ")


def test_c8_determinism_on_real_mnist(tmp_path):
    root = real_dataset_root("mnist")
    if root is None:
        pytest.skip("real mnist not available; the synthetic-format determinism test covers the property")
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    run_experiment(_determinism_cfg(root, a))
    run_experiment(_determinism_cfg(root, b))
    same = open(a, "rb").read() == open(b, "rb").read()
    _report("C8 determinism (real MNIST subset)",
            same, "metrics CSVs byte-identical" if same else "CSV bytes differ")
