import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouprune import engine, zoo
from grouprune.data import shapes, spiral, train_test_split
from grouprune.dependency import build_depgraph
from grouprune.errors import TrainingDiverged
from grouprune.grouping import extract_groups
from grouprune.importance import GroupImportance, group_l2_importance
from grouprune.ir import NetworkIR, init_weights, linear
from grouprune.sparse import (SparseConfig, compute_gamma, layer_pseudo_groups,
                              near_zero_fraction, refresh_gamma,
                              regularizer_grad, regularizer_value,
                              train_sparse)

from reference import fd_scalar, grad_rel_err


def _imp(values):
    return GroupImportance("g", np.asarray(values, dtype=np.float64), "full")


# -- gamma schedule -----------------------------------------------------------


def test_gamma_extremes_at_alpha_4():
    g = compute_gamma(_imp([1.0, 3.0, 5.0]), alpha=4.0).gamma
    np.testing.assert_allclose(g, [16.0, 4.0, 1.0])


def test_gamma_max_importance_gets_one():
    g = compute_gamma(_imp([0.2, 0.9]), alpha=4.0).gamma
    assert g[1] == 1.0
    assert g[0] == 16.0


def test_gamma_degenerate_uniform_one():
    g = compute_gamma(_imp([2.5, 2.5, 2.5]), alpha=4.0).gamma
    np.testing.assert_array_equal(g, [1.0, 1.0, 1.0])
    assert np.isfinite(g).all()


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1e9, allow_nan=False), min_size=1, max_size=40),
       st.floats(0, 8))
def test_gamma_bounds(values, alpha):
    g = compute_gamma(_imp(values), alpha).gamma
    assert (g >= 1.0 - 1e-12).all()
    assert (g <= 2.0 ** alpha + 1e-9).all()


# -- regularizer --------------------------------------------------------------


def test_regularizer_zero_weight_contributes_nothing():
    ir = zoo.residual_cnn()
    groups = extract_groups(build_depgraph(ir))
    gammas = refresh_gamma(ir, groups, "full", 4.0)
    assert regularizer_grad(ir, groups, gammas, reg_weight=0.0) == {}


def test_regularizer_closed_form_single_slice():
    # lambda=0.5, gamma=1 -> gradient is exactly the weight itself
    comps = [linear("fc", 3, 4, bias=False)]
    ir = NetworkIR(comps, [], (3,), [("fc", 0)])
    init_weights(ir, np.random.default_rng(0))
    groups = layer_pseudo_groups(ir)
    uniform = {g.group_id: compute_gamma(
        GroupImportance(g.group_id, np.ones(g.width), "full"), 4.0)
        for g in groups}
    grads = regularizer_grad(ir, groups, uniform, reg_weight=0.5)
    np.testing.assert_allclose(grads["fc.weight"], ir.weights["fc.weight"],
                               rtol=1e-6)


def test_regularizer_matches_finite_differences():
    ir = zoo.residual_cnn(seed=11)
    groups = extract_groups(build_depgraph(ir))
    gammas = refresh_gamma(ir, groups, "full", 4.0)
    lam = 0.123
    grads = regularizer_grad(ir, groups, gammas, lam)
    fd = fd_scalar(lambda m: regularizer_value(m, groups, gammas, lam),
                   ir, names=sorted(grads))
    for name in grads:
        assert grad_rel_err(grads[name], fd[name]) < 1e-3, name


def test_regularizer_skips_running_stats():
    ir = zoo.residual_cnn()
    groups = extract_groups(build_depgraph(ir))
    gammas = refresh_gamma(ir, groups, "full", 4.0)
    grads = regularizer_grad(ir, groups, gammas, 1e-3)
    assert not any("running" in name for name in grads)
    assert "bn1.gamma" in grads and "bn1.beta" in grads


def test_regularizer_only_updates_shrink_group_norms():
    # task loss removed: every group's total importance is non-increasing
    ir = zoo.residual_cnn(seed=2)
    groups = extract_groups(build_depgraph(ir))
    lr = 1e-3
    state = {}
    prev = None
    for _step in range(30):
        gammas = refresh_gamma(ir, groups, "full", 4.0)
        grads = regularizer_grad(ir, groups, gammas, reg_weight=0.05)
        engine.sgd_step(ir, grads, state, lr=lr, momentum=0.0)
        totals = np.array([group_l2_importance(ir, g).values.sum()
                           for g in groups])
        if prev is not None:
            assert (totals <= prev + 1e-9).all()
        prev = totals


# -- training loop ------------------------------------------------------------


def _tiny_task(seed=0):
    x, y = spiral(n_per_class=40, seed=seed)
    return train_test_split(x, y, seed=seed)


def test_lambda_zero_reduces_to_plain_training():
    (xtr, ytr), _ = _tiny_task()
    cfg = SparseConfig(epochs=3, reg_weight=0.0, lr=0.1, batch_size=16, seed=5)
    ir = zoo.spiral_mlp(seed=1)
    baseline = ir.copy()

    trained, _trace = train_sparse(ir, (xtr, ytr),
                                   cfg, extract_groups(build_depgraph(ir)))

    # independent plain SGD loop with the same batching discipline
    rng = np.random.default_rng(cfg.seed)
    state = {}
    n = len(xtr)
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            logits, tape = engine.forward(baseline, xtr[idx], mode="train")
            _loss, dl = engine.softmax_cross_entropy(logits, ytr[idx])
            grads = engine.backward(tape, dl)
            engine.sgd_step(baseline, grads, state, cfg.lr, cfg.momentum)

    for name in trained.weights:
        np.testing.assert_array_equal(trained.weights[name],
                                      baseline.weights[name])


def test_training_records_trace_per_epoch():
    (xtr, ytr), _ = _tiny_task()
    ir = zoo.spiral_mlp(seed=1)
    groups = extract_groups(build_depgraph(ir))
    cfg = SparseConfig(epochs=2, reg_weight=1e-3, lr=0.05, batch_size=16)
    _ir2, trace = train_sparse(ir, (xtr, ytr), cfg, groups)
    assert len(trace) == 2
    widths = sum(g.width for g in groups)
    assert len(trace[0]["entries"]) == widths
    gid, k, imp = trace[0]["entries"][0]
    assert isinstance(gid, str) and isinstance(k, int) and imp >= 0


def test_divergence_aborts_with_trace():
    (xtr, ytr), _ = _tiny_task()
    ir = zoo.spiral_mlp(seed=1)
    groups = extract_groups(build_depgraph(ir))
    cfg = SparseConfig(epochs=50, reg_weight=0.0, lr=1e4, batch_size=16)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDiverged) as exc:
            train_sparse(ir, (xtr, ytr), cfg, groups)
    assert exc.value.trace is not None


def test_gamma_refresh_period_respected():
    calls = []
    import grouprune.sparse as sparse_mod

    orig = sparse_mod.refresh_gamma

    def spy(*args, **kwargs):
        calls.append(1)
        return orig(*args, **kwargs)

    (xtr, ytr), _ = _tiny_task()
    ir = zoo.spiral_mlp(seed=1)
    groups = extract_groups(build_depgraph(ir))
    cfg = SparseConfig(epochs=2, reg_weight=1e-3, lr=0.05, batch_size=16,
                       refresh_period=3)
    sparse_mod.refresh_gamma = spy
    try:
        train_sparse(ir, (xtr, ytr), cfg, groups)
    finally:
        sparse_mod.refresh_gamma = orig
    steps = 2 * ((len(xtr) + 15) // 16)
    assert len(calls) == 1 + steps // 3   # initial + every third step


def test_config_round_trip(tmp_path):
    cfg = SparseConfig(alpha=2.0, reg_weight=3e-4, epochs=7, seed=9)
    cfg.to_json(tmp_path / "cfg.json")
    loaded = SparseConfig.from_json(tmp_path / "cfg.json")
    assert loaded == cfg


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SparseConfig(alpha=-1)
    with pytest.raises(ValueError):
        SparseConfig(reg_weight=-0.1)
    with pytest.raises(ValueError):
        SparseConfig(strategy="mystery")


def test_near_zero_fraction_counts():
    epoch = {"epoch": 0, "entries": [("a", 0, 1.0), ("a", 1, 0.001),
                                     ("a", 2, 0.5), ("b", 0, 0.0)]}
    near, total = near_zero_fraction(epoch, threshold=0.01)
    assert (near, total) == (2, 4)   # a@1 below 1% of a's max, b all-zero


def test_grouped_sparsity_beats_layerwise_on_group_norms():
    # the qualitative trend: at equal reg strength, regularizing whole
    # groups drives more group-level indices toward zero than per-layer
    # regularization measured on the same groups
    x, y = shapes(n=192, seed=3)
    (xtr, ytr), _ = train_test_split(x, y, seed=3)
    counts = {}
    for strategy in ("full-grouping", "no-grouping"):
        ir = zoo.residual_cnn(seed=3)
        groups = extract_groups(build_depgraph(ir))
        cfg = SparseConfig(epochs=6, reg_weight=2e-2, lr=0.05, batch_size=64,
                           strategy=strategy, seed=3, refresh_period=10)
        _, trace = train_sparse(ir, (xtr, ytr), cfg, groups,
                                trace_groups=groups)
        near, _total = near_zero_fraction(trace[-1])
        counts[strategy] = near
    assert counts["full-grouping"] >= counts["no-grouping"]
