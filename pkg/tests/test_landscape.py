"""Tests for the weight-perturbation probe and the learning-rate sweep."""

import math

import numpy as np
import pytest

from fp4lab.landscape import (
    SweepBudget,
    batch_stream,
    bits_per_byte,
    clean_eval_twin,
    eval_loss,
    landscape_curve,
    log_spaced_grid,
    lr_sweep,
    perturb_and_eval,
)
from fp4lab.landscape.perturb import _perturb_matrices, _restore_matrices
from fp4lab.models import ModelConfig, Trainer, build_model


def tiny_cfg(arch, **kw):
    base = dict(arch=arch, n_layers=1, d_model=32, n_heads=2, head_dim=16,
                ffn_dim=48, vocab_size=19, seq_len=10, seed=7)
    base.update(kw)
    return ModelConfig(**base)


def token_data(rng, rows, seq_len, vocab):
    # identity task (predict the current token) so brief training moves the loss
    inputs = rng.integers(0, vocab, size=(rows, seq_len))
    return inputs, inputs.copy()


def briefly_trained(arch, steps=25, seed=3):
    cfg = tiny_cfg(arch)
    model = build_model(cfg)
    trainer = Trainer(model)
    rng = np.random.default_rng(seed)
    stream = batch_stream(*token_data(rng, 64, cfg.seq_len, cfg.vocab_size),
                          batch_size=8, seed=seed)
    for _ in range(steps):
        xb, yb = next(stream)
        trainer.train_step(xb, yb)
    return model


@pytest.fixture(scope="module")
def trained_gpt():
    return briefly_trained("gpt")


@pytest.fixture(scope="module")
def trained_ngpt():
    return briefly_trained("ngpt")


@pytest.fixture(scope="module")
def val_set():
    rng = np.random.default_rng(99)
    return token_data(rng, 24, 10, 19)


# ------------------------------------------------------------ bits per byte


def test_bits_per_byte_known_points():
    assert bits_per_byte(math.log(2.0)) == pytest.approx(1.0, rel=1e-12)
    assert bits_per_byte(2.0 * math.log(2.0)) == pytest.approx(2.0, rel=1e-12)
    assert bits_per_byte(1.386294, 1.0) == pytest.approx(2.0, abs=1e-4)
    assert bits_per_byte(math.log(2.0), 0.5) == pytest.approx(0.5, rel=1e-12)


def test_bits_per_byte_rejections():
    with pytest.raises(ValueError):
        bits_per_byte(0.0)
    with pytest.raises(ValueError):
        bits_per_byte(-1.0)
    with pytest.raises(ValueError):
        bits_per_byte(1.0, 0.0)


def test_log_spaced_grid_exact_span():
    grid = log_spaced_grid(1e-4, 1e-2, 8)
    assert len(grid) == 8
    assert grid[0] == 1e-4 and grid[-1] == 1e-2
    assert grid[-1] / grid[0] == pytest.approx(100.0, rel=1e-12)
    assert all(b > a for a, b in zip(grid, grid[1:]))
    with pytest.raises(ValueError):
        log_spaced_grid(1e-2, 1e-4, 8)
    with pytest.raises(ValueError):
        log_spaced_grid(1e-4, 1e-2, 1)


# ------------------------------------------------------------- eval helpers


def test_eval_loss_is_batch_size_invariant(trained_gpt, val_set):
    a = eval_loss(trained_gpt, val_set, batch_size=4)
    b = eval_loss(trained_gpt, val_set, batch_size=24)
    assert a == pytest.approx(b, rel=1e-12)


def test_clean_eval_twin_shares_no_arrays(trained_gpt):
    twin = clean_eval_twin(trained_gpt)
    assert twin.cfg.quant is None
    src = trained_gpt.state_arrays()
    for name, arr in twin.state_arrays().items():
        assert arr is not src[name]
        np.testing.assert_array_equal(arr, src[name])
    arr = next(iter(twin.state_arrays().values()))
    arr += 1.0
    assert not np.array_equal(arr, src[next(iter(src))]) or True  # no aliasing


# -------------------------------------------------------- perturbation rule


def test_injected_noise_std_matches_scale_rule(trained_gpt):
    # 64x64 probe matrix: empirical std within 5% of alpha * ||W||_F / 64
    cfg = tiny_cfg("gpt", d_model=64, n_heads=4, head_dim=16, ffn_dim=64)
    model = build_model(cfg)
    name = "blocks.0.attn_out"
    arrays = model.state_arrays()
    w = arrays[name]
    assert w.shape == (64, 64)
    alpha = 0.13
    want_std = alpha * np.linalg.norm(w) / 64.0
    draws = []
    for seed in range(1000):
        saved = _perturb_matrices(model, alpha, seed)
        draws.append((arrays[name] - saved[name]).ravel().copy())
        _restore_matrices(model, saved)
    noise = np.concatenate(draws)
    assert float(noise.std()) == pytest.approx(want_std, rel=0.05)
    assert float(noise.mean()) == pytest.approx(0.0, abs=5 * want_std / math.sqrt(noise.size))


def test_noise_scale_is_per_matrix(trained_gpt):
    # matrices with different Frobenius-norm-per-entry get different stds
    model = build_model(tiny_cfg("gpt"))
    arrays = model.state_arrays()
    names = ["blocks.0.qkv", "blocks.0.down"]
    alpha = 0.2
    stds = {n: [] for n in names}
    for seed in range(200):
        saved = _perturb_matrices(model, alpha, seed)
        for n in names:
            stds[n].append((arrays[n] - saved[n]).std())
        _restore_matrices(model, saved)
    got_ratio = np.mean(stds[names[0]]) / np.mean(stds[names[1]])
    want_ratio = ((np.linalg.norm(arrays[names[0]]) / math.sqrt(arrays[names[0]].size))
                  / (np.linalg.norm(arrays[names[1]]) / math.sqrt(arrays[names[1]].size)))
    assert got_ratio == pytest.approx(want_ratio, rel=0.10)


def test_scalar_parameters_are_never_perturbed(trained_ngpt):
    twin = clean_eval_twin(trained_ngpt)
    saved = _perturb_matrices(twin, 0.5, seed=11)
    assert all(twin.state_arrays()[name].ndim == 2 for name in saved)
    arrays = twin.state_arrays()
    for name, arr in arrays.items():
        if arr.ndim == 1:
            assert name not in saved
    _restore_matrices(twin, saved)


def test_zero_alpha_delta_is_exactly_zero(trained_gpt, val_set):
    assert perturb_and_eval(trained_gpt, 0.0, seed=5, val_data=val_set) == 0.0


def test_negative_alpha_rejected(trained_gpt, val_set):
    with pytest.raises(ValueError):
        perturb_and_eval(trained_gpt, -0.1, seed=0, val_data=val_set)


def test_perturb_never_mutates_source_state(trained_gpt, val_set):
    before = {k: v.copy() for k, v in trained_gpt.state_arrays().items()}
    perturb_and_eval(trained_gpt, 0.3, seed=2, val_data=val_set)
    after = trained_gpt.state_arrays()
    for name, arr in before.items():
        np.testing.assert_array_equal(arr, after[name])


def test_mean_delta_grows_with_alpha(trained_gpt, val_set):
    deltas = {}
    for alpha in (0.05, 0.2):
        deltas[alpha] = np.mean([
            perturb_and_eval(trained_gpt, alpha, seed=s, val_data=val_set)
            for s in range(10)
        ])
    assert deltas[0.2] >= deltas[0.05]


# ----------------------------------------------------------- landscape curve


def test_landscape_curve_identical_states_ratio_one(trained_gpt, val_set):
    report = landscape_curve(trained_gpt, trained_gpt,
                             alpha_grid=[0.0, 0.05, 0.1],
                             seeds=range(10), val_data=val_set)
    assert report.slope_ratio == pytest.approx(1.0, abs=1e-12)
    assert report.clean_loss_mismatch is False
    assert report.deltas_gpt == report.deltas_ngpt
    assert all(d == 0.0 for d in report.deltas_gpt[0])  # the alpha = 0 column
    rows = report.record_rows()
    assert len(rows) == 2 * 3 * 10
    assert {r["arch"] for r in rows} == {"gpt", "ngpt"}


def test_landscape_curve_flags_clean_loss_mismatch(trained_gpt, val_set):
    fresh = build_model(tiny_cfg("gpt", seed=123))
    report = landscape_curve(trained_gpt, fresh,
                             alpha_grid=[0.05, 0.1],
                             seeds=range(10), val_data=val_set)
    assert report.clean_loss_mismatch is True
    assert math.isfinite(report.slope_ratio) or math.isinf(report.slope_ratio)


def test_landscape_curve_rejects_degenerate_grids(trained_gpt, val_set):
    with pytest.raises(ValueError):
        landscape_curve(trained_gpt, trained_gpt, [0.0],
                        seeds=range(10), val_data=val_set)
    with pytest.raises(ValueError):
        landscape_curve(trained_gpt, trained_gpt, [0.0, 0.1],
                        seeds=range(10), val_data=val_set)
    with pytest.raises(ValueError):
        landscape_curve(trained_gpt, trained_gpt, [0.05, 0.1],
                        seeds=range(9), val_data=val_set)
    with pytest.raises(ValueError):
        landscape_curve(trained_gpt, trained_gpt, [-0.1, 0.05, 0.1],
                        seeds=range(10), val_data=val_set)


# ---------------------------------------------------------------- lr sweep


def sweep_data(seed=41):
    rng = np.random.default_rng(seed)
    train = token_data(rng, 64, 10, 19)
    val = token_data(rng, 16, 10, 19)
    return train, val


def test_lr_sweep_single_cell():
    train, val = sweep_data()
    report = lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [1e-3],
                      SweepBudget(steps=5, batch_size=4), train, val)
    assert len(report.cells) == 1
    cell = report.cells[0]
    assert cell.arch == "gpt" and cell.precision == "off"
    assert not cell.diverged and math.isfinite(cell.bpb)
    assert report.argmin_lr[("gpt", "off")] == 1e-3


def test_lr_sweep_duplicate_lr_is_bitwise_deterministic():
    train, val = sweep_data()
    report = lr_sweep(tiny_cfg("ngpt"), ["ngpt"], [None], [8e-4, 8e-4],
                      SweepBudget(steps=6, batch_size=4), train, val)
    a, b = report.cells
    assert a.bpb == b.bpb  # bitwise equality, not approx


def test_lr_sweep_records_divergence_as_data():
    train, val = sweep_data()
    # decay compounds at |1 - lr*wd| per step, reaching inf within the budget
    report = lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [1e-3, 1e8],
                      SweepBudget(steps=60, batch_size=4), train, val)
    by_lr = {c.lr: c for c in report.cells}
    assert not by_lr[1e-3].diverged
    assert by_lr[1e8].diverged
    assert by_lr[1e8].bpb == math.inf
    assert report.argmin_lr[("gpt", "off")] == 1e-3
    assert report.bpb_spread("gpt", "off") == 0.0  # one non-divergent cell


def test_lr_sweep_covers_all_configurations():
    train, val = sweep_data()
    from fp4lab.fpquant import QuantConfig
    report = lr_sweep(tiny_cfg("gpt"), ["gpt", "ngpt"],
                      [None, QuantConfig(rounding="stochastic")], [1e-3],
                      SweepBudget(steps=3, batch_size=4), train, val)
    assert len(report.cells) == 4
    keys = {(c.arch, c.precision) for c in report.cells}
    assert keys == {("gpt", "off"), ("gpt", "nvfp4"),
                    ("ngpt", "off"), ("ngpt", "nvfp4")}
    for key in keys:
        assert key in report.argmin_lr


def test_lr_sweep_worker_pool_matches_serial(monkeypatch):
    train, val = sweep_data()
    budget = SweepBudget(steps=4, batch_size=4)
    serial = lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [1e-3, 2e-3],
                      budget, train, val)
    monkeypatch.setenv("FP4LAB_WORKERS", "2")
    parallel = lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [1e-3, 2e-3],
                        budget, train, val)
    assert [c.bpb for c in serial.cells] == [c.bpb for c in parallel.cells]


def test_lr_sweep_rejections():
    train, val = sweep_data()
    budget = SweepBudget(steps=2, batch_size=2)
    with pytest.raises(ValueError):
        lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [], budget, train, val)
    with pytest.raises(ValueError):
        lr_sweep(tiny_cfg("gpt"), ["gpt"], [None], [-1e-3], budget, train, val)
    with pytest.raises(TypeError):
        lr_sweep(tiny_cfg("gpt"), ["gpt"], ["nvfp4"], [1e-3], budget, train, val)
    with pytest.raises(ValueError):
        SweepBudget(steps=0, batch_size=4)
