"""Experiment runners: orchestration from config to on-disk artifacts.

Each runner consumes an ExperimentConfig, produces the fixed CSV artifacts
plus a summary.json, and closes with a manifest (config snapshot, seeds,
data checksum, backend, wall time). The analysis runners evaluate forward
passes on a full-precision twin of the model, so the recorded GEMM operands
are the clean network's; the configured quantizer is then applied
analytically with nearest rounding, matching what the training forward pass
would do to those operands.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from ..analysis import (
    combine_reports,
    effective_correlation,
    predict_snr,
    signal_noise,
    snr_ratio_and_regimes,
    stage_snr,
)
from ..errors import ConfigError, UnknownExperimentError
from ..fpquant import QuantConfig, fake_quant_along
from ..landscape import (
    SweepBudget,
    bits_per_byte,
    clean_eval_twin,
    eval_loss,
    landscape_curve,
    log_spaced_grid,
    lr_sweep,
)
from ..models import Trainer, build_model, load_model, save_checkpoint
from .config import ExperimentConfig
from .corpus import Corpus, load_corpus
from .io import RunWriter
from .mlp import mlp_align

DEFAULT_ALPHAS = (0.0, 0.05, 0.1, 0.2)


# ------------------------------------------------------------------ helpers


def _require_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.data_path is None:
        raise ConfigError(f"experiment {cfg.experiment!r} needs data_path")
    return load_corpus(cfg.data_path)


def _analysis_quant(cfg: ExperimentConfig) -> QuantConfig:
    if cfg.quant is None:
        raise ConfigError(
            f"experiment {cfg.experiment!r} needs a quantizer (quant.enabled = true)")
    return replace(cfg.quant, rounding="nearest")


def _model_for_analysis(cfg: ExperimentConfig):
    """Checkpointed model when given, otherwise a fresh seed-fixed build."""
    if cfg.checkpoint is not None:
        model, _ = load_model(cfg.checkpoint)
        return model
    return build_model(cfg.model_config())


def _load_state(path: str, want_arch: str):
    model, _ = load_model(path)
    if model.cfg.arch != want_arch:
        raise ConfigError(
            f"checkpoint {path} holds a {model.cfg.arch!r} model, expected {want_arch!r}")
    return model


def _clean_taps(model, corpus: Corpus, cfg: ExperimentConfig):
    """GEMM operand taps from a full-precision forward on validation windows."""
    twin = clean_eval_twin(model)
    inputs, _ = corpus.val_windows(cfg.analysis_batch, model.cfg.seq_len)
    _, taps = twin.forward(inputs, taps=True)
    return taps


def _default_k_grid(d: int) -> tuple:
    ks = []
    k = 16
    while k < d:
        ks.append(k)
        k *= 2
    ks.append(d)
    return tuple(ks)


# ------------------------------------------------------------------- train


def _run_train(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = load_corpus(cfg.data_path) if cfg.data_path else None
    if corpus is None:
        raise ConfigError("train needs data_path")
    writer.data_sha256 = corpus.sha256
    model = build_model(cfg.model_config())
    trainer = Trainer(model)
    stream = corpus.train_batches(cfg.batch_size, model.cfg.seq_len,
                                  model.cfg.seed)
    val = corpus.val_windows(cfg.analysis_batch, model.cfg.seq_len)

    loss_rows, eval_rows = [], []
    for step in range(1, cfg.steps + 1):
        inputs, targets = next(stream)
        lr = trainer.current_lr(inputs.shape[0])
        loss = trainer.train_step(inputs, targets)
        loss_rows.append({"step": step, "loss": loss, "lr": lr})
        if step % cfg.eval_interval == 0 or step == cfg.steps:
            val_loss = eval_loss(clean_eval_twin(model), val)
            eval_rows.append({"step": step, "val_loss": val_loss,
                              "val_bpb": bits_per_byte(val_loss)})

    writer.csv("losstrace.csv", loss_rows)
    writer.csv("evals.csv", eval_rows)
    save_checkpoint(writer.path("checkpoint.npz"), model, trainer)
    writer.add_artifact("checkpoint.npz")
    writer.json("summary.json", {
        "final_train_loss": loss_rows[-1]["loss"],
        "final_val_loss": eval_rows[-1]["val_loss"],
        "final_val_bpb": eval_rows[-1]["val_bpb"],
        "steps": cfg.steps,
        "arch": model.cfg.arch,
    })


# ------------------------------------------------------------- analyze-snr


def _run_analyze_snr(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = _require_corpus(cfg)
    writer.data_sha256 = corpus.sha256
    qcfg = _analysis_quant(cfg)
    model = _model_for_analysis(cfg)
    taps = _clean_taps(model, corpus, cfg)

    rows, reports, gains = [], [], {}
    for tap in taps:
        report = stage_snr(tap.b.T, tap.a.T, qcfg)
        reports.append(report)
        gains[tap.name] = report.averaging_gain_db
        for stage in ("weights", "activations", "products", "dot"):
            rows.append({"layer": tap.name, "stage": stage,
                         "snr_db": getattr(report, f"snr_{stage}_db")})
    combined = combine_reports(reports)
    writer.csv("snr.csv", rows)
    writer.json("summary.json", {
        "arch": model.cfg.arch,
        "per_layer_averaging_gain_db": gains,
        "network_snr_db": {
            "weights": combined.snr_weights_db,
            "activations": combined.snr_activations_db,
            "products": combined.snr_products_db,
            "dot": combined.snr_dot_db,
        },
        "network_averaging_gain_db": float(np.mean(list(gains.values()))),
    })


# ------------------------------------------------------------- correlation


def _product_streams(tap, qcfg: QuantConfig, cols):
    """Signal and noise term matrices for the chosen output columns."""
    a, b = tap.a, tap.b
    a_hat = fake_quant_along(a, qcfg, axis=-1)
    b_hat = fake_quant_along(b, qcfg, axis=0)
    for j in cols:
        u_s = a * b[:, j]
        u_n = a_hat * b_hat[:, j] - u_s
        yield j, u_s, u_n


def _rho_or_zero(u: np.ndarray) -> float:
    try:
        return effective_correlation(u)
    except ValueError:  # fewer than 2 varying columns (noise-free output)
        return 0.0


def _run_correlation(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = _require_corpus(cfg)
    writer.data_sha256 = corpus.sha256
    qcfg = _analysis_quant(cfg)
    model = _model_for_analysis(cfg)
    taps = _clean_taps(model, corpus, cfg)
    n_outputs = int(cfg.extra("corr.outputs", 16))
    rng = np.random.default_rng(model.cfg.seed)

    layer_rows, output_rows, curve_rows = [], [], []
    z_stats = {}
    for tap in taps:
        d = tap.b.shape[0]
        cols = rng.choice(tap.b.shape[1], size=min(n_outputs, tap.b.shape[1]),
                          replace=False)
        k_grid = tuple(cfg.extra("corr.k_grid", _default_k_grid(d)))
        k_grid = tuple(k for k in k_grid if 2 <= k <= d)
        rho_s_list, rho_n_list = [], []
        curve_sums = np.zeros(len(k_grid))
        for j, u_s, u_n in _product_streams(tap, qcfg, cols):
            rho_s = effective_correlation(u_s)
            rho_n = _rho_or_zero(u_n)
            rho_s_list.append(rho_s)
            rho_n_list.append(rho_n)
            output_rows.append({"layer": tap.name, "output": int(j),
                                "rho_s": rho_s, "rho_n": rho_n})
            for i, k in enumerate(k_grid):
                curve_sums[i] += effective_correlation(u_s[:, :k])
        layer_rows.append({"layer": tap.name,
                           "rho_s": float(np.mean(rho_s_list)),
                           "rho_n": float(np.mean(rho_n_list))})
        for i, k in enumerate(k_grid):
            curve_rows.append({"layer": tap.name, "k": int(k),
                               "rho_s": float(curve_sums[i] / len(cols))})
        # z-score sanity stats on a few sampled dot products
        zs, zn = [], []
        a_hat = fake_quant_along(tap.a, qcfg, axis=-1)
        b_hat = fake_quant_along(tap.b, qcfg, axis=0)
        for t in rng.choice(tap.a.shape[0], size=min(8, tap.a.shape[0]),
                            replace=False):
            for j in cols[:4]:
                stats = signal_noise(tap.a[t], tap.b[:, j], None,
                                     w_hat=a_hat[t], x_hat=b_hat[:, j])
                zs.append(stats.z_s)
                zn.append(stats.z_n)
        z_stats[tap.name] = {"z_s_mean": float(np.mean(zs)),
                             "z_n_mean": float(np.mean(zn))}

    writer.csv("corr.csv", layer_rows)
    writer.csv("corr_outputs.csv", output_rows)
    writer.csv("rhocurve.csv", curve_rows)
    writer.json("summary.json", {
        "arch": model.cfg.arch,
        "rho_s_pooled": float(np.mean([r["rho_s"] for r in layer_rows])),
        "rho_n_pooled": float(np.mean([r["rho_n"] for r in layer_rows])),
        "z_scores": z_stats,
        "n_outputs_per_layer": n_outputs,
    })


# ----------------------------------------------------------- scaling-curve


def _equicorrelated_streams(rng, samples, d, rho, sigma_n):
    common = rng.normal(size=(samples, 1))
    own = rng.normal(size=(samples, d))
    u_s = math.sqrt(rho) * common + math.sqrt(1.0 - rho) * own
    u_n = sigma_n * rng.normal(size=(samples, d))
    return u_s, u_n


def _prefix_snrs(stream_pairs, k_grid) -> tuple:
    """Pooled SNR(D) over prefix sums, plus pooled moments and rho.

    stream_pairs yields (u_s, u_n) matrices with D columns each; the pooled
    moments treat every term of every stream as one sample.
    """
    sig = np.zeros(len(k_grid))
    noi = np.zeros(len(k_grid))
    rho_list = []
    n_terms = 0
    sum_s = sum_s2 = sum_n = sum_n2 = 0.0
    for u_s, u_n in stream_pairs:
        cs = np.cumsum(u_s, axis=1)
        cn = np.cumsum(u_n, axis=1)
        for i, k in enumerate(k_grid):
            sig[i] += float(np.sum(cs[:, k - 1] ** 2))
            noi[i] += float(np.sum(cn[:, k - 1] ** 2))
        rho_list.append(effective_correlation(u_s))
        n_terms += u_s.size
        sum_s += float(np.sum(u_s))
        sum_s2 += float(np.sum(u_s * u_s))
        sum_n += float(np.sum(u_n))
        sum_n2 += float(np.sum(u_n * u_n))
    s_bar = sum_s / n_terms
    n_bar = sum_n / n_terms
    var_s = (sum_s2 - n_terms * s_bar * s_bar) / (n_terms - 1)
    var_n = (sum_n2 - n_terms * n_bar * n_bar) / (n_terms - 1)
    snrs = tuple(s / n if n > 0 else math.inf for s, n in zip(sig, noi))
    return snrs, {
        "rho_s": float(np.mean(rho_list)),
        "sigma_s": math.sqrt(max(var_s, 0.0)),
        "sigma_n": math.sqrt(max(var_n, 0.0)),
        "s_bar": s_bar,
        "n_bar": n_bar,
    }


def _model_stream_pairs(model, corpus, cfg, qcfg, n_outputs, rng):
    taps = _clean_taps(model, corpus, cfg)
    d = model.cfg.d_model
    for tap in taps:
        if tap.b.shape[0] != d:
            continue  # only GEMMs whose contraction is the model width
        cols = rng.choice(tap.b.shape[1], size=min(n_outputs, tap.b.shape[1]),
                          replace=False)
        for _, u_s, u_n in _product_streams(tap, qcfg, cols):
            yield u_s, u_n


def _theory_curve(k_grid, moments) -> tuple:
    return tuple(
        predict_snr(k, moments["sigma_s"], moments["sigma_n"],
                    mu_s=k * moments["s_bar"], mu_n=k * moments["n_bar"],
                    rho_s=moments["rho_s"])
        for k in k_grid)


def _run_scaling(cfg: ExperimentConfig, writer: RunWriter) -> None:
    d = cfg.model.d_model
    k_grid = _default_k_grid(d)
    rho_gpt_in = cfg.extra("scaling.rho_gpt")
    rho_ngpt_in = cfg.extra("scaling.rho_ngpt")
    synthetic = rho_gpt_in is not None or rho_ngpt_in is not None

    if synthetic:
        if rho_gpt_in is None or rho_ngpt_in is None:
            raise ConfigError("synthetic scaling needs both scaling.rho_gpt "
                              "and scaling.rho_ngpt")
        samples = int(cfg.extra("scaling.samples", 4096))
        sigma_n = float(cfg.extra("scaling.sigma_n", 0.1))
        per_arch = {}
        for idx, (arch, rho) in enumerate(
                (("gpt", float(rho_gpt_in)), ("ngpt", float(rho_ngpt_in)))):
            rng = np.random.default_rng(cfg.model.seed + idx)
            pairs = [_equicorrelated_streams(rng, samples, d, rho, sigma_n)]
            per_arch[arch] = _prefix_snrs(pairs, k_grid)
        source = "synthetic"
    else:
        ck_gpt = cfg.extra("scaling.checkpoint_gpt")
        ck_ngpt = cfg.extra("scaling.checkpoint_ngpt")
        if ck_gpt is None or ck_ngpt is None:
            raise ConfigError("scaling-curve needs scaling.checkpoint_gpt and "
                              "scaling.checkpoint_ngpt (or synthetic rho inputs)")
        corpus = _require_corpus(cfg)
        writer.data_sha256 = corpus.sha256
        qcfg = _analysis_quant(cfg)
        n_outputs = int(cfg.extra("scaling.outputs", 8))
        per_arch = {}
        for arch, path in (("gpt", ck_gpt), ("ngpt", ck_ngpt)):
            model = _load_state(path, arch)
            if model.cfg.d_model != d:
                raise ConfigError(
                    f"checkpoint {path} width {model.cfg.d_model} != config d_model {d}")
            rng = np.random.default_rng(cfg.model.seed)
            pairs = _model_stream_pairs(model, corpus, cfg, qcfg, n_outputs, rng)
            per_arch[arch] = _prefix_snrs(pairs, k_grid)
        source = "model checkpoints"

    snr_gpt, mom_gpt = per_arch["gpt"]
    snr_ngpt, mom_ngpt = per_arch["ngpt"]
    theory_gpt = _theory_curve(k_grid, mom_gpt)
    theory_ngpt = _theory_curve(k_grid, mom_ngpt)

    regime_meta = {}
    try:
        regime = snr_ratio_and_regimes(mom_ngpt["rho_s"], mom_gpt["rho_s"], k_grid)
        ratios = regime.ratios
        regimes = regime.regimes
        regime_meta = {"t1": regime.t1, "t2": regime.t2,
                       "saturation": regime.saturation}
    except ValueError:
        # measured correlations out of the ordered range; emit the raw ratio
        ratios = tuple((1.0 + k * mom_ngpt["rho_s"]) / (1.0 + k * mom_gpt["rho_s"])
                       for k in k_grid)
        regimes = tuple("-" for _ in k_grid)

    rows = [{"D": int(k), "snr_gpt": snr_gpt[i], "snr_ngpt": snr_ngpt[i],
             "theory_gpt": theory_gpt[i], "theory_ngpt": theory_ngpt[i],
             "ratio_pred": ratios[i], "regime": regimes[i]}
            for i, k in enumerate(k_grid)]
    writer.csv("scaling.csv", rows)
    writer.json("summary.json", {
        "source": source,
        "k_grid": list(k_grid),
        "moments_gpt": mom_gpt,
        "moments_ngpt": mom_ngpt,
        "regime_boundaries": regime_meta,
    })


# --------------------------------------------------------------- landscape


def _run_landscape(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = _require_corpus(cfg)
    writer.data_sha256 = corpus.sha256
    ck_gpt = cfg.extra("landscape.checkpoint_gpt")
    ck_ngpt = cfg.extra("landscape.checkpoint_ngpt")
    if ck_gpt is None or ck_ngpt is None:
        raise ConfigError("landscape needs landscape.checkpoint_gpt and "
                          "landscape.checkpoint_ngpt")
    if len(cfg.seeds) < 10:
        raise ConfigError(
            f"landscape needs at least 10 seeds, got {len(cfg.seeds)}")
    alphas = tuple(cfg.extra("landscape.alphas", DEFAULT_ALPHAS))
    gpt_state = _load_state(ck_gpt, "gpt")
    ngpt_state = _load_state(ck_ngpt, "ngpt")
    val = corpus.val_windows(cfg.analysis_batch, gpt_state.cfg.seq_len)
    report = landscape_curve(gpt_state, ngpt_state, alphas, cfg.seeds, val)
    writer.csv("landscape.csv", report.record_rows())
    writer.json("summary.json", {
        "alpha_grid": list(report.alpha_grid),
        "clean_loss_gpt": report.clean_loss_gpt,
        "clean_loss_ngpt": report.clean_loss_ngpt,
        "clean_loss_mismatch": report.clean_loss_mismatch,
        "slope_gpt": report.slope_gpt,
        "slope_ngpt": report.slope_ngpt,
        "slope_ratio": report.slope_ratio,
        "mean_delta_gpt": list(report.mean_delta_gpt),
        "mean_delta_ngpt": list(report.mean_delta_ngpt),
        "std_delta_gpt": list(report.std_delta_gpt),
        "std_delta_ngpt": list(report.std_delta_ngpt),
    })


# ---------------------------------------------------------------- lr-sweep


def _run_lr_sweep(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = _require_corpus(cfg)
    writer.data_sha256 = corpus.sha256
    lo = float(cfg.extra("sweep.lr_min", 1e-4))
    hi = float(cfg.extra("sweep.lr_max", 1e-2))
    points = int(cfg.extra("sweep.points", 8))
    grid = log_spaced_grid(lo, hi, points)
    archs = tuple(cfg.extra("sweep.archs", ("gpt", "ngpt")))
    labels = tuple(cfg.extra("sweep.precisions", ("off", "nvfp4")))
    precisions = []
    for label in labels:
        if label == "off":
            precisions.append(None)
        elif label == "nvfp4":
            if cfg.quant is None:
                raise ConfigError(
                    "sweep precision 'nvfp4' needs quant.enabled = true")
            precisions.append(cfg.quant)
        else:
            raise ConfigError(f"unknown sweep precision {label!r}")

    pool_rows = int(cfg.extra("sweep.pool_rows", 256))
    train_pool = next(corpus.train_batches(pool_rows, cfg.model.seq_len,
                                           cfg.model.seed))
    val = corpus.val_windows(cfg.analysis_batch, cfg.model.seq_len)
    budget = SweepBudget(steps=cfg.steps, batch_size=cfg.batch_size,
                         seed=cfg.model.seed)
    report = lr_sweep(cfg.model, archs, precisions, grid, budget,
                      train_pool, val)
    writer.csv("lrsweep.csv", report.record_rows())
    spreads = {f"{arch}/{label}": report.bpb_spread(arch, label)
               for arch in archs for label in labels}
    writer.json("summary.json", {
        "lr_grid": list(report.lr_grid),
        "argmin_lr": {f"{k[0]}/{k[1]}": v for k, v in report.argmin_lr.items()},
        "bpb_spread": spreads,
        "divergent_cells": [c.record() for c in report.cells if c.diverged],
    })


# --------------------------------------------------------------- mlp-align


def _run_mlp_align(cfg: ExperimentConfig, writer: RunWriter) -> None:
    corpus = _require_corpus(cfg)
    writer.data_sha256 = corpus.sha256
    report = mlp_align(
        corpus,
        cfg.quant,
        cfg.seeds,
        cfg.steps,
        cfg.batch_size,
        width=int(cfg.extra("mlp.width", 256)),
        embed_dim=int(cfg.extra("mlp.embed_dim", 64)),
        context=int(cfg.extra("mlp.context", 8)),
        n_outputs=int(cfg.extra("mlp.outputs", 32)),
        lr_gpt=float(cfg.extra("mlp.lr_gpt", 1.2e-3)),
        lr_ngpt=float(cfg.extra("mlp.lr_ngpt", 0.6e-3)),
    )
    writer.csv("mlp_loss.csv", report["loss_rows"])
    writer.csv("mlp_corr.csv", report["corr_rows"])
    final = {f"{arch}/{seed}": loss
             for (arch, seed), loss in report["final_loss"].items()}
    by_arch = {arch: float(np.mean([v for (a, _), v in report["final_loss"].items()
                                    if a == arch]))
               for arch in report["arch_order"]}
    rho_by_arch = {arch: float(np.mean([r["rho_s"] for r in report["corr_rows"]
                                        if r["arch"] == arch]))
                   for arch in report["arch_order"]}
    writer.json("summary.json", {
        "task": report["task"],
        "final_loss": final,
        "mean_final_loss": by_arch,
        "mean_rho_s": rho_by_arch,
        "seeds": list(cfg.seeds),
    })


# ---------------------------------------------------------------- dispatch


_RUNNERS = {
    "train": _run_train,
    "analyze-snr": _run_analyze_snr,
    "correlation": _run_correlation,
    "scaling-curve": _run_scaling,
    "landscape": _run_landscape,
    "lr-sweep": _run_lr_sweep,
    "mlp-align": _run_mlp_align,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Dispatch to the named experiment; returns the closing manifest."""
    runner = _RUNNERS.get(cfg.experiment)
    if runner is None:
        raise UnknownExperimentError(
            f"unknown experiment {cfg.experiment!r}; known: {sorted(_RUNNERS)}")
    writer = RunWriter(cfg.output_dir, cfg)
    runner(cfg, writer)
    return writer.finish()
