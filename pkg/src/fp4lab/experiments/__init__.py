"""Experiment orchestration: configs, corpus handling, runners, CLI."""

from .config import EXPERIMENTS, ExperimentConfig, config_from_mapping, load_config
from .corpus import Corpus, generate_text, load_corpus
from .io import CSV_SCHEMAS, RunWriter, read_csv, write_csv
from .mlp import OneLayerMLP, mlp_align, product_correlations, train_mlp
from .runners import run_experiment

__all__ = [
    "CSV_SCHEMAS",
    "Corpus",
    "EXPERIMENTS",
    "ExperimentConfig",
    "OneLayerMLP",
    "RunWriter",
    "config_from_mapping",
    "generate_text",
    "load_config",
    "load_corpus",
    "mlp_align",
    "product_correlations",
    "read_csv",
    "run_experiment",
    "train_mlp",
    "write_csv",
]
