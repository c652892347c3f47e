"""CSV and manifest emission with exact round-trip guarantees.

CSV cells are written so that re-parsing reproduces the record set exactly:
floats via repr (which round-trips 64-bit values, including inf), ints as
decimal, bools as true/false, everything else as strings. The reader
reverses that typing cell by cell.

Every run directory receives a manifest.json (config text, seeds, data
checksum, code version, kernel backend, wall time) that pins the run, plus
a config.cfg snapshot that reloads through the normal config parser.
"""

from __future__ import annotations

import csv
import json
import os
import time
from datetime import datetime, timezone

import numpy as np

from .. import __version__
from ..fpquant import active_backend

# fixed, versioned schemas (documented in the README)
CSV_SCHEMAS = {
    "losstrace.csv": ("step", "loss", "lr"),
    "evals.csv": ("step", "val_loss", "val_bpb"),
    "snr.csv": ("layer", "stage", "snr_db"),
    "corr.csv": ("layer", "rho_s", "rho_n"),
    "corr_outputs.csv": ("layer", "output", "rho_s", "rho_n"),
    "rhocurve.csv": ("layer", "k", "rho_s"),
    "scaling.csv": ("D", "snr_gpt", "snr_ngpt", "theory_gpt", "theory_ngpt",
                    "ratio_pred", "regime"),
    "landscape.csv": ("arch", "alpha", "seed", "delta"),
    "lrsweep.csv": ("arch", "precision", "lr", "bpb", "diverged"),
    "mlp_loss.csv": ("arch", "seed", "step", "loss"),
    "mlp_corr.csv": ("arch", "seed", "rho_s", "rho_n"),
}


def _format_cell(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return repr(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return value
    raise TypeError(f"unsupported CSV cell type {type(value)!r} for {value!r}")


def _parse_cell(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: str, rows, schema=None) -> None:
    """Write dict rows under a fixed column order (schema or file default)."""
    name = os.path.basename(path)
    if schema is None:
        schema = CSV_SCHEMAS.get(name)
    if schema is None:
        raise ValueError(f"no schema known for {name!r}; pass one explicitly")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema)
        for row in rows:
            if set(row) != set(schema):
                raise ValueError(
                    f"row keys {sorted(row)} do not match schema {list(schema)}")
            writer.writerow([_format_cell(row[k]) for k in schema])


def read_csv(path: str) -> list:
    """Read back a CSV written by write_csv, restoring cell types."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [dict(zip(header, (_parse_cell(c) for c in row))) for row in reader]


class RunWriter:
    """Single funnel for a run's artifacts plus the closing manifest."""

    def __init__(self, output_dir: str, cfg, data_sha256: str | None = None):
        os.makedirs(output_dir, exist_ok=True)
        probe = os.path.join(output_dir, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
        self.output_dir = output_dir
        self.cfg = cfg
        self.data_sha256 = data_sha256
        self.started = time.monotonic()
        self.started_utc = datetime.now(timezone.utc).isoformat()
        self.artifacts: list = []
        self.notes: dict = {}

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def csv(self, name: str, rows, schema=None) -> str:
        p = self.path(name)
        write_csv(p, rows, schema)
        self.artifacts.append(name)
        return p

    def json(self, name: str, payload: dict) -> str:
        p = self.path(name)
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.artifacts.append(name)
        return p

    def note(self, key: str, value) -> None:
        """Attach a value to the manifest (for summary-level metadata)."""
        self.notes[key] = value

    def add_artifact(self, name: str) -> None:
        self.artifacts.append(name)

    def finish(self) -> dict:
        """Write config.cfg and manifest.json; verify artifacts exist."""
        config_text = self.cfg.to_text()
        with open(self.path("config.cfg"), "w", encoding="utf-8") as fh:
            fh.write(config_text)
        self.artifacts.append("config.cfg")
        manifest = {
            "experiment": self.cfg.experiment,
            "config": config_text,
            "seeds": list(self.cfg.seeds),
            "model_seed": self.cfg.model.seed,
            "data_sha256": self.data_sha256,
            "code_version": __version__,
            "kernel_backend": active_backend(),
            "numpy_version": np.__version__,
            "started_utc": self.started_utc,
            "wall_time_s": time.monotonic() - self.started,
            "artifacts": sorted(set(self.artifacts)),
            "notes": self.notes,
        }
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        missing = [a for a in manifest["artifacts"]
                   if not os.path.exists(self.path(a))]
        if missing:
            raise RuntimeError(f"artifacts missing after run: {missing}")
        return manifest
