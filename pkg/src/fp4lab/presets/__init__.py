"""Bundled config presets for the desk-scale model pair.

Six presets cover {gpt, ngpt} x {off, nvfp4, nvfp4-bare}; the bare variant
turns off the Hadamard preconditioner and the per-tensor scale, leaving the
plain block format. Presets omit data_path on purpose: point one at a real
corpus with `--override data_path=...` (and pick the experiment on the
command line).
"""

from __future__ import annotations

from importlib import resources


def preset_names() -> tuple:
    """Sorted names of the bundled presets (without the .cfg suffix)."""
    root = resources.files(__package__)
    return tuple(sorted(
        entry.name[:-4] for entry in root.iterdir()
        if entry.name.endswith(".cfg")))


def preset_path(name: str) -> str:
    """Filesystem path of a bundled preset, by bare name or name.cfg."""
    if not name.endswith(".cfg"):
        name = name + ".cfg"
    entry = resources.files(__package__) / name
    if not entry.is_file():
        known = ", ".join(preset_names())
        raise KeyError(f"no preset {name!r}; bundled: {known}")
    return str(entry)


__all__ = ["preset_names", "preset_path"]
