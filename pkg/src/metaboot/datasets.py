"""Bundled example data."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .effect_sizes import EffectKind
from .ingest import ingest_csv
from .model import MetaDataset

# name -> (file, effect kind)
BUNDLED = {"nicotine_gum": ("nicotine_gum.csv", EffectKind.LOG_OR)}


def dataset_path(name: str) -> Path:
    try:
        filename, _ = BUNDLED[name]
    except KeyError:
        raise KeyError(f"unknown bundled dataset {name!r}; available: {sorted(BUNDLED)}") from None
    return Path(str(resources.files("metaboot") / "data" / filename))


def load(name: str) -> MetaDataset:
    """Load a bundled dataset, e.g. ``load("nicotine_gum")`` (26 trials, log odds ratios)."""
    return ingest_csv(dataset_path(name), BUNDLED[name][1])


def nicotine_gum() -> MetaDataset:
    return load("nicotine_gum")
