"""CSV ingestion and export of study-level data.

Accepted column sets (header names are case-insensitive):

========  ===========================================================
smd       ``n1, n2, est`` or ``n1, n2, mean1, mean2, sd1, sd2``
fcor      ``n, r``
lnor      ``n00, n01, n10, n11``
any kind  ``est, var`` (effects and variances already computed)
========  ===========================================================

An optional ``study`` column supplies labels; moderators are read by name.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .effect_sizes import (CorRaw, EffectKind, OrRaw, SmdRaw, fisher_z, from_estimate,
                           log_odds_ratio, smd_from_estimate, smd_from_summary)
from .errors import EffectSizeError, EmptyDataset, RowError, SchemaError
from .model import MetaDataset

SCHEMAS = {
    EffectKind.SMD: (("n1", "n2", "mean1", "mean2", "sd1", "sd2"), ("n1", "n2", "est")),
    EffectKind.FISHER_Z: (("n", "r"),),
    EffectKind.LOG_OR: (("n00", "n01", "n10", "n11"),),
}
GENERIC = ("est", "var")


def _pick_schema(kind: EffectKind, header: Sequence[str]) -> tuple[str, ...]:
    present = set(header)
    for cols in SCHEMAS[kind] + (GENERIC,):
        if present.issuperset(cols):
            return cols
    wanted = " or ".join("(" + ", ".join(c) + ")" for c in SCHEMAS[kind] + (GENERIC,))
    raise SchemaError(f"{kind.value} input needs columns {wanted}; found {list(header)}")


def _number(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise RowError(line, f"column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise RowError(line, f"column {column!r} is not finite: {text!r}")
    return value


def _study(kind, schema, values, adjust):
    if schema == GENERIC:
        return from_estimate(kind, values["est"], values["var"])
    if kind is EffectKind.SMD and "est" in schema:
        return smd_from_estimate(values["n1"], values["n2"], values["est"], adjust)
    if kind is EffectKind.SMD:
        return smd_from_summary(*(values[c] for c in schema))
    if kind is EffectKind.FISHER_Z:
        return fisher_z(values["r"], values["n"])
    return log_odds_ratio(*(values[c] for c in schema))


def ingest_csv(path, effect, moderator_columns: Sequence[str] = (),
               adjust: bool = False) -> MetaDataset:
    """Read one study per row into a :class:`MetaDataset`.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    effect : EffectKind or str
        Effect family; selects the accepted column sets.
    moderator_columns : sequence of str
        Columns forming the moderator matrix, in order.
    adjust : bool
        Apply the small-sample correction to a reported SMD ``est`` column.

    Raises
    ------
    SchemaError
        Missing header, missing columns, or ``adjust`` with a non-SMD effect.
    RowError
        A row with a non-numeric or out-of-domain value; ``line`` is 1-based
        and counts the header.
    EmptyDataset
        Fewer than two studies.
    """
    kind = EffectKind.parse(effect)
    if adjust and kind is not EffectKind.SMD:
        raise SchemaError("adjust applies only to smd input")
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty; a header row is required") from None
        schema = _pick_schema(kind, header)
        mods = [m.strip().lower() for m in moderator_columns]
        missing = [m for m in mods if m not in header]
        if missing:
            raise SchemaError(f"moderator column(s) not found: {missing}")
        index = {name: i for i, name in enumerate(header)}
        studies, labels, z = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise RowError(line, f"expected {len(header)} fields, got {len(row)}")
            values = {c: _number(row[index[c]], c, line) for c in schema}
            try:
                studies.append(_study(kind, schema, values, adjust))
            except EffectSizeError as exc:
                raise RowError(line, str(exc)) from None
            z.append([_number(row[index[m]], m, line) for m in mods])
            if "study" in index:
                labels.append(row[index["study"]].strip())
    if len(studies) < 2:
        raise EmptyDataset(f"{path} holds {len(studies)} stud{'y' if len(studies) == 1 else 'ies'}; need at least 2")
    covariates = np.array(z, dtype=float) if mods else None
    return MetaDataset(tuple(studies), covariates, tuple(mods), tuple(labels))


def export_csv(dataset: MetaDataset, path) -> None:
    """Write ``dataset`` so that :func:`ingest_csv` rebuilds an equal dataset.

    Raw inputs are written when every study has them; otherwise ``est, var``.
    Floats use ``repr`` so values survive the round trip exactly.
    """
    raws = [s.raw for s in dataset.studies]
    if all(isinstance(r, SmdRaw) for r in raws):
        cols = ["n1", "n2", "est"]
        rows = [[r.n1, r.n2, s.estimate] for s, r in zip(dataset.studies, raws)]
    elif all(isinstance(r, CorRaw) for r in raws):
        cols = ["n", "r"]
        rows = [[r.n, r.r] for r in raws]
    elif all(isinstance(r, OrRaw) for r in raws):
        cols = ["n00", "n01", "n10", "n11"]
        rows = [[r.n00, r.n01, r.n10, r.n11] for r in raws]
    else:
        cols = list(GENERIC)
        rows = [[s.estimate, s.variance] for s in dataset.studies]
    if dataset.labels:
        cols = ["study"] + cols
        rows = [[label] + row for label, row in zip(dataset.labels, rows)]
    cols += list(dataset.moderator_names)
    if dataset.p:
        rows = [row + list(zrow) for row, zrow in zip(rows, dataset.covariates)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])
