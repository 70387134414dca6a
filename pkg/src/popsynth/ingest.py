"""Loading and harmonizing raw source files into integer-coded datasets."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .freq import FrequencyTable, from_counts
from .schema import DataSourceDescriptor, Schema

log = logging.getLogger(__name__)

DROP = "__DROP__"
MISSING = "__MISSING__"
ANY = "*"
MISSING_CODE = -1

WEIGHT_COL = "_weight"
COUNT_COL = "_count"

POLICIES = ("listwise-delete", "mode-impute", "keep")


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    source_id: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped_out_of_scope: int = 0
    dropped_missing: int = 0
    imputed: dict = field(default_factory=dict)
    missing_cells: int = 0

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "dropped_out_of_scope": self.dropped_out_of_scope,
            "dropped_missing": self.dropped_missing,
            "imputed": dict(sorted(self.imputed.items())),
            "missing_cells": self.missing_cells,
        }


@dataclass(frozen=True, eq=False)
class PreparedDataset:
    """One harmonized source, integer-coded against the schema's states.

    Micro data: ``records`` is (rows x columns) with ``MISSING_CODE`` for
    missing cells (only ever present under the ``keep`` policy) and
    ``weights`` is None (all ones) or strictly positive.
    Macro data: ``records`` holds unique state combinations and ``weights``
    their non-negative counts.
    """

    source_id: str
    kind: str
    columns: tuple[str, ...]
    states: Mapping[str, tuple[str, ...]]
    records: np.ndarray
    weights: Optional[np.ndarray] = None
    report: Optional[IngestReport] = None

    def __post_init__(self):
        rec = np.array(self.records, dtype=np.int32, copy=True)
        if rec.ndim != 2 or rec.shape[1] != len(self.columns):
            raise IngestError(f"{self.source_id}: records must be (n, {len(self.columns)})")
        for j, c in enumerate(self.columns):
            k = len(self.states[c])
            col = rec[:, j]
            bad = (col >= k) | ((col < 0) & (col != MISSING_CODE))
            if self.kind == "macro":
                bad |= col == MISSING_CODE
            if bad.any():
                raise IngestError(f"{self.source_id}: invalid state index in column {c!r}")
        rec.flags.writeable = False
        object.__setattr__(self, "records", rec)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "states", {c: tuple(self.states[c]) for c in self.columns})
        w = self.weights
        if w is not None:
            w = np.array(w, dtype=np.float64, copy=True)
            if w.shape != (rec.shape[0],):
                raise IngestError(f"{self.source_id}: weight vector has wrong length")
            if self.kind == "micro" and not (w > 0).all():
                raise IngestError(f"{self.source_id}: micro weights must be strictly positive")
            if self.kind == "macro":
                if (w < 0).any():
                    raise IngestError(f"{self.source_id}: negative count")
                if w.sum() <= 0:
                    raise IngestError(f"{self.source_id}: total count is zero")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)
        elif self.kind == "macro":
            raise IngestError(f"{self.source_id}: macro dataset needs counts")

    @property
    def n(self) -> int:
        return self.records.shape[0]

    @property
    def effective_weights(self) -> np.ndarray:
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def total_weight(self) -> float:
        return float(self.effective_weights.sum())

    @property
    def complete(self) -> bool:
        return not (self.records == MISSING_CODE).any()

    def cards(self, attrs: Sequence[str]) -> tuple[int, ...]:
        return tuple(len(self.states[a]) for a in attrs)

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.columns.index(name)]

    def select(self, attrs: Sequence[str]) -> np.ndarray:
        idx = [self.columns.index(a) for a in attrs]
        return self.records[:, idx]

    def equals(self, other: "PreparedDataset") -> bool:
        if (self.source_id, self.kind, self.columns) != (other.source_id, other.kind, other.columns):
            return False
        if dict(self.states) != dict(other.states):
            return False
        if not np.array_equal(self.records, other.records):
            return False
        if (self.weights is None) != (other.weights is None):
            return False
        return self.weights is None or np.array_equal(self.weights, other.weights)


# -- harmonization ---------------------------------------------------------

def _read_table(path, delimiter: str) -> pd.DataFrame:
    return pd.read_csv(
        path, sep=delimiter, dtype=str, keep_default_na=False, na_filter=False,
        encoding="utf-8",
    )


def _is_missing_token(token: str, missing_token: str) -> bool:
    return token == "" or token == missing_token


def harmonize_column(raw: pd.Series, attr: str, states: Sequence[str],
                     mapping: Optional[Mapping[str, str]], missing_token: str,
                     source_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Map raw tokens to state indices.

    Returns ``(codes, drop)`` where codes carry ``MISSING_CODE`` for missing
    cells and ``drop`` flags out-of-scope records (``DROP`` entries).
    Tokens that are already state labels pass through unless the map
    overrides them; a ``"*"`` entry catches every remaining token.
    """
    mapping = dict(mapping or {})
    lookup = {s: i for i, s in enumerate(states)}
    for tok, target in mapping.items():
        if target not in (DROP, MISSING) and target not in lookup:
            raise IngestError(
                f"{source_id}: harmonization target {target!r} is not a state of {attr!r}"
            )
    fallback = mapping.pop(ANY, None)
    uniq = pd.unique(raw)
    table = {}
    for tok in uniq:
        if tok in mapping:
            target = mapping[tok]
        elif _is_missing_token(tok, missing_token):
            target = MISSING
        elif tok in lookup:
            target = tok
        elif fallback is not None:
            target = fallback
        else:
            raise IngestError(f"{source_id}: raw token {tok!r} in column {attr!r} has no mapping")
        table[tok] = -2 if target == DROP else (MISSING_CODE if target == MISSING else lookup[target])
    codes = raw.map(table).to_numpy(dtype=np.int64)
    drop = codes == -2
    codes[drop] = MISSING_CODE
    return codes.astype(np.int32), drop


def _weighted_mode(col: np.ndarray, weights: np.ndarray, k: int) -> int:
    ok = col != MISSING_CODE
    counts = np.bincount(col[ok], weights=weights[ok], minlength=k)
    return int(np.argmax(counts))  # first maximum = lowest state index


def ingest_micro(path, descriptor: DataSourceDescriptor, schema: Schema,
                 hmap: Optional[Mapping[str, Mapping[str, str]]] = None,
                 missing_policy: str = "listwise-delete", missing_token: str = "NA",
                 delimiter: str = ",") -> PreparedDataset:
    """Load a micro sample.

    ``listwise-delete`` removes every record with a missing declared cell;
    ``mode-impute`` fills each missing cell with the attribute's weighted
    modal state over complete cells; ``keep`` leaves missing cells coded
    as ``MISSING_CODE`` for EM fitting.
    """
    if descriptor.kind != "micro":
        raise IngestError(f"{descriptor.id}: descriptor is not a micro source")
    if missing_policy not in POLICIES:
        raise IngestError(f"unknown missing-value policy {missing_policy!r}")
    hmap = hmap or {}
    df = _read_table(path, delimiter)
    cols = list(descriptor.attributes)
    needed = cols + ([descriptor.weight_column] if descriptor.weight_column else [])
    for c in needed:
        if c not in df.columns:
            raise IngestError(f"{descriptor.id}: column {c!r} not found in {path}")
    report = IngestReport(descriptor.id, rows_read=len(df))

    codes = np.empty((len(df), len(cols)), dtype=np.int32)
    drop = np.zeros(len(df), dtype=bool)
    for j, c in enumerate(cols):
        codes[:, j], d = harmonize_column(
            df[c], c, schema.attribute(c).states, hmap.get(c), missing_token, descriptor.id
        )
        drop |= d
    if descriptor.weight_column:
        try:
            weights = df[descriptor.weight_column].astype(np.float64).to_numpy()
        except ValueError as exc:
            raise IngestError(f"{descriptor.id}: non-numeric weight: {exc}") from None
        if not (weights > 0).all():
            raise IngestError(f"{descriptor.id}: weights must be strictly positive")
    else:
        weights = None

    report.dropped_out_of_scope = int(drop.sum())
    keep = ~drop
    codes = codes[keep]
    if weights is not None:
        weights = weights[keep]

    miss = codes == MISSING_CODE
    report.missing_cells = int(miss.sum())
    if missing_policy == "listwise-delete":
        complete = ~miss.any(axis=1)
        report.dropped_missing = int((~complete).sum())
        codes = codes[complete]
        if weights is not None:
            weights = weights[complete]
    elif missing_policy == "mode-impute":
        w = np.ones(len(codes)) if weights is None else weights
        codes = codes.copy()
        for j, c in enumerate(cols):
            m = miss[:, j]
            if m.any():
                if m.all():
                    raise IngestError(f"{descriptor.id}: column {c!r} has no observed values")
                codes[m, j] = _weighted_mode(codes[:, j], w, len(schema.attribute(c).states))
                report.imputed[c] = int(m.sum())
    elif (miss.all(axis=1)).any():
        raise IngestError(f"{descriptor.id}: a record is missing every attribute")

    if len(codes) == 0:
        raise IngestError(f"{descriptor.id}: no records left after missing-value handling")
    report.rows_kept = len(codes)
    log.info("ingested %s: %d read, %d kept", descriptor.id, report.rows_read, report.rows_kept)
    return PreparedDataset(descriptor.id, "micro", tuple(cols), schema.states(cols),
                           codes, weights, report)


def ingest_macro(path, descriptor: DataSourceDescriptor, schema: Schema,
                 hmap: Optional[Mapping[str, Mapping[str, str]]] = None,
                 count_column: str = "count", missing_token: str = "NA",
                 delimiter: str = ",") -> PreparedDataset:
    """Load a contingency table; duplicate combinations are summed."""
    if descriptor.kind != "macro":
        raise IngestError(f"{descriptor.id}: descriptor is not a macro source")
    hmap = hmap or {}
    df = _read_table(path, delimiter)
    cols = list(descriptor.attributes)
    for c in df.columns:
        if c != count_column and c not in cols:
            raise IngestError(f"{descriptor.id}: unknown attribute column {c!r}")
    for c in cols + [count_column]:
        if c not in df.columns:
            raise IngestError(f"{descriptor.id}: column {c!r} not found in {path}")
    report = IngestReport(descriptor.id, rows_read=len(df))
    try:
        counts = df[count_column].astype(np.float64).to_numpy()
    except ValueError as exc:
        raise IngestError(f"{descriptor.id}: non-numeric count: {exc}") from None
    if (counts < 0).any() or not np.isfinite(counts).all():
        raise IngestError(f"{descriptor.id}: negative or non-finite count")

    codes = np.empty((len(df), len(cols)), dtype=np.int32)
    drop = np.zeros(len(df), dtype=bool)
    for j, c in enumerate(cols):
        codes[:, j], d = harmonize_column(
            df[c], c, schema.attribute(c).states, hmap.get(c), missing_token, descriptor.id
        )
        drop |= d
    codes, counts = codes[~drop], counts[~drop]
    report.dropped_out_of_scope = int(drop.sum())
    if (codes == MISSING_CODE).any():
        raise IngestError(f"{descriptor.id}: macro tables cannot contain missing cells")

    cards = tuple(len(schema.attribute(c).states) for c in cols)
    flat = np.ravel_multi_index(tuple(codes.T), cards)
    uniq, inv = np.unique(flat, return_inverse=True)
    summed = np.bincount(inv, weights=counts, minlength=len(uniq))
    if summed.sum() <= 0:
        raise IngestError(f"{descriptor.id}: total count is zero")
    combos = np.stack(np.unravel_index(uniq, cards), axis=1) if len(uniq) else np.empty((0, len(cols)))
    report.rows_kept = len(uniq)
    return PreparedDataset(descriptor.id, "macro", tuple(cols), schema.states(cols),
                           combos, summed, report)


def complete_cases(ds: PreparedDataset, attrs: Optional[Sequence[str]] = None) -> PreparedDataset:
    """Micro records observed on every attribute in ``attrs`` (default: all columns)."""
    attrs = tuple(attrs or ds.columns)
    ok = (ds.select(attrs) != MISSING_CODE).all(axis=1)
    if ok.all():
        return ds
    w = None if ds.weights is None else ds.weights[ok]
    return PreparedDataset(ds.source_id, ds.kind, ds.columns, ds.states, ds.records[ok], w, ds.report)


def empirical_frequencies(ds: PreparedDataset, attrs: Sequence[str]) -> FrequencyTable:
    """Weighted (micro) or count-based (macro) relative frequencies over ``attrs``.

    Micro records missing any requested attribute are skipped.
    """
    attrs = tuple(attrs)
    if not attrs:
        raise ValueError("attribute subset is empty")
    for a in attrs:
        if a not in ds.columns:
            raise KeyError(f"attribute {a!r} not in dataset {ds.source_id!r}")
    codes = ds.select(attrs)
    w = ds.effective_weights
    ok = (codes != MISSING_CODE).all(axis=1)
    if not ok.all():
        codes, w = codes[ok], w[ok]
    return from_counts(attrs, ds.cards(attrs), codes, w)


# -- columnar text format --------------------------------------------------

def write_prepared(ds: PreparedDataset, path) -> None:
    """Write state labels as CSV; weights/counts go in a trailing column.

    Missing cells are written as empty fields. Floats use ``repr`` so the
    file round-trips exactly.
    """
    extra = COUNT_COL if ds.kind == "macro" else (WEIGHT_COL if ds.weights is not None else None)
    labels = [np.array(ds.states[c] + ("",), dtype=object) for c in ds.columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.columns) + ([extra] if extra else []))
        cols = [labels[j][ds.records[:, j]] for j in range(len(ds.columns))]  # -1 -> ""
        rows = zip(*cols) if cols else iter(())
        if extra:
            ws = [repr(float(x)) for x in ds.weights]
            w.writerows(list(r) + [x] for r, x in zip(rows, ws))
        else:
            w.writerows(rows)


def read_prepared(path, source_id: str, schema: Schema) -> PreparedDataset:
    df = _read_table(path, ",")
    kind = "macro" if COUNT_COL in df.columns else "micro"
    extra = COUNT_COL if kind == "macro" else (WEIGHT_COL if WEIGHT_COL in df.columns else None)
    cols = [c for c in df.columns if c != extra]
    codes = np.empty((len(df), len(cols)), dtype=np.int32)
    for j, c in enumerate(cols):
        states = schema.attribute(c).states
        lookup = {s: i for i, s in enumerate(states)}
        lookup[""] = MISSING_CODE
        try:
            codes[:, j] = df[c].map(lookup).to_numpy(dtype=np.int64)
        except (ValueError, TypeError):
            raise IngestError(f"{path}: column {c!r} holds a label outside the schema") from None
    weights = df[extra].astype(np.float64).to_numpy() if extra else None
    return PreparedDataset(source_id, kind, tuple(cols), schema.states(cols), codes, weights)
