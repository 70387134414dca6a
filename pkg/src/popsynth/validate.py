"""Fidelity metrics for synthetic populations.

Marginals are compared with the 1-Wasserstein distance (ordinal
attributes, unit spacing between consecutive states) or total variation
(nominal attributes). Joints are compared with SRMSE and a frequency
regression line.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .freq import FrequencyTable
from .ingest import PreparedDataset, empirical_frequencies
from .schema import Schema

NORM_TOL = 1e-6
JOINT_CELL_CAP = 10**6


class ValidationError(ValueError):
    pass


def _as_array(t) -> np.ndarray:
    return np.asarray(t.probs if isinstance(t, FrequencyTable) else t, dtype=np.float64)


def _same_space(p, q):
    if isinstance(p, FrequencyTable) and isinstance(q, FrequencyTable) and p.attrs != q.attrs:
        raise ValidationError(f"tables over different attributes: {p.attrs} vs {q.attrs}")
    a, b = _as_array(p), _as_array(q)
    if a.shape != b.shape:
        raise ValidationError(f"mismatched state spaces {a.shape} vs {b.shape}")
    return a, b


def marginal_distance(p, q, ordinal: bool) -> float:
    """W1 with unit spacing if ``ordinal`` else total variation."""
    a, b = _same_space(p, q)
    a, b = a.ravel(), b.ravel()
    for x in (a, b):
        if abs(x.sum() - 1.0) > NORM_TOL or (x < 0).any():
            raise ValidationError("input is not a normalized distribution")
    if ordinal:
        return float(np.abs(np.cumsum(a) - np.cumsum(b)).sum())
    return float(0.5 * np.abs(a - b).sum())


def srmse(p, q, cell_count: Optional[int] = None) -> float:
    """sqrt(sum (p - q)^2 / M) / (sum q / M) over the M-cell combination space."""
    a, b = _same_space(p, q)
    m = a.size if cell_count is None else int(cell_count)
    if m <= 0:
        raise ValidationError("cell count must be positive")
    mean_q = b.sum() / m
    if mean_q == 0:
        raise ValidationError("reference table is all zero")
    return float(np.sqrt(((a - b) ** 2).sum() / m) / mean_q)


@dataclass(frozen=True)
class RegressionFit:
    slope: Optional[float]
    intercept: Optional[float]
    r: Optional[float]
    n_points: int
    degenerate: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r": self.r,
                "n_points": self.n_points, "degenerate": self.degenerate, "note": self.note}


def regression_points(synth, ref) -> tuple[np.ndarray, np.ndarray]:
    """(reference, synthetic) frequencies over the union support."""
    y, x = _same_space(synth, ref)
    x, y = x.ravel(), y.ravel()
    keep = (x > 0) | (y > 0)
    return x[keep], y[keep]


def regression_fit(synth_freq, ref_freq) -> RegressionFit:
    """Least-squares line of synthetic (y) on reference (x) frequencies.

    Cells absent from both tables are ignored; cells present in one only
    count as zero in the other. A constant ``x`` leaves the line undefined
    and a constant ``y`` leaves ``r`` undefined; both are flagged via
    ``degenerate`` rather than reported as numbers.
    """
    x, y = regression_points(synth_freq, ref_freq)
    n = x.size
    if n < 2:
        raise ValidationError("regression needs at least 2 combinations in the union support")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = float(dx @ dx), float(dy @ dy), float(dx @ dy)
    if sxx == 0:
        return RegressionFit(None, None, None, n, True, "reference frequencies are all equal")
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    if np.array_equal(x, y):
        return RegressionFit(1.0, 0.0, 1.0, n)
    if syy == 0:
        return RegressionFit(slope, intercept, None, n, True, "synthetic frequencies are all equal")
    r = float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
    return RegressionFit(slope, intercept, r, n)


# -- report ----------------------------------------------------------------

@dataclass
class ValidationReport:
    marginals: list = field(default_factory=list)
    joints: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    scatter: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "marginals": self.marginals, "joints": self.joints}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def summary_rows(self) -> list[list]:
        rows = [["kind", "reference", "attributes", "metric", "value"]]
        for m in self.marginals:
            rows.append(["marginal", m["reference"], m["attribute"], m["metric"], repr(m["value"])])
        for j in self.joints:
            attrs = "|".join(j["attributes"])
            rows.append(["joint", j["reference"], attrs, "srmse", repr(j["srmse"])])
            for key in ("slope", "intercept", "r"):
                v = j["regression"][key]
                rows.append(["joint", j["reference"], attrs, key, "" if v is None else repr(v)])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.summary_rows())
        return buf.getvalue()

    def max_marginal_distance(self) -> float:
        return max((m["value"] for m in self.marginals), default=0.0)


def default_joint_sets(references: Sequence[PreparedDataset], cap: int = JOINT_CELL_CAP) -> list:
    """All attribute pairs of each reference, plus its full set when small enough."""
    out = []
    for ref in references:
        cols = list(ref.columns)
        out.extend((ref.source_id, pair) for pair in combinations(cols, 2))
        if len(cols) > 2 and np.prod(ref.cards(cols), dtype=object) <= cap:
            out.append((ref.source_id, tuple(cols)))
    return out


def validate_population(synthetic: PreparedDataset, references: Sequence[PreparedDataset],
                        schema: Schema, joint_sets: Optional[Sequence] = None,
                        keep_scatter: bool = False, metadata: Optional[dict] = None) -> ValidationReport:
    """Compare a synthetic micro table with every reference source.

    ``joint_sets`` items are attribute tuples (compared against every
    reference holding all of them) or ``(reference_id, attrs)`` pairs.
    Defaults to :func:`default_joint_sets`.
    """
    report = ValidationReport()
    by_id = {r.source_id: r for r in references}
    for ref in references:
        for a in ref.columns:
            if a not in synthetic.columns:
                continue
            p = empirical_frequencies(synthetic, [a])
            q = empirical_frequencies(ref, [a])
            ordinal = schema.attribute(a).ordinal
            report.marginals.append({
                "reference": ref.source_id, "attribute": a,
                "metric": "wasserstein" if ordinal else "total_variation",
                "value": marginal_distance(p, q, ordinal),
            })

    if joint_sets is None:
        joint_sets = default_joint_sets(references)
    tasks = []
    for item in joint_sets:
        if len(item) == 2 and isinstance(item[0], str) and not isinstance(item[1], str):
            rid, attrs = item
            if rid not in by_id:
                raise ValidationError(f"unknown reference {rid!r}")
            targets = [by_id[rid]]
        else:
            rid, attrs = None, item
            targets = [r for r in references if all(a in r.columns for a in attrs)]
        attrs = tuple(attrs)
        missing = [a for a in attrs if a not in synthetic.columns]
        if missing:
            raise ValidationError(f"synthetic population lacks {missing}")
        if not targets:
            raise ValidationError(f"no single reference holds all of {list(attrs)}")
        for ref in targets:
            absent = [a for a in attrs if a not in ref.columns]
            if absent:
                raise ValidationError(f"reference {ref.source_id!r} lacks {absent}")
            tasks.append((ref, attrs))

    for ref, attrs in tasks:
        p = empirical_frequencies(synthetic, attrs)
        q = empirical_frequencies(ref, attrs)
        fit = regression_fit(p, q)
        report.joints.append({
            "reference": ref.source_id, "attributes": list(attrs), "cells": q.cell_count,
            "srmse": srmse(p, q), "regression": fit.to_dict(),
        })
        if keep_scatter:
            report.scatter[(ref.source_id, attrs)] = regression_points(p, q)

    report.marginals.sort(key=lambda m: (m["reference"], m["attribute"]))
    report.joints.sort(key=lambda j: (j["reference"], j["attributes"]))
    report.metadata = {
        "synthetic_n": synthetic.n,
        "references": {r.source_id: {"kind": r.kind, "rows": r.n, "total_weight": r.total_weight}
                       for r in references},
        **(metadata or {}),
    }
    return report
