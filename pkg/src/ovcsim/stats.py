"""Statistical comparisons and figure-data generation.

Welch two-sided t-tests, box-plot style survival summaries, the treatment
frequency/timing z-score matrix, and per-line treatment frequencies.  All
functions are pure; callers handle file I/O via the writers at the bottom.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSample, EmptySample

Z_CLAMP_LO = 0.0
Z_CLAMP_HI = 3.0
DEFAULT_INTERVAL_MONTHS = 3
DEFAULT_MAX_LINES = 6


@dataclass
class SurvivalSample:
    label: str
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("survival values must be non-negative")


# ---------------------------------------------------------------------------
# Welch's t-test

# The p-value comes from the regularized incomplete beta function
# I_x(a, b), computed with the Lentz continued-fraction expansion; for a
# t statistic with df degrees of freedom,
#   P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).


def _betainc_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, valid for x < (a+1)/(a+b+2)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) via the continued fraction, using the symmetry relation."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must be in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betainc_cf(a, b, x) / a
    return 1.0 - front * _betainc_cf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T_df| >= |t|)."""
    if df <= 0:
        raise ValueError("df must be positive")
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


def welch_t_test(a: SurvivalSample, b: SurvivalSample) -> dict:
    """Welch's unequal-variance t-test with a two-sided p-value."""
    xa, xb = a.values, b.values
    na, nb = len(xa), len(xb)
    if na < 2 or nb < 2:
        raise DegenerateSample("both samples need at least 2 values")
    va = float(np.var(xa, ddof=1))
    vb = float(np.var(xb, ddof=1))
    if va == 0.0 and vb == 0.0:
        raise DegenerateSample("both samples have zero variance")
    sa, sb = va / na, vb / nb
    t = (float(np.mean(xa)) - float(np.mean(xb))) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    return {"t": t, "df": df, "p_two_sided": t_sf_two_sided(t, df)}


# ---------------------------------------------------------------------------
# box-plot style summary


def survival_summary(sample: SurvivalSample) -> dict:
    """Mean/sd/quartiles plus Tukey whiskers and outliers.

    Quartiles use linear interpolation between order statistics; whiskers sit
    at the most extreme points within 1.5*IQR of the box.
    """
    values = sample.values
    if len(values) == 0:
        raise EmptySample(sample.label)
    q1, median, q3 = (float(q) for q in np.percentile(values, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    outliers = values[(values < lo_fence) | (values > hi_fence)]
    return {
        "mean": float(np.mean(values)),
        "sd": float(np.std(values, ddof=1)) if len(values) > 1 else 0.0,
        "median": median,
        "q1": q1,
        "q3": q3,
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": sorted(float(v) for v in outliers),
    }


# ---------------------------------------------------------------------------
# treatment frequency/timing matrix

# An episode, for analysis purposes, is a sequence of (month_index,
# combination_label) pairs: the month the action was taken and the chosen
# combination.


@dataclass
class FrequencyMatrix:
    combinations: list[str]  # rows, sorted by total count descending
    interval_starts: list[int]  # column left edges, in months
    counts: np.ndarray  # (rows, cols) int
    z: np.ndarray
    z_clamped: np.ndarray


def frequency_timing_matrix(
    episodes: Iterable[Sequence[tuple[int, str]]],
    interval_months: int = DEFAULT_INTERVAL_MONTHS,
) -> FrequencyMatrix:
    """Counts of each combination per fixed interval since treatment start.

    Z-scores are computed per interval column across all combinations; a
    zero-variance column scores 0.  Clamped scores live in [0, 3].
    """
    raw: dict[str, dict[int, int]] = {}
    max_bin = 0
    n_episodes = 0
    for episode in episodes:
        n_episodes += 1
        for month, label in episode:
            b = month // interval_months
            max_bin = max(max_bin, b)
            raw.setdefault(label, {})[b] = raw.get(label, {}).get(b, 0) + 1
    if n_episodes == 0:
        raise ValueError("at least one episode required")

    labels = sorted(raw, key=lambda lab: (-sum(raw[lab].values()), lab))
    n_bins = max_bin + 1
    counts = np.zeros((len(labels), n_bins), dtype=int)
    for i, lab in enumerate(labels):
        for b, c in raw[lab].items():
            counts[i, b] = c

    z = np.zeros_like(counts, dtype=float)
    for j in range(n_bins):
        col = counts[:, j].astype(float)
        sd = col.std()
        if sd > 0:
            z[:, j] = (col - col.mean()) / sd
    z_clamped = np.clip(z, Z_CLAMP_LO, Z_CLAMP_HI)
    return FrequencyMatrix(
        combinations=labels,
        interval_starts=[b * interval_months for b in range(n_bins)],
        counts=counts,
        z=z,
        z_clamped=z_clamped,
    )


# ---------------------------------------------------------------------------
# per-line treatment frequencies


def treatment_lines(actions: Sequence[str]) -> list[str]:
    """Maximal runs of a single non-NONE combination, in order."""
    lines = []
    prev = None
    for label in actions:
        if label != prev and label != "NONE":
            lines.append(label)
        prev = label
    return lines


def line_frequencies(
    episodes: Iterable[Sequence[tuple[int, str]]],
    max_lines: int = DEFAULT_MAX_LINES,
) -> list[dict]:
    """Percent of patients whose k-th treatment line is each combination.

    Percentages are over patients that reach a k-th line, so each line index
    sums to 100.
    """
    per_line: list[dict[str, int]] = [dict() for _ in range(max_lines)]
    totals = [0] * max_lines
    any_episode = False
    for episode in episodes:
        any_episode = True
        lines = treatment_lines([label for _, label in episode])
        for k, label in enumerate(lines[:max_lines]):
            per_line[k][label] = per_line[k].get(label, 0) + 1
            totals[k] += 1
    if not any_episode:
        raise ValueError("at least one episode required")

    rows = []
    for k in range(max_lines):
        for label in sorted(per_line[k], key=lambda lab: (-per_line[k][lab], lab)):
            rows.append(
                {
                    "line_index": k + 1,
                    "combination": label,
                    "percent": 100.0 * per_line[k][label] / totals[k],
                }
            )
    return rows


# ---------------------------------------------------------------------------
# writers


def write_comparison_json(results: list[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_heatmap_csv(matrix: FrequencyMatrix, path: str | Path) -> None:
    lines = ["combination,interval_start_month,count,z,z_clamped"]
    for i, lab in enumerate(matrix.combinations):
        for j, start in enumerate(matrix.interval_starts):
            lines.append(
                f"{lab},{start},{matrix.counts[i, j]},"
                f"{repr(float(matrix.z[i, j]))},{repr(float(matrix.z_clamped[i, j]))}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_lines_csv(rows: list[dict], path: str | Path) -> None:
    lines = ["line_index,combination,percent"]
    for row in rows:
        lines.append(f"{row['line_index']},{row['combination']},{repr(row['percent'])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
