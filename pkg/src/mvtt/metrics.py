"""Voxelwise classification statistics, scar percentage, and agreement stats.

Conventions adopted here (each is a deliberate, documented choice):
  - When a metric's denominator class is absent from both prediction and
    truth, the metric is 1.0 and the row is flagged; absent from truth only,
    it is 0.0 and flagged.
  - Bland-Altman uses the sample (n-1) standard deviation, and diffs landing
    exactly on a limit of agreement count as "within" (closed interval).
  - Aggregate blocks report mean and sample standard deviation across rows.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .phantom import boundary_shell


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class DerivedMetrics:
    accuracy: float
    sensitivity: float
    specificity: float
    dice: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    loa_low: float
    loa_high: float
    fraction_within: float


@dataclass(frozen=True)
class AgreementStats:
    pearson_r: float
    bland_altman: BlandAltman


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: pred {pred.shape} vs truth {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def derive(counts: ConfusionCounts) -> DerivedMetrics:
    if counts.total == 0:
        raise ValueError("cannot derive metrics from zero evaluated voxels")
    flags: list[str] = []

    def ratio(name: str, num: int, den: int, absent_in_both: bool) -> float:
        if den > 0:
            return num / den
        flags.append(f"{name}_absent_class")
        return 1.0 if absent_in_both else 0.0

    accuracy = (counts.tp + counts.tn) / counts.total
    sensitivity = ratio("sensitivity", counts.tp, counts.tp + counts.fn, counts.fp == 0)
    specificity = ratio("specificity", counts.tn, counts.tn + counts.fp, counts.fn == 0)
    dice = ratio("dice", 2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, True)
    return DerivedMetrics(
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        dice=dice,
        flags=tuple(flags),
    )


def scar_percentage(scar, la_pv, wall_radius: float = 2.0) -> float:
    """100 * |scar| / |wall shell of la_pv|; the wall-volume denominator is a
    documented convention with configurable radius."""
    scar = np.asarray(scar, dtype=bool)
    la_pv = np.asarray(la_pv, dtype=bool)
    if scar.shape != la_pv.shape:
        raise ValueError(f"extent mismatch: scar {scar.shape} vs la_pv {la_pv.shape}")
    if not la_pv.any():
        raise ValueError("scar_percentage: empty LA/PV mask")
    wall = boundary_shell(la_pv, wall_radius)
    return 100.0 * float(scar.sum()) / float(wall.sum())


def _as_series(xs, ys, min_len: int):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < min_len:
        raise ValueError(f"need at least {min_len} pairs, got {len(xs)}")
    return xs, ys


def pearson(xs, ys) -> float:
    xs, ys = _as_series(xs, ys, min_len=2)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        which = "xs" if vx == 0.0 else "ys"
        raise ValueError(f"pearson undefined: zero variance in {which}")
    return float(dx @ dy) / np.sqrt(vx * vy)


def bland_altman(xs, ys) -> BlandAltman:
    xs, ys = _as_series(xs, ys, min_len=2)
    diffs = xs - ys
    mean_diff = float(diffs.mean())
    sd_diff = float(diffs.std(ddof=1))
    loa_low = mean_diff - 1.96 * sd_diff
    loa_high = mean_diff + 1.96 * sd_diff
    within = (diffs >= loa_low) & (diffs <= loa_high)
    return BlandAltman(
        mean_diff=mean_diff,
        loa_low=loa_low,
        loa_high=loa_high,
        fraction_within=float(within.mean()),
    )


def agreement(xs, ys) -> AgreementStats:
    return AgreementStats(pearson_r=pearson(xs, ys), bland_altman=bland_altman(xs, ys))


STAT_FIELDS = ("accuracy", "sensitivity", "specificity", "dice")


@dataclass(frozen=True)
class MetricsRow:
    volume: str
    task: str  # "la_pv" or "scar"
    metrics: DerivedMetrics
    scar_percentage_pred: float | None = None
    scar_percentage_true: float | None = None


@dataclass
class MetricsReport:
    rows: list[MetricsRow]

    def aggregate(self) -> dict:
        """Per-task mean and sample std of each statistic across rows."""
        out: dict[str, dict] = {}
        for task in sorted({r.task for r in self.rows}):
            rows = [r for r in self.rows if r.task == task]
            block: dict[str, dict] = {}
            for stat in STAT_FIELDS:
                vals = np.array([getattr(r.metrics, stat) for r in rows])
                std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
                block[stat] = {"mean": float(vals.mean()), "std": std}
            block["n"] = len(rows)
            block["flagged_rows"] = sum(1 for r in rows if r.metrics.flags)
            out[task] = block
        return out

    def to_json_dict(self) -> dict:
        per_volume = []
        for r in self.rows:
            d = {"volume": r.volume, "task": r.task, "flags": list(r.metrics.flags)}
            for stat in STAT_FIELDS:
                d[stat] = getattr(r.metrics, stat)
            d["scar_percentage_pred"] = r.scar_percentage_pred
            d["scar_percentage_true"] = r.scar_percentage_true
            per_volume.append(d)
        return {"per_volume": per_volume, "aggregate": self.aggregate()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["volume", "task", *STAT_FIELDS, "scar_percentage_pred", "scar_percentage_true", "flags"]
        )
        for r in self.rows:
            writer.writerow(
                [
                    r.volume,
                    r.task,
                    *(repr(getattr(r.metrics, stat)) for stat in STAT_FIELDS),
                    "" if r.scar_percentage_pred is None else repr(r.scar_percentage_pred),
                    "" if r.scar_percentage_true is None else repr(r.scar_percentage_true),
                    ";".join(r.metrics.flags),
                ]
            )
        return buf.getvalue()
