"""Classification metrics and regional coverage-increase statistics.

Precision/recall are macro-averaged over the classes appearing in gold or
predictions; undefined per-class ratios count as 0. Coverage increase is
100 * predicted / geotagged within a region, rounded half-up to two
decimals, and undefined (None) when nothing was geotagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable

from .data import Prediction
from .gazetteer import BBox, contains


@dataclass
class ClassStats:
    label: int
    precision: float
    recall: float
    support: int


@dataclass
class MetricsReport:
    accuracy: float
    precision_macro: float
    recall_macro: float
    per_class: list[ClassStats]

    def lines(self) -> list[str]:
        out = [
            f"accuracy={self.accuracy:.4f}",
            f"precision_macro={self.precision_macro:.4f}",
            f"recall_macro={self.recall_macro:.4f}",
        ]
        for c in self.per_class:
            out.append(f"class.{c.label}.precision={c.precision:.4f} "
                       f"class.{c.label}.recall={c.recall:.4f} "
                       f"class.{c.label}.support={c.support}")
        return out

    def table(self) -> str:
        rows = [f"{'label':>8} {'precision':>10} {'recall':>10} {'support':>8}"]
        for c in self.per_class:
            rows.append(f"{c.label:>8} {c.precision:>10.4f} {c.recall:>10.4f} {c.support:>8}")
        rows.append(f"accuracy {self.accuracy:.4f}  "
                    f"macro precision {self.precision_macro:.4f}  "
                    f"macro recall {self.recall_macro:.4f}")
        return "\n".join(rows)


def classification_metrics(gold: list[int], pred: list[int]) -> MetricsReport:
    """Accuracy plus per-class and macro precision/recall."""
    if len(gold) != len(pred):
        raise ValueError(f"gold and pred lengths differ: {len(gold)} vs {len(pred)}")
    if not gold:
        raise ValueError("classification_metrics requires nonempty inputs")
    classes = sorted(set(gold) | set(pred))
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    support = {c: 0 for c in classes}
    matches = 0
    for g, p in zip(gold, pred):
        support[g] += 1
        if g == p:
            matches += 1
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    per_class = []
    for c in classes:
        denom_p = tp[c] + fp[c]
        denom_r = tp[c] + fn[c]
        per_class.append(ClassStats(
            label=c,
            precision=tp[c] / denom_p if denom_p else 0.0,
            recall=tp[c] / denom_r if denom_r else 0.0,
            support=support[c],
        ))
    return MetricsReport(
        accuracy=matches / len(gold),
        precision_macro=sum(c.precision for c in per_class) / len(per_class),
        recall_macro=sum(c.recall for c in per_class) / len(per_class),
        per_class=per_class,
    )


def percent_increase(n_geotagged: int, n_predicted: int) -> float | None:
    """100 * predicted / geotagged, two decimals, half-up; None when no base."""
    if n_geotagged < 0:
        raise ValueError(f"n_geotagged must be >= 0, got {n_geotagged}")
    if n_geotagged == 0:
        return None
    ratio = Decimal(100 * n_predicted) / Decimal(n_geotagged)
    return float(ratio.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class RegionStats:
    bbox: BBox
    n_geotagged: int
    n_predicted: int

    @property
    def percent_increase(self) -> float | None:
        return percent_increase(self.n_geotagged, self.n_predicted)


@dataclass
class RegionCounter:
    """Incremental fold of predictions into a region's counts; merges are
    associative so partial counts can be combined."""

    bbox: BBox
    n_geotagged: int = 0
    n_predicted: int = 0

    def add(self, point: tuple[float, float], provenance: str) -> None:
        if contains(self.bbox, point):
            if provenance == "geotagged":
                self.n_geotagged += 1
            elif provenance == "predicted":
                self.n_predicted += 1

    def merge(self, other: "RegionCounter") -> "RegionCounter":
        return RegionCounter(self.bbox, self.n_geotagged + other.n_geotagged,
                             self.n_predicted + other.n_predicted)

    def stats(self) -> RegionStats:
        return RegionStats(self.bbox, self.n_geotagged, self.n_predicted)


def region_stats(predictions: Iterable[Prediction], bbox: BBox) -> RegionStats:
    """Count geotagged and predicted points inside a closed bounding box."""
    counter = RegionCounter(bbox)
    for pred in predictions:
        counter.add(pred.point, pred.provenance)
    return counter.stats()
