"""Classification and group-fairness metrics.

Depressed (class 1) is the positive outcome throughout. Reported F1 and
Recall default to macro averages over the two classes; Male-F1 and Female-F1
are macro-F1 within each gender subgroup. Equal Accuracy is the absolute
accuracy gap between the gender groups; Disparate Impact is the ratio of
positive-prediction rates, majority (female) over minority (male), and is
reported as an explicit NA marker when the male positive-prediction rate is
zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict

from .types import PredictionRecord

Averaging = Literal["macro", "positive"]


@dataclass
class ConfusionCounts:
    """Exact tp/fp/tn/fn counts, overall and per gender group."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    per_group: dict[int, "ConfusionCounts"] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class FairnessReport(BaseModel):
    """One Table-style report row; `di` is None when undefined."""

    model_config = ConfigDict(frozen=True)

    f1: float
    accuracy: float
    recall: float
    male_f1: float
    female_f1: float
    ea: float
    di: Optional[float] = None


def confusion(records: list[PredictionRecord]) -> ConfusionCounts:
    """Count the four outcomes overall and within each gender group."""
    if not records:
        raise ValueError("cannot build a confusion matrix from zero records")
    counts = ConfusionCounts(per_group={0: ConfusionCounts(), 1: ConfusionCounts()})
    for rec in records:
        for tgt in (counts, counts.per_group.setdefault(rec.gender, ConfusionCounts())):
            if rec.true_label == 1 and rec.predicted_label == 1:
                tgt.tp += 1
            elif rec.true_label == 0 and rec.predicted_label == 1:
                tgt.fp += 1
            elif rec.true_label == 0 and rec.predicted_label == 0:
                tgt.tn += 1
            else:
                tgt.fn += 1
    return counts


def _safe_div(num: float, den: float) -> float:
    # Zero-denominator terms contribute 0 by contract.
    return num / den if den > 0 else 0.0


def _class_prf(counts: ConfusionCounts) -> dict[int, tuple[float, float, float]]:
    """(precision, recall, f1) per class, treating class 0 as its own positive."""
    out = {}
    for cls, (tp, fp, fn) in {
        1: (counts.tp, counts.fp, counts.fn),
        0: (counts.tn, counts.fn, counts.fp),
    }.items():
        precision = _safe_div(tp, tp + fp)
        recall = _safe_div(tp, tp + fn)
        f1 = _safe_div(2 * precision * recall, precision + recall)
        out[cls] = (precision, recall, f1)
    return out


def accuracy_of(counts: ConfusionCounts) -> float:
    return _safe_div(counts.tp + counts.tn, counts.total)


def f1_of(counts: ConfusionCounts, averaging: Averaging = "macro") -> float:
    prf = _class_prf(counts)
    if averaging == "positive":
        return prf[1][2]
    return (prf[0][2] + prf[1][2]) / 2.0


def recall_of(counts: ConfusionCounts, averaging: Averaging = "macro") -> float:
    prf = _class_prf(counts)
    if averaging == "positive":
        return prf[1][1]
    return (prf[0][1] + prf[1][1]) / 2.0


def core_metrics(counts: ConfusionCounts, averaging: Averaging = "macro") -> dict[str, float]:
    """Overall f1/accuracy/recall plus within-gender macro-F1 values."""
    per_gender_f1 = {
        g: f1_of(counts.per_group[g], "macro") if counts.per_group.get(g) and counts.per_group[g].total else 0.0
        for g in (0, 1)
    }
    return {
        "f1": f1_of(counts, averaging),
        "accuracy": accuracy_of(counts),
        "recall": recall_of(counts, averaging),
        "male_f1": per_gender_f1[0],
        "female_f1": per_gender_f1[1],
    }


def _require_both_groups(records: list[PredictionRecord]) -> tuple[list, list]:
    males = [r for r in records if r.gender == 0]
    females = [r for r in records if r.gender == 1]
    if not males or not females:
        raise ValueError("both gender groups must be nonempty")
    return males, females


def equal_accuracy(records: list[PredictionRecord]) -> float:
    """Absolute accuracy gap between the female and male groups."""
    males, females = _require_both_groups(records)
    acc = lambda rs: sum(r.predicted_label == r.true_label for r in rs) / len(rs)
    return abs(acc(females) - acc(males))


def disparate_impact(records: list[PredictionRecord]) -> Optional[float]:
    """Female positive-prediction rate over male positive-prediction rate.

    Returns None (the NA marker) when no male is predicted positive; never
    raises for that case.
    """
    males, females = _require_both_groups(records)
    male_rate = sum(r.predicted_label == 1 for r in males) / len(males)
    female_rate = sum(r.predicted_label == 1 for r in females) / len(females)
    if male_rate == 0.0:
        return None
    return female_rate / male_rate


def fairness_report(records: list[PredictionRecord], averaging: Averaging = "macro") -> FairnessReport:
    counts = confusion(records)
    core = core_metrics(counts, averaging)
    return FairnessReport(
        f1=core["f1"],
        accuracy=core["accuracy"],
        recall=core["recall"],
        male_f1=core["male_f1"],
        female_f1=core["female_f1"],
        ea=equal_accuracy(records),
        di=disparate_impact(records),
    )


REPORT_COLUMNS = ("F1-score", "Accuracy", "Recall", "Male-F1", "Female-F1", "EA", "DI")


def report_row_values(report: FairnessReport) -> list[str]:
    vals = [report.f1, report.accuracy, report.recall, report.male_f1, report.female_f1, report.ea]
    row = [f"{v:.3f}" for v in vals]
    row.append("NA" if report.di is None else f"{report.di:.3f}")
    return row


def render_text_table(rows: list[tuple[str, str, FairnessReport]]) -> str:
    """Aligned text table: (model, method) labels plus the seven metric columns."""
    header = ["Model", "Debiasing Method", *REPORT_COLUMNS]
    body = [[model, method, *report_row_values(rep)] for model, method, rep in rows]
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    lines = []
    for row in [header, *body]:
        lines.append("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
