"""Core record types shared by every module.

Gender and depression labels are binary integer codes; class index 1
(Depressed) is the positive outcome everywhere, including the fairness
metrics. Records are immutable pydantic models and serialize to
line-delimited JSON with the field names below.
"""

from __future__ import annotations

from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator


class GenderCode(IntEnum):
    """0 = male (minority group), 1 = female (majority group)."""

    MALE = 0
    FEMALE = 1


class DepressionLabel(IntEnum):
    """0 = Non-depressed, 1 = Depressed (the positive outcome)."""

    NON_DEPRESSED = 0
    DEPRESSED = 1


class FeatureSequence(BaseModel):
    """Time-ordered matrix of segment-level feature rows (T x d).

    Rows are stored row-major as nested lists so the sequence survives a
    JSON round trip bit-exactly. `d_alf` is the dimension after pooling;
    None means pooling preserves the row dimension.
    """

    model_config = ConfigDict(frozen=True)

    data: list[list[float]]
    d_alf: Optional[int] = None

    @field_validator("data")
    @classmethod
    def _rectangular(cls, v: list[list[float]]) -> list[list[float]]:
        if len(v) == 0:
            raise ValueError("feature sequence needs at least one row")
        width = len(v[0])
        if width == 0 or any(len(row) != width for row in v):
            raise ValueError("feature rows must be non-empty and equal length")
        return v

    @classmethod
    def from_array(cls, arr: np.ndarray, d_alf: Optional[int] = None) -> "FeatureSequence":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"expected 2-d array, got shape {a.shape}")
        return cls(data=a.tolist(), d_alf=d_alf)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64)

    @property
    def n_segments(self) -> int:
        return len(self.data)

    @property
    def dim(self) -> int:
        return len(self.data[0])


class SessionRecord(BaseModel):
    """One interview session: audio reference or precomputed features plus labels."""

    model_config = ConfigDict(frozen=True)

    session_id: str
    gender: int
    label: int
    audio_path: Optional[str] = None
    transcript_path: Optional[str] = None
    features: Optional[FeatureSequence] = None


class PredictionRecord(BaseModel):
    """One model decision for a session; `tie_scores` carries the debiased scores when present."""

    model_config = ConfigDict(frozen=True)

    session_id: str
    gender: int
    true_label: int
    predicted_label: int
    tie_scores: Optional[list[float]] = None


def argmax_label(scores: Iterable[float]) -> int:
    """Argmax over a length-2 score vector, breaking ties toward Non-depressed (0)."""
    s = list(scores)
    if len(s) != 2:
        raise ValueError(f"expected 2 scores, got {len(s)}")
    return 1 if s[1] > s[0] else 0


def validate_session(record: SessionRecord) -> list[str]:
    """Check a session record's invariants; returns violations instead of raising."""
    violations = []
    if not record.session_id:
        violations.append("session_id is empty")
    if record.gender not in (0, 1):
        violations.append("gender not in {0,1}")
    if record.label not in (0, 1):
        violations.append("label not in {0,1}")
    if record.audio_path is None and record.features is None:
        violations.append("neither audio_path nor features present")
    if record.features is not None:
        arr = record.features.to_array()
        if not np.all(np.isfinite(arr)):
            violations.append("features contain non-finite values")
    return violations


def validate_prediction(record: PredictionRecord) -> list[str]:
    """Check a prediction record's invariants; returns violations instead of raising."""
    violations = []
    if record.gender not in (0, 1):
        violations.append("gender not in {0,1}")
    if record.true_label not in (0, 1):
        violations.append("true_label not in {0,1}")
    if record.predicted_label not in (0, 1):
        violations.append("predicted_label not in {0,1}")
    if record.tie_scores is not None:
        if len(record.tie_scores) != 2:
            violations.append("tie_scores length != 2")
        elif not all(np.isfinite(record.tie_scores)):
            violations.append("tie_scores contain non-finite values")
        elif record.predicted_label != argmax_label(record.tie_scores):
            violations.append("predicted_label is not the argmax of tie_scores")
    return violations


def write_jsonl(records: Iterable[BaseModel], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.model_dump_json(exclude_none=True))
            fh.write("\n")


def read_jsonl(path: str | Path, model: type) -> Iterator:
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield model.model_validate_json(line)
