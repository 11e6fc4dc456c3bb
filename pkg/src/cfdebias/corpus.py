"""Corpus ingestion, distribution validation, and synthetic corpus generation.

Real corpora follow the DAIC-WOZ layout (per-session ``<id>_AUDIO.wav`` /
``<id>_TRANSCRIPT.csv`` plus split CSVs carrying PHQ-8 scores and gender).
Synthetic corpora carry feature sequences only and plant a label signal and a
gender shortcut along two orthogonal directions, which is what makes the
desk-scale debiasing experiments possible.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .types import FeatureSequence, SessionRecord

Cell = tuple[int, int]  # (gender, label)

CELLS: tuple[Cell, ...] = ((0, 0), (0, 1), (1, 0), (1, 1))

# Combined train (Female/Male x Non-depressed/Depressed) and test counts of the
# reference corpus; used as default synthetic shapes and as validation targets.
TABLE1_TRAIN_COUNTS: dict[Cell, int] = {(1, 0): 39, (1, 1): 24, (0, 0): 60, (0, 1): 19}
TABLE2_TEST_COUNTS: dict[Cell, int] = {(1, 0): 17, (1, 1): 7, (0, 0): 16, (0, 1): 7}


def cell_key(gender: int, label: int) -> str:
    return f"{gender},{label}"


def parse_cell_key(key: str) -> Cell:
    g, l = key.split(",")
    return int(g), int(l)


def counts_to_proportions(counts: dict[Cell, int]) -> dict[str, float]:
    total = sum(counts.values())
    return {cell_key(*cell): counts[cell] / total for cell in sorted(counts)}


def distribution_of(records: list[SessionRecord]) -> dict[str, int]:
    dist = {cell_key(*cell): 0 for cell in CELLS}
    for rec in records:
        dist[cell_key(rec.gender, rec.label)] = dist.get(cell_key(rec.gender, rec.label), 0) + 1
    return dist


class CorpusManifest(BaseModel):
    """A split's session records together with its (gender, label) cell counts."""

    model_config = ConfigDict(frozen=True)

    records: list[SessionRecord]
    split_name: str
    distribution: dict[str, int]

    @model_validator(mode="after")
    def _counts_match(self) -> "CorpusManifest":
        if any(c < 0 for c in self.distribution.values()):
            raise ValueError("distribution counts must be nonnegative")
        if sum(self.distribution.values()) != len(self.records):
            raise ValueError("distribution counts must sum to the record count")
        return self

    @classmethod
    def from_records(cls, records: list[SessionRecord], split_name: str) -> "CorpusManifest":
        ids = [r.session_id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("session_id must be unique within a corpus")
        return cls(records=records, split_name=split_name, distribution=distribution_of(records))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(exclude_none=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


def validate_distribution(
    manifest: CorpusManifest, expected: dict[str, int] | dict[Cell, int]
) -> tuple[bool, dict[str, tuple[int, int]]]:
    """Exact cell-count comparison; returns (ok, {cell: (actual, expected)}) for mismatches."""
    expected_keys = {
        (cell_key(*k) if isinstance(k, tuple) else k): v for k, v in expected.items()
    }
    diff: dict[str, tuple[int, int]] = {}
    for key in sorted(set(manifest.distribution) | set(expected_keys)):
        actual = manifest.distribution.get(key, 0)
        want = expected_keys.get(key, 0)
        if actual != want:
            diff[key] = (actual, want)
    return (len(diff) == 0), diff


class SynthConfig(BaseModel):
    """Recipe for a seeded synthetic spurious-correlation corpus."""

    model_config = ConfigDict(frozen=True)

    n_train: int = Field(gt=0)
    n_test: int = Field(gt=0)
    train_proportions: dict[str, float]
    test_proportions: dict[str, float]
    feature_dim: int = Field(default=16, ge=2)
    seq_len_range: tuple[int, int] = (5, 15)
    signal_strength: float = Field(default=1.0, ge=0.0)
    gender_leakage: float = Field(default=1.0, ge=0.0)
    noise_sigma: float = Field(default=1.0, gt=0.0)
    seed: int = 0

    @field_validator("train_proportions", "test_proportions")
    @classmethod
    def _proportions_sum_to_one(cls, v: dict[str, float]) -> dict[str, float]:
        for key, p in v.items():
            parse_cell_key(key)
            if p < 0:
                raise ValueError(f"negative proportion for cell {key}")
        if abs(sum(v.values()) - 1.0) > 1e-9:
            raise ValueError("proportions must sum to 1 within 1e-9")
        return v

    @field_validator("seq_len_range")
    @classmethod
    def _valid_range(cls, v: tuple[int, int]) -> tuple[int, int]:
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError("seq_len_range must satisfy 1 <= min <= max")
        return v


def table_shaped_config(scale: int = 4, seed: int = 0, **overrides) -> SynthConfig:
    """Synthetic config mirroring the reference corpus shapes (train scaled by `scale`)."""
    defaults = dict(
        n_train=142 * scale,
        n_test=47 * scale,
        train_proportions=counts_to_proportions(TABLE1_TRAIN_COUNTS),
        test_proportions=counts_to_proportions(TABLE2_TEST_COUNTS),
        feature_dim=16,
        seq_len_range=(5, 15),
        signal_strength=0.5,
        gender_leakage=1.1,
        noise_sigma=1.0,
        seed=seed,
    )
    defaults.update(overrides)
    return SynthConfig(**defaults)


def largest_remainder_counts(proportions: dict[str, float], n: int) -> dict[Cell, int]:
    """Round proportion*n per cell so the counts sum to n exactly."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    cells = sorted(parse_cell_key(k) for k in proportions)
    raw = {c: proportions[cell_key(*c)] * n for c in cells}
    counts = {c: int(np.floor(raw[c])) for c in cells}
    if any(v < 0 for v in counts.values()):
        raise ValueError("proportions infeasible: negative cell count")
    leftover = n - sum(counts.values())
    by_remainder = sorted(cells, key=lambda c: (-(raw[c] - counts[c]), c))
    for c in by_remainder[:leftover]:
        counts[c] += 1
    return counts


def generate_synthetic(config: SynthConfig) -> tuple[CorpusManifest, CorpusManifest]:
    """Generate (train, test) manifests; a pure function of the config, seed included.

    Every feature row is N(0, noise_sigma^2) per dimension plus a label-mean
    shift of magnitude signal_strength along one fixed unit direction and a
    gender-mean shift of magnitude gender_leakage along a second, orthogonal
    unit direction. Orthogonality keeps the shortcut and the true signal
    separable in principle.
    """
    rng = np.random.default_rng(config.seed)
    d = config.feature_dim

    # Seeded random rotation; its first two columns are the signal directions.
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    u_label = q[:, 0]
    u_gender = q[:, 1]

    def build_split(split_name: str, proportions: dict[str, float], n: int) -> CorpusManifest:
        counts = largest_remainder_counts(proportions, n)
        records = []
        idx = 0
        for gender, label in sorted(counts):
            mean = (
                config.signal_strength * (label - 0.5) * u_label
                + config.gender_leakage * (gender - 0.5) * u_gender
            )
            for _ in range(counts[(gender, label)]):
                t = int(rng.integers(config.seq_len_range[0], config.seq_len_range[1] + 1))
                rows = mean + rng.standard_normal((t, d)) * config.noise_sigma
                records.append(
                    SessionRecord(
                        session_id=f"synth-{split_name}-{idx:05d}",
                        gender=gender,
                        label=label,
                        features=FeatureSequence.from_array(rows),
                    )
                )
                idx += 1
        return CorpusManifest.from_records(records, split_name)

    train = build_split("train_combined", config.train_proportions, config.n_train)
    test = build_split("test", config.test_proportions, config.n_test)
    return train, test


# ---------------------------------------------------------------------------
# DAIC-WOZ-layout ingestion
# ---------------------------------------------------------------------------

_ID_COL = re.compile(r"participant", re.IGNORECASE)
_SCORE_COL = re.compile(r"phq8?_?score", re.IGNORECASE)
_BINARY_COL = re.compile(r"phq8?_?binary", re.IGNORECASE)
_GENDER_COL = re.compile(r"^gender$", re.IGNORECASE)

_SPLIT_FILE_HINTS = {
    "train": re.compile(r"train.*split", re.IGNORECASE),
    "dev": re.compile(r"dev.*split", re.IGNORECASE),
    "test": re.compile(r"(full_)?test.*split", re.IGNORECASE),
}


class ScoreRow(BaseModel):
    session_id: str
    gender: int
    phq_score: Optional[int] = None
    phq_binary: Optional[int] = None


def _find_column(header: list[str], pattern: re.Pattern) -> Optional[str]:
    for col in header:
        if pattern.search(col.strip()):
            return col
    return None


def read_score_table(path: str | Path, gender_map: Optional[dict[int, int]] = None) -> list[ScoreRow]:
    """Parse a split CSV into score rows; tolerates PHQ8_/PHQ_ column naming."""
    path = Path(path)
    with path.open("r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty score table")
        header = list(reader.fieldnames)
        id_col = _find_column(header, _ID_COL)
        gender_col = _find_column(header, _GENDER_COL)
        score_col = _find_column(header, _SCORE_COL)
        binary_col = _find_column(header, _BINARY_COL)
        if id_col is None or gender_col is None:
            raise ValueError(f"{path}: cannot locate participant/gender columns in {header}")
        if score_col is None and binary_col is None:
            raise ValueError(f"{path}: no PHQ score or binary column in {header}")
        rows = []
        for i, raw in enumerate(reader):
            if not raw.get(id_col, "").strip():
                continue
            try:
                sid = str(int(float(raw[id_col])))
                gender_raw = int(float(raw[gender_col]))
                score = int(float(raw[score_col])) if score_col and raw.get(score_col, "").strip() else None
                binary = int(float(raw[binary_col])) if binary_col and raw.get(binary_col, "").strip() else None
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed score row {i + 2}: {exc}") from exc
            gender = gender_map.get(gender_raw, gender_raw) if gender_map else gender_raw
            if gender not in (0, 1):
                raise ValueError(f"{path}: row {i + 2}: gender value {gender_raw} not mappable to {{0,1}}")
            rows.append(ScoreRow(session_id=sid, gender=gender, phq_score=score, phq_binary=binary))
        return rows


def _session_file(root: Path, session_id: str, suffix: str) -> Optional[Path]:
    # Flat layout and the per-session `<id>_P/` folder layout are both accepted.
    for candidate in (root / f"{session_id}{suffix}", root / f"{session_id}_P" / f"{session_id}{suffix}"):
        if candidate.exists():
            return candidate
    return None


def discover_split_tables(root: str | Path) -> dict[str, Path]:
    """Find the train/dev/test split CSVs under a corpus root by filename."""
    root = Path(root)
    found: dict[str, Path] = {}
    for path in sorted(root.glob("*.csv")):
        for split, pattern in _SPLIT_FILE_HINTS.items():
            if split not in found and pattern.search(path.name):
                found[split] = path
    return found


def ingest_daicwoz(
    root: str | Path,
    split_spec: Optional[dict[str, list[str]]] = None,
    phq_threshold: int = 10,
    gender_map: Optional[dict[int, int]] = None,
    exclude: Optional[list[str]] = None,
) -> dict[str, CorpusManifest]:
    """Build `train_combined` and `test` manifests from a DAIC-WOZ-layout tree.

    Labels binarize as PHQ score >= phq_threshold (falling back to the split
    CSV's precomputed binary column when no score is present). When
    `split_spec` is None, membership comes from the train/dev/test split CSVs
    discovered under the root; the original train and development sets merge
    into `train_combined`.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} does not exist")
    excluded = set(exclude or [])

    tables = discover_split_tables(root)
    if not tables:
        raise ValueError(f"no split CSVs with PHQ scores found under {root}")
    scores: dict[str, ScoreRow] = {}
    membership: dict[str, list[str]] = {}
    for split, path in tables.items():
        rows = read_score_table(path, gender_map=gender_map)
        membership[split] = [r.session_id for r in rows]
        for r in rows:
            scores[r.session_id] = r

    if split_spec is None:
        split_spec = {
            "train_combined": membership.get("train", []) + membership.get("dev", []),
            "test": membership.get("test", []),
        }
    else:
        merged = dict(split_spec)
        if "train_combined" not in merged and ("train" in merged or "dev" in merged):
            merged["train_combined"] = list(merged.pop("train", [])) + list(merged.pop("dev", []))
        split_spec = merged

    manifests: dict[str, CorpusManifest] = {}
    for split_name, ids in split_spec.items():
        records = []
        for sid in ids:
            sid = str(sid)
            if sid in excluded:
                continue
            row = scores.get(sid)
            if row is None:
                raise ValueError(f"session {sid}: no PHQ score row in any split table")
            if row.phq_score is not None:
                label = 1 if row.phq_score >= phq_threshold else 0
            elif row.phq_binary is not None:
                label = int(row.phq_binary)
            else:
                raise ValueError(f"session {sid}: neither PHQ score nor binary label")
            audio = _session_file(root, sid, "_AUDIO.wav")
            if audio is None:
                raise FileNotFoundError(f"session {sid}: missing {sid}_AUDIO.wav under {root}")
            transcript = _session_file(root, sid, "_TRANSCRIPT.csv")
            records.append(
                SessionRecord(
                    session_id=sid,
                    gender=row.gender,
                    label=label,
                    audio_path=str(audio),
                    transcript_path=str(transcript) if transcript else None,
                )
            )
        manifests[split_name] = CorpusManifest.from_records(records, split_name)
    return manifests


def manifest_sha256(path: str | Path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_manifests(manifests: dict[str, CorpusManifest], out_dir: str | Path) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, manifest in manifests.items():
        path = out / f"{name}.json"
        manifest.save(path)
        paths[name] = str(path)
    return paths


def summarize(manifest: CorpusManifest) -> dict:
    return {
        "split_name": manifest.split_name,
        "n_records": len(manifest.records),
        "distribution": dict(sorted(manifest.distribution.items())),
    }


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest {path} does not exist")
    try:
        return CorpusManifest.load(path)
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest {path} is not valid JSON: {exc}") from exc
