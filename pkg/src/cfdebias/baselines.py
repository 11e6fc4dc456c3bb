"""Comparison debiasing strategies: majority sub-sampling and feature-space
interpolation (MixFeat).

Sub-sampling shrinks every (gender, label) cell to the smallest cell's count.
MixFeat synthesizes virtual session features as convex combinations of two
distinct same-cell session features; augmentation raises minority cells to
the largest cell's count and the synthetic entries are flagged so they can
never leak into evaluation sets.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict

from .corpus import CorpusManifest, cell_key
from .types import SessionRecord


class AugmentedFeature(BaseModel):
    """A virtual training sample interpolated between two same-cell parents."""

    model_config = ConfigDict(frozen=True)

    features: list[float]
    gender: int
    label: int
    parents: tuple[str, str]
    mix: float
    augmented: bool = True


def _cells(records: list[SessionRecord]) -> dict[tuple[int, int], list[SessionRecord]]:
    cells: dict[tuple[int, int], list[SessionRecord]] = {}
    for rec in records:
        cells.setdefault((rec.gender, rec.label), []).append(rec)
    return cells


def sub_sample(manifest: CorpusManifest, seed: int) -> CorpusManifest:
    """Down-sample every cell without replacement to the smallest cell's count.

    Deterministic under the seed and independent of the input record order
    (records are sampled in session-id order within each cell).
    """
    cells = _cells(manifest.records)
    empty = [c for c in ((0, 0), (0, 1), (1, 0), (1, 1)) if not cells.get(c)]
    if empty:
        raise ValueError(f"cannot sub-sample: empty cells {[cell_key(*c) for c in empty]}")
    target = min(len(v) for v in cells.values())
    rng = np.random.default_rng(seed)
    keep: set[str] = set()
    for cell in sorted(cells):
        ordered = sorted(cells[cell], key=lambda r: r.session_id)
        chosen = rng.choice(len(ordered), size=target, replace=False)
        keep.update(ordered[i].session_id for i in chosen)
    records = [r for r in manifest.records if r.session_id in keep]
    return CorpusManifest.from_records(records, manifest.split_name)


def draw_mix_assignments(
    n_members: int, n_new: int, seed: int, alpha: float = 1.0, beta: float = 1.0
) -> list[tuple[int, int, float]]:
    """Seeded (parent_i, parent_j, mix) draws for one cell; i != j, and the
    mixing coefficient comes from Beta(alpha, beta), uniform by default."""
    if n_new < 0:
        raise ValueError("n_new must be nonnegative")
    if n_members < 2:
        raise ValueError("need at least 2 members to mix")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_new):
        i, j = rng.choice(n_members, size=2, replace=False)
        draws.append((int(i), int(j), float(rng.beta(alpha, beta))))
    return draws


def mixfeat_augment(
    cell_features: list[np.ndarray],
    parent_ids: list[str],
    gender: int,
    label: int,
    n_new: int,
    seed: int,
    alpha: float = 1.0,
    beta: float = 1.0,
) -> list[AugmentedFeature]:
    """Create `n_new` interpolated features from one (gender, label) cell.

    Each virtual feature is mix * parent_i + (1 - mix) * parent_j for two
    distinct parents drawn from the cell.
    """
    if len(cell_features) < 2:
        raise ValueError(f"cell ({gender},{label}) needs at least 2 members to mix")
    if len(cell_features) != len(parent_ids):
        raise ValueError("cell_features and parent_ids must align")
    feats = [np.asarray(f, dtype=np.float64).reshape(-1) for f in cell_features]
    out = []
    for i, j, lam in draw_mix_assignments(len(feats), n_new, seed, alpha, beta):
        mixed = lam * feats[i] + (1.0 - lam) * feats[j]
        out.append(
            AugmentedFeature(
                features=mixed.tolist(),
                gender=gender,
                label=label,
                parents=(parent_ids[i], parent_ids[j]),
                mix=lam,
            )
        )
    return out


def mean_pooled_alf(record: SessionRecord) -> np.ndarray:
    if record.features is None:
        raise ValueError(f"session {record.session_id} carries no features to pool")
    return record.features.to_array().mean(axis=0)


class AugmentedTrainingSet(BaseModel):
    """Real training records plus the flagged virtual features; evaluation
    code must never consume the augmented entries."""

    model_config = ConfigDict(frozen=True)

    manifest: CorpusManifest
    augmented: list[AugmentedFeature]


def augmentation_targets(manifest: CorpusManifest) -> dict[tuple[int, int], int]:
    """How many virtual samples each cell needs to match the largest cell."""
    cells = _cells(manifest.records)
    small = [c for c, v in cells.items() if len(v) < 2]
    if small:
        raise ValueError(f"cells too small to mix: {[cell_key(*c) for c in small]}")
    target = max(len(v) for v in cells.values())
    return {cell: target - len(members) for cell, members in sorted(cells.items())}


def balance_by_augmentation(
    manifest: CorpusManifest,
    seed: int,
    alpha: float = 1.0,
    beta: float = 1.0,
    alf_fn=mean_pooled_alf,
) -> AugmentedTrainingSet:
    """Raise every cell to the largest cell's count with interpolated features.

    `alf_fn` maps a session record to the session-level feature vector that
    gets interpolated (default: mean over the record's feature rows, the
    tabular pipeline's aggregation).
    """
    cells = _cells(manifest.records)
    augmented: list[AugmentedFeature] = []
    for idx, (cell, n_new) in enumerate(sorted(augmentation_targets(manifest).items())):
        if n_new == 0:
            continue
        members = sorted(cells[cell], key=lambda r: r.session_id)
        augmented.extend(
            mixfeat_augment(
                [alf_fn(r) for r in members],
                [r.session_id for r in members],
                gender=cell[0],
                label=cell[1],
                n_new=n_new,
                seed=seed + idx,
                alpha=alpha,
                beta=beta,
            )
        )
    return AugmentedTrainingSet(manifest=manifest, augmented=augmented)


def augmentation_plan(
    manifest: CorpusManifest, seed: int, alpha: float = 1.0, beta: float = 1.0
) -> list[tuple[int, int, str, str, float]]:
    """(gender, label, parent_i, parent_j, mix) rows for live interpolation.

    Draws the identical parent/coefficient assignments as
    `balance_by_augmentation`, for pipelines whose session features depend on
    live model weights and must be mixed inside the training loop.
    """
    cells = _cells(manifest.records)
    plan = []
    for idx, (cell, n_new) in enumerate(sorted(augmentation_targets(manifest).items())):
        if n_new == 0:
            continue
        members = sorted(cells[cell], key=lambda r: r.session_id)
        for i, j, lam in draw_mix_assignments(len(members), n_new, seed + idx, alpha, beta):
            plan.append((cell[0], cell[1], members[i].session_id, members[j].session_id, lam))
    return plan
