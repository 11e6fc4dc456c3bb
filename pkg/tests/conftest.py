"""Shared fixtures and numeric-oracle helpers for the test suite."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pytest
import torch

from cfdebias.corpus import (
    TABLE1_TRAIN_COUNTS,
    TABLE2_TEST_COUNTS,
    counts_to_proportions,
    generate_synthetic,
    save_manifests,
    SynthConfig,
)


def make_synth_config(n_train=142, n_test=47, seed=0, **overrides) -> SynthConfig:
    defaults = dict(
        n_train=n_train,
        n_test=n_test,
        train_proportions=counts_to_proportions(TABLE1_TRAIN_COUNTS),
        test_proportions=counts_to_proportions(TABLE2_TEST_COUNTS),
        feature_dim=8,
        seq_len_range=(3, 6),
        signal_strength=0.8,
        gender_leakage=0.8,
        noise_sigma=1.0,
        seed=seed,
    )
    defaults.update(overrides)
    return SynthConfig(**defaults)


@pytest.fixture(scope="session")
def table1_manifest():
    """Synthetic manifest whose cell counts equal the reference combined training set."""
    train, _ = generate_synthetic(make_synth_config())
    return train


@pytest.fixture(scope="session")
def small_corpus_paths(tmp_path_factory):
    """Small persisted train/test manifest pair for harness-level tests."""
    root = tmp_path_factory.mktemp("corpus")
    train, test = generate_synthetic(make_synth_config(n_train=96, n_test=48, seed=3))
    return save_manifests({"train_combined": train, "test": test}, root)


def central_fd_param_gradients(module: torch.nn.Module, make_loss, rel_tol=1e-3,
                               h=1e-6, atol=1e-8) -> None:
    """Compare autograd parameter gradients against central finite differences.

    `make_loss` runs a fresh forward pass and returns a scalar; it is called
    twice per parameter entry with the entry displaced by +/- h (scaled by the
    entry's magnitude), so it must be deterministic.
    """
    loss = make_loss()
    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    for p, analytic in zip(params, grads):
        analytic = torch.zeros_like(p) if analytic is None else analytic
        flat = p.detach().reshape(-1)
        fd = torch.zeros(flat.numel(), dtype=torch.float64)
        for i in range(flat.numel()):
            orig = float(flat[i])
            step = h * max(1.0, abs(orig))
            with torch.no_grad():
                flat[i] = orig + step
            up = float(make_loss())
            with torch.no_grad():
                flat[i] = orig - step
            down = float(make_loss())
            with torch.no_grad():
                flat[i] = orig
            fd[i] = (up - down) / (2.0 * step)
        fd = fd.reshape(p.shape)
        err = (analytic - fd).abs()
        scale = torch.clamp(torch.maximum(analytic.abs(), fd.abs()), min=1e-12)
        ok = (err <= atol) | (err / scale <= rel_tol)
        assert bool(ok.all()), (
            f"gradient mismatch: max abs err {float(err.max()):.3e}, "
            f"max rel err {float((err / scale).max()):.3e}"
        )


def write_wav(path: Path, seconds: float, rate: int = 16000, freq: float = 220.0,
              seed: int = 0) -> Path:
    import scipy.io.wavfile

    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    wave = 0.4 * np.sin(2 * np.pi * freq * t) + 0.05 * rng.standard_normal(t.size)
    scipy.io.wavfile.write(path, rate, (wave * 32767).astype(np.int16))
    return path


def write_transcript(path: Path, turns: list[tuple[float, float, str]]) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["start_time", "stop_time", "speaker", "value"])
        for start, stop, speaker in turns:
            writer.writerow([start, stop, speaker, "..."])
    return path


def make_daicwoz_tree(root: Path, sessions: list[dict]) -> Path:
    """Small corpus tree in the interview-corpus layout.

    `sessions`: dicts with id, split ('train'|'dev'|'test'), gender (file
    coding), score. Audio and transcripts are tiny generated files.
    """
    root.mkdir(parents=True, exist_ok=True)
    by_split: dict[str, list[dict]] = {"train": [], "dev": [], "test": []}
    for s in sessions:
        by_split[s["split"]].append(s)
        sdir = root / f"{s['id']}_P"
        sdir.mkdir(exist_ok=True)
        write_wav(sdir / f"{s['id']}_AUDIO.wav", seconds=0.5, rate=8000, seed=int(s["id"]))
        write_transcript(sdir / f"{s['id']}_TRANSCRIPT.csv",
                         [(0.05, 0.20, "Ellie"), (0.21, 0.45, "Participant")])
    headers = {
        "train": ("train_split_Depression_AVEC2017.csv",
                  ["Participant_ID", "PHQ8_Binary", "PHQ8_Score", "Gender"]),
        "dev": ("dev_split_Depression_AVEC2017.csv",
                ["Participant_ID", "PHQ8_Binary", "PHQ8_Score", "Gender"]),
        "test": ("full_test_split.csv",
                 ["Participant_ID", "PHQ_Binary", "PHQ_Score", "Gender"]),
    }
    for split, (fname, header) in headers.items():
        with (root / fname).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for s in by_split[split]:
                writer.writerow([s["id"], int(s["score"] >= 10), s["score"], s["gender"]])
    return root
