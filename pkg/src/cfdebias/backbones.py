"""Acoustic and tabular model branches.

Two fusion-branch variants share one classification-head contract:

* spectrogram backbone: per-clip CNN (spatial) + LSTM (temporal) branches,
  fused per frame and attention-pooled to a 64-dim segment feature, then
  eigen-weighted pooling over segments to a 64-dim session feature;
* transcript backbone: per-turn NetVLAD aggregation of Mel frames to 256-dim
  segment features, then a GRU whose final hidden state is the 256-dim
  session feature.

The session feature is concatenated with the scalar gender code (65- or
257-dim fused input) and classified by an MLP head. The gender-only branch is
an MLP over the scalar code alone. A mean-pooling tabular backbone with the
same head contract supports desk-scale experiments on synthetic corpora.

Everything runs in float64 and is deterministic given (input, weights); all
activations are smooth so analytic gradients can be checked against central
finite differences.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

DTYPE = torch.float64


class StaConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    cnn_channels: list[int] = Field(default=[4, 8], min_length=1)
    lstm_hidden: int = 32
    aslf_dim: int = 64
    attention_dim: int = 32

    @model_validator(mode="after")
    def _fixed_aslf(self) -> "StaConfig":
        if self.aslf_dim != 64:
            raise ValueError("spectrogram-path segment features are 64-dim")
        return self


class NetvladConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    local_dim: int = 64
    n_clusters: int = 4
    aslf_dim: int = 256
    gru_hidden: int = 256

    @model_validator(mode="after")
    def _dims_consistent(self) -> "NetvladConfig":
        if self.n_clusters * self.local_dim != self.aslf_dim:
            raise ValueError("n_clusters * local_dim must equal aslf_dim")
        if self.gru_hidden != self.aslf_dim:
            raise ValueError("gru_hidden must equal aslf_dim")
        return self


class MlpConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int = Field(ge=2)
    hidden_dims: list[int] = Field(default=[32, 32])
    output_dim: int = 2

    @model_validator(mode="after")
    def _two_classes(self) -> "MlpConfig":
        if self.output_dim != 2:
            raise ValueError("output_dim must be 2")
        return self


def seed_init(module: nn.Module, seed: int) -> nn.Module:
    """Seeded uniform fan-in init over parameters in name order; biases zeroed.

    The parameter named `epsilon` (the empty-input vector) starts near zero in
    [-0.01, 0.01] so its first similarity-loss gradients are well scaled.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if name.split(".")[-1] == "epsilon":
                p.uniform_(-0.01, 0.01, generator=gen)
            elif p.dim() >= 2:
                bound = 1.0 / float(np.sqrt(np.prod(p.shape[1:])))
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
    module.seed = seed
    return module


def randomize_parameters(module: nn.Module, seed: int, scale: float = 0.5) -> nn.Module:
    """Fill every parameter (biases included) with seeded uniform noise; test helper."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            p.uniform_(-scale, scale, generator=gen)
    return module


class Mlp(nn.Module):
    """Tanh MLP; smooth everywhere so finite-difference gradient checks are exact."""

    def __init__(self, input_dim: int, hidden_dims: Sequence[int], output_dim: int):
        super().__init__()
        layers: list[nn.Module] = []
        prev = input_dim
        for h in hidden_dims:
            layers += [nn.Linear(prev, h, dtype=DTYPE), nn.Tanh()]
            prev = h
        layers.append(nn.Linear(prev, output_dim, dtype=DTYPE))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class GenderBranch(nn.Module):
    """Gender-only classifier: MLP over the scalar gender code, two logits out."""

    def __init__(self, hidden_dims: Sequence[int] = (8,)):
        super().__init__()
        self.mlp = Mlp(1, hidden_dims, 2)

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        if g.dim() == 0:
            g = g.reshape(1)
        if g.dim() == 1:
            g = g.unsqueeze(-1)
        return self.mlp(g.to(DTYPE))


class FusionHead(nn.Module):
    """Classification MLP over the session feature concatenated with gender."""

    def __init__(self, cfg: MlpConfig):
        super().__init__()
        self.cfg = cfg
        self.mlp = Mlp(cfg.input_dim, cfg.hidden_dims, cfg.output_dim)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"fused input dim {fused.shape[-1]} != {self.cfg.input_dim}")
        return self.mlp(fused)

    def fuse_inputs(self, alf: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        if alf.shape[-1] != self.cfg.input_dim - 1:
            raise ValueError(f"session feature dim {alf.shape[-1]} != {self.cfg.input_dim - 1}")
        if alf.dim() == 1:
            alf = alf.unsqueeze(0)
        g = g.to(DTYPE).reshape(-1, 1)
        return torch.cat([alf, g.expand(alf.shape[0], 1)], dim=-1)


class AttentionPool(nn.Module):
    """Softmax-weighted frame average; weights sum to 1, so the output stays
    in the convex hull of the input frames."""

    def __init__(self, dim: int, attention_dim: int = 32):
        super().__init__()
        self.proj = nn.Linear(dim, attention_dim, dtype=DTYPE)
        self.score = nn.Linear(attention_dim, 1, dtype=DTYPE)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a T x d matrix with T >= 1")
        scores = self.score(torch.tanh(self.proj(frames))).squeeze(-1)
        weights = torch.softmax(scores, dim=0)
        return weights @ frames

    def weights(self, frames: torch.Tensor) -> torch.Tensor:
        scores = self.score(torch.tanh(self.proj(frames))).squeeze(-1)
        return torch.softmax(scores, dim=0)


class StaBackbone(nn.Module):
    """Clip encoder: CNN over the spectrogram image pooled along frequency only
    (so frames stay aligned), an LSTM over frame columns, per-frame fusion of
    the two branches, and attention pooling to one 64-dim segment feature."""

    N_BINS = 129
    CLIP_LEN = 64

    def __init__(self, cfg: Optional[StaConfig] = None):
        super().__init__()
        self.cfg = cfg or StaConfig()
        c = self.cfg.cnn_channels
        convs: list[nn.Module] = []
        prev = 1
        freq = self.N_BINS
        for ch in c:
            convs += [nn.Conv2d(prev, ch, kernel_size=3, padding=1, dtype=DTYPE),
                      nn.Tanh(),
                      nn.AvgPool2d(kernel_size=(2, 1))]
            prev = ch
            freq //= 2
        self.cnn = nn.Sequential(*convs)
        self.spatial_proj = nn.Linear(c[-1] * freq, self.cfg.aslf_dim, dtype=DTYPE)
        self.lstm = nn.LSTM(self.N_BINS, self.cfg.lstm_hidden, batch_first=True, dtype=DTYPE)
        self.temporal_proj = nn.Linear(self.cfg.lstm_hidden, self.cfg.aslf_dim, dtype=DTYPE)
        self.frame_fusion = nn.Linear(2 * self.cfg.aslf_dim, self.cfg.aslf_dim, dtype=DTYPE)
        self.pool = AttentionPool(self.cfg.aslf_dim, self.cfg.attention_dim)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.shape != (self.N_BINS, self.CLIP_LEN):
            raise ValueError(f"clip must be {self.N_BINS} x {self.CLIP_LEN}, got {tuple(clip.shape)}")
        clip = clip.to(DTYPE)
        spatial = self.cnn(clip.unsqueeze(0).unsqueeze(0))            # 1 x C x F' x L
        spatial = spatial.squeeze(0).permute(2, 0, 1).flatten(1)      # L x (C*F')
        spatial = torch.tanh(self.spatial_proj(spatial))              # L x 64
        temporal, _ = self.lstm(clip.T.unsqueeze(0))                  # 1 x L x H
        temporal = torch.tanh(self.temporal_proj(temporal.squeeze(0)))  # L x 64
        frames = torch.tanh(self.frame_fusion(torch.cat([spatial, temporal], dim=-1)))
        return self.pool(frames)


def eep_aggregate(aslf_seq: torch.Tensor, max_iter: int = 200, tol: float = 1e-14) -> torch.Tensor:
    """Eigen-weighted pooling of a T x d segment sequence to one d vector.

    Power iteration from a uniform start finds the leading eigenvector of the
    T x T Gram matrix (the uniform start also resolves degenerate spectra
    symmetrically). The sign is fixed so the weights sum nonnegatively, then
    they are normalized to sum to 1; if the sum is below 1e-8 in magnitude the
    weights fall back to uniform. The result is an affine combination of the
    input rows.
    """
    if not isinstance(aslf_seq, torch.Tensor):
        aslf_seq = torch.as_tensor(np.asarray(aslf_seq), dtype=DTYPE)
    aslf_seq = aslf_seq.to(DTYPE)
    if aslf_seq.dim() != 2 or aslf_seq.shape[0] < 1:
        raise ValueError("segment sequence must be T x d with T >= 1")
    if not torch.all(torch.isfinite(aslf_seq)):
        raise ValueError("segment sequence contains non-finite values")
    t = aslf_seq.shape[0]
    if t == 1:
        return aslf_seq[0]
    gram = aslf_seq @ aslf_seq.T
    w = torch.full((t,), 1.0 / np.sqrt(t), dtype=DTYPE)
    for _ in range(max_iter):
        nxt = gram @ w
        norm = torch.linalg.norm(nxt)
        if norm < 1e-30:  # zero Gram: all-zero rows
            w = torch.full((t,), 1.0 / np.sqrt(t), dtype=DTYPE)
            break
        nxt = nxt / norm
        if torch.linalg.norm(nxt - w) < tol:
            w = nxt
            break
        w = nxt
    total = w.sum()
    w = torch.where(total < 0, -w, w)
    total = torch.abs(total)
    if total < 1e-8:
        w = torch.full((t,), 1.0 / t, dtype=DTYPE)
    else:
        w = w / total
    return aslf_seq.T @ w


class NetvladAggregator(nn.Module):
    """Soft-assignment VLAD: local features are softly assigned to learnable
    cluster centers and the assignment-weighted residuals are summed per
    cluster, L2-normalized within each cluster, flattened, and globally
    L2-normalized to a fixed-length vector."""

    def __init__(self, cfg: Optional[NetvladConfig] = None):
        super().__init__()
        self.cfg = cfg or NetvladConfig()
        self.assign = nn.Linear(self.cfg.local_dim, self.cfg.n_clusters, dtype=DTYPE)
        self.centers = nn.Parameter(torch.zeros(self.cfg.n_clusters, self.cfg.local_dim, dtype=DTYPE))

    def forward(self, locals_: torch.Tensor) -> torch.Tensor:
        vlad = self.residuals(locals_)
        vlad = vlad / torch.clamp(torch.linalg.norm(vlad, dim=1, keepdim=True), min=1e-12)
        flat = vlad.flatten()
        return flat / torch.clamp(torch.linalg.norm(flat), min=1e-12)

    def residuals(self, locals_: torch.Tensor) -> torch.Tensor:
        """K x d assignment-weighted residual sums before any normalization."""
        if locals_.dim() != 2 or locals_.shape[0] < 1:
            raise ValueError("locals must be N x d with N >= 1")
        locals_ = locals_.to(DTYPE)
        a = torch.softmax(self.assign(locals_), dim=1)               # N x K
        diffs = locals_.unsqueeze(1) - self.centers.unsqueeze(0)     # N x K x d
        return (a.unsqueeze(-1) * diffs).sum(dim=0)


class GruAggregator(nn.Module):
    """GRU over the segment-feature sequence; the final hidden state is the
    session feature."""

    def __init__(self, dim: int = 256):
        super().__init__()
        self.gru = nn.GRU(dim, dim, batch_first=True, dtype=DTYPE)

    def forward(self, aslf_seq: torch.Tensor) -> torch.Tensor:
        if aslf_seq.dim() != 2 or aslf_seq.shape[0] < 1:
            raise ValueError("segment sequence must be S x d with S >= 1")
        _, h = self.gru(aslf_seq.to(DTYPE).unsqueeze(0))
        return h.squeeze(0).squeeze(0)


class FusionModel(nn.Module):
    """The gender-acoustic branch: a backbone producing one session feature
    per sample, concatenated with the gender scalar and classified by the MLP
    head. Precomputed segment-feature caches can stand in for raw audio."""

    def __init__(
        self,
        backbone: str,
        head_cfg: MlpConfig,
        sta_cfg: Optional[StaConfig] = None,
        netvlad_cfg: Optional[NetvladConfig] = None,
    ):
        super().__init__()
        if backbone not in ("tabular", "sta", "netvlad"):
            raise ValueError(f"unknown backbone {backbone!r}")
        self.backbone = backbone
        self.head = FusionHead(head_cfg)
        if backbone == "sta":
            self.sta = StaBackbone(sta_cfg)
        elif backbone == "netvlad":
            cfg = netvlad_cfg or NetvladConfig()
            self.mel_proj = nn.Linear(64, cfg.local_dim, dtype=DTYPE)
            self.vlad = NetvladAggregator(cfg)
            self.gru = GruAggregator(cfg.gru_hidden)

    @property
    def alf_dim(self) -> int:
        return self.head.cfg.input_dim - 1

    def session_feature(self, inputs) -> torch.Tensor:
        """Aggregate one session's inputs to a single feature vector.

        `inputs` is a T x d tensor of feature rows (tabular: raw rows;
        sta/netvlad: cached segment features) or, for the audio backbones, a
        list of clip matrices to be encoded first.
        """
        if self.backbone == "tabular":
            rows = _as_matrix(inputs)
            return rows.mean(dim=0)
        if self.backbone == "sta":
            if isinstance(inputs, (list, tuple)):
                aslf = torch.stack([self.sta(_as_matrix(c)) for c in inputs])
            else:
                aslf = _as_matrix(inputs)
            return eep_aggregate(aslf)
        if isinstance(inputs, (list, tuple)):
            locals_per_clip = [torch.tanh(self.mel_proj(_as_matrix(m).T)) for m in inputs]
            aslf = torch.stack([self.vlad(loc) for loc in locals_per_clip])
        else:
            aslf = _as_matrix(inputs)
        return self.gru(aslf)

    def forward(self, g: torch.Tensor, alf: torch.Tensor) -> torch.Tensor:
        return self.head(self.head.fuse_inputs(alf, g))


def _as_matrix(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def attention_pool(frames, pool: AttentionPool) -> torch.Tensor:
    """Functional wrapper: softmax-weighted average of T x d frames."""
    return pool(_as_matrix(frames))


def netvlad_aggregate(locals_, module: NetvladAggregator) -> torch.Tensor:
    """Functional wrapper: NetVLAD aggregation of N x d local features."""
    return module(_as_matrix(locals_))


def gru_aggregate(aslf_seq, module: GruAggregator) -> torch.Tensor:
    """Functional wrapper: GRU aggregation of an S x d segment sequence."""
    return module(_as_matrix(aslf_seq))


def sta_forward(clip, module: StaBackbone) -> torch.Tensor:
    """Functional wrapper: encode one 129 x 64 clip to a 64-dim segment feature."""
    return module(_as_matrix(clip))


def gender_branch(g, module: GenderBranch) -> torch.Tensor:
    """Functional wrapper: gender-only logits for scalar or batched gender codes."""
    return module(_as_matrix_or_scalar(g))


def fusion_head(alf, g, module: FusionModel) -> torch.Tensor:
    """Functional wrapper: classify a session feature concatenated with gender."""
    return module(_as_matrix_or_scalar(g), _as_matrix(alf) if np.ndim(alf) > 1 else _as_vector(alf))


def tabular_backbone(features, g, module: FusionModel) -> torch.Tensor:
    """Functional wrapper: mean-pool feature rows, then the fusion head."""
    alf = module.session_feature(_as_matrix(features))
    return module(_as_matrix_or_scalar(g), alf)


def _as_vector(x) -> torch.Tensor:
    t = _as_matrix_or_scalar(x)
    return t.reshape(-1)


def _as_matrix_or_scalar(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)
