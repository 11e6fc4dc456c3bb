"""Two-branch causal model: fusion, the learnable empty-input vector, losses
with their gradient routing, and debiased inference.

The factual score fuses the gender-only logits with the gender-acoustic
logits through an additive log-sigmoid. The counterfactual score replaces the
acoustic branch with the classification head applied to a single learnable
vector (no audio exists in the counterfactual, so the acoustic backbone is
bypassed entirely). Debiased inference subtracts the counterfactual fused
score from the factual fused score and takes the argmax of the difference.

Training routes gradients strictly: the classification loss updates the two
branch networks and never the empty-input vector; the similarity loss updates
the empty-input vector and nothing else. The routing is enforced here by
detaching the gender logits and the head weights on the counterfactual path
and by treating the factual distribution as a constant target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from .backbones import DTYPE, FusionHead, FusionModel, GenderBranch, _as_matrix_or_scalar


def _as_logits(x) -> torch.Tensor:
    t = _as_matrix_or_scalar(x)
    if t.dim() == 1:
        t = t.unsqueeze(0)
    if t.shape[-1] != 2:
        raise ValueError(f"logit vectors must have length 2, got {t.shape[-1]}")
    return t


def fuse(d_g, d_f) -> torch.Tensor:
    """Additive nonlinear fusion: componentwise log sigmoid of the logit sum.

    Symmetric in its arguments and strictly negative componentwise.
    """
    return F.logsigmoid(_as_logits(d_g) + _as_logits(d_f))


def tie(fused_factual, fused_counterfactual) -> torch.Tensor:
    """Debiased score: factual fused logits minus counterfactual fused logits."""
    return _as_logits(fused_factual) - _as_logits(fused_counterfactual)


def counterfactual_branch(epsilon: torch.Tensor, head: FusionHead) -> torch.Tensor:
    """Head output for the empty-input vector, with head weights held constant.

    Gradients reach only `epsilon`; the head parameters are detached so the
    similarity loss cannot update them.
    """
    frozen = {name: p.detach() for name, p in head.named_parameters()}
    eps = epsilon if epsilon.dim() == 2 else epsilon.unsqueeze(0)
    return functional_call(head, frozen, (eps.to(DTYPE),))


@dataclass
class BranchOutputs:
    """Per-batch branch logits plus both fused scores."""

    d_g: torch.Tensor                  # B x 2, gender-only logits
    d_f_factual: torch.Tensor          # B x 2, gender-acoustic logits
    d_f_counterfactual: torch.Tensor   # B x 2, head(empty-input vector), broadcast
    fused_factual: torch.Tensor        # B x 2
    fused_counterfactual: torch.Tensor  # B x 2

    def tie(self) -> torch.Tensor:
        return tie(self.fused_factual, self.fused_counterfactual)


class CounterfactualModel(nn.Module):
    """Gender branch + fusion branch + one global empty-input vector.

    `epsilon_mode` selects where the empty-input vector lives: "head" (the
    default) places it in the fused-feature space and passes it through the
    classification head; "logit" makes it a learnable logit pair directly.
    """

    def __init__(
        self,
        m_f: FusionModel,
        gender_hidden_dims: tuple[int, ...] = (8,),
        epsilon_mode: str = "head",
    ):
        super().__init__()
        if epsilon_mode not in ("head", "logit"):
            raise ValueError(f"unknown epsilon_mode {epsilon_mode!r}")
        self.m_g = GenderBranch(gender_hidden_dims)
        self.m_f = m_f
        self.epsilon_mode = epsilon_mode
        dim = m_f.head.cfg.input_dim if epsilon_mode == "head" else 2
        self.epsilon = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    def counterfactual_logits(self) -> torch.Tensor:
        if self.epsilon_mode == "logit":
            return self.epsilon.unsqueeze(0)
        return counterfactual_branch(self.epsilon, self.m_f.head)

    def branches(self, g: torch.Tensor, alf: torch.Tensor) -> BranchOutputs:
        """All branch outputs for a batch, with gradient routing in place.

        The counterfactual fused score detaches the gender logits, so the
        similarity loss built on it can only reach the empty-input vector.
        """
        d_g = self.m_g(g)
        d_f = self.m_f(g, alf)
        d_cf = self.counterfactual_logits().expand_as(d_f)
        return BranchOutputs(
            d_g=d_g,
            d_f_factual=d_f,
            d_f_counterfactual=d_cf,
            fused_factual=fuse(d_g, d_f),
            fused_counterfactual=fuse(d_g.detach(), d_cf),
        )

    def branch_parameters(self) -> list[nn.Parameter]:
        """All weights of the two branch networks (everything except epsilon)."""
        return [p for name, p in self.named_parameters() if name != "epsilon"]


def total_effect_logits(g, alf, model: CounterfactualModel) -> BranchOutputs:
    """Compose the branch/fusion operations exactly as `branches` does."""
    return model.branches(_as_matrix_or_scalar(g), alf)


def loss_cls(d_g, fused_factual, labels, class_weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Cross-entropy on the gender branch plus cross-entropy on the fused
    factual score; updates both branch networks and never the empty-input
    vector (which does not appear in either term)."""
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long).reshape(-1)
    return F.cross_entropy(_as_logits(d_g), y, weight=class_weights) + F.cross_entropy(
        _as_logits(fused_factual), y, weight=class_weights
    )


def loss_kl(fused_factual, fused_counterfactual) -> torch.Tensor:
    """Average cross-entropy from the factual distribution to the
    counterfactual one, scaled by 1/|classes|.

    The factual distribution is a constant target (detached); combined with
    the detached construction of the counterfactual fused score, gradients
    reach only the empty-input vector. Minimizing this is equivalent to
    minimizing the full KL divergence because the target's entropy is
    constant.
    """
    p = torch.softmax(_as_logits(fused_factual), dim=-1).detach()
    log_q = torch.log_softmax(_as_logits(fused_counterfactual), dim=-1)
    return (-(p * log_q).sum(dim=-1) / p.shape[-1]).mean()


def loss_total(l_cls: torch.Tensor, l_kl: torch.Tensor) -> torch.Tensor:
    """Total training loss: unit-weight sum of the two terms."""
    return l_cls + l_kl


def predict_tie(tie_scores) -> int:
    """Argmax of the length-2 debiased score; exact ties go to Non-depressed."""
    t = np.asarray(tie_scores if not isinstance(tie_scores, torch.Tensor)
                   else tie_scores.detach().cpu().numpy()).reshape(-1)
    if t.shape[0] != 2:
        raise ValueError("tie scores must have length 2")
    return 1 if t[1] > t[0] else 0


def predict_factual(d_f) -> int:
    """Argmax of the fusion-branch logits alone (the no-debiasing decision)."""
    t = np.asarray(d_f if not isinstance(d_f, torch.Tensor)
                   else d_f.detach().cpu().numpy()).reshape(-1)
    if t.shape[0] != 2:
        raise ValueError("logit vectors must have length 2")
    return 1 if t[1] > t[0] else 0
