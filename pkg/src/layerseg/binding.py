"""Iterative slot binding: learnable queries compete over pixel features.

K slot vectors (text foreground / irrelevant background for K=2) attend
over the N = h*w feature positions. The attention softmax runs across
slots, so pixels are partitioned; the per-slot aggregation normalizes
over pixels, so each slot update is a convex combination of values. A
gated recurrent cell shared across slots carries the state over T steps.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from layerseg.errors import TrainingError, ValidationError


def positional_ramp(h: int, w: int, device=None, dtype=None) -> torch.Tensor:
    """4 x h x w grid of (x, y, 1-x, 1-y) linear ramps in [0, 1]."""
    y = torch.linspace(0.0, 1.0, h, device=device, dtype=dtype)
    x = torch.linspace(0.0, 1.0, w, device=device, dtype=dtype)
    gy, gx = torch.meshgrid(y, x, indexing="ij")
    return torch.stack([gx, gy, 1.0 - gx, 1.0 - gy], dim=0)


def binding_weights(
    slots: torch.Tensor, keys: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Compute the slot-competition weights.

    slots: B x K x D (already the binding queries), keys: B x N x D.
    Returns (attn, a): attn rows (over K) sum to 1, a columns (over N)
    sum to 1.
    """
    if slots.shape[-1] != keys.shape[-1]:
        raise ValidationError("slots and features disagree on channel count")
    if slots.shape[1] == 0 or keys.shape[1] == 0:
        raise ValidationError("empty slot or pixel axis")
    d = slots.shape[-1]
    logits = torch.bmm(keys, slots.transpose(1, 2)) / math.sqrt(d)  # B x N x K
    attn = F.softmax(logits, dim=2)
    a = attn / attn.sum(dim=1, keepdim=True)
    return attn, a


def aggregate(a: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Slot updates: B x K x D, each slot the A-weighted mean of values."""
    return torch.bmm(a.transpose(1, 2), values)


class SlotBinding(nn.Module):
    """T-step recurrent binding over a feature grid."""

    def __init__(self, feat_dim: int, num_slots: int = 2, steps: int = 5):
        super().__init__()
        if steps < 1:
            raise ValidationError("binding needs at least one step")
        if num_slots < 2:
            raise ValidationError("binding needs at least two slots")
        self.num_slots = num_slots
        self.steps = steps
        self.feat_dim = feat_dim
        self.init_slots = nn.Parameter(torch.randn(num_slots, feat_dim) * 0.5)
        self.to_k = nn.Linear(feat_dim, feat_dim)
        self.to_v = nn.Linear(feat_dim, feat_dim)
        self.pos_proj = nn.Linear(4, feat_dim)
        self.cell = nn.GRUCell(feat_dim, feat_dim)

    def forward(
        self,
        feat: torch.Tensor,
        init_slots: torch.Tensor | None = None,
        steps: int | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Bind B x D x h x w features; returns (slots, attn, a).

        ``init_slots`` overrides the learned initial queries (used by the
        permutation-equivariance checks); ``steps`` overrides T.
        """
        b, d, h, w = feat.shape
        t_steps = self.steps if steps is None else steps
        pos = positional_ramp(h, w, device=feat.device, dtype=feat.dtype)
        pos_feat = self.pos_proj(pos.reshape(4, h * w).T)  # N x D
        x = feat.reshape(b, d, h * w).transpose(1, 2) + pos_feat
        keys = self.to_k(x)
        values = self.to_v(x)
        if init_slots is None:
            slots = self.init_slots.to(feat.dtype).unsqueeze(0).expand(b, -1, -1)
        else:
            slots = init_slots
            if slots.dim() == 2:
                slots = slots.unsqueeze(0).expand(b, -1, -1)
        attn = a = None
        for t in range(t_steps):
            attn, a = binding_weights(slots, keys)
            updates = aggregate(a, values)
            k = slots.shape[1]
            slots = self.cell(
                updates.reshape(b * k, d), slots.reshape(b * k, d)
            ).reshape(b, k, d)
            if not torch.isfinite(slots).all():
                raise TrainingError(f"non-finite slot state at binding step {t + 1}")
        return slots, attn, a
