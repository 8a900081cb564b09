"""Region Query Module: spatial cross-attention, channel self-attention, fusion.

Features are B x D x h x w tensors. Both attention blocks are residual:
with zero values they reduce to the identity on the query features.

The similarity matrices can be normalized two ways. The default makes
every output position a convex combination of values (softmax over the
reference axis). ``paper_norm_axis=True`` flips the spatial attention to
normalize over the query axis instead, for comparison runs.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from layerseg.errors import ValidationError


def _flatten(feat: torch.Tensor) -> torch.Tensor:
    """B x D x h x w -> B x N x D with N = h*w."""
    b, d, h, w = feat.shape
    return feat.reshape(b, d, h * w).transpose(1, 2)


def _unflatten(flat: torch.Tensor, h: int, w: int) -> torch.Tensor:
    b, n, d = flat.shape
    return flat.transpose(1, 2).reshape(b, d, h, w)


def _check_logits(logits: torch.Tensor) -> None:
    if not torch.isfinite(logits).all():
        raise ValidationError(
            "attention logits are not finite; feature scale is out of range"
        )


def rqn(
    query_feat: torch.Tensor,
    key_feat: torch.Tensor,
    paper_norm_axis: bool = False,
) -> torch.Tensor:
    """Spatial cross-attention from crop features to region features.

    q comes from the query branch, k = v from the frozen key branch.
    S holds softmax-normalized exp(q_i . k_j / sqrt(D)); the output is
    S @ v + q.
    """
    if query_feat.shape != key_feat.shape:
        raise ValidationError(
            f"feature shape mismatch: {tuple(query_feat.shape)} vs "
            f"{tuple(key_feat.shape)}"
        )
    b, d, h, w = query_feat.shape
    q = _flatten(query_feat)
    k = _flatten(key_feat)
    logits = torch.bmm(q, k.transpose(1, 2)) / math.sqrt(d)  # B x N x N, [i, j]
    _check_logits(logits)
    s = F.softmax(logits, dim=1 if paper_norm_axis else 2)
    out = torch.bmm(s, k) + q  # v = k
    return _unflatten(out, h, w)


def sqn(query_feat: torch.Tensor) -> torch.Tensor:
    """Channel self-attention: q = k = v from the query branch.

    S = softmax(q^T k / sqrt(D)) is D x D with each column a convex
    weighting of input channels; the output is v @ S + q. Here the
    convex-combination axis and the axis written in the similarity
    denominator coincide, so there is no alternate normalization mode.
    """
    b, d, h, w = query_feat.shape
    q = _flatten(query_feat)  # B x N x D
    logits = torch.bmm(q.transpose(1, 2), q) / math.sqrt(d)  # B x D x D, [j, out]
    _check_logits(logits)
    s = F.softmax(logits, dim=1)
    out = torch.bmm(q, s) + q
    return _unflatten(out, h, w)


class FeatureFusion(nn.Module):
    """Concatenate [A_rqn || A_sqn || downsampled crop] and project to D.

    Either attention block can be ablated, in which case its slot in the
    concatenation is filled with zeros so the projection layout (and thus
    checkpoints) stay fixed.
    """

    def __init__(self, feat_dim: int, eta: int = 4):
        super().__init__()
        self.feat_dim = feat_dim
        self.eta = eta
        self.project = nn.Conv2d(2 * feat_dim + 3, feat_dim, kernel_size=1)

    def forward(
        self,
        a_rqn: torch.Tensor | None,
        a_sqn: torch.Tensor | None,
        crop: torch.Tensor,
    ) -> torch.Tensor:
        b = crop.shape[0]
        h, w = crop.shape[2] // self.eta, crop.shape[3] // self.eta
        for name, feat in (("a_rqn", a_rqn), ("a_sqn", a_sqn)):
            if feat is not None and feat.shape != (b, self.feat_dim, h, w):
                raise ValidationError(
                    f"{name} shape {tuple(feat.shape)} does not match "
                    f"expected {(b, self.feat_dim, h, w)}"
                )
        zeros = crop.new_zeros(b, self.feat_dim, h, w)
        parts = [
            a_rqn if a_rqn is not None else zeros,
            a_sqn if a_sqn is not None else zeros,
            F.adaptive_avg_pool2d(crop, (h, w)),
        ]
        return self.project(torch.cat(parts, dim=1))
