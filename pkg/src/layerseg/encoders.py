"""Region Encoding Module: query/key convolutional encoders.

The query branch is trainable; the key branch shares its architecture,
receives no gradient, and tracks the query weights through a momentum
(exponential moving average) update applied once per optimizer step.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from layerseg.errors import ValidationError

DEFAULT_CHANNELS = (32, 64, 64)
DEFAULT_MOMENTUM = 0.999


class ConvBackbone(nn.Module):
    """Plain VGG-style stack: 3x3 convolutions with ReLU, no normalization.

    The first ``log2(eta)`` stages use stride 2, so the output grid is the
    input downsampled by ``eta``.
    """

    def __init__(
        self,
        out_dim: int,
        eta: int = 4,
        channels: tuple[int, ...] = DEFAULT_CHANNELS,
    ):
        super().__init__()
        if eta not in (2, 4, 8):
            raise ValidationError(f"unsupported downsample ratio eta={eta}")
        self.eta = eta
        n_strided = eta.bit_length() - 1
        plan = [3, *channels, out_dim]
        layers: list[nn.Module] = []
        for i in range(len(plan) - 1):
            stride = 2 if i < n_strided else 1
            layers.append(nn.Conv2d(plan[i], plan[i + 1], 3, stride=stride, padding=1))
            layers.append(nn.ReLU(inplace=True))
        self.stages = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.eta or x.shape[-2] % self.eta:
            raise ValidationError(
                f"input size {tuple(x.shape[-2:])} not divisible by eta={self.eta}"
            )
        return self.stages(x)


class EncoderPair(nn.Module):
    """Trainable query encoder plus its frozen, momentum-tracked key twin."""

    def __init__(
        self,
        feat_dim: int,
        eta: int = 4,
        channels: tuple[int, ...] = DEFAULT_CHANNELS,
        momentum: float = DEFAULT_MOMENTUM,
    ):
        super().__init__()
        if not 0.0 <= momentum <= 1.0:
            raise ValidationError(f"momentum must lie in [0, 1], got {momentum}")
        self.momentum = momentum
        self.query = ConvBackbone(feat_dim, eta, channels)
        self.key = ConvBackbone(feat_dim, eta, channels)
        self.copy_query_to_key()
        for p in self.key.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def copy_query_to_key(self) -> None:
        for pq, pk in zip(self.query.parameters(), self.key.parameters()):
            pk.data.copy_(pq.data)

    def encode_query(self, crop: torch.Tensor) -> torch.Tensor:
        """Features of the full crop, B x D x h x w."""
        return self.query(crop)

    def encode_key(self, region_image: torch.Tensor) -> torch.Tensor:
        """Features of the masked region image; gradient is truncated."""
        with torch.no_grad():
            return self.key(region_image)

    @torch.no_grad()
    def momentum_update(self) -> None:
        """key <- m * key + (1 - m) * query, elementwise."""
        m = self.momentum
        for pq, pk in zip(self.query.parameters(), self.key.parameters()):
            if pq.shape != pk.shape:
                raise RuntimeError(
                    "query/key parameter shape mismatch (corrupted checkpoint?)"
                )
            pk.data.mul_(m).add_(pq.data, alpha=1.0 - m)
