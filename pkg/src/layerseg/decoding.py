"""Slot decoders: alpha masks via upsampling, layer images via transposed
convolutions, and the alpha composition of the reconstruction.

The two decoders are deliberately disjoint parameter sets; each one is
shared across slots (slots are folded into the batch axis). Slot vectors
are spatially broadcast to the feature-resolution grid and concatenated
with a positional ramp before decoding.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from layerseg.binding import positional_ramp
from layerseg.errors import ValidationError


def _broadcast(slots: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """B x K x D -> (B*K) x (D+4) x h x w with the positional ramp appended."""
    b, k, d = slots.shape
    grid = slots.reshape(b * k, d, 1, 1).expand(b * k, d, h, w)
    pos = positional_ramp(h, w, device=slots.device, dtype=slots.dtype)
    pos = pos.unsqueeze(0).expand(b * k, 4, h, w)
    return torch.cat([grid, pos], dim=1)


class MaskDecoder(nn.Module):
    """Slot -> alpha logits, via convolutions and nearest-neighbor x2 stages."""

    def __init__(self, feat_dim: int, eta: int = 4, hidden: int = 16):
        super().__init__()
        n_up = eta.bit_length() - 1
        convs = [nn.Conv2d(feat_dim + 4, hidden, 3, padding=1)]
        for _ in range(n_up - 1):
            convs.append(nn.Conv2d(hidden, hidden, 3, padding=1))
        self.convs = nn.ModuleList(convs)
        self.head = nn.Conv2d(hidden, 1, 3, padding=1)
        # start from exactly uniform alphas so no slot wins by initialization
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.relu(conv(x))
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.head(x)


class LayerDecoder(nn.Module):
    """Slot -> layer image in [0, 1], via stride-2 transposed convolutions."""

    def __init__(self, feat_dim: int, eta: int = 4, hidden: int = 16):
        super().__init__()
        n_up = eta.bit_length() - 1
        deconvs = [nn.ConvTranspose2d(feat_dim + 4, hidden, 2, stride=2)]
        for _ in range(n_up - 1):
            deconvs.append(nn.ConvTranspose2d(hidden, hidden, 2, stride=2))
        self.deconvs = nn.ModuleList(deconvs)
        self.head = nn.Conv2d(hidden, 3, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for deconv in self.deconvs:
            x = F.relu(deconv(x))
        return torch.sigmoid(self.head(x))


class SlotDecoder(nn.Module):
    """Decode a slot set into alphas, layers, and the composed image."""

    def __init__(
        self,
        feat_dim: int,
        crop_size: tuple[int, int],
        eta: int = 4,
        mask_hidden: int = 16,
        layer_hidden: int = 16,
    ):
        super().__init__()
        self.crop_size = crop_size
        self.eta = eta
        self.mask_decoder = MaskDecoder(feat_dim, eta, mask_hidden)
        self.layer_decoder = LayerDecoder(feat_dim, eta, layer_hidden)

    def _grid_size(self) -> tuple[int, int]:
        return self.crop_size[0] // self.eta, self.crop_size[1] // self.eta

    def decode_masks(self, slots: torch.Tensor) -> torch.Tensor:
        """B x K x D -> alphas B x K x Hc x Wc on the per-pixel simplex."""
        b, k, _ = slots.shape
        h, w = self._grid_size()
        logits = self.mask_decoder(_broadcast(slots, h, w))
        logits = logits.reshape(b, k, *logits.shape[-2:])
        return F.softmax(logits, dim=1)

    def decode_layers(self, slots: torch.Tensor) -> torch.Tensor:
        """B x K x D -> layer images B x K x 3 x Hc x Wc in [0, 1]."""
        b, k, _ = slots.shape
        h, w = self._grid_size()
        layers = self.layer_decoder(_broadcast(slots, h, w))
        return layers.reshape(b, k, 3, *layers.shape[-2:])

    def forward(
        self, slots: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        alphas = self.decode_masks(slots)
        layers = self.decode_layers(slots)
        return alphas, layers, compose(alphas, layers)


def compose(alphas: torch.Tensor, layers: torch.Tensor) -> torch.Tensor:
    """Alpha-composite the layer stack: sum_k alpha_k * layer_k.

    alphas: B x K x H x W on the per-pixel simplex; layers: B x K x 3 x H x W.
    """
    if alphas.shape[:2] != layers.shape[:2] or alphas.shape[-2:] != layers.shape[-2:]:
        raise ValidationError(
            f"alpha/layer shape mismatch: {tuple(alphas.shape)} vs "
            f"{tuple(layers.shape)}"
        )
    sums = alphas.sum(dim=1)
    if (sums - 1.0).abs().max() > 1e-3:
        raise RuntimeError(
            "alpha channels do not sum to 1 per pixel (decoder bug upstream)"
        )
    return (alphas.unsqueeze(2) * layers).sum(dim=1)
