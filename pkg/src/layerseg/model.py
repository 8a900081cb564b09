"""Full segmentation model: encoders -> region query -> binding -> decoding."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from layerseg.binding import SlotBinding
from layerseg.decoding import SlotDecoder, compose
from layerseg.encoders import EncoderPair
from layerseg.region_query import FeatureFusion, rqn, sqn


@dataclass
class ModelConfig:
    crop_h: int = 128
    crop_w: int = 256
    eta: int = 4
    feat_dim: int = 64
    num_slots: int = 2
    binding_steps: int = 5
    enc_channels: tuple[int, ...] = (32, 64, 64)
    mask_hidden: int = 16
    layer_hidden: int = 16
    momentum: float = 0.999
    enable_rqn: bool = True
    enable_sqn: bool = True
    paper_norm_axis: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "enc_channels" in d:
            d["enc_channels"] = tuple(d["enc_channels"])
        return cls(**d)


class TextSegModel(nn.Module):
    """Layered decomposition of a text-region crop into K slots."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoders = EncoderPair(
            config.feat_dim,
            eta=config.eta,
            channels=config.enc_channels,
            momentum=config.momentum,
        )
        self.fusion = FeatureFusion(config.feat_dim, eta=config.eta)
        self.binding = SlotBinding(
            config.feat_dim, num_slots=config.num_slots, steps=config.binding_steps
        )
        self.decoder = SlotDecoder(
            config.feat_dim,
            crop_size=(config.crop_h, config.crop_w),
            eta=config.eta,
            mask_hidden=config.mask_hidden,
            layer_hidden=config.layer_hidden,
        )

    def forward(
        self, crop: torch.Tensor, region_image: torch.Tensor
    ) -> dict[str, torch.Tensor]:
        """Run the full pipeline on B x 3 x Hc x Wc tensors."""
        cfg = self.config
        q_feat = self.encoders.encode_query(crop)
        a_rqn = None
        if cfg.enable_rqn:
            k_feat = self.encoders.encode_key(region_image)
            a_rqn = rqn(q_feat, k_feat, paper_norm_axis=cfg.paper_norm_axis)
        a_sqn = sqn(q_feat) if cfg.enable_sqn else None
        fused = self.fusion(a_rqn, a_sqn, crop)
        slots, attn, a = self.binding(fused)
        alphas = self.decoder.decode_masks(slots)
        layers = self.decoder.decode_layers(slots)
        recon = compose(alphas, layers)
        return {
            "slots": slots,
            "attn": attn,
            "binding_a": a,
            "alphas": alphas,
            "layers": layers,
            "recon": recon,
        }

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def to_tensor(image: np.ndarray, device=None) -> torch.Tensor:
    """HWC [0,1] float array -> 1 x C x H x W tensor."""
    arr = np.ascontiguousarray(np.moveaxis(image, -1, 0), dtype=np.float32)
    return torch.from_numpy(arr).unsqueeze(0).to(device or "cpu")


def batch_to_tensor(images: list[np.ndarray], device=None) -> torch.Tensor:
    arr = np.stack([np.moveaxis(im, -1, 0) for im in images]).astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).to(device or "cpu")
