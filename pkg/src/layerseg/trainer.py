"""Training orchestration: schedules, optimization, checkpoints, logging.

Each step builds a batch in which every original crop sits next to its
background-replaced twin, runs one forward over the whole batch, applies
the weighted loss, one Adam step, and one momentum update of the key
encoder. All randomness is a function of (config seed, step), so runs
with identical seeds are bitwise-reproducible and checkpoints resume the
exact trajectory.
"""

from __future__ import annotations

import json
import logging
import random
from pathlib import Path

import numpy as np
import torch

from layerseg import losses
from layerseg.config import FullConfig, TrainConfig
from layerseg.data import (
    RegionCrop,
    augment_geometric,
    make_region_image,
    make_replacement_pair,
    per_sample_seed,
)
from layerseg.errors import TrainingError, ValidationError
from layerseg.model import TextSegModel, batch_to_tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to base_lr, then halve every decay period."""
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    n_decays = (step - cfg.warmup_steps) // cfg.decay_period
    return cfg.base_lr * cfg.decay_factor**n_decays


def lambda_schedule(step: int, cfg: TrainConfig) -> tuple[float, float, float]:
    """Loss weights at a step: lambda1 fixed, lambda2/3 scaled periodically."""
    scale = cfg.lambda_scale_factor ** (step // cfg.lambda_scale_period)
    return (cfg.lambda1, cfg.lambda2_init * scale, cfg.lambda3_init * scale)


class Trainer:
    def __init__(
        self,
        config: FullConfig,
        crops: list[RegionCrop],
        out_dir: str | Path,
        log_name: str = "train_log.jsonl",
    ):
        if not crops:
            raise ValidationError("training set contains no crops")
        self.config = config
        self.crops = crops
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.out_dir / log_name
        torch.manual_seed(config.train.seed)
        self.model = TextSegModel(config.model)
        self.optimizer = torch.optim.Adam(
            self.model.trainable_parameters(), lr=config.train.base_lr
        )
        self.sampler = np.random.default_rng(config.train.seed)
        self.step = 0

    # -- batch construction -------------------------------------------------

    def _augmented_region_image(self, crop: RegionCrop, seed: int) -> np.ndarray:
        return augment_geometric(make_region_image(crop), seed)

    def _build_batch(self) -> tuple[torch.Tensor, torch.Tensor, int]:
        """Assemble (crops, region_images, n_pairs) tensors for one step.

        With the consistency path enabled, batch_size positions hold
        original/replaced twins in consecutive positions (batch_size // 2
        pairs). With it ablated, all positions are independent originals.
        """
        tcfg = self.config.train
        seed = tcfg.seed
        paired = tcfg.enable_rep
        n_pairs = tcfg.batch_size // 2 if paired else 0
        n_items = n_pairs if paired else tcfg.batch_size
        idx = self.sampler.integers(0, len(self.crops), size=n_items)
        images: list[np.ndarray] = []
        region_images: list[np.ndarray] = []
        for pos, i in enumerate(idx):
            fg = self.crops[int(i)]
            key_seed = per_sample_seed(seed, f"{self.step}:{pos}:key")
            images.append(fg.crop)
            region_images.append(self._augmented_region_image(fg, key_seed))
            if paired:
                bg_choices = [int(j) for j in idx if int(j) != int(i)]
                if bg_choices:
                    bg_pick = int(self.sampler.integers(0, len(bg_choices)))
                    bg = self.crops[bg_choices[bg_pick]]
                else:
                    bg = fg
                pair_seed = per_sample_seed(seed, f"{self.step}:{pos}:color")
                pair = make_replacement_pair(fg, bg, pair_seed)
                twin_seed = per_sample_seed(seed, f"{self.step}:{pos}:key2")
                images.append(pair.replaced.crop)
                region_images.append(
                    self._augmented_region_image(pair.replaced, twin_seed)
                )
        return (
            batch_to_tensor(images),
            batch_to_tensor(region_images),
            n_pairs,
        )

    # -- optimization -------------------------------------------------------

    def train_step(self) -> losses.LossBundle:
        tcfg = self.config.train
        lr = lr_schedule(self.step, tcfg)
        lambdas = lambda_schedule(self.step, tcfg)
        if not tcfg.enable_rep:
            lambdas = (lambdas[0], lambdas[1], 0.0)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        crops_t, regions_t, n_pairs = self._build_batch()
        self.model.train()
        out = self.model(crops_t, regions_t)
        recon = losses.recon_loss(crops_t, out["recon"])
        entr = losses.entropy_loss(out["alphas"])
        if n_pairs > 0:
            rep = losses.consistency_loss(out["alphas"][0::2], out["alphas"][1::2])
        else:
            rep = recon.new_zeros(())
        bundle = losses.total_loss(recon, entr, rep, lambdas)

        if not torch.isfinite(bundle.total):
            raise TrainingError(
                f"non-finite loss at step {self.step}: "
                f"recon={float(recon.detach())}, entr={float(entr.detach())}, "
                f"rep={float(rep.detach())}, "
                f"batch_hash={hash(crops_t.numpy().tobytes()) & 0xFFFFFFFF:#x}"
            )

        self.optimizer.zero_grad(set_to_none=True)
        bundle.total.backward()
        for p in self.model.encoders.key.parameters():
            assert p.grad is None, "gradient leaked into the frozen key encoder"
        self.optimizer.step()
        self.model.encoders.momentum_update()
        self._log_step(lr, lambdas, bundle)
        self.step += 1
        return bundle

    def _log_step(self, lr, lambdas, bundle: losses.LossBundle) -> None:
        record = {
            "step": self.step,
            "lr": lr,
            "lambda2": lambdas[1],
            "lambda3": lambdas[2],
            "recon": float(bundle.recon.detach()),
            "entr": float(bundle.entr.detach()),
            "rep": float(bundle.rep.detach()),
            "total": float(bundle.total.detach()),
        }
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def train(self, make_plots: bool = True) -> Path:
        """Run to total_steps, checkpointing periodically; returns final path."""
        tcfg = self.config.train
        final = self.out_dir / "checkpoint_final.pt"
        while self.step < tcfg.total_steps:
            self.train_step()
            if self.step % tcfg.checkpoint_interval == 0:
                self.save_checkpoint(self.out_dir / f"checkpoint_{self.step:07d}.pt")
        self.save_checkpoint(final)
        if make_plots:
            from layerseg.plots import plot_training_log

            plot_training_log(self.log_path, self.out_dir / "loss_curves.png")
        return final

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> Path:
        path = Path(path)
        torch.save(
            {
                "format_version": CHECKPOINT_FORMAT_VERSION,
                "model": self.model.state_dict(),
                "optimizer": self.optimizer.state_dict(),
                "step": self.step,
                "config": self.config.to_dict(),
                "torch_rng": torch.get_rng_state(),
                "sampler_state": self.sampler.bit_generator.state,
            },
            path,
        )
        return path

    def load_checkpoint(self, path: str | Path) -> None:
        payload = load_checkpoint_payload(path)
        saved_model_cfg = payload["config"]["model"]
        current_model_cfg = self.config.to_dict()["model"]
        if saved_model_cfg != current_model_cfg:
            diff = {
                k: (saved_model_cfg.get(k), current_model_cfg.get(k))
                for k in set(saved_model_cfg) | set(current_model_cfg)
                if saved_model_cfg.get(k) != current_model_cfg.get(k)
            }
            raise ValidationError(
                f"checkpoint architecture differs from config: {diff}"
            )
        self.model.load_state_dict(payload["model"])
        self.optimizer.load_state_dict(payload["optimizer"])
        self.step = payload["step"]
        torch.set_rng_state(payload["torch_rng"])
        self.sampler.bit_generator.state = payload["sampler_state"]


def load_checkpoint_payload(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format_version: {version!r}"
        )
    return payload


def load_model_from_checkpoint(path: str | Path) -> tuple[TextSegModel, FullConfig]:
    payload = load_checkpoint_payload(path)
    config = FullConfig.from_dict(payload["config"])
    model = TextSegModel(config.model)
    model.load_state_dict(payload["model"])
    model.eval()
    return model, config
