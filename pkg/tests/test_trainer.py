import numpy as np
import pytest
import torch

from layerseg.config import TrainConfig, apply_overrides, desk_preset, paper_preset
from layerseg.data import RegionCrop
from layerseg.errors import ValidationError
from layerseg.trainer import (
    Trainer,
    lambda_schedule,
    load_model_from_checkpoint,
    lr_schedule,
)
from tests.helpers import tiny_full_config


def make_crops(n=6, size=(16, 32), seed=0):
    rng = np.random.default_rng(seed)
    crops = []
    for i in range(n):
        img = rng.uniform(size=(*size, 3)).astype(np.float32)
        mask = np.zeros(size, dtype=np.float32)
        r, c = rng.integers(2, size[0] - 6), rng.integers(2, size[1] - 10)
        mask[r : r + 4, c : c + 8] = 1.0
        crops.append(RegionCrop(crop=img, mask=mask, source_id=f"c{i}"))
    return crops


class TestSchedules:
    def test_lr_reference_points(self):
        cfg = paper_preset().train
        assert lr_schedule(0, cfg) == 0.0
        assert lr_schedule(1000, cfg) == pytest.approx(2.5e-4)
        assert lr_schedule(2000, cfg) == pytest.approx(5e-4)
        assert lr_schedule(50_000, cfg) == pytest.approx(5e-4)
        assert lr_schedule(102_000, cfg) == pytest.approx(2.5e-4)
        assert lr_schedule(202_000, cfg) == pytest.approx(1.25e-4)

    def test_lr_monotone_through_warmup(self):
        cfg = paper_preset().train
        values = [lr_schedule(s, cfg) for s in range(0, 2001, 100)]
        assert values == sorted(values)

    def test_lambda_reference_points(self):
        cfg = paper_preset().train
        assert lambda_schedule(0, cfg) == (100.0, 0.01, 0.01)
        assert lambda_schedule(99_999, cfg) == (100.0, 0.01, 0.01)
        l1, l2, l3 = lambda_schedule(100_000, cfg)
        assert (l1, l2, l3) == (100.0, pytest.approx(0.05), pytest.approx(0.05))
        _, l2, _ = lambda_schedule(200_000, cfg)
        assert l2 == pytest.approx(0.25)

    def test_lambda1_never_changes(self):
        cfg = paper_preset().train
        for step in (0, 1, 100_000, 499_999):
            assert lambda_schedule(step, cfg)[0] == 100.0


class TestTrainerSteps:
    def run_steps(self, tmp_path, n, seed=0, **overrides):
        cfg = tiny_full_config(seed=seed, **overrides)
        trainer = Trainer(cfg, make_crops(), tmp_path)
        bundles = [trainer.train_step() for _ in range(n)]
        return trainer, bundles

    def test_loss_components_finite_and_positive(self, tmp_path):
        _, bundles = self.run_steps(tmp_path, 3)
        for b in bundles:
            assert torch.isfinite(b.total)
            assert b.recon.item() >= 0.0
            assert b.entr.item() >= 0.0
            assert b.rep.item() >= 0.0

    def test_determinism_same_seed(self, tmp_path):
        _, a = self.run_steps(tmp_path / "a", 6, seed=3)
        _, b = self.run_steps(tmp_path / "b", 6, seed=3)
        for x, y in zip(a, b):
            assert abs(x.total.item() - y.total.item()) <= 1e-6

    def test_different_seeds_diverge(self, tmp_path):
        _, a = self.run_steps(tmp_path / "a", 3, seed=1)
        _, b = self.run_steps(tmp_path / "b", 3, seed=2)
        assert any(
            abs(x.total.item() - y.total.item()) > 1e-8 for x, y in zip(a, b)
        )

    def test_key_encoder_tracks_momentum(self, tmp_path):
        trainer, _ = self.run_steps(tmp_path, 1)
        m = trainer.config.model.momentum
        for pq, pk in zip(
            trainer.model.encoders.query.parameters(),
            trainer.model.encoders.key.parameters(),
        ):
            assert pk.grad is None
        # key must differ from query (it lags behind) but stay close
        with torch.no_grad():
            gap = sum(
                float((pq - pk).abs().max())
                for pq, pk in zip(
                    trainer.model.encoders.query.parameters(),
                    trainer.model.encoders.key.parameters(),
                )
            )
        assert 0.0 < gap < 1.0
        assert 0.0 < m < 1.0

    def test_rep_ablation_zeroes_term(self, tmp_path):
        trainer, bundles = self.run_steps(tmp_path, 2, enable_rep=False)
        for b in bundles:
            assert b.rep.item() == 0.0
            assert b.lambdas[2] == 0.0
        # batch has no twins: all positions independent
        crops_t, regions_t, n_pairs = trainer._build_batch()
        assert n_pairs == 0
        assert crops_t.shape[0] == trainer.config.train.batch_size

    def test_paired_batch_layout(self, tmp_path):
        trainer, _ = self.run_steps(tmp_path, 0)
        crops_t, regions_t, n_pairs = trainer._build_batch()
        assert n_pairs == trainer.config.train.batch_size // 2
        assert crops_t.shape[0] == trainer.config.train.batch_size
        assert regions_t.shape == crops_t.shape
        # twins share the foreground mask, so they differ only off-mask
        assert not torch.equal(crops_t[0], crops_t[1])

    def test_empty_crop_list_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            Trainer(tiny_full_config(), [], tmp_path)

    def test_log_written(self, tmp_path):
        trainer, _ = self.run_steps(tmp_path, 2)
        lines = trainer.log_path.read_text().splitlines()
        assert len(lines) == 2
        import json

        record = json.loads(lines[0])
        assert set(record) == {
            "step", "lr", "lambda2", "lambda3", "recon", "entr", "rep", "total"
        }


class TestCheckpointing:
    def test_resume_matches_uninterrupted(self, tmp_path):
        crops = make_crops()
        cfg = tiny_full_config(seed=5)

        straight = Trainer(cfg, crops, tmp_path / "straight")
        for _ in range(7):
            last_straight = straight.train_step()

        first = Trainer(cfg, crops, tmp_path / "int_a")
        for _ in range(4):
            first.train_step()
        ckpt = first.save_checkpoint(tmp_path / "mid.pt")

        resumed = Trainer(cfg, crops, tmp_path / "int_b")
        resumed.load_checkpoint(ckpt)
        assert resumed.step == 4
        for _ in range(3):
            last_resumed = resumed.train_step()

        assert abs(
            last_resumed.total.item() - last_straight.total.item()
        ) <= 1e-5
        with torch.no_grad():
            for pa, pb in zip(
                straight.model.parameters(), resumed.model.parameters()
            ):
                assert float((pa - pb).abs().max()) <= 1e-5

    def test_architecture_mismatch_refused(self, tmp_path):
        crops = make_crops()
        trainer = Trainer(tiny_full_config(), crops, tmp_path)
        trainer.train_step()
        ckpt = trainer.save_checkpoint(tmp_path / "ck.pt")
        other_cfg = apply_overrides(tiny_full_config(), {"binding.D": "16"})
        other = Trainer(other_cfg, crops, tmp_path / "other")
        with pytest.raises(ValidationError, match="feat_dim"):
            other.load_checkpoint(ckpt)

    def test_missing_checkpoint_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_model_from_checkpoint(tmp_path / "nope.pt")

    def test_bad_format_version_rejected(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"format_version": 99}, path)
        with pytest.raises(ValidationError, match="format_version"):
            load_model_from_checkpoint(path)

    def test_loaded_model_reproduces_outputs(self, tmp_path):
        crops = make_crops()
        trainer = Trainer(tiny_full_config(), crops, tmp_path)
        for _ in range(2):
            trainer.train_step()
        ckpt = trainer.save_checkpoint(tmp_path / "ck.pt")
        model, config = load_model_from_checkpoint(ckpt)
        x = torch.rand(1, 3, 16, 32)
        r = torch.rand(1, 3, 16, 32)
        trainer.model.eval()
        with torch.no_grad():
            a = trainer.model(x, r)["recon"]
            b = model(x, r)["recon"]
        assert torch.allclose(a, b, atol=1e-7)


class TestConfig:
    def test_desk_preset_values(self):
        cfg = desk_preset()
        assert (cfg.model.crop_h, cfg.model.crop_w) == (64, 128)
        assert cfg.model.feat_dim == 32
        assert cfg.train.total_steps == 5000
        assert cfg.train.warmup_steps == 500
        assert cfg.train.lambda2_init == pytest.approx(0.001)
        assert cfg.train.lambda3_init == pytest.approx(0.01)

    def test_paper_preset_values(self):
        cfg = paper_preset()
        assert (cfg.model.crop_h, cfg.model.crop_w) == (128, 256)
        assert cfg.model.num_slots == 2
        assert cfg.model.binding_steps == 5
        assert cfg.model.momentum == 0.999
        assert cfg.train.batch_size == 16
        assert cfg.train.base_lr == 5e-4
        assert cfg.train.total_steps == 500_000
        assert cfg.train.lambda1 == 100.0
        assert cfg.train.lambda2_init == 0.01

    def test_overrides_types(self):
        cfg = apply_overrides(
            paper_preset(),
            {
                "binding.T": "3",
                "rqm.enable_rqn": "false",
                "train.base_lr": "1e-3",
                "model.enc_channels": "4,8,8",
            },
        )
        assert cfg.model.binding_steps == 3
        assert cfg.model.enable_rqn is False
        assert cfg.train.base_lr == pytest.approx(1e-3)
        assert cfg.model.enc_channels == (4, 8, 8)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown config key"):
            apply_overrides(paper_preset(), {"train.bogus": "1"})

    def test_config_file_round_trip(self, tmp_path):
        from layerseg.config import (
            load_config_file,
            save_config_file,
        )

        cfg = apply_overrides(desk_preset(), {"train.seed": "9"})
        path = tmp_path / "conf.txt"
        save_config_file(path, cfg)
        loaded = apply_overrides(paper_preset(), load_config_file(path))
        assert loaded.to_dict() == cfg.to_dict()

    def test_invalid_values_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValidationError):
            TrainConfig(decay_factor=1.5)
