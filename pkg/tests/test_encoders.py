import numpy as np
import pytest
import torch

from layerseg.encoders import ConvBackbone, EncoderPair
from layerseg.errors import ValidationError


class TestBackboneShapes:
    @pytest.mark.parametrize("eta", [4, 8])
    def test_output_grid_ratio(self, eta):
        net = ConvBackbone(out_dim=16, eta=eta, channels=(4, 8, 8))
        x = torch.zeros(2, 3, 64, 128)
        out = net(x)
        assert out.shape == (2, 16, 64 // eta, 128 // eta)

    def test_paper_scale_shape(self):
        net = ConvBackbone(out_dim=64, eta=4, channels=(32, 64, 64))
        out = net(torch.zeros(1, 3, 128, 256))
        assert out.shape == (1, 64, 32, 64)

    def test_indivisible_input_rejected(self):
        net = ConvBackbone(out_dim=8, eta=4, channels=(4, 8, 8))
        with pytest.raises(ValidationError):
            net(torch.zeros(1, 3, 30, 64))

    def test_deterministic_and_finite(self):
        net = ConvBackbone(out_dim=8, eta=4, channels=(4, 8, 8))
        x = torch.randn(1, 3, 16, 32)
        a, b = net(x), net(x)
        assert torch.equal(a, b)
        zero_out = net(torch.zeros(1, 3, 16, 32))
        assert torch.isfinite(zero_out).all()


class TestEncoderPair:
    def make_pair(self, momentum=0.999):
        return EncoderPair(feat_dim=8, eta=4, channels=(4, 8, 8), momentum=momentum)

    def test_key_initialized_as_copy(self):
        pair = self.make_pair()
        x = torch.randn(1, 3, 16, 32)
        assert torch.equal(pair.encode_query(x), pair.encode_key(x))

    def test_momentum_one_is_fixed_point(self):
        pair = self.make_pair(momentum=1.0)
        before = [p.clone() for p in pair.key.parameters()]
        with torch.no_grad():
            for p in pair.query.parameters():
                p.add_(torch.randn_like(p))
        pair.momentum_update()
        for b, p in zip(before, pair.key.parameters()):
            assert torch.equal(b, p)

    def test_momentum_zero_copies_query(self):
        pair = self.make_pair(momentum=0.0)
        with torch.no_grad():
            for p in pair.query.parameters():
                p.add_(torch.randn_like(p))
        pair.momentum_update()
        for pq, pk in zip(pair.query.parameters(), pair.key.parameters()):
            assert torch.equal(pq, pk)
        x = torch.randn(1, 3, 16, 32)
        assert torch.allclose(pair.encode_key(x), pair.encode_query(x))

    def test_momentum_convex_combination(self):
        pair = self.make_pair(momentum=0.9)
        with torch.no_grad():
            for p in pair.query.parameters():
                p.fill_(1.0)
            for p in pair.key.parameters():
                p.fill_(2.0)
        pair.momentum_update()
        for p in pair.key.parameters():
            assert torch.allclose(p, torch.full_like(p, 1.9))

    def test_momentum_is_contraction(self):
        pair = self.make_pair(momentum=0.7)
        with torch.no_grad():
            for p in pair.query.parameters():
                p.normal_()
            for p in pair.key.parameters():
                p.normal_()
        def gap():
            with torch.no_grad():
                return sum(
                    float(((pk - pq) ** 2).sum())
                    for pq, pk in zip(
                        pair.query.parameters(), pair.key.parameters()
                    )
                ) ** 0.5

        gap_before = gap()
        pair.momentum_update()
        gap_after = gap()
        assert gap_after == pytest.approx(0.7 * gap_before, rel=1e-5)

    def test_key_receives_no_gradient(self):
        pair = self.make_pair()
        x = torch.randn(2, 3, 16, 32)
        loss = pair.encode_query(x).sum() + pair.encode_key(x).sum()
        loss.backward()
        for p in pair.key.parameters():
            assert p.grad is None
        assert any(p.grad is not None for p in pair.query.parameters())

    def test_bad_momentum_rejected(self):
        with pytest.raises(ValidationError):
            EncoderPair(feat_dim=8, momentum=1.5)
