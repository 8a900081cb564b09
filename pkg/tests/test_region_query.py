import math

import numpy as np
import pytest
import torch

from layerseg.errors import ValidationError
from layerseg.region_query import FeatureFusion, rqn, sqn


def feat(values, d, h, w):
    """Build a B x D x h x w tensor from an N x D nested list (f64)."""
    arr = torch.tensor(values, dtype=torch.float64)  # N x D
    return arr.T.reshape(1, d, h, w)


def flat(out):
    b, d, h, w = out.shape
    return out.reshape(d, h * w).T  # N x D


class TestRqn:
    def test_two_position_oracle(self):
        # direct evaluation: q = k = v = [[1], [0]], D = 1
        q = feat([[1.0], [0.0]], 1, 1, 2)
        out = flat(rqn(q, q))
        s_row1 = math.exp(1.0) / (math.exp(1.0) + 1.0)
        assert out[0, 0].item() == pytest.approx(s_row1 * 1.0 + 1.0, abs=1e-10)
        assert out[1, 0].item() == pytest.approx(0.5 * 1.0 + 0.0, abs=1e-10)
        assert s_row1 == pytest.approx(0.7311, abs=1e-4)

    def test_identical_keys_collapse(self, rng):
        q = torch.tensor(rng.standard_normal((1, 4, 2, 3)))
        k_row = torch.tensor(rng.standard_normal(4))
        k = k_row.reshape(1, 4, 1, 1).expand(1, 4, 2, 3).clone()
        out = rqn(q, k)
        expected = q + k_row.reshape(1, 4, 1, 1)
        assert torch.allclose(out, expected, atol=1e-10)

    def test_zero_query_gives_value_mean(self, rng):
        k = torch.tensor(rng.standard_normal((1, 3, 2, 2)))
        out = flat(rqn(torch.zeros_like(k), k))
        mean_v = flat(k).mean(dim=0)
        for i in range(4):
            assert torch.allclose(out[i], mean_v, atol=1e-10)

    def test_residual_identity_with_zero_values(self, rng):
        q = torch.tensor(rng.standard_normal((1, 3, 2, 2)))
        out = rqn(q, torch.zeros_like(q))
        assert torch.allclose(out, q, atol=1e-10)

    @pytest.mark.parametrize("paper_axis", [False, True])
    def test_softmax_axis_sums_to_one(self, rng, paper_axis):
        q = torch.tensor(rng.standard_normal((2, 4, 2, 3)))
        k = torch.tensor(rng.standard_normal((2, 4, 2, 3)))
        d = 4
        qf = q.reshape(2, d, 6).transpose(1, 2)
        kf = k.reshape(2, d, 6).transpose(1, 2)
        logits = torch.bmm(qf, kf.transpose(1, 2)) / math.sqrt(d)
        s = torch.softmax(logits, dim=1 if paper_axis else 2)
        sums = s.sum(dim=1 if paper_axis else 2)
        assert (sums - 1.0).abs().max() < 1e-6
        # the residual-subtracted output equals S @ v
        out = rqn(q, k, paper_norm_axis=paper_axis)
        recovered = (out - q).reshape(2, d, 6).transpose(1, 2)
        assert torch.allclose(recovered, torch.bmm(s, kf), atol=1e-8)

    def test_norm_axis_modes_differ(self, rng):
        q = torch.tensor(rng.standard_normal((1, 4, 2, 3)))
        k = torch.tensor(rng.standard_normal((1, 4, 2, 3)))
        assert not torch.allclose(rqn(q, k), rqn(q, k, paper_norm_axis=True))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            rqn(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 3))

    def test_scale_robustness(self, rng):
        # large-but-finite logits must stay stable (softmax subtracts max)
        q = torch.tensor(rng.standard_normal((1, 4, 2, 3)))
        out = rqn(q * 30.0, q * 30.0)
        assert torch.isfinite(out).all()

    def test_nonfinite_logits_rejected(self):
        q = torch.full((1, 1, 1, 2), 1e30)
        with pytest.raises(ValidationError, match="logit"):
            rqn(q, q)


class TestSqn:
    def test_single_channel_doubles(self, rng):
        q = torch.tensor(rng.standard_normal((1, 1, 2, 3)))
        assert torch.allclose(sqn(q), 2.0 * q, atol=1e-10)

    def test_zero_input_zero_output(self):
        assert torch.equal(sqn(torch.zeros(1, 3, 2, 2)), torch.zeros(1, 3, 2, 2))

    def test_single_position_oracle(self):
        # hand-rolled evaluation at N=1, D=2, q = [[1, 0]]
        q = feat([[1.0, 0.0]], 2, 1, 1)
        out = flat(sqn(q))
        l00 = 1.0 / math.sqrt(2.0)
        s00 = math.exp(l00) / (math.exp(l00) + math.exp(0.0))
        # column 1 logits are [0, 0] -> [0.5, 0.5]
        expected = [1.0 * s00 + 1.0, 1.0 * 0.5 + 0.0]
        assert out[0, 0].item() == pytest.approx(expected[0], abs=1e-10)
        assert out[0, 1].item() == pytest.approx(expected[1], abs=1e-10)

    def test_softmax_columns_sum_to_one(self, rng):
        q = torch.tensor(rng.standard_normal((1, 5, 2, 3)))
        d = 5
        qf = q.reshape(1, d, 6).transpose(1, 2)
        logits = torch.bmm(qf.transpose(1, 2), qf) / math.sqrt(d)
        s = torch.softmax(logits, dim=1)
        assert (s.sum(dim=1) - 1.0).abs().max() < 1e-6
        recovered = (sqn(q) - q).reshape(1, d, 6).transpose(1, 2)
        assert torch.allclose(recovered, torch.bmm(qf, s), atol=1e-8)


class TestFusion:
    def make(self, d=4, eta=4):
        return FeatureFusion(feat_dim=d, eta=eta)

    def test_output_shape(self, rng):
        fusion = self.make()
        crop = torch.tensor(rng.uniform(size=(2, 3, 16, 32)), dtype=torch.float32)
        a = torch.randn(2, 4, 4, 8)
        out = fusion(a, a, crop)
        assert out.shape == (2, 4, 4, 8)

    def test_projection_selecting_rqn_block(self, rng):
        fusion = self.make()
        with torch.no_grad():
            fusion.project.weight.zero_()
            fusion.project.bias.zero_()
            for i in range(4):
                fusion.project.weight[i, i, 0, 0] = 1.0
        crop = torch.tensor(rng.uniform(size=(1, 3, 16, 32)), dtype=torch.float32)
        a_rqn = torch.randn(1, 4, 4, 8)
        a_sqn = torch.randn(1, 4, 4, 8)
        out = fusion(a_rqn, a_sqn, crop)
        assert torch.allclose(out, a_rqn, atol=1e-6)

    def test_ablated_block_equals_explicit_zeros(self, rng):
        fusion = self.make()
        crop = torch.tensor(rng.uniform(size=(1, 3, 16, 32)), dtype=torch.float32)
        a_rqn = torch.randn(1, 4, 4, 8)
        zeros = torch.zeros(1, 4, 4, 8)
        assert torch.equal(fusion(a_rqn, None, crop), fusion(a_rqn, zeros, crop))
        assert torch.equal(fusion(None, None, crop), fusion(zeros, zeros, crop))

    def test_shape_mismatch_rejected(self, rng):
        fusion = self.make()
        crop = torch.tensor(rng.uniform(size=(1, 3, 16, 32)), dtype=torch.float32)
        with pytest.raises(ValidationError):
            fusion(torch.randn(1, 4, 2, 8), None, crop)
