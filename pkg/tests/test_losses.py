import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modot import oracles
from modot.errors import ConfigError, DomainError, ShapeError, UndefinedError
from modot.losses import LossWeights, cce, depth_diff_map, obdcl, silog, total_loss
from modot.models.modot import Stage1Output

from conftest import t64

# golden values produced by modot.oracles and frozen here
SILOG_DOUBLE = 2.6845474868     # silog_reference(2*gt, gt, 0.85, 10)
CCE_HALF_2X2 = 0.2599301927    # cce_reference(zeros, [[1,0],[0,0]])


def three_by_three():
    return t64([[0, 0, 0], [0, 0, 0], [1, 1, 1]])


def test_frozen_goldens_match_oracle():
    gt = np.full((3, 3), 1.7)
    assert oracles.silog_reference(2 * gt, gt) == pytest.approx(SILOG_DOUBLE, abs=1e-6)
    assert oracles.cce_reference(np.zeros((2, 2)), [[1, 0], [0, 0]]) == pytest.approx(CCE_HALF_2X2, abs=1e-9)
    assert SILOG_DOUBLE == pytest.approx(10 * math.log(2) * math.sqrt(0.15), abs=1e-6)
    assert CCE_HALF_2X2 == pytest.approx(0.375 * math.log(2), abs=1e-9)


class TestSilog:
    def test_perfect_prediction_is_zero(self, rng):
        gt = t64(rng.uniform(1, 5, (6, 6)))
        assert float(silog(gt, gt)) == 0.0

    @pytest.mark.parametrize("c", [0.3, 1.0, 2.0, 7.5])
    def test_scale_invariant_at_lambda_one(self, rng, c):
        gt = t64(rng.uniform(1, 5, (5, 5)))
        assert abs(float(silog(c * gt, gt, lam=1.0))) < 1e-6

    def test_double_depth(self):
        gt = t64(np.full((4, 4), 2.2))
        assert float(silog(2 * gt, gt)) == pytest.approx(SILOG_DOUBLE, abs=1e-6)

    def test_gradient_zero_at_minimum(self, rng):
        gt = t64(rng.uniform(1, 5, (4, 4)))
        pred = gt.clone().requires_grad_(True)
        silog(pred, gt).backward()
        assert torch.all(torch.isfinite(pred.grad))
        assert pred.grad.abs().max() < 1e-6

    def test_valid_mask_ignores_pixels(self, rng):
        gt = t64(rng.uniform(1, 5, (4, 4)))
        pred = gt.clone()
        pred[0, 0] = 100.0
        mask = torch.ones_like(gt)
        mask[0, 0] = 0
        assert float(silog(pred, gt, mask)) == pytest.approx(0.0, abs=1e-9)

    def test_errors(self):
        gt = torch.ones(3, 3)
        with pytest.raises(DomainError):
            silog(torch.zeros(3, 3), gt)
        with pytest.raises(UndefinedError):
            silog(gt, gt, torch.zeros(3, 3))
        with pytest.raises(ShapeError):
            silog(torch.ones(3, 4), gt)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(0.1, 20)),
           arrays(np.float64, (3, 4), elements=st.floats(0.1, 20)))
    def test_matches_oracle_and_nonnegative(self, p, g):
        got = float(silog(t64(p), t64(g)))
        assert got >= 0
        assert got == pytest.approx(oracles.silog_reference(p, g), abs=1e-6)


class TestCCE:
    def test_two_by_two_half(self):
        assert float(cce(t64(np.zeros((2, 2))), t64([[1, 0], [0, 0]]))) == pytest.approx(CCE_HALF_2X2, abs=1e-6)

    def test_all_negative_half_is_zero(self):
        assert float(cce(t64(np.zeros((3, 3))), t64(np.zeros((3, 3))))) == pytest.approx(0.0, abs=1e-12)

    def test_saturated_correct_logits(self):
        gt = t64([[1, 0, 0], [0, 1, 0], [0, 0, 0]])
        assert float(cce(40 * (2 * gt - 1), gt)) < 1e-5

    def test_rejects_non_binary(self):
        with pytest.raises(DomainError):
            cce(torch.zeros(2, 2), torch.full((2, 2), 0.5))

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (4, 4), elements=st.floats(-8, 8)),
           arrays(np.int8, (4, 4), elements=st.integers(0, 1)))
    def test_matches_oracle(self, z, y):
        assert float(cce(t64(z), t64(y))) == pytest.approx(oracles.cce_reference(z, y), abs=1e-9)


class TestDepthDiff:
    def test_constant(self):
        assert float(depth_diff_map(t64(np.full((5, 5), 3.0))).abs().max()) == 0.0

    def test_three_by_three_center(self):
        assert float(depth_diff_map(three_by_three())[1, 1]) == 1.0

    def test_translation_invariant(self, rng):
        d = t64(rng.uniform(0, 4, (6, 7)))
        assert torch.allclose(depth_diff_map(d), depth_diff_map(d + 2.5))

    @pytest.mark.parametrize("n", [1, 2])
    def test_matches_oracle(self, rng, n):
        d = rng.uniform(0, 4, (6, 7))
        np.testing.assert_allclose(depth_diff_map(t64(d), n).numpy(), oracles.depth_diff_reference(d, n), atol=1e-12)

    def test_bad_shift(self):
        with pytest.raises(ConfigError):
            depth_diff_map(torch.zeros(4, 4), n=4)


class TestOBDCL:
    def test_constant_depth_is_one(self, rng):
        b = torch.zeros(5, 5)
        b[2, 1:4] = 1
        assert float(obdcl(torch.full((5, 5), 2.0), b)) == 1.0

    def test_three_by_three_center(self):
        b = torch.zeros(3, 3, dtype=torch.float64)
        b[1, 1] = 1
        assert float(obdcl(three_by_three(), b)) == 0.0

    def test_empty_boundary(self, rng):
        assert float(obdcl(t64(rng.uniform(1, 3, (4, 4))), torch.zeros(4, 4))) == 0.0

    def test_literal_can_go_negative_hinge_cannot(self):
        d = t64([[0, 0, 0], [0, 0, 0], [5, 5, 5]])
        b = torch.zeros(3, 3, dtype=torch.float64)
        b[1, 1] = 1
        assert float(obdcl(d, b)) == pytest.approx(-4.0)
        assert float(obdcl(d, b, variant="hinge")) == 0.0

    @pytest.mark.parametrize("variant", ["literal", "hinge"])
    def test_matches_oracle(self, rng, variant):
        for _ in range(10):
            d = rng.uniform(0, 2, (6, 6))
            b = (rng.random((6, 6)) < 0.3).astype(np.float64)
            assert float(obdcl(t64(d), t64(b), variant=variant)) == pytest.approx(
                oracles.obdcl_reference(d, b, variant=variant), abs=1e-12)

    def test_per_image_then_batch_mean(self):
        d = torch.zeros(2, 4, 4, dtype=torch.float64)
        b = torch.zeros(2, 4, 4, dtype=torch.float64)
        b[0, 1, 1] = 1
        b[1, :2] = 1
        # each image scores 1 regardless of how many OB pixels it has
        assert float(obdcl(d, b)) == 1.0

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            obdcl(torch.zeros(3, 3), torch.zeros(3, 3), variant="soft")


def _output(depth, logits):
    return Stage1Output(depth=depth, depth_logit=None, ob_logit=logits[0], side_logits=list(logits[1:]),
                        f_depth_last=None, f_ob_last=None)


class TestTotal:
    def test_recomposes_weighted_sum(self, rng):
        gt = t64(rng.uniform(1, 4, (1, 1, 8, 8)))
        ob = t64((rng.random((1, 1, 8, 8)) < 0.2).astype(float))
        out = _output(gt * 1.3, [t64(rng.normal(size=(1, 1, 8, 8))) for _ in range(6)])
        bd = total_loss(out, gt, ob, weights=LossWeights(1.2, 1.0, 0.1))
        assert len(bd.side) == 6
        assert float(bd.l_ob) == pytest.approx(float(sum(bd.side)) / 6)
        assert float(bd.total) == pytest.approx(1.2 * float(bd.l_d) + float(bd.l_ob) + 0.1 * float(bd.l_c))

    def test_wc_zero_is_independent_of_constraint(self, rng):
        gt = t64(rng.uniform(1, 4, (1, 1, 6, 6)))
        ob = t64((rng.random((1, 1, 6, 6)) < 0.3).astype(float))
        logits = [t64(np.zeros((1, 1, 6, 6)))]

        def f(x):
            return float(total_loss(_output(t64(x), logits), gt, ob, weights=LossWeights(1.2, 1.0, 0.0)).total)

        def g(x):
            return float(1.2 * silog(t64(x), gt) + cce(logits[0], ob))

        x = rng.uniform(1, 4, (1, 1, 6, 6))
        np.testing.assert_allclose(oracles.finite_diff_grad(f, x, 1e-5), oracles.finite_diff_grad(g, x, 1e-5), atol=1e-8)

    def test_perfect_prediction_near_zero(self):
        from modot.data import SceneSpec, synth_sample
        s = synth_sample(SceneSpec(32, 32, 3, rng_seed=4))
        gt = t64(s.depth)[None, None]
        ob = t64(s.ob_mask)[None, None]
        out = _output(gt, [60 * (2 * ob - 1)] * 6)
        bd = total_loss(out, gt, ob, weights=LossWeights(1.2, 1.0, 0.0))
        assert float(bd.total) < 1e-4

    def test_depth_only_output(self, rng):
        gt = t64(rng.uniform(1, 4, (1, 1, 6, 6)))
        out = _output(gt, [None])
        out.ob_logit = None
        bd = total_loss(out, gt, torch.zeros_like(gt))
        assert float(bd.l_ob) == 0.0 and bd.side == []

    def test_negative_weight(self):
        with pytest.raises(ConfigError):
            LossWeights(1.0, -1.0, 0.0)
