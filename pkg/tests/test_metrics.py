import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modot import oracles
from modot.errors import ConfigError, DomainError, UndefinedError
from modot.metrics import DEPTH_KEYS, depth_metrics, mean_metrics, ob_counts, ob_metrics


def test_identity_depth():
    gt = np.linspace(1, 9, 20).reshape(4, 5)
    m = depth_metrics(gt, gt).to_dict()
    for k in ("rmse", "rmse_log", "abs_rel", "sq_rel", "log10"):
        assert m[k] == 0.0
    assert m["delta1"] == m["delta2"] == m["delta3"] == 1.0


def test_two_pixel_example():
    m = depth_metrics(np.array([[1.0, 2.0]]), np.array([[1.0, 4.0]]))
    assert m.rmse == pytest.approx(math.sqrt(2))
    assert m.abs_rel == pytest.approx(0.25)
    assert m.delta1 == 0.5


def test_uniform_overestimate():
    gt = np.linspace(1, 5, 9).reshape(3, 3)
    m = depth_metrics(1.2 * gt, gt)
    assert m.delta1 == 1.0
    assert m.abs_rel == pytest.approx(0.2)


def test_mask_and_cap():
    gt = np.array([[1.0, 2.0, 12.0]])
    pred = np.array([[1.0, 2.0, 1.0]])
    assert depth_metrics(pred, gt, depth_cap=10).rmse == 0.0
    assert depth_metrics(pred, gt, valid_mask=np.array([[1, 0, 0]])).rmse == 0.0
    with pytest.raises(UndefinedError):
        depth_metrics(pred, gt, valid_mask=np.zeros((1, 3)))
    with pytest.raises(ConfigError):
        depth_metrics(pred, gt, depth_cap=0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(0.5, 9.5)),
       arrays(np.float64, (4, 4), elements=st.floats(0.5, 9.5)))
def test_delta_ordering_and_matches_oracle(p, g):
    m = depth_metrics(p, g).to_dict()
    assert m["delta1"] <= m["delta2"] <= m["delta3"]
    ref = oracles.brute_depth_metrics(p, g)
    for k in DEPTH_KEYS:
        assert m[k] == pytest.approx(ref[k], rel=1e-9, abs=1e-12)


def test_permutation_invariance(rng):
    p, g = rng.uniform(1, 9, (2, 36))
    perm = rng.permutation(36)
    a = depth_metrics(p.reshape(6, 6), g.reshape(6, 6)).to_dict()
    b = depth_metrics(p[perm].reshape(6, 6), g[perm].reshape(6, 6)).to_dict()
    for k in DEPTH_KEYS:
        assert a[k] == pytest.approx(b[k], rel=1e-12)


def test_rmse_monotone_in_error(rng):
    g = rng.uniform(1, 9, (5, 5))
    noise = rng.normal(size=(5, 5))
    errs = [depth_metrics(np.clip(g + s * noise, 0.1, None), g).rmse for s in (0.0, 0.1, 0.2, 0.4)]
    assert errs == sorted(errs)


class TestOB:
    def test_two_by_two(self):
        m = ob_metrics([[0.8, 0.1], [0.9, 0.6]], np.array([[1, 0], [1, 1]]), 0.7, 0)
        assert (m.tp, m.fp, m.fn) == (2, 0, 1)
        assert m.recall == pytest.approx(2 / 3)
        assert m.precision == 1.0
        assert m.fscore == pytest.approx(0.8)

    @pytest.mark.parametrize("t", [0.0, 0.3, 0.7, 0.99])
    def test_perfect(self, t, rng):
        gt = (rng.random((8, 8)) < 0.2).astype(np.uint8)
        m = ob_metrics(gt.astype(float), gt, t)
        assert m.recall == m.precision == m.fscore == 1.0

    def test_no_detections(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[1, 1] = 1
        m = ob_metrics(np.zeros((4, 4)), gt)
        assert m.recall == 0.0 and m.fscore == 0.0

    def test_empty_conventions(self):
        m = ob_metrics(np.zeros((4, 4)), np.zeros((4, 4), np.uint8))
        assert (m.recall, m.precision, m.fscore) == (1.0, 1.0, 1.0)

    def test_single_pixel(self):
        gt = np.zeros((5, 5), np.uint8)
        gt[2, 3] = 1
        m = ob_metrics(gt.astype(float), gt, 0.7, 0)
        assert (m.recall, m.precision, m.fscore) == (1.0, 1.0, 1.0)

    def test_tolerance_radius(self):
        gt = np.zeros((5, 5), np.uint8)
        gt[2, 2] = 1
        prob = np.zeros((5, 5))
        prob[3, 3] = 1
        assert ob_metrics(prob, gt, 0.7, 0).recall == 0.0
        assert ob_metrics(prob, gt, 0.7, 1).recall == 1.0

    def test_recall_monotone_in_threshold(self, rng):
        prob, gt = rng.random((16, 16)), (rng.random((16, 16)) < 0.2).astype(np.uint8)
        rec = [ob_metrics(prob, gt, t).recall for t in np.linspace(0, 1, 11)]
        assert all(a >= b for a, b in zip(rec, rec[1:]))

    @pytest.mark.parametrize("radius", [0, 1, 2])
    def test_matches_brute_oracle(self, rng, radius):
        for _ in range(25):
            prob, gt = rng.random((16, 16)), (rng.random((16, 16)) < 0.15).astype(np.uint8)
            m = ob_metrics(prob, gt, 0.7, radius)
            ref = oracles.brute_ob_metrics(prob, gt, 0.7, radius)
            assert (m.tp, m.fp, m.fn) == (ref["tp"], ref["fp"], ref["fn"])
            for k in ("recall", "precision", "fscore"):
                assert getattr(m, k) == pytest.approx(ref[k], rel=1e-12)

    def test_errors(self):
        with pytest.raises(ConfigError):
            ob_counts(np.zeros((2, 2)), np.zeros((2, 2)), threshold=1.5)
        with pytest.raises(DomainError):
            ob_counts(np.zeros((2, 2)), np.full((2, 2), 2))
        with pytest.raises(DomainError):
            ob_counts(np.zeros((2, 3)), np.zeros((2, 2)))


def test_mean_metrics():
    assert mean_metrics([{"a": 1.0}, {"a": 3.0}], ["a"]) == {"a": 2.0}
    with pytest.raises(UndefinedError):
        mean_metrics([], ["a"])
