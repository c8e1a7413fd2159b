import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.core.errors import DegenerateInputError, InputFormatError
from src.core.geom_core import Pointmap
from src.core.losses import LossParams, conf_loss, pair_conf_loss, regr_loss


def make_pointmap(seed, shape=(5, 6), invalid_fraction=0.2):
    rng = np.random.default_rng(seed)
    points = rng.normal(size=shape + (3,)) + [0.0, 0.0, 3.0]
    valid = rng.uniform(size=shape) >= invalid_fraction
    valid[0, 0] = True
    return Pointmap(points, valid)


def naive_conf_loss(pred, gt, C, alpha, metric_mode):
    """逐像素循环的参考实现"""
    idx = list(zip(*np.nonzero(gt.valid)))
    z_gt = np.mean([np.linalg.norm(gt.points[i]) for i in idx])
    z_pred = np.mean([np.linalg.norm(pred.points[i]) for i in idx])
    total = 0.0
    for i in idx:
        if metric_mode:
            loss = np.sum((pred.points[i] - gt.points[i]) ** 2) / z_gt
        else:
            loss = np.sum((pred.points[i] / z_pred - gt.points[i] / z_gt) ** 2)
        total += C[i] * loss - alpha * np.log(C[i])
    return total


class TestRegrLoss:
    def test_identity(self):
        gt = make_pointmap(0)
        assert np.all(regr_loss(gt, gt) == 0.0)

    def test_independent_scaling(self):
        gt, pred = make_pointmap(1), make_pointmap(2)
        base = regr_loss(pred, gt)
        scaled = regr_loss(Pointmap(7.0 * pred.points, pred.valid), Pointmap(3.0 * gt.points, gt.valid))
        np.testing.assert_allclose(scaled, base, rtol=1e-10, atol=1e-12)

    def test_metric_hand_value(self):
        gt = Pointmap(np.tile([0.0, 0.0, 1.0], (3, 4, 1)), np.ones((3, 4), dtype=bool))
        pred = Pointmap(np.tile([0.0, 0.0, 1.1], (3, 4, 1)), np.ones((3, 4), dtype=bool))
        np.testing.assert_allclose(regr_loss(pred, gt, metric_mode=True), 0.01, rtol=1e-12)

    @given(st.floats(0.1, 10.0))
    def test_metric_scales_linearly(self, a):
        gt, pred = make_pointmap(3), make_pointmap(4)
        base = regr_loss(pred, gt, metric_mode=True)
        scaled = regr_loss(Pointmap(a * pred.points, pred.valid), Pointmap(a * gt.points, gt.valid), metric_mode=True)
        np.testing.assert_allclose(scaled, a * base, rtol=1e-10)

    def test_invalid_pixels_are_zero(self):
        gt, pred = make_pointmap(5), make_pointmap(6)
        assert np.all(regr_loss(pred, gt)[~gt.valid] == 0.0)

    def test_no_valid_pixels(self):
        gt = Pointmap(np.ones((2, 2, 3)), np.zeros((2, 2), dtype=bool))
        with pytest.raises(DegenerateInputError):
            regr_loss(gt, gt)

    def test_zero_scale(self):
        gt = Pointmap(np.zeros((2, 2, 3)), np.ones((2, 2), dtype=bool))
        with pytest.raises(DegenerateInputError):
            regr_loss(make_pointmap(0, shape=(2, 2)), gt)

    def test_shape_mismatch(self):
        with pytest.raises(InputFormatError):
            regr_loss(make_pointmap(0, shape=(2, 3)), make_pointmap(0, shape=(3, 2)))


class TestConfLoss:
    def test_identity_unit_confidence(self):
        gt = make_pointmap(7)
        assert conf_loss(gt, gt, np.ones(gt.valid.shape), LossParams(alpha=0.2)) == 0.0

    def test_log_term(self):
        gt = make_pointmap(8)
        value = conf_loss(gt, gt, np.full(gt.valid.shape, np.e), LossParams(alpha=1.0))
        assert value == pytest.approx(-float(gt.valid.sum()), rel=1e-12)

    @given(st.integers(0, 10_000), st.booleans(), st.floats(0.05, 2.0))
    def test_matches_naive_loop(self, seed, metric_mode, alpha):
        pred, gt = make_pointmap(seed), make_pointmap(seed + 1)
        C = np.random.default_rng(seed).uniform(0.1, 3.0, size=gt.valid.shape)
        expected = naive_conf_loss(pred, gt, C, alpha, metric_mode)
        actual = conf_loss(pred, gt, C, LossParams(alpha=alpha, metric_mode=metric_mode))
        assert actual == pytest.approx(expected, rel=1e-12, abs=1e-9)

    def test_minimized_at_alpha_over_loss(self):
        pred, gt = make_pointmap(9), make_pointmap(10)
        alpha = 0.2
        loss = regr_loss(pred, gt)
        pixel = tuple(np.argwhere(gt.valid & (loss > 0))[0])
        best = alpha / loss[pixel]
        C = np.ones(gt.valid.shape)

        def objective(value):
            trial = C.copy()
            trial[pixel] = value
            return conf_loss(pred, gt, trial, LossParams(alpha=alpha))

        center = objective(best)
        assert center <= objective(best * 1.01)
        assert center <= objective(best * 0.99)

    def test_nonpositive_confidence(self):
        gt = make_pointmap(11)
        C = np.ones(gt.valid.shape)
        C[0, 0] = 0.0
        with pytest.raises(InputFormatError):
            conf_loss(gt, gt, C)

    def test_invalid_alpha(self):
        with pytest.raises(InputFormatError):
            LossParams(alpha=0.0)

    def test_pair_is_sum(self):
        p1, p2, g1, g2 = (make_pointmap(s) for s in (12, 13, 14, 15))
        c1 = np.full(g1.valid.shape, 0.5)
        c2 = np.full(g2.valid.shape, 2.0)
        total = pair_conf_loss((p1, p2), (g1, g2), (c1, c2))
        assert total == pytest.approx(conf_loss(p1, g1, c1) + conf_loss(p2, g2, c2), rel=1e-12)
