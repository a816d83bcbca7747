"""Unit tests for the detection-loss suite and its gradient verification."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from optlab import (
    BinDistribution,
    Box2D,
    DegenerateBoxError,
    EmptyInputError,
    LossWeights,
    NonFiniteInputError,
    ParameterError,
    RangeError,
    ShapeError,
    bce_loss,
    ciou_loss,
    dfl_loss,
    finite_diff_grad,
    grad_check,
    iou,
    total_detection_loss,
)
from optlab.detloss import dfl_loss_at, random_nondegenerate_box_pair, relative_error

VECTORS = Path(__file__).parent / "vectors" / "detloss.jsonl"


def random_box(rng) -> Box2D:
    return Box2D(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3))


class TestBox2D:
    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateBoxError):
            Box2D(0, 0, 0.0, 1.0)
        with pytest.raises(DegenerateBoxError):
            Box2D(0, 0, 1.0, -1.0)

    def test_corner_form(self):
        assert Box2D(1, 1, 2, 2).corners() == (0.0, 0.0, 2.0, 2.0)


class TestIou:
    def test_identity(self):
        box = Box2D(1, 1, 2, 2)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(Box2D(1, 1, 2, 2), Box2D(10, 10, 2, 2)) == 0.0

    def test_partial_overlap_hand_value(self):
        # intersection 1x1, union 4 + 4 - 1 = 7
        assert iou(Box2D(1, 1, 2, 2), Box2D(2, 2, 2, 2)) == pytest.approx(1 / 7, rel=1e-14)

    def test_symmetry_and_bounds_random(self):
        rng = np.random.default_rng(100)
        for _ in range(1000):
            a, b = random_box(rng), random_box(rng)
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0

    def test_identity_characterization(self):
        rng = np.random.default_rng(101)
        for _ in range(100):
            a = random_box(rng)
            assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_characterization(self):
        rng = np.random.default_rng(102)
        for _ in range(100):
            a = random_box(rng)
            b = Box2D(a.cx + a.w + 10.0, a.cy, 1.0, 1.0)
            assert iou(a, b) == 0.0


class TestCiouLoss:
    def test_zero_at_equality(self):
        box = Box2D(0.5, -1.0, 2.0, 3.0)
        loss, grad = ciou_loss(box, box)
        assert loss == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(grad, 0.0, atol=1e-9)

    def test_hand_geometry_value(self):
        # same aspect ratio cancels v; enclosing 3x3 gives c^2 = 18,
        # squared center distance 2, iou 1/7
        loss, _ = ciou_loss(Box2D(1, 1, 2, 2), Box2D(2, 2, 2, 2))
        assert loss == pytest.approx(1 - 1 / 7 + 2 / 18, rel=1e-14)

    def test_scale_only_mismatch_reduces_to_iou(self):
        # same center and aspect ratio: both penalty terms vanish
        rng = np.random.default_rng(7)
        for _ in range(20):
            base = random_box(rng)
            scale = rng.uniform(1.2, 2.0)
            pred = Box2D(base.cx, base.cy, base.w * scale, base.h * scale)
            loss, _ = ciou_loss(pred, base)
            assert loss == pytest.approx(1.0 - iou(pred, base), rel=1e-12)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            loss, _ = ciou_loss(random_box(rng), random_box(rng))
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        res = grad_check("ciou", cases=100, seed=12)
        assert res["passed"], res
        assert res["max_rel_err"] <= 1e-4

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateBoxError):
            ciou_loss(Box2D(0, 0, 1, 1), Box2D(0, 0, 1, 0.0))


class TestDflLoss:
    def test_concentrated_integer_target(self):
        loss, grad = dfl_loss(BinDistribution((0.0, 0.0, 1.0, 0.0)), 2.0)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert grad[2] == pytest.approx(-1.0, rel=1e-12)

    def test_half_split_gives_ln2(self):
        loss, _ = dfl_loss(BinDistribution((0.0, 0.0, 0.5, 0.5)), 2.5)
        assert loss == pytest.approx(math.log(2), rel=1e-14)

    def test_zero_probability_sentinel(self):
        loss, grad = dfl_loss(BinDistribution((0.0, 0.0, 1.0, 0.0)), 2.5)
        assert loss == math.inf
        assert grad[3] == -math.inf

    def test_last_bin_integer_target(self):
        loss, grad = dfl_loss(BinDistribution((0.25, 0.25, 0.5)), 2.0)
        assert loss == pytest.approx(-math.log(0.5), rel=1e-14)
        assert grad[2] == pytest.approx(-2.0, rel=1e-12)

    def test_out_of_range_rejected(self):
        with pytest.raises(RangeError):
            dfl_loss(BinDistribution((0.5, 0.5)), 1.5)
        with pytest.raises(RangeError):
            dfl_loss(BinDistribution((0.5, 0.5)), -0.1)

    def test_gradient_matches_finite_differences(self):
        res = grad_check("dfl", cases=100, seed=13)
        assert res["passed"], res
        assert res["max_rel_err"] <= 1e-4

    def test_convex_in_bracketing_log_probs(self):
        # the loss is linear in (log p_lo, log p_hi), so midpoints in
        # log space can never lie above the chord
        rng = np.random.default_rng(14)
        y = 1.3
        for _ in range(50):
            la = np.log(rng.uniform(0.05, 0.45, size=2))
            lb = np.log(rng.uniform(0.05, 0.45, size=2))
            lm = (la + lb) / 2.0

            def loss_at(lp):
                p1, p2 = np.exp(lp)
                return dfl_loss_at(np.array([0.0, p1, p2, 1.0 - p1 - p2]), y)

            assert loss_at(lm) <= 0.5 * (loss_at(la) + loss_at(lb)) + 1e-10

    def test_minimum_concentrates_on_bracketing_pair(self):
        # grid search over the 4-bin simplex, resolution 0.05
        y = 2.3
        best, best_loss = None, math.inf
        steps = 20
        for i in range(steps + 1):
            for j in range(steps + 1 - i):
                for k in range(steps + 1 - i - j):
                    l = steps - i - j - k
                    probs = np.array([i, j, k, l]) / steps
                    val = dfl_loss_at(probs, y)
                    if val < best_loss:
                        best_loss, best = val, probs
        # optimal mass splits in proportion (y_hi - y, y - y_lo) = (0.7, 0.3)
        np.testing.assert_allclose(best, [0.0, 0.0, 0.7, 0.3], atol=1e-12)

    def test_distribution_validation(self):
        with pytest.raises(ParameterError):
            BinDistribution((0.5, 0.6))
        with pytest.raises(ParameterError):
            BinDistribution((1.2, -0.2))


class TestBceLoss:
    def test_maximum_entropy_prediction(self):
        loss, _ = bce_loss([0.5, 0.5], [1, 0])
        assert loss == pytest.approx(math.log(2), rel=1e-14)

    def test_perfect_prediction_near_zero(self):
        eps = 1e-9
        loss, _ = bce_loss([1 - eps, eps], [1, 0])
        assert loss == pytest.approx(0.0, abs=1e-8)

    def test_single_term_hand_value(self):
        loss, grad = bce_loss([0.9], [1])
        assert loss == pytest.approx(-math.log(0.9), rel=1e-14)
        assert grad[0] == pytest.approx(-1 / 0.9, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        res = grad_check("bce", cases=100, seed=15)
        assert res["passed"], res
        assert res["max_rel_err"] <= 1e-5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            bce_loss([0.5, 0.5], [1])

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            bce_loss([], [])


class TestTotalDetectionLoss:
    def test_unit_parts_default_weights(self):
        assert total_detection_loss(1.0, 1.0, 1.0) == 9.5

    def test_zero_parts(self):
        assert total_detection_loss(0.0, 0.0, 0.0) == 0.0

    def test_hand_arithmetic(self):
        assert total_detection_loss(0.2, 0.4, 0.6) == pytest.approx(2.6, rel=1e-14)

    def test_linearity(self):
        rng = np.random.default_rng(9)
        w = LossWeights()
        for _ in range(20):
            a, b, c = rng.uniform(0, 2, size=3)
            s = rng.uniform(0.1, 3)
            total = total_detection_loss(a, b, c, w)
            assert total_detection_loss(s * a, s * b, s * c, w) == pytest.approx(s * total, rel=1e-12)
            d, e, f = rng.uniform(0, 2, size=3)
            assert total_detection_loss(a + d, b + e, c + f, w) == pytest.approx(
                total + total_detection_loss(d, e, f, w), rel=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteInputError):
            total_detection_loss(math.inf, 0.0, 0.0)
        with pytest.raises(NonFiniteInputError):
            total_detection_loss(0.0, math.nan, 0.0)


class TestFiniteDiffGrad:
    def test_square_function(self):
        grad = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]))
        assert grad[0] == pytest.approx(6.0, rel=1e-8)

    def test_constant_function(self):
        grad = finite_diff_grad(lambda x: 5.0, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(grad, 0.0, atol=1e-12)

    def test_matches_analytic_bce(self):
        grad = finite_diff_grad(lambda p: bce_loss(p, [1])[0], np.array([0.9]))
        assert grad[0] == pytest.approx(-1 / 0.9, rel=1e-8)

    def test_non_finite_evaluations_flagged_nan(self):
        def f(x):
            return math.inf if x[0] > 1.0 else float(x[1])

        grad = finite_diff_grad(f, np.array([1.0, 0.5]))
        assert math.isnan(grad[0])
        assert grad[1] == pytest.approx(1.0, rel=1e-8)


class TestNondegenerateCaseGenerator:
    def test_guards_hold(self):
        rng = np.random.default_rng(40)
        for _ in range(50):
            pred, gt = random_nondegenerate_box_pair(rng)
            assert 0.05 < iou(pred, gt) < 0.95
            margins = [abs(p - g) for p, g in zip(pred.corners(), gt.corners())]
            assert min(margins) >= 1e-3


class TestFrozenVectors:
    """Replay the frozen test-vector file bit-for-bit."""

    @staticmethod
    def _load():
        with open(VECTORS, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh]

    def test_vector_file_present_and_well_formed(self):
        rows = self._load()
        assert len(rows) >= 15
        for row in rows:
            assert set(row) == {"op", "inputs", "expected", "tolerance"}

    def test_replay(self):
        for row in self._load():
            op, inputs, expected, tol = row["op"], row["inputs"], row["expected"], row["tolerance"]
            if op == "iou":
                got = iou(Box2D(*inputs["a"]), Box2D(*inputs["b"]))
                assert abs(got - expected) <= tol, row
            elif op == "ciou_loss":
                loss, grad = ciou_loss(Box2D(*inputs["pred"]), Box2D(*inputs["gt"]))
                assert abs(loss - expected["loss"]) <= tol, row
                np.testing.assert_allclose(grad, expected["grad"], atol=max(tol, 1e-12), rtol=tol)
            elif op == "dfl_loss":
                loss, grad = dfl_loss(BinDistribution(tuple(inputs["probs"])), inputs["y"])
                assert abs(loss - expected["loss"]) <= tol, row
                np.testing.assert_allclose(grad, expected["grad"], atol=tol, rtol=tol)
            elif op == "bce_loss":
                loss, grad = bce_loss(inputs["preds"], inputs["labels"])
                assert abs(loss - expected["loss"]) <= tol, row
                np.testing.assert_allclose(grad, expected["grad"], atol=tol, rtol=tol)
            elif op == "total_detection_loss":
                weights = LossWeights(*inputs["weights"]) if "weights" in inputs else LossWeights()
                got = total_detection_loss(*inputs["parts"], weights)
                assert abs(got - expected) <= tol, row
            else:
                raise AssertionError(f"unknown vector op {op}")


class TestRelativeError:
    def test_zero_for_equal(self):
        assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_scale_normalized(self):
        assert relative_error([100.0], [100.1]) == pytest.approx(0.1 / 100.1, rel=1e-9)
