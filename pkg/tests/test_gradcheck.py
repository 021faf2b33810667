"""The finite-difference oracle itself."""

import numpy as np
import pytest

from tinyalm import autodiff as ad
from tinyalm.autodiff import Tensor
from tinyalm.gradcheck import EvaluationError, grad_check


def test_quadratic_analytic():
    # f(x) = x^2 at x=3: autodiff and central difference both give 6
    x = Tensor(np.array([3.0]), requires_grad=True)
    report = grad_check(lambda: ad.sum_(ad.mul(x, x)), {"x": x})
    assert report.passed
    assert report.per_param["x"] < 1e-7  # central diff error is O(eps^2)


def test_frozen_parameter_marked_skipped():
    frozen = Tensor(np.array([2.0]), requires_grad=False)
    live = Tensor(np.array([1.0]), requires_grad=True)
    report = grad_check(lambda: ad.sum_(ad.mul(frozen, live)),
                        {"frozen": frozen, "live": live})
    assert report.skipped == ["frozen"]
    assert "live" in report.per_param and report.passed
    assert "frozen, skipped" in report.format_table()


def test_nonfinite_objective_raises_evaluation_error():
    x = Tensor(np.array([400.0]), requires_grad=True)
    with np.errstate(over="ignore"), pytest.raises(EvaluationError):
        grad_check(lambda: ad.exp(ad.mul(x, x)), {"x": x})


def test_rejects_single_precision_parameters():
    x = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: ad.sum_(x), {"x": x})


def test_detects_a_wrong_gradient():
    # sanity: the oracle actually fails when forward and backward disagree.
    x = Tensor(np.array([1.3]), requires_grad=True)

    def objective():
        # exp's true derivative is exp(x); sub in a deliberately wrong path:
        # forward exp(2x) but tape sees exp(x) * detached factor
        y = ad.exp(x)
        return ad.sum_(ad.mul(y, y.detach()))

    report = grad_check(objective, {"x": x})
    assert not report.passed
