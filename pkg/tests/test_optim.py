import numpy as np
import pytest

from tinyalm.autodiff import Tensor
from tinyalm.config import Config
from tinyalm.optim import AdamW, lr_at
from tinyalm.params import ParamStore


def test_schedule_endpoints_and_peak():
    peak = 5e-5
    assert lr_at(0, 1000, peak, 0.13) == 0.0
    assert lr_at(1000, 1000, peak, 0.13) == 0.0
    assert lr_at(130, 1000, peak, 0.13) == peak
    assert abs(lr_at(565, 1000, peak, 0.13) - peak / 2) < 1e-12


def test_schedule_monotonicity():
    vals = [lr_at(s, 1000, 1.0, 0.13) for s in range(1001)]
    warm = 130
    assert all(b >= a for a, b in zip(vals[:warm], vals[1:warm + 1]))
    assert all(b <= a for a, b in zip(vals[warm:-1], vals[warm + 1:]))


def test_schedule_rejects_bad_args():
    with pytest.raises(ValueError, match="total"):
        lr_at(0, 0, 1.0, 0.13)
    with pytest.raises(ValueError, match="outside"):
        lr_at(5, 4, 1.0, 0.13)


def hand_adamw(p, g, lr, b1, b2, eps, wd, steps):
    m = v = 0.0
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
    return p


def test_adamw_single_scalar_matches_hand_formula():
    cfg = Config(lr=5e-5, weight_decay=1e-6)
    store = ParamStore()
    p = Tensor(np.array([[1.0]], dtype=np.float32), requires_grad=True)
    store.register("w", p, trainable=True)  # rank 2: decay applies
    opt = AdamW(store, cfg)
    p.grad = np.array([[1.0]], dtype=np.float32)
    opt.step(cfg.lr)
    want = hand_adamw(1.0, 1.0, 5e-5, 0.9, 0.999, 1e-8, 1e-6, 1)
    np.testing.assert_allclose(p.data[0, 0], want, rtol=1e-6)

    # a few more steps with the same gradient
    for _ in range(4):
        p.grad = np.array([[1.0]], dtype=np.float32)
        opt.step(cfg.lr)
    want = hand_adamw(1.0, 1.0, 5e-5, 0.9, 0.999, 1e-8, 1e-6, 5)
    np.testing.assert_allclose(p.data[0, 0], want, rtol=1e-5)


def test_decay_exemption_for_bias_and_query():
    cfg = Config()
    store = ParamStore()
    mat = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    vec = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    q = Tensor(np.ones((1, 2), dtype=np.float32), requires_grad=True)
    store.register("layer.w", mat, trainable=True)
    store.register("layer.b", vec, trainable=True)
    store.register("qformer.query", q, trainable=True)
    opt = AdamW(store, cfg)
    assert opt.exempt == {"layer.b", "qformer.query"}

    # zero gradient: only decay can move parameters
    for t in (mat, vec, q):
        t.grad = np.zeros_like(t.data)
    opt.step(0.1)
    assert np.all(mat.data < 1.0)
    np.testing.assert_array_equal(vec.data, np.ones(2, dtype=np.float32))
    np.testing.assert_array_equal(q.data, np.ones((1, 2), dtype=np.float32))


def test_exemption_flag_off_decays_everything():
    cfg = Config(decay_exempt_bias_and_query=False)
    store = ParamStore()
    vec = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    store.register("layer.b", vec, trainable=True)
    opt = AdamW(store, cfg)
    vec.grad = np.zeros_like(vec.data)
    opt.step(0.1)
    assert np.all(vec.data < 1.0)


def test_missing_gradient_treated_as_zero():
    cfg = Config()
    store = ParamStore()
    p = Tensor(np.full((2, 2), 3.0, dtype=np.float32), requires_grad=True)
    store.register("w", p, trainable=True)
    opt = AdamW(store, cfg)
    p.grad = None
    opt.step(0.1)  # decay-only movement, no crash
    assert np.all(p.data <= 3.0)
    assert np.all(np.isfinite(p.data))


def test_updates_stay_float32():
    cfg = Config()
    store = ParamStore()
    p = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    store.register("w", p, trainable=True)
    opt = AdamW(store, cfg)
    p.grad = np.full((2, 2), 0.5, dtype=np.float32)
    opt.step(1e-3)
    assert p.data.dtype == np.float32
    assert opt.m["w"].dtype == np.float32
