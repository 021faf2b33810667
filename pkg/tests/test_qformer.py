import numpy as np
import pytest

from tinyalm.autodiff import Tape, Tensor, mul, sum_
from tinyalm.config import Config
from tinyalm.gradcheck import grad_check
from tinyalm.params import ParamStore, seeded_rng
from tinyalm.qformer import InputProjection, WindowQFormer


def make_qf(**over):
    cfg = Config(**over)
    store = ParamStore()
    return cfg, store, WindowQFormer(cfg, store)


def run(qf, b, t, d, seed=0, mask=None):
    rng = seeded_rng(seed)
    u = Tensor(rng.standard_normal((b, t, d)).astype(qf.cfg.np_dtype))
    if mask is None:
        mask = np.ones((b, t), dtype=qf.cfg.np_dtype)
    return qf.forward(u, mask)


def test_length_law_examples():
    _, _, qf = make_qf(window_frames=10, n_queries=1)
    assert run(qf, 1, 100, 64).values.shape == (1, 10, 64)
    _, _, qf = make_qf(window_frames=8, n_queries=1)
    assert run(qf, 1, 5, 64).values.shape == (1, 1, 64)


def test_length_law_sweep():
    _, _, qf = make_qf(window_frames=8, n_queries=2)
    for t in [1, 7, 8, 9, 16, 17, 40]:
        z = run(qf, 1, t, 64)
        want = -(-t // 8) * 2
        assert z.values.shape[1] == want
        assert list(z.window_index) == [i for i in range(-(-t // 8)) for _ in range(2)]


def test_doubling_input_doubles_output():
    _, _, qf = make_qf()
    a = run(qf, 1, 24, 64).values.shape[1]
    b = run(qf, 1, 48, 64).values.shape[1]
    assert b == 2 * a


def test_masked_positions_get_exactly_zero_weight():
    _, _, qf = make_qf(window_frames=8)
    mask = np.ones((1, 8), dtype=np.float32)
    mask[0, 5:] = 0.0
    run(qf, 1, 8, 64, mask=mask)
    w = qf.last_cross_weights[0, 0, 0]  # [W]
    assert np.all(w[5:] == 0.0)
    assert abs(w[:5].sum() - 1.0) < 1e-6


def test_weights_sum_to_one_over_valid():
    _, _, qf = make_qf()
    z = run(qf, 2, 19, 64, seed=3)
    w = qf.last_cross_weights  # [B, n_win, N, W]
    assert z.values.shape[1] == 3
    sums = w.sum(axis=-1)
    assert np.all(np.abs(sums - 1.0) < 1e-6)


def test_identical_frames_attention_convexity():
    _, _, qf = make_qf(window_frames=6)
    frame = seeded_rng(5).standard_normal(64).astype(np.float32)
    full = Tensor(np.tile(frame, (1, 6, 1)))
    z_full = qf.forward(full, np.ones((1, 6), dtype=np.float32))
    single = np.zeros((1, 6, 64), dtype=np.float32)
    single[0, 0] = frame
    mask = np.zeros((1, 6), dtype=np.float32)
    mask[0, 0] = 1.0
    z_single = qf.forward(Tensor(single), mask)
    np.testing.assert_allclose(z_full.values.data, z_single.values.data,
                               atol=1e-5)


def test_empty_window_skipped_and_counted():
    _, _, qf = make_qf(window_frames=4)
    mask = np.ones((1, 8), dtype=np.float32)
    mask[0, 4:] = 0.0
    rng = seeded_rng(1)
    base = rng.standard_normal((1, 8, 64)).astype(np.float32)
    other = base.copy()
    other[0, 4:] = rng.standard_normal((4, 64))  # garbage under the mask
    za = qf.forward(Tensor(base.copy()), mask.copy())
    n_empty = za.empty_windows
    zb = qf.forward(Tensor(other), mask.copy())
    assert n_empty == 1 and zb.empty_windows == 1
    np.testing.assert_array_equal(za.values.data[:, 1], zb.values.data[:, 1])
    assert np.all(np.isfinite(za.values.data))


def test_gradient_reaches_query():
    cfg, store, qf = make_qf()
    rng = seeded_rng(2)
    u = Tensor(rng.standard_normal((2, 12, 64)).astype(np.float32))
    with Tape() as tape:
        z = qf.forward(u, np.ones((2, 12), dtype=np.float32))
        loss = sum_(mul(z.values, z.values))
        tape.backward(loss)
    g = qf.query.grad
    assert g is not None and np.any(g != 0.0)
    for name, t in store.trainable_items():
        assert t.grad is not None, name


def test_input_proj_identity_fixture_and_zero_input():
    cfg = Config(d_model=24)
    store = ParamStore()
    proj = InputProjection(cfg, store, fused_dim=24)
    proj.weight.data[...] = np.eye(24, dtype=np.float32)
    x = seeded_rng(4).standard_normal((2, 5, 24)).astype(np.float32)
    np.testing.assert_allclose(proj(Tensor(x)).data, x, atol=1e-7)
    zero = np.zeros((1, 3, 24), dtype=np.float32)
    np.testing.assert_array_equal(proj(Tensor(zero)).data, zero)


def test_input_proj_gradient_fd():
    cfg = Config(d_model=3, dtype="float64")
    store = ParamStore()
    proj = InputProjection(cfg, store, fused_dim=2)
    x = Tensor(seeded_rng(6).standard_normal((1, 2, 2)))
    probe = Tensor(seeded_rng(7).standard_normal((1, 2, 3)))

    def f():
        return sum_(mul(proj(x), probe))

    report = grad_check(f, dict(store.trainable_items()))
    assert report.passed, report.format_table()


def test_full_qformer_gradient_fd():
    cfg, store, qf = make_qf(d_model=8, window_frames=4, n_queries=1,
                             dtype="float64")
    rng = seeded_rng(8)
    u = Tensor(rng.standard_normal((2, 6, 8)))
    mask = np.ones((2, 6), dtype=np.float64)
    mask[1, 3:] = 0.0
    probe = Tensor(rng.standard_normal((2, 2, 8)))

    def f():
        return sum_(mul(qf.forward(u, mask).values, probe))

    report = grad_check(f, dict(store.trainable_items()))
    assert report.passed, report.format_table()


def test_all_parameters_trainable_and_named():
    _, store, _ = make_qf()
    names = [n for n, _ in store.trainable_items()]
    assert all(n.startswith("qformer.") for n in names)
    assert "qformer.query" in names
    assert len(names) == len(set(names))
    assert len([n for n, _ in store.frozen_items()]) == 0
