import hashlib

import numpy as np

from tinyalm.autodiff import Tape
from tinyalm.config import Config
from tinyalm.data import gen_dataset
from tinyalm.model import Model, trainable_param_formula
from tinyalm.params import seeded_rng

TRAIN_GROUPS = ("qformer.", "tapm.", "saclm.", "lm.lora.", "inproj.")
FROZEN_GROUPS = ("encoders.", "lm.base.")


def digest(arr) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def make(**over):
    cfg = Config(**over)
    return cfg, Model(cfg), gen_dataset(cfg, 0, 8)


def test_parameter_accounting_matches_formula():
    cfg, model, _ = make()
    want = trainable_param_formula(cfg, model.encoders.fused_dim)
    assert model.trainable_count() == want


def test_parameter_groups_are_exhaustive():
    _, model, _ = make()
    for name, _ in model.store.trainable_items():
        assert name.startswith(TRAIN_GROUPS), name
    for name, _ in model.store.frozen_items():
        assert name.startswith(FROZEN_GROUPS), name
    # every group is nonempty
    trainable = [n for n, _ in model.store.trainable_items()]
    for g in TRAIN_GROUPS:
        assert any(n.startswith(g) for n in trainable), g


def test_forward_combined_loss_law():
    cfg, model, recs = make()
    out = model.forward_batch(recs[:4], seeded_rng(0))
    want = 0.5 * out.loss_ce.item() + 0.5 * out.sac.loss_sac.item()
    assert abs(out.loss.item() - want) < 1e-6
    assert out.routing.shape == (4, 3)
    assert out.logits.data.ndim == 3


def test_disable_saclm_gives_pure_ce():
    cfg, model, recs = make(disable_saclm=True)
    out = model.forward_batch(recs[:4], seeded_rng(0))
    assert out.sac is None
    assert out.loss.item() == out.loss_ce.item()


def test_disable_tapm_bypasses_projection_only():
    _, base_model, recs = make()
    _, ablated, _ = make(disable_tapm=True)
    b = base_model.forward_batch(recs[:4], seeded_rng(0))
    a = ablated.forward_batch(recs[:4], seeded_rng(0))
    # upstream stages identical bit for bit
    assert digest(a.fused.values.data) == digest(b.fused.values.data)
    assert digest(a.zfeat.values.data) == digest(b.zfeat.values.data)
    # the ablated path feeds Z straight through
    assert a.routing is None
    assert digest(a.phi.data) == digest(a.zfeat.values.data)
    assert digest(a.phi.data) != digest(b.phi.data)


def test_zero_encoder_changes_only_its_block():
    _, base_model, recs = make()
    _, ablated, _ = make(zero_encoder=2)
    b = base_model.forward_batch(recs[:4], seeded_rng(0))
    a = ablated.forward_batch(recs[:4], seeded_rng(0))
    fa, fb = a.fused.values.data, b.fused.values.data
    assert np.all(fa[:, :, 8:16] == 0.0)
    np.testing.assert_array_equal(fa[:, :, :8], fb[:, :, :8])
    np.testing.assert_array_equal(fa[:, :, 16:], fb[:, :, 16:])
    assert a.loss.item() != b.loss.item()


def test_audio_prefix_is_position_stable():
    cfg, model, recs = make()
    bound = model.audio_len_bound()
    out_all = model.forward_batch(recs[:8], seeded_rng(0))
    out_two = model.forward_batch(recs[:2], seeded_rng(0))
    assert out_all.seq.audio_len == bound
    assert out_two.seq.audio_len == bound


def test_audio_len_bound_default_geometry():
    cfg, model, _ = make()
    # max 8 tokens * 4 frames = 32 signal + round(32*0.3/0.7)=14 noise = 46
    # frames; ceil(46/8) = 6 windows, one query each
    assert model.audio_len_bound() == 6


def test_greedy_decode_shape_and_golden():
    cfg, model, recs = make()
    out = model.greedy_decode(recs[0])
    assert all(isinstance(t, int) for t in out)
    assert len(out) <= cfg.max_tokens + 2
    # untrained decode is deterministic: fixed digest for fixed seeds
    again = model.greedy_decode(recs[0])
    assert out == again
    _, model2, recs2 = make()
    assert model2.greedy_decode(recs2[0]) == out


def test_gradients_reach_all_trainable_groups():
    cfg, model, recs = make()
    model.store.zero_grads()
    with Tape() as tape:
        out = model.forward_batch(recs[:4], seeded_rng(0))
        tape.backward(out.loss)
    got = {g: 0 for g in TRAIN_GROUPS}
    for name, t in model.store.trainable_items():
        if t.grad is not None and np.any(t.grad != 0.0):
            for g in TRAIN_GROUPS:
                if name.startswith(g):
                    got[g] += 1
    for g, count in got.items():
        assert count > 0, f"no gradient reached group {g}"
    for name, t in model.store.frozen_items():
        assert t.grad is None, name


def test_saclm_rng_controls_only_negatives():
    cfg, model, recs = make()
    a = model.forward_batch(recs[:4], seeded_rng(1))
    b = model.forward_batch(recs[:4], seeded_rng(1))
    assert a.loss.item() == b.loss.item()
    np.testing.assert_array_equal(a.sac.negative_perm, b.sac.negative_perm)
    c = model.forward_batch(recs[:4], seeded_rng(2))
    assert c.loss_ce.item() == a.loss_ce.item()  # CE path has no sampling
