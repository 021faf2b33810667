"""Gradient-fidelity suites: a finite-difference sweep over every autodiff
primitive, and an end-to-end check of the full combined loss on a shrunken
double-precision model. Both return (ok, report) and are wired to the
gradcheck CLI subcommand and the acceptance suite.

ste_threshold is excluded from the finite-difference sweep on purpose: its
forward is a step function, so FD around the threshold measures the step,
not the surrogate. Its backward is asserted analytically instead (identity),
and the model-level check pins the decision matrix so every other gradient
flows through the selection weights with D held constant.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import Config
from .data import gen_dataset
from .gradcheck import grad_check
from .model import Model
from .params import seeded_rng


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _op_cases(rng):
    """Yield (name, fn, params) triples; fn maps the param dict to a scalar."""
    a = lambda: _t(rng, 3, 4)
    b = lambda: _t(rng, 3, 4)

    yield "add", lambda p: ad.sum_(ad.add(p["a"], p["b"])), {"a": a(), "b": b()}
    yield "add_broadcast", lambda p: ad.sum_(ad.add(p["a"], p["b"])), \
        {"a": a(), "b": _t(rng, 4)}
    yield "sub", lambda p: ad.sum_(ad.sub(p["a"], p["b"])), {"a": a(), "b": b()}
    yield "mul", lambda p: ad.sum_(ad.mul(p["a"], p["b"])), {"a": a(), "b": b()}
    yield "div", lambda p: ad.sum_(ad.div(p["a"], p["b"])), \
        {"a": a(), "b": Tensor(rng.uniform(1.0, 2.0, (3, 4)), requires_grad=True)}
    yield "scale", lambda p: ad.sum_(ad.scale(p["a"], -1.7)), {"a": a()}
    yield "relu", lambda p: ad.sum_(ad.relu(p["a"])), \
        {"a": Tensor(rng.uniform(0.2, 1.5, (3, 4)) * np.sign(rng.standard_normal((3, 4))),
                     requires_grad=True)}  # kept away from the kink at 0
    yield "sigmoid", lambda p: ad.sum_(ad.sigmoid(p["a"])), {"a": a()}
    yield "exp", lambda p: ad.sum_(ad.exp(p["a"])), {"a": a()}
    yield "log", lambda p: ad.sum_(ad.log(p["a"])), \
        {"a": Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)}
    yield "sqrt", lambda p: ad.sum_(ad.sqrt(p["a"])), \
        {"a": Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)}
    yield "sum_axis", lambda p: ad.sum_(ad.mul(ad.sum_(p["a"], axis=0), p["b"])), \
        {"a": a(), "b": _t(rng, 4)}
    yield "sum_keepdims", lambda p: ad.sum_(ad.sum_(p["a"], axis=1, keepdims=True)), \
        {"a": a()}
    yield "mean", lambda p: ad.sum_(ad.mean(p["a"], axis=1)), {"a": a()}
    yield "l1_norm", lambda p: ad.l1_norm(p["a"]), \
        {"a": Tensor(rng.uniform(0.3, 1.0, (3, 4)) * np.sign(rng.standard_normal((3, 4))),
                     requires_grad=True)}  # away from |x| kink at 0
    yield "matmul", lambda p: ad.sum_(ad.matmul(p["a"], p["b"])), \
        {"a": _t(rng, 3, 4), "b": _t(rng, 4, 2)}
    yield "matmul_batched", lambda p: ad.sum_(ad.matmul(p["a"], p["b"])), \
        {"a": _t(rng, 2, 3, 4), "b": _t(rng, 2, 4, 2)}
    yield "transpose", lambda p: ad.sum_(ad.mul(ad.transpose(p["a"], (1, 0)), p["b"])), \
        {"a": a(), "b": _t(rng, 4, 3)}
    yield "reshape", lambda p: ad.sum_(ad.mul(ad.reshape(p["a"], (2, 6)), p["b"])), \
        {"a": a(), "b": _t(rng, 2, 6)}
    yield "concat", lambda p: ad.sum_(ad.mul(ad.concat([p["a"], p["b"]], axis=1), p["c"])), \
        {"a": a(), "b": _t(rng, 3, 2), "c": _t(rng, 3, 6)}
    yield "stack", lambda p: ad.sum_(ad.mul(ad.stack([p["a"], p["b"]], axis=0), p["c"])), \
        {"a": a(), "b": b(), "c": _t(rng, 2, 3, 4)}
    yield "slice", lambda p: ad.sum_(ad.slice_(p["a"], (slice(1, 3), slice(None, 2)))), \
        {"a": a()}
    yield "embedding_lookup", \
        lambda p: ad.sum_(ad.embedding_lookup(p["tab"], np.array([[0, 2], [2, 1]]))), \
        {"tab": _t(rng, 5, 4)}
    yield "softmax", lambda p: ad.sum_(ad.mul(ad.softmax(p["a"], axis=-1), p["b"])), \
        {"a": a(), "b": b()}
    yield "log_softmax", lambda p: ad.sum_(ad.mul(ad.log_softmax(p["a"], axis=-1), p["b"])), \
        {"a": a(), "b": b()}
    yield "interp_linear", lambda p: ad.sum_(ad.mul(ad.interp_linear(p["a"], 7), p["b"])), \
        {"a": _t(rng, 4, 3), "b": _t(rng, 7, 3)}
    yield "cosine_distance", lambda p: ad.cosine_distance(p["a"], p["b"]), \
        {"a": _t(rng, 6), "b": _t(rng, 6)}
    yield "linear", lambda p: ad.sum_(ad.linear(p["x"], p["w"], p["b"])), \
        {"x": _t(rng, 3, 4), "w": _t(rng, 4, 2), "b": _t(rng, 2)}
    yield "layer_norm", lambda p: ad.sum_(ad.mul(ad.layer_norm(p["x"], p["g"], p["b"]), p["c"])), \
        {"x": _t(rng, 3, 4), "g": Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True),
         "b": _t(rng, 4), "c": _t(rng, 3, 4)}


def _ste_analytic_check() -> dict:
    """The step op's surrogate gradient is the identity; assert it exactly."""
    x = Tensor(np.array([0.1, 0.5, 0.49, 0.9]), requires_grad=True)
    w = Tensor(np.array([1.0, -2.0, 3.0, 0.5]))
    with Tape() as tape:
        y = ad.sum_(ad.mul(ad.ste_threshold(x, 0.5), w))
        tape.backward(y)
    ok = np.array_equal(x.grad, w.data)
    fwd_ok = np.array_equal(
        ad.ste_threshold(Tensor(np.array([0.1, 0.5, 0.49, 0.9])), 0.5).data,
        np.array([0.0, 1.0, 0.0, 1.0]))
    return {"name": "ste_threshold (analytic)", "ok": bool(ok and fwd_ok),
            "max_rel_err": 0.0 if (ok and fwd_ok) else float("inf")}


def run_op_suite(eps: float = 1e-6, tol: float = 1e-4) -> tuple:
    rng = seeded_rng(2024, 11)
    results = []
    for name, fn, params in _op_cases(rng):
        res = grad_check(lambda fn=fn, p=params: fn(p), params, eps=eps, tol=tol)
        results.append({"name": name, "ok": res.passed,
                        "max_rel_err": res.max_rel_err})
    results.append(_ste_analytic_check())
    ok = all(r["ok"] for r in results)
    return ok, results


def model_check_config() -> Config:
    """Double-precision shrunken model: B=2 fits, fused length stays <= 12."""
    return Config(
        dtype="float64", d_model=16, d_text=8, lm_layers=1, lm_heads=2,
        lora_rank=2, expert_hidden=8, score_hidden=8, agg_hidden=8,
        enc1_dim=2, enc2_dim=2, enc3_dim=2, window_frames=2,
        frames_per_token=2, min_tokens=3, max_tokens=3, prompt_vocab=4,
        vocab_symbols=8, batch_size=2, seed=0, model_seed=0)


def run_model_suite(eps: float = 1e-5, tol: float = 1e-4) -> tuple:
    """FD-check d(loss)/d(theta) for every trainable tensor of the small
    double-precision model on one B=2 batch, with the decision matrix pinned
    from a pilot forward so the check targets the score-weighting path."""
    cfg = model_check_config()
    model = Model(cfg)
    records = gen_dataset(cfg, 0, 2)
    assert records[0].task_id != records[1].task_id  # exercise both experts

    pilot = model.forward_batch(records, seeded_rng(0, 1))
    t_a = pilot.fused.values.data.shape[1]
    assert t_a <= 12, t_a
    pinned = pilot.sac.decisions.data.copy()

    def loss_fn():
        out = model.forward_batch(records, seeded_rng(0, 1),
                                  saclm_decisions=pinned)
        return out.loss

    params = {name: t for name, t in model.store.trainable_items()}
    res = grad_check(loss_fn, params, eps=eps, tol=tol)
    report = [{"name": "combined_loss_all_trainables", "ok": res.passed,
               "max_rel_err": res.max_rel_err, "worst": res.worst[0],
               "n_params": int(sum(t.data.size for t in params.values()))}]
    return res.passed, report


def format_report(results: list) -> str:
    lines = []
    for r in results:
        status = "ok " if r["ok"] else "FAIL"
        extra = f"  worst={r['worst']}" if "worst" in r else ""
        lines.append(f"[{status}] {r['name']:<32} max_rel_err={r['max_rel_err']:.3e}{extra}")
    return "\n".join(lines)
