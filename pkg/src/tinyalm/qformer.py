"""Window-level query transformer. A small bank of trainable query vectors
attends to each fixed-size window of fused encoder frames, so the output
length grows with the input: ceil(T/W) windows times N queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (MASK_NEG, Tensor, add, concat, layer_norm, linear,
                       matmul, mul, reshape, scale, softmax, transpose)
from .config import Config
from .params import ParamStore, seeded_rng


@dataclass
class QueryFeatures:
    values: Tensor            # [B, n_windows * N, d_model]
    window_index: np.ndarray  # [n_windows * N] source window per output position
    empty_windows: int        # windows with zero valid frames (diagnostic)


class InputProjection:
    """Per-frame linear adapter from fused encoder width to model width."""

    def __init__(self, cfg: Config, store: ParamStore, fused_dim: int):
        dt = cfg.np_dtype
        rng = seeded_rng(cfg.model_seed, 200)
        self.weight = Tensor((rng.standard_normal((fused_dim, cfg.d_model))
                              / math.sqrt(fused_dim)).astype(dt), requires_grad=True)
        self.bias = Tensor(np.zeros(cfg.d_model, dtype=dt), requires_grad=True)
        store.register("inproj.weight", self.weight, trainable=True)
        store.register("inproj.bias", self.bias, trainable=True)

    def __call__(self, u: Tensor) -> Tensor:
        return linear(u, self.weight, self.bias)


class WindowQFormer:
    def __init__(self, cfg: Config, store: ParamStore):
        self.cfg = cfg
        self.n_queries = cfg.n_queries
        self.window = cfg.window_frames
        d = cfg.d_model
        dt = cfg.np_dtype
        rng = seeded_rng(cfg.model_seed, 201)

        def w(name, shape, std=0.02, trainable=True):
            t = Tensor((rng.standard_normal(shape) * std).astype(dt),
                       requires_grad=trainable)
            store.register(f"qformer.{name}", t, trainable=trainable)
            return t

        def ln(name):
            g = Tensor(np.ones(d, dtype=dt), requires_grad=True)
            b = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
            store.register(f"qformer.{name}.gain", g, trainable=True)
            store.register(f"qformer.{name}.bias", b, trainable=True)
            return g, b

        self.query = w("query", (cfg.n_queries, d))
        self.self_ln = ln("self_ln")
        self.self_wq = w("self.wq", (d, d))
        self.self_wk = w("self.wk", (d, d))
        self.self_wv = w("self.wv", (d, d))
        self.self_wo = w("self.wo", (d, d))
        self.cross_ln = ln("cross_ln")
        self.cross_wq = w("cross.wq", (d, d))
        self.cross_wk = w("cross.wk", (d, d))
        self.cross_wv = w("cross.wv", (d, d))
        self.cross_wo = w("cross.wo", (d, d))
        self.out_ln = ln("out_ln")
        self.last_cross_weights = None  # [B, n_win, N, W] probe, numpy

    def n_windows(self, t: int) -> int:
        return -(-t // self.window)

    def forward(self, proj_u: Tensor, mask: np.ndarray) -> QueryFeatures:
        """proj_u: [B, T, d_model]; mask: [B, T] with 1.0 at valid frames."""
        batch, t, d = proj_u.shape
        if t < 1:
            raise ValueError("qformer requires at least one input frame")
        w_len = self.window
        n_win = self.n_windows(t)
        n_q = self.n_queries
        dt = proj_u.dtype

        pad = n_win * w_len - t
        if pad:
            zeros = Tensor(np.zeros((batch, pad, d), dtype=dt))
            proj_u = concat([proj_u, zeros], axis=1)
            mask = np.concatenate([mask, np.zeros((batch, pad), dtype=mask.dtype)],
                                  axis=1)
        u_w = reshape(proj_u, (batch * n_win, w_len, d))
        mask_w = mask.reshape(batch * n_win, w_len)
        has_valid = (mask_w.sum(axis=1) > 0).astype(dt)
        empty = int((has_valid == 0).sum())

        # broadcast against zeros to tile the query bank per window
        q0 = add(self.query, Tensor(np.zeros((batch * n_win, n_q, d), dtype=dt)))
        inv_scale = 1.0 / math.sqrt(d)

        h = layer_norm(q0, *self.self_ln)
        att = softmax(scale(matmul(matmul(h, self.self_wq),
                                   transpose(matmul(h, self.self_wk), (0, 2, 1))),
                            inv_scale), axis=-1)
        q1 = add(q0, matmul(matmul(att, matmul(h, self.self_wv)), self.self_wo))

        h2 = layer_norm(q1, *self.cross_ln)
        keys = matmul(u_w, self.cross_wk)
        vals = matmul(u_w, self.cross_wv)
        scores = scale(matmul(matmul(h2, self.cross_wq),
                              transpose(keys, (0, 2, 1))), inv_scale)
        # additive mask: invalid frames pushed to MASK_NEG, exp underflows to 0
        mask_add = np.where(mask_w > 0, 0.0, MASK_NEG).astype(dt)
        scores = add(scores, Tensor(mask_add[:, None, :]))
        cross = softmax(scores, axis=-1)
        attended = matmul(matmul(cross, vals), self.cross_wo)
        # empty windows contribute nothing: the self-attended query passes through
        q2 = add(q1, mul(attended, Tensor(has_valid[:, None, None])))

        z = layer_norm(q2, *self.out_ln)
        z = reshape(z, (batch, n_win * n_q, d))
        self.last_cross_weights = cross.data.reshape(batch, n_win, n_q, w_len).copy()
        window_index = np.repeat(np.arange(n_win), n_q)
        return QueryFeatures(values=z, window_index=window_index,
                             empty_windows=empty)
