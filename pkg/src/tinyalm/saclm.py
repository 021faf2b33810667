"""Semantic contrastive loss over projected audio features: score each frame
against the time-aligned target-text embedding, select frames by hard
threshold (straight-through gradient), aggregate the survivors into one
vector, and pull it toward the matching text while pushing it from an
in-batch negative. A sparsity term keeps the scores low."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, concat, cosine_distance, div,
                       interp_linear, linear, mean, mul, relu, reshape,
                       scale, sigmoid, slice_, stack, ste_threshold, sub,
                       sum_)
from .config import Config, ConfigError
from .params import ParamStore, seeded_rng


@dataclass
class SaclmOutput:
    scores: Tensor          # S [B, T_a] in (0,1)
    decisions: Tensor       # D [B, T_a] in {0,1}
    aggregated: Tensor      # phi' [B, d_model]
    loss_triplet: Tensor    # scalar
    loss_sparsity: Tensor   # scalar
    loss_sac: Tensor        # scalar
    fallback_count: int     # rows where no score cleared the threshold
    negative_perm: np.ndarray


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Sattolo's algorithm: a uniformly random cyclic permutation, which by
    construction has no fixed points."""
    if n < 2:
        raise ConfigError("negative sampling needs batch size >= 2")
    arr = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        arr[i], arr[j] = arr[j], arr[i]
    return arr


class Saclm:
    def __init__(self, cfg: Config, store: ParamStore):
        self.cfg = cfg
        d, hid, dt = cfg.d_model, cfg.score_hidden, cfg.np_dtype
        rng = seeded_rng(cfg.model_seed, 400)

        def reg(name, arr):
            t = Tensor(arr.astype(dt), requires_grad=True)
            store.register(f"saclm.{name}", t, trainable=True)
            return t

        self.score_w1 = reg("score.w1", rng.standard_normal((2 * d, hid)) / np.sqrt(2 * d))
        self.score_b1 = reg("score.b1", np.zeros(hid))
        self.score_w2 = reg("score.w2", rng.standard_normal((hid, 1)) / np.sqrt(hid))
        self.score_b2 = reg("score.b2", np.zeros(1))
        ah = cfg.agg_hidden
        self.agg_w1 = reg("agg.w1", rng.standard_normal((d, ah)) / np.sqrt(d))
        self.agg_b1 = reg("agg.b1", np.zeros(ah))
        self.agg_w2 = reg("agg.w2", rng.standard_normal((ah, d)) / np.sqrt(ah))
        self.agg_b2 = reg("agg.b2", np.zeros(d))

    def align_text(self, text_embeds: list, t_a: int) -> Tensor:
        """Resample each example's [T_t, d] text embedding to t_a rows."""
        return stack([interp_linear(te, t_a) for te in text_embeds], axis=0)

    def score(self, phi: Tensor, aligned: Tensor) -> Tensor:
        b, t_a, _ = phi.shape
        x = concat([phi, aligned], axis=-1)
        h = relu(linear(x, self.score_w1, self.score_b1))
        s = sigmoid(linear(h, self.score_w2, self.score_b2))
        return reshape(s, (b, t_a))

    def decide(self, s: Tensor):
        d = ste_threshold(s, self.cfg.threshold)
        row_sums = d.data.sum(axis=1)
        empty = np.where(row_sums == 0)[0]
        if empty.size:
            fb = np.zeros_like(d.data)
            fb[empty, s.data[empty].argmax(axis=1)] = 1.0
            d = add(d, Tensor(fb))
        return d, int(empty.size)

    def agg_net(self, phi: Tensor) -> Tensor:
        return linear(relu(linear(phi, self.agg_w1, self.agg_b1)),
                      self.agg_w2, self.agg_b2)

    def aggregate(self, phi: Tensor, s: Tensor, d: Tensor) -> Tensor:
        """Score-weighted mean of the selected frames' aggregated vectors."""
        b, t_a, _ = phi.shape
        w = reshape(mul(d, s), (b, t_a, 1))
        num = sum_(mul(self.agg_net(phi), w), axis=1)
        den = add(sum_(w, axis=1), Tensor(np.asarray(self.cfg.eps_agg,
                                                     dtype=phi.dtype)))
        return div(num, den)

    def sample_negatives(self, pooled: Tensor, rng: np.random.Generator):
        perm = derangement(pooled.shape[0], rng)
        return slice_(pooled, (perm,)), perm

    def triplet(self, phi_p: Tensor, t_pos: Tensor, t_neg: Tensor) -> Tensor:
        m = Tensor(np.asarray(self.cfg.margin, dtype=phi_p.dtype))
        hinges = []
        for b in range(phi_p.shape[0]):
            anchor = slice_(phi_p, b)
            d_pos = cosine_distance(anchor, slice_(t_pos, b), self.cfg.eps_norm)
            d_neg = cosine_distance(anchor, slice_(t_neg, b), self.cfg.eps_norm)
            hinges.append(relu(add(sub(d_pos, d_neg), m)))
        return mean(stack(hinges))

    def forward(self, phi: Tensor, text_embeds: list,
                rng: np.random.Generator, decisions=None) -> SaclmOutput:
        """phi: [B, T_a, d_model]; text_embeds: per-example [T_t, d_model].

        `decisions` pins D to a fixed array instead of thresholding S. The
        straight-through estimator's backward is the identity, not the true
        (zero a.e.) derivative, so finite-difference checks of the full loss
        must hold D constant; everything else remains exactly differentiable.
        """
        b = phi.shape[0]
        if b < 2:
            raise ConfigError("SACLM requires batch size >= 2 for in-batch "
                              "negatives")
        aligned = self.align_text(text_embeds, phi.shape[1])
        s = self.score(phi, aligned)
        if decisions is not None:
            d, fallback = Tensor(np.asarray(decisions, dtype=s.dtype)), 0
        else:
            d, fallback = self.decide(s)
        phi_p = self.aggregate(phi, s, d)
        pooled = stack([mean(te, axis=0) for te in text_embeds], axis=0)
        neg, perm = self.sample_negatives(pooled, rng)
        loss_t = self.triplet(phi_p, pooled, neg)
        loss_s = scale(mean(s), self.cfg.lambda_sparsity)
        return SaclmOutput(scores=s, decisions=d, aggregated=phi_p,
                           loss_triplet=loss_t, loss_sparsity=loss_s,
                           loss_sac=add(loss_t, loss_s),
                           fallback_count=fallback, negative_perm=perm)
