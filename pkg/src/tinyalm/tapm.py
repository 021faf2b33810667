"""Task-aware projection: a router turns the prompt embedding into softmax
weights over three expert MLPs, and the projected features are the dense
weighted combination of all expert outputs, applied per frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, add, embedding_lookup, linear, matmul, mean,
                       mul, relu, reshape, slice_, softmax)
from .config import Config
from .params import ParamStore, seeded_rng


@dataclass
class ProjectedFeatures:
    values: Tensor           # [B, L, d_model]
    routing_weights: Tensor  # [B, n_experts], rows on the simplex


class Tapm:
    def __init__(self, cfg: Config, store: ParamStore):
        self.cfg = cfg
        d, dt = cfg.d_model, cfg.np_dtype
        hid = cfg.expert_hidden
        rng = seeded_rng(cfg.model_seed, 300)

        def reg(name, arr):
            t = Tensor(arr.astype(dt), requires_grad=True)
            store.register(f"tapm.{name}", t, trainable=True)
            return t

        self.task_embed = reg("task_embed",
                              rng.standard_normal((2, cfg.d_text)) * 0.02)
        self.prompt_embed = reg("prompt_embed",
                                rng.standard_normal((cfg.prompt_vocab, cfg.d_text)) * 0.02)
        self.router = reg("router",
                          rng.standard_normal((cfg.d_text, cfg.n_experts)) * 0.02)
        self.experts = []
        for i in range(cfg.n_experts):
            w1 = reg(f"expert{i}.w1", rng.standard_normal((d, hid)) / np.sqrt(d))
            b1 = reg(f"expert{i}.b1", np.zeros(hid))
            w2 = reg(f"expert{i}.w2", rng.standard_normal((hid, d)) / np.sqrt(hid))
            b2 = reg(f"expert{i}.b2", np.zeros(d))
            self.experts.append((w1, b1, w2, b2))

    def e_text(self, task_ids: np.ndarray, prompt_ids: np.ndarray) -> Tensor:
        """Prompt embedding: per-task vector plus mean of prompt token vectors."""
        task = embedding_lookup(self.task_embed, np.asarray(task_ids))
        toks = embedding_lookup(self.prompt_embed, np.asarray(prompt_ids))
        return add(task, mean(toks, axis=1))

    def route(self, e_text: Tensor) -> Tensor:
        return softmax(matmul(e_text, self.router), axis=-1)

    def expert_apply(self, i: int, z: Tensor) -> Tensor:
        w1, b1, w2, b2 = self.experts[i]
        return linear(relu(linear(z, w1, b1)), w2, b2)

    def project(self, z: Tensor, w: Tensor) -> Tensor:
        """Dense combination: every expert runs, outputs weighted by w."""
        batch = z.shape[0]
        out = None
        for i in range(self.cfg.n_experts):
            wi = reshape(slice_(w, (slice(None), slice(i, i + 1))), (batch, 1, 1))
            term = mul(self.expert_apply(i, z), wi)
            out = term if out is None else add(out, term)
        return out

    def forward(self, z: Tensor, task_ids, prompt_ids) -> ProjectedFeatures:
        w = self.route(self.e_text(task_ids, prompt_ids))
        return ProjectedFeatures(values=self.project(z, w), routing_weights=w)
