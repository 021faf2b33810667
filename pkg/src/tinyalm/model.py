"""Full pipeline: frozen encoder bank -> input projection -> window
Q-Former -> prompt-routed expert projection -> (a) frozen decoder with LoRA
for token cross-entropy and (b) contrastive frame scoring. Ablation flags
bypass exactly one stage each."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, concat, embedding_lookup, linear, scale
from .config import Config
from .data import Record
from .encoders import EncoderBank, FusedFeatures
from .lm import SequenceBatch, ToyDecoder, build_sequence, ce_loss
from .params import ParamStore, seeded_rng
from .qformer import InputProjection, QueryFeatures, WindowQFormer
from .saclm import Saclm, SaclmOutput
from .tapm import Tapm


@dataclass
class ForwardOut:
    loss: Tensor
    loss_ce: Tensor
    sac: SaclmOutput        # None when SACLM is disabled or skipped
    routing: Tensor         # [B, n_experts] or None when TAPM is disabled
    logits: Tensor
    seq: SequenceBatch
    fused: FusedFeatures
    zfeat: QueryFeatures
    phi: Tensor


def trainable_param_formula(cfg: Config, fused_dim: int) -> int:
    """Analytic count of every trainable tensor the model registers."""
    d, dt_ = cfg.d_model, cfg.d_text
    h, hs, ha = cfg.expert_hidden, cfg.score_hidden, cfg.agg_hidden
    inproj = fused_dim * d + d          # fused-width adapter
    inproj += d * d + d                 # audio-to-decoder adapter
    inproj += cfg.prompt_vocab * d      # prompt embedding on the decoder side
    qf = cfg.n_queries * d + 8 * d * d + 3 * 2 * d
    tapm = 2 * dt_ + cfg.prompt_vocab * dt_ + dt_ * cfg.n_experts
    tapm += cfg.n_experts * (d * h + h + h * d + d)
    saclm = (2 * d) * hs + hs + hs * 1 + 1
    saclm += d * ha + ha + ha * d + d
    lora = cfg.lm_layers * 2 * (d * cfg.lora_rank + cfg.lora_rank * d)
    return inproj + qf + tapm + saclm + lora


class Model:
    def __init__(self, cfg: Config):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        self.encoders = EncoderBank(cfg, self.store)
        self.inproj = InputProjection(cfg, self.store, self.encoders.fused_dim)
        self.qformer = WindowQFormer(cfg, self.store)
        self.tapm = Tapm(cfg, self.store)
        self.saclm = Saclm(cfg, self.store)
        self.decoder = ToyDecoder(cfg, self.store)

        d, dt = cfg.d_model, cfg.np_dtype
        rng = seeded_rng(cfg.model_seed, 600)
        self.audio_w = Tensor((rng.standard_normal((d, d)) / np.sqrt(d)).astype(dt),
                              requires_grad=True)
        self.audio_b = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        self.lm_prompt_embed = Tensor(
            (rng.standard_normal((cfg.prompt_vocab, d)) * 0.02).astype(dt),
            requires_grad=True)
        self.store.register("inproj.audio.weight", self.audio_w, trainable=True)
        self.store.register("inproj.audio.bias", self.audio_b, trainable=True)
        self.store.register("inproj.prompt_embed", self.lm_prompt_embed,
                            trainable=True)

    def trainable_count(self) -> int:
        return sum(t.data.size for _, t in self.store.trainable_items())

    def audio_window_valid(self, mask: np.ndarray) -> np.ndarray:
        """[B, n_win * N]: window positions backed by at least one real frame."""
        b, t = mask.shape
        w = self.cfg.window_frames
        n_win = self.qformer.n_windows(t)
        padded = np.zeros((b, n_win * w), dtype=mask.dtype)
        padded[:, :t] = mask
        valid = (padded.reshape(b, n_win, w).sum(axis=2) > 0)
        return np.repeat(valid, self.cfg.n_queries,
                         axis=1).astype(self.cfg.np_dtype)

    def audio_len_bound(self) -> int:
        """Largest audio-prefix length the data spec can produce.

        The decoder uses absolute positions, so the audio segment is padded
        to this bound (pad slots key-masked): prompt and text tokens then sit
        at the same positions in every batch and during greedy decoding.
        """
        cfg = self.cfg
        n_signal = cfg.max_tokens * cfg.frames_per_token
        rho = cfg.noise_ratio
        n_noise = int(round(n_signal * rho / (1.0 - rho))) if rho > 0 else 0
        max_samples = (n_signal + n_noise) * cfg.samples_per_frame
        t_max = max(e.out_length(max_samples) for e in self.encoders.encoders)
        return self.qformer.n_windows(t_max) * cfg.n_queries

    def pad_audio(self, audio_prefix: Tensor, audio_valid: np.ndarray):
        """Right-pad the audio segment to the fixed positional bound."""
        b, l, d = audio_prefix.shape
        bound = max(self.audio_len_bound(), l)
        if l < bound:
            pad = Tensor(np.zeros((b, bound - l, d), dtype=self.cfg.np_dtype))
            audio_prefix = concat([audio_prefix, pad], axis=1)
            audio_valid = np.concatenate(
                [audio_valid, np.zeros((b, bound - l), dtype=audio_valid.dtype)],
                axis=1)
        return audio_prefix, audio_valid

    def forward_batch(self, records: list, rng: np.random.Generator,
                      compute_saclm: bool = True,
                      saclm_decisions=None) -> ForwardOut:
        cfg = self.cfg
        fused = self.encoders.encode_all([r.samples for r in records],
                                         zero_encoder=cfg.zero_encoder)
        proj = self.inproj(fused.values)
        zfeat = self.qformer.forward(proj, fused.mask)

        task_ids = np.array([r.task_id for r in records])
        prompt_ids = np.stack([r.prompt_ids for r in records])
        if cfg.disable_tapm:
            phi, routing = zfeat.values, None
        else:
            projected = self.tapm.forward(zfeat.values, task_ids, prompt_ids)
            phi, routing = projected.values, projected.routing_weights

        audio_prefix = linear(phi, self.audio_w, self.audio_b)
        audio_valid = self.audio_window_valid(fused.mask)
        audio_prefix, audio_valid = self.pad_audio(audio_prefix, audio_valid)
        prompt_vecs = embedding_lookup(self.lm_prompt_embed, prompt_ids)
        targets = [list(map(int, r.targets)) for r in records]
        seq = build_sequence(cfg, self.decoder, audio_prefix, audio_valid,
                             prompt_vecs, targets)
        logits = self.decoder.forward(seq.hidden, seq.key_valid)
        l_ce = ce_loss(logits, seq.labels, seq.loss_mask)

        sac = None
        if compute_saclm and not cfg.disable_saclm:
            text_embeds = [self.decoder.embed_tokens(r.targets)
                           for r in records]
            sac = self.saclm.forward(phi, text_embeds, rng,
                                     decisions=saclm_decisions)
            loss = add(scale(l_ce, cfg.alpha_mix),
                       scale(sac.loss_sac, 1.0 - cfg.alpha_mix))
        else:
            loss = l_ce
        return ForwardOut(loss=loss, loss_ce=l_ce, sac=sac, routing=routing,
                          logits=logits, seq=seq, fused=fused, zfeat=zfeat,
                          phi=phi)

    def greedy_decode(self, record: Record, max_new: int = None) -> list:
        """Argmax decoding of one example; ties resolve to the lowest id."""
        cfg = self.cfg
        if max_new is None:
            max_new = cfg.max_tokens + 2
        fused = self.encoders.encode_all([record.samples],
                                         zero_encoder=cfg.zero_encoder)
        proj = self.inproj(fused.values)
        zfeat = self.qformer.forward(proj, fused.mask)
        task_ids = np.array([record.task_id])
        prompt_ids = record.prompt_ids[None, :]
        if cfg.disable_tapm:
            phi = zfeat.values
        else:
            phi = self.tapm.forward(zfeat.values, task_ids, prompt_ids).values
        audio_prefix = linear(phi, self.audio_w, self.audio_b)
        audio_valid = self.audio_window_valid(fused.mask)
        audio_prefix, audio_valid = self.pad_audio(audio_prefix, audio_valid)
        prompt_vecs = embedding_lookup(self.lm_prompt_embed, prompt_ids)

        out = []
        tokens = [cfg.bos_id]
        for _ in range(max_new):
            text = self.decoder.embed_tokens(np.array([tokens]))
            hidden = concat([audio_prefix, prompt_vecs, text], axis=1)
            key_valid = np.concatenate(
                [audio_valid, np.ones((1, prompt_vecs.shape[1] + len(tokens)),
                                      dtype=cfg.np_dtype)], axis=1)
            logits = self.decoder.forward(hidden, key_valid)
            nxt = int(np.argmax(logits.data[0, -1]))
            out.append(nxt)
            if nxt == cfg.eos_id:
                break
            tokens.append(nxt)
        return out
