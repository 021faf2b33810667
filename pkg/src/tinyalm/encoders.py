"""Frozen mock encoder bank: three random linear framers with distinct
window/stride/width, standing in for heavyweight pretrained speech, audio
event, and music encoders. Their outputs are zero-padded to a common length
and concatenated along the channel axis, with a validity mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import Config
from .params import ParamStore, seeded_rng


@dataclass
class FusedFeatures:
    """Channel-concatenated encoder outputs for one batch."""
    values: Tensor            # [B, T, D_u], padded positions exactly 0
    mask: np.ndarray          # [B, T], 1.0 where at least one encoder is valid
    valid_lengths: np.ndarray  # [B, 3] per-encoder frame counts


class MockEncoder:
    """Frames a waveform and applies a frozen random projection."""

    def __init__(self, window: int, stride: int, dim: int, proj: Tensor):
        self.window = window
        self.stride = stride
        self.dim = dim
        self.proj = proj  # [window, dim], frozen

    def out_length(self, n_samples: int) -> int:
        return (n_samples - self.window) // self.stride + 1

    def encode(self, samples: np.ndarray) -> np.ndarray:
        """[T_i, dim] frames; frame t covers samples[t*stride : t*stride+window]."""
        if samples.shape[0] < self.window:
            raise ValueError(f"waveform of {samples.shape[0]} samples is shorter "
                             f"than encoder window {self.window}")
        frames = np.lib.stride_tricks.sliding_window_view(samples, self.window)
        frames = frames[::self.stride]
        return frames @ self.proj.data


class EncoderBank:
    def __init__(self, cfg: Config, store: ParamStore):
        self.cfg = cfg
        dt = cfg.np_dtype
        specs = [(cfg.enc1_window, cfg.enc1_stride, cfg.enc1_dim),
                 (cfg.enc2_window, cfg.enc2_stride, cfg.enc2_dim),
                 (cfg.enc3_window, cfg.enc3_stride, cfg.enc3_dim)]
        self.encoders = []
        for i, (window, stride, dim) in enumerate(specs, 1):
            rng = seeded_rng(cfg.model_seed, 100 + i)
            proj = Tensor((rng.standard_normal((window, dim))
                           / np.sqrt(window)).astype(dt))
            store.register(f"encoders.enc{i}.proj", proj, trainable=False)
            self.encoders.append(MockEncoder(window, stride, dim, proj))

    @property
    def fused_dim(self) -> int:
        return sum(e.dim for e in self.encoders)

    def encode_all(self, waves: list[np.ndarray], zero_encoder: int = 0) -> FusedFeatures:
        """Pad each encoder's frames to the batch-wide max length and
        concatenate along channels. zero_encoder=i blanks that encoder's
        channel block (ablation hook) without touching mask or lengths."""
        dt = self.cfg.np_dtype
        batch = len(waves)
        valid = np.zeros((batch, 3), dtype=np.int64)
        outs = []
        for b, wave in enumerate(waves):
            wave = np.asarray(wave, dtype=dt)
            row = []
            for i, enc in enumerate(self.encoders):
                frames = enc.encode(wave)
                valid[b, i] = frames.shape[0]
                row.append(frames)
            outs.append(row)

        t_max = int(valid.max())
        fused = np.zeros((batch, t_max, self.fused_dim), dtype=dt)
        mask = np.zeros((batch, t_max), dtype=dt)
        for b in range(batch):
            off = 0
            for i, enc in enumerate(self.encoders):
                frames = outs[b][i]
                fused[b, :frames.shape[0], off:off + enc.dim] = frames
                off += enc.dim
            mask[b, :valid[b].max()] = 1.0

        if zero_encoder:
            off = sum(e.dim for e in self.encoders[:zero_encoder - 1])
            fused[:, :, off:off + self.encoders[zero_encoder - 1].dim] = 0.0

        return FusedFeatures(values=Tensor(fused), mask=mask, valid_lengths=valid)
