"""Run configuration: one flat key=value namespace covering model dimensions,
the synthetic task spec, and the training schedule.

The file format is deliberately dumb: `key = value` lines, `#` comments.
Unknown keys are an error so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # model dimensions
    d_model: int = 64
    d_text: int = 32
    n_queries: int = 1
    window_frames: int = 8
    n_experts: int = 3
    expert_hidden: int = 128
    score_hidden: int = 128
    agg_hidden: int = 128
    lora_rank: int = 8
    lm_layers: int = 2
    lm_heads: int = 4
    vocab_symbols: int = 32
    max_seq: int = 128
    prompt_vocab: int = 8
    threshold: float = 0.5
    eps_norm: float = 1e-8
    eps_agg: float = 1e-8
    dtype: str = "float32"
    model_seed: int = 0

    # mock encoder bank (window/stride/output channels per encoder)
    enc1_window: int = 16
    enc1_stride: int = 16
    enc1_dim: int = 8
    enc2_window: int = 32
    enc2_stride: int = 32
    enc2_dim: int = 8
    enc3_window: int = 64
    enc3_stride: int = 64
    enc3_dim: int = 8

    # synthetic task spec
    frames_per_token: int = 4
    noise_ratio: float = 0.3
    min_tokens: int = 3
    max_tokens: int = 8
    samples_per_frame: int = 16
    motif_seed: int = 7  # shared motif table across datasets of any seed
    data_seed: int = 0

    # training
    lr: float = 5e-5
    weight_decay: float = 1e-6
    warmup_ratio: float = 0.13
    batch_size: int = 8
    total_steps: int = 1000
    alpha_mix: float = 0.5
    lambda_sparsity: float = 0.01
    margin: float = 0.2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_exempt_bias_and_query: bool = True
    seed: int = 0

    # ablation switches
    disable_tapm: bool = False
    disable_saclm: bool = False
    zero_encoder: int = 0  # 0 = none, 1..3 = zero that encoder's block

    # derived token ids (32 content symbols, then the three specials)
    @property
    def bos_id(self) -> int:
        return self.vocab_symbols

    @property
    def eos_id(self) -> int:
        return self.vocab_symbols + 1

    @property
    def pad_id(self) -> int:
        return self.vocab_symbols + 2

    @property
    def vocab_total(self) -> int:
        return self.vocab_symbols + 3

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def validate(self):
        if not (0.0 < self.warmup_ratio < 1.0):
            raise ConfigError(f"warmup_ratio must lie in (0,1), got {self.warmup_ratio}")
        if not (0.0 <= self.alpha_mix <= 1.0):
            raise ConfigError(f"alpha_mix must lie in [0,1], got {self.alpha_mix}")
        if self.lora_rank >= self.d_model:
            raise ConfigError(f"lora_rank {self.lora_rank} must be < d_model {self.d_model}")
        if self.d_model % self.lm_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by lm_heads {self.lm_heads}")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigError(f"threshold must lie in (0,1), got {self.threshold}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.n_queries < 1 or self.window_frames < 1:
            raise ConfigError("n_queries and window_frames must be >= 1")
        if self.min_tokens < 1 or self.max_tokens < self.min_tokens:
            raise ConfigError("token length range is empty")
        if not (0.0 <= self.noise_ratio < 1.0):
            raise ConfigError(f"noise_ratio must lie in [0,1), got {self.noise_ratio}")
        for i, (w, s) in enumerate([(self.enc1_window, self.enc1_stride),
                                    (self.enc2_window, self.enc2_stride),
                                    (self.enc3_window, self.enc3_stride)], 1):
            if w < 1 or s < 1:
                raise ConfigError(f"encoder {i} window/stride must be >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_value(key, raw, typ):
    raw = raw.strip()
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, _FIELD_TYPES[key])
    return Config(**values).validate()


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: Config) -> str:
    lines = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def save_config(cfg: Config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))


def fingerprint(cfg: Config) -> str:
    """Content hash of the canonical serialization."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()
