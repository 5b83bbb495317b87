"""Transformer sequence classifier for fixed-length multi-channel windows.

Pipeline: per-timestep linear embedding into d_model, additive sinusoidal
positional encoding, a stack of post-norm encoder layers (bidirectional
multi-head self-attention + ReLU feed-forward, both with residuals), then
dot-product attention pooling that uses the final timestep's encoder output
as the query, and a linear classification head.

The head weight and all biases start at zero, so an untrained model emits
exactly uniform logits. Checkpoints are a config JSON plus one raw
little-endian float32 blob holding every parameter in the order returned
by ``TransformerClassifier.parameters()``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tz
from .data import ChannelScaler
from .errors import DataFormatError, ShapeError, UsageError
from .tensor import Tensor

CONFIG_NAME = "config.json"
PARAMS_NAME = "params.f32"


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table [length, d_model] (float32).

    pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same).
    """
    if d_model % 2 != 0:
        raise UsageError(f"positional encoding needs even d_model, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe.astype(np.float32)


@dataclass
class ModelConfig:
    window_length: int            # T
    n_channels: int               # S
    n_classes: int                # C
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 64
    attention_scaling: bool = True
    query_projection: bool = False

    def __post_init__(self):
        for name in ("window_length", "n_channels", "n_classes", "d_model",
                     "n_layers", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise UsageError(f"ModelConfig.{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise UsageError(
                f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}"
            )
        if self.d_model % 2 != 0:
            raise UsageError("d_model must be even for the positional encoding")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def parameter_count(self) -> int:
        d, ff, s, c = self.d_model, self.d_ff, self.n_channels, self.n_classes
        per_layer = 4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + 4 * d
        total = (s * d + d) + self.n_layers * per_layer + (d * c + c)
        if self.query_projection:
            total += d * d
        return total


class _EncoderLayer:
    """Post-norm encoder layer; owns its parameter tensors."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        d, ff = cfg.d_model, cfg.d_ff
        self.cfg = cfg
        self.wq = tz.uniform_init(rng, (d, d), d)
        self.bq = tz.zeros(d, requires_grad=True)
        self.wk = tz.uniform_init(rng, (d, d), d)
        self.bk = tz.zeros(d, requires_grad=True)
        self.wv = tz.uniform_init(rng, (d, d), d)
        self.bv = tz.zeros(d, requires_grad=True)
        self.wo = tz.uniform_init(rng, (d, d), d)
        self.bo = tz.zeros(d, requires_grad=True)
        self.w1 = tz.uniform_init(rng, (d, ff), d)
        self.b1 = tz.zeros(ff, requires_grad=True)
        self.w2 = tz.uniform_init(rng, (ff, d), ff)
        self.b2 = tz.zeros(d, requires_grad=True)
        self.ln1_g = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.ln1_b = tz.zeros(d, requires_grad=True)
        self.ln2_g = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.ln2_b = tz.zeros(d, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
                self.wo, self.bo, self.w1, self.b1, self.w2, self.b2,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Multi-head self-attention; returns (output, weights [B,H,T,T])."""
        cfg = self.cfg
        b, t, d = x.shape
        h, dk = cfg.n_heads, d // cfg.n_heads

        def heads(w, bias):
            proj = x @ w + bias
            return proj.reshape(b, t, h, dk).transpose(0, 2, 1, 3)

        q = heads(self.wq, self.bq)
        k = heads(self.wk, self.bk)
        v = heads(self.wv, self.bv)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        weights = tz.softmax(scores, axis=-1)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return ctx @ self.wo + self.bo, weights

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        attn_out, weights = self.attention(x)
        x = tz.layer_norm(x + attn_out, self.ln1_g, self.ln1_b)
        ff = tz.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2
        x = tz.layer_norm(x + ff, self.ln2_g, self.ln2_b)
        return x, weights


class TransformerClassifier:
    """Fig-style encoder classifier with attention pooling."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        self.embed_w = tz.uniform_init(rng, (cfg.n_channels, d), cfg.n_channels)
        self.embed_b = tz.zeros(d, requires_grad=True)
        self.pos = Tensor(positional_encoding(cfg.window_length, d))
        self.layers = [_EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.pool_wq = (
            tz.uniform_init(rng, (d, d), d) if cfg.query_projection else None
        )
        # zero head: uniform logits before the first update
        self.head_w = tz.zeros((d, cfg.n_classes), requires_grad=True)
        self.head_b = tz.zeros(cfg.n_classes, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        params = [self.embed_w, self.embed_b]
        for layer in self.layers:
            params.extend(layer.parameters())
        if self.pool_wq is not None:
            params.append(self.pool_wq)
        params.extend([self.head_w, self.head_b])
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- forward pieces ------------------------------------------------------

    def embed(self, x: Tensor) -> Tensor:
        """[B, T, S] -> [B, T, d]; the affine map is shared across time."""
        if x.ndim != 3 or x.shape[2] != self.cfg.n_channels:
            raise ShapeError(
                f"expected [B, T, {self.cfg.n_channels}] input, got {x.shape}"
            )
        return x @ self.embed_w + self.embed_b

    def attention_pool(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """Collapse [B, T, d] to [B, d] with final-timestep-query attention.

        Returns (pooled, weights [B, T, 1]).
        """
        b, t, d = h.shape
        q = h[:, t - 1, :]
        if self.pool_wq is not None:
            q = q @ self.pool_wq
        scores = h @ q.reshape(b, d, 1)
        if self.cfg.attention_scaling:
            scores = scores * (1.0 / np.sqrt(d))
        weights = tz.softmax(scores, axis=1)
        pooled = (weights * h).sum(axis=1)
        return pooled, weights

    def forward(self, x, return_attention: bool = False):
        """Logits [B, C] for input [B, T, S].

        With ``return_attention`` also returns a dict carrying per-layer
        attention weights and the pooling weights (as numpy arrays).
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != cfg.window_length or x.shape[2] != cfg.n_channels:
            raise ShapeError(
                f"expected [B, {cfg.window_length}, {cfg.n_channels}] input, "
                f"got {x.shape}"
            )
        h = self.embed(x) + self.pos
        attn: list[np.ndarray] = []
        for layer in self.layers:
            h, weights = layer.forward(h)
            if return_attention:
                attn.append(weights.data.copy())
        pooled, pool_w = self.attention_pool(h)
        logits = pooled @ self.head_w + self.head_b
        if return_attention:
            return logits, {"layers": attn, "pool": pool_w.data.copy()}
        return logits

    def predict(self, samples: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Argmax class per sample, computed without graph recording."""
        out = np.empty(samples.shape[0], dtype=np.int64)
        with tz.no_grad():
            for start in range(0, samples.shape[0], batch_size):
                chunk = samples[start:start + batch_size]
                logits = self.forward(chunk)
                out[start:start + chunk.shape[0]] = np.argmax(logits.data, axis=1)
        return out


# -- checkpoints ---------------------------------------------------------


def save_checkpoint(model: TransformerClassifier, path: str,
                    scaler: ChannelScaler | None = None,
                    class_names: list[str] | None = None,
                    extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    blob = b"".join(
        np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        for p in model.parameters()
    )
    meta = {
        "kind": "transformer",
        "model": model.cfg.to_dict(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "class_names": class_names,
        "extra": extra or {},
    }
    with open(os.path.join(path, PARAMS_NAME), "wb") as f:
        f.write(blob)
    with open(os.path.join(path, CONFIG_NAME), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)


def load_checkpoint(path: str) -> tuple[TransformerClassifier, ChannelScaler | None, dict]:
    cfg_path = os.path.join(path, CONFIG_NAME)
    blob_path = os.path.join(path, PARAMS_NAME)
    if not os.path.isfile(cfg_path):
        raise DataFormatError(f"missing {CONFIG_NAME} in {path}")
    with open(cfg_path, encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("kind") != "transformer":
        raise DataFormatError(
            f"checkpoint at {path} is kind={meta.get('kind')!r}, not transformer"
        )
    cfg = ModelConfig.from_dict(meta["model"])
    model = TransformerClassifier(cfg, seed=0)
    expected = model.parameter_count() * 4
    if not os.path.isfile(blob_path):
        raise DataFormatError(f"missing {PARAMS_NAME} in {path}")
    actual = os.path.getsize(blob_path)
    if actual != expected:
        raise DataFormatError(
            f"{PARAMS_NAME} in {path}: expected {expected} bytes, found {actual}"
        )
    with open(blob_path, "rb") as f:
        flat = np.frombuffer(f.read(), dtype="<f4")
    offset = 0
    for p in model.parameters():
        p.data = flat[offset:offset + p.size].reshape(p.shape).copy()
        offset += p.size
    scaler = (
        ChannelScaler.from_dict(meta["scaler"]) if meta.get("scaler") else None
    )
    return model, scaler, meta
