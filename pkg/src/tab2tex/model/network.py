"""Image-to-sequence models: residual CNN feature extractor, transformer
encoder/decoder, and the three attention variants.

RT uses plain scaled-dot attention everywhere. FGRT applies the sigmoidal
attention gate to self-attention and cross-attention sublayers; PGRT gates
cross-attention only. The gate combines the query and the attended result
through two linear maps: an information vector and a multiplicative gate.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from ..errors import ShapeError
from ..tokens import TokenSequence, Vocabulary
from . import autodiff as ad
from .autodiff import Tensor

STRIDE_STAGES = 4  # 2^4 = total stride 16


class Variant(Enum):
    RT = "rt"
    FGRT = "fgrt"
    PGRT = "pgrt"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    n_enc_layers: int = 4
    n_dec_layers: int = 8
    n_heads: int = 8
    ffn_dim: int | None = None
    dropout: float = 0.1
    label_smoothing: float = 0.1
    variant: Variant = Variant.RT
    cnn_channels: tuple[int, ...] = (32, 64, 128, 256)
    image_size: int = 400
    max_decode_len: int = 250
    warmup: int = 4000
    lr_scale: float = 0.1
    gating_enabled: bool = True
    # per-sublayer overrides; None derives the site from the variant
    gate_encoder_self: bool | None = None
    gate_decoder_self: bool | None = None
    gate_cross: bool | None = None
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.label_smoothing < 1.0):
            raise ValueError("dropout and label smoothing must be in [0, 1)")
        if len(self.cnn_channels) != STRIDE_STAGES:
            raise ValueError("cnn channel schedule must have 4 stride-2 stages")
        if self.image_size % 16:
            raise ValueError("image size must be divisible by 16")

    @property
    def ffn(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.d_model

    @property
    def grid(self) -> int:
        return self.image_size // 16

    @property
    def n_positions(self) -> int:
        return self.grid * self.grid

    def _site(self, override: bool | None, default: bool) -> bool:
        if not self.gating_enabled:
            return False
        return default if override is None else override

    @property
    def gates_encoder_self(self) -> bool:
        return self._site(self.gate_encoder_self, self.variant is Variant.FGRT)

    @property
    def gates_decoder_self(self) -> bool:
        return self._site(self.gate_decoder_self, self.variant is Variant.FGRT)

    @property
    def gates_cross(self) -> bool:
        return self._site(self.gate_cross,
                          self.variant in (Variant.FGRT, Variant.PGRT))

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def with_gating(self, enabled: bool) -> "ModelConfig":
        return replace(self, gating_enabled=enabled)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_enc_layers": self.n_enc_layers,
            "n_dec_layers": self.n_dec_layers,
            "n_heads": self.n_heads,
            "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
            "label_smoothing": self.label_smoothing,
            "variant": self.variant.value,
            "cnn_channels": list(self.cnn_channels),
            "image_size": self.image_size,
            "max_decode_len": self.max_decode_len,
            "warmup": self.warmup,
            "lr_scale": self.lr_scale,
            "gating_enabled": self.gating_enabled,
            "gate_encoder_self": self.gate_encoder_self,
            "gate_decoder_self": self.gate_decoder_self,
            "gate_cross": self.gate_cross,
            "dtype": self.dtype,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["variant"] = Variant(d["variant"])
        d["cnn_channels"] = tuple(d["cnn_channels"])
        return cls(**d)


Params = dict[str, Tensor]


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # per-name seeding keeps shared parameters identical across variants
    return np.random.default_rng((seed * 0x9E3779B1 + zlib.crc32(name.encode())) % 2**32)


def _weight(params: Params, config: ModelConfig, name: str,
            shape: tuple[int, ...]) -> None:
    rng = _param_rng(config.seed, name)
    scale = 1.0 / np.sqrt(shape[0])
    params[name] = Tensor(
        rng.normal(0.0, scale, shape).astype(config.np_dtype()),
        requires_grad=True)


def _zeros(params: Params, config: ModelConfig, name: str,
           shape: tuple[int, ...]) -> None:
    params[name] = Tensor(np.zeros(shape, dtype=config.np_dtype()),
                          requires_grad=True)


def _ones(params: Params, config: ModelConfig, name: str,
          shape: tuple[int, ...]) -> None:
    params[name] = Tensor(np.ones(shape, dtype=config.np_dtype()),
                          requires_grad=True)


def _gate_params(params: Params, config: ModelConfig, prefix: str) -> None:
    d = config.d_model
    _weight(params, config, f"{prefix}.wqg", (d, d))
    _weight(params, config, f"{prefix}.wvg", (d, d))
    _zeros(params, config, f"{prefix}.bg", (d,))
    _weight(params, config, f"{prefix}.wqi", (d, d))
    _weight(params, config, f"{prefix}.wvi", (d, d))
    _zeros(params, config, f"{prefix}.bi", (d,))


def _attn_params(params: Params, config: ModelConfig, prefix: str) -> None:
    d = config.d_model
    for n in ("wq", "wk", "wv", "wo"):
        _weight(params, config, f"{prefix}.{n}", (d, d))
        _zeros(params, config, f"{prefix}.b{n[1]}", (d,))


def _ln_params(params: Params, config: ModelConfig, prefix: str) -> None:
    _ones(params, config, f"{prefix}.g", (config.d_model,))
    _zeros(params, config, f"{prefix}.b", (config.d_model,))


def _ffn_params(params: Params, config: ModelConfig, prefix: str) -> None:
    d, f = config.d_model, config.ffn
    _weight(params, config, f"{prefix}.w1", (d, f))
    _zeros(params, config, f"{prefix}.b1", (f,))
    _weight(params, config, f"{prefix}.w2", (f, d))
    _zeros(params, config, f"{prefix}.b2", (d,))


def init_params(config: ModelConfig) -> Params:
    """All learnable tensors, deterministically initialized per name."""
    params: Params = {}
    cin = 1
    for s, cout in enumerate(config.cnn_channels):
        _weight(params, config, f"cnn{s}.down_w", (cin * 9, cout))
        _zeros(params, config, f"cnn{s}.down_b", (cout,))
        _weight(params, config, f"cnn{s}.res_w1", (cout * 9, cout))
        _zeros(params, config, f"cnn{s}.res_b1", (cout,))
        _weight(params, config, f"cnn{s}.res_w2", (cout * 9, cout))
        _zeros(params, config, f"cnn{s}.res_b2", (cout,))
        cin = cout
    _weight(params, config, "cnn.proj_w", (cin, config.d_model))
    _zeros(params, config, "cnn.proj_b", (config.d_model,))
    _weight(params, config, "enc.pos", (config.n_positions, config.d_model))
    _weight(params, config, "dec.embed", (config.vocab_size, config.d_model))
    _weight(params, config, "dec.pos", (config.max_decode_len + 1, config.d_model))
    for L in range(config.n_enc_layers):
        _attn_params(params, config, f"enc{L}.sa")
        if config.variant is Variant.FGRT:
            _gate_params(params, config, f"enc{L}.sa_gate")
        _ln_params(params, config, f"enc{L}.ln1")
        _ffn_params(params, config, f"enc{L}.ffn")
        _ln_params(params, config, f"enc{L}.ln2")
    for L in range(config.n_dec_layers):
        _attn_params(params, config, f"dec{L}.sa")
        if config.variant is Variant.FGRT:
            _gate_params(params, config, f"dec{L}.sa_gate")
        _ln_params(params, config, f"dec{L}.ln1")
        _attn_params(params, config, f"dec{L}.ca")
        if config.variant in (Variant.FGRT, Variant.PGRT):
            _gate_params(params, config, f"dec{L}.ca_gate")
        _ln_params(params, config, f"dec{L}.ln2")
        _ffn_params(params, config, f"dec{L}.ffn")
        _ln_params(params, config, f"dec{L}.ln3")
    _weight(params, config, "out.w", (config.d_model, config.vocab_size))
    _zeros(params, config, "out.b", (config.vocab_size,))
    return params


# ----------------------------------------------------------------------
# forward pieces
# ----------------------------------------------------------------------

def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None) -> Tensor:
    """softmax(q kT / sqrt(d)) v over the last two axes; mask entries equal
    to 0/False exclude the corresponding key position."""
    if k.shape[-2] != v.shape[-2] or q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention shapes {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    logits = ad.mul(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))),
                    Tensor(np.asarray(1.0 / np.sqrt(d), dtype=q.data.dtype)))
    return ad.matmul(ad.softmax(logits, mask), v)


def gated_attention(q: Tensor, attended: Tensor, wqg: Tensor, wvg: Tensor,
                    bg: Tensor, wqi: Tensor, wvi: Tensor, bi: Tensor) -> Tensor:
    """sigmoid(q Wqg + a Wvg + bg) * (q Wqi + a Wvi + bi), elementwise."""
    if q.shape != attended.shape:
        raise ShapeError(f"gate shapes {q.shape} vs {attended.shape}")
    gate = ad.sigmoid(ad.matmul(q, wqg) + ad.matmul(attended, wvg) + bg)
    info = ad.matmul(q, wqi) + ad.matmul(attended, wvi) + bi
    return ad.mul(gate, info)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.matmul(x, w) + b


def _conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int) -> Tensor:
    """3x3 same-padding convolution via im2col; x is [B, C, H, W]."""
    bsz, _, h, wd = x.shape
    cols = ad.im2col(x, 3, stride, 1)
    oh, ow = ad.conv_out_hw(h, wd, 3, stride, 1)
    z = _linear(cols, w, b)                       # [B, OH*OW, Cout]
    cout = w.shape[1]
    return ad.transpose(ad.reshape(z, (bsz, oh, ow, cout)), (0, 3, 1, 2))


def cnn_encode(images: np.ndarray, params: Params, config: ModelConfig) -> Tensor:
    """Residual stride-16 feature stack projected to d_model; returns the
    row-major position sequence [B, (H/16)*(W/16), d_model]."""
    if images.ndim != 3:
        raise ShapeError("images must be [B, H, W]")
    _, h, w = images.shape
    if h % 16 or w % 16:
        raise ShapeError("image dims must be divisible by 16")
    x = Tensor(images[:, None, :, :].astype(config.np_dtype()))
    for s in range(STRIDE_STAGES):
        x = ad.relu(_conv3x3(x, params[f"cnn{s}.down_w"],
                             params[f"cnn{s}.down_b"], stride=2))
        y = ad.relu(_conv3x3(x, params[f"cnn{s}.res_w1"],
                             params[f"cnn{s}.res_b1"], stride=1))
        y = _conv3x3(y, params[f"cnn{s}.res_w2"],
                     params[f"cnn{s}.res_b2"], stride=1)
        x = ad.relu(x + y)
    bsz, c, gh, gw = x.shape
    seq = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (bsz, gh * gw, c))
    return _linear(seq, params["cnn.proj_w"], params["cnn.proj_b"])


def _mha(q_in: Tensor, kv_in: Tensor, params: Params, prefix: str,
         config: ModelConfig, mask: np.ndarray | None,
         gate_prefix: str | None) -> Tensor:
    bsz, nq, d = q_in.shape
    nk = kv_in.shape[1]
    h = config.n_heads
    dh = d // h
    q = _linear(q_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = _linear(kv_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = _linear(kv_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"])

    def split(t: Tensor, n: int) -> Tensor:
        return ad.transpose(ad.reshape(t, (bsz, n, h, dh)), (0, 2, 1, 3))

    att = scaled_dot_attention(split(q, nq), split(k, nk), split(v, nk), mask)
    merged = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (bsz, nq, d))
    if gate_prefix is not None:
        merged = gated_attention(
            q, merged,
            params[f"{gate_prefix}.wqg"], params[f"{gate_prefix}.wvg"],
            params[f"{gate_prefix}.bg"],
            params[f"{gate_prefix}.wqi"], params[f"{gate_prefix}.wvi"],
            params[f"{gate_prefix}.bi"])
    return _linear(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _ffn(x: Tensor, params: Params, prefix: str) -> Tensor:
    h = ad.relu(_linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return _linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _add_norm(x: Tensor, sub: Tensor, params: Params, prefix: str,
              config: ModelConfig, train: bool, rng) -> Tensor:
    sub = ad.dropout(sub, config.dropout, rng, train)
    return ad.layer_norm(x + sub, params[f"{prefix}.g"], params[f"{prefix}.b"])


def encoder_forward(features: Tensor, params: Params, config: ModelConfig,
                    train: bool = False, rng=None) -> Tensor:
    n = features.shape[1]
    x = features + Tensor(params["enc.pos"].data[:n],
                          parents=(params["enc.pos"],),
                          backward=_pos_backward(params["enc.pos"], n))
    x = ad.dropout(x, config.dropout, rng, train)
    for L in range(config.n_enc_layers):
        gate = f"enc{L}.sa_gate" if (
            config.gates_encoder_self and f"enc{L}.sa_gate.wqg" in params) else None
        sa = _mha(x, x, params, f"enc{L}.sa", config, None, gate)
        x = _add_norm(x, sa, params, f"enc{L}.ln1", config, train, rng)
        ff = _ffn(x, params, f"enc{L}.ffn")
        x = _add_norm(x, ff, params, f"enc{L}.ln2", config, train, rng)
    return x


def _pos_backward(table: Tensor, n: int):
    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data, dtype=g.dtype)
        table.grad[:n] += g.sum(axis=0) if g.ndim == 3 else g

    return backward


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((1, 1, n, n), dtype=bool))


def decoder_forward(target_ids: np.ndarray, memory: Tensor, params: Params,
                    config: ModelConfig, train: bool = False,
                    rng=None) -> Tensor:
    """Teacher-forced decoder; returns logits [B, T, vocab]."""
    if target_ids.ndim != 2:
        raise ShapeError("target ids must be [B, T]")
    _, t = target_ids.shape
    if t > config.max_decode_len + 1:
        raise ShapeError("prefix longer than the decoder position table")
    emb = ad.embedding(params["dec.embed"], target_ids)
    emb = ad.mul(emb, Tensor(np.asarray(np.sqrt(config.d_model),
                                        dtype=config.np_dtype())))
    x = emb + Tensor(params["dec.pos"].data[:t],
                     parents=(params["dec.pos"],),
                     backward=_pos_backward(params["dec.pos"], t))
    x = ad.dropout(x, config.dropout, rng, train)
    mask = causal_mask(t)
    for L in range(config.n_dec_layers):
        sa_gate = f"dec{L}.sa_gate" if (
            config.gates_decoder_self and f"dec{L}.sa_gate.wqg" in params) else None
        sa = _mha(x, x, params, f"dec{L}.sa", config, mask, sa_gate)
        x = _add_norm(x, sa, params, f"dec{L}.ln1", config, train, rng)
        ca_gate = f"dec{L}.ca_gate" if (
            config.gates_cross and f"dec{L}.ca_gate.wqg" in params) else None
        ca = _mha(x, memory, params, f"dec{L}.ca", config, None, ca_gate)
        x = _add_norm(x, ca, params, f"dec{L}.ln2", config, train, rng)
        ff = _ffn(x, params, f"dec{L}.ffn")
        x = _add_norm(x, ff, params, f"dec{L}.ln3", config, train, rng)
    return _linear(x, params["out.w"], params["out.b"])


def model_forward(images: np.ndarray, target_ids: np.ndarray, params: Params,
                  config: ModelConfig, train: bool = False, rng=None) -> Tensor:
    feats = cnn_encode(images, params, config)
    memory = encoder_forward(feats, params, config, train, rng)
    return decoder_forward(target_ids, memory, params, config, train, rng)


def sequence_loss(logits: Tensor, targets: np.ndarray, pad_id: int,
                  label_smoothing: float) -> Tensor:
    """Mean label-smoothed cross-entropy over non-PAD positions. The smoothed
    target puts 1 - eps on the true token and eps/(V-1) on every other."""
    if logits.shape[:2] != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    v = logits.shape[-1]
    eps = label_smoothing
    valid = (targets != pad_id)
    n_valid = max(int(valid.sum()), 1)
    weights = np.full(logits.shape, eps / (v - 1), dtype=logits.data.dtype)
    b_idx, t_idx = np.nonzero(np.ones_like(targets, dtype=bool))
    weights[b_idx, t_idx, targets.reshape(-1)] = 1.0 - eps
    weights *= valid[:, :, None]
    logp = ad.log_softmax(logits)
    total = ad.sum_all(ad.mul(logp, Tensor(weights)))
    return ad.mul(total, Tensor(np.asarray(-1.0 / n_valid,
                                           dtype=logits.data.dtype)))


def greedy_decode(image: np.ndarray, params: Params, config: ModelConfig,
                  vocab: Vocabulary) -> tuple[TokenSequence, bool]:
    """Deterministic argmax decoding (ties break to the lowest token id).
    Returns the decoded sequence and a truncation flag."""
    feats = cnn_encode(image[None, :, :], params, config)
    memory = encoder_forward(feats, params, config, train=False)
    ids = [vocab.start_id]
    truncated = True
    for _ in range(config.max_decode_len):
        logits = decoder_forward(np.asarray([ids]), memory, params, config)
        nxt = int(np.argmax(logits.data[0, -1]))
        if nxt == vocab.end_id:
            truncated = False
            break
        ids.append(nxt)
    return vocab.decode(ids), truncated
