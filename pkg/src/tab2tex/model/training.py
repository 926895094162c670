"""Training: Noam learning-rate schedule, Adam updates, teacher-forced
training steps, a memorization loop, and finite-difference gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import NonFiniteLoss
from ..tokens import Vocabulary
from .autodiff import Tensor
from .network import (
    ModelConfig,
    Params,
    greedy_decode,
    init_params,
    model_forward,
    sequence_loss,
)


def noam_lr(step: int, d_model: int, warmup: int, scale: float) -> float:
    """scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup to
    the peak at step == warmup, then inverse-square-root decay."""
    if step < 1:
        raise ValueError("step starts at 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    warmup: int
    scale: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: ModelConfig) -> "AdamState":
        return cls(warmup=config.warmup, scale=config.lr_scale)


@dataclass
class Batch:
    images: np.ndarray       # [B, H, W]
    decoder_input: np.ndarray   # [B, T] starting with START
    decoder_target: np.ndarray  # [B, T] ending with END, PAD-padded


def make_batch(samples: list[tuple[np.ndarray, list[int]]],
               vocab: Vocabulary) -> Batch:
    """Pack (image, token-id) pairs into a teacher-forcing batch."""
    t = max(len(ids) for _, ids in samples) + 1
    b = len(samples)
    dec_in = np.full((b, t), vocab.pad_id, dtype=np.int64)
    dec_tgt = np.full((b, t), vocab.pad_id, dtype=np.int64)
    images = np.stack([img for img, _ in samples])
    for i, (_, ids) in enumerate(samples):
        dec_in[i, 0] = vocab.start_id
        dec_in[i, 1:1 + len(ids)] = ids
        dec_tgt[i, :len(ids)] = ids
        dec_tgt[i, len(ids)] = vocab.end_id
    return Batch(images, dec_in, dec_tgt)


def _zero_grads(params: Params) -> None:
    for p in params.values():
        p.grad = None


def train_step(batch: Batch, params: Params, opt: AdamState,
               config: ModelConfig, rng: np.random.Generator) -> float:
    """One forward/backward/Adam update; returns the batch loss."""
    _zero_grads(params)
    logits = model_forward(batch.images, batch.decoder_input, params, config,
                           train=True, rng=rng)
    loss = sequence_loss(logits, batch.decoder_target, 0,
                         config.label_smoothing)
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss = {value} at step {opt.step + 1}")
    loss.backward()

    opt.step += 1
    lr = noam_lr(opt.step, config.d_model, opt.warmup, opt.scale)
    b1, b2 = opt.beta1, opt.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        opt.m[name] = b1 * opt.m[name] + (1 - b1) * g
        opt.v[name] = b2 * opt.v[name] + (1 - b2) * g * g
        mhat = opt.m[name] / (1 - b1 ** opt.step)
        vhat = opt.v[name] / (1 - b2 ** opt.step)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + opt.eps)
    return value


@dataclass
class TrainResult:
    params: Params
    opt: AdamState
    losses: list[float]
    exact_match: float
    steps_run: int


def evaluate_exact_match(samples: list[tuple[np.ndarray, list[int]]],
                         params: Params, config: ModelConfig,
                         vocab: Vocabulary) -> float:
    hits = 0
    for img, ids in samples:
        decoded, _ = greedy_decode(img, params, config, vocab)
        if vocab.encode(decoded) == ids:
            hits += 1
    return hits / len(samples)


def train_model(samples: list[tuple[np.ndarray, list[int]]],
                config: ModelConfig, vocab: Vocabulary, steps: int,
                batch_size: int = 8, seed: int = 0, eval_every: int = 100,
                target_exact_match: float | None = None,
                log=None) -> TrainResult:
    """Seeded training loop over in-memory samples; optionally stops early
    once greedy decoding reaches the target exact-match rate."""
    params = init_params(config)
    opt = AdamState.for_config(config)
    rng = np.random.default_rng(seed)
    losses: list[float] = []
    ea = 0.0
    step = 0
    while step < steps:
        idx = rng.choice(len(samples), size=min(batch_size, len(samples)),
                         replace=False)
        batch = make_batch([samples[i] for i in idx], vocab)
        losses.append(train_step(batch, params, opt, config, rng))
        step += 1
        if target_exact_match is not None and step % eval_every == 0:
            ea = evaluate_exact_match(samples, params, config, vocab)
            if log is not None:
                log(f"step {step}: loss {losses[-1]:.4f} exact-match {ea:.3f}")
            if ea >= target_exact_match:
                break
    if target_exact_match is None:
        ea = evaluate_exact_match(samples, params, config, vocab)
    return TrainResult(params=params, opt=opt, losses=losses,
                       exact_match=ea, steps_run=step)


def gradient_check(config: ModelConfig, n_per_param: int = 5, seed: int = 0,
                   h: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients against float64 central finite differences
    on a random tiny input; returns the max relative error per parameter."""
    config = replace(config, dtype="float64", dropout=0.0)
    params = init_params(config)
    rng = np.random.default_rng(seed)
    images = rng.random((1, config.image_size, config.image_size))
    t = 5
    targets = rng.integers(5, config.vocab_size, size=(1, t))
    dec_in = np.concatenate([[[1]], targets[:, :-1]], axis=1)

    def loss_value() -> float:
        logits = model_forward(images, dec_in, params, config, train=False)
        return sequence_loss(logits, targets, 0, config.label_smoothing).item()

    _zero_grads(params)
    logits = model_forward(images, dec_in, params, config, train=False)
    loss = sequence_loss(logits, targets, 0, config.label_smoothing)
    loss.backward()
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for n, p in params.items()}

    errors: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(n_per_param, flat.size)
        picks = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value()
            flat[j] = orig - h
            down = loss_value()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[name].reshape(-1)[j]
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return errors
