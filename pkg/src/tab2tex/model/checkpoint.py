"""Checkpoint container: a single .npz holding named parameter tensors, the
model config, the vocabulary, and optionally the optimizer state.

Layout (all under numpy's npz naming):
  __meta__            JSON string: {"version", "config", "vocab", "task"}
  param:<name>        one array per model parameter
  adam_m:<name> / adam_v:<name> / __adam__   optimizer state, if saved
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import Tab2TexError
from ..tokens import Task, Vocabulary
from .autodiff import Tensor
from .network import ModelConfig, Params
from .training import AdamState

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, params: Params, config: ModelConfig,
                    vocab: Vocabulary, opt: AdamState | None = None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "vocab": vocab.texts,
        "task": vocab.task.value,
    }
    arrays: dict[str, np.ndarray] = {
        "__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    }
    for name, p in params.items():
        arrays[f"param:{name}"] = p.data
    if opt is not None:
        arrays["__adam__"] = np.array(
            [opt.step, opt.warmup, opt.scale, opt.beta1, opt.beta2, opt.eps])
        for name, m in opt.m.items():
            arrays[f"adam_m:{name}"] = m
            arrays[f"adam_v:{name}"] = opt.v[name]
    np.savez(path, **arrays)


def load_checkpoint(path: str) -> tuple[Params, ModelConfig, Vocabulary,
                                        AdamState | None]:
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise Tab2TexError(f"{path} is not a tab2tex checkpoint")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise Tab2TexError(
                f"unsupported checkpoint version {meta.get('version')}")
        config = ModelConfig.from_dict(meta["config"])
        task = Task(meta["task"])
        vocab = Vocabulary(task, [t for t in meta["vocab"]])
        if vocab.texts != meta["vocab"]:
            raise Tab2TexError("vocabulary round-trip mismatch in checkpoint")
        params: Params = {}
        opt = None
        for key in data.files:
            if key.startswith("param:"):
                params[key[len("param:"):]] = Tensor(data[key],
                                                     requires_grad=True)
        if "__adam__" in data:
            step, warmup, scale, b1, b2, eps = data["__adam__"]
            opt = AdamState(warmup=int(warmup), scale=float(scale),
                            step=int(step), beta1=float(b1), beta2=float(b2),
                            eps=float(eps))
            for key in data.files:
                if key.startswith("adam_m:"):
                    name = key[len("adam_m:"):]
                    opt.m[name] = data[key]
                    opt.v[name] = data[f"adam_v:{name}"]
    return params, config, vocab, opt
