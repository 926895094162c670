"""Command-line surface: dataset build, training, prediction, evaluation,
end-to-end merge, and verification suites.

Exit codes: 0 success, 1 operational error, 2 verification failure.
Every command prints the resolved configuration it ran with.
"""

from __future__ import annotations

import json
import sys
from contextlib import contextmanager
from pathlib import Path

import click
import numpy as np

from .corpus import (
    DatasetVariant,
    SyntheticSpec,
    build_dataset,
    extract_tabulars,
    generate_synthetic_tables,
    load_manifest,
)
from .errors import CellCountMismatch, Tab2TexError
from .latex import merge_tsr_locr
from .metrics import evaluate_corpus
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.network import ModelConfig, Variant, greedy_decode
from .model.training import train_model
from .raster import AspectMode, load_external_image, load_png_pixels
from .tokens import Task, TokenSequence, Vocabulary
from .verify import run_suites


def _echo_config(command: str, options: dict) -> None:
    click.echo(json.dumps({"command": command, "config": options},
                          sort_keys=True))


@contextmanager
def _dir_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = lock.open("x")
    except FileExistsError:
        raise Tab2TexError(f"output directory {out_dir} is locked "
                           f"(remove {lock} if stale)")
    try:
        yield
    finally:
        fd.close()
        lock.unlink(missing_ok=True)


@click.group()
def main():
    """Table-image to LaTeX tooling."""


def _run(command, **options):
    _echo_config(command.__name__.lstrip("_").replace("_", "-"), options)
    try:
        command(**options)
    except Tab2TexError as exc:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        sys.exit(1)


@main.command("build-data")
@click.option("--input", "input_dir", type=click.Path(exists=True), default=None,
              help="Directory of .tex files to mine for tabular blocks.")
@click.option("--synthetic", type=int, default=None,
              help="Generate N synthetic tables instead of mining input.")
@click.option("--variant", type=click.Choice([v.value for v in DatasetVariant]),
              default="tsrd")
@click.option("--aspect", type=click.Choice(["act", "fat"]), default="act")
@click.option("--seed", type=int, default=0)
@click.option("--mask-threshold", type=int, default=0)
@click.option("--span-probability", type=float, default=0.2)
@click.option("--canvas", type=int, default=400)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def build_data_cmd(**opts):
    _run(_build_data, **opts)


def _build_data(input_dir, synthetic, variant, aspect, seed, mask_threshold,
                span_probability, canvas, out_dir):
    if (input_dir is None) == (synthetic is None):
        raise Tab2TexError("provide exactly one of --input or --synthetic")
    if synthetic is not None:
        spec = SyntheticSpec(span_probability=span_probability)
        snippets = [t.source for t in
                    generate_synthetic_tables(seed, spec, synthetic)]
    else:
        snippets = []
        diagnostics: dict = {}
        for path in sorted(Path(input_dir).rglob("*.tex")):
            snippets += extract_tabulars(path.read_text(encoding="utf-8",
                                                        errors="replace"),
                                         diagnostics)
    out = Path(out_dir)
    with _dir_lock(out):
        manifest = build_dataset(
            snippets, DatasetVariant(variant), AspectMode(aspect),
            seed=seed, out_dir=out, mask_threshold=mask_threshold,
            canvas=canvas)
    click.echo(json.dumps(manifest.header_record(), sort_keys=True))


@main.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True),
              required=True)
@click.option("--task", type=click.Choice(["tsr", "locr"]), required=True)
@click.option("--variant", type=click.Choice([v.value for v in Variant]),
              default="pgrt")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="JSON file with ModelConfig overrides.")
@click.option("--steps", type=int, default=1000)
@click.option("--batch-size", type=int, default=8)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_ckpt", type=click.Path(), required=True)
def train_cmd(**opts):
    _run(_train, **opts)


def _load_samples(manifest_path: str, task: Task, vocab: Vocabulary):
    header, records = load_manifest(manifest_path)
    root = Path(manifest_path).parent
    samples = []
    for rec in records:
        if rec["split"] != "train":
            continue
        pixels = load_png_pixels(str(root / rec["image"]))
        seq = TokenSequence.from_line(task, rec[task.value])
        samples.append((pixels.astype(np.float32), vocab.encode(seq)))
    return header, samples


def _train(manifest_path, task, variant, config_path, steps, batch_size, seed,
           out_ckpt):
    task = Task(task)
    header, records = load_manifest(manifest_path)
    if task is Task.TSR:
        vocab = Vocabulary.tsr()
    else:
        seqs = [TokenSequence.from_line(task, r["locr"]) for r in records]
        vocab = Vocabulary.for_locr(seqs)
    overrides = {}
    if config_path:
        overrides = json.loads(Path(config_path).read_text())
    overrides.setdefault("image_size", header.get("canvas", 400))
    cfg = ModelConfig(vocab_size=len(vocab), variant=Variant(variant),
                      seed=seed, **overrides)
    _, samples = _load_samples(manifest_path, task, vocab)
    if not samples:
        raise Tab2TexError("manifest has no train-split samples")
    result = train_model(samples, cfg, vocab, steps=steps,
                         batch_size=batch_size, seed=seed,
                         target_exact_match=1.0,
                         log=lambda msg: click.echo(msg))
    save_checkpoint(out_ckpt, result.params, cfg, vocab, result.opt)
    click.echo(json.dumps({
        "steps_run": result.steps_run,
        "final_loss": result.losses[-1] if result.losses else None,
        "train_exact_match": result.exact_match,
        "checkpoint": str(out_ckpt),
    }, sort_keys=True))


def _decode_image(ckpt_path: str, image_path: str):
    params, cfg, vocab, _ = load_checkpoint(ckpt_path)
    if image_path.endswith(".png") or image_path.endswith(".jpg") \
            or image_path.endswith(".jpeg"):
        image = load_external_image(image_path, AspectMode.ACT,
                                    canvas=cfg.image_size)
    else:
        raise Tab2TexError(f"unsupported image format: {image_path}")
    pixels = image.pixels.astype(np.float32)
    seq, truncated = greedy_decode(pixels, params, cfg, vocab)
    return seq, truncated


@main.command("predict")
@click.option("--ckpt", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def predict_cmd(**opts):
    _run(_predict, **opts)


def _predict(ckpt_path, image_path, out_path):
    seq, truncated = _decode_image(ckpt_path, image_path)
    line = seq.to_line()
    if out_path:
        Path(out_path).write_text(line + "\n", encoding="utf-8")
    click.echo(json.dumps({"tokens": line, "truncated": truncated},
                          sort_keys=True))


@main.command("evaluate")
@click.option("--task", type=click.Choice(["tsr", "locr"]), required=True)
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--truth", "truth_path", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
def evaluate_cmd(**opts):
    _run(_evaluate, **opts)


def _evaluate(task, pred_path, truth_path, report_path):
    task = Task(task)
    preds = [l for l in Path(pred_path).read_text(encoding="utf-8").splitlines()
             if l.strip()]
    truths = [l for l in Path(truth_path).read_text(encoding="utf-8").splitlines()
              if l.strip()]
    if len(preds) != len(truths):
        raise Tab2TexError(
            f"line counts differ: {len(preds)} predictions, {len(truths)} truths")
    pairs = [(TokenSequence.from_line(task, p), TokenSequence.from_line(task, t))
             for p, t in zip(preds, truths)]
    report = evaluate_corpus(pairs, task)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2)
    if report_path:
        Path(report_path).write_text(payload + "\n", encoding="utf-8")
    click.echo(payload)


@main.command("e2e")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--tsr-ckpt", type=click.Path(exists=True), required=True)
@click.option("--locr-ckpt", type=click.Path(exists=True), required=True)
def e2e_cmd(**opts):
    _run(_e2e, **opts)


def _e2e(image_path, tsr_ckpt, locr_ckpt):
    tsr_seq, _ = _decode_image(tsr_ckpt, image_path)
    locr_seq, _ = _decode_image(locr_ckpt, image_path)
    try:
        merged = merge_tsr_locr(tsr_seq, locr_seq)
    except CellCountMismatch as exc:
        click.echo(json.dumps({
            "error": "CellCountMismatch",
            "expected_cells": exc.expected,
            "found_cells": exc.found,
            "tsr_tokens": tsr_seq.to_line(),
            "locr_tokens": locr_seq.to_line(),
        }, sort_keys=True))
        sys.exit(1)
    click.echo(json.dumps(
        {"latex": "\\begin{tabular}" + merged + " \\end{tabular}"},
        sort_keys=True))


@main.command("verify")
@click.argument("suite",
                type=click.Choice(["gradients", "metrics_oracle", "roundtrip",
                                   "all"]))
@click.option("--n", type=int, default=None)
@click.option("--seed", type=int, default=0)
def verify_cmd(suite, n, seed):
    _echo_config("verify", {"suite": suite, "n": n, "seed": seed})
    report = run_suites(suite, n=n, seed=seed)
    for suite_report in report["suites"]:
        for check in suite_report["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            detail = {k: v for k, v in check.items()
                      if k not in ("name", "passed")}
            click.echo(f"[{status}] {check['name']} {json.dumps(detail)}")
    click.echo(json.dumps({"passed": report["passed"]}))
    if not report["passed"]:
        sys.exit(2)


if __name__ == "__main__":
    main()
