"""Adaptation-run orchestration shared by the CLI and the test suite.

A run materializes one sample stream, feeds it through the engine batch by
batch, and evaluates the embedding variances before and after adaptation.
"Before" means the initial weights and original text embeddings; "after"
means the last adapted weights and the last refined text embeddings, i.e.
the model state that would serve the next batch.
"""

import math
from dataclasses import dataclass

import numpy as np

from .engine import MintConfig, init_state, predict, process_batch
from .errors import DataError
from .metrics import EmbeddingSet, VarianceReport, compute_variance_report
from .synthetic import (
    LatentBatch,
    NormWeights,
    TextEmbeddings,
    make_text_embeddings,
    reweight_embed,
    stream,
)
from .theory import LatentParams

__all__ = ["AdaptResult", "materialize_stream", "run_adaptation", "run_dump_adaptation"]

BATCH_CSV_HEADER = ("batch", "objective", "grad_norm", "agreement", "accuracy", "zero_shot_accuracy")


@dataclass
class AdaptResult:
    batch_size: int
    seed: int
    n_samples: int
    zero_shot_accuracy: float
    adapted_accuracy: float
    mean_objective: float
    batch_rows: list
    pre_gt: VarianceReport | None
    post_gt: VarianceReport | None
    pre_pl: VarianceReport
    post_pl: VarianceReport
    w_final: NormWeights
    text_final: TextEmbeddings


def materialize_stream(params: LatentParams, n_samples: int, seed: int) -> LatentBatch:
    """Draw the full sample sequence up front so different batch sizes can
    consume byte-identical streams."""
    return next(stream([(params, 1, n_samples)], seed))


def _run(state, latents: np.ndarray, gt, batch_size: int, severity: float, seed: int) -> AdaptResult:
    n = latents.shape[0]
    if n == 0:
        raise DataError("empty stream")
    w0 = state.w0
    text0 = state.text

    rows = []
    objectives = []
    zs_hits = 0
    adapted_hits = 0
    result = None
    for b0 in range(0, n, batch_size):
        b1 = min(b0 + batch_size, n)
        gt_slice = None if gt is None else gt[b0:b1]
        result = process_batch(state, latents[b0:b1], gt_labels=gt_slice)
        objectives.append(result.objective)
        if gt is not None:
            zs_hits += int(np.sum(result.pseudo_labels == gt_slice))
            adapted_hits += int(np.sum(result.predictions == gt_slice))
        rows.append((
            len(rows), result.objective, result.grad_norm, result.agreement,
            result.accuracy, result.zero_shot_accuracy,
        ))

    zs_acc = zs_hits / n if gt is not None else float("nan")
    adapted_acc = adapted_hits / n if gt is not None else float("nan")

    # before/after variance diagnostics over the whole stream
    z_pre = reweight_embed(latents, w0.w)
    emb_pre = EmbeddingSet(data=z_pre, n_classes=text0.n_classes)
    pl_pre, _ = predict(emb_pre, text0)
    z_post = reweight_embed(latents, result.w_adapted.w)
    emb_post = EmbeddingSet(data=z_post, n_classes=text0.n_classes)
    pl_post, _ = predict(emb_post, result.adjusted_text)

    return AdaptResult(
        batch_size=batch_size,
        seed=seed,
        n_samples=n,
        zero_shot_accuracy=zs_acc,
        adapted_accuracy=adapted_acc,
        mean_objective=float(np.mean(objectives)),
        batch_rows=rows,
        pre_gt=None if gt is None else compute_variance_report(emb_pre, gt),
        post_gt=None if gt is None else compute_variance_report(emb_post, gt),
        pre_pl=compute_variance_report(emb_pre, pl_pre),
        post_pl=compute_variance_report(emb_post, pl_post),
        w_final=result.w_adapted,
        text_final=result.adjusted_text,
    )


def run_adaptation(
    params: LatentParams,
    contamination: float,
    n_batches: int,
    batch_size: int,
    seed: int,
    cfg: MintConfig,
    prebuilt_stream: LatentBatch | None = None,
) -> AdaptResult:
    """Synthetic-mode run: generate (or accept) a stream and adapt over it."""
    n = n_batches * batch_size
    if prebuilt_stream is None:
        batch = materialize_stream(params, n, seed)
    else:
        batch = prebuilt_stream
        n = batch.latents.shape[0]
        if n % batch_size and batch_size < n:
            # trailing short batch is fine; sizes need not divide evenly
            pass
    text = make_text_embeddings(params, contamination, seed)
    state = init_state(NormWeights.ones_for(params), text, cfg)
    return _run(state, batch.latents, batch.gt_labels, batch_size, params.severity, seed)


def run_dump_adaptation(
    embeddings: EmbeddingSet,
    text: TextEmbeddings,
    batch_size: int,
    cfg: MintConfig,
    seed: int = 0,
) -> AdaptResult:
    """Dump-mode run: adapt a flat reweighting head over stored embeddings."""
    if text is None:
        raise DataError("dump-mode adaptation requires text embeddings in the dump")
    state = init_state(NormWeights.ones_flat(embeddings.dim), text, cfg)
    return _run(state, embeddings.data, embeddings.labels, batch_size, float("nan"), seed)


def summary_row(result: AdaptResult) -> tuple:
    pre_gt = result.pre_gt.inter if result.pre_gt is not None else math.nan
    post_gt = result.post_gt.inter if result.post_gt is not None else math.nan
    return (
        result.batch_size,
        result.seed,
        result.n_samples,
        result.zero_shot_accuracy,
        result.adapted_accuracy,
        result.mean_objective,
        pre_gt,
        post_gt,
        result.pre_pl.inter,
        result.post_pl.inter,
    )


SUMMARY_CSV_HEADER = (
    "batch_size", "seed", "n_samples", "zero_shot_accuracy", "adapted_accuracy",
    "mean_objective", "pre_gt_inter", "post_gt_inter", "pre_pl_inter", "post_pl_inter",
)
