"""Self-verification suites: exact identities, oracle cross-checks, and
statistical sign laws.

`quick` runs reduced sample counts with proportionally relaxed Monte Carlo
tolerances; `full` runs the complete budgets. Each suite reports pass/fail
plus a one-line detail for the table the CLI prints.
"""

import time
from dataclasses import dataclass

import numpy as np

from ._rng import philox_stream
from .engine import GradAccumulator, MeanAccumulator, batch_objective, gradient_contributions
from .errors import UsageError
from .metrics import EmbeddingSet, compute_variance_report, decomposition_residual
from .synthetic import NormWeights, reweight_embed, sample_latents
from .theory import LatentParams, flip_labeler, gt_limits, mc_measure

__all__ = ["SuiteResult", "run_verify", "SUITES"]

_VERIFY_SEED = 20_240_817


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _sizes(level: str) -> dict:
    if level == "full":
        return {"sets": 1000, "grad_instances": 100, "acc_items": 100_000,
                "sign_n": 100_000, "mc_n": 200_000, "mc_seeds": 3, "mc_tol": 0.02}
    if level == "quick":
        return {"sets": 200, "grad_instances": 24, "acc_items": 20_000,
                "sign_n": 20_000, "mc_n": 20_000, "mc_seeds": 1, "mc_tol": 0.06}
    raise UsageError(f"unknown verification level {level!r}")


def suite_decomposition(level: str) -> SuiteResult:
    """total = inter + intra to 1e-9 over random embedding sets."""
    start = time.perf_counter()
    sizes = _sizes(level)
    rng = philox_stream(_VERIFY_SEED, 10)
    worst = 0.0
    for _ in range(sizes["sets"]):
        n = int(rng.integers(2, 501))
        c = int(rng.integers(2, 21))
        d = int(rng.integers(2, 65))
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1)[:, None]
        labels = rng.integers(0, c, size=n)
        report = compute_variance_report(EmbeddingSet(data=z, n_classes=c), labels)
        worst = max(worst, decomposition_residual(report))
    return SuiteResult("decomposition", worst < 1e-9,
                       f"max residual {worst:.3e} over {sizes['sets']} sets",
                       time.perf_counter() - start)


def _finite_difference(f, w0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(w0)
    for j in range(w0.size):
        wp = w0.copy()
        wp[j] += h
        wm = w0.copy()
        wm[j] -= h
        grad[j] = (f(wp) - f(wm)) / (2.0 * h)
    return grad


def suite_gradient_check(level: str, perturb=None) -> SuiteResult:
    """Analytic batch gradient vs central finite differences.

    `perturb` lets the test suite corrupt the analytic gradient to confirm
    this check actually fails when the gradient is wrong.
    """
    start = time.perf_counter()
    sizes = _sizes(level)
    rng = philox_stream(_VERIFY_SEED, 11)
    batch_sizes = [1, 2, 20]
    worst = 0.0
    for i in range(sizes["grad_instances"]):
        bs = batch_sizes[i % len(batch_sizes)]
        p = LatentParams(
            mu=rng.uniform(0.5, 2.0, size=int(rng.integers(1, 5))),
            d_irr=int(rng.integers(2, 9)),
            delta=rng.uniform(0.0, 2.0, size=int(rng.integers(1, 5))),
            d_noise=int(rng.integers(2, 9)),
            severity=float(rng.uniform(0.0, 5.0)),
        )
        batch = sample_latents(p, bs, rng)
        w = NormWeights(1.0 + rng.uniform(-0.3, 0.3, size=p.total_dim), p.dims)
        # accumulate some history plus the batch itself so class means exist
        acc = MeanAccumulator(2, p.total_dim)
        history = sample_latents(p, 40, rng)
        acc.update_batch(reweight_embed(history.latents, w.w), history.gt_labels)
        labels = rng.integers(0, 2, size=bs)
        acc.update_batch(reweight_embed(batch.latents, w.w), labels)

        def objective(wvec):
            emb = EmbeddingSet(data=reweight_embed(batch.latents, wvec), n_classes=2)
            return batch_objective(emb, labels, acc)

        analytic = gradient_contributions(batch.latents, w, labels, acc).sum(axis=0)
        if perturb is not None:
            analytic = perturb(analytic)
        fd = _finite_difference(objective, w.w)
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - fd)) / scale))
    return SuiteResult("gradient_check", worst < 1e-5,
                       f"max rel err {worst:.3e} over {sizes['grad_instances']} instances",
                       time.perf_counter() - start)


def suite_accumulator_exactness(level: str) -> SuiteResult:
    """Streaming means equal direct-sum references to 1e-12."""
    start = time.perf_counter()
    sizes = _sizes(level)
    rng = philox_stream(_VERIFY_SEED, 12)
    n, d, c = sizes["acc_items"], 16, 10
    z = rng.standard_normal((n, d))
    labels = rng.integers(0, c, size=n)
    acc = MeanAccumulator(c, d)
    for i in range(n):
        acc.update(z[i], labels[i])
    worst = float(np.max(np.abs(acc.global_mean - z.mean(axis=0))))
    for cls in range(c):
        rows = z[labels == cls]
        if rows.size:
            worst = max(worst, float(np.max(np.abs(acc.class_means[cls] - rows.mean(axis=0)))))
    g = rng.standard_normal((max(n // 10, 2), d))
    gacc = GradAccumulator(d)
    for row in g:
        gacc.update(row)
    worst = max(worst, float(np.max(np.abs(gacc.mean_grad - g.mean(axis=0)))))
    return SuiteResult("accumulator_exactness", worst < 1e-12,
                       f"max deviation {worst:.3e} over {n} items",
                       time.perf_counter() - start)


def suite_sign_law(level: str) -> SuiteResult:
    """Gradient sign structure on population-scale flip-channel batches.

    Shift-segment components of the batch gradient must be <= 0 and
    cls-segment components >= 0, within 3 sigma of the per-component Monte
    Carlo noise of the summed contributions.
    """
    start = time.perf_counter()
    sizes = _sizes(level)
    n = sizes["sign_n"]
    p = LatentParams(mu=np.array([np.sqrt(2.0), np.sqrt(2.0)]), d_irr=16,
                     delta=np.array([2.0, 2.0, 1.0]), d_noise=8, severity=2.0)
    w = NormWeights.ones_for(p)
    cls_sl, _, shift_sl, _ = w.segment_slices()
    worst_violation = 0.0
    for k, p_flip in enumerate((0.1, 0.2, 0.3)):
        batch = sample_latents(p, n, philox_stream(_VERIFY_SEED, 13, k), balanced=True)
        z = reweight_embed(batch.latents, w.w)
        emb = EmbeddingSet(data=z, n_classes=2, labels=batch.gt_labels)
        pl = flip_labeler(p_flip)(batch, emb, philox_stream(_VERIFY_SEED, 14, k))
        acc = MeanAccumulator(2, p.total_dim)
        acc.update_batch(z, pl)
        contrib = gradient_contributions(batch.latents, w, pl, acc)
        g = contrib.sum(axis=0)
        sigma = contrib.std(axis=0, ddof=1) * np.sqrt(n)
        shift_excess = np.max(g[shift_sl] - 3.0 * sigma[shift_sl])
        cls_deficit = np.max(-(g[cls_sl] + 3.0 * sigma[cls_sl]))
        worst_violation = max(worst_violation, float(shift_excess), float(cls_deficit))
    return SuiteResult("sign_law", worst_violation <= 0.0,
                       f"worst 3-sigma violation {worst_violation:.3e} at n={n}",
                       time.perf_counter() - start)


def suite_mc_convergence(level: str, threads: int = 1) -> SuiteResult:
    """Monte Carlo variance estimates vs the closed forms."""
    start = time.perf_counter()
    sizes = _sizes(level)
    p_base = dict(mu=np.array([2.0]), d_irr=16, delta=np.array([3.0]), d_noise=8)
    worst = 0.0
    for s in (0.0, 1.0, 2.0, 4.0):
        p = LatentParams(severity=s, **p_base)
        inter_cf, intra_cf = gt_limits(p)
        for seed in range(sizes["mc_seeds"]):
            m = mc_measure(p, NormWeights.ones_for(p), sizes["mc_n"],
                           seed=_VERIFY_SEED + seed, threads=threads)
            worst = max(worst,
                        abs(m.gt_report.inter - inter_cf) / inter_cf,
                        abs(m.gt_report.intra - intra_cf) / intra_cf)
    return SuiteResult("mc_convergence", worst < sizes["mc_tol"],
                       f"max rel gap {worst:.4f} at n={sizes['mc_n']} (tol {sizes['mc_tol']})",
                       time.perf_counter() - start)


SUITES = (
    suite_decomposition,
    suite_gradient_check,
    suite_accumulator_exactness,
    suite_sign_law,
    suite_mc_convergence,
)


def run_verify(level: str, threads: int = 1) -> list[SuiteResult]:
    results = []
    for suite in SUITES:
        if suite is suite_mc_convergence:
            results.append(suite(level, threads=threads))
        else:
            results.append(suite(level))
    return results
