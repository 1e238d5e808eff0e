"""Closed-form variance limits for the latent corruption model, and Monte
Carlo estimators of the same quantities.

The model: balanced binary labels; latent v = [cls | irr | shift | noise]
with cls = +/-mu, irr ~ Rademacher^d_irr, shift = s*delta, noise =
s*Rademacher^d_noise; embedding z = normalize(v .* w). In the infinite
sample limit the ground-truth inter/intra variances have closed forms, as
does the pseudo-label inter variance for any labeling channel described by
its covariances with the label and the latent coordinates.

The Monte Carlo path draws finite samples from the same model and measures
the empirical variances, providing an independent convergence check of the
closed forms. Pseudo-labels for the MC path come either from a symmetric
label-flip channel (whose covariances are known analytically) or from
argmax prediction against supplied text embeddings.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import philox_stream
from .errors import DataError
from .metrics import EmbeddingSet, VarianceReport, compute_variance_report

__all__ = [
    "LatentParams",
    "TheoryCov",
    "perfect_cov",
    "flip_cov",
    "gt_limits",
    "intra_decrease_condition",
    "pl_inter_limit",
    "pl_inter_gradients",
    "flip_labeler",
    "text_labeler",
    "McMeasure",
    "mc_measure",
]

_MC_SHARD = 25_000


@dataclass
class LatentParams:
    """Parameters of the latent corruption model."""

    mu: np.ndarray
    d_irr: int
    delta: np.ndarray
    d_noise: int
    severity: float

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=np.float64))
        if np.linalg.norm(self.mu) == 0.0:
            raise DataError("mu must be nonzero (no class signal)")
        if self.d_irr < 1 or self.d_noise < 1 or self.delta.size < 1:
            raise DataError("all dimension counts must be >= 1")
        if self.severity < 0:
            raise DataError("severity must be >= 0")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.mu.size, self.d_irr, self.delta.size, self.d_noise)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)


@dataclass
class TheoryCov:
    """Covariance description of a pseudo-labeling channel.

    e_yhat is the mean pseudo-label, sigma_yy = Cov(y, yhat), and sigma_irr
    / sigma_noise are the covariance vectors of the irr and noise latent
    coordinates with the pseudo-label.
    """

    e_yhat: float
    sigma_yy: float
    sigma_irr: np.ndarray = field(default_factory=lambda: np.zeros(1))
    sigma_noise: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.sigma_irr = np.atleast_1d(np.asarray(self.sigma_irr, dtype=np.float64))
        self.sigma_noise = np.atleast_1d(np.asarray(self.sigma_noise, dtype=np.float64))
        if not 0.0 < self.e_yhat < 1.0:
            raise DataError("e_yhat must lie strictly inside (0, 1)")
        if abs(self.sigma_yy) > 0.25 + 1e-15:
            raise DataError("|sigma_yy| cannot exceed 1/4 for balanced binary labels")

    def balance_factor(self) -> float:
        """1/E^2 + 1/(1-E)^2, the class-balance weight in the PL-inter limit."""
        return 1.0 / self.e_yhat**2 + 1.0 / (1.0 - self.e_yhat) ** 2


def perfect_cov(p: LatentParams) -> TheoryCov:
    """Channel with yhat = y: Cov(y, yhat) = Var(y) = 1/4, no leakage."""
    return TheoryCov(0.5, 0.25, np.zeros(p.d_irr), np.zeros(p.d_noise))


def flip_cov(p: LatentParams, p_flip: float) -> TheoryCov:
    """Symmetric label-flip channel: yhat = y flipped with probability p_flip.

    Cov(y, yhat) = (1 - 2*p_flip)/4; the flip is independent of the latent
    coordinates, so both leakage covariance vectors vanish.
    """
    if not 0.0 <= p_flip <= 1.0:
        raise DataError("flip probability must be in [0, 1]")
    return TheoryCov(0.5, (1.0 - 2.0 * p_flip) / 4.0, np.zeros(p.d_irr), np.zeros(p.d_noise))


def gt_limits(p: LatentParams) -> tuple[float, float]:
    """Infinite-sample GT-inter and GT-intra variances at w = 1.

    inter = ||mu||^2 / Z^2 and intra = (d_irr + s^2 d_noise) / Z^2 with
    Z^2 = ||mu||^2 + d_irr + s^2 (||delta||^2 + d_noise). inter is strictly
    decreasing in severity; intra is non-increasing iff
    ||delta||^2 >= (d_noise/d_irr) ||mu||^2.
    """
    mu2 = float(np.dot(p.mu, p.mu))
    delta2 = float(np.dot(p.delta, p.delta))
    s2 = p.severity**2
    z2 = mu2 + p.d_irr + s2 * (delta2 + p.d_noise)
    return mu2 / z2, (p.d_irr + s2 * p.d_noise) / z2


def intra_decrease_condition(p: LatentParams) -> bool:
    """Whether GT-intra is non-increasing in severity for these parameters."""
    mu2 = float(np.dot(p.mu, p.mu))
    delta2 = float(np.dot(p.delta, p.delta))
    return delta2 >= (p.d_noise / p.d_irr) * mu2


def _check_segments(p: LatentParams, t: TheoryCov):
    if t.sigma_irr.size != p.d_irr or t.sigma_noise.size != p.d_noise:
        raise DataError("covariance vector lengths do not match latent dimensions")


def pl_inter_limit(p: LatentParams, w, t: TheoryCov) -> float:
    """Infinite-sample PL-inter variance at weights w.

    Equals (B/2) * [4 s_yy^2 ||mu.*w_cls||^2 + ||s_irr.*w_irr||^2 +
    ||s_noise.*w_noise||^2] / Z(w,s)^2 where B is the class-balance factor
    and Z(w,s)^2 = ||mu.*w_cls||^2 + ||w_irr||^2 + s^2 ||delta.*w_shift||^2
    + s^2 ||w_noise||^2. With a perfect channel this reduces to the GT-inter
    limit.
    """
    _check_segments(p, t)
    if tuple(w.segment_bounds) != p.dims:
        raise DataError("weight segments do not match latent dimensions")
    w_cls, w_irr, w_shift, w_noise = w.segments()
    s2 = p.severity**2
    num = (
        4.0 * t.sigma_yy**2 * float(np.sum((p.mu * w_cls) ** 2))
        + float(np.sum((t.sigma_irr * w_irr) ** 2))
        + float(np.sum((t.sigma_noise * w_noise) ** 2))
    )
    den = (
        float(np.sum((p.mu * w_cls) ** 2))
        + float(np.sum(w_irr**2))
        + s2 * float(np.sum((p.delta * w_shift) ** 2))
        + s2 * float(np.sum(w_noise**2))
    )
    if den == 0.0:
        raise DataError("degenerate weights")
    return 0.5 * t.balance_factor() * num / den


def pl_inter_gradients(p: LatentParams, t: TheoryCov) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the PL-inter limit w.r.t. w_cls and w_shift at w = 1.

    grad_cls  = B * mu^2 * (4 s_yy^2 Z^2 - A) / Z^4
    grad_shift = -B * A * s^2 * delta^2 / Z^4
    with A = 4 s_yy^2 ||mu||^2 + ||s_irr||^2 + ||s_noise||^2 and Z^2 the
    all-ones normalizing factor. grad_shift is elementwise <= 0 always;
    grad_cls is elementwise >= 0 whenever the channel's squared label
    covariance dominates the per-dimension leakage of the irr and noise
    segments. Both are exact derivatives of `pl_inter_limit`.
    """
    _check_segments(p, t)
    mu2 = float(np.dot(p.mu, p.mu))
    delta2 = float(np.dot(p.delta, p.delta))
    s2 = p.severity**2
    z2 = mu2 + p.d_irr + s2 * (delta2 + p.d_noise)
    a = (
        4.0 * t.sigma_yy**2 * mu2
        + float(np.dot(t.sigma_irr, t.sigma_irr))
        + float(np.dot(t.sigma_noise, t.sigma_noise))
    )
    b = t.balance_factor()
    grad_cls = b * (4.0 * t.sigma_yy**2 * z2 - a) / z2**2 * p.mu**2
    grad_shift = -b * a * s2 / z2**2 * p.delta**2
    return grad_cls, grad_shift


def flip_labeler(p_flip: float):
    """Pseudo-labeler that flips each ground-truth label with prob p_flip."""
    if not 0.0 <= p_flip <= 1.0:
        raise DataError("flip probability must be in [0, 1]")

    def label(batch, embeddings, rng):
        flips = rng.random(batch.gt_labels.size) < p_flip
        return np.where(flips, 1 - batch.gt_labels, batch.gt_labels)

    return label


def text_labeler(text):
    """Pseudo-labeler that predicts by maximum similarity to text embeddings."""

    def label(batch, embeddings, rng):
        from .engine import predict

        labels, _ = predict(embeddings, text)
        return labels

    return label


@dataclass
class McMeasure:
    gt_report: VarianceReport
    pl_report: VarianceReport
    accuracy: float


def mc_measure(p: LatentParams, w, n: int, seed: int, labeler=None, threads: int = 1) -> McMeasure:
    """Empirical variance reports over n model draws.

    Sampling uses exactly balanced labels (n must be even) so estimates
    converge to the closed forms without label-imbalance noise. With
    labeler=None the pseudo-labels equal the ground truth. Sampling is
    sharded; each shard derives its own (seed, shard) stream, so results
    are bit-identical for a fixed seed regardless of thread count.
    """
    from .synthetic import reweight_embed, sample_latents

    if n < 2:
        raise DataError("need at least two samples")
    if n % 2:
        raise DataError("balanced sampling requires an even sample count")

    edges = list(range(0, n, _MC_SHARD)) + [n]
    # keep every shard even so per-shard balanced sampling stays exact
    spans = [(a, b) for a, b in zip(edges[:-1], edges[1:])]

    z = np.empty((n, p.total_dim))
    gt = np.empty(n, dtype=np.int64)
    pl = np.empty(n, dtype=np.int64)

    def run_shard(idx_span):
        idx, (a, b) = idx_span
        batch = sample_latents(p, b - a, philox_stream(seed, 3, idx), balanced=True)
        emb_rows = reweight_embed(batch.latents, w.w)
        z[a:b] = emb_rows
        gt[a:b] = batch.gt_labels
        if labeler is None:
            pl[a:b] = batch.gt_labels
        else:
            emb = EmbeddingSet(data=emb_rows, n_classes=2, labels=batch.gt_labels)
            pl[a:b] = labeler(batch, emb, philox_stream(seed, 4, idx))

    tasks = list(enumerate(spans))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_shard, tasks))
    else:
        for task in tasks:
            run_shard(task)

    emb_all = EmbeddingSet(data=z, n_classes=2, labels=gt)
    gt_report = compute_variance_report(emb_all, gt)
    pl_report = compute_variance_report(emb_all, pl)
    return McMeasure(gt_report=gt_report, pl_report=pl_report, accuracy=float(np.mean(pl == gt)))
