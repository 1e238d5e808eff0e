"""Synthetic corrupted classification streams and the reweighting head.

Latent samples have a four-segment layout [cls | irr | shift | noise]:
the cls segment is +/-mu depending on the binary label, irr and noise are
Rademacher (+/-1) with the noise segment scaled by the corruption severity
s, and the shift segment is the deterministic vector s*delta shared by all
samples of a domain. Embeddings are produced by a normalization head with
a learnable per-dimension weight vector: z = (v .* w) / ||v .* w||.

Text embeddings are synthetic stand-ins for prompt-derived class vectors:
aligned with the class subspace, plus an optional class-dependent
contamination component outside it. Contamination is what makes severity
hurt zero-shot accuracy here; with ideal (uncontaminated) text vectors the
argmax decision in this model does not depend on severity at all.
"""

from dataclasses import dataclass

import numpy as np

from ._rng import philox_stream
from .errors import DataError
from .metrics import EmbeddingSet
from .theory import LatentParams

__all__ = [
    "LatentBatch",
    "NormWeights",
    "TextEmbeddings",
    "default_latent_params",
    "sample_latents",
    "embed",
    "reweight_embed",
    "make_text_embeddings",
    "stream",
]

# rows whose reweighted norm falls below this are treated as annihilated,
# not clamped: silent clamping would hide weight-collapse bugs
NORM_FLOOR = 1e-30


@dataclass
class LatentBatch:
    """B x d latent rows with ground-truth labels and the severity used."""

    latents: np.ndarray
    gt_labels: np.ndarray
    severity: float


@dataclass
class NormWeights:
    """Per-dimension weight vector of the normalization head.

    `segment_bounds` holds the four segment lengths (cls, irr, shift, noise)
    in synthetic mode, or a single flat length when adapting over dumped
    embeddings where no segment structure exists.
    """

    w: np.ndarray
    segment_bounds: tuple[int, ...]

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 1 or self.w.size != sum(self.segment_bounds):
            raise DataError("weight length does not match segment bounds")

    @classmethod
    def ones_for(cls, p: LatentParams) -> "NormWeights":
        return cls(np.ones(p.total_dim), p.dims)

    @classmethod
    def ones_flat(cls, dim: int) -> "NormWeights":
        return cls(np.ones(dim), (dim,))

    def segments(self) -> tuple[np.ndarray, ...]:
        """Views of w split at the segment bounds."""
        return tuple(np.split(self.w, np.cumsum(self.segment_bounds)[:-1]))

    def segment_slices(self) -> tuple[slice, ...]:
        edges = np.concatenate([[0], np.cumsum(self.segment_bounds)])
        return tuple(slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]))

    def copy(self) -> "NormWeights":
        return NormWeights(self.w.copy(), self.segment_bounds)


@dataclass
class TextEmbeddings:
    """C x d class text vectors, rows unit-norm."""

    t: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.t.ndim != 2:
            raise DataError("text embeddings must be 2-D")
        norms = np.linalg.norm(self.t, axis=1)
        # 1e-6 admits rows that round-tripped through float32 storage;
        # internally constructed rows are unit to 1e-12
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise DataError("text embedding rows must be unit-norm")

    @property
    def n_classes(self) -> int:
        return self.t.shape[0]

    @property
    def dim(self) -> int:
        return self.t.shape[1]


def default_latent_params(
    severity: float = 0.0,
    d_cls: int = 8,
    d_irr: int = 32,
    d_shift: int = 8,
    d_noise: int = 16,
    mu_norm2: float = 4.0,
    delta_norm2: float = 9.0,
) -> LatentParams:
    """Desk-scale model defaults: large enough for stable statistics,
    small enough for sub-second batches. mu and delta are spread uniformly
    over their segments, which pins only the norms the closed forms use."""
    mu = np.full(d_cls, np.sqrt(mu_norm2 / d_cls))
    delta = np.full(d_shift, np.sqrt(delta_norm2 / d_shift))
    return LatentParams(mu=mu, d_irr=d_irr, delta=delta, d_noise=d_noise, severity=severity)


def sample_latents(p: LatentParams, batch_size: int, seed_or_rng, balanced: bool = False) -> LatentBatch:
    """Draw one latent batch.

    Labels are i.i.d. uniform by default (streaming mode); `balanced=True`
    draws exactly batch_size/2 per class (theory mode, batch_size must be
    even) so Monte Carlo estimates carry no label-imbalance noise.
    """
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else philox_stream(seed_or_rng)
    if balanced:
        if batch_size % 2:
            raise DataError("balanced sampling requires an even batch size")
        labels = np.repeat(np.array([0, 1], dtype=np.int64), batch_size // 2)
    else:
        labels = rng.integers(0, 2, size=batch_size, dtype=np.int64)

    d_cls, d_irr, d_shift, d_noise = p.dims
    s = p.severity
    v = np.empty((batch_size, p.total_dim))
    signs = np.where(labels == 1, 1.0, -1.0)
    v[:, :d_cls] = signs[:, None] * p.mu
    v[:, d_cls:d_cls + d_irr] = rng.integers(0, 2, size=(batch_size, d_irr)) * 2.0 - 1.0
    v[:, d_cls + d_irr:d_cls + d_irr + d_shift] = s * p.delta
    v[:, d_cls + d_irr + d_shift:] = s * (rng.integers(0, 2, size=(batch_size, d_noise)) * 2.0 - 1.0)
    return LatentBatch(latents=v, gt_labels=labels, severity=s)


def reweight_embed(latents: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Rows of normalize(v .* w); raises on annihilated rows."""
    u = latents * w
    norms = np.linalg.norm(u, axis=1)
    if np.any(norms < NORM_FLOOR):
        bad = int(np.argmin(norms))
        raise DataError(f"annihilated sample at row {bad}: reweighted norm {norms[bad]:.3e}")
    return u / norms[:, None]


def embed(batch: LatentBatch, w: NormWeights) -> EmbeddingSet:
    """Push a latent batch through the normalization head."""
    if batch.latents.shape[1] != w.w.size:
        raise DataError("latent dimension does not match weight length")
    z = reweight_embed(batch.latents, w.w)
    return EmbeddingSet(data=z, n_classes=2, labels=batch.gt_labels)


def make_text_embeddings(p: LatentParams, contamination: float, seed: int) -> TextEmbeddings:
    """Synthetic class text vectors with contamination epsilon >= 0.

    t_1 = normalize([+mu; eps*eta_1]) and t_0 = normalize([-mu; eps*eta_0]),
    where eta_c are fixed per-seed sign vectors (+/-1 per coordinate, the
    same unit per-dimension magnitude the latent model uses), drawn
    independently per class over the irr and shift dimensions. The noise
    block stays zero: a text vector is fixed, so it can only overlap with
    latent directions that persist across samples (background attributes,
    the domain shift); per-sample unstructured noise has no persistent
    direction for it to pick up. eps=0 gives ideal text vectors confined
    to the class subspace; eps>0 makes growing severity degrade zero-shot
    accuracy through the shift-block overlap.
    """
    if contamination < 0:
        raise DataError("contamination must be >= 0")
    d_cls, d_irr, d_shift, _ = p.dims
    rng = philox_stream(seed, 2)  # stream index 2 reserved for text vectors
    t = np.zeros((2, p.total_dim))
    t[0, :d_cls] = -p.mu
    t[1, :d_cls] = p.mu
    if contamination > 0.0:
        eta = rng.integers(0, 2, size=(2, d_irr + d_shift)) * 2.0 - 1.0
        t[:, d_cls:d_cls + d_irr + d_shift] = contamination * eta
    t /= np.linalg.norm(t, axis=1)[:, None]
    return TextEmbeddings(t=t)


def stream(p_schedule, seed: int):
    """Yield latent batches for a schedule of (LatentParams, n_batches, batch_size).

    Entries are interleaved round-robin until exhausted, which covers both
    single-corruption runs (one entry) and domain mixtures. Each schedule
    entry draws from its own substream, so the generated data for an entry
    does not depend on what it is interleaved with.
    """
    schedule = list(p_schedule)
    if not schedule:
        raise DataError("empty schedule")
    rngs = [philox_stream(seed, 1, idx) for idx in range(len(schedule))]
    remaining = [n_batches for _, n_batches, _ in schedule]
    while any(r > 0 for r in remaining):
        for idx, (params, _, batch_size) in enumerate(schedule):
            if remaining[idx] > 0:
                remaining[idx] -= 1
                yield sample_latents(params, batch_size, rngs[idx])
