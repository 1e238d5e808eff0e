import numpy as np
import pytest

from mint_tta.engine import (
    GradAccumulator,
    MeanAccumulator,
    MintConfig,
    adjust_text,
    ascent_step,
    batch_gradient,
    batch_objective,
    gradient_contributions,
    init_state,
    predict,
    process_batch,
)
from mint_tta.errors import DataError
from mint_tta.metrics import EmbeddingSet
from mint_tta.synthetic import (
    LatentBatch,
    NormWeights,
    TextEmbeddings,
    default_latent_params,
    make_text_embeddings,
    reweight_embed,
    sample_latents,
)
from mint_tta.theory import LatentParams, flip_labeler

RNG = np.random.default_rng(4242)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestPredict:
    def test_basic(self):
        emb = EmbeddingSet(data=np.array([[1.0, 0.0]]), n_classes=2)
        text = TextEmbeddings(t=np.array([[1.0, 0.0], [0.0, 1.0]]))
        labels, scores = predict(emb, text)
        assert labels.tolist() == [0]
        assert np.allclose(scores, [[1.0, 0.0]])

    def test_tie_breaks_to_smallest_index(self):
        emb = EmbeddingSet(data=np.array([unit([1.0, 1.0])]), n_classes=2)
        text = TextEmbeddings(t=np.array([[1.0, 0.0], [0.0, 1.0]]))
        labels, _ = predict(emb, text)
        assert labels.tolist() == [0]

    def test_ideal_text_recovers_gt(self):
        p = default_latent_params(severity=3.0)
        batch = sample_latents(p, 500, 1)
        emb = EmbeddingSet(
            data=reweight_embed(batch.latents, np.ones(p.total_dim)), n_classes=2
        )
        labels, _ = predict(emb, make_text_embeddings(p, 0.0, seed=0))
        assert np.array_equal(labels, batch.gt_labels)

    def test_argmax_invariant_to_positive_scaling(self):
        p = default_latent_params(severity=2.0)
        batch = sample_latents(p, 100, 2)
        z = reweight_embed(batch.latents, np.ones(p.total_dim))
        text = make_text_embeddings(p, 0.3, seed=0)
        l1, _ = predict(EmbeddingSet(data=z, n_classes=2), text)
        l2, _ = predict(EmbeddingSet(data=7.5 * z, n_classes=2), text)
        assert np.array_equal(l1, l2)


class TestMeanAccumulator:
    def test_first_observation(self):
        acc = MeanAccumulator(2, 3)
        z = np.array([0.1, 0.2, 0.3])
        acc.update(z, 0)
        assert np.array_equal(acc.global_mean, z)
        assert np.array_equal(acc.class_means[0], z)

    def test_recurrence_unrolled_once(self):
        acc = MeanAccumulator(2, 2)
        for _ in range(3):
            acc.update(np.array([1.0, 2.0]), 0)
        acc.update(np.array([5.0, 6.0]), 0)
        assert np.allclose(acc.global_mean, (3 * np.array([1.0, 2.0]) + [5.0, 6.0]) / 4)

    def test_streaming_equals_direct_mean(self):
        z = RNG.standard_normal((1000, 8))
        labels = RNG.integers(0, 5, size=1000)
        acc = MeanAccumulator(5, 8)
        for row, lab in zip(z, labels):
            acc.update(row, lab)
        assert np.max(np.abs(acc.global_mean - z.mean(axis=0))) < 1e-12
        for c in range(5):
            assert np.max(np.abs(acc.class_means[c] - z[labels == c].mean(axis=0))) < 1e-12

    def test_batch_updates_equal_direct_mean(self):
        z = RNG.standard_normal((500, 4))
        labels = RNG.integers(0, 3, size=500)
        acc = MeanAccumulator(3, 4)
        for i in range(0, 500, 20):
            acc.update_batch(z[i:i + 20], labels[i:i + 20])
        assert np.max(np.abs(acc.global_mean - z.mean(axis=0))) < 1e-12
        assert acc.global_count == 500

    def test_count_invariants(self):
        acc = MeanAccumulator(4, 2)
        labels = RNG.integers(0, 4, size=100)
        for lab in labels:
            acc.update(RNG.standard_normal(2), lab)
        assert acc.class_counts.sum() == acc.global_count == 100
        empty = MeanAccumulator(4, 2)
        empty.update(np.ones(2), 1)
        assert np.all(empty.class_means[0] == 0.0)  # unseen class rows stay zero

    def test_label_validation(self):
        acc = MeanAccumulator(2, 2)
        with pytest.raises(DataError):
            acc.update(np.ones(2), 2)


class TestBatchObjective:
    @staticmethod
    def brute_force(z, labels, zt, ztc):
        classes = sorted(set(labels.tolist()))
        total = intra = 0.0
        for c in classes:
            idx = [i for i in range(len(labels)) if labels[i] == c]
            total += sum(float(np.sum((z[i] - zt) ** 2)) for i in idx) / len(idx)
            intra += sum(float(np.sum((z[i] - ztc[c]) ** 2)) for i in idx) / len(idx)
        return (total - intra) / len(classes)

    def test_single_sample_at_its_class_mean(self):
        z = unit([1.0, 0.0, 0.0])
        acc = MeanAccumulator(2, 3)
        acc.update(z, 0)
        acc.update(z, 0)
        acc.update(unit([0.0, 1.0, 0.0]), 1)
        emb = EmbeddingSet(data=z[None, :], n_classes=2)
        got = batch_objective(emb, [0], acc)
        assert got == pytest.approx(float(np.sum((z - acc.global_mean) ** 2)), abs=1e-15)
        assert got > 0

    def test_zero_when_class_mean_equals_global_mean(self):
        acc = MeanAccumulator(2, 3)
        rows = RNG.standard_normal((10, 3))
        for row in rows:
            acc.update(row, 0)  # only class 0 seen: global mean == class mean
        emb = EmbeddingSet(data=RNG.standard_normal((4, 3)), n_classes=2)
        assert batch_objective(emb, [0, 0, 0, 0], acc) == pytest.approx(0.0, abs=1e-12)

    def test_matches_brute_force(self):
        for _ in range(10):
            p = default_latent_params(severity=2.0)
            batch = sample_latents(p, 20, RNG)
            z = reweight_embed(batch.latents, np.ones(p.total_dim))
            labels = RNG.integers(0, 2, size=20)
            acc = MeanAccumulator(2, p.total_dim)
            hist = sample_latents(p, 50, RNG)
            acc.update_batch(reweight_embed(hist.latents, np.ones(p.total_dim)),
                             RNG.integers(0, 2, size=50))
            acc.update_batch(z, labels)
            got = batch_objective(EmbeddingSet(data=z, n_classes=2), labels, acc)
            want = self.brute_force(z, labels, acc.global_mean, acc.class_means)
            assert got == pytest.approx(want, abs=1e-12)

    def test_requires_class_means(self):
        acc = MeanAccumulator(2, 2)
        acc.update(unit([1.0, 1.0]), 0)
        emb = EmbeddingSet(data=np.eye(2), n_classes=2)
        with pytest.raises(DataError, match="no mean"):
            batch_objective(emb, [0, 1], acc)

    def test_empty_batch(self):
        acc = MeanAccumulator(2, 2)
        with pytest.raises(DataError, match="empty batch"):
            batch_objective(EmbeddingSet(data=np.zeros((0, 2)), n_classes=2), [], acc)


class TestBatchGradient:
    def test_zero_when_means_coincide(self):
        acc = MeanAccumulator(2, 4)
        rows = RNG.standard_normal((8, 4))
        for row in rows:
            acc.update(row, 1)
        p = LatentParams(mu=[1.0], d_irr=1, delta=[1.0], d_noise=1, severity=1.0)
        batch = sample_latents(p, 5, RNG)
        g = batch_gradient(batch.latents, NormWeights.ones_for(p), np.ones(5, dtype=int), acc)
        assert np.all(g == 0.0)

    def test_matches_finite_differences(self):
        h = 1e-6
        for trial in range(12):
            bs = [1, 2, 20][trial % 3]
            p = LatentParams(
                mu=RNG.uniform(0.5, 2.0, size=2),
                d_irr=int(RNG.integers(2, 6)),
                delta=RNG.uniform(0.0, 2.0, size=2),
                d_noise=int(RNG.integers(2, 6)),
                severity=float(RNG.uniform(0.5, 4.0)),
            )
            batch = sample_latents(p, bs, RNG)
            w = NormWeights(1.0 + RNG.uniform(-0.3, 0.3, p.total_dim), p.dims)
            labels = RNG.integers(0, 2, size=bs)
            acc = MeanAccumulator(2, p.total_dim)
            hist = sample_latents(p, 30, RNG)
            acc.update_batch(reweight_embed(hist.latents, w.w), RNG.integers(0, 2, size=30))
            acc.update_batch(reweight_embed(batch.latents, w.w), labels)

            g = batch_gradient(batch.latents, w, labels, acc)
            fd = np.empty(p.total_dim)
            for j in range(p.total_dim):
                wp, wm = w.w.copy(), w.w.copy()
                wp[j] += h
                wm[j] -= h
                fd[j] = (
                    batch_objective(
                        EmbeddingSet(data=reweight_embed(batch.latents, wp), n_classes=2),
                        labels, acc)
                    - batch_objective(
                        EmbeddingSet(data=reweight_embed(batch.latents, wm), n_classes=2),
                        labels, acc)
                ) / (2 * h)
            assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12) < 1e-5

    def test_population_scale_sign_law_smoke(self):
        p = LatentParams(mu=[np.sqrt(2), np.sqrt(2)], d_irr=16,
                         delta=[2.0, 2.0, 1.0], d_noise=8, severity=2.0)
        w = NormWeights.ones_for(p)
        batch = sample_latents(p, 20_000, 33, balanced=True)
        z = reweight_embed(batch.latents, w.w)
        emb = EmbeddingSet(data=z, n_classes=2, labels=batch.gt_labels)
        pl = flip_labeler(0.2)(batch, emb, np.random.default_rng(7))
        acc = MeanAccumulator(2, p.total_dim)
        acc.update_batch(z, pl)
        contrib = gradient_contributions(batch.latents, w, pl, acc)
        g = contrib.sum(axis=0)
        sigma = contrib.std(axis=0, ddof=1) * np.sqrt(contrib.shape[0])
        sl = w.segment_slices()
        assert np.all(g[sl[2]] <= 3 * sigma[sl[2]])
        assert np.all(g[sl[0]] >= -3 * sigma[sl[0]])

    def test_annihilated_sample(self):
        p = LatentParams(mu=[1.0], d_irr=1, delta=[1.0], d_noise=1, severity=0.0)
        batch = sample_latents(p, 3, RNG)
        acc = MeanAccumulator(2, 4)
        acc.update_batch(reweight_embed(batch.latents, np.ones(4)), np.zeros(3, dtype=int))
        w = NormWeights(np.array([0.0, 0.0, 1.0, 1.0]), p.dims)
        with pytest.raises(DataError, match="annihilated"):
            batch_gradient(batch.latents, w, np.zeros(3, dtype=int), acc)


class TestGradAccumulator:
    def test_first_gradient(self):
        acc = GradAccumulator(3)
        g = np.array([1.0, -2.0, 3.0])
        acc.update(g)
        assert np.array_equal(acc.mean_grad, g)

    def test_opposite_gradients_cancel(self):
        acc = GradAccumulator(2)
        g = np.array([0.5, -0.25])
        acc.update(g)
        acc.update(-g)
        assert np.allclose(acc.mean_grad, 0.0, atol=1e-16)

    def test_streaming_equals_direct_mean(self):
        gs = RNG.standard_normal((50, 6))
        acc = GradAccumulator(6)
        for g in gs:
            acc.update(g)
        assert np.max(np.abs(acc.mean_grad - gs.mean(axis=0))) < 1e-12
        assert acc.batch_count == 50


class TestAscentStep:
    def test_zero_component_unchanged(self):
        w0 = NormWeights(np.ones(4), (4,))
        g = np.array([0.0, 0.5, -0.5, 0.0])
        w1 = ascent_step(w0, g, MintConfig())
        assert w1.w[0] == 1.0 and w1.w[3] == 1.0

    def test_first_step_magnitude(self):
        w0 = NormWeights(np.ones(1), (1,))
        w1 = ascent_step(w0, np.array([0.5]), MintConfig(learning_rate=0.007, ascent_eps=1e-8))
        expected = 0.007 * 0.5 / (0.5 + 1e-8)
        assert w1.w[0] - 1.0 == pytest.approx(expected, rel=1e-12)
        assert w1.w[0] - 1.0 == pytest.approx(0.007, abs=1e-8)

    def test_sign_dominated(self):
        w0 = NormWeights(np.ones(3), (3,))
        g = np.array([0.2, -0.4, 1.0])
        a = ascent_step(w0, g, MintConfig())
        b = ascent_step(w0, 10 * g, MintConfig())
        assert np.max(np.abs(a.w - b.w)) < 1e-8


class TestAdjustText:
    def test_noop_without_observations(self):
        text = make_text_embeddings(default_latent_params(), 0.3, seed=0)
        acc = MeanAccumulator(2, text.dim)
        out = adjust_text(text, acc, 10_000.0)
        assert np.array_equal(out.t, text.t)

    def test_prior_free_limit(self):
        text = TextEmbeddings(t=np.array([[1.0, 0.0], [0.0, 1.0]]))
        acc = MeanAccumulator(2, 2)
        acc.update(np.array([0.6, 0.8]), 0)
        out = adjust_text(text, acc, 0.0)
        assert np.allclose(out.t[0], [0.6, 0.8], atol=1e-15)
        assert np.array_equal(out.t[1], text.t[1])

    def test_equal_blend_bisector(self):
        text = TextEmbeddings(t=np.array([[1.0, 0.0], [0.0, 1.0]]))
        acc = MeanAccumulator(2, 2)
        for _ in range(10_000):
            acc.update(np.array([0.0, 1.0]), 0)
        out = adjust_text(text, acc, 10_000.0, global_count=False)
        assert np.allclose(out.t[0], unit([0.5, 0.5]), atol=1e-12)

    def test_exact_cancellation(self):
        text = TextEmbeddings(t=np.array([[1.0, 0.0], [0.0, 1.0]]))
        acc = MeanAccumulator(2, 2)
        acc.update(np.array([-1.0, 0.0]), 0)
        with pytest.raises(DataError, match="degenerate adjusted text"):
            adjust_text(text, acc, 1.0, global_count=False)

    def test_huge_prior_is_identity(self):
        text = make_text_embeddings(default_latent_params(), 0.3, seed=1)
        acc = MeanAccumulator(2, text.dim)
        acc.update_batch(RNG.standard_normal((40, text.dim)), RNG.integers(0, 2, 40))
        out = adjust_text(text, acc, 1e12)
        assert np.max(np.abs(out.t - text.t)) < 1e-9


class TestProcessBatch:
    def _setup(self, severity=2.0, **cfg_kwargs):
        p = default_latent_params(severity=severity)
        text = make_text_embeddings(p, 0.3, seed=0)
        state = init_state(NormWeights.ones_for(p), text, MintConfig(**cfg_kwargs))
        return p, state

    def test_first_single_class_batch_is_noop(self):
        # huge prior keeps text fixed; single-class first batch gives g=0
        p, state = self._setup(k_prior=1e12)
        batch = sample_latents(p, 30, 3)
        one_class = LatentBatch(batch.latents[batch.gt_labels == 1],
                                batch.gt_labels[batch.gt_labels == 1], p.severity)
        z = reweight_embed(one_class.latents, state.w0.w)
        zero_shot, _ = predict(EmbeddingSet(data=z, n_classes=2), state.text)
        if len(set(zero_shot.tolist())) == 1:  # only then is g identically zero
            result = process_batch(state, one_class)
            assert result.grad_norm == 0.0
            assert np.array_equal(result.predictions, zero_shot)

    def test_batch_size_one_well_defined(self):
        p, state = self._setup()
        warmup = sample_latents(p, 10, 5)
        process_batch(state, warmup)
        single = sample_latents(p, 1, 6)
        result = process_batch(state, single)
        assert np.isfinite(result.objective)
        assert result.predictions.shape == (1,)

    def test_purity_and_reset_semantics(self):
        p, state = self._setup()
        process_batch(state, sample_latents(p, 20, 7))
        w0_bytes = state.w0.w.tobytes()
        s1 = state.copy()
        s2 = state.copy()
        batch = sample_latents(p, 20, 8)
        r1 = process_batch(s1, batch)
        r2 = process_batch(s2, batch)
        assert np.array_equal(r1.predictions, r2.predictions)
        assert r1.objective == r2.objective
        assert np.array_equal(r1.w_adapted.w, r2.w_adapted.w)
        assert state.w0.w.tobytes() == w0_bytes
        assert not state.w0.w.flags.writeable

    def test_w0_cannot_be_mutated(self):
        _, state = self._setup()
        with pytest.raises(ValueError):
            state.w0.w[0] = 2.0

    def test_huge_prior_reduces_to_weight_adaptation(self):
        p, state_a = self._setup(k_prior=1e12)
        _, state_b = self._setup(use_text_adjust=False)
        for seed in (10, 11, 12):
            batch = sample_latents(p, 20, seed)
            ra = process_batch(state_a, batch)
            rb = process_batch(state_b, batch)
            assert np.array_equal(ra.predictions, rb.predictions)

    def test_no_mean_acc_batch_size_one_aborts(self):
        p, state = self._setup(use_mean_acc=False)
        with pytest.raises(DataError, match="mean accumulator"):
            process_batch(state, sample_latents(p, 1, 9))

    def test_no_mean_acc_larger_batch_runs(self):
        p, state = self._setup(use_mean_acc=False)
        result = process_batch(state, sample_latents(p, 20, 9))
        assert np.isfinite(result.objective)
        assert state.mean_acc.global_count == 0  # accumulator untouched

    def test_dump_mode_matrix_batch(self):
        p, state = self._setup()
        # stored embeddings play the role of latents for a flat head
        batch = sample_latents(p, 20, 10)
        z = reweight_embed(batch.latents, np.ones(p.total_dim))
        state_flat = init_state(NormWeights.ones_flat(p.total_dim), state.text,
                                MintConfig())
        result = process_batch(state_flat, z, gt_labels=batch.gt_labels)
        assert np.isfinite(result.accuracy)
        assert result.predictions.shape == (20,)

    def test_empty_batch_rejected(self):
        p, state = self._setup()
        with pytest.raises(DataError, match="empty batch"):
            process_batch(state, np.zeros((0, p.total_dim)))
