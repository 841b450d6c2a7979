"""Embedding backends, similarity scoring, and the composite objective."""

import math

import numpy as np
import pytest
import torch

from callsep.embeddings import (
    SimilarityConfig,
    StubEmbedder,
    composite_loss,
    cosine_similarity,
    get_backend,
    resample_double,
    similarity_loss,
    similarity_report,
)
from callsep.errors import BackendLengthError, BackendMissingError, DimensionError
from callsep.metrics import pit_loss
from callsep.synth import synth_triple


class TestDescriptorParsing:
    def test_stub_with_seed(self):
        be = get_backend("stub:seed=7")
        assert isinstance(be, StubEmbedder)
        assert be.seed == 7 and be.layer is None
        assert be.descriptor == "stub:seed=7"

    def test_stub_with_layer(self):
        be = get_backend("stub:seed=0,layer=3")
        assert be.layer == 3
        assert be.descriptor == "stub:seed=0,layer=3"

    def test_default_stub_seed_zero(self):
        assert get_backend("stub").seed == 0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            get_backend("quantum:bits=3")

    def test_malformed_option_rejected(self):
        with pytest.raises(ValueError):
            get_backend("stub:seed")

    def test_transformer_requires_layer(self):
        with pytest.raises(ValueError):
            get_backend("transformer")

    def test_transformer_layer_bounds(self):
        with pytest.raises((ValueError, BackendMissingError)):
            get_backend("transformer:layer=13")

    def test_tdnn_unavailable_raises_backend_missing(self):
        """The x-vector backend needs an optional package we don't ship."""
        pytest.importorskip_reason = None
        try:
            import pyannote.audio  # noqa: F401

            pytest.skip("pyannote installed; availability path not testable")
        except ImportError:
            pass
        with pytest.raises(BackendMissingError):
            get_backend("tdnn")

    def test_transformer_without_weights_raises_backend_missing(self):
        """Without the package or its weights the descriptor must fail loud."""
        try:
            backend = get_backend("transformer:layer=3")
        except BackendMissingError:
            return
        assert backend.layer == 3  # environment actually has usable weights


class TestStubEmbedder:
    def test_deterministic_per_seed(self):
        wave = torch.from_numpy(synth_triple(0, duration_s=0.5).source1.samples)
        a = get_backend("stub:seed=4").embed_tensor(wave)
        b = get_backend("stub:seed=4").embed_tensor(wave)
        assert torch.equal(a, b)

    def test_different_seeds_differ(self):
        wave = torch.from_numpy(synth_triple(0, duration_s=0.5).source1.samples)
        a = get_backend("stub:seed=1").embed_tensor(wave)
        b = get_backend("stub:seed=2").embed_tensor(wave)
        assert not torch.allclose(a, b)

    def test_layers_mimic_distinct_feature_spaces(self):
        wave = torch.from_numpy(synth_triple(0, duration_s=0.5).source1.samples)
        a = get_backend("stub:seed=0,layer=1").embed_tensor(wave)
        b = get_backend("stub:seed=0,layer=3").embed_tensor(wave)
        assert not torch.allclose(a, b)

    def test_dimension_is_64(self):
        wave = torch.from_numpy(synth_triple(0, duration_s=0.5).source1.samples)
        vec = get_backend("stub").embed(wave.numpy())
        assert vec.dimension == 64

    def test_batched_matches_single(self):
        be = get_backend("stub")
        waves = torch.from_numpy(
            np.stack(
                [
                    synth_triple(0, duration_s=0.5).source1.samples,
                    synth_triple(1, duration_s=0.5).source1.samples,
                ]
            )
        )
        batch = be.embed_tensor(waves)
        for i in range(2):
            torch.testing.assert_close(batch[i], be.embed_tensor(waves[i]))

    def test_too_short_input_rejected(self):
        with pytest.raises(BackendLengthError):
            get_backend("stub").embed_tensor(torch.randn(16))

    def test_gradient_reaches_audio(self):
        audio = torch.randn(4000, requires_grad=True)
        emb = get_backend("stub").embed_tensor(audio)
        emb.sum().backward()
        assert audio.grad is not None
        assert bool(torch.isfinite(audio.grad).all())
        assert float(audio.grad.abs().sum()) > 0

    def test_active_voice_dominates_statistics(self):
        """A mostly-silent segment embeds as its talking part.

        Padding a voiced second with silence must barely move the
        embedding; this is what makes short sparse segments routable.
        """
        be = get_backend("stub")
        voiced = torch.from_numpy(synth_triple(3, duration_s=1.0).source1.samples)
        padded = torch.cat([voiced, torch.zeros(3 * 8000)])
        css = float(cosine_similarity(be.embed_tensor(voiced), be.embed_tensor(padded)))
        assert css > 0.99


class TestResampleDouble:
    def test_doubles_length(self):
        out = resample_double(torch.randn(4000))
        assert out.shape[-1] == 8000

    def test_preserves_tone_frequency(self):
        t = np.arange(8000) / 8000.0
        tone = torch.from_numpy(np.sin(2 * np.pi * 440 * t).astype(np.float32))
        up = resample_double(tone).numpy()
        spectrum = np.abs(np.fft.rfft(up * np.hanning(len(up))))
        peak_hz = np.argmax(spectrum) * 16000 / len(up)
        assert abs(peak_hz - 440) < 5

    def test_is_linear_and_differentiable(self):
        x = torch.randn(1024, requires_grad=True)
        y = torch.randn(1024)
        left = resample_double(x + y)
        right = resample_double(x) + resample_double(y)
        torch.testing.assert_close(left, right, atol=1e-5, rtol=1e-5)
        left.sum().backward()
        assert torch.isfinite(x.grad).all()


class TestCosineSimilarity:
    def test_identical_vectors_score_one(self, rng):
        v = torch.from_numpy(rng.normal(size=64))
        assert float(cosine_similarity(v, v)) == pytest.approx(1.0)

    def test_opposite_vectors_score_minus_one(self, rng):
        v = torch.from_numpy(rng.normal(size=64))
        assert float(cosine_similarity(v, -v)) == pytest.approx(-1.0)

    def test_orthogonal_vectors_score_zero(self):
        a = torch.zeros(4)
        b = torch.zeros(4)
        a[0], b[1] = 1.0, 1.0
        assert float(cosine_similarity(a, b)) == pytest.approx(0.0)

    def test_bounded_on_random_pairs(self, rng):
        for _ in range(100):
            a = torch.from_numpy(rng.normal(size=32))
            b = torch.from_numpy(rng.normal(size=32))
            assert -1.0 - 1e-6 <= float(cosine_similarity(a, b)) <= 1.0 + 1e-6

    def test_zero_vector_yields_zero_not_nan(self):
        a = torch.zeros(8)
        b = torch.ones(8)
        assert float(cosine_similarity(a, b)) == 0.0

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            cosine_similarity(torch.ones(8), torch.ones(16))


class TestSimilarityLoss:
    def test_neutral_similarity_golden(self):
        """css = 0 at weight 5 costs exactly 5 * ln 2."""
        assert similarity_loss(0.0, 5.0) == pytest.approx(5 * math.log(2), abs=1e-4)

    def test_opposite_embeddings_cost_nothing(self):
        for weight in (5.0, 10.0, 20.0):
            assert similarity_loss(-1.0, weight) == pytest.approx(0.0, abs=1e-12)

    def test_identical_embeddings_large_finite(self):
        value = similarity_loss(1.0, 5.0)
        assert math.isfinite(value)
        assert value == pytest.approx(-5 * math.log(1e-8), rel=1e-6)

    def test_monotone_increasing_in_similarity(self):
        grid = np.linspace(-1, 0.999999, 64)
        values = [similarity_loss(c, 5.0) for c in grid]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_weight_scales_linearly(self):
        assert similarity_loss(0.3, 10.0) == pytest.approx(2 * similarity_loss(0.3, 5.0))

    def test_tensor_input_stays_differentiable(self):
        css = torch.tensor(0.2, requires_grad=True)
        loss = similarity_loss(css, 5.0)
        loss.backward()
        assert torch.isfinite(css.grad)
        assert float(css.grad) > 0  # pushing similarity down reduces the loss


class TestCompositeLoss:
    def _triple_tensors(self, seed=0):
        t = synth_triple(seed, duration_s=0.5)
        est = torch.stack(
            [torch.from_numpy(t.source1.samples), torch.from_numpy(t.source2.samples)]
        )
        return est

    def test_weight_zero_bit_equals_pit(self):
        est = self._triple_tensors()
        refs = est.flip(0)
        be = get_backend("stub")
        total, parts = composite_loss(est, refs, be, SimilarityConfig(weight=0.0))
        expected, perm = pit_loss(est, refs)
        assert float(total) == float(expected)
        assert parts["similarity"] == 0.0 and parts["permutation"] == perm

    def test_positive_weight_adds_penalty(self):
        est = self._triple_tensors()
        refs = est.clone()
        be = get_backend("stub")
        total, parts = composite_loss(est, refs, be, SimilarityConfig(weight=5.0))
        assert float(total) == pytest.approx(parts["pit"] + parts["similarity"], abs=1e-5)
        assert parts["similarity"] > 0  # distinct voices still share structure

    def test_gradients_flow_to_audio_not_backend(self):
        est = self._triple_tensors().clone().requires_grad_(True)
        refs = self._triple_tensors(seed=1)
        be = get_backend("stub")
        total, _ = composite_loss(est, refs, be, SimilarityConfig(weight=5.0))
        total.backward()
        assert est.grad is not None and bool(torch.isfinite(est.grad).all())
        assert not be.projection.requires_grad
        assert not be.filterbank.requires_grad

    def test_similarity_term_steers_toward_dissimilarity(self):
        """The penalty's gradient must push the two estimates apart."""
        est = self._triple_tensors().clone().requires_grad_(True)
        refs = self._triple_tensors(seed=2)
        be = get_backend("stub")
        cfg = SimilarityConfig(weight=5.0)
        total, parts0 = composite_loss(est, refs, be, cfg)
        total.backward()
        with torch.no_grad():
            stepped = est - 1e-3 * est.grad
        _, parts1 = composite_loss(stepped, refs, be, cfg)
        assert parts1["pit"] + parts1["similarity"] < parts0["pit"] + parts0["similarity"]


class TestSimilarityReport:
    def test_rows_cover_all_samples(self):
        triples = [synth_triple(i, duration_s=0.5) for i in range(3)]
        rows = similarity_report(triples, get_backend("stub:seed=0"))
        assert [r["sample_id"] for r in rows] == [t.sample_id for t in triples]
        assert all(-1.0 <= r["css"] <= 1.0 for r in rows)
        assert all(r["backend"] == "stub" for r in rows)
