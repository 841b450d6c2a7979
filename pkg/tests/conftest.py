"""Shared fixtures: deterministic synthetic material and small models.

Session-scoped fixtures carry the expensive artifacts (prepared corpus
directory, briefly trained model) so the suite stays fast; everything is
seeded so reruns are bit-stable.
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from callsep.audio import Waveform
from callsep.corpus import MixtureTriple, SplitManifest, make_mixture
from callsep.model import SeparatorConfig, build_model
from callsep.synth import synth_triple, synth_turn_taking_pair


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def toy_cfg():
    return SeparatorConfig.toy()


@pytest.fixture(scope="session")
def toy_model(toy_cfg):
    return build_model(toy_cfg, seed=0)


@pytest.fixture(scope="session")
def synth_triples():
    """Eight 1 s fully-overlapped two-voice triples."""
    return [synth_triple(i, duration_s=1.0) for i in range(8)]


@pytest.fixture(scope="session")
def overfit_manifest(synth_triples):
    return SplitManifest(
        train=list(synth_triples),
        validation=list(synth_triples),
        test=list(synth_triples),
        fractions=(0.34, 0.33, 0.33),
        seed=0,
    )


@pytest.fixture(scope="session")
def turn_taking_30s():
    """One 30 s mostly-alternating pair plus its mixture."""
    s1, s2 = synth_turn_taking_pair(0, duration_s=30.0)
    mixture, _ = make_mixture(s1, s2)
    return mixture, s1, s2


def turn_taking_crops(seed: int, crop_s: float = 2.0, duration_s: float = 30.0,
                      min_rms: float = 0.02) -> list[MixtureTriple]:
    """Fixed-length triples cropped from a turn-taking pair.

    Crops where either speaker is essentially silent are dropped: a triple
    needs both references audible for the separation objective to be
    defined, just as real call segments have both sides talking.
    """
    s1, s2 = synth_turn_taking_pair(seed, duration_s=duration_s)
    n = int(crop_s * 8000)
    out = []
    for k in range(int(duration_s // crop_s)):
        a, b = k * n, (k + 1) * n
        x1, x2 = s1.samples[a:b], s2.samples[a:b]
        if min(np.sqrt(np.mean(x1 ** 2)), np.sqrt(np.mean(x2 ** 2))) < min_rms:
            continue
        c1, c2 = Waveform(x1, 8000), Waveform(x2, 8000)
        mix, clipped = make_mixture(c1, c2)
        out.append(
            MixtureTriple(
                mixture=mix, source1=c1, source2=c2,
                group_id=f"tt{seed}", segment_index=k, clipped=clipped,
            )
        )
    return out


@pytest.fixture(scope="session")
def trained_toy(overfit_manifest, toy_cfg):
    """A toy model briefly overfit on the eight synthetic triples.

    One hundred fifty single-batch epochs separate these triples clearly
    (~10 dB improvement) at a one-time cost under a minute.
    """
    from callsep.trainer import TrainConfig, train

    cfg = TrainConfig(max_epochs=150, patience=150, batch_size=8, seed=0)
    model, record = train(overfit_manifest, toy_cfg, cfg, out_dir=None)
    return model, record


@pytest.fixture(scope="session")
def prepared_corpus(tmp_path_factory):
    """A small on-disk corpus built from synthetic stereo calls."""
    from callsep.corpus import prepare_corpus_dir
    from callsep.synth import synth_corpus

    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(root / "raw", n_calls=6, duration_s=20.0, seed=0)
    manifest_path = prepare_corpus_dir(
        root / "raw", root / "prepared",
        fractions=(0.5, 0.3, 0.2), seed=1, segment_seconds=5.0,
    )
    return manifest_path


def mixture_baseline_si_snr(triples) -> float:
    """Mean SI-SNR of the raw mixture fed back as both estimates."""
    from callsep.metrics import si_snr

    scores = []
    for t in triples:
        mix = torch.from_numpy(t.mixture.samples)
        refs = torch.stack(
            [torch.from_numpy(t.source1.samples), torch.from_numpy(t.source2.samples)]
        )
        scores.append(float(si_snr(mix.expand(2, -1), refs).mean()))
    return float(np.mean(scores))
