"""Synthetic two-speaker material for tests, demos, and dry runs.

Real stereo call recordings cannot ship with the repository, so this module
fabricates structurally similar material: each synthetic "speaker" is a
harmonic tone stack with its own fundamental, vibrato, and syllable-rate
amplitude modulation. Two speakers drawn with different seeds occupy
different parts of the band, which keeps the separation task learnable at
desk scale while exercising every real code path (mixing, clipping,
segmentation, metrics, streaming assignment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .corpus import MixtureTriple, make_mixture


@dataclass
class VoiceSpec:
    """Parameters of one synthetic speaker."""

    fundamental_hz: float
    n_harmonics: int
    syllable_hz: float
    vibrato_hz: float
    vibrato_cents: float
    amplitude: float

    @classmethod
    def draw(cls, rng: np.random.Generator, register: str = "low") -> "VoiceSpec":
        """Sample a voice. Registers keep two speakers spectrally distinct."""
        if register == "low":
            f0 = rng.uniform(95.0, 135.0)
        else:
            f0 = rng.uniform(185.0, 245.0)
        return cls(
            fundamental_hz=f0,
            n_harmonics=int(rng.integers(6, 10)),
            syllable_hz=rng.uniform(2.0, 4.5),
            vibrato_hz=rng.uniform(4.0, 7.0),
            vibrato_cents=rng.uniform(15.0, 40.0),
            amplitude=rng.uniform(0.25, 0.4),
        )


def render_voice(
    spec: VoiceSpec,
    duration_s: float,
    sample_rate: int,
    rng: np.random.Generator,
    gate: np.ndarray | None = None,
) -> Waveform:
    """Render one speaker as a gated, vibrato-modulated harmonic stack.

    ``gate`` optionally imposes an activity envelope (for turn-taking
    material); otherwise a smooth syllable-rate envelope is generated.
    """
    n = int(round(duration_s * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    vibrato = 2.0 ** (
        (spec.vibrato_cents / 1200.0) * np.sin(2 * np.pi * spec.vibrato_hz * t + rng.uniform(0, 2 * np.pi))
    )
    phase = 2 * np.pi * np.cumsum(spec.fundamental_hz * vibrato) / sample_rate
    signal = np.zeros(n)
    nyquist = sample_rate / 2.0
    for k in range(1, spec.n_harmonics + 1):
        if k * spec.fundamental_hz >= nyquist * 0.95:
            break
        signal += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * spec.syllable_hz * t + rng.uniform(0, 2 * np.pi))
    signal *= envelope
    if gate is not None:
        signal *= gate[:n]
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal = signal / peak * spec.amplitude
    return Waveform(samples=signal.astype(np.float32), sample_rate=sample_rate)


def _smooth_gate(edges: list[tuple[float, float]], n: int, sample_rate: int, ramp_s: float = 0.02) -> np.ndarray:
    """Activity gate from (start_s, stop_s) intervals with linear ramps.

    Overlapping intervals merge by taking the pointwise maximum.
    """
    gate = np.zeros(n)
    ramp = max(1, int(ramp_s * sample_rate))
    for start_s, stop_s in edges:
        a = max(0, int(start_s * sample_rate))
        b = min(n, int(stop_s * sample_rate))
        if b <= a:
            continue
        piece = np.ones(b - a)
        edge = min(ramp, (b - a) // 2)
        if edge > 0:
            piece[:edge] = np.linspace(0.0, 1.0, edge)
            piece[-edge:] = np.linspace(1.0, 0.0, edge)
        gate[a:b] = np.maximum(gate[a:b], piece)
    return gate


def synth_triple(
    seed: int,
    duration_s: float = 30.0,
    sample_rate: int = 8000,
    group_id: str | None = None,
    segment_index: int = 0,
) -> MixtureTriple:
    """One mixture triple with both speakers active throughout."""
    rng = np.random.default_rng(seed)
    s1 = render_voice(VoiceSpec.draw(rng, "low"), duration_s, sample_rate, rng)
    s2 = render_voice(VoiceSpec.draw(rng, "high"), duration_s, sample_rate, rng)
    mixture, clipped = make_mixture(s1, s2)
    return MixtureTriple(
        mixture=mixture,
        source1=s1,
        source2=s2,
        group_id=group_id if group_id is not None else f"synth{seed:04d}",
        segment_index=segment_index,
        clipped=clipped,
    )


def synth_turn_taking_pair(
    seed: int,
    duration_s: float = 30.0,
    sample_rate: int = 8000,
    turn_s: float = 2.0,
    overlap_fraction: float = 0.25,
) -> tuple[Waveform, Waveform]:
    """Two sources that mostly alternate, like conversational turns.

    Speakers swap every ``turn_s`` seconds with ``overlap_fraction`` of each
    turn overlapping the other speaker's tail. The opening second is given
    to each speaker in turn (speaker 1 then speaker 2 solo) so the first
    two 1-second windows are clean per-speaker reference material.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    spec1 = VoiceSpec.draw(rng, "low")
    spec2 = VoiceSpec.draw(rng, "high")

    edges1: list[tuple[float, float]] = [(0.0, 1.0)]
    edges2: list[tuple[float, float]] = [(1.0, 2.0)]
    t = 2.0
    speaker_one_turn = True
    while t < duration_s:
        stop = min(t + turn_s, duration_s)
        lead = overlap_fraction * turn_s
        if speaker_one_turn:
            edges1.append((max(0.0, t - lead), stop))
        else:
            edges2.append((max(0.0, t - lead), stop))
        speaker_one_turn = not speaker_one_turn
        t = stop
    gate1 = _smooth_gate(edges1, n, sample_rate)
    gate2 = _smooth_gate(edges2, n, sample_rate)
    s1 = render_voice(spec1, duration_s, sample_rate, rng, gate=gate1)
    s2 = render_voice(spec2, duration_s, sample_rate, rng, gate=gate2)
    return s1, s2


def synth_stereo_call(
    seed: int,
    duration_s: float = 60.0,
    sample_rate: int = 8000,
) -> np.ndarray:
    """A fake stereo call recording: one speaker per channel, [T, 2]."""
    rng = np.random.default_rng(seed)
    left = render_voice(VoiceSpec.draw(rng, "low"), duration_s, sample_rate, rng)
    right = render_voice(VoiceSpec.draw(rng, "high"), duration_s, sample_rate, rng)
    return np.stack([left.samples, right.samples], axis=1)


def synth_corpus(
    out_dir,
    n_calls: int = 6,
    duration_s: float = 60.0,
    sample_rate: int = 8000,
    seed: int = 0,
):
    """Write ``n_calls`` synthetic stereo WAV files into ``out_dir``."""
    from .audio import write_wav_array

    paths = []
    for i in range(n_calls):
        stereo = synth_stereo_call(seed + i, duration_s, sample_rate)
        paths.append(write_wav_array(f"{out_dir}/call{i:03d}.wav", stereo, sample_rate))
    return paths
