"""Corpus preparation: stereo call ingestion, mixture triples, and splits.

A stereo call recording carries one speaker per channel, so the two clean
sources come for free; the training mixture is realized as their sample-wise
sum. Long calls are cut into fixed-length segments and partitioned into
train/validation/test by speaker group so no speaker leaks across splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, read_audio, read_wav_mono, write_wav
from .errors import AlignmentError, ChannelCountError, InsufficientGroupsError

SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class MixtureTriple:
    """Aligned (mixture, source1, source2) sample plus speaker-group metadata."""

    mixture: Waveform
    source1: Waveform
    source2: Waveform
    group_id: str
    segment_index: int = 0
    clipped: bool = False

    def __post_init__(self):
        rates = {self.mixture.sample_rate, self.source1.sample_rate, self.source2.sample_rate}
        lengths = {len(self.mixture), len(self.source1), len(self.source2)}
        if len(rates) != 1 or len(lengths) != 1:
            raise AlignmentError(
                f"triple waveforms must share length and rate, got lengths={sorted(lengths)} "
                f"rates={sorted(rates)}"
            )
        if self.segment_index < 0:
            raise ValueError("segment_index must be >= 0")

    @property
    def sample_id(self) -> str:
        return f"{self.group_id}_seg{self.segment_index:04d}"

    @property
    def duration_s(self) -> float:
        return self.mixture.duration_s

    def load(self) -> "MixtureTriple":
        return self


@dataclass
class TripleRef:
    """File-backed reference to a triple inside a prepared corpus directory."""

    sample_id: str
    group_id: str
    segment_index: int
    mixture_path: Path
    source1_path: Path
    source2_path: Path
    duration_s: float
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def load(self) -> MixtureTriple:
        return MixtureTriple(
            mixture=read_wav_mono(self.mixture_path, self.sample_rate),
            source1=read_wav_mono(self.source1_path, self.sample_rate),
            source2=read_wav_mono(self.source2_path, self.sample_rate),
            group_id=self.group_id,
            segment_index=self.segment_index,
        )


@dataclass
class SplitManifest:
    """Partition of triples into train/validation/test by speaker group."""

    train: list
    validation: list
    test: list
    fractions: tuple[float, float, float]
    seed: int

    def split(self, name: str) -> list:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        return getattr(self, "validation" if name == "validation" else name)

    def groups(self, name: str) -> set:
        return {t.group_id for t in self.split(name)}


def load_stereo_call(path, target_rate: int = DEFAULT_SAMPLE_RATE) -> tuple[Waveform, Waveform]:
    """Split a 2-channel recording into its per-speaker sources.

    Channel 0 becomes source1, channel 1 source2; both are resampled to
    ``target_rate`` when the file rate differs.
    """
    data, rate = read_audio(path)
    if data.shape[1] != 2:
        raise ChannelCountError(
            f"stereo call must have exactly 2 channels, got {data.shape[1]}: {path}"
        )
    s1 = Waveform(data[:, 0], rate).resample(target_rate)
    s2 = Waveform(data[:, 1], rate).resample(target_rate)
    return s1, s2


def make_mixture(source1: Waveform, source2: Waveform) -> tuple[Waveform, bool]:
    """Sum two aligned sources into a mixture, clipping to [-1, 1].

    Returns (mixture, clipped). Telephone speech rarely sums past full
    scale, so clipping is flagged rather than rejected.
    """
    if len(source1) != len(source2) or source1.sample_rate != source2.sample_rate:
        raise AlignmentError(
            f"sources must be aligned: lengths {len(source1)}/{len(source2)}, "
            f"rates {source1.sample_rate}/{source2.sample_rate}"
        )
    total = source1.samples.astype(np.float32) + source2.samples.astype(np.float32)
    clipped = bool(np.any(total > 1.0) or np.any(total < -1.0))
    if clipped:
        total = np.clip(total, -1.0, 1.0)
    return Waveform(total, source1.sample_rate), clipped


def segment_triples(
    call: tuple[Waveform, Waveform],
    segment_seconds: float = 30.0,
    group_id: str = "call",
) -> list[MixtureTriple]:
    """Cut a call into consecutive fixed-length mixture triples.

    Windows do not overlap; a trailing window shorter than
    ``segment_seconds`` is dropped so every triple has identical duration.
    A call shorter than one segment yields an empty list.
    """
    if segment_seconds <= 0:
        raise ValueError("segment_seconds must be positive")
    s1, s2 = call
    if len(s1) != len(s2) or s1.sample_rate != s2.sample_rate:
        raise AlignmentError("call channels must share length and sample rate")
    seg_len = int(round(segment_seconds * s1.sample_rate))
    n_segments = len(s1) // seg_len
    triples = []
    for i in range(n_segments):
        a = s1.slice(i * seg_len, (i + 1) * seg_len)
        b = s2.slice(i * seg_len, (i + 1) * seg_len)
        mixture, clipped = make_mixture(a, b)
        triples.append(
            MixtureTriple(
                mixture=mixture,
                source1=a,
                source2=b,
                group_id=group_id,
                segment_index=i,
                clipped=clipped,
            )
        )
    return triples


def group_shuffle_split(
    triples: list,
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitManifest:
    """Partition triples into train/validation/test keeping groups intact.

    Groups (speaker/call identifiers) are shuffled deterministically from the
    seed and assigned greedily so each split's total audio duration tracks
    its target fraction: at every step the next group goes to the split with
    the largest remaining duration deficit. Calls vary in length, so the
    splitting unit is duration, not triple count.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must have exactly three entries")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got sum={sum(fractions)!r}")

    group_duration: dict = {}
    for t in triples:
        group_duration[t.group_id] = group_duration.get(t.group_id, 0.0) + t.duration_s
    if len(group_duration) < 3:
        raise InsufficientGroupsError(
            f"need at least 3 distinct groups, got {len(group_duration)}"
        )

    rng = np.random.default_rng(seed)
    group_ids = sorted(group_duration)
    order = [group_ids[i] for i in rng.permutation(len(group_ids))]
    total = sum(group_duration.values())
    assigned = [0.0, 0.0, 0.0]
    membership: dict = {}
    for gid in order:
        deficits = [fractions[i] * total - assigned[i] for i in range(3)]
        best = max(range(3), key=lambda i: (deficits[i], -i))
        membership[gid] = best
        assigned[best] += group_duration[gid]

    buckets: list[list] = [[], [], []]
    for t in triples:
        buckets[membership[t.group_id]].append(t)
    return SplitManifest(
        train=buckets[0],
        validation=buckets[1],
        test=buckets[2],
        fractions=tuple(fractions),
        seed=seed,
    )


def save_corpus(manifest: SplitManifest, out_dir, segment_seconds: float | None = None) -> Path:
    """Write triples as WAV files plus a JSON manifest.

    Layout: ``<out_dir>/<split>/<sample_id>/{mixture,s1,s2}.wav`` with
    ``manifest.json`` at the top level listing relative paths, fractions and
    seed so the split is reproducible. Float32 WAVs keep the
    mixture == s1 + s2 identity exact across the round trip.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc: dict = {
        "fractions": list(manifest.fractions),
        "seed": manifest.seed,
        "sample_rate": None,
        "segment_seconds": segment_seconds,
        "splits": {},
    }
    for split in SPLIT_NAMES:
        entries = []
        for triple in manifest.split(split):
            triple = triple.load()
            sample_dir = out_dir / split / triple.sample_id
            write_wav(sample_dir / "mixture.wav", triple.mixture)
            write_wav(sample_dir / "s1.wav", triple.source1)
            write_wav(sample_dir / "s2.wav", triple.source2)
            rel = Path(split) / triple.sample_id
            entries.append(
                {
                    "sample_id": triple.sample_id,
                    "group_id": triple.group_id,
                    "segment_index": triple.segment_index,
                    "mixture": str(rel / "mixture.wav"),
                    "source1": str(rel / "s1.wav"),
                    "source2": str(rel / "s2.wav"),
                    "duration_s": triple.duration_s,
                    "clipped": triple.clipped,
                }
            )
            doc["sample_rate"] = triple.mixture.sample_rate
        doc["splits"][split] = entries
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2))
    return manifest_path


def load_manifest(path) -> SplitManifest:
    """Load a manifest written by :func:`save_corpus`; triples load lazily."""
    path = Path(path)
    doc = json.loads(path.read_text())
    root = path.parent
    rate = doc.get("sample_rate") or DEFAULT_SAMPLE_RATE
    buckets = {}
    for split in SPLIT_NAMES:
        refs = []
        for e in doc["splits"].get(split, []):
            refs.append(
                TripleRef(
                    sample_id=e["sample_id"],
                    group_id=e["group_id"],
                    segment_index=e["segment_index"],
                    mixture_path=root / e["mixture"],
                    source1_path=root / e["source1"],
                    source2_path=root / e["source2"],
                    duration_s=e["duration_s"],
                    sample_rate=rate,
                )
            )
        buckets[split] = refs
    return SplitManifest(
        train=buckets["train"],
        validation=buckets["validation"],
        test=buckets["test"],
        fractions=tuple(doc["fractions"]),
        seed=doc["seed"],
    )


def prepare_corpus_dir(
    corpus_dir,
    out_dir,
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
    segment_seconds: float = 30.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> Path:
    """End-to-end preparation: scan stereo calls, segment, split, write corpus.

    Every ``*.wav`` / ``*.mp3`` under ``corpus_dir`` is treated as one call;
    the file stem is its speaker-group id.
    """
    corpus_dir = Path(corpus_dir)
    calls = sorted(
        p for p in corpus_dir.rglob("*") if p.suffix.lower() in (".wav", ".mp3") and p.is_file()
    )
    if not calls:
        raise FileNotFoundError(f"no .wav or .mp3 call recordings under {corpus_dir}")
    triples = []
    for call_path in calls:
        pair = load_stereo_call(call_path, target_rate=sample_rate)
        triples.extend(segment_triples(pair, segment_seconds, group_id=call_path.stem))
    manifest = group_shuffle_split(triples, fractions=fractions, seed=seed)
    return save_corpus(manifest, out_dir, segment_seconds=segment_seconds)
