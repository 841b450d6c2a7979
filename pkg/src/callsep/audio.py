"""Waveform container and audio file I/O.

All toolkit signals are mono float32 buffers in [-1, 1] with an explicit
sample rate (8 kHz by default, telephone-band material). WAV files are read
and written natively; MP3 requires an optional decoder (``soundfile`` with
an MP3-capable libsndfile, or an ``ffmpeg`` binary) and raises
:class:`~callsep.errors.AudioFormatError` when none is installed.
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioFormatError

DEFAULT_SAMPLE_RATE = 8000

_PCM_SCALE = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


@dataclass
class Waveform:
    """Mono audio buffer.

    Attributes:
        samples: 1-D float32 array, amplitude nominally in [-1, 1]
        sample_rate: sampling frequency in Hz, > 0
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"Waveform samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate

    def slice(self, start: int, stop: int) -> "Waveform":
        return Waveform(self.samples[start:stop].copy(), self.sample_rate)

    def resample(self, target_rate: int) -> "Waveform":
        if target_rate == self.sample_rate:
            return self
        from math import gcd

        g = gcd(target_rate, self.sample_rate)
        out = resample_poly(self.samples.astype(np.float64), target_rate // g, self.sample_rate // g)
        return Waveform(out.astype(np.float32), target_rate)


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float32) - 128.0) / 128.0
    scale = _PCM_SCALE.get(data.dtype)
    if scale is not None:
        return data.astype(np.float32) / scale
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float32)
    raise AudioFormatError(f"unsupported WAV sample format: {data.dtype}")


def read_audio(path) -> tuple[np.ndarray, int]:
    """Read an audio file into a float32 array of shape [samples, channels].

    Mono files come back with a single column. Raises AudioFormatError for
    unreadable files or formats without an available decoder.
    """
    path = Path(path)
    if not path.exists():
        raise AudioFormatError(f"no such audio file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".wav":
        return _read_wav(path)
    if suffix == ".mp3":
        return _read_mp3(path)
    raise AudioFormatError(f"unsupported audio format '{suffix}' (expected .wav or .mp3): {path}")


def _read_wav(path: Path) -> tuple[np.ndarray, int]:
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise AudioFormatError(f"failed to read WAV file {path}: {exc}") from exc
    data = _pcm_to_float(np.atleast_1d(data))
    if data.ndim == 1:
        data = data[:, None]
    return data, int(rate)


def _read_mp3(path: Path) -> tuple[np.ndarray, int]:
    # Preferred: soundfile (libsndfile >= 1.1 decodes MP3). Fallback: ffmpeg.
    try:
        import soundfile  # type: ignore

        data, rate = soundfile.read(str(path), dtype="float32", always_2d=True)
        return data, int(rate)
    except ImportError:
        pass
    except Exception as exc:
        raise AudioFormatError(f"failed to decode MP3 {path}: {exc}") from exc
    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg is not None:
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "decoded.wav"
            proc = subprocess.run(
                [ffmpeg, "-v", "error", "-i", str(path), "-f", "wav", str(out)],
                capture_output=True,
            )
            if proc.returncode != 0:
                raise AudioFormatError(
                    f"ffmpeg failed to decode {path}: {proc.stderr.decode(errors='replace')}"
                )
            return _read_wav(out)
    raise AudioFormatError(
        f"cannot decode MP3 {path}: no decoder available "
        "(install the 'soundfile' package or an ffmpeg binary)"
    )


def write_wav(path, wave: Waveform) -> None:
    """Write a waveform as a 32-bit float WAV file (lossless for our buffers)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), wave.sample_rate, wave.samples.astype(np.float32))


def write_wav_array(path, samples: np.ndarray, sample_rate: int) -> Path:
    """Write a [samples] or [samples, channels] float array as 32-bit float WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), sample_rate, np.asarray(samples, dtype=np.float32))
    return path


def read_wav_mono(path, expect_rate: int | None = None) -> Waveform:
    data, rate = read_audio(path)
    if data.shape[1] != 1:
        raise AudioFormatError(f"expected mono file, got {data.shape[1]} channels: {path}")
    if expect_rate is not None and rate != expect_rate:
        raise AudioFormatError(f"expected {expect_rate} Hz, file is {rate} Hz: {path}")
    return Waveform(data[:, 0], rate)
