"""Waveform containers and 16-bit PCM WAV I/O.

All audio in this project is 16 kHz. Samples are stored as float64 in
[-1, 1]; integer PCM is normalized by 1/32768 on read and saturating-
quantized on write, so a write/read round trip is exact to within one
quantization step (2**-15).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import ArgumentError, FormatError, UnsupportedFormatError

SAMPLE_RATE = 16000

_PCM_SCALE = 32768.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio. Immutable: ``samples`` is a read-only float64 array."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ArgumentError("waveform must be a nonempty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ArgumentError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class MultiChannelRecording:
    """One or more equal-length, equal-rate channels."""

    channels: tuple[Waveform, ...]
    channel_roles: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise ArgumentError("recording needs at least one channel")
        n = len(channels[0])
        rate = channels[0].sample_rate
        for ch in channels[1:]:
            if len(ch) != n or ch.sample_rate != rate:
                raise ArgumentError("all channels must share length and sample rate")
        if self.channel_roles is not None and len(self.channel_roles) != len(channels):
            raise ArgumentError("channel_roles length must match channel count")
        object.__setattr__(self, "channels", channels)

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def sample_rate(self) -> int:
        return self.channels[0].sample_rate

    def __len__(self) -> int:
        return len(self.channels[0])


def read_wav(path) -> MultiChannelRecording:
    """Read a RIFF WAV file (16-bit PCM or float32) at the project rate.

    Integer PCM is normalized by 1/32768. Channel order is preserved.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        raise FormatError(f"cannot parse WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported sample encoding {data.dtype}; "
            "only 16-bit PCM and float32 are handled"
        )
    if rate != SAMPLE_RATE:
        raise UnsupportedFormatError(
            f"{path}: sample rate {rate} != {SAMPLE_RATE}; resampling is out of scope"
        )
    if data.ndim == 1:
        data2d = samples[:, None]
    else:
        data2d = samples
    channels = tuple(Waveform(data2d[:, c], rate) for c in range(data2d.shape[1]))
    return MultiChannelRecording(channels)


def write_wav(rec: MultiChannelRecording | Waveform, path) -> None:
    """Write 16-bit PCM. Samples outside [-1, 1] are clipped with a warning."""
    if isinstance(rec, Waveform):
        rec = MultiChannelRecording((rec,))
    data = np.stack([ch.samples for ch in rec.channels], axis=1)
    if np.abs(data).max() > 1.0:
        warnings.warn("samples outside [-1, 1] clipped on write", stacklevel=2)
        data = np.clip(data, -1.0, 1.0)
    pcm = np.clip(np.round(data * _PCM_SCALE), -32768, 32767).astype(np.int16)
    if pcm.shape[1] == 1:
        pcm = pcm[:, 0]
    wavfile.write(path, rec.sample_rate, pcm)


def rms_power(w: Waveform) -> float:
    """Mean of squared samples (linear power)."""
    return float(np.mean(np.square(w.samples)))
