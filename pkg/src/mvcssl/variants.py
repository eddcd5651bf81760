"""Variant-set construction: augmentation, channel pairing, and beamforming.

Every operation preserves the sample count of its input so that frame t
of one variant lines up with frame t of every other variant of the same
utterance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sps
from scipy.fft import irfft, next_fast_len, rfft

from .audio import MultiChannelRecording, Waveform, rms_power
from .errors import ArgumentError, DegenerateInputError

DA, MC, EH = "da", "mc", "eh"
_MODES = (DA, MC, EH)

# Channel offsets are bounded well below one 20 ms frame (320 samples),
# so a 10 ms search window is generous.
DEFAULT_MAX_LAG = 160


def parse_mvc_mode(text: str) -> tuple[str, ...]:
    """Parse e.g. "da+mc" into ("da", "mc"); "none" means no variants."""
    if text == "none":
        return ()
    modes = tuple(part.strip().lower() for part in text.split("+"))
    for m in modes:
        if m not in _MODES:
            raise ArgumentError(f"unknown variant mode {m!r}; expected da/mc/eh/none")
    return modes


@dataclass(frozen=True)
class Provenance:
    """How one variant member was produced."""

    kind: str  # original | augmented | channel | beamformed
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.detail}


@dataclass(frozen=True)
class AugmentPolicy:
    pitch_prob: float = 0.5
    pitch_semitone_range: tuple[int, int] = (-3, 3)
    rir_prob: float = 0.15
    noise_prob: float = 0.15
    snr_range_db: tuple[float, float] = (10.0, 30.0)
    rir_pool: tuple[Waveform, ...] = ()
    noise_pool: tuple[Waveform, ...] = ()

    def __post_init__(self):
        for name in ("pitch_prob", "rir_prob", "noise_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ArgumentError(f"{name}={p} outside [0, 1]")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ArgumentError("snr_range_db low > high")
        if self.rir_prob > 0 and not self.rir_pool:
            raise ArgumentError("rir_prob > 0 requires a nonempty rir_pool")
        if self.noise_prob > 0 and not self.noise_pool:
            raise ArgumentError("noise_prob > 0 requires a nonempty noise_pool")
        object.__setattr__(self, "rir_pool", tuple(self.rir_pool))
        object.__setattr__(self, "noise_pool", tuple(self.noise_pool))


@dataclass(frozen=True)
class VariantSet:
    """K same-origin, same-length waveforms with construction provenance."""

    origin_id: str
    members: tuple[Waveform, ...]
    provenance: tuple[Provenance, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ArgumentError("variant set needs at least one member")
        if len({len(m) for m in members}) != 1:
            raise ArgumentError("variant members must have equal lengths")
        if len(self.provenance) != len(members):
            raise ArgumentError("one provenance entry per member required")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def size(self) -> int:
        return len(self.members)


# ---------------------------------------------------------------------------
# phase-vocoder pitch shifting


def _stft(x: np.ndarray, n_fft: int, hop: int, window: np.ndarray) -> np.ndarray:
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(xp) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    return rfft(frames * window, axis=1).T  # (bins, frames)


def _istft(spec: np.ndarray, n_fft: int, hop: int, window: np.ndarray, length: int) -> np.ndarray:
    frames = irfft(spec.T, n=n_fft, axis=1) * window
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * hop + n_fft)
    norm = np.zeros_like(out)
    wsq = window**2
    for i in range(n_frames):
        out[i * hop : i * hop + n_fft] += frames[i]
        norm[i * hop : i * hop + n_fft] += wsq
    out = out / np.maximum(norm, 1e-12)
    pad = n_fft // 2
    out = out[pad : pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


def _phase_vocoder(spec: np.ndarray, rate: float, hop: int, n_fft: int) -> np.ndarray:
    """Time-stretch an STFT by ``rate`` (rate < 1 lengthens) with phase accumulation."""
    n_bins, n_frames = spec.shape
    time_steps = np.arange(0, n_frames, rate)
    phi_advance = hop * 2.0 * np.pi * np.arange(n_bins) / n_fft
    out = np.empty((n_bins, len(time_steps)), dtype=complex)
    phase_acc = np.angle(spec[:, 0])
    spec_pad = np.concatenate([spec, np.zeros((n_bins, 2), dtype=complex)], axis=1)
    for k, step in enumerate(time_steps):
        i = int(step)
        frac = step - i
        mag = (1.0 - frac) * np.abs(spec_pad[:, i]) + frac * np.abs(spec_pad[:, i + 1])
        out[:, k] = mag * np.exp(1j * phase_acc)
        dphase = np.angle(spec_pad[:, i + 1]) - np.angle(spec_pad[:, i]) - phi_advance
        dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
        phase_acc = phase_acc + phi_advance + dphase
    return out


def pitch_shift(w: Waveform, semitones: float, n_fft: int = 1024) -> Waveform:
    """Shift pitch by ``semitones`` while keeping length and tempo unchanged.

    Phase-vocoder time stretch by 2**(-semitones/12) followed by an
    FFT resample back to the original length.
    """
    if abs(semitones) > 12:
        raise ArgumentError(f"|semitones| must be <= 12, got {semitones}")
    x = w.samples
    rate = 2.0 ** (-semitones / 12.0)
    hop = n_fft // 4
    window = sps.get_window("hann", n_fft, fftbins=True)
    spec = _stft(x, n_fft, hop, window)
    stretched_spec = _phase_vocoder(spec, rate, hop, n_fft)
    stretched_len = int(round(len(x) / rate))
    y = _istft(stretched_spec, n_fft, hop, window, stretched_len)
    out = sps.resample(y, len(x))
    return Waveform(out, w.sample_rate)


# ---------------------------------------------------------------------------
# reverberation and noise


def convolve_rir(w: Waveform, rir: Waveform) -> Waveform:
    """Linear convolution truncated to the input length.

    Rescaled down to the input's peak amplitude when the reverberant sum
    would exceed it, so variants never clip relative to their origin.
    """
    if w.sample_rate != rir.sample_rate:
        raise ArgumentError("waveform and RIR sample rates differ")
    out = sps.fftconvolve(w.samples, rir.samples)[: len(w)]
    peak_in = np.abs(w.samples).max()
    peak_out = np.abs(out).max()
    if peak_out > peak_in and peak_out > 0:
        out = out * (peak_in / peak_out)
    return Waveform(out, w.sample_rate)


def mix_noise(
    w: Waveform,
    noise: Waveform,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> Waveform:
    """Add noise scaled so the signal-to-noise ratio equals ``snr_db``.

    Short noise is tiled; long noise is random-cropped (offset 0 without
    an rng).
    """
    p_sig = rms_power(w)
    n = noise.samples
    if len(n) < len(w):
        n = np.tile(n, -(-len(w) // len(n)))
    if len(n) > len(w):
        offset = int(rng.integers(0, len(n) - len(w) + 1)) if rng is not None else 0
        n = n[offset : offset + len(w)]
    p_noise = float(np.mean(np.square(n)))
    if p_sig == 0.0 or p_noise == 0.0:
        raise DegenerateInputError("mix_noise needs nonzero signal and noise power")
    alpha = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(w.samples + alpha * n, w.sample_rate)


def augment(
    w: Waveform, policy: AugmentPolicy, rng: np.random.Generator
) -> tuple[Waveform, Provenance]:
    """Apply pitch shift, reverberation, and noise, each with its own
    probability, in that fixed order. If nothing fires the audio is
    returned unchanged with provenance "original".
    """
    out = w
    applied: dict = {}
    if rng.random() < policy.pitch_prob:
        lo, hi = policy.pitch_semitone_range
        semitones = int(rng.integers(lo, hi + 1))
        out = pitch_shift(out, semitones)
        applied["pitch_semitones"] = semitones
    if rng.random() < policy.rir_prob:
        idx = int(rng.integers(len(policy.rir_pool)))
        out = convolve_rir(out, policy.rir_pool[idx])
        applied["rir_index"] = idx
    if rng.random() < policy.noise_prob:
        idx = int(rng.integers(len(policy.noise_pool)))
        snr = float(rng.uniform(*policy.snr_range_db))
        out = mix_noise(out, policy.noise_pool[idx], snr, rng)
        applied["noise_index"] = idx
        applied["snr_db"] = snr
    if not applied:
        return out, Provenance("original")
    return out, Provenance("augmented", applied)


# ---------------------------------------------------------------------------
# delay estimation and beamforming


def estimate_delay(ref: Waveform, ch: Waveform, max_lag: int) -> int:
    """Integer lag of ``ch`` relative to ``ref`` by GCC-PHAT, within ±max_lag."""
    if len(ref) != len(ch):
        raise ArgumentError("estimate_delay requires equal-length inputs")
    if max_lag >= len(ref) // 2:
        raise ArgumentError("max_lag must be below half the signal length")
    a, b = ref.samples, ch.samples
    if not a.any() or not b.any():
        raise DegenerateInputError("zero-energy input to estimate_delay")
    n = next_fast_len(len(a) + len(b))
    cross = rfft(b, n) * np.conj(rfft(a, n))
    mag = np.abs(cross)
    cross = cross / np.maximum(mag, 1e-15 * max(mag.max(), 1e-300))
    cc = irfft(cross, n)
    window = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]])
    return int(np.argmax(np.abs(window))) - max_lag


def _shift(x: np.ndarray, lag: int) -> np.ndarray:
    """Advance x by ``lag`` samples (undo a delay of lag), zero-padding edges."""
    out = np.zeros_like(x)
    if lag > 0:
        out[:-lag] = x[lag:]
    elif lag < 0:
        out[-lag:] = x[:lag]
    else:
        out[:] = x
    return out


def delay_and_sum(
    rec: MultiChannelRecording,
    ref_channel: int = 0,
    max_lag: int = DEFAULT_MAX_LAG,
) -> Waveform:
    """Align each channel to the reference by its GCC-PHAT delay and average."""
    if rec.num_channels < 2:
        raise ArgumentError("delay_and_sum needs at least 2 channels")
    ref = rec.channels[ref_channel]
    acc = np.zeros(len(rec))
    for i, ch in enumerate(rec.channels):
        lag = 0 if i == ref_channel else estimate_delay(ref, ch, max_lag)
        acc += _shift(ch.samples, lag)
    return Waveform(acc / rec.num_channels, rec.sample_rate)


# ---------------------------------------------------------------------------
# variant set construction


def _build_one_mode(
    source: MultiChannelRecording,
    mode: str,
    K: int,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    max_lag: int,
) -> tuple[list[Waveform], list[Provenance]]:
    nch = source.num_channels
    if mode == DA:
        c = int(rng.integers(nch))
        members, prov = [], []
        for _ in range(K):
            m, p = augment(source.channels[c], policy, rng)
            if p.kind == "original":
                p = Provenance("original", {"channel": c})
            else:
                p = Provenance("augmented", {"channel": c, **p.detail})
            members.append(m)
            prov.append(p)
        return members, prov
    if mode == MC:
        if nch < K:
            raise ArgumentError(f"MC mode needs >= {K} channels, got {nch}")
        picks = rng.choice(nch, size=K, replace=False)
        return (
            [source.channels[int(c)] for c in picks],
            [Provenance("channel", {"channel": int(c)}) for c in picks],
        )
    if mode == EH:
        if nch < 2:
            raise ArgumentError("EH mode needs >= 2 channels")
        if K != 2:
            raise ArgumentError("EH mode builds exactly 2 variants")
        sizes = [s for s in (2, 5) if s <= nch]
        subset_size = int(rng.choice(sizes))
        subset = sorted(int(c) for c in rng.choice(nch, size=subset_size, replace=False))
        iso = int(rng.integers(nch))
        sub_rec = MultiChannelRecording(tuple(source.channels[c] for c in subset))
        beam = delay_and_sum(sub_rec, 0, min(max_lag, len(source) // 2 - 1))
        return (
            [source.channels[iso], beam],
            [Provenance("channel", {"channel": iso}), Provenance("beamformed", {"channels": subset})],
        )
    raise ArgumentError(f"unknown mode {mode!r}")


def build_variant_set(
    source: MultiChannelRecording,
    mode: str | Sequence[str],
    K: int,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    origin_id: str = "",
    max_lag: int = DEFAULT_MAX_LAG,
) -> VariantSet:
    """Build K same-origin variants. Composite modes pick one mode per
    utterance uniformly at random."""
    if K < 1:
        raise ArgumentError("K must be >= 1")
    modes = parse_mvc_mode(mode) if isinstance(mode, str) else tuple(mode)
    if not modes:
        # no-variant baseline: a single untouched channel
        c = int(rng.integers(source.num_channels))
        return VariantSet(
            origin_id,
            (source.channels[c],),
            (Provenance("original", {"channel": c}),),
        )
    chosen = modes[int(rng.integers(len(modes)))]
    members, prov = _build_one_mode(source, chosen, K, policy, rng, max_lag)
    n = min(len(m) for m in members)
    members = [Waveform(m.samples[:n], m.sample_rate) if len(m) != n else m for m in members]
    return VariantSet(origin_id, tuple(members), tuple(prov))
