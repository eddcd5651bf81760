"""Synthetic labeled corpora: formant-like token waveforms with known
transcripts, and a noisy multichannel condition with known RIRs, delays,
and SNRs, so every DSP and training operation can be verified without
real recordings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, MultiChannelRecording, Waveform, write_wav
from .errors import ArgumentError, DataError
from .objectives import Vocabulary
from .variants import convolve_rir, mix_noise

TOKEN_SAMPLES = 1280  # 80 ms per token
GAP_SAMPLES = 320  # 20 ms silence between tokens
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class NoisyMultichannel:
    num_channels: int = 4
    delay_range: tuple[int, int] = (0, 8)
    snr_range_db: tuple[float, float] | None = (5.0, 20.0)  # None: no noise
    num_rirs: int = 8
    rir_taps: int = 160

    def to_json(self) -> dict:
        return {
            "kind": "noisy_multichannel",
            "num_channels": self.num_channels,
            "delay_range": list(self.delay_range),
            "snr_range_db": None if self.snr_range_db is None else list(self.snr_range_db),
            "num_rirs": self.num_rirs,
            "rir_taps": self.rir_taps,
        }


@dataclass(frozen=True)
class CorpusSpec:
    num_utterances: int = 200
    tokens_per_utt: tuple[int, int] = (8, 16)
    condition: NoisyMultichannel | None = None  # None means clean
    seed: int = 0
    vocab: Vocabulary = field(default_factory=Vocabulary)


@dataclass
class Manifest:
    """JSON-lines corpus index; one record per utterance."""

    records: list[dict]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "Manifest":
        records = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        for rec in records:
            if not Path(rec["audio_path"]).exists():
                raise DataError(f"manifest references missing file {rec['audio_path']}")
        return Manifest(records)

    def __len__(self) -> int:
        return len(self.records)


def token_frequencies(token_id: int) -> tuple[float, float, float]:
    """Three fixed sinusoid frequencies for a vocabulary token, snapped to
    the FFT grid of one token segment."""
    bin_hz = SAMPLE_RATE / TOKEN_SAMPLES
    raw = (300.0 + 37.0 * token_id, 900.0 + 53.0 * token_id, 1800.0 + 71.0 * token_id)
    return tuple(bin_hz * round(f / bin_hz) for f in raw)


def token_waveform(token_id: int) -> np.ndarray:
    t = np.arange(TOKEN_SAMPLES) / SAMPLE_RATE
    f1, f2, f3 = token_frequencies(token_id)
    seg = 0.5 * np.sin(2 * np.pi * f1 * t) + 0.3 * np.sin(2 * np.pi * f2 * t) + 0.2 * np.sin(
        2 * np.pi * f3 * t
    )
    envelope = np.hanning(TOKEN_SAMPLES)
    return 0.6 * seg * envelope


def render_transcript(transcript: str, vocab: Vocabulary) -> Waveform:
    """Deterministic transcript-to-audio mapping: one segment per token,
    separated by short silences, leading/trailing silence included."""
    ids = vocab.encode(transcript)
    if not ids:
        raise ArgumentError("empty transcript")
    gap = np.zeros(GAP_SAMPLES)
    parts = [gap]
    for tok in ids:
        parts.append(token_waveform(tok))
        parts.append(gap)
    return Waveform(np.concatenate(parts))


def _draw_transcript(rng: np.random.Generator, vocab: Vocabulary, n_tokens: int) -> str:
    # interior word boundaries only, never doubled
    chars = []
    for i in range(n_tokens):
        if 0 < i < n_tokens - 1 and chars[-1] != " " and rng.random() < 0.15:
            chars.append(" ")
        else:
            chars.append(vocab.tokens[1 + int(rng.integers(29))])
    return "".join(chars)


def make_rir_pool(rng: np.random.Generator, num_rirs: int, taps: int) -> list[Waveform]:
    """Synthetic impulse responses: unit direct path plus a decaying tail."""
    pool = []
    for _ in range(num_rirs):
        tail = rng.standard_normal(taps) * np.exp(-np.arange(taps) / (taps / 4.0))
        h = np.zeros(taps)
        h[0] = 1.0
        h[1:] = 0.25 * tail[1:]
        pool.append(Waveform(h))
    return pool


def render_multichannel(
    clean: Waveform,
    rir: Waveform,
    delays: list[int],
    snr_db: float | None,
    noise_rng: np.random.Generator,
) -> tuple[list[Waveform], list[Waveform], list[Waveform]]:
    """Reverberate, delay, and add per-channel noise at the target SNR.

    ``snr_db=None`` skips the noise entirely. Returns (mixed,
    signal_parts, noise_parts) so tests can re-measure the realized SNR
    from the exact components.
    """
    reverbed = convolve_rir(clean, rir)
    mixed, signals, noises = [], [], []
    for d in delays:
        x = np.zeros(len(clean))
        if d > 0:
            x[d:] = reverbed.samples[:-d]
        else:
            x[:] = reverbed.samples
        sig = Waveform(x, clean.sample_rate)
        if snr_db is None:
            out = sig
        else:
            noise = Waveform(noise_rng.standard_normal(len(clean)) * 0.1, clean.sample_rate)
            out = mix_noise(sig, noise, snr_db)
        mixed.append(out)
        signals.append(sig)
        noises.append(Waveform(out.samples - sig.samples, clean.sample_rate))
    return mixed, signals, noises


def generate_clean_corpus(spec: CorpusSpec, out_dir) -> Manifest:
    """Single-channel clean corpus; pure function of the spec (seed included)."""
    if spec.condition is not None:
        raise ArgumentError("generate_clean_corpus requires a clean condition")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    records = []
    for u in range(spec.num_utterances):
        n_tokens = int(rng.integers(spec.tokens_per_utt[0], spec.tokens_per_utt[1] + 1))
        transcript = _draw_transcript(rng, spec.vocab, n_tokens)
        wav = render_transcript(transcript, spec.vocab)
        uid = f"clean_{u:05d}"
        path = out_dir / f"{uid}.wav"
        write_wav(wav, path)
        records.append(
            {
                "version": MANIFEST_VERSION,
                "utterance_id": uid,
                "audio_path": str(path),
                "channels": 1,
                "transcript": transcript,
                "condition": "clean",
                "ground_truth": {},
            }
        )
    return Manifest(records)


def generate_multichannel_corpus(spec: CorpusSpec, out_dir) -> Manifest:
    """Noisy multichannel corpus with ground-truth RIR ids, integer channel
    delays, and SNRs recorded in the manifest."""
    cond = spec.condition
    if cond is None:
        raise ArgumentError("generate_multichannel_corpus requires a noisy condition")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    rir_pool = make_rir_pool(rng, cond.num_rirs, cond.rir_taps)
    records = []
    for u in range(spec.num_utterances):
        n_tokens = int(rng.integers(spec.tokens_per_utt[0], spec.tokens_per_utt[1] + 1))
        transcript = _draw_transcript(rng, spec.vocab, n_tokens)
        clean = render_transcript(transcript, spec.vocab)
        rir_id = int(rng.integers(cond.num_rirs))
        delays = [0] + [
            int(rng.integers(cond.delay_range[0], cond.delay_range[1] + 1))
            for _ in range(cond.num_channels - 1)
        ]
        snr = None if cond.snr_range_db is None else float(rng.uniform(*cond.snr_range_db))
        noise_seed = int(rng.integers(2**31))
        mixed, _, _ = render_multichannel(
            clean, rir_pool[rir_id], delays, snr, np.random.default_rng(noise_seed)
        )
        uid = f"noisy_{u:05d}"
        path = out_dir / f"{uid}.wav"
        write_wav(MultiChannelRecording(tuple(mixed)), path)
        records.append(
            {
                "version": MANIFEST_VERSION,
                "utterance_id": uid,
                "audio_path": str(path),
                "channels": cond.num_channels,
                "transcript": transcript,
                "condition": cond.to_json(),
                "ground_truth": {
                    "delays": delays,
                    "snr_db": snr,
                    "rir_id": rir_id,
                    "noise_seed": noise_seed,
                    "corpus_seed": spec.seed,
                },
            }
        )
    return Manifest(records)
