import numpy as np
import pytest

from mvcssl import (
    AugmentPolicy,
    MultiChannelRecording,
    Waveform,
    augment,
    build_variant_set,
    convolve_rir,
    delay_and_sum,
    estimate_delay,
    mix_noise,
    pitch_shift,
    rms_power,
)
from mvcssl.errors import ArgumentError, DegenerateInputError
from mvcssl.variants import Provenance, VariantSet, parse_mvc_mode

from conftest import peak_frequency


def _tone(freq=440.0, n=16000, amp=0.5):
    t = np.arange(n) / 16000.0
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


def _policy(rng, **kw):
    rirs = tuple(Waveform(np.r_[1.0, 0.05 * rng.standard_normal(15)]) for _ in range(3))
    noises = tuple(Waveform(0.1 * rng.standard_normal(3000)) for _ in range(2))
    defaults = dict(rir_pool=rirs, noise_pool=noises)
    defaults.update(kw)
    return AugmentPolicy(**defaults)


# -- mode parsing ------------------------------------------------------------


def test_parse_mvc_mode():
    assert parse_mvc_mode("da") == ("da",)
    assert parse_mvc_mode("da+mc+eh") == ("da", "mc", "eh")
    assert parse_mvc_mode("none") == ()
    with pytest.raises(ArgumentError):
        parse_mvc_mode("da+bogus")


def test_variant_set_enforces_equal_lengths():
    a = Waveform(np.full(100, 0.1))
    b = Waveform(np.full(90, 0.1))
    with pytest.raises(ArgumentError):
        VariantSet("x", (a, b), (Provenance("original"), Provenance("original")))


# -- pitch shifting ----------------------------------------------------------


@pytest.mark.parametrize("semitones,expected", [(12, 880.0), (-12, 220.0), (3, 523.25)])
def test_pitch_shift_moves_tone(semitones, expected):
    w = _tone(440.0)
    out = pitch_shift(w, semitones)
    assert len(out) == len(w)
    f = peak_frequency(out.samples[2000:-2000])
    assert abs(f - expected) / expected < 0.01


def test_pitch_shift_zero_is_near_identity():
    w = _tone(440.0)
    out = pitch_shift(w, 0)
    assert np.abs(out.samples - w.samples).max() < 1e-6


def test_pitch_shift_rejects_extreme():
    with pytest.raises(ArgumentError):
        pitch_shift(_tone(), 13)


# -- reverberation -----------------------------------------------------------


def test_convolve_rir_matches_naive(rng):
    x = Waveform(0.3 * rng.standard_normal(2000))
    h = Waveform(np.r_[0.5, 0.05 * rng.standard_normal(31)])
    out = convolve_rir(x, h)
    naive = np.convolve(x.samples, h.samples)[: len(x)]
    assert len(out) == len(x)
    assert np.abs(out.samples - naive).max() < 1e-10


def test_convolve_rir_identity():
    x = _tone()
    out = convolve_rir(x, Waveform(np.array([1.0])))
    assert np.abs(out.samples - x.samples).max() < 1e-12


def test_convolve_rir_never_exceeds_input_peak(rng):
    x = Waveform(0.5 * rng.standard_normal(1000))
    h = Waveform(np.ones(50))  # strongly amplifying response
    out = convolve_rir(x, h)
    assert np.abs(out.samples).max() <= np.abs(x.samples).max() + 1e-12


# -- noise mixing ------------------------------------------------------------


@pytest.mark.parametrize("snr", [0.0, 10.0, 20.0, 40.0])
def test_mix_noise_hits_target_snr(rng, snr):
    sig = _tone()
    noise = Waveform(rng.standard_normal(len(sig)))
    out = mix_noise(sig, noise, snr)
    added = Waveform(out.samples - sig.samples)
    measured = 10.0 * np.log10(rms_power(sig) / rms_power(added))
    assert abs(measured - snr) < 0.1


def test_mix_noise_tiles_short_noise(rng):
    sig = _tone(n=5000)
    noise = Waveform(rng.standard_normal(700))
    out = mix_noise(sig, noise, 15.0)
    assert len(out) == len(sig)
    added = Waveform(out.samples - sig.samples)
    measured = 10.0 * np.log10(rms_power(sig) / rms_power(added))
    assert abs(measured - 15.0) < 0.1


def test_mix_noise_rejects_silence():
    with pytest.raises(DegenerateInputError):
        mix_noise(Waveform(np.zeros(100) + 0.0001 * 0), Waveform(np.ones(100)), 10.0)
    with pytest.raises(DegenerateInputError):
        mix_noise(_tone(n=1000), Waveform(np.zeros(1000) * 1.0), 10.0)


def test_mix_noise_crop_deterministic_without_rng(rng):
    sig = _tone(n=1000)
    noise = Waveform(rng.standard_normal(5000))
    a = mix_noise(sig, noise, 12.0)
    b = mix_noise(sig, noise, 12.0)
    assert np.array_equal(a.samples, b.samples)


# -- augmentation ------------------------------------------------------------


def test_augment_probabilities_monte_carlo(rng):
    # short input keeps 10 000 draws cheap; only the draw logic is under test
    w = Waveform(0.3 * rng.standard_normal(700))
    policy = _policy(
        rng,
        rir_pool=tuple(Waveform(np.r_[1.0, 0.02 * rng.standard_normal(7)]) for _ in range(2)),
        noise_pool=(Waveform(0.1 * rng.standard_normal(700)),),
    )
    draws = np.random.default_rng(1)
    counts = {"pitch_semitones": 0, "rir_index": 0, "noise_index": 0}
    n = 10_000
    for _ in range(n):
        _, prov = augment(w, policy, draws)
        for key in counts:
            counts[key] += key in prov.detail
    assert abs(counts["pitch_semitones"] / n - 0.5) < 0.02
    assert abs(counts["rir_index"] / n - 0.15) < 0.02
    assert abs(counts["noise_index"] / n - 0.15) < 0.02


def test_augment_preserves_length_and_reports_provenance(rng):
    w = _tone(n=4000)
    policy = _policy(rng)
    draws = np.random.default_rng(3)
    for _ in range(20):
        out, prov = augment(w, policy, draws)
        assert len(out) == len(w)
        assert prov.kind in ("original", "augmented")
        if prov.kind == "original":
            assert not prov.detail


def test_augment_nothing_fires_returns_input(rng):
    w = _tone(n=2000)
    policy = AugmentPolicy(pitch_prob=0.0, rir_prob=0.0, noise_prob=0.0)
    out, prov = augment(w, policy, rng)
    assert prov.kind == "original"
    assert np.array_equal(out.samples, w.samples)


def test_policy_validation():
    with pytest.raises(ArgumentError):
        AugmentPolicy(pitch_prob=1.5)
    with pytest.raises(ArgumentError):
        AugmentPolicy(rir_prob=0.2)  # no pool
    with pytest.raises(ArgumentError):
        AugmentPolicy(noise_prob=0.2)  # no pool


# -- delay estimation and beamforming ---------------------------------------


@pytest.mark.parametrize("delay", [-8, -1, 0, 3, 8, 40])
def test_estimate_delay_exact_noiseless(rng, delay):
    base = 0.3 * rng.standard_normal(4000)
    shifted = np.zeros_like(base)
    if delay > 0:
        shifted[delay:] = base[:-delay]
    elif delay < 0:
        shifted[:delay] = base[-delay:]
    else:
        shifted[:] = base
    est = estimate_delay(Waveform(base), Waveform(shifted), max_lag=160)
    assert est == delay


def test_estimate_delay_at_20db_snr(rng):
    base = 0.3 * rng.standard_normal(4000)
    for delay in (0, 2, 7):
        shifted = np.zeros_like(base)
        shifted[delay:] = base[: len(base) - delay] if delay else base
        ref = mix_noise(Waveform(base), Waveform(rng.standard_normal(4000)), 20.0)
        ch = mix_noise(Waveform(shifted), Waveform(rng.standard_normal(4000)), 20.0)
        assert estimate_delay(ref, ch, max_lag=160) == delay


def test_estimate_delay_argument_checks(rng):
    a = Waveform(rng.standard_normal(100))
    with pytest.raises(ArgumentError):
        estimate_delay(a, Waveform(rng.standard_normal(99)), 10)
    with pytest.raises(ArgumentError):
        estimate_delay(a, a, 50)
    with pytest.raises(DegenerateInputError):
        estimate_delay(Waveform(np.zeros(100) + 0.0), a, 10)


def test_delay_and_sum_identical_channels_is_identity(rng):
    base = Waveform(0.3 * rng.standard_normal(3000))
    rec = MultiChannelRecording((base, base, base))
    out = delay_and_sum(rec)
    assert np.abs(out.samples - base.samples).max() < 1e-12


def test_delay_and_sum_realigns_integer_delays(rng):
    base = 0.3 * rng.standard_normal(5000)
    chans = []
    for d in (0, 4, 9):
        x = np.zeros_like(base)
        x[d:] = base[: len(base) - d] if d else base
        chans.append(Waveform(x))
    out = delay_and_sum(MultiChannelRecording(tuple(chans)))
    # interior matches; edges differ by the zero padding of shifted channels
    mid = slice(20, -20)
    assert np.abs(out.samples[mid] - base[mid]).max() < 1e-10


def test_delay_and_sum_needs_two_channels(rng):
    rec = MultiChannelRecording((Waveform(rng.standard_normal(500)),))
    with pytest.raises(ArgumentError):
        delay_and_sum(rec)


def test_delay_and_sum_array_gain(rng):
    # mean SNR improvement of an M-microphone average should approach
    # 10 log10(M); allow 1 dB of slack for estimation error
    M, snr_in = 4, 10.0
    gains = []
    for _ in range(100):
        sig = Waveform(0.3 * rng.standard_normal(3000))
        chans, noises = [], []
        for _ in range(M):
            mixed = mix_noise(sig, Waveform(rng.standard_normal(3000)), snr_in)
            chans.append(mixed)
            noises.append(mixed.samples - sig.samples)
        out = delay_and_sum(MultiChannelRecording(tuple(chans)))
        residual = out.samples - sig.samples
        snr_out = 10.0 * np.log10(rms_power(sig) / np.mean(residual**2))
        gains.append(snr_out - snr_in)
    assert np.mean(gains) >= 10.0 * np.log10(M) - 1.0


# -- variant construction ----------------------------------------------------


def _multichannel(rng, nch=4, n=4000):
    base = 0.3 * rng.standard_normal(n)
    chans = []
    for d in range(nch):
        x = np.zeros_like(base)
        x[d:] = base[: n - d] if d else base
        chans.append(Waveform(x))
    return MultiChannelRecording(tuple(chans))


def test_build_da_variants(rng):
    rec = _multichannel(rng, nch=1, n=4000)
    vset = build_variant_set(rec, "da", 2, _policy(rng), rng, "u0")
    assert vset.size == 2
    assert len(vset.members[0]) == len(vset.members[1])
    assert all(p.kind in ("original", "augmented") for p in vset.provenance)
    assert all(p.detail["channel"] == 0 for p in vset.provenance)


def test_build_mc_variants_distinct_channels(rng):
    rec = _multichannel(rng)
    vset = build_variant_set(rec, "mc", 3, _policy(rng), rng, "u0")
    picked = [p.detail["channel"] for p in vset.provenance]
    assert len(set(picked)) == 3
    for m, c in zip(vset.members, picked):
        assert np.array_equal(m.samples, rec.channels[c].samples)


def test_build_mc_needs_enough_channels(rng):
    rec = _multichannel(rng, nch=2)
    with pytest.raises(ArgumentError):
        build_variant_set(rec, "mc", 3, _policy(rng), rng)


def test_build_eh_variants(rng):
    rec = _multichannel(rng, nch=5)
    vset = build_variant_set(rec, "eh", 2, _policy(rng), rng, "u0")
    kinds = sorted(p.kind for p in vset.provenance)
    assert kinds == ["beamformed", "channel"]
    beam = next(p for p in vset.provenance if p.kind == "beamformed")
    assert len(beam.detail["channels"]) in (2, 5)


def test_build_eh_rejects_k_not_2(rng):
    rec = _multichannel(rng)
    with pytest.raises(ArgumentError):
        build_variant_set(rec, "eh", 3, _policy(rng), rng)


def test_build_composite_mode_uniform(rng):
    rec = _multichannel(rng, n=2500)
    policy = _policy(rng, pitch_prob=0.0)  # keep the loop cheap
    kinds = {"da": 0, "mc": 0}
    for _ in range(300):
        vset = build_variant_set(rec, "da+mc", 2, policy, rng)
        if all(p.kind == "channel" for p in vset.provenance):
            kinds["mc"] += 1
        else:
            kinds["da"] += 1
    # uniform mode choice: ~150 each, 4 sigma is ~35
    assert abs(kinds["mc"] - 150) < 35


def test_build_none_mode_single_member(rng):
    rec = _multichannel(rng)
    vset = build_variant_set(rec, "none", 2, _policy(rng), rng)
    assert vset.size == 1
    assert vset.provenance[0].kind == "original"


def test_build_variant_set_k_validation(rng):
    rec = _multichannel(rng)
    with pytest.raises(ArgumentError):
        build_variant_set(rec, "da", 0, _policy(rng), rng)
