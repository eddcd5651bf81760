import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvcssl import MultiChannelRecording, Waveform, read_wav, rms_power, write_wav
from mvcssl.errors import ArgumentError, UnsupportedFormatError

from conftest import peak_frequency


def test_waveform_immutable_float64():
    w = Waveform(np.array([0.1, -0.2, 0.3], dtype=np.float32))
    assert w.samples.dtype == np.float64
    with pytest.raises(ValueError):
        w.samples[0] = 1.0


def test_waveform_rejects_bad_input():
    with pytest.raises(ArgumentError):
        Waveform(np.array([]))
    with pytest.raises(ArgumentError):
        Waveform(np.array([[0.1, 0.2]]))
    with pytest.raises(ArgumentError):
        Waveform(np.array([0.1, np.nan]))
    with pytest.raises(ArgumentError):
        Waveform(np.array([0.1]), sample_rate=0)


def test_duration():
    w = Waveform(np.zeros(16000) + 0.1)
    assert w.duration == pytest.approx(1.0)


def test_multichannel_requires_equal_lengths():
    a = Waveform(np.ones(100) * 0.1)
    b = Waveform(np.ones(99) * 0.1)
    with pytest.raises(ArgumentError):
        MultiChannelRecording((a, b))
    rec = MultiChannelRecording((a, a, a))
    assert rec.num_channels == 3 and len(rec) == 100


def test_wav_round_trip_quantization(tmp_path, rng):
    w = Waveform(rng.uniform(-0.9, 0.9, 4000))
    path = tmp_path / "x.wav"
    write_wav(w, path)
    back = read_wav(path)
    assert back.num_channels == 1
    assert len(back.channels[0]) == len(w)
    assert np.abs(back.channels[0].samples - w.samples).max() <= 2.0**-15


def test_wav_multichannel_order(tmp_path):
    chans = tuple(Waveform(np.full(500, 0.1 * (i + 1))) for i in range(3))
    path = tmp_path / "m.wav"
    write_wav(MultiChannelRecording(chans), path)
    back = read_wav(path)
    assert back.num_channels == 3
    for i, ch in enumerate(back.channels):
        assert ch.samples.mean() == pytest.approx(0.1 * (i + 1), abs=1e-4)


def test_wav_sine_survives_round_trip(tmp_path, tone):
    path = tmp_path / "tone.wav"
    write_wav(tone, path)
    back = read_wav(path).channels[0]
    f = peak_frequency(back.samples)
    assert abs(f - 440.0) < 1.0


def test_write_clips_with_warning(tmp_path):
    w = Waveform(np.array([0.0, 1.5, -1.5, 0.5]))
    path = tmp_path / "clip.wav"
    with pytest.warns(UserWarning):
        write_wav(w, path)
    back = read_wav(path).channels[0].samples
    assert back.max() <= 1.0 and back.min() >= -1.0


def test_read_rejects_wrong_rate(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "8k.wav"
    wavfile.write(path, 8000, (np.zeros(100)).astype(np.int16))
    with pytest.raises(UnsupportedFormatError):
        read_wav(path)


def test_read_rejects_unknown_dtype(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "i32.wav"
    wavfile.write(path, 16000, np.zeros(100, dtype=np.int32))
    with pytest.raises(UnsupportedFormatError):
        read_wav(path)


def test_read_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "nope.wav")


def test_rms_power_constant():
    assert rms_power(Waveform(np.full(100, 0.5))) == pytest.approx(0.25)


@given(scale=st.floats(0.01, 3.0))
def test_rms_power_quadratic_in_scale(scale):
    x = np.linspace(-0.3, 0.3, 257)
    base = rms_power(Waveform(x))
    scaled = rms_power(Waveform(scale * x))
    assert scaled == pytest.approx(scale**2 * base, rel=1e-9)
