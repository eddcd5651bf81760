import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tone():
    """One second of a 440 Hz tone."""
    from mvcssl import Waveform

    t = np.arange(16000) / 16000.0
    return Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t))


def peak_frequency(samples: np.ndarray, sample_rate: int = 16000) -> float:
    """Dominant frequency via a zero-padded FFT of the windowed signal."""
    n = len(samples)
    windowed = samples * np.hanning(n)
    spec = np.abs(np.fft.rfft(windowed, n=8 * n))
    return float(np.argmax(spec)) * sample_rate / (8 * n)
