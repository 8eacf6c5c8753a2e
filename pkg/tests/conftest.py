"""Shared fixtures: synthetic speech-like signals and tiny corpora."""

import numpy as np
import pytest

from ncderev.dsp import Waveform


def synth_speech(rng, sample_rate=16000, duration=1.5):
    """Speech-like test signal: broadband colored noise plus harmonic
    voicing, shaped by a pseudo-syllabic energy envelope.

    All 257 STFT bins keep nonzero energy (broadband floor), while the
    envelope gives the bin trajectories the temporal structure that
    reverberation smears.
    """
    n = int(duration * sample_rate)
    t = np.arange(n) / sample_rate

    white = rng.normal(size=n)
    shape = 1.0 / np.sqrt(1.0 + np.fft.rfftfreq(n, 1.0 / sample_rate) / 500.0)
    sig = np.fft.irfft(np.fft.rfft(white) * shape, n)

    f0 = rng.uniform(90.0, 220.0)
    for h in range(1, 13):
        freq = f0 * h * rng.uniform(0.995, 1.005)
        if freq > 0.45 * sample_rate:
            break
        sig += (2.0 / h) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))

    syllable = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 4.5) * t
                                  + rng.uniform(0, 2 * np.pi))
    phrase = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * t
                                + rng.uniform(0, 2 * np.pi))
    env = 0.15 + 0.85 * syllable * phrase
    sig *= env
    return Waveform(0.85 * sig / np.max(np.abs(sig)), sample_rate)


@pytest.fixture(scope="session")
def speech():
    return synth_speech(np.random.default_rng(7), duration=1.2)
