"""Log-Mel filter energies, per-utterance normalization, and context stacking.

Feature matrices are plain float64 arrays of shape (frames, 40). Each
frame's context vector concatenates the p previous, the current, and the
q future frames in that order, with zero vectors beyond the utterance
bounds.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram

MEL_FLOOR_RELATIVE = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterBank:
    """Triangular filters on Mel-spaced centers between 0 Hz and Nyquist."""

    n_mels: int
    fft_size: int
    sample_rate: int
    weights: np.ndarray  # (n_mels, fft_size//2 + 1), nonnegative

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


def mel_bank(fft_size: int, sample_rate: int, n_mels: int = 40) -> MelFilterBank:
    """Build the triangular Mel filter bank.

    Raises ValueError when n_mels is infeasible for the FFT resolution
    (fewer than 2 bins per filter, or a filter with empty support).
    """
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if fft_size < 2 * n_mels:
        raise ValueError(
            f"fft_size {fft_size} too small for {n_mels} Mel filters"
        )
    n_bins = fft_size // 2 + 1
    edges_mel = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(n_bins) * sample_rate / fft_size
    weights = np.zeros((n_mels, n_bins))
    for k in range(n_mels):
        left, center, right = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights[k] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(weights[k] > 0):
            raise ValueError(
                f"Mel filter {k} has empty support: {n_mels} filters are "
                f"infeasible for fft_size {fft_size} at {sample_rate} Hz"
            )
    return MelFilterBank(n_mels=n_mels, fft_size=fft_size,
                         sample_rate=sample_rate, weights=weights)


def log_mel(spec: ComplexSpectrogram, bank: MelFilterBank, floor=None) -> np.ndarray:
    """Log filter energies: log(max(floor, sum_b w(k,b) |X(n,b)|^2)).

    With ``floor=None`` the floor is 1e-10 relative to the utterance's
    maximum filter energy (an absolute tiny value for an all-zero
    spectrogram), which prevents -inf while preserving dynamic range.
    """
    if spec.bins != bank.n_bins:
        raise ValueError(
            f"bin count mismatch: spectrogram {spec.bins}, bank {bank.n_bins}"
        )
    power = spec.values.real ** 2 + spec.values.imag ** 2
    energies = power @ bank.weights.T
    if floor is None:
        peak = float(energies.max()) if energies.size else 0.0
        floor = MEL_FLOOR_RELATIVE * peak if peak > 0 else np.finfo(np.float64).tiny
    return np.log(np.maximum(energies, floor))


def mvn(feats: np.ndarray) -> np.ndarray:
    """Per-utterance mean and variance normalization of each trajectory.

    Every feature dimension gets zero mean and unit variance along the
    utterance; near-constant trajectories (variance under 1e-12) are
    centered but not scaled. Idempotent.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError(
            f"need at least 2 frames of 2-D features, got shape {feats.shape}"
        )
    mean = feats.mean(axis=0)
    var = feats.var(axis=0)
    out = feats - mean
    scale = var >= 1e-12
    out[:, scale] /= np.sqrt(var[scale])
    return out


def stack_context(feats: np.ndarray, p: int, q: int) -> np.ndarray:
    """Concatenate frames n-p..n+q per frame, zero vectors past the edges.

    Shape (N, d) -> (N, (p+q+1)*d); the center d columns of the output
    equal the input.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {feats.shape}")
    if p < 0 or q < 0:
        raise ValueError(f"p and q must be >= 0, got ({p}, {q})")
    n, d = feats.shape
    padded = np.zeros((p + n + q, d))
    padded[p:p + n] = feats
    return np.hstack([padded[j:j + n] for j in range(p + q + 1)])


def align_pairs(reverb_feats: np.ndarray, clean_feats: np.ndarray):
    """Truncate the reverberant sequence to the clean length.

    Both sequences start at frame 0; no lag search is performed. Raises
    ValueError when the clean sequence is longer than the reverberant one.
    """
    reverb_feats = np.asarray(reverb_feats, dtype=np.float64)
    clean_feats = np.asarray(clean_feats, dtype=np.float64)
    if clean_feats.shape[0] > reverb_feats.shape[0]:
        raise ValueError(
            f"clean sequence ({clean_feats.shape[0]} frames) is longer than "
            f"reverberant ({reverb_feats.shape[0]} frames)"
        )
    if clean_feats.shape[1:] != reverb_feats.shape[1:]:
        raise ValueError("feature dimensionality differs between the pair")
    return reverb_feats[:clean_feats.shape[0]], clean_feats
