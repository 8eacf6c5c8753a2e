"""Analysis artifacts: normalized autocorrelation of bin trajectories,
spectrogram exports, and MSE reports.

Reverberation shows up as heavier autocorrelation tails in the complex
trajectory of each frequency bin; the corpus-average curve and its tail
mass scalarize that comparison between clean, reverberated and
dereverberated material.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import ComplexSpectrogram


@dataclass(frozen=True)
class AutocorrCurve:
    """Normalized autocorrelation values for lags 0..max_lag."""

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if lags.shape != values.shape or lags.ndim != 1:
            raise ValueError("lags and values must be equal-length 1-D arrays")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)

    @property
    def max_lag(self) -> int:
        return int(self.lags[-1])


def normalized_autocorr(series, max_lag: int, magnitude: bool = False) -> AutocorrCurve:
    """Normalized autocorrelation of one (complex or real) sequence.

    The series is mean-removed, then r(tau) = sum_n conj(s(n)) s(n+tau)
    over the lag overlap, normalized per lag by the geometric mean of the
    two windowed energies (Cauchy-Schwarz bound keeps |r| <= 1, and an
    exactly periodic series scores exactly 1 at its period); the real
    part is reported for complex input. With ``magnitude=True`` the
    correlation is computed on |s|.

    Raises ValueError for constant (zero-variance) series or when the
    series is not longer than max_lag.
    """
    s = np.asarray(series)
    if s.ndim != 1:
        raise ValueError("series must be 1-D")
    if s.size <= max_lag:
        raise ValueError(f"series length {s.size} must exceed max_lag {max_lag}")
    if magnitude:
        s = np.abs(s)
    s = s.astype(np.complex128)
    s = s - s.mean()
    energy = s.real ** 2 + s.imag ** 2
    if float(energy.sum()) < 1e-300:
        raise ValueError("constant series has no autocorrelation")
    head = np.cumsum(energy)           # head[i] = sum of energy[:i+1]
    tail = np.cumsum(energy[::-1])[::-1]
    values = np.empty(max_lag + 1)
    for tau in range(max_lag + 1):
        num = float((np.conj(s[:s.size - tau]) * s[tau:]).real.sum())
        denom = np.sqrt(head[s.size - tau - 1] * tail[tau])
        values[tau] = num / denom if denom > 0 else 0.0
    return AutocorrCurve(np.arange(max_lag + 1), values)


def average_autocorr(spectrograms, max_lag: int, magnitude: bool = False):
    """Mean normalized autocorrelation over all bins of all utterances.

    Degenerate trajectories (constant, or shorter than max_lag + 1) are
    skipped and counted.

    Args:
        spectrograms: iterable of ComplexSpectrogram (or bare complex
            frames-by-bins arrays).

    Returns:
        (curve, skipped): the averaged AutocorrCurve and the number of
        skipped trajectories.

    Raises ValueError when every trajectory is degenerate or the corpus
    is empty.
    """
    total = np.zeros(max_lag + 1)
    used = 0
    skipped = 0
    for spec in spectrograms:
        values = spec.values if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)
        for k in range(values.shape[1]):
            try:
                curve = normalized_autocorr(values[:, k], max_lag, magnitude=magnitude)
            except ValueError:
                skipped += 1
                continue
            total += curve.values
            used += 1
    if used == 0:
        raise ValueError("no usable bin trajectories in the corpus")
    return AutocorrCurve(np.arange(max_lag + 1), total / used), skipped


def tail_mass(curve: AutocorrCurve, from_lag: int) -> float:
    """Mean absolute autocorrelation over lags from_lag..max_lag."""
    if from_lag > curve.max_lag:
        raise ValueError(f"from_lag {from_lag} exceeds max_lag {curve.max_lag}")
    return float(np.mean(np.abs(curve.values[from_lag:])))


def export_spectrogram(data, path, fmt: str = "csv") -> None:
    """Write a spectrogram or feature matrix for inspection.

    Complex input is converted to dB magnitudes; real matrices (log
    energies) are written as-is. "csv" writes frames x bins values;
    "pgm" writes a min-max scaled 8-bit binary portable graymap with
    frames on the horizontal axis.
    """
    if isinstance(data, ComplexSpectrogram):
        data = data.values
    data = np.asarray(data)
    if np.iscomplexobj(data):
        mag = np.abs(data)
        tiny = np.finfo(np.float64).tiny
        data = 20.0 * np.log10(np.maximum(mag, tiny))
    data = data.astype(np.float64)
    if fmt == "csv":
        with open(path, "w", encoding="ascii", newline="") as fh:
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
    elif fmt == "pgm":
        lo = float(data.min())
        hi = float(data.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = np.round((data - lo) * scale).astype(np.uint8)
        img = img.T[::-1]  # frequency upward, time rightward
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'pgm'")


def mse_report(pairs):
    """Per-utterance and corpus-mean MSE between aligned feature pairs.

    Args:
        pairs: iterable of (utterance_id, estimate, reference) with
            equal-shaped 2-D arrays.

    Returns:
        (rows, corpus_mean): rows are (utterance_id, n_frames, mse).
    """
    rows = []
    for utt_id, est, ref in pairs:
        est = np.asarray(est, dtype=np.float64)
        ref = np.asarray(ref, dtype=np.float64)
        if est.shape != ref.shape:
            raise ValueError(
                f"{utt_id}: misaligned pair {est.shape} vs {ref.shape}"
            )
        rows.append((utt_id, est.shape[0], float(np.mean((est - ref) ** 2))))
    if not rows:
        raise ValueError("no pairs supplied")
    corpus_mean = float(np.mean([row[2] for row in rows]))
    return rows, corpus_mean
