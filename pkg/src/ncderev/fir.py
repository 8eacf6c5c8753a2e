"""Per-frequency-bin non-causal complex FIR estimation of clean bin trajectories.

A filter with p causal and q non-causal taps predicts the clean trajectory
of one STFT bin from the reverberant one,

    yhat(n) = sum_i g(i) * x(n + q - i),   i = 0..p+q,

with x zero outside its support. The minimizer of sum_n |yhat(n) - y(n)|^2
over complex taps is obtained by splitting taps and trajectories into real
and imaginary parts and solving the stacked real normal equations

    [[S, -D], [D, S]] [g_r; g_j] = [u1; u2]

where S = M_rr + M_jj, D = M_rj - M_jr, u1 = R_XrYr + R_XjYj and
u2 = R_XrYj - R_XjYr; the M blocks are Gram matrices of the shifted real
and imaginary trajectory columns. The stacked solve is the production path.
A block-elimination closed form exists when S and D are both invertible and
is kept as a verification path; D is antisymmetric, hence singular whenever
the tap count is odd and whenever the trajectory is purely real or purely
imaginary, so the closed form is never used for production fits.

``ls_oracle`` solves the same problem independently through the explicit
complex design matrix and a rank-revealing factorization.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dsp import ComplexSpectrogram


class SingularSystemError(np.linalg.LinAlgError):
    """Normal equations are singular; a ridge term is required."""


@dataclass(frozen=True)
class NcFirFilter:
    """Complex FIR taps split into real/imaginary parts, plus (p, q) context."""

    g_real: np.ndarray
    g_imag: np.ndarray
    p: int
    q: int

    def __post_init__(self):
        g_real = np.asarray(self.g_real, dtype=np.float64)
        g_imag = np.asarray(self.g_imag, dtype=np.float64)
        n = self.p + self.q + 1
        if self.p < 0 or self.q < 0:
            raise ValueError(f"p and q must be >= 0, got ({self.p}, {self.q})")
        if g_real.shape != (n,) or g_imag.shape != (n,):
            raise ValueError(
                f"tap vectors must have length p+q+1 = {n}, got "
                f"{g_real.shape} and {g_imag.shape}"
            )
        if not (np.all(np.isfinite(g_real)) and np.all(np.isfinite(g_imag))):
            raise ValueError("taps must be finite")
        object.__setattr__(self, "g_real", g_real)
        object.__setattr__(self, "g_imag", g_imag)

    @property
    def taps(self) -> np.ndarray:
        """Complex taps; index i multiplies x(n + q - i)."""
        return self.g_real + 1j * self.g_imag

    @classmethod
    def from_taps(cls, taps, p, q):
        taps = np.asarray(taps, dtype=np.complex128)
        return cls(taps.real.copy(), taps.imag.copy(), p, q)


@dataclass(frozen=True)
class NormalSystem:
    """Correlation blocks of the stacked real normal equations for one bin."""

    m_rr: np.ndarray
    m_jj: np.ndarray
    m_rj: np.ndarray
    m_jr: np.ndarray
    r_xr_yr: np.ndarray
    r_xj_yj: np.ndarray
    r_xr_yj: np.ndarray
    r_xj_yr: np.ndarray
    p: int
    q: int

    def __post_init__(self):
        n = self.p + self.q + 1
        for name in ("m_rr", "m_jj", "m_rj", "m_jr"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            if mat.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, mat)
        for name in ("r_xr_yr", "r_xj_yj", "r_xr_yj", "r_xj_yr"):
            vec = np.asarray(getattr(self, name), dtype=np.float64)
            if vec.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, vec)

    @property
    def taps(self) -> int:
        return self.p + self.q + 1

    def stacked(self):
        """Return (A, b) of the 2(p+q+1)-dimensional real system A g = b."""
        s = self.m_rr + self.m_jj
        d = self.m_rj - self.m_jr
        u1 = self.r_xr_yr + self.r_xj_yj
        u2 = self.r_xr_yj - self.r_xj_yr
        a = np.block([[s, -d], [d, s]])
        return a, np.concatenate([u1, u2])

    def auto_ridge(self) -> float:
        """Scale-invariant conditioning floor: 1e-8 * trace(S) / (p+q+1)."""
        return 1e-8 * float(np.trace(self.m_rr + self.m_jj)) / self.taps


def _check_context(x, y, p, q):
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("trajectories must be 1-D")
    if x.size == 0 or y.size == 0:
        raise ValueError("empty trajectory")
    if y.size > x.size:
        raise ValueError(
            f"clean trajectory ({y.size}) longer than reverberant ({x.size})"
        )
    if p < 0 or q < 0:
        raise ValueError(f"p and q must be >= 0, got ({p}, {q})")
    if p + q + 1 > y.size:
        raise ValueError(
            f"underdetermined: {p + q + 1} taps but only {y.size} regression frames"
        )
    return x, y


def build_normal_system(x, y, p, q) -> NormalSystem:
    """Populate the eight correlation structures for one bin pair.

    The regression range is n = 0..len(y)-1 and the reverberant
    trajectory is zero-padded outside its support on both ends, so every
    block is the Gram product of explicitly shifted trajectory columns.
    """
    x, y = _check_context(x, y, p, q)
    m_rr, m_jj, m_rj, r_rr, r_jj, r_rj, r_jr = kernels.normal_blocks(
        x, y, q, p + q + 1
    )
    return NormalSystem(
        m_rr=m_rr, m_jj=m_jj, m_rj=m_rj, m_jr=m_rj.T.copy(),
        r_xr_yr=r_rr, r_xj_yj=r_jj, r_xr_yj=r_rj, r_xj_yr=r_jr,
        p=p, q=q,
    )


def solve_normal_system(system: NormalSystem, ridge=0.0) -> NcFirFilter:
    """Solve the stacked real system, optionally with a ridge on the diagonal."""
    if ridge == "auto":
        ridge = system.auto_ridge()
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    a, b = system.stacked()
    if ridge:
        a = a + ridge * np.eye(a.shape[0])
    try:
        g = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "singular normal equations; supply ridge"
        ) from exc
    if not np.all(np.isfinite(g)):
        raise SingularSystemError("singular normal equations; supply ridge")
    n = system.taps
    return NcFirFilter(g[:n], g[n:], system.p, system.q)


def fit_filter(x, y, p, q, ridge=0.0) -> NcFirFilter:
    """MSE-optimal complex FIR taps for one bin trajectory pair.

    Args:
        x: reverberant bin trajectory (complex, len >= len(y)).
        y: clean bin trajectory.
        p, q: causal and non-causal context in frames.
        ridge: nonnegative diagonal loading; "auto" selects a
            scale-invariant floor of 1e-8 * trace(S)/(p+q+1).

    Raises SingularSystemError when the stacked system is singular and
    ridge is zero.
    """
    return solve_normal_system(build_normal_system(x, y, p, q), ridge=ridge)


def closed_form_filter(system: NormalSystem, cond_limit=1e12) -> NcFirFilter:
    """Block-elimination closed form of the stacked system (verification path).

    Eliminating each tap half in turn gives

        g_r = (D^-1 S + S^-1 D)^-1 (D^-1 u1 + S^-1 u2)
        g_j = (D^-1 S + S^-1 D)^-1 (D^-1 u2 - S^-1 u1)

    which requires both S and the antisymmetric D to be invertible: D is
    structurally singular for odd tap counts and for purely real or
    purely imaginary trajectories, and those cases must go through
    ``solve_normal_system`` instead.
    """
    s = system.m_rr + system.m_jj
    d = system.m_rj - system.m_jr
    u1 = system.r_xr_yr + system.r_xj_yj
    u2 = system.r_xr_yj - system.r_xj_yr
    if system.taps % 2 == 1:
        raise SingularSystemError(
            f"odd tap count {system.taps}: the antisymmetric intermediate "
            "matrix is singular; use the stacked solve"
        )
    for name, mat in (("S", s), ("D", d)):
        if np.linalg.cond(mat) > cond_limit:
            raise SingularSystemError(
                f"intermediate matrix {name} is singular or near-singular; "
                "use the stacked solve"
            )
    s_inv = np.linalg.inv(s)
    d_inv = np.linalg.inv(d)
    core = np.linalg.inv(d_inv @ s + s_inv @ d)
    g_r = core @ (d_inv @ u1 + s_inv @ u2)
    g_j = core @ (d_inv @ u2 - s_inv @ u1)
    return NcFirFilter(g_r, g_j, system.p, system.q)


def apply_filter(filt: NcFirFilter, x, out_len: int) -> np.ndarray:
    """Filter one bin trajectory: yhat(n) = sum_i g(i) x(n + q - i).

    x is zero outside its support; output has ``out_len`` frames.
    """
    if out_len < 1:
        raise ValueError(f"out_len must be >= 1, got {out_len}")
    x = np.asarray(x, dtype=np.complex128)
    return kernels.apply_fir(filt.taps, x, filt.q, out_len)


def prediction_error(y_hat, y) -> float:
    """Sum of squared complex moduli of the prediction residual."""
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    diff = y_hat - y
    return float(np.sum(diff.real ** 2 + diff.imag ** 2))


def design_matrix(x, p, q, n_rows: int) -> np.ndarray:
    """Explicit complex design matrix: column i holds x(n + q - i)."""
    x = np.asarray(x, dtype=np.complex128)
    taps = p + q + 1
    idx = np.arange(n_rows)[:, None] + (q - np.arange(taps))[None, :]
    valid = (idx >= 0) & (idx < x.size)
    return np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0 + 0.0j)


def ls_oracle(x, y, p, q) -> NcFirFilter:
    """Independent least-squares reference solved via the design matrix.

    Builds the explicit complex design matrix of shifted x values and
    solves with a rank-revealing factorization (SVD); rank deficiency is
    reported with a warning and the minimum-norm solution is returned.
    """
    x, y = _check_context(x, y, p, q)
    z = design_matrix(x, p, q, y.size)
    g, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
    if rank < p + q + 1:
        warnings.warn(
            f"rank-deficient design matrix (rank {rank} < {p + q + 1}); "
            "returning the minimum-norm solution",
            stacklevel=2,
        )
    return NcFirFilter.from_taps(g, p, q)


def _batched_systems(x_values, y_values, p, q):
    taps = p + q + 1
    m_rr, m_jj, m_rj, r_rr, r_jj, r_rj, r_jr = kernels.normal_blocks(
        x_values, y_values, q, taps
    )
    m_jr = np.swapaxes(m_rj, 1, 2)
    s = m_rr + m_jj
    d = m_rj - m_jr
    a = np.empty((x_values.shape[1], 2 * taps, 2 * taps))
    a[:, :taps, :taps] = s
    a[:, :taps, taps:] = -d
    a[:, taps:, :taps] = d
    a[:, taps:, taps:] = s
    b = np.concatenate([r_rr + r_jj, r_rj - r_jr], axis=1)
    trace_s = np.trace(s, axis1=1, axis2=2)
    return a, b, trace_s


def dereverberate_spectrogram(reverb: ComplexSpectrogram,
                              clean: ComplexSpectrogram,
                              p: int, q: int, ridge="auto"):
    """Fit and apply one filter per frequency bin independently.

    Args:
        reverb: spectrogram supplying the filter input X.
        clean: spectrogram supplying the regression target Y; must have
            the same bin count and at most as many frames.
        ridge: per-bin diagonal loading ("auto" for the scale-invariant
            default, a number to share one value across bins).

    Returns:
        (estimate, filters, errors): the stacked estimated-clean
        spectrogram with clean's frame count, the per-bin NcFirFilter
        list, and the per-bin squared prediction errors.
    """
    if reverb.bins != clean.bins:
        raise ValueError(f"bin count mismatch: {reverb.bins} vs {clean.bins}")
    if clean.frames > reverb.frames:
        raise ValueError(
            f"clean has more frames ({clean.frames}) than reverb ({reverb.frames})"
        )
    taps = p + q + 1
    if taps > clean.frames:
        raise ValueError(
            f"underdetermined: {taps} taps but only {clean.frames} frames"
        )
    a, b, trace_s = _batched_systems(reverb.values, clean.values, p, q)
    if ridge == "auto":
        ridge_k = 1e-8 * trace_s / taps
    else:
        if ridge < 0:
            raise ValueError(f"ridge must be >= 0, got {ridge}")
        ridge_k = np.full(reverb.bins, float(ridge))
    a += ridge_k[:, None, None] * np.eye(2 * taps)[None, :, :]
    try:
        g = np.linalg.solve(a, b[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        g = np.empty_like(b)
        for k in range(reverb.bins):
            try:
                g[k] = np.linalg.solve(a[k], b[k])
            except np.linalg.LinAlgError as exc:
                raise SingularSystemError(
                    f"bin {k}: singular normal equations; supply ridge"
                ) from exc
    bad = np.flatnonzero(~np.all(np.isfinite(g), axis=1))
    if bad.size:
        raise SingularSystemError(
            f"bin {bad[0]}: singular normal equations; supply ridge"
        )
    g_cplx = g[:, :taps] + 1j * g[:, taps:]
    estimate = kernels.apply_fir(g_cplx, reverb.values, q, clean.frames)
    errors = np.sum(np.abs(estimate - clean.values) ** 2, axis=0)
    filters = [NcFirFilter(g[k, :taps], g[k, taps:], p, q) for k in range(reverb.bins)]
    out = ComplexSpectrogram(estimate, clean.config, clean.sample_rate)
    return out, filters, errors


def fit_pooled_filters(pairs, p: int, q: int, ridge="auto"):
    """Fit one filter per bin on the pooled normal equations of many pairs.

    The Gram blocks are additive over utterances, so pooling sums the
    stacked systems before a single per-bin solve. Used to adapt the
    causal reference enhancer on a held-out set.

    Args:
        pairs: iterable of (reverb, clean) ComplexSpectrogram pairs with
            one common bin count.

    Returns:
        List of per-bin NcFirFilter.
    """
    taps = p + q + 1
    a_sum = None
    b_sum = None
    trace_sum = None
    n_bins = None
    for reverb, clean in pairs:
        if n_bins is None:
            n_bins = reverb.bins
        elif reverb.bins != n_bins:
            raise ValueError("bin count differs across pairs")
        if clean.frames > reverb.frames or taps > clean.frames:
            raise ValueError("invalid pair: clean longer than reverb or too short")
        a, b, trace_s = _batched_systems(reverb.values, clean.values, p, q)
        if a_sum is None:
            a_sum, b_sum, trace_sum = a, b, trace_s
        else:
            a_sum += a
            b_sum += b
            trace_sum += trace_s
    if a_sum is None:
        raise ValueError("no pairs supplied")
    if ridge == "auto":
        ridge_k = 1e-8 * trace_sum / taps
    else:
        ridge_k = np.full(n_bins, float(ridge))
    a_sum += ridge_k[:, None, None] * np.eye(2 * taps)[None, :, :]
    try:
        g = np.linalg.solve(a_sum, b_sum[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "singular pooled normal equations; supply ridge"
        ) from exc
    return [NcFirFilter(g[k, :taps], g[k, taps:], p, q) for k in range(n_bins)]


@dataclass(frozen=True)
class SweepRow:
    """One (p, q) cell of a context sweep."""

    p: int
    q: int
    taps: int
    ratio_percent: float
    mean_err: float
    utterance_count: int


def context_sweep(pairs, grid, ridge="auto"):
    """Mean normalized prediction error over a corpus for each (p, q).

    For every grid cell the per-utterance error is the total squared
    prediction error over all bins divided by the clean energy
    sum |Y|^2; rows carry 100*p/(p+q) for fixed-tap-count slices (NaN
    for the (0, 0) cell).

    Args:
        pairs: list of (reverb, clean) ComplexSpectrogram pairs.
        grid: iterable of (p, q) tuples.

    Returns:
        List of SweepRow in grid order.
    """
    pairs = list(pairs)
    grid = list(grid)
    if not pairs or not grid:
        raise ValueError("corpus and grid must be non-empty")
    rows = []
    for p, q in grid:
        errs = []
        for reverb, clean in pairs:
            _, _, errors = dereverberate_spectrogram(reverb, clean, p, q, ridge=ridge)
            denom = float(np.sum(np.abs(clean.values) ** 2))
            errs.append(float(errors.sum()) / denom if denom > 0 else 0.0)
        ratio = 100.0 * p / (p + q) if (p + q) > 0 else float("nan")
        rows.append(SweepRow(
            p=p, q=q, taps=p + q + 1, ratio_percent=ratio,
            mean_err=float(np.mean(errs)), utterance_count=len(pairs),
        ))
    return rows
