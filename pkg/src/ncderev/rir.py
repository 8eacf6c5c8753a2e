"""Randomized room impulse responses via the image method.

Rooms are sampled around nominal meeting-room dimensions with +/-20%
uniform jitter, source and microphone are placed by rejection sampling
under margin/height/distance constraints, and a target reverberation
time drawn from U(0.4, 1.99) s sets one reflection coefficient for all
six surfaces. ``estimate_rt60`` validates generated responses through
Schroeder backward integration.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

SPEED_OF_SOUND = 343.0
NOMINAL_DIMS = (7.95, 5.68, 4.5)
RT60_RANGE = (0.4, 1.99)
MIN_SRC_MIC_DIST = 0.144
MAX_SRC_MIC_DIST = 2.816
WALL_MARGIN = 1.0
HEIGHT_BAND = (1.0, 2.0)


class GeometryError(ValueError):
    """Room geometry cannot satisfy the placement or absorption constraints."""


class DecayRangeError(ValueError):
    """Impulse response has too little decay range for RT60 estimation."""


@dataclass(frozen=True)
class RoomSpec:
    """Sampled room geometry plus reverberation target."""

    dims: tuple
    src: tuple
    mic: tuple
    rt60: float
    sample_rate: int = 16000
    max_rir_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "src", tuple(float(v) for v in self.src))
        object.__setattr__(self, "mic", tuple(float(v) for v in self.mic))
        if self.max_rir_len == 0:
            object.__setattr__(
                self, "max_rir_len", default_rir_len(self.rt60, self.sample_rate)
            )
        problems = placement_problems(self.dims, self.src, self.mic)
        if not RT60_RANGE[0] <= self.rt60 <= RT60_RANGE[1]:
            problems.append(f"rt60 {self.rt60} outside [{RT60_RANGE[0]}, {RT60_RANGE[1]}]")
        if problems:
            raise GeometryError("invalid RoomSpec: " + "; ".join(problems))

    @property
    def distance(self) -> float:
        return math.dist(self.src, self.mic)


@dataclass(frozen=True)
class Rir:
    """Room impulse response taps plus the spec that produced them."""

    taps: np.ndarray
    sample_rate: int
    spec: RoomSpec

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1:
            raise ValueError("taps must be 1-D")
        if not np.all(np.isfinite(taps)):
            raise ValueError("taps must be finite")
        if not np.any(taps != 0):
            raise ValueError("impulse response has zero energy")
        object.__setattr__(self, "taps", taps)


def default_rir_len(rt60: float, sample_rate: int) -> int:
    """Tap budget capturing the 60 dB decay with 20% margin."""
    return int(math.ceil(1.2 * rt60 * sample_rate))


def placement_problems(dims, src, mic):
    """List of violated source/microphone placement constraints (empty if valid)."""
    problems = []
    for name, pos in (("src", src), ("mic", mic)):
        x, y, z = pos
        lx, ly, lz = dims
        if not (0 < x < lx and 0 < y < ly and 0 < z < lz):
            problems.append(f"{name} not strictly inside the room")
            continue
        if (x < WALL_MARGIN or x > lx - WALL_MARGIN
                or y < WALL_MARGIN or y > ly - WALL_MARGIN
                or z > lz - WALL_MARGIN):
            problems.append(f"{name} closer than {WALL_MARGIN} m to a wall")
        if not HEIGHT_BAND[0] <= z <= HEIGHT_BAND[1]:
            problems.append(f"{name} height {z:.3f} outside {HEIGHT_BAND} m band")
    d = math.dist(src, mic)
    if not MIN_SRC_MIC_DIST <= d <= MAX_SRC_MIC_DIST:
        problems.append(
            f"src-mic distance {d:.3f} outside "
            f"[{MIN_SRC_MIC_DIST}, {MAX_SRC_MIC_DIST}] m"
        )
    return problems


def sample_room(rng, nominal_dims=NOMINAL_DIMS, sample_rate=16000,
                rt60_range=RT60_RANGE, max_position_draws=8192) -> RoomSpec:
    """Sample one room: dims ~ U(0.8, 1.2) x nominal, positions by rejection.

    Source and microphone are drawn uniformly over the room volume and
    rejected until the wall-margin, height-band and distance constraints
    all hold. Deterministic given the generator state.

    Raises GeometryError when the nominal room is too small for the 1 m
    margins (the worst-case -20% draw must leave positive margin space)
    or when the draw budget is exhausted.
    """
    nominal = np.asarray(nominal_dims, dtype=np.float64)
    if nominal.shape != (3,) or np.any(nominal <= 0):
        raise GeometryError(f"nominal dims must be 3 positive values, got {nominal_dims}")
    worst = 0.8 * nominal
    if np.any(worst <= 2 * WALL_MARGIN):
        raise GeometryError(
            f"nominal room {tuple(nominal)} is too small: a -20% draw leaves no "
            f"placements with {WALL_MARGIN} m wall margins and the "
            f"{HEIGHT_BAND[0]}-{HEIGHT_BAND[1]} m height band"
        )
    dims = nominal * rng.uniform(0.8, 1.2, size=3)
    rt60 = float(rng.uniform(*rt60_range))
    batch = 256
    for _ in range(0, max_position_draws, batch):
        src = rng.uniform(0.0, 1.0, size=(batch, 3)) * dims
        mic = rng.uniform(0.0, 1.0, size=(batch, 3)) * dims
        zhi = min(HEIGHT_BAND[1], dims[2] - WALL_MARGIN)
        ok = np.ones(batch, dtype=bool)
        for pos in (src, mic):
            ok &= (pos[:, 0] >= WALL_MARGIN) & (pos[:, 0] <= dims[0] - WALL_MARGIN)
            ok &= (pos[:, 1] >= WALL_MARGIN) & (pos[:, 1] <= dims[1] - WALL_MARGIN)
            ok &= (pos[:, 2] >= HEIGHT_BAND[0]) & (pos[:, 2] <= zhi)
        d = np.linalg.norm(src - mic, axis=1)
        ok &= (d >= MIN_SRC_MIC_DIST) & (d <= MAX_SRC_MIC_DIST)
        hits = np.flatnonzero(ok)
        if hits.size:
            i = hits[0]
            return RoomSpec(
                dims=tuple(dims),
                src=tuple(src[i]),
                mic=tuple(mic[i]),
                rt60=rt60,
                sample_rate=sample_rate,
            )
    raise GeometryError(
        f"no valid source/microphone placement in room {tuple(dims)} after "
        f"{max_position_draws} draws"
    )


def _sphere_directions(n: int = 512) -> np.ndarray:
    """Deterministic Fibonacci quadrature of the unit sphere."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (1.0 + math.sqrt(5.0)) * i
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _model_rt60(kappa, dims, direct_dist, c=SPEED_OF_SOUND) -> float:
    """Schroeder-fit RT60 predicted by the image sum's directional mixture.

    An image at distance d in direction u crosses walls about
    d*|u_ax|/L_ax times per axis, so its energy carries the factor
    exp(-kappa * d * s) with s = sum_ax |u_ax|/L_ax and
    kappa = -ln(1 - alpha). Averaging over directions, the backward
    reverberant energy integral is proportional to
    mean(exp(-kappa c s t)/s)/(4 pi V kappa); adding the direct-path
    energy 1/(4 pi d0)^2 places the -5..-35 dB fit window at the same
    depth of the decay mixture as the estimator sees on real responses.
    """
    dims = np.asarray(dims, dtype=np.float64)
    s = np.abs(_sphere_directions()) @ (1.0 / dims)
    rate = kappa * c * s  # per-direction energy decay rate (1/s)
    t_max = 1.5 * (40.0 * math.log(10.0) / 10.0) / rate.min()
    t = np.linspace(0.0, t_max, 4000)
    volume = float(np.prod(dims))
    edc = (np.exp(-rate[None, :] * t[:, None]) / s[None, :]).mean(axis=1)
    edc /= 4.0 * math.pi * volume * kappa
    e_direct = 1.0 / (4.0 * math.pi * direct_dist) ** 2
    edc[t <= direct_dist / c] += e_direct
    db = 10.0 * np.log10(edc / edc[0])
    seg = np.flatnonzero((db <= -5.0) & (db >= -35.0))
    slope, _ = np.polyfit(t[seg], db[seg], 1)
    return -60.0 / slope


def absorption_for_rt60(dims, rt60, mode="model", direct_dist=1.0,
                        c=SPEED_OF_SOUND) -> float:
    """Uniform wall absorption coefficient targeting an RT60.

    Modes: "sabine" is the classical alpha = 0.161 V / (S T); "eyring"
    is alpha = 1 - exp(-0.161 V / (S T)); "model" bisects the absorption
    so that the directional-mixture prediction of the Schroeder fit (see
    ``_model_rt60``) lands on the target, with ``direct_dist`` entering
    the direct-path energy term. Image-method responses measure 20-50%
    longer than the diffuse-field inversions predict (the late field is
    dominated by image families crossing only the widely spaced wall
    pairs), so "model" seeds the measured calibration loop used by
    ``image_method_rir``.

    Raises GeometryError when the required absorption is outside (0, 1).
    """
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    sabine_const = 24.0 * math.log(10.0) / c  # 0.1611 s/m at c = 343
    x = sabine_const * volume / (surface * rt60)
    if mode == "sabine":
        alpha = x
    elif mode == "eyring":
        alpha = 1.0 - math.exp(-x)
    elif mode == "model":
        lo, hi = x / 8.0, 8.0 * x
        if (_model_rt60(lo, dims, direct_dist, c) < rt60
                or _model_rt60(hi, dims, direct_dist, c) > rt60):
            raise GeometryError(
                f"target rt60 {rt60} s unreachable for room {tuple(dims)}"
            )
        for _ in range(40):
            mid = math.sqrt(lo * hi)
            if _model_rt60(mid, dims, direct_dist, c) > rt60:
                lo = mid
            else:
                hi = mid
        alpha = 1.0 - math.exp(-math.sqrt(lo * hi))
    else:
        raise ValueError(f"unknown absorption mode {mode!r}")
    if not 0.0 < alpha < 1.0:
        raise GeometryError(
            f"target rt60 {rt60} s unreachable for room {tuple(dims)}: "
            f"required absorption {alpha:.3f} outside (0, 1)"
        )
    return alpha


def _accumulate(spec: RoomSpec, beta: float, tw: int) -> np.ndarray:
    return kernels.rir_accumulate(
        spec.max_rir_len,
        np.array(spec.dims),
        np.array(spec.src),
        np.array(spec.mic),
        beta,
        spec.sample_rate,
        c=SPEED_OF_SOUND,
        tw=tw,
    )


def image_method_rir(spec: RoomSpec, absorption_mode="calibrated",
                     frac_delay=False, frac_delay_taps=8,
                     rt60_tolerance=0.04) -> Rir:
    """Simulate the impulse response of a shoebox room by summing image sources.

    All six surfaces share one reflection coefficient derived from the
    target RT60; reflections are summed up to the order that fits inside
    ``spec.max_rir_len``. Arrival times use nearest-sample rounding by
    default; ``frac_delay`` enables a windowed-sinc low-pass interpolation
    of ``frac_delay_taps`` samples.

    The default "calibrated" absorption mode seeds the coefficient from
    the directional decay model and then applies up to three secant
    refinements against the measured Schroeder RT60 of the generated
    response, stopping within ``rt60_tolerance`` of the target. "sabine"
    and "eyring" apply the classical diffuse-field inversions directly
    (their responses measure 20-50% long).
    """
    tw = frac_delay_taps if frac_delay else 0
    if absorption_mode in ("sabine", "eyring"):
        alpha = absorption_for_rt60(spec.dims, spec.rt60, mode=absorption_mode)
        return Rir(_accumulate(spec, math.sqrt(1.0 - alpha), tw),
                   spec.sample_rate, spec)
    if absorption_mode != "calibrated":
        raise ValueError(f"unknown absorption mode {absorption_mode!r}")
    alpha = absorption_for_rt60(spec.dims, spec.rt60, mode="model",
                                direct_dist=spec.distance)
    kappa = -math.log(1.0 - alpha)
    best_taps = None
    best_gap = np.inf
    for _ in range(4):
        taps = _accumulate(spec, math.exp(-0.5 * kappa), tw)
        measured = estimate_rt60(taps, spec.sample_rate)
        gap = abs(measured / spec.rt60 - 1.0)
        if gap < best_gap:
            best_gap = gap
            best_taps = taps
        if gap <= rt60_tolerance:
            break
        # measured decay time scales as 1/kappa
        kappa *= measured / spec.rt60
    return Rir(best_taps, spec.sample_rate, spec)


def schroeder_curve(taps) -> np.ndarray:
    """Backward-integrated energy decay, normalized to 1 at time zero.

    The trailing all-zero tail is trimmed so the curve is positive.
    """
    energy = np.asarray(taps, dtype=np.float64) ** 2
    total = energy.sum()
    if total <= 0:
        raise DecayRangeError("impulse response has no energy")
    edc = np.cumsum(energy[::-1])[::-1]
    nz = np.flatnonzero(edc > 0)
    edc = edc[: nz[-1] + 1]
    return edc / total


def estimate_rt60(rir, sample_rate=None) -> float:
    """RT60 from a Schroeder decay-line fit on the -5 dB to -35 dB segment.

    The fitted slope of that 30 dB span is extrapolated to the 60 dB
    decay time (RT60 = 2 x time for 30 dB).

    Args:
        rir: an ``Rir`` or a raw tap array (then sample_rate is required).

    Raises DecayRangeError when the decay range is under 40 dB.
    """
    if isinstance(rir, Rir):
        taps = rir.taps
        sample_rate = rir.sample_rate
    else:
        taps = np.asarray(rir, dtype=np.float64)
        if sample_rate is None:
            raise ValueError("sample_rate is required for raw tap arrays")
    edc = schroeder_curve(taps)
    db = 10.0 * np.log10(edc)
    # range is judged just ahead of the truncation plunge: the very last
    # backward-integration samples always crash to the single-tap level
    usable = db[min(int(0.95 * (db.size - 1)), db.size - 1)] if db.size > 1 else 0.0
    if db.size < 2 or usable > -40.0:
        raise DecayRangeError(
            f"need at least 40 dB of decay range, got {abs(float(usable)):.1f} dB"
        )
    seg = np.flatnonzero((db <= -5.0) & (db >= -35.0))
    if seg.size < 2:
        raise DecayRangeError("decay curve has no usable -5..-35 dB segment")
    t = seg / float(sample_rate)
    slope, _ = np.polyfit(t, db[seg], 1)
    if slope >= 0:
        raise DecayRangeError("decay curve is not decreasing on the fit segment")
    return float(-60.0 / slope)


def make_rir_set(seed: int, count: int, nominal_dims=NOMINAL_DIMS,
                 sample_rate=16000, rt60_range=RT60_RANGE,
                 absorption_mode="eyring", compute_taps=True):
    """Generate ``count`` independent impulse responses (or just their specs).

    Each item gets its own generator derived from (seed, index), so the
    set is bit-identical for a given seed under any parallel schedule.
    With ``compute_taps=False`` only the sampled RoomSpecs are returned,
    which is cheap enough for corpus-scale counts.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    specs = [
        sample_room(np.random.default_rng((seed, i)), nominal_dims,
                    sample_rate=sample_rate, rt60_range=rt60_range)
        for i in range(count)
    ]
    if not compute_taps:
        return specs
    return [image_method_rir(spec, absorption_mode=absorption_mode) for spec in specs]
