"""Shoebox image-source room impulse responses with fractional delays.

Walls are indexed (x0, xL, y0, yL, z0, zL): the wall at coordinate 0 and at
the room extent, per axis. Pressure reflection factors are sqrt(1 - alpha).
Speed of sound is fixed at 343 m/s; air absorption is ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import oaconvolve

from .audio_io import AudioBuffer

SPEED_OF_SOUND = 343.0
FRAC_DELAY_TAPS = 81  # Hann-windowed sinc, +-40 samples of support
EYRING_COEFF = 24.0 * math.log(10.0) / SPEED_OF_SOUND  # 0.1611 s/m

# Practical absorption bounds: below ALPHA_MIN no real wall material exists
# (demanding a longer decay is treated as unreachable), above ALPHA_MAX the
# walls are effectively perfect absorbers.
ALPHA_MIN = 0.005
ALPHA_MAX = 1.0 - 1e-6

# spreading-loss distance floor: keeps moving sources that sweep through the
# array from producing unbounded 1/(4 pi d) spikes
MIN_SPREAD_DIST = 0.2

_IMAGE_CHUNK = 200_000


class AcousticsError(ValueError):
    pass


@dataclass(frozen=True)
class AbsorptionSet:
    """Per-wall energy absorption coefficients, each in (0, 1]."""

    coefficients: tuple[float, float, float, float, float, float]

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        if c.shape != (6,) or np.any(c <= 0) or np.any(c > 1):
            raise AcousticsError("wall absorption must be six values in (0, 1]")

    @staticmethod
    def uniform(alpha: float) -> "AbsorptionSet":
        return AbsorptionSet(tuple([float(alpha)] * 6))

    @staticmethod
    def anechoic() -> "AbsorptionSet":
        return AbsorptionSet.uniform(1.0)

    @property
    def reflection_factors(self) -> np.ndarray:
        return np.sqrt(1.0 - np.asarray(self.coefficients, dtype=np.float64))

    @property
    def is_anechoic(self) -> bool:
        return bool(np.all(np.asarray(self.coefficients) >= 1.0))


@dataclass(frozen=True)
class RirKernel:
    """Impulse response, shape (channels, length)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if not np.all(np.isfinite(s)):
            raise AcousticsError("RIR contains non-finite samples")
        object.__setattr__(self, "samples", s)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    def channel(self, idx: int) -> np.ndarray:
        return self.samples[idx]


def _surface_and_volume(room_dims):
    d = np.asarray(room_dims, dtype=np.float64)
    volume = float(np.prod(d))
    surface = 2.0 * float(d[0] * d[1] + d[0] * d[2] + d[1] * d[2])
    return surface, volume


def eyring_absorption(rt60_s: float, room_dims) -> float:
    """Raw Eyring inversion, no reachability bounds: alpha -> 0 as rt60 -> inf."""
    if rt60_s <= 0:
        raise AcousticsError("rt60 must be positive")
    surface, volume = _surface_and_volume(room_dims)
    return float(-np.expm1(-EYRING_COEFF * volume / (surface * rt60_s)))


def eyring_rt60(absorption: AbsorptionSet | float, room_dims) -> float:
    """Forward Eyring prediction from (area-weighted mean) absorption."""
    d = np.asarray(room_dims, dtype=np.float64)
    areas = np.array([d[1] * d[2], d[1] * d[2], d[0] * d[2], d[0] * d[2], d[0] * d[1], d[0] * d[1]])
    if isinstance(absorption, AbsorptionSet):
        alpha = float(np.sum(areas * np.asarray(absorption.coefficients)) / areas.sum())
    else:
        alpha = float(absorption)
    if alpha >= 1.0:
        return 0.0
    surface, volume = _surface_and_volume(room_dims)
    return EYRING_COEFF * volume / (surface * (-math.log(1.0 - alpha)))


def rt60_to_absorption(rt60_s: float, room_dims) -> AbsorptionSet:
    """Uniform per-wall absorption realizing the requested decay time.

    Raises when the demanded rt60 needs absorption outside
    [ALPHA_MIN, ALPHA_MAX]; the message names the achievable range for the
    given geometry.
    """
    alpha = eyring_absorption(rt60_s, room_dims)
    if not (ALPHA_MIN <= alpha <= ALPHA_MAX):
        lo = eyring_rt60(ALPHA_MAX, room_dims)
        hi = eyring_rt60(ALPHA_MIN, room_dims)
        raise AcousticsError(
            f"rt60 of {rt60_s:.3g} s is unreachable for this room "
            f"(needs absorption {alpha:.3g}); achievable range is "
            f"[{lo:.3g}, {hi:.3g}] s"
        )
    return AbsorptionSet.uniform(alpha)


_FRAC_TABLE_STEPS = 8192
_FRAC_TABLE: np.ndarray | None = None


def _frac_table() -> np.ndarray:
    """Windowed-sinc taps tabulated over the fractional offset in [-0.5, 0.5].

    Quantizing the fraction to 1/8192 sample (about 8 ns at 16 kHz) is three
    orders of magnitude below the interpolated-lag resolution the metrics
    resolve, and turns kernel evaluation into a row gather.
    """
    global _FRAC_TABLE
    if _FRAC_TABLE is None:
        half = FRAC_DELAY_TAPS // 2
        fracs = np.linspace(-0.5, 0.5, _FRAC_TABLE_STEPS + 1)
        offsets = np.arange(-half, half + 1)[None, :] - fracs[:, None]
        window = 0.5 * (1.0 + np.cos(np.pi * offsets / (half + 0.5)))
        _FRAC_TABLE = np.sinc(offsets) * window
    return _FRAC_TABLE


def _frac_delay_taps(delays_samples: np.ndarray):
    """Windowed-sinc kernels for fractional ``delays_samples``.

    Returns (start_index, kernel) with kernel shape (n, FRAC_DELAY_TAPS);
    the kernel rows are fresh copies (fancy indexing) safe to scale in place.
    """
    half = FRAC_DELAY_TAPS // 2
    rounded = np.round(delays_samples)
    base = rounded.astype(np.int64) - half
    frac_idx = np.round((delays_samples - rounded + 0.5) * _FRAC_TABLE_STEPS).astype(np.int64)
    return base, _frac_table()[frac_idx]


def _place_impulses(h: np.ndarray, delays: np.ndarray, amps: np.ndarray) -> None:
    """Accumulate amplitude-scaled fractional impulses into ``h`` in place."""
    base, kernel = _frac_delay_taps(delays)
    kernel *= amps[:, None]
    idx = base[:, None] + np.arange(FRAC_DELAY_TAPS)[None, :]
    if base.min() >= 0 and base.max() + FRAC_DELAY_TAPS <= h.shape[0]:
        h += np.bincount(idx.ravel(), weights=kernel.ravel(), minlength=h.shape[0])
    else:
        valid = (idx >= 0) & (idx < h.shape[0])
        h += np.bincount(idx[valid], weights=kernel[valid], minlength=h.shape[0])


def direct_path_rir(source_pos, mic_pos, fs: int = 16000,
                    length_s: float | None = None) -> RirKernel:
    """Anechoic response: a single 1/(4 pi d) impulse at d / c per mic."""
    src = np.asarray(source_pos, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mic_pos, dtype=np.float64))
    dists = np.linalg.norm(mics - src[None, :], axis=1)
    if np.any(dists <= 0):
        raise AcousticsError("source and microphone positions coincide")
    delays = dists / SPEED_OF_SOUND * fs
    if length_s is None:
        n = int(np.ceil(delays.max())) + FRAC_DELAY_TAPS
    else:
        n = int(round(length_s * fs))
    out = np.zeros((mics.shape[0], n))
    amps = 1.0 / (4.0 * np.pi * np.maximum(dists, MIN_SPREAD_DIST))
    for m in range(mics.shape[0]):
        _place_impulses(out[m], delays[m:m + 1], amps[m:m + 1])
    return RirKernel(samples=out, sample_rate=fs)


@lru_cache(maxsize=4)
def _image_lattice(orders: tuple, coefficients: tuple):
    """Image grid and per-parity reflection amplitudes for a room shape.

    Both depend only on the reflection orders and wall absorption, not on
    source or microphone positions, so moving-source renders reuse them.
    """
    beta = np.sqrt(1.0 - np.asarray(coefficients, dtype=np.float64))
    ax = [np.arange(-orders[k], orders[k] + 1, dtype=np.int64) for k in range(3)]
    parities = np.array([[px, py, pz] for px in (0, 1) for py in (0, 1) for pz in (0, 1)])
    grid = np.stack(np.meshgrid(ax[0], ax[1], ax[2], indexing="ij"), axis=-1).reshape(-1, 3)
    refl_amps = []
    for p in parities:
        refl_lo = np.abs(grid - p[None, :])  # walls at coordinate 0
        refl_hi = np.abs(grid)  # walls at the room extent
        refl_amps.append(
            beta[0] ** refl_lo[:, 0] * beta[1] ** refl_hi[:, 0]
            * beta[2] ** refl_lo[:, 1] * beta[3] ** refl_hi[:, 1]
            * beta[4] ** refl_lo[:, 2] * beta[5] ** refl_hi[:, 2]
        )
    return grid, parities, refl_amps


def compute_rir(room_dims, absorption: AbsorptionSet, source_pos, mic_pos,
                fs: int = 16000, length_s: float | None = None,
                max_order: int | None = None) -> RirKernel:
    """Image-source impulse response for a shoebox room.

    ``mic_pos`` may be one position (3,) or several (M, 3). The response
    length defaults to direct delay + 1.3x the Eyring decay estimate, and the
    image grid extends exactly far enough that every image able to land in
    that buffer is included (image energy beyond it is below -60 dB by the
    Eyring estimate).
    """
    dims = np.asarray(room_dims, dtype=np.float64)
    src = np.asarray(source_pos, dtype=np.float64)
    mics = np.atleast_2d(np.asarray(mic_pos, dtype=np.float64))
    if np.any(src <= 0) or np.any(src >= dims):
        raise AcousticsError("source must be strictly inside the room")
    for m in mics:
        if np.allclose(m, src):
            raise AcousticsError("source and microphone positions coincide")

    direct = float(np.linalg.norm(mics - src[None, :], axis=1).min())
    if absorption.is_anechoic:
        return direct_path_rir(src, mics, fs, length_s)

    if length_s is None:
        decay = eyring_rt60(absorption, dims)
        length_s = direct / SPEED_OF_SOUND + 1.3 * decay
    n_samples = int(round(length_s * fs)) + FRAC_DELAY_TAPS

    max_dist = (n_samples + FRAC_DELAY_TAPS) / fs * SPEED_OF_SOUND
    if max_order is not None:
        orders = np.full(3, int(max_order), dtype=np.int64)
    else:
        orders = np.ceil(max_dist / (2.0 * dims)).astype(np.int64)

    h = np.zeros((mics.shape[0], n_samples))
    grid, parities, refl_amps = _image_lattice(
        tuple(orders.tolist()), tuple(absorption.coefficients))

    # iterate the n-grid in fixed lexicographic chunks for reproducible sums
    for start in range(0, grid.shape[0], _IMAGE_CHUNK):
        n_chunk = grid[start:start + _IMAGE_CHUNK]
        for pi, p in enumerate(parities):
            pos = (1 - 2 * p)[None, :] * src[None, :] + 2.0 * n_chunk * dims[None, :]
            amp_refl = refl_amps[pi][start:start + _IMAGE_CHUNK]
            for m in range(mics.shape[0]):
                dist = np.linalg.norm(pos - mics[m][None, :], axis=1)
                keep = (dist <= max_dist) & (dist > 0) & (amp_refl > 0)
                if not np.any(keep):
                    continue
                d = dist[keep]
                amps = amp_refl[keep] / (4.0 * np.pi * np.maximum(d, MIN_SPREAD_DIST))
                _place_impulses(h[m], d / SPEED_OF_SOUND * fs, amps)

    return RirKernel(samples=h, sample_rate=fs)


def render_static(mono: AudioBuffer, rir_left, rir_right) -> AudioBuffer:
    """Convolve a mono buffer with left/right RIRs; output keeps the input length."""
    if mono.channels != 1:
        raise AcousticsError("render_static expects a mono buffer")
    kernels = []
    for rir in (rir_left, rir_right):
        if isinstance(rir, RirKernel):
            if rir.sample_rate != mono.sample_rate:
                raise AcousticsError(
                    f"sample-rate mismatch: clip {mono.sample_rate}, rir {rir.sample_rate}"
                )
            kernels.append(rir.channel(0))
        else:
            kernels.append(np.asarray(rir, dtype=np.float64))
    n = mono.n_samples
    out = np.zeros((n, 2))
    for ch, k in enumerate(kernels):
        out[:, ch] = oaconvolve(mono.data, k)[:n]
    return AudioBuffer(out, mono.sample_rate)


def stereo_rir_for(scene, source_pos) -> RirKernel:
    """Both-ear RIR for a scene's mic array at one source position."""
    mics = np.stack([scene.mic_array.left_pos, scene.mic_array.right_pos])
    if scene.anechoic:
        return direct_path_rir(source_pos, mics, scene.sample_rate)
    absorption = rt60_to_absorption(scene.rt60, scene.room_dims)
    return compute_rir(scene.room_dims, absorption, source_pos, mics, fs=scene.sample_rate)


def schroeder_decay_db(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, normalized to 0 at start."""
    energy = np.cumsum(np.square(rir[::-1], dtype=np.float64))[::-1]
    total = energy[0]
    if total <= 0:
        raise AcousticsError("cannot integrate an all-zero impulse response")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.maximum(energy / total, 1e-300))


def _band_rt60(band_rir: np.ndarray, fs: int, fit_db=(-5.0, -35.0)) -> float | None:
    edc = schroeder_decay_db(band_rir)
    onset = int(np.argmax(np.abs(band_rir) > np.max(np.abs(band_rir)) * 0.5))
    edc = edc[onset:] - edc[onset]
    t = np.arange(edc.size) / fs
    mask = (edc <= fit_db[0]) & (edc >= fit_db[1])
    if mask.sum() < 8:
        return None
    slope = np.polyfit(t[mask], edc[mask], 1)[0]
    if slope >= 0:
        return None
    return float(-60.0 / slope)


RT60_BANDS_HZ = ((250, 500), (500, 1000), (1000, 2000), (2000, 4000))


def measure_rt60(rir: np.ndarray, fs: int, bands=RT60_BANDS_HZ) -> float:
    """Decay time to -60 dB from the Schroeder curve.

    The curve slope is regressed over the [-5, -35] dB span in octave bands
    and extrapolated to -60 dB; the band median is returned (raw image-source
    output carries non-physical near-DC energy, so broadband integration
    overestimates the tail).
    """
    from scipy.signal import butter, sosfiltfilt

    x = np.asarray(rir, dtype=np.float64)
    estimates = []
    for f_lo, f_hi in bands:
        sos = butter(4, (f_lo, min(f_hi, 0.49 * fs)), "bandpass", fs=fs, output="sos")
        est = _band_rt60(sosfiltfilt(sos, x), fs)
        if est is not None:
            estimates.append(est)
    if not estimates:
        raise AcousticsError("decay range too short for regression in every band")
    return float(np.median(estimates))
