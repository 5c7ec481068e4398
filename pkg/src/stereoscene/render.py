"""Clip conditioning and scene rendering: activity detection, 10 s crop/pad,
moving sources via grain-wise time-varying RIRs, and multi-source mixing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import oaconvolve

from .acoustics import AcousticsError, RirKernel, render_static, stereo_rir_for
from .audio_io import AudioBuffer
from .rng import SeededRng
from .scene import SceneSpec, SourceSpec

ACTIVITY_WINDOW_S = 0.025
ACTIVITY_HOP_S = 0.010
ACTIVITY_THRESHOLD_DBFS = -40.0
MIN_SEGMENT_S = 1.0
TARGET_CLIP_S = 10.0
MOVING_HOP_S = 0.01
MIX_CEILING_DBFS = -1.0


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class ActivitySegment:
    start: float
    end: float
    peak_dbfs: float

    @property
    def length(self) -> float:
        return self.end - self.start


def detect_activity(mono: AudioBuffer, level_threshold_dbfs: float = ACTIVITY_THRESHOLD_DBFS,
                    min_len_s: float = MIN_SEGMENT_S) -> list[ActivitySegment]:
    """Gated short-time RMS segmentation (25 ms window, 10 ms hop).

    Frames whose RMS is at or above the threshold are merged into segments;
    segments shorter than ``min_len_s`` are discarded.
    """
    if mono.channels != 1:
        raise RenderError("activity detection expects mono input")
    x = np.asarray(mono.data, dtype=np.float64)
    fs = mono.sample_rate
    win = max(1, int(round(ACTIVITY_WINDOW_S * fs)))
    hop = max(1, int(round(ACTIVITY_HOP_S * fs)))
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    n_frames = 1 + (x.size - win) // hop
    threshold_rms = 10.0 ** (level_threshold_dbfs / 20.0)

    starts = np.arange(n_frames) * hop
    sq = np.concatenate([[0.0], np.cumsum(np.square(x))])
    frame_rms = np.sqrt((sq[starts + win] - sq[starts]) / win)
    active = frame_rms >= threshold_rms

    segments = []
    i = 0
    while i < n_frames:
        if not active[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_frames and active[j + 1]:
            j += 1
        start_s = starts[i] / fs
        end_s = min((starts[j] + win) / fs, mono.duration)
        if end_s - start_s >= min_len_s:
            seg = x[starts[i]: starts[j] + win]
            peak = np.max(np.abs(seg))
            peak_dbfs = 20.0 * np.log10(peak) if peak > 0 else -np.inf
            segments.append(ActivitySegment(start=start_s, end=end_s, peak_dbfs=peak_dbfs))
        i = j + 1
    return segments


def crop_pad(mono: AudioBuffer, rng: SeededRng | None = None,
             target_s: float = TARGET_CLIP_S) -> AudioBuffer:
    """Force a clip to exactly ``target_s`` seconds.

    Short clips are zero-padded at the tail (onsets keep their timing). Long
    clips are cropped to a window anchored inside an active segment: the
    window is drawn uniformly inside a segment long enough to contain it or,
    failing that, centered on the longest active segment.
    """
    if mono.n_samples == 0:
        raise RenderError("cannot condition an empty clip")
    fs = mono.sample_rate
    target_n = int(round(target_s * fs))
    x = np.asarray(mono.data, dtype=np.float64)
    if x.shape[0] == target_n:
        return mono
    if x.shape[0] < target_n:
        return AudioBuffer(np.pad(x, (0, target_n - x.shape[0])), fs)

    segments = detect_activity(mono)
    rng = rng or SeededRng(0)
    long_enough = [s for s in segments if s.length * fs >= target_n]
    if long_enough:
        seg = long_enough[int(rng.integers(0, len(long_enough)))]
        lo = int(round(seg.start * fs))
        hi = int(round(seg.end * fs)) - target_n
        start = int(rng.integers(lo, hi + 1))
    elif segments:
        seg = max(segments, key=lambda s: s.length)
        mid = int(round((seg.start + seg.end) / 2.0 * fs))
        start = int(np.clip(mid - target_n // 2, 0, x.shape[0] - target_n))
    else:
        start = int(rng.integers(0, x.shape[0] - target_n + 1))
    return AudioBuffer(x[start:start + target_n], fs)


def _grain_windows(n_grains: int, hop: int) -> np.ndarray:
    """Per-grain windows of length 2*hop with raised-cosine crossfades.

    Interior grains rise over the first hop and fall over the second; the
    first grain starts at 1 and the last ends at 1, so the windows sum to
    exactly 1 everywhere (still trajectories reproduce the static render).
    """
    ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(hop) / hop))
    w = np.ones((n_grains, 2 * hop))
    w[1:, :hop] = ramp
    w[:-1, hop:] = 1.0 - ramp
    return w


def render_moving(mono: AudioBuffer, scene: SceneSpec, source: SourceSpec,
                  hop_s: float = MOVING_HOP_S) -> AudioBuffer:
    """Render a moving or instant source by time-varying convolution.

    The trajectory is sampled every ``hop_s``; the input is cut into
    2*hop grains with raised-cosine crossfades, each convolved with the RIR
    at its trajectory point and overlap-added. Instant sources render as two
    static halves crossfaded over one hop at the jump time. RIRs are cached
    per repeated position, so the constant stretches before/after motion cost
    one RIR each.
    """
    if source.movement == "still":
        rir = stereo_rir_for(scene, np.asarray(source.start_pos))
        return render_static(mono, RirKernel(rir.samples[0:1], rir.sample_rate),
                             RirKernel(rir.samples[1:2], rir.sample_rate))
    if mono.channels != 1:
        raise RenderError("render_moving expects a mono buffer")
    if mono.sample_rate != scene.sample_rate:
        raise AcousticsError(
            f"sample-rate mismatch: clip {mono.sample_rate}, scene {scene.sample_rate}"
        )
    fs = scene.sample_rate
    n = mono.n_samples
    hop = int(round(hop_s * fs))

    if source.movement == "instant":
        return _render_instant(mono, scene, source, hop)

    x = np.asarray(mono.data, dtype=np.float64)
    n_grains = int(np.ceil(n / hop))
    windows = _grain_windows(n_grains, hop)
    out = np.zeros((n, 2))
    cache: dict[tuple, RirKernel] = {}
    for j in range(n_grains):
        pos = source.position_at(j * hop_s)
        key = tuple(np.round(pos, 9))
        rir = cache.get(key)
        if rir is None:
            rir = stereo_rir_for(scene, pos)
            cache[key] = rir
        start = j * hop
        grain = x[start:start + 2 * hop]
        w = windows[j, : grain.shape[0]]
        for ch in range(2):
            seg = oaconvolve(grain * w, rir.samples[ch])
            stop = min(start + seg.shape[0], n)
            out[start:stop, ch] += seg[: stop - start]
    return AudioBuffer(out, fs)


def _render_instant(mono: AudioBuffer, scene: SceneSpec, source: SourceSpec,
                    hop: int) -> AudioBuffer:
    fs = scene.sample_rate
    n = mono.n_samples
    jump = int(np.clip(round(source.instant_time * fs), 0, n))
    rir_a = stereo_rir_for(scene, np.asarray(source.start_pos))
    rir_b = stereo_rir_for(scene, np.asarray(source.end_pos))
    x = np.asarray(mono.data, dtype=np.float64)

    fade = min(hop, jump, n - jump)
    gate_a = np.zeros(n)
    gate_a[:jump] = 1.0
    if fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(fade) / fade))
        gate_a[jump - fade // 2: jump - fade // 2 + fade] = 1.0 - ramp
    gate_b = 1.0 - gate_a

    out = np.zeros((n, 2))
    for ch in range(2):
        out[:, ch] += oaconvolve(x * gate_a, rir_a.samples[ch])[:n]
        out[:, ch] += oaconvolve(x * gate_b, rir_b.samples[ch])[:n]
    return AudioBuffer(out, fs)


def render_source(mono: AudioBuffer, scene: SceneSpec, source: SourceSpec) -> AudioBuffer:
    """Render one source according to its movement mode."""
    return render_moving(mono, scene, source)


@dataclass(frozen=True)
class MixResult:
    audio: AudioBuffer
    gains: tuple[float, ...]


def mix_scene(rendered: list[AudioBuffer]) -> MixResult:
    """Sample-wise sum of the rendered sources.

    Peak-normalizes to -1 dBFS only when the sum would clip; the common gain
    applied to every source is recorded for metadata.
    """
    if not rendered:
        raise RenderError("nothing to mix")
    n = rendered[0].n_samples
    fs = rendered[0].sample_rate
    for buf in rendered[1:]:
        if buf.n_samples != n:
            raise RenderError("mix inputs must share length")
        if buf.sample_rate != fs:
            raise RenderError("mix inputs must share sample rate")
    total = np.zeros((n, 2))
    for buf in rendered:
        data = buf.data if buf.channels == 2 else np.stack([buf.data, buf.data], axis=1)
        total += data
    ceiling = 10.0 ** (MIX_CEILING_DBFS / 20.0)
    peak = float(np.max(np.abs(total))) if total.size else 0.0
    gain = ceiling / peak if peak > ceiling else 1.0
    return MixResult(audio=AudioBuffer(total * gain, fs),
                     gains=tuple([gain] * len(rendered)))
