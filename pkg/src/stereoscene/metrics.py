"""Stereo evaluation: GCC-PHAT TDOA, windowed TDOA series with silence
gating, MAE/MA aggregates, and Frechet distance over pooled embeddings.

Sign convention (fixed): positive TDOA means the left channel lags, i.e. the
source sits toward the right (azimuth < 90 deg).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer

TDOA_WINDOW_S = 0.1
SILENCE_GATE_DBFS = -16.0
MAX_LAG_S = 0.001  # > max physical ITD for an 18 cm pair; rejects room spurs
GCC_INTERP = 16
PHAT_EPS = 1e-12
EMBED_DIM = 2560
_EMBED_LAGS = 64
_EMBED_BANDS = 8
_EMBED_TIME_BUCKETS = 16


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# GCC-PHAT
# ---------------------------------------------------------------------------
def _phat_spectrum(a: np.ndarray, b: np.ndarray, nfft: int) -> np.ndarray:
    fa = np.fft.rfft(a, n=nfft)
    fb = np.fft.rfft(b, n=nfft)
    g = fa * np.conj(fb)
    mag = np.abs(g)
    return g / np.maximum(mag, PHAT_EPS)


def _lag_vector(w: np.ndarray, nfft: int, interp: int, max_shift: int) -> np.ndarray:
    """Cross-correlation sampled at lags -max_shift..max_shift (interp grid)."""
    cc = np.fft.irfft(w, n=nfft * interp)
    return np.concatenate([cc[-max_shift:], cc[: max_shift + 1]])


def gcc_phat_correlation(frame_left, frame_right, fs: int,
                         max_lag_s: float = MAX_LAG_S, interp: int = GCC_INTERP):
    """PHAT-whitened cross-correlation over +-max_lag_s.

    Returns (lags_seconds, correlation). Built symmetrically from both
    channel orders, so swapping the channels reverses the vector exactly.
    """
    a = np.asarray(frame_left, dtype=np.float64)
    b = np.asarray(frame_right, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricError("frames must be equal-length 1-D arrays")
    max_shift = int(round(max_lag_s * fs * interp))
    if a.size * interp < 2 * max_shift:
        raise MetricError("frame too short for the requested lag range")
    if not (np.any(a) or np.any(b)):
        raise MetricError("all-zero frame (gate silence upstream)")
    nfft = 2 * a.size
    v1 = _lag_vector(_phat_spectrum(a, b, nfft), nfft, interp, max_shift)
    v2 = _lag_vector(_phat_spectrum(b, a, nfft), nfft, interp, max_shift)
    cc = 0.5 * (v1 + v2[::-1])
    lags = np.arange(-max_shift, max_shift + 1) / (fs * interp)
    return lags, cc


def gcc_phat(frame_left, frame_right, fs: int, max_lag_s: float = MAX_LAG_S,
             interp: int = GCC_INTERP) -> float:
    """TDOA in seconds via the interpolated GCC-PHAT peak."""
    lags, cc = gcc_phat_correlation(frame_left, frame_right, fs, max_lag_s, interp)
    return float(lags[int(np.argmax(np.abs(cc)))])


# ---------------------------------------------------------------------------
# Windowed series
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class TdoaWindow:
    start_s: float
    tdoa_s: float
    valid: bool


@dataclass(frozen=True)
class TdoaSeries:
    windows: tuple[TdoaWindow, ...]
    window_s: float = TDOA_WINDOW_S

    def valid_values(self) -> np.ndarray:
        return np.array([w.tdoa_s for w in self.windows if w.valid])

    @property
    def n_valid(self) -> int:
        return sum(1 for w in self.windows if w.valid)

    def mean_tdoa_ms(self) -> float | None:
        vals = self.valid_values()
        if vals.size == 0:
            return None
        return float(np.mean(vals) * 1e3)

    def mean_abs_tdoa_ms(self) -> float | None:
        vals = self.valid_values()
        if vals.size == 0:
            return None
        return float(np.mean(np.abs(vals)) * 1e3)


def tdoa_series(stereo: AudioBuffer, window_s: float = TDOA_WINDOW_S,
                gate_dbfs: float = SILENCE_GATE_DBFS, max_lag_s: float = MAX_LAG_S,
                interp: int = GCC_INTERP) -> TdoaSeries:
    """Per-window TDOA with silence gating.

    A window is valid when the louder channel's RMS reaches ``gate_dbfs``;
    only valid windows get a GCC-PHAT estimate.
    """
    if stereo.channels != 2:
        raise MetricError("tdoa_series expects a stereo buffer")
    fs = stereo.sample_rate
    win = int(round(window_s * fs))
    gate_rms = 10.0 ** (gate_dbfs / 20.0)
    left = stereo.channel(0)
    right = stereo.channel(1)
    out = []
    for start in range(0, stereo.n_samples - win + 1, win):
        seg_l = left[start:start + win]
        seg_r = right[start:start + win]
        rms = max(float(np.sqrt(np.mean(seg_l ** 2))), float(np.sqrt(np.mean(seg_r ** 2))))
        if rms >= gate_rms:
            tau = gcc_phat(seg_l, seg_r, fs, max_lag_s, interp)
            out.append(TdoaWindow(start_s=start / fs, tdoa_s=tau, valid=True))
        else:
            out.append(TdoaWindow(start_s=start / fs, tdoa_s=0.0, valid=False))
    return TdoaSeries(windows=tuple(out), window_s=window_s)


# ---------------------------------------------------------------------------
# Set-level aggregates
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PairRow:
    clip_id: str
    gen_mean_ms: float | None
    ref_mean_ms: float | None
    abs_error: float | None


def gcc_mae(generated: dict[str, TdoaSeries], reference: dict[str, TdoaSeries],
            pairing: list[tuple[str, str]] | None = None):
    """Mean absolute difference of per-clip mean TDOA (ms), scaled by 100.

    Returns (score, rows, skipped_ids). A pair lands in ``skipped`` when
    either side has no valid windows.
    """
    if pairing is None:
        pairing = [(k, k) for k in sorted(generated) if k in reference]
    rows, skipped, errors = [], [], []
    for gen_id, ref_id in pairing:
        g = generated[gen_id].mean_tdoa_ms()
        r = reference[ref_id].mean_tdoa_ms()
        if g is None or r is None:
            skipped.append(gen_id)
            rows.append(PairRow(gen_id, g, r, None))
            continue
        err = abs(g - r) * 100.0
        errors.append(err)
        rows.append(PairRow(gen_id, g, r, err))
    if not errors and not skipped:
        raise MetricError("no pairs to score")
    score = float(np.mean(errors)) if errors else float("nan")
    return score, rows, skipped


def gcc_ma(series_set: dict[str, TdoaSeries]):
    """Mean absolute TDOA (ms) over clips, scaled by 100: direction clarity."""
    if not series_set:
        raise MetricError("empty set")
    vals, skipped = [], []
    for clip_id in sorted(series_set):
        m = series_set[clip_id].mean_abs_tdoa_ms()
        if m is None:
            skipped.append(clip_id)
        else:
            vals.append(m)
    score = float(np.mean(vals)) * 100.0 if vals else float("nan")
    return score, skipped


# ---------------------------------------------------------------------------
# Embeddings and Frechet distance
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EmbeddingStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise MetricError("need at least two embeddings for covariance")
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise MetricError("covariance shape mismatch")

    @staticmethod
    def from_embeddings(vectors: np.ndarray) -> "EmbeddingStats":
        x = np.asarray(vectors, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise MetricError("need a (n >= 2, dim) embedding matrix")
        return EmbeddingStats(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False), count=x.shape[0])


def _sym_sqrt_psd(mat: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if np.min(w) < -tol * scale:
        raise MetricError(f"matrix is not PSD (min eigenvalue {np.min(w):.3g})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(stats_a: EmbeddingStats, stats_b: EmbeddingStats) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross term uses the symmetric form sqrt(Sa^(1/2) Sb Sa^(1/2)) with
    eigenvalues clamped at zero.
    """
    if stats_a.mean.size != stats_b.mean.size:
        raise MetricError("embedding dimensions differ")
    a_half = _sym_sqrt_psd(stats_a.cov)
    inner = a_half @ stats_b.cov @ a_half
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    w = np.clip(w, 0.0, None)
    diff = stats_a.mean - stats_b.mean
    val = float(diff @ diff + np.trace(stats_a.cov) + np.trace(stats_b.cov)
                - 2.0 * np.sum(np.sqrt(w)))
    return max(val, 0.0)


def _band_edges(fs: int, n_rfft: int) -> np.ndarray:
    # geometric bands from 50 Hz to Nyquist
    freqs = np.geomspace(50.0, fs / 2.0, _EMBED_BANDS + 1)
    return np.clip(np.round(freqs / (fs / 2.0) * (n_rfft - 1)).astype(int), 1, n_rfft - 1)


def default_embed(stereo: AudioBuffer, window_s: float = TDOA_WINDOW_S,
                  gate_dbfs: float = SILENCE_GATE_DBFS) -> np.ndarray:
    """Deterministic 2560-d stereo embedding.

    Per valid 0.1 s window: the PHAT correlogram sampled at 64 lags spanning
    +-1 ms, plus 8 log band energies per channel. Windows are adaptively
    pooled into 16 time buckets with mean and max: 80 x 16 x 2 = 2560 dims.
    All-silent clips embed to the zero vector.
    """
    if stereo.channels != 2:
        raise MetricError("default_embed expects a stereo buffer")
    fs = stereo.sample_rate
    win = int(round(window_s * fs))
    gate_rms = 10.0 ** (gate_dbfs / 20.0)
    left, right = stereo.channel(0), stereo.channel(1)

    feats = []
    lag_grid = np.linspace(-MAX_LAG_S, MAX_LAG_S, _EMBED_LAGS)
    for start in range(0, stereo.n_samples - win + 1, win):
        seg_l = left[start:start + win]
        seg_r = right[start:start + win]
        rms = max(float(np.sqrt(np.mean(seg_l ** 2))), float(np.sqrt(np.mean(seg_r ** 2))))
        if rms < gate_rms:
            continue
        lags, cc = gcc_phat_correlation(seg_l, seg_r, fs)
        peak = np.max(np.abs(cc))
        corr = np.interp(lag_grid, lags, cc / peak if peak > 0 else cc)
        spec_l = np.abs(np.fft.rfft(seg_l)) ** 2
        spec_r = np.abs(np.fft.rfft(seg_r)) ** 2
        edges = _band_edges(fs, spec_l.size)
        bands_l = [np.log10(np.sum(spec_l[edges[i]:edges[i + 1]]) + 1e-12)
                   for i in range(_EMBED_BANDS)]
        bands_r = [np.log10(np.sum(spec_r[edges[i]:edges[i + 1]]) + 1e-12)
                   for i in range(_EMBED_BANDS)]
        feats.append(np.concatenate([corr, bands_l, bands_r]))

    if not feats:
        return np.zeros(EMBED_DIM)
    mat = np.stack(feats)  # (W, 80)
    n = mat.shape[0]
    pooled_mean, pooled_max = [], []
    for b in range(_EMBED_TIME_BUCKETS):
        lo = (b * n) // _EMBED_TIME_BUCKETS
        hi = max(lo + 1, ((b + 1) * n + _EMBED_TIME_BUCKETS - 1) // _EMBED_TIME_BUCKETS)
        bucket = mat[lo:min(hi, n)]
        pooled_mean.append(bucket.mean(axis=0))
        pooled_max.append(bucket.max(axis=0))
    vec = np.concatenate([np.concatenate(pooled_mean), np.concatenate(pooled_max)])
    assert vec.size == EMBED_DIM
    return vec


def embed_set(buffers: dict[str, AudioBuffer]):
    """Embed every clip; returns (stats, silent_ids)."""
    silent, vectors = [], []
    for clip_id in sorted(buffers):
        vec = default_embed(buffers[clip_id])
        if not np.any(vec):
            silent.append(clip_id)
        vectors.append(vec)
    return EmbeddingStats.from_embeddings(np.stack(vectors)), silent


# ---------------------------------------------------------------------------
# External embeddings (alternate-embedder hook) and reports
# ---------------------------------------------------------------------------
def load_embedding_file(path) -> tuple[np.ndarray, dict]:
    """Float32 binary + JSON sidecar; returns (vector, sidecar_metadata)."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    vec = np.fromfile(path, dtype=np.float32).astype(np.float64)
    shape = sidecar.get("shape")
    if shape and int(np.prod(shape)) != vec.size:
        raise MetricError(f"embedding size {vec.size} does not match sidecar {shape}")
    return vec, sidecar


def load_embedding_dir(directory) -> tuple[dict[str, np.ndarray], dict[str, dict]]:
    directory = Path(directory)
    vectors, sidecars = {}, {}
    for path in sorted(directory.glob("*.bin")):
        vec, meta = load_embedding_file(path)
        vectors[path.stem] = vec
        sidecars[path.stem] = meta
    if not vectors:
        raise MetricError(f"no .bin embeddings found in {directory}")
    return vectors, sidecars


@dataclass
class MetricReport:
    gcc_mae: float
    gcc_ma: float
    fsad: float
    crw_mae: float | None = None
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    by_subset: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gcc_mae": self.gcc_mae,
            "gcc_ma": self.gcc_ma,
            "fsad": self.fsad,
            "crw_mae": self.crw_mae,
            "skipped": list(self.skipped),
            "by_subset": self.by_subset,
            "pairs": [
                {"id": r.clip_id, "gen_mean_ms": r.gen_mean_ms,
                 "ref_mean_ms": r.ref_mean_ms, "abs_error": r.abs_error}
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)
