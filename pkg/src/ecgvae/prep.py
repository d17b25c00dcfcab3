"""Beat extraction: R-peak detection, segmentation, quality filters, averaging.

The detector follows the classical band-pass / derivative / square /
moving-window-integration recipe with an adaptive threshold and a
refractory period. Beats are 400 samples (200 before and 200 after the R
peak at 500 Hz); the magnitude filter drops near-flat beats and the
correlation filter drops beats that match neither the bulk of the record
nor any single other beat.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import ParameterError, RecordRejected
from .synth import EcgRecord

log = logging.getLogger(__name__)

HALF_WINDOW = 200
DOMINANT_LEAD = 1  # lead II
SEED_PERCENTILE = 30


@dataclass(frozen=True)
class FilterConfig:
    magnitude_threshold_mv: float = 0.05
    corr_mean_threshold: float = 0.5
    corr_max_threshold: float = 0.8
    min_beats: int = 3

    def __post_init__(self):
        if not self.magnitude_threshold_mv >= 0:
            raise ParameterError("magnitude_threshold_mv", "must be >= 0")
        for name in ("corr_mean_threshold", "corr_max_threshold"):
            if not -1 <= getattr(self, name) <= 1:
                raise ParameterError(name, "must lie in [-1, 1]")
        if self.min_beats < 2:
            raise ParameterError("min_beats", "must be >= 2")


@dataclass
class Beat:
    samples: np.ndarray  # (12, 400)
    r_index: int


@dataclass
class MeanBeat:
    samples: np.ndarray  # (12, 400) mV
    rr_mean_ms: float
    rr_std_ms: float
    n_beats_used: int
    patient_id: str
    label: int | None = None
    sex: int = 0
    age: int = 60


def _qrs_energy(lead: np.ndarray, fs: float):
    """Squared slope of the band-passed lead and its 150 ms moving average."""
    b, a = sps.butter(2, [5.0, 25.0], btype="bandpass", fs=fs)
    filtered = sps.filtfilt(b, a, lead)
    energy = np.gradient(filtered) ** 2
    width = max(1, int(round(0.150 * fs)))
    kernel = np.ones(width)
    # average over in-record samples only, so edge complexes are not halved
    support = np.convolve(np.ones_like(energy), kernel, mode="same")
    return energy, np.convolve(energy, kernel, mode="same") / support


def detect_r_peaks(record: EcgRecord, lead: int = DOMINANT_LEAD) -> list[int]:
    """Sample indices of R peaks on ``lead``.

    Candidate maxima of the integrated QRS energy are accepted when they
    exceed 0.4 times the running peak level (median of the last eight
    accepted peak heights, seeded from a low percentile of per-second
    maxima) and lie at least 250 ms after the previous detection. A
    candidate 250-360 ms after a detection whose slope energy is under half
    of that detection's is taken for a T wave and skipped.
    Each detection is moved to the raw-signal maximum within +-40 ms.
    """
    fs = record.fs_hz
    x = np.asarray(record.samples[lead], dtype=float)
    if x.size < fs:
        raise ParameterError("record", "needs at least 1 s of signal")
    if not np.any(x - x.mean()):
        return []
    energy, mwi = _qrs_energy(x, fs)
    if mwi.max() <= 1e-12:
        return []
    refractory = int(round(0.250 * fs))
    smear = int(round(0.075 * fs))
    # zero padding lets maxima at the record edges become candidates
    padded = np.pad(mwi, refractory)
    candidates, props = sps.find_peaks(padded, distance=refractory // 2, height=1e-12)
    candidates = np.clip(candidates - refractory, 0, x.size - 1)
    if candidates.size == 0:
        return []
    heights = props["peak_heights"]
    # seed from a low percentile of per-second maxima and clip updates to
    # [0.5, 2] x the current level, so artefact-laden seconds cannot lift
    # the level above the QRS scale; T waves that a low level would admit
    # are rejected by their slope below
    n_sec = x.size // fs
    seed_level = float(np.percentile(mwi[: n_sec * fs].reshape(n_sec, fs).max(axis=1), SEED_PERCENTILE))
    t_window = int(round(0.360 * fs))

    def slope(c):
        lo, hi = max(0, c - smear), min(x.size, c + smear + 1)
        return float(energy[lo:hi].max())

    level_hist = [seed_level] * 8
    accepted: list[int] = []
    accepted_h: list[float] = []
    for c, h in zip(candidates, heights):
        level = float(np.median(level_hist[-8:]))
        # only part of a complex cut by the record edge is visible
        edge = c < smear or c >= x.size - smear
        if h < (0.2 if edge else 0.4) * level:
            continue
        if accepted and refractory <= c - accepted[-1] < t_window and slope(c) < 0.5 * slope(accepted[-1]):
            continue
        if accepted and c - accepted[-1] < refractory:
            if h > accepted_h[-1]:
                accepted[-1], accepted_h[-1] = int(c), h
                level_hist[-1] = float(np.clip(h, 0.5 * level, 2.0 * level))
            continue
        accepted.append(int(c))
        accepted_h.append(h)
        level_hist.append(float(np.clip(h, 0.5 * level, 2.0 * level)))

    search = int(round(0.040 * fs))
    refined: list[int] = []
    for c in accepted:
        # the integration window blurs the QRS position (most visibly at the
        # record edges); re-centre on the steepest slope before refining
        lo, hi = max(0, c - smear), min(x.size, c + smear + 1)
        c = lo + int(np.argmax(energy[lo:hi]))
        lo, hi = max(0, c - search), min(x.size, c + search + 1)
        p = lo + int(np.argmax(x[lo:hi]))
        if (p == 0 or p == x.size - 1) and not _apex_inside(x, p):
            continue
        if refined and p - refined[-1] < refractory // 2:
            continue
        refined.append(p)
    return refined


def _apex_inside(x, p) -> bool:
    """Whether a maximum found on the first/last sample has its parabolic
    apex inside the record rather than beyond the edge."""
    y = x[:3] if p == 0 else x[-1:-4:-1]
    a = (y[0] - 2 * y[1] + y[2]) / 2
    b = (4 * y[1] - 3 * y[0] - y[2]) / 2
    if a >= 0:
        return False
    return -b / (2 * a) >= -0.5


def segment_beats(record: EcgRecord, peaks) -> list[Beat]:
    """400-sample windows [r-200, r+200) fully inside the record."""
    samples = np.asarray(record.samples)
    n = samples.shape[1]
    out = []
    for r in peaks:
        r = int(r)
        if r - HALF_WINDOW < 0 or r + HALF_WINDOW > n:
            continue
        out.append(Beat(samples[:, r - HALF_WINDOW:r + HALF_WINDOW].copy(), r))
    return out


def magnitude_filter(beats: list[Beat], config: FilterConfig) -> list[Beat]:
    return [b for b in beats if np.mean(np.abs(b.samples)) >= config.magnitude_threshold_mv]


def _beat_correlations(beats: list[Beat]) -> np.ndarray:
    flat = np.stack([b.samples.ravel() for b in beats]).astype(float)
    flat -= flat.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(flat, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = flat / safe[:, None]
    corr = np.clip(unit @ unit.T, -1.0, 1.0)
    # identical beats must reach exactly 1 so a threshold of 1 keeps them
    snap = np.abs(np.abs(corr) - 1.0) < 1e-12
    corr[snap] = np.sign(corr[snap])
    # a constant beat correlates with nothing
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    return corr


def correlation_filter(beats: list[Beat], config: FilterConfig) -> list[Beat]:
    """Drop a beat when both its mean and its maximum Pearson correlation
    with the other beats fall below the configured thresholds."""
    n = len(beats)
    if n < 2:
        return list(beats)
    corr = _beat_correlations(beats)
    off = ~np.eye(n, dtype=bool)
    others = corr[off].reshape(n, n - 1)
    mean_c = others.mean(axis=1)
    max_c = others.max(axis=1)
    drop = (mean_c < config.corr_mean_threshold) & (max_c < config.corr_max_threshold)
    return [b for b, d in zip(beats, drop) if not d]


def average_beats(beats: list[Beat], min_beats: int = 3) -> np.ndarray:
    if len(beats) < min_beats:
        raise RecordRejected(f"only {len(beats)} beats left, need {min_beats}")
    return np.mean(np.stack([b.samples for b in beats]), axis=0)


def _rr_from_intervals(intervals_samples, fs_hz) -> tuple[float, float]:
    iv = np.asarray(intervals_samples, dtype=float) * 1000.0 / fs_hz
    if iv.size < 2:
        raise RecordRejected(f"need at least 2 RR intervals, got {iv.size}")
    return float(iv.mean()), float(iv.std())


def rr_statistics(peaks, fs_hz: float) -> tuple[float, float]:
    """Mean and population std (ms) of successive R-R intervals."""
    peaks = np.asarray(peaks, dtype=float)
    if peaks.size < 3:
        raise RecordRejected(f"need at least 3 peaks, got {peaks.size}")
    return _rr_from_intervals(np.diff(peaks), fs_hz)


def preprocess(record: EcgRecord, config: FilterConfig | None = None) -> MeanBeat:
    """Detect, segment, filter and average one record.

    RR statistics use the intervals between consecutive detections whose
    beats were not rejected by the quality filters; peaks too close to the
    record edge to be segmented still count.
    """
    config = config or FilterConfig()
    peaks = detect_r_peaks(record)
    if len(peaks) < 3:
        raise RecordRejected(f"only {len(peaks)} R peaks detected", record.patient_id)
    beats = segment_beats(record, peaks)
    kept = correlation_filter(magnitude_filter(beats, config), config)
    try:
        mean = average_beats(kept, config.min_beats)
    except RecordRejected as exc:
        raise RecordRejected(exc.reason, record.patient_id) from None
    rejected = {b.r_index for b in beats} - {b.r_index for b in kept}
    intervals = [b - a for a, b in zip(peaks[:-1], peaks[1:]) if a not in rejected and b not in rejected]
    try:
        rr_mean, rr_std = _rr_from_intervals(intervals, record.fs_hz)
    except RecordRejected as exc:
        raise RecordRejected(exc.reason, record.patient_id) from None
    return MeanBeat(mean, rr_mean, rr_std, len(kept), record.patient_id, record.label,
                    record.sex, record.age)


def kept_beats(record: EcgRecord, config: FilterConfig | None = None) -> list[Beat]:
    """Beats that survive both filters (no averaging, no rejection)."""
    config = config or FilterConfig()
    beats = segment_beats(record, detect_r_peaks(record))
    return correlation_filter(magnitude_filter(beats, config), config)


def preprocess_dataset(records, config: FilterConfig | None = None):
    """Preprocess every record; returns (mean_beats, rejection report rows)."""
    out, report = [], []
    for rec in records:
        try:
            out.append(preprocess(rec, config))
        except RecordRejected as exc:
            report.append({"patient_id": rec.patient_id, "reason": exc.reason})
    if report:
        log.info("rejected %d of %d records", len(report), len(records))
    return out, report
