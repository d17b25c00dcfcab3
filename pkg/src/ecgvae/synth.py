"""Synthetic 12-lead ECG records built from Gaussian wave bumps.

Each beat is a sum of five Gaussian bumps (P, Q, R, S, T) placed relative
to the R peak; beats repeat at jittered RR intervals, and white noise plus
a slow sinusoidal baseline wander are added on top. The twelve leads share
one base morphology scaled by fixed per-lead mixing coefficients.

Records with ``label=1`` carry a fixed morphology change (smaller R, wider
S, flatter T) so the label can be recovered from the averaged beat.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, ParameterError

FS_HZ = 500
DURATION_S = 10
N_LEADS = 12
N_SAMPLES = FS_HZ * DURATION_S
WAVES = ("P", "Q", "R", "S", "T")
LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

# lead-II morphology in mV / seconds
BASE_AMPLITUDES = np.array([0.15, -0.12, 1.3, -0.3, 0.4])
BASE_WIDTHS = np.array([0.025, 0.008, 0.012, 0.010, 0.055])
BASE_CENTERS = np.array([-0.17, -0.03, 0.0, 0.03, 0.28])

# rows: leads, columns: P Q R S T
LEAD_MIX = np.array([
    [0.6, 0.5, 0.7, 0.4, 0.6],
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [0.4, 0.6, 0.5, 0.7, 0.4],
    [-0.8, -0.6, -0.8, -0.6, -0.8],
    [0.2, 0.4, 0.3, 0.3, 0.2],
    [0.7, 0.8, 0.75, 0.8, 0.7],
    [0.4, 0.2, 0.3, 2.0, -0.3],
    [0.5, 0.3, 0.6, 2.2, 1.2],
    [0.5, 0.5, 1.0, 1.5, 1.3],
    [0.5, 0.8, 1.5, 1.0, 1.2],
    [0.5, 1.0, 1.4, 0.6, 1.0],
    [0.5, 1.0, 1.1, 0.4, 0.8],
])

# label-1 morphology change
LABEL_R_AMPLITUDE = 0.6
LABEL_S_WIDTH = 1.8
LABEL_T_AMPLITUDE = 0.5

EDGE_MARGIN = 15  # about 2.5 R-wave widths

# log-scale spread of the per-patient P, Q, R, S, T amplitude multipliers
WAVE_MULT_SIGMA = np.array([0.15, 0.15, 0.45, 0.15, 0.45])

CORRUPTION_MODES = ("flatline_beats", "noise_burst", "rhythm_mix")


@dataclass
class SynthParams:
    heart_rate_bpm: float = 60.0
    hr_variability: float = 0.0
    wave_amplitudes: np.ndarray = field(default_factory=lambda: LEAD_MIX * BASE_AMPLITUDES)
    wave_widths: np.ndarray = field(default_factory=lambda: BASE_WIDTHS.copy())
    wave_centers: np.ndarray = field(default_factory=lambda: BASE_CENTERS.copy())
    noise_std: float = 0.0
    baseline_wander_amp: float = 0.0
    label: int = 0
    sex: int = 0
    age: int = 60
    seed: int = 0
    patient_id: str = "P0000"

    def validate(self):
        if not 30 <= self.heart_rate_bpm <= 180:
            raise ParameterError("heart_rate_bpm", f"{self.heart_rate_bpm} outside [30, 180]")
        if not self.hr_variability >= 0:
            raise ParameterError("hr_variability", "must be >= 0")
        amps = np.asarray(self.wave_amplitudes, dtype=float)
        if amps.shape != (N_LEADS, len(WAVES)):
            raise ParameterError("wave_amplitudes", f"shape {amps.shape}, expected (12, 5)")
        if not np.all(np.isfinite(amps)):
            raise ParameterError("wave_amplitudes", "must be finite")
        widths = np.asarray(self.wave_widths, dtype=float)
        if widths.shape != (5,) or not np.all(widths > 0):
            raise ParameterError("wave_widths", "need 5 strictly positive widths")
        centers = np.asarray(self.wave_centers, dtype=float)
        if centers.shape != (5,) or not np.all(np.isfinite(centers)):
            raise ParameterError("wave_centers", "need 5 finite centers")
        if not self.noise_std >= 0:
            raise ParameterError("noise_std", "must be >= 0")
        if not self.baseline_wander_amp >= 0:
            raise ParameterError("baseline_wander_amp", "must be >= 0")
        for name in ("label", "sex"):
            if getattr(self, name) not in (0, 1):
                raise ParameterError(name, "must be 0 or 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed", "must be a 64-bit unsigned integer")


@dataclass
class EcgRecord:
    samples: np.ndarray
    patient_id: str
    label: int | None = None
    sex: int = 0
    age: int = 60
    fs_hz: int = FS_HZ
    true_peak_indices: list[int] | None = None
    corrupted_peak_indices: list[int] | None = None

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.shape != (N_LEADS, self.fs_hz * DURATION_S):
            raise ParameterError("samples", f"shape {s.shape}, expected (12, {self.fs_hz * DURATION_S})")
        if not np.all(np.isfinite(s)):
            raise ParameterError("samples", "contains non-finite values")


def morphology(params: SynthParams):
    """Per-lead amplitudes, widths and centers after the label transform."""
    amps = np.array(params.wave_amplitudes, dtype=float)
    widths = np.array(params.wave_widths, dtype=float)
    if params.label == 1:
        amps[:, 2] *= LABEL_R_AMPLITUDE
        amps[:, 4] *= LABEL_T_AMPLITUDE
        widths[3] *= LABEL_S_WIDTH
    return amps, widths, np.array(params.wave_centers, dtype=float)


def beat_template(params: SynthParams, half_window: int = 200) -> np.ndarray:
    """Noise-free single beat of shape (12, 2*half_window) centred on R."""
    amps, widths, centers = morphology(params)
    n = np.arange(-half_window, half_window) / FS_HZ
    bumps = np.exp(-((n[None, :] - centers[:, None]) ** 2) / (2 * widths[:, None] ** 2))
    return amps @ bumps


def _r_positions(params: SynthParams, rng) -> np.ndarray:
    mean_rr = 60000.0 / params.heart_rate_bpm
    first = rng.uniform(0, mean_rr)
    start = first - 2 * mean_rr
    n_beats = int(np.ceil((DURATION_S * 1000 + 4 * mean_rr) / max(mean_rr - 4 * params.hr_variability, 250))) + 2
    rr = rng.normal(mean_rr, params.hr_variability, size=n_beats) if params.hr_variability > 0 else np.full(n_beats, mean_rr)
    rr = np.clip(rr, 250, 2000)
    times_ms = start + np.concatenate([[0.0], np.cumsum(rr)])
    pos = np.round(times_ms * FS_HZ / 1000).astype(int)
    # an R bump centred on the very edge cannot be told apart from one just
    # outside; keep every centre at least EDGE_MARGIN samples from both edges
    for _ in range(4):
        near = (np.abs(pos) <= EDGE_MARGIN) | (np.abs(pos - (N_SAMPLES - 1)) <= EDGE_MARGIN)
        if not near.any():
            break
        pos = pos + 2 * EDGE_MARGIN + 1
    return pos[pos < N_SAMPLES + 2 * FS_HZ]


def generate_record(params: SynthParams) -> EcgRecord:
    """Render one 10 s record. Bit-identical for identical ``params``."""
    params.validate()
    rng = np.random.default_rng(int(params.seed))
    amps, widths, centers = morphology(params)
    positions = _r_positions(params, rng)

    half = int(0.7 * FS_HZ)
    pad = 2 * FS_HZ
    offs = np.arange(-half, half + 1)
    t = offs / FS_HZ
    bumps = np.exp(-((t[None, :] - centers[:, None]) ** 2) / (2 * widths[:, None] ** 2))
    beat = amps @ bumps
    signal = np.zeros((N_LEADS, N_SAMPLES + 2 * pad))
    for r in positions:
        lo = r + pad - half
        if lo < 0 or lo + offs.size > signal.shape[1]:
            continue
        signal[:, lo:lo + offs.size] += beat
    signal = signal[:, pad:pad + N_SAMPLES]

    if params.noise_std > 0:
        signal += rng.normal(0.0, params.noise_std, size=signal.shape)
    if params.baseline_wander_amp > 0:
        freq = rng.uniform(0.15, 0.35)
        phase = rng.uniform(0, 2 * np.pi, size=(N_LEADS, 1))
        tt = np.arange(N_SAMPLES) / FS_HZ
        signal += params.baseline_wander_amp * np.sin(2 * np.pi * freq * tt[None, :] + phase)

    peaks = [int(p) for p in positions if 0 <= p < N_SAMPLES]
    return EcgRecord(signal, params.patient_id, params.label, params.sex, int(params.age),
                     FS_HZ, true_peak_indices=peaks)


def _patient_demographics(label: int, rng) -> tuple[int, int]:
    # log-odds of a positive label are +0.5 for age > 60 and +0.3 for sex=1
    p_old_neg, p_male_neg = 0.45, 0.55
    p_old = p_old_neg if label == 0 else _shift_prob(p_old_neg, 0.5)
    p_male = p_male_neg if label == 0 else _shift_prob(p_male_neg, 0.3)
    old = rng.random() < p_old
    age = int(rng.integers(61, 86) if old else rng.integers(35, 61))
    sex = int(rng.random() < p_male)
    return sex, age


def _shift_prob(p, log_odds):
    odds = p / (1 - p) * np.exp(log_odds)
    return odds / (1 + odds)


def _patient_params(label: int, rng) -> dict:
    # between-patient spread in gain, wave amplitudes, electrical axis and
    # wave timing dominates the record-level variance; the label change is
    # a smaller, fixed morphology shift on top
    gain = float(np.clip(rng.lognormal(0.0, 0.4), 0.95, 2.4))
    wave_mult = np.clip(np.exp(WAVE_MULT_SIGMA * rng.standard_normal(5)), 0.7, 2.0)
    mix = LEAD_MIX * (1 + 0.35 * rng.standard_normal(LEAD_MIX.shape))
    mix[1] = 1.0  # lead II keeps the reference morphology
    return {
        "amplitudes": mix * (BASE_AMPLITUDES * wave_mult * gain),
        "widths": BASE_WIDTHS * rng.lognormal(0.0, 0.12, size=5),
        "centers": BASE_CENTERS + np.array([0.03, 0.003, 0.0, 0.003, 0.04]) * rng.standard_normal(5),
        "hr": rng.uniform(50, 95),
        "hrv": rng.uniform(10, 50),
        "noise": rng.uniform(0.005, 0.03),
        "wander": rng.uniform(0.02, 0.12),
    }


def generate_dataset(n_patients: int, records_per_patient: int = 1, label_prevalence: float = 0.115,
                     seed: int = 0) -> list[EcgRecord]:
    """Labeled cohort with per-patient morphology and per-record jitter.

    Exactly ``round(n_patients * label_prevalence)`` patients are positive;
    all records of a patient share its label, sex and age.
    """
    if n_patients < 2:
        raise DataError("n_patients must be >= 2 to form grouped splits")
    if records_per_patient < 1:
        raise ParameterError("records_per_patient", "must be >= 1")
    if not 0 < label_prevalence < 1:
        raise ParameterError("label_prevalence", "must lie strictly between 0 and 1")

    root = np.random.SeedSequence(seed)
    label_rng, patient_seq = np.random.default_rng(root.spawn(1)[0]), root.spawn(n_patients)
    n_pos = int(round(n_patients * label_prevalence))
    labels = np.zeros(n_patients, dtype=int)
    labels[label_rng.permutation(n_patients)[:n_pos]] = 1

    records = []
    for i, seq in enumerate(patient_seq):
        rng = np.random.default_rng(seq)
        label = int(labels[i])
        sex, age = _patient_demographics(label, rng)
        base = _patient_params(label, rng)
        pid = f"P{i:04d}"
        for _ in range(records_per_patient):
            params = SynthParams(
                heart_rate_bpm=float(np.clip(base["hr"] + rng.normal(0, 4), 40, 120)),
                hr_variability=base["hrv"],
                wave_amplitudes=base["amplitudes"] * rng.lognormal(0.0, 0.05, size=5),
                wave_widths=base["widths"] * rng.lognormal(0.0, 0.03, size=5),
                wave_centers=base["centers"],
                noise_std=base["noise"],
                baseline_wander_amp=base["wander"],
                label=label,
                sex=sex,
                age=age,
                seed=int(rng.integers(0, 2**63)),
                patient_id=pid,
            )
            records.append(generate_record(params))
    return records


def _beat_windows(peaks, n_samples, half=200):
    """Sample ranges owned by each in-bounds beat.

    A beat owns the part of its 400-sample segment that no neighbouring
    beat's segment covers, so corrupting one beat leaves every other
    segment untouched.
    """
    peaks = np.asarray(sorted(peaks), dtype=int)
    out = []
    for k, r in enumerate(peaks):
        if r - half < 0 or r + half > n_samples:
            continue
        lo = r - half if k == 0 else max(r - half, peaks[k - 1] + half)
        hi = r + half if k == len(peaks) - 1 else min(r + half, peaks[k + 1] - half)
        if hi > lo:
            out.append((int(r), int(lo), int(hi)))
    return out


def corrupt_record(record: EcgRecord, mode: str, fraction: float, seed: int = 0) -> EcgRecord:
    """Inject degenerate beats that the quality filters are meant to reject.

    ``flatline_beats`` zeroes beat windows, ``noise_burst`` replaces them with
    white noise at eight times the record's standard deviation, and
    ``rhythm_mix`` turns every other beat into an inverted, widened beat.
    The R peaks of the altered beats are stored in
    ``corrupted_peak_indices``.
    """
    if mode not in CORRUPTION_MODES:
        raise ParameterError("mode", f"unknown corruption mode {mode!r}")
    if not 0 <= fraction <= 1:
        raise ParameterError("fraction", "must lie in [0, 1]")
    peaks = record.true_peak_indices
    if peaks is None:
        from .prep import detect_r_peaks

        peaks = detect_r_peaks(record)
    samples = np.array(record.samples, dtype=float)
    windows = _beat_windows(peaks, samples.shape[1])
    n = len(windows)
    k = int(round(fraction * n))
    rng = np.random.default_rng(seed)

    if mode == "rhythm_mix":
        chosen = list(range(1, n, 2))[:k]
    else:
        chosen = sorted(rng.choice(n, size=k, replace=False).tolist()) if k else []

    burst_std = 8.0 * float(np.std(record.samples))
    for idx in chosen:
        r, lo, hi = windows[idx]
        if mode == "flatline_beats":
            samples[:, lo:hi] = 0.0
        elif mode == "noise_burst":
            samples[:, lo:hi] = rng.normal(0.0, burst_std, size=(samples.shape[0], hi - lo))
        else:
            pos = np.arange(lo, hi)
            src = r + (pos - r) / 1.3
            orig = np.asarray(record.samples, dtype=float)
            grid = np.arange(orig.shape[1])
            samples[:, lo:hi] = np.stack([-1.2 * np.interp(src, grid, lead) for lead in orig])

    corrupted = sorted(windows[i][0] for i in chosen)
    return replace(record, samples=samples, corrupted_peak_indices=corrupted)
