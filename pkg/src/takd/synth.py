"""Synthetic paired insole-video / ground-reaction-force recordings.

Stands in for treadmill data collection: each subject gets a double-bump
vertical-force template (heel-strike and push-off peaks with a mid-stance
valley), anti-phase feet, and an insole renderer that spreads the
instantaneous force over a foot-shaped cell mask with a heel-to-toe
traveling center of pressure, plus sensor noise and drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pipeline import (
    GRID_COLS,
    GRID_ROWS,
    GaitDataset,
    SPEED_MPS,
    STANDARD_SPEEDS,
    TrialRecording,
    build_fraction_matrix,
    prepare_dataset,
)

STANCE_FRACTION = 0.62         # stance/swing duty split per gait cycle
HEEL_PHASE, PUSH_PHASE = 0.28, 0.72
EDGE_RAMP = 0.10               # stance fraction spent ramping force in/out
SENSOR_PMAX = 30.0             # clip ceiling of a pressure cell
RENDER_SCALE = 100.0           # pixel-sum per unit bodyweight force

# (subject_index, speed) trials absent from the mirrored 8-subject collection layout
MISSING_TRIALS = {(1, "RW"), (2, "RW"), (1, "BW"), (4, "FW")}


@dataclass
class SyntheticSubjectProfile:
    """Per-subject gait parameters driving the generator.

    Beyond amplitude and cadence, subjects differ in bump timing, stance
    duty, and the path their center of pressure takes across the insole,
    so leave-one-subject-out evaluation faces genuinely unseen signatures.
    """

    bodyweight: float            # newtons
    cadence_base: float          # steps/min at 1.0 m/s
    cadence_slope: float         # extra steps/min per m/s above 1.0
    heel_peak: float = 1.1       # x bodyweight
    push_peak: float = 1.05
    valley: float = 0.75
    asymmetry: float = 1.0       # right/left amplitude ratio
    noise_sigma: float = 0.0     # pressure units per cell
    drift_rate: float = 0.0      # pressure units per second
    heel_phase: float = HEEL_PHASE       # bump centers as stance fractions
    push_phase: float = PUSH_PHASE
    stance_fraction: float = STANCE_FRACTION
    cop_col: float = 3.5                 # center-of-pressure track
    cop_row_heel: float = 13.5
    cop_row_toe: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.bodyweight <= 0:
            raise ValueError("bodyweight must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be nonnegative")
        if not 0.8 <= self.asymmetry <= 1.2:
            raise ValueError(f"asymmetry {self.asymmetry} outside [0.8, 1.2]")
        if not 0.1 < self.heel_phase < self.push_phase < 0.95:
            raise ValueError("bump phases must satisfy 0.1 < heel < push < 0.95")
        if not 0.4 <= self.stance_fraction <= 0.75:
            raise ValueError("stance fraction outside [0.4, 0.75]")

    def cadence(self, speed_mps: float) -> float:
        return self.cadence_base + self.cadence_slope * (speed_mps - 1.0)


def _smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _stance_template(s: np.ndarray, profile: SyntheticSubjectProfile) -> np.ndarray:
    """Double-bump force curve over stance fraction s in [0, 1], C1 at both ends."""
    peaks = profile.heel_peak + profile.push_peak
    spread = profile.push_phase - profile.heel_phase
    sigma = spread / 2.0 / np.sqrt(2.0 * np.log(peaks / profile.valley))
    bumps = (profile.heel_peak * np.exp(-0.5 * ((s - profile.heel_phase) / sigma) ** 2)
             + profile.push_peak * np.exp(-0.5 * ((s - profile.push_phase) / sigma) ** 2))
    window = _smoothstep(s / EDGE_RAMP) * _smoothstep((1.0 - s) / EDGE_RAMP)
    return bumps * window


def synth_grf_trial(profile: SyntheticSubjectProfile, speed: str,
                    duration_s: float, fs: int = 200) -> np.ndarray:
    """Two-channel periodic stance curve in bodyweight units; feet anti-phase."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    period = 120.0 / profile.cadence(SPEED_MPS[speed])  # one gait cycle = two steps
    if duration_s < 2 * period:
        raise ValueError(f"duration {duration_s}s covers less than two gait cycles ({period:.2f}s each)")
    t = np.arange(round(duration_s * fs)) / fs
    out = np.zeros((2, t.size))
    duty = profile.stance_fraction
    for channel, offset, amp in ((0, 0.0, 1.0), (1, 0.5, profile.asymmetry)):
        phase = (t / period + offset) % 1.0
        in_stance = phase < duty
        s = phase[in_stance] / duty
        out[channel, in_stance] = amp * _stance_template(s, profile)
    return np.clip(out, 0.0, 1.3)


def render_insole_video(grf: np.ndarray, profile: SyntheticSubjectProfile,
                        fs: int = 200, rng: np.random.Generator | None = None) -> np.ndarray:
    """Distribute each frame's force over the foot mask with a traveling center of pressure."""
    grf = np.asarray(grf)
    if grf.ndim != 2 or grf.shape[0] != 2:
        raise ValueError(f"grf must be (2, T), got {grf.shape}")
    t_len = grf.shape[1]
    support = build_fraction_matrix(default_boundary_mask()).values.astype(np.float64)
    inside = support > 0
    rows = np.arange(GRID_ROWS, dtype=np.float64)[:, None]
    cols = np.arange(GRID_COLS, dtype=np.float64)[None, :]
    video = np.zeros((2, t_len, GRID_ROWS, GRID_COLS))

    for channel in range(2):
        for start, stop in _stance_runs(grf[channel]):
            length = stop - start
            for i in range(length):
                s = i / (length - 1) if length > 1 else 0.5
                # heel (bottom rows) to toe (top rows), along the subject's track
                cop_row = profile.cop_row_heel + (profile.cop_row_toe - profile.cop_row_heel) * s
                weights = support * np.exp(-0.5 * (((rows - cop_row) / 2.2) ** 2
                                                   + ((cols - profile.cop_col) / 1.6) ** 2))
                weights /= weights.sum()
                video[channel, start + i] = grf[channel, start + i] * RENDER_SCALE * weights

    if profile.drift_rate != 0.0:
        seconds = np.arange(t_len, dtype=np.float64) / fs
        video += profile.drift_rate * seconds[None, :, None, None] * inside
    if profile.noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(profile.seed)
        video += rng.normal(0.0, profile.noise_sigma, size=video.shape) * inside
    return np.clip(video, 0.0, SENSOR_PMAX)


def _stance_runs(series: np.ndarray, eps: float = 1e-9):
    """Contiguous index runs where the force is nonzero."""
    active = series > eps
    runs = []
    start = None
    for i, a in enumerate(active):
        if a and start is None:
            start = i
        elif not a and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(active)))
    return runs


def default_boundary_mask() -> np.ndarray:
    """Foot-shaped 16x8 cell categories: narrow heel, wide forefoot, absent corners."""
    mask = np.full((GRID_ROWS, GRID_COLS), "absent", dtype=object)
    # per-row (start, stop) column extents of the insole outline
    extents = [(1, 7), (0, 7), (0, 8), (0, 8), (0, 8), (0, 8), (1, 8), (1, 8),
               (1, 7), (1, 7), (2, 7), (2, 7), (2, 7), (2, 7), (2, 6), (3, 6)]
    for i, (a, b) in enumerate(extents):
        mask[i, a:b] = "full"
        mask[i, a] = "large_partial"
        mask[i, b - 1] = "large_partial"
    mask[0, 1] = "small_partial"
    mask[0, 6] = "small_partial"
    mask[15, 3] = "small_partial"
    mask[15, 5] = "small_partial"
    return mask


def subject_profile(seed: int, index: int, noise_sigma: float = 0.25,
                    drift_rate: float = 0.01) -> SyntheticSubjectProfile:
    """Deterministic per-subject parameter draw."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index, 977]))
    return SyntheticSubjectProfile(
        bodyweight=float(rng.uniform(550.0, 760.0)),
        cadence_base=float(rng.uniform(94.0, 120.0)),
        cadence_slope=float(rng.uniform(8.0, 28.0)),
        heel_peak=float(rng.uniform(1.05, 1.15)),
        push_peak=float(rng.uniform(0.98, 1.12)),
        valley=float(rng.uniform(0.70, 0.84)),
        asymmetry=float(rng.uniform(0.86, 1.14)),
        noise_sigma=noise_sigma,
        drift_rate=drift_rate,
        heel_phase=float(rng.uniform(0.24, 0.32)),
        push_phase=float(rng.uniform(0.67, 0.77)),
        stance_fraction=float(rng.uniform(0.58, 0.66)),
        cop_col=float(rng.uniform(3.1, 3.9)),
        cop_row_heel=float(rng.uniform(13.0, 14.0)),
        cop_row_toe=float(rng.uniform(2.0, 3.0)),
        seed=seed * 1009 + index,
    )


def trial_plan(n_subjects: int, speeds, windows_per_trial: int) -> dict:
    """Window counts per (subject, speed) mirroring the collection layout gaps."""
    speeds = tuple(speeds)
    mirror = n_subjects == 8 and set(speeds) == set(STANDARD_SPEEDS)
    plan = {}
    for idx in range(1, n_subjects + 1):
        for speed in speeds:
            if mirror and (idx, speed) in MISSING_TRIALS:
                continue
            plan[(f"{idx:02d}", speed)] = windows_per_trial
    return plan


def _lowfreq_noise(rng: np.random.Generator, n: int, fs: int, sigma: float,
                   knot_hz: float = 20.0) -> np.ndarray:
    """Band-limited measurement noise: white knots interpolated up to fs."""
    n_knots = max(2, int(round(n * knot_hz / fs)) + 1)
    knots = rng.normal(0.0, sigma, n_knots)
    return np.interp(np.arange(n) * (n_knots - 1) / max(1, n - 1), np.arange(n_knots), knots)


def generate_dataset(n_subjects: int, speeds=STANDARD_SPEEDS, windows_per_trial: int = 8,
                     window: int = 100, seed: int = 0, noise_sigma: float = 0.25,
                     drift_rate: float = 0.01, grf_noise_sigma: float = 0.0) -> GaitDataset:
    """Full synthetic collection routed through the preprocessing pipeline.

    grf_noise_sigma adds low-frequency force-plate measurement noise (in
    bodyweight fractions) that survives the 10 Hz pipeline filter, so the
    regression targets carry realistic non-learnable structure.
    """
    if n_subjects < 2:
        raise ValueError("need at least two subjects")
    speeds = tuple(speeds)
    for s in speeds:
        if s not in SPEED_MPS:
            raise ValueError(f"unknown speed {s!r}")
    plan = trial_plan(n_subjects, speeds, windows_per_trial)
    profiles = {f"{i:02d}": subject_profile(seed, i, noise_sigma, drift_rate)
                for i in range(1, n_subjects + 1)}

    trials = []
    for (subject, speed), n_win in sorted(plan.items()):
        profile = profiles[subject]
        # a fractional extra window's worth of samples exercises tail discard
        n200 = n_win * window + round(0.37 * window)
        period = 120.0 / profile.cadence(SPEED_MPS[speed])
        duration = max(n200 / 200.0, 2.0 * period + 0.01)
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, int(subject), list(SPEED_MPS).index(speed)]))
        grf_frac_2k = synth_grf_trial(profile, speed, duration, fs=2000)[:, :n200 * 10]
        grf_frac_200 = synth_grf_trial(profile, speed, duration, fs=200)[:, :n200]
        if grf_noise_sigma > 0.0:
            grf_frac_2k = grf_frac_2k + np.stack(
                [_lowfreq_noise(rng, grf_frac_2k.shape[1], 2000, grf_noise_sigma)
                 for _ in range(2)])
        insole = render_insole_video(grf_frac_200, profile, fs=200, rng=rng)
        trials.append(TrialRecording(
            subject=subject, speed=speed,
            grf=grf_frac_2k * profile.bodyweight,
            insole=insole,
            bodyweight=profile.bodyweight,
        ))

    meta = {
        "generator": "synthetic-gait",
        "n_subjects": n_subjects,
        "speeds": list(speeds),
        "windows_per_trial": windows_per_trial,
        "seed": seed,
        "noise_sigma": noise_sigma,
        "drift_rate": drift_rate,
        "grf_noise_sigma": grf_noise_sigma,
    }
    fraction = build_fraction_matrix(default_boundary_mask())
    return prepare_dataset(trials, window=window, fraction=fraction, meta=meta)
