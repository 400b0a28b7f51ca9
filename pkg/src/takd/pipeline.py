"""Raw insole/treadmill recordings to normalized, windowed, LOSO-split data.

The chain: spatial fraction-matrix filtering of the 16x8 pressure grid,
zero-lag low-pass filtering + 2000->200 Hz decimation of the force channel,
bodyweight + dataset min-max normalization into [0, 1], non-overlapping
windowing, and leave-one-subject-out splitting. Both feet ride along as two
channels everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt

GRID_ROWS, GRID_COLS = 16, 8
SPEED_MPS = {"SW": 0.88, "RW": 1.0, "BW": 1.25, "FW": 1.5}
STANDARD_SPEEDS = ("SW", "RW", "BW", "FW")
WINDOW_CHOICES = (100, 200)

FRACTION_VALUES = {
    "full": 1.0,
    "large_partial": 0.67,
    "small_partial": 0.33,
    "absent": 0.0,
}

MANIFEST_NAME = "manifest.json"
DATASET_VERSION = 1


@dataclass
class FractionMatrix:
    """Per-pixel effective-area weights for partially covered sensing cells."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != (GRID_ROWS, GRID_COLS):
            raise ValueError(f"fraction matrix must be {GRID_ROWS}x{GRID_COLS}, got {v.shape}")
        allowed = np.array(sorted(FRACTION_VALUES.values()), dtype=np.float32)
        if not np.all(np.isin(v, allowed)):
            raise ValueError("fraction matrix entries must be one of 0, 0.33, 0.67, 1")
        if not np.any(v == 1.0):
            raise ValueError("fraction matrix needs at least one fully covered cell")
        self.values = v


def build_fraction_matrix(boundary_mask) -> FractionMatrix:
    """Map cell categories (full/large_partial/small_partial/absent) to weights."""
    mask = np.asarray(boundary_mask, dtype=object)
    if mask.shape != (GRID_ROWS, GRID_COLS):
        raise ValueError(f"boundary mask must be {GRID_ROWS}x{GRID_COLS}, got {mask.shape}")
    values = np.zeros((GRID_ROWS, GRID_COLS), dtype=np.float32)
    for i in range(GRID_ROWS):
        for j in range(GRID_COLS):
            cat = mask[i, j]
            if cat not in FRACTION_VALUES:
                raise ValueError(f"unknown cell category {cat!r} at ({i},{j})")
            values[i, j] = FRACTION_VALUES[cat]
    return FractionMatrix(values)


def apply_spatial_filter(insole: np.ndarray, fraction: FractionMatrix) -> np.ndarray:
    """Scale every frame elementwise by the fraction matrix."""
    insole = np.asarray(insole)
    if insole.shape[-2:] != (GRID_ROWS, GRID_COLS):
        raise ValueError(f"insole frames must end in {GRID_ROWS}x{GRID_COLS}, got {insole.shape}")
    return insole * fraction.values


def zero_lag_lowpass(series: np.ndarray, fs: float, fc: float = 10.0, order: int = 2) -> np.ndarray:
    """Forward-backward Butterworth low-pass (zero phase).

    Reflection padding of 3*(order+1) samples at each end absorbs the filter
    transient and is trimmed after the two passes.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1:
        raise ValueError("zero_lag_lowpass expects a 1-D series")
    if fc >= fs / 2.0:
        raise ValueError(f"cutoff {fc} Hz must sit below the Nyquist rate {fs / 2} Hz")
    padlen = 3 * (order + 1)
    if len(series) <= padlen:
        raise ValueError(f"series of length {len(series)} is too short for padding {padlen}")
    b, a = butter(order, fc / (fs / 2.0), btype="low")
    return filtfilt(b, a, series, padtype="even", padlen=padlen)


def resample_grf(grf: np.ndarray, fs_in: int = 2000, fs_out: int = 200, fc: float = 10.0) -> np.ndarray:
    """Low-pass then decimate the 2-channel force stream to the insole rate."""
    grf = np.asarray(grf, dtype=np.float64)
    if grf.ndim != 2 or grf.shape[0] != 2:
        raise ValueError(f"grf must be (2, T_raw), got {grf.shape}")
    if grf.shape[1] == 0:
        raise ValueError("empty force stream")
    if fs_in % fs_out != 0:
        raise ValueError(f"{fs_in} Hz is not an integer multiple of {fs_out} Hz")
    factor = fs_in // fs_out
    t_raw = (grf.shape[1] // factor) * factor
    grf = grf[:, :t_raw]
    filtered = np.stack([zero_lag_lowpass(ch, fs_in, fc) for ch in grf])
    return filtered[:, ::factor]


@dataclass
class NormalizationRecord:
    """Min/max constants used for the [0, 1] mapping, kept for inversion."""

    grf_min: float
    grf_max: float
    insole_min: float
    insole_max: float

    def to_dict(self) -> dict:
        return {"grf_min": self.grf_min, "grf_max": self.grf_max,
                "insole_min": self.insole_min, "insole_max": self.insole_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRecord":
        return cls(d["grf_min"], d["grf_max"], d["insole_min"], d["insole_max"])


def percent_bodyweight(grf_newtons: np.ndarray, bodyweight: float) -> np.ndarray:
    if bodyweight <= 0:
        raise ValueError(f"bodyweight must be positive, got {bodyweight}")
    return np.asarray(grf_newtons, dtype=np.float64) / bodyweight


def compute_normalization(grf_streams, insole_streams) -> NormalizationRecord:
    """Dataset-level min/max per variable (force in bodyweight units, raw pressure)."""
    gmin = min(float(np.min(g)) for g in grf_streams)
    gmax = max(float(np.max(g)) for g in grf_streams)
    imin = min(float(np.min(s)) for s in insole_streams)
    imax = max(float(np.max(s)) for s in insole_streams)
    if gmax == gmin or imax == imin:
        raise ValueError("degenerate normalization range (max == min)")
    return NormalizationRecord(gmin, gmax, imin, imax)


def apply_normalization(grf_pct: np.ndarray, insole: np.ndarray,
                        rec: NormalizationRecord) -> tuple[np.ndarray, np.ndarray]:
    g = (np.asarray(grf_pct) - rec.grf_min) / (rec.grf_max - rec.grf_min)
    s = (np.asarray(insole) - rec.insole_min) / (rec.insole_max - rec.insole_min)
    return g.astype(np.float32), s.astype(np.float32)


def invert_normalization(grf01: np.ndarray, insole01: np.ndarray,
                         rec: NormalizationRecord) -> tuple[np.ndarray, np.ndarray]:
    g = np.asarray(grf01, dtype=np.float64) * (rec.grf_max - rec.grf_min) + rec.grf_min
    s = np.asarray(insole01, dtype=np.float64) * (rec.insole_max - rec.insole_min) + rec.insole_min
    return g, s


def make_windows(insole: np.ndarray, grf: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut floor(T/W) aligned non-overlapping windows; the short tail is dropped."""
    insole = np.asarray(insole)
    grf = np.asarray(grf)
    t = grf.shape[1]
    if insole.shape[1] != t:
        raise ValueError(f"insole length {insole.shape[1]} != grf length {t}")
    if t < window:
        raise ValueError(f"stream of length {t} shorter than window {window}")
    n = t // window
    ins = np.stack([insole[:, i * window:(i + 1) * window] for i in range(n)])
    g = np.stack([grf[:, i * window:(i + 1) * window] for i in range(n)])
    return ins.astype(np.float32), g.astype(np.float32)


@dataclass
class TrialRecording:
    """One treadmill walk: raw force at grf_fs, raw pressure video at insole_fs."""

    subject: str
    speed: str
    grf: np.ndarray          # (2, T_raw) newtons
    insole: np.ndarray       # (2, T, 16, 8) raw pressure
    bodyweight: float        # newtons
    grf_fs: int = 2000
    insole_fs: int = 200

    def __post_init__(self):
        if self.speed not in SPEED_MPS:
            raise ValueError(f"unknown speed {self.speed!r}; expected one of {sorted(SPEED_MPS)}")
        if self.bodyweight <= 0:
            raise ValueError("bodyweight must be positive")


@dataclass
class GaitDataset:
    """Windowed, normalized, paired insole/force data keyed by (subject, speed)."""

    window: int
    subjects: list[str]
    speeds: list[str]
    insole: dict = field(default_factory=dict)    # (subject, speed) -> (N, 2, W, 16, 8)
    grf: dict = field(default_factory=dict)       # (subject, speed) -> (N, 2, W)
    bodyweights: dict = field(default_factory=dict)
    norm: NormalizationRecord | None = None
    meta: dict = field(default_factory=dict)

    def keys(self):
        return sorted(self.insole.keys())

    def n_windows(self) -> int:
        return sum(arr.shape[0] for arr in self.grf.values())

    def counts(self) -> dict:
        return {f"{s}_{v}": int(self.grf[(s, v)].shape[0]) for (s, v) in self.keys()}

    def stack(self, subjects=None) -> tuple[np.ndarray, np.ndarray]:
        """Concatenate windows (optionally restricted to some subjects) into two arrays."""
        picked = [k for k in self.keys() if subjects is None or k[0] in subjects]
        if not picked:
            raise ValueError("no windows selected")
        x = np.concatenate([self.insole[k] for k in picked], axis=0)
        y = np.concatenate([self.grf[k] for k in picked], axis=0)
        return x, y

    def subset(self, subjects) -> "GaitDataset":
        subjects = list(subjects)
        keep = [k for k in self.keys() if k[0] in subjects]
        return GaitDataset(
            window=self.window,
            subjects=[s for s in self.subjects if s in subjects],
            speeds=self.speeds,
            insole={k: self.insole[k] for k in keep},
            grf={k: self.grf[k] for k in keep},
            bodyweights={s: self.bodyweights[s] for s in subjects if s in self.bodyweights},
            norm=self.norm,
            meta=self.meta,
        )


def prepare_dataset(trials: list[TrialRecording], window: int,
                    fraction: FractionMatrix, meta: dict | None = None) -> GaitDataset:
    """Run the full preprocessing chain over raw trials."""
    if window not in WINDOW_CHOICES:
        raise ValueError(f"window must be one of {WINDOW_CHOICES}, got {window}")
    grf_streams, insole_streams, prepared = [], [], []
    for tr in trials:
        grf200 = resample_grf(tr.grf, tr.grf_fs, tr.insole_fs)
        grf_pct = percent_bodyweight(grf200, tr.bodyweight)
        filtered = apply_spatial_filter(tr.insole, fraction)
        t = min(grf_pct.shape[1], filtered.shape[1])
        grf_pct, filtered = grf_pct[:, :t], filtered[:, :t]
        grf_streams.append(grf_pct)
        insole_streams.append(filtered)
        prepared.append((tr, grf_pct, filtered))

    rec = compute_normalization(grf_streams, insole_streams)
    ds = GaitDataset(
        window=window,
        subjects=sorted({tr.subject for tr in trials}),
        speeds=sorted({tr.speed for tr in trials}, key=list(SPEED_MPS).index),
        norm=rec,
        meta=meta or {},
    )
    for tr, grf_pct, filtered in prepared:
        g01, s01 = apply_normalization(grf_pct, filtered, rec)
        ins_w, grf_w = make_windows(s01, g01, window)
        ds.insole[(tr.subject, tr.speed)] = ins_w
        ds.grf[(tr.subject, tr.speed)] = grf_w
        ds.bodyweights[tr.subject] = tr.bodyweight
    return ds


def loso_split(dataset: GaitDataset, held_out: str) -> tuple[GaitDataset, GaitDataset]:
    """Leave-one-subject-out partition: (train = everyone else, test = held-out)."""
    if held_out not in dataset.subjects:
        raise ValueError(f"unknown subject {held_out!r}")
    if len(dataset.subjects) < 2:
        raise ValueError("LOSO needs at least two subjects")
    train = dataset.subset([s for s in dataset.subjects if s != held_out])
    test = dataset.subset([held_out])
    return train, test


def renormalize_split(train: GaitDataset, test: GaitDataset) -> tuple[GaitDataset, GaitDataset]:
    """Recompute min-max constants on the training portion only and remap both splits."""
    rec = train.norm
    if rec is None:
        raise ValueError("dataset carries no normalization record")

    def _raw(ds):
        return {k: invert_normalization(ds.grf[k], ds.insole[k], rec) for k in ds.keys()}

    raw_train, raw_test = _raw(train), _raw(test)
    new_rec = compute_normalization([g for g, _ in raw_train.values()],
                                    [s for _, s in raw_train.values()])

    def _remap(ds, raw):
        out = ds.subset(ds.subjects)
        for k, (g, s) in raw.items():
            g01, s01 = apply_normalization(g, s, new_rec)
            out.grf[k] = g01
            out.insole[k] = s01
        out.norm = new_rec
        return out

    return _remap(train, raw_train), _remap(test, raw_test)


# ---------------------------------------------------------------------------
# on-disk dataset format


def save_dataset(dataset: GaitDataset, path) -> Path:
    """Write manifest.json plus per-(subject,speed) float32 little-endian payloads."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": DATASET_VERSION,
        "window": dataset.window,
        "subjects": dataset.subjects,
        "speeds": dataset.speeds,
        "counts": dataset.counts(),
        "normalization": dataset.norm.to_dict() if dataset.norm else None,
        "bodyweights": dataset.bodyweights,
        "generator": dataset.meta,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    for (subject, speed) in dataset.keys():
        base = f"sbj{subject}_{speed}"
        dataset.insole[(subject, speed)].astype("<f4").tofile(root / f"{base}.insole.f32")
        dataset.grf[(subject, speed)].astype("<f4").tofile(root / f"{base}.grf.f32")
    return root


def load_dataset(path) -> GaitDataset:
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed manifest: {err}") from err
    for key in ("version", "window", "subjects", "speeds", "counts"):
        if key not in manifest:
            raise ValueError(f"malformed manifest: missing key {key!r}")
    window = int(manifest["window"])
    ds = GaitDataset(
        window=window,
        subjects=list(manifest["subjects"]),
        speeds=list(manifest["speeds"]),
        bodyweights={k: float(v) for k, v in manifest.get("bodyweights", {}).items()},
        norm=NormalizationRecord.from_dict(manifest["normalization"]) if manifest.get("normalization") else None,
        meta=manifest.get("generator", {}),
    )
    for name, count in manifest["counts"].items():
        subject, speed = name.rsplit("_", 1)
        base = f"sbj{subject}_{speed}"
        ins_path = root / f"{base}.insole.f32"
        grf_path = root / f"{base}.grf.f32"
        ins_expect = count * 2 * window * GRID_ROWS * GRID_COLS
        grf_expect = count * 2 * window
        ins = np.fromfile(ins_path, dtype="<f4")
        grf = np.fromfile(grf_path, dtype="<f4")
        if ins.size != ins_expect:
            raise ValueError(f"{ins_path.name}: payload holds {ins.size} floats, "
                             f"manifest implies {ins_expect}")
        if grf.size != grf_expect:
            raise ValueError(f"{grf_path.name}: payload holds {grf.size} floats, "
                             f"manifest implies {grf_expect}")
        ds.insole[(subject, speed)] = ins.reshape(count, 2, window, GRID_ROWS, GRID_COLS)
        ds.grf[(subject, speed)] = grf.reshape(count, 2, window)
    return ds
