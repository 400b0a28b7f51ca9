import numpy as np
import pytest

from takd import pipeline as pl


def full_mask():
    return np.full((16, 8), "full", dtype=object)


def test_fraction_matrix_all_full():
    fm = pl.build_fraction_matrix(full_mask())
    assert np.array_equal(fm.values, np.ones((16, 8), dtype=np.float32))


def test_fraction_matrix_categories():
    mask = full_mask()
    mask[3, 2] = "small_partial"
    mask[0, 0] = "large_partial"
    mask[15, 7] = "absent"
    fm = pl.build_fraction_matrix(mask)
    assert fm.values[3, 2] == np.float32(0.33)
    assert fm.values[0, 0] == np.float32(0.67)
    assert fm.values[15, 7] == 0.0
    assert fm.values[1, 1] == 1.0


def test_fraction_matrix_rejects_unknown_and_all_absent():
    mask = full_mask()
    mask[0, 0] = "sideways"
    with pytest.raises(ValueError, match="unknown cell category"):
        pl.build_fraction_matrix(mask)
    with pytest.raises(ValueError, match="at least one"):
        pl.build_fraction_matrix(np.full((16, 8), "absent", dtype=object))


def test_spatial_filter_identity_zero_checkerboard():
    rng = np.random.default_rng(0)
    video = rng.uniform(size=(2, 7, 16, 8))
    ones = pl.FractionMatrix(np.ones((16, 8)))
    assert np.array_equal(pl.apply_spatial_filter(video, ones), video)

    board = np.indices((16, 8)).sum(axis=0) % 2
    board_m = np.where(board == 1, 1.0, 0.0)
    board_m[0, 0] = 1.0  # keep the at-least-one-1 invariant
    fm = pl.FractionMatrix(board_m)
    got = pl.apply_spatial_filter(video, fm)
    # elementwise oracle
    expect = np.empty_like(video)
    for c in range(2):
        for t in range(7):
            for i in range(16):
                for j in range(8):
                    expect[c, t, i, j] = video[c, t, i, j] * board_m[i, j]
    assert np.allclose(got, expect)


def test_lowpass_dc_gain_unity():
    x = np.full(400, 3.7)
    y = pl.zero_lag_lowpass(x, fs=200.0)
    assert np.max(np.abs(y - 3.7)) < 1e-6


def test_lowpass_stopband_90hz():
    fs = 200.0
    t = np.arange(int(fs * 4)) / fs
    x = np.sin(2 * np.pi * 90.0 * t)
    y = pl.zero_lag_lowpass(x, fs=fs)
    # |H|^2 = 1/(1+(f/fc)^4) per pass => ~1.5e-4 after the two passes
    assert np.max(np.abs(y[50:-50])) < 1e-3


def test_lowpass_cutoff_half_amplitude():
    fs = 200.0
    t = np.arange(int(fs * 6)) / fs
    x = np.sin(2 * np.pi * 10.0 * t)
    y = pl.zero_lag_lowpass(x, fs=fs)
    amp = np.max(np.abs(y[100:-100]))
    assert abs(amp - 0.5) < 0.05


def test_lowpass_zero_phase():
    fs = 200.0
    t = np.arange(int(fs * 5)) / fs
    x = np.sin(2 * np.pi * 1.0 * t)
    y = pl.zero_lag_lowpass(x, fs=fs)
    lags = np.arange(-20, 21)
    scores = [np.dot(x[20:-20], np.roll(y, lag)[20:-20]) for lag in lags]
    assert lags[int(np.argmax(scores))] == 0


def test_lowpass_errors():
    with pytest.raises(ValueError, match="Nyquist"):
        pl.zero_lag_lowpass(np.ones(100), fs=15.0, fc=10.0)
    with pytest.raises(ValueError, match="too short"):
        pl.zero_lag_lowpass(np.ones(5), fs=200.0)


def test_resample_counts_and_constant():
    x = np.full((2, 2000), 2.5)
    y = pl.resample_grf(x)
    assert y.shape == (2, 200)
    assert np.max(np.abs(y - 2.5)) < 1e-6
    with pytest.raises(ValueError, match="empty"):
        pl.resample_grf(np.zeros((2, 0)))


def test_resample_passband_sinusoid():
    fs_in = 2000
    t = np.arange(fs_in * 3) / fs_in
    x = np.stack([np.sin(2 * np.pi * 5.0 * t)] * 2)
    y = pl.resample_grf(x)
    t200 = np.arange(y.shape[1]) / 200.0
    # 5 Hz sits at (5/10)^4 => |H| ~ 0.97 per pass; compare against the analytic signal
    expect = np.sin(2 * np.pi * 5.0 * t200)
    interior = slice(40, -40)
    scale = np.dot(y[0, interior], expect[interior]) / np.dot(expect[interior], expect[interior])
    assert 0.9 < scale < 1.0
    assert np.max(np.abs(y[0, interior] - scale * expect[interior])) < 0.02


def test_resample_truncates_ragged_tail():
    x = np.ones((2, 2013))
    assert pl.resample_grf(x).shape == (2, 201)


def test_normalize_bodyweight_and_unit_range():
    grf_pct = np.array([[0.0, 1.0], [0.5, 1.0]])
    insole = np.array([[0.0, 4.0], [2.0, 4.0]])
    rec = pl.compute_normalization([grf_pct], [insole])
    g01, s01 = pl.apply_normalization(grf_pct, insole, rec)
    assert g01.max() == 1.0 and g01.min() == 0.0
    assert s01.max() == 1.0 and s01.min() == 0.0
    # GRF equal to bodyweight everywhere (pct = 1) with dataset min 0 -> 1.0
    assert np.all(g01[np.asarray(grf_pct) == 1.0] == 1.0)


def test_normalize_roundtrip():
    rng = np.random.default_rng(1)
    grf_pct = rng.uniform(0, 1.3, size=(2, 50))
    insole = rng.uniform(0, 28.0, size=(2, 50, 16, 8))
    rec = pl.compute_normalization([grf_pct], [insole])
    g01, s01 = pl.apply_normalization(grf_pct, insole, rec)
    g, s = pl.invert_normalization(g01, s01, rec)
    assert np.max(np.abs(g - grf_pct)) < 1e-6
    assert np.max(np.abs(s - insole)) < 1e-5


def test_normalize_identical_pct_curves_across_bodyweights():
    curve = np.abs(np.sin(np.linspace(0, 4 * np.pi, 300)))
    heavy = pl.percent_bodyweight(curve * 800.0, 800.0)
    light = pl.percent_bodyweight(curve * 500.0, 500.0)
    assert np.allclose(heavy, light)


def test_normalize_degenerate_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        pl.compute_normalization([np.ones((2, 4))], [np.zeros((2, 4, 16, 8))])


def test_make_windows_counts():
    insole = np.zeros((2, 600, 16, 8))
    grf = np.zeros((2, 600))
    ins_w, grf_w = pl.make_windows(insole, grf, 200)
    assert ins_w.shape == (3, 2, 200, 16, 8)
    assert grf_w.shape == (3, 2, 200)

    grf_long = np.zeros((2, 55_900))
    ins_long = np.zeros((2, 55_900, 16, 8), dtype=np.float32)
    _, g = pl.make_windows(ins_long, grf_long, 100)
    assert g.shape[0] == 559


def test_make_windows_tile_prefix_exactly():
    t = 437
    grf = np.arange(2 * t, dtype=np.float64).reshape(2, t)
    insole = np.zeros((2, t, 16, 8))
    _, g = pl.make_windows(insole, grf, 100)
    assert g.shape[0] == 4
    rebuilt = np.concatenate([g[i] for i in range(4)], axis=1)
    assert np.allclose(rebuilt, grf[:, :400])
    with pytest.raises(ValueError, match="shorter than window"):
        pl.make_windows(insole[:, :50], grf[:, :50], 100)


def _tiny_dataset(n_subjects=3, windows=4, window=100):
    ds = pl.GaitDataset(window=window, subjects=[f"{i:02d}" for i in range(1, n_subjects + 1)],
                        speeds=["SW"])
    rng = np.random.default_rng(7)
    for s in ds.subjects:
        ds.insole[(s, "SW")] = rng.uniform(size=(windows, 2, window, 16, 8)).astype(np.float32)
        ds.grf[(s, "SW")] = rng.uniform(size=(windows, 2, window)).astype(np.float32)
        ds.bodyweights[s] = 600.0
    ds.norm = pl.NormalizationRecord(0.0, 1.3, 0.0, 30.0)
    return ds


def test_loso_partition():
    ds = _tiny_dataset(4)
    train, test = pl.loso_split(ds, "02")
    assert test.subjects == ["02"]
    assert "02" not in train.subjects and len(train.subjects) == 3
    assert set(train.keys()) | set(test.keys()) == set(ds.keys())
    assert not (set(train.keys()) & set(test.keys()))
    assert train.n_windows() + test.n_windows() == ds.n_windows()
    with pytest.raises(ValueError, match="unknown subject"):
        pl.loso_split(ds, "99")


def test_renormalize_split_uses_train_range_only():
    ds = _tiny_dataset(3)
    # make the held-out subject exceed the training range
    ds.grf[("03", "SW")] = ds.grf[("03", "SW")] * np.float32(0.5)
    train, test = pl.loso_split(ds, "03")
    train2, test2 = pl.renormalize_split(train, test)
    tmin = min(float(train2.grf[k].min()) for k in train2.keys())
    tmax = max(float(train2.grf[k].max()) for k in train2.keys())
    assert abs(tmin) < 1e-6 and abs(tmax - 1.0) < 1e-6
    assert train2.norm is not test.norm


def test_dataset_roundtrip(tmp_path):
    ds = _tiny_dataset()
    root = pl.save_dataset(ds, tmp_path / "data")
    back = pl.load_dataset(root)
    assert back.window == ds.window
    assert back.subjects == ds.subjects
    for k in ds.keys():
        assert np.array_equal(back.insole[k], ds.insole[k])
        assert np.array_equal(back.grf[k], ds.grf[k])
    assert back.norm.to_dict() == ds.norm.to_dict()


def test_dataset_truncated_payload_rejected(tmp_path):
    ds = _tiny_dataset()
    root = pl.save_dataset(ds, tmp_path / "data")
    victim = root / "sbj01_SW.grf.f32"
    raw = victim.read_bytes()
    victim.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        pl.load_dataset(root)


def test_dataset_manifest_window_mismatch_rejected(tmp_path):
    import json
    ds = _tiny_dataset()
    root = pl.save_dataset(ds, tmp_path / "data")
    manifest = json.loads((root / "manifest.json").read_text())
    manifest["window"] = ds.window * 2
    (root / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="payload"):
        pl.load_dataset(root)


def test_prepare_dataset_end_to_end():
    rng = np.random.default_rng(3)
    trials = []
    for subject in ("01", "02"):
        t200 = 2 * 100 + 37
        grf_raw = np.abs(rng.normal(600.0, 150.0, size=(2, t200 * 10)))
        insole = rng.uniform(0, 20.0, size=(2, t200, 16, 8))
        trials.append(pl.TrialRecording(subject, "SW", grf_raw, insole, bodyweight=650.0))
    fm = pl.build_fraction_matrix(full_mask())
    ds = pl.prepare_dataset(trials, window=100, fraction=fm)
    assert ds.n_windows() == 4
    for k in ds.keys():
        assert ds.grf[k].min() >= 0.0 and ds.grf[k].max() <= 1.0
        assert ds.insole[k].min() >= 0.0 and ds.insole[k].max() <= 1.0


def test_normalization_idempotent_on_unit_range():
    rng = np.random.default_rng(11)
    grf = rng.uniform(size=(2, 80))
    insole = rng.uniform(size=(2, 80, 16, 8))
    grf[0, 0], grf[1, 1] = 0.0, 1.0          # pin the observed range to [0, 1]
    insole[0, 0, 0, 0], insole[1, 0, 0, 1] = 0.0, 1.0
    rec = pl.compute_normalization([grf], [insole])
    g2, s2 = pl.apply_normalization(grf, insole, rec)
    assert np.max(np.abs(g2 - grf)) < 1e-7
    assert np.max(np.abs(s2 - insole)) < 1e-7


def test_make_windows_floor_sweep():
    for t in (100, 137, 200, 399, 1001):
        for w in (100, 200):
            if t < w:
                continue
            _, g = pl.make_windows(np.zeros((2, t, 16, 8)), np.zeros((2, t)), w)
            assert g.shape[0] == t // w


def test_loso_split_per_speed_counts_on_mirror():
    from takd import synth
    ds = synth.generate_dataset(8, windows_per_trial=1, window=100, seed=6, noise_sigma=0.1)
    train, test = pl.loso_split(ds, "01")
    # subject 01 walks SW and FW only in the mirrored layout
    assert sorted(k[1] for k in test.keys()) == ["FW", "SW"]
    for speed, total in (("SW", 8), ("RW", 6), ("BW", 7), ("FW", 7)):
        n_train = sum(1 for k in train.keys() if k[1] == speed)
        n_test = sum(1 for k in test.keys() if k[1] == speed)
        assert n_train + n_test == total
