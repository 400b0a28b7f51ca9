"""Programmatic acceptance checks, one per release criterion.

The fast set (structural and oracle checks) runs in well under two minutes;
the full set adds the training-based criteria and the end-to-end command
flow, which train real models and take tens of minutes on one core. Each
criterion prints a single PASS/FAIL line with its measured quantities.
"""

from __future__ import annotations

import shutil
import subprocess
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import losses as ls
from . import metrics as mt
from . import models as mz
from . import pipeline as pl
from . import synth
from . import tensor as tc
from .gradcheck import check_gradients
from .models import FeatureTap
from .tensor import Tensor
from .train import TrainConfig, distill_student, predict, train_student_scratch, train_teacher

# the standard synthetic benchmark for the learning-based criteria
BENCH = dict(n_subjects=6, speeds=("SW", "FW"), windows_per_trial=8, window=100, seed=0)
BENCH_EPOCHS = 60
BENCH_BATCH = 16
BENCH_HELD_OUT = "06"
BENCH_SEEDS = (0, 1, 2)


def _conv3d_loops(x, k, bias, stride, padding):
    b, cin, t, h, w = x.shape
    cout, _, k1, k2, k3 = k.shape
    s1, s2, s3 = stride
    p1, p2, p3 = padding
    to = (t + 2 * p1 - k1) // s1 + 1
    ho = (h + 2 * p2 - k2) // s2 + 1
    wo = (w + 2 * p3 - k3) // s3 + 1
    xp = np.zeros((b, cin, t + 2 * p1, h + 2 * p2, w + 2 * p3))
    xp[:, :, p1:p1 + t, p2:p2 + h, p3:p3 + w] = x
    out = np.zeros((b, cout, to, ho, wo))
    for n in range(b):
        for o in range(cout):
            for it in range(to):
                for ih in range(ho):
                    for iw in range(wo):
                        acc = 0.0
                        for c in range(cin):
                            for a1 in range(k1):
                                for a2 in range(k2):
                                    for a3 in range(k3):
                                        acc += xp[n, c, it * s1 + a1, ih * s2 + a2,
                                                  iw * s3 + a3] * k[o, c, a1, a2, a3]
                        out[n, o, it, ih, iw] = acc + bias[o]
    return out


def _conv1d_loops(x, k, bias, stride, padding):
    b, cin, t = x.shape
    cout, _, kk = k.shape
    to = (t + 2 * padding - kk) // stride + 1
    xp = np.zeros((b, cin, t + 2 * padding))
    xp[:, :, padding:padding + t] = x
    out = np.zeros((b, cout, to))
    for n in range(b):
        for o in range(cout):
            for it in range(to):
                acc = 0.0
                for c in range(cin):
                    for a in range(kk):
                        acc += xp[n, c, it * stride + a] * k[o, c, a]
                out[n, o, it] = acc + bias[o]
    return out


def _rand_tap(rng, shape, name, requires_grad=False, dtype=np.float64):
    return FeatureTap(name, Tensor(rng.normal(size=shape), requires_grad=requires_grad,
                                   dtype=dtype), "bct" if len(shape) == 3 else "bcthw")


def criterion_1_gradient_fidelity(ctx) -> tuple[bool, str]:
    """64-bit central differences (h=1e-4) within 1e-4 relative error, under 2 minutes."""
    t0 = time.time()
    rng = np.random.default_rng(1)
    worst = 0.0

    x = Tensor(rng.normal(size=(2, 2, 5, 6, 4)), requires_grad=True, dtype=np.float64)
    k = Tensor(rng.normal(size=(3, 2, 3, 3, 2)) * 0.4, requires_grad=True, dtype=np.float64)
    b = Tensor(rng.normal(size=3) * 0.1, requires_grad=True, dtype=np.float64)
    tgt = Tensor(np.zeros((2, 3, 5, 2, 3)), dtype=np.float64)
    worst = max(worst, check_gradients(
        lambda: tc.mse(tc.conv3d(x, k, b, (1, 2, 1), (1, 0, 0)), tgt),
        {"x": x, "k": k, "b": b}, rng=rng))

    x1 = Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True, dtype=np.float64)
    k1 = Tensor(rng.normal(size=(4, 3, 3)) * 0.4, requires_grad=True, dtype=np.float64)
    b1 = Tensor(rng.normal(size=4) * 0.1, requires_grad=True, dtype=np.float64)
    tgt1 = Tensor(np.zeros((2, 4, 5)), dtype=np.float64)
    worst = max(worst, check_gradients(
        lambda: tc.mse(tc.conv1d(x1, k1, b1, 2, 1), tgt1), {"x": x1, "k": k1, "b": b1}, rng=rng))

    f = Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=np.float64)
    worst = max(worst, check_gradients(
        lambda: tc.tsum(tc.mul(tc.gram_product(f), tc.gram_product(f))), {"f": f}, rng=rng))

    m = Tensor(rng.normal(size=(4, 4)), requires_grad=True, dtype=np.float64)
    worst = max(worst, check_gradients(
        lambda: tc.tsum(tc.mul(tc.bilinear_resize_map(m, 7), tc.bilinear_resize_map(m, 7))),
        {"m": m}, rng=rng))

    # composite objective with a temporal-size mismatch (exercises the resize path)
    decoded = Tensor(rng.uniform(size=(2, 2, 8)), requires_grad=True, dtype=np.float64)
    target = Tensor(rng.uniform(size=(2, 2, 8)), dtype=np.float64)
    s_vals = {n: Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, dtype=np.float64)
              for n in ("E2", "Mid", "D1")}
    taps_t = {n: _rand_tap(rng, (2, 3, 8), n) for n in ("E2", "Mid", "D1")}

    def objective():
        taps_s = {n: FeatureTap(n, v, "bct") for n, v in s_vals.items()}
        return ls.takd_objective(decoded, target, taps_t, taps_s,
                                 ls.tap_plan_preset("takd-dagger"), ls.LossWeights())

    worst = max(worst, check_gradients(objective, {"decoded": decoded, **s_vals}, rng=rng))

    # the full encoder/decoder forward with a regression loss on a (2,2,8,16,8)
    # batch; seeds chosen so no ReLU kink sits inside the h-sweep of any
    # sampled coordinate (verified: the raw h=1e-4 estimate matches h=1e-5)
    model = mz.build_teacher("c3d", 8, seed=10, enc_widths=(3, 4, 4, 4),
                             dec_widths=(6, 6, 6, 6), dtype=np.float64)
    data_rng = np.random.default_rng(110)
    xin = Tensor(data_rng.uniform(size=(2, 2, 8, 16, 8)), requires_grad=True, dtype=np.float64)
    ytgt = Tensor(data_rng.uniform(size=(2, 2, 8)), dtype=np.float64)

    def full_model_loss():
        out, _ = model.forward(xin, ())
        return tc.mse(out, ytgt)

    wrt = {"input": xin}
    wrt.update(model.params())
    worst = max(worst, check_gradients(full_model_loss, wrt, max_per_tensor=6,
                                       rng=np.random.default_rng(0)))

    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 120.0
    return ok, f"max relative error {worst:.3g} (< 1e-4), runtime {elapsed:.1f}s (< 120s)"


def criterion_2_conv_oracle(ctx) -> tuple[bool, str]:
    """conv3d/conv1d equal brute-force summation on >= 20 random cases within 1e-5."""
    rng = np.random.default_rng(2)
    worst, cases = 0.0, 0
    for _ in range(12):
        b, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        t, h, w = rng.integers(3, 7), rng.integers(4, 9), rng.integers(3, 7)
        k1, k2, k3 = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 3)
        s = tuple(int(v) for v in rng.integers(1, 3, size=3))
        p = tuple(int(v) for v in rng.integers(0, 2, size=3))
        if (t + 2 * p[0] - k1) // s[0] + 1 < 1 or (h + 2 * p[1] - k2) // s[1] + 1 < 1 \
                or (w + 2 * p[2] - k3) // s[2] + 1 < 1:
            continue
        x = rng.normal(size=(b, cin, t, h, w))
        kk = rng.normal(size=(cout, cin, k1, k2, k3))
        bb = rng.normal(size=cout)
        ours = tc.conv3d(Tensor(x, dtype=np.float64), Tensor(kk, dtype=np.float64),
                         Tensor(bb, dtype=np.float64), s, p)
        worst = max(worst, float(np.max(np.abs(ours.data - _conv3d_loops(x, kk, bb, s, p)))))
        cases += 1
    for _ in range(10):
        b, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
        t, k = rng.integers(4, 12), rng.integers(1, 5)
        s, p = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        if (t + 2 * p - k) // s + 1 < 1:
            continue
        x = rng.normal(size=(b, cin, t))
        kk = rng.normal(size=(cout, cin, k))
        bb = rng.normal(size=cout)
        ours = tc.conv1d(Tensor(x, dtype=np.float64), Tensor(kk, dtype=np.float64),
                         Tensor(bb, dtype=np.float64), s, p)
        worst = max(worst, float(np.max(np.abs(ours.data - _conv1d_loops(x, kk, bb, s, p)))))
        cases += 1
    ok = cases >= 20 and worst < 1e-5
    return ok, f"{cases} cases, max deviation {worst:.3g} (< 1e-5)"


def criterion_3_map_algebra(ctx) -> tuple[bool, str]:
    """Symmetry, positive-scale invariance, batch-permutation invariance, zero at identity."""
    rng = np.random.default_rng(3)
    checks = []

    for fn, shape in ((ls.similarity_map, (4, 3, 6)), (ls.temporal_map, (3, 2, 6)),
                      (ls.channel_map, (2, 5, 6))):
        tap = _rand_tap(rng, shape, "Mid", dtype=np.float32)
        g = fn(tap).data
        checks.append(np.max(np.abs(g - g.T)) <= 1e-6 * max(1.0, float(np.abs(g).max())))

    entry_bs = [ls.PlanEntry("Mid", "Mid", ("bs",), "mid")]
    entry_tp = [ls.PlanEntry("Mid", "Mid", ("tp",), "mid")]
    teacher = _rand_tap(rng, (5, 3, 6), "Mid", dtype=np.float32)
    student = _rand_tap(rng, (5, 2, 6), "Mid", dtype=np.float32)

    base_bs = ls.loss_bs({"Mid": teacher}, {"Mid": student}, entry_bs).item()
    base_tp = ls.loss_tp({"Mid": teacher}, {"Mid": student}, entry_tp).item()
    scaled = FeatureTap("Mid", Tensor(student.values.data * 5.0), "bct")
    checks.append(abs(ls.loss_bs({"Mid": teacher}, {"Mid": scaled}, entry_bs).item() - base_bs) <= 1e-6)
    checks.append(abs(ls.loss_tp({"Mid": teacher}, {"Mid": scaled}, entry_tp).item() - base_tp) <= 1e-6)

    perm = rng.permutation(5)
    teacher_p = FeatureTap("Mid", Tensor(teacher.values.data[perm]), "bct")
    student_p = FeatureTap("Mid", Tensor(student.values.data[perm]), "bct")
    checks.append(abs(ls.loss_bs({"Mid": teacher_p}, {"Mid": student_p}, entry_bs).item()
                      - base_bs) <= 1e-6)

    checks.append(ls.loss_bs({"Mid": teacher}, {"Mid": teacher}, entry_bs).item() <= 1e-12)
    checks.append(ls.loss_tp({"Mid": student}, {"Mid": student}, entry_tp).item() <= 1e-12)
    return all(checks), f"{sum(checks)}/{len(checks)} algebra checks hold"


def criterion_4_interpolation(ctx) -> tuple[bool, str]:
    """Temporal matching across t=8 teacher / t=4 student map sizes."""
    rng = np.random.default_rng(4)
    entry = [ls.PlanEntry("Mid", "Mid", ("tp",), "mid")]
    teacher = _rand_tap(rng, (2, 3, 8), "Mid", dtype=np.float32)
    student = _rand_tap(rng, (2, 5, 4), "Mid", dtype=np.float32)
    mismatch = ls.loss_tp({"Mid": teacher}, {"Mid": student}, entry).item()
    well_defined = np.isfinite(mismatch) and mismatch >= 0.0

    same = ls.loss_tp({"Mid": teacher}, {"Mid": teacher}, entry).item()

    tconst = np.broadcast_to(rng.normal(size=(2, 3, 1)), (2, 3, 8)).astype(np.float32).copy()
    sconst = np.broadcast_to(rng.normal(size=(2, 5, 1)), (2, 5, 4)).astype(np.float32).copy()
    const = ls.loss_tp({"Mid": FeatureTap("Mid", Tensor(tconst), "bct")},
                       {"Mid": FeatureTap("Mid", Tensor(sconst), "bct")}, entry).item()

    ident = Tensor(rng.normal(size=(6, 6)).astype(np.float32))
    identity_exact = tc.bilinear_resize_map(ident, 6) is ident

    ok = well_defined and same <= 1e-12 and const <= 1e-9 and identity_exact
    return ok, (f"mismatched-size loss {mismatch:.4g}, identical-taps loss {same:.3g}, "
                f"constant-map loss {const:.3g}, same-size resize is identity: {identity_exact}")


def criterion_5_architecture(ctx) -> tuple[bool, str]:
    """Parameter totals, compression ratios, and exact layer counts."""
    stu, _ = mz.count_params_flops(mz.build_student(100))
    targets = {"c3d": (1.00e6, 25.10), "i3d": (1.18e6, 21.35), "r2p1d": (1.58e6, 15.88)}
    details, ok = [], True
    for kind, (p_target, ratio_target) in targets.items():
        p, _ = mz.count_params_flops(mz.build_teacher(kind, 100))
        ratio = 100.0 * stu / p
        ok &= abs(p - p_target) / p_target < 0.10
        ok &= abs(ratio - ratio_target) < 3.0
        details.append(f"{kind}={p / 1e6:.2f}M ratio={ratio:.2f}%")
    ok &= abs(stu - 0.25e6) / 0.25e6 < 0.10
    ok &= len(mz.build_encoder("c3d").layers) == 4
    ok &= len(mz.build_encoder("i3d").layers) == 8
    ok &= len(mz.build_encoder("r2p1d").layers) == 5
    ok &= len(mz.build_teacher("c3d", 100).decoder.layers) == 4
    disc = mz.build_discriminator(128)
    ok &= len(disc.layers) == 5 and disc.n_relu == 4
    return ok, f"student={stu / 1e6:.3f}M, " + ", ".join(details) + ", layer counts 4/8/5, dec 4, disc 5+4"


def criterion_8_reductions(ctx) -> tuple[bool, str]:
    """Zero-weight distillation is bitwise the scratch run; SP == TaKD with kappa 0."""
    ds = synth.generate_dataset(2, speeds=("SW",), windows_per_trial=3, window=100,
                                seed=11, noise_sigma=0.15)
    cfg = TrainConfig(epochs=2, batch=3, window=100, seed=5, validate=False)
    scratch, rec_s = train_student_scratch(ds, cfg)
    zero_cfg = TrainConfig(epochs=2, batch=3, window=100, seed=5, validate=False,
                           weights=ls.LossWeights(lambda1=0.0, lambda2=0.0))
    teacher = mz.build_teacher("c3d", 100, enc_widths=(4, 6, 8, 8), dec_widths=(8, 8, 8, 8))
    distilled, rec_d = distill_student(teacher, ds, ls.tap_plan_preset("takd-dagger"), zero_cfg)
    bitwise = rec_s.train_loss == rec_d.train_loss and all(
        np.array_equal(p.data, distilled.params()[k].data)
        for k, p in scratch.params().items())

    rng = np.random.default_rng(8)
    decoded = Tensor(rng.uniform(size=(4, 2, 8)).astype(np.float32))
    target = Tensor(rng.uniform(size=(4, 2, 8)).astype(np.float32))
    taps_t = {"Mid": _rand_tap(rng, (4, 3, 8), "Mid", dtype=np.float32)}
    taps_s = {"Mid": _rand_tap(rng, (4, 2, 8), "Mid", dtype=np.float32)}
    sp = ls.takd_objective(decoded, target, taps_t, taps_s, ls.tap_plan_preset("sp"),
                           ls.LossWeights()).item()
    takd0 = ls.takd_objective(decoded, target, taps_t, taps_s, ls.tap_plan_preset("takd"),
                              ls.LossWeights(kappa=0.0)).item()
    ok = bitwise and sp == takd0
    return ok, f"scratch-trajectory bitwise match: {bitwise}, SP == TaKD(kappa=0): {sp == takd0}"


def criterion_9_pipeline(ctx) -> tuple[bool, str]:
    fs = 200.0
    tt = np.arange(int(fs * 4)) / fs
    hi = pl.zero_lag_lowpass(np.sin(2 * np.pi * 90.0 * tt), fs=fs)
    attenuated = float(np.max(np.abs(hi[50:-50])))
    dc = pl.zero_lag_lowpass(np.full(400, 2.5), fs=fs)
    dc_err = float(np.max(np.abs(dc - 2.5)))

    rng = np.random.default_rng(9)
    video = rng.uniform(size=(2, 5, 16, 8))
    weights = np.where(np.indices((16, 8)).sum(axis=0) % 3 == 0, 1.0, 0.33)
    fm = pl.FractionMatrix(np.where(weights == 1.0, 1.0, 0.33))
    got = pl.apply_spatial_filter(video, fm)
    elementwise = float(np.max(np.abs(got - video * fm.values)))

    counts_ok = True
    for t_len, w in ((600, 200), (55_900, 100), (437, 100), (200, 200)):
        _, g = pl.make_windows(np.zeros((2, t_len, 16, 8)), np.zeros((2, t_len)), w)
        counts_ok &= g.shape[0] == t_len // w

    ds = synth.generate_dataset(3, speeds=("SW",), windows_per_trial=2, window=100, seed=12)
    train, test = pl.loso_split(ds, "02")
    partition = (set(train.keys()) | set(test.keys()) == set(ds.keys())
                 and not (set(train.keys()) & set(test.keys()))
                 and train.n_windows() + test.n_windows() == ds.n_windows())

    ok = attenuated < 1e-3 and dc_err < 1e-6 and elementwise == 0.0 and counts_ok and partition
    return ok, (f"90Hz residual {attenuated:.2e} (< 1e-3), DC error {dc_err:.2e}, "
                f"fraction-filter deviation {elementwise}, window counts: {counts_ok}, "
                f"LOSO partition: {partition}")


def criterion_10_metrics(ctx) -> tuple[bool, str]:
    rng = np.random.default_rng(10)
    x = rng.uniform(size=(3, 2, 20))
    rmse, mae, r = mt.regression_metrics(x, x)
    perfect = rmse == 0.0 and mae == 0.0 and abs(r - 1.0) < 1e-12

    ece_zero = float(np.max(mt.ece_regression(x, x)))
    hand = mt.ece_regression(np.array([[[0.1, 0.2, 0.8, 0.9]]]),
                             np.array([[[0.3, 0.3, 0.6, 0.6]]]), bins=2)[0]
    ece_ok = ece_zero == 0.0 and abs(hand - 0.2) < 1e-12

    a = np.array([1.0, 2.0, 3.0])
    t_stat, p = mt.welch_ttest(a, a.copy())
    ident_ok = t_stat == 0.0 and abs(p - 1.0) < 1e-12
    _, p_sep = mt.welch_ttest(a, a + 10.0 + np.array([0.01, -0.01, 0.0]))
    sep_ok = p_sep < 0.01

    ok = perfect and ece_ok and ident_ok and sep_ok
    return ok, (f"perfect-prediction metrics: {perfect}, hand ECE {hand:.3f} (= 0.2), "
                f"identical-sample t/p: {ident_ok}, separated p {p_sep:.2e} (< 0.01)")


# --------------------------------------------------------------------------
# training-based criteria (full level)


def _benchmark(ctx):
    if "bench" not in ctx:
        ds = synth.generate_dataset(**BENCH)
        train_ds, test_ds = pl.loso_split(ds, BENCH_HELD_OUT)
        train_ds, test_ds = pl.renormalize_split(train_ds, test_ds)
        ctx["bench"] = (train_ds, test_ds)
    return ctx["bench"]


def _bench_config(seed=0):
    return TrainConfig(epochs=BENCH_EPOCHS, batch=BENCH_BATCH, window=BENCH["window"],
                       seed=seed, scale_lr_to_batch=True)


def _teacher(ctx):
    if "teacher" not in ctx:
        train_ds, test_ds = _benchmark(ctx)
        model, record = train_teacher("c3d", train_ds, _bench_config(seed=0))
        ctx["teacher"] = (model, record)
    return ctx["teacher"]


def criterion_6_learning(ctx) -> tuple[bool, str]:
    """A c3d teacher on the standard benchmark reaches r > 0.9 with halved loss."""
    train_ds, test_ds = _benchmark(ctx)
    model, record = _teacher(ctx)
    x_te, y_te = test_ds.stack()
    pred = predict(model, x_te)
    _, _, r = mt.regression_metrics(pred, y_te)
    halved = record.train_loss[-1] < 0.5 * record.train_loss[0]
    ok = r > 0.9 and halved
    return ok, (f"held-out Pearson r {r:.4f} (> 0.9), loss {record.train_loss[0]:.4g} -> "
                f"{record.train_loss[-1]:.4g} (halved: {halved})")


def criterion_7_distillation_direction(ctx) -> tuple[bool, str]:
    """Mean TaKD-dagger student RMSE <= mean scratch RMSE over three seeds."""
    train_ds, test_ds = _benchmark(ctx)
    teacher, _ = _teacher(ctx)
    x_te, y_te = test_ds.stack()
    plan = ls.tap_plan_preset("takd-dagger")
    takd_rmse, scratch_rmse = [], []
    for seed in BENCH_SEEDS:
        stu_d, _ = distill_student(teacher, train_ds, plan, _bench_config(seed=seed))
        rmse_d, _, _ = mt.regression_metrics(predict(stu_d, x_te), y_te)
        takd_rmse.append(rmse_d)
        stu_s, _ = train_student_scratch(train_ds, _bench_config(seed=seed))
        rmse_s, _, _ = mt.regression_metrics(predict(stu_s, x_te), y_te)
        scratch_rmse.append(rmse_s)
    mean_d, mean_s = float(np.mean(takd_rmse)), float(np.mean(scratch_rmse))
    inversions = sum(d > s for d, s in zip(takd_rmse, scratch_rmse))
    flag = " [FLAG: ordering inverted on >1 seed, review run]" if inversions > 1 else ""
    ok = mean_d <= mean_s
    pairs = ", ".join(f"{d:.4f}/{s:.4f}" for d, s in zip(takd_rmse, scratch_rmse))
    return ok, (f"mean RMSE distilled {mean_d:.4f} <= scratch {mean_s:.4f}: {ok}; "
                f"per-seed distilled/scratch: {pairs}{flag}")


def criterion_11_cli_smoke(ctx) -> tuple[bool, str]:
    """gen-data -> train-teacher -> distill -> eval twice, identical metrics.csv, < 10 min."""
    t0 = time.time()

    def flow(root: Path) -> bytes:
        data = root / "data"
        runs = {"teacher": root / "teacher", "student": root / "student", "eval": root / "eval"}
        cmds = [
            [sys.executable, "-m", "takd.cli", "gen-data", "--out", str(data),
             "--subjects", "3", "--speeds", "SW,FW", "--windows-per-trial", "4",
             "--window", "100", "--seed", "5"],
            [sys.executable, "-m", "takd.cli", "train-teacher", "--data", str(data),
             "--out", str(runs["teacher"]), "--encoder", "c3d", "--objective", "ae",
             "--strategy", "1", "--seed", "5", "train.epochs=6", "train.batch=8"],
            [sys.executable, "-m", "takd.cli", "distill", "--data", str(data),
             "--teacher", str(runs["teacher"] / "teacher.takd"),
             "--out", str(runs["student"]), "--preset", "takd-dagger", "--seed", "5",
             "train.epochs=4", "train.batch=8"],
            [sys.executable, "-m", "takd.cli", "eval", "--data", str(data),
             "--model", str(runs["student"] / "student.takd"),
             "--out", str(runs["eval"]), "--loso"],
        ]
        for cmd in cmds:
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise RuntimeError(f"{' '.join(cmd[3:5])} failed:\n{proc.stderr[-2000:]}")
        metrics = (runs["eval"] / "metrics.csv").read_bytes()
        if len(metrics.splitlines()) < 2:
            raise RuntimeError("metrics.csv is empty")
        return metrics

    tmp = Path(tempfile.mkdtemp(prefix="takd-smoke-"))
    try:
        first = flow(tmp / "one")
        second = flow(tmp / "two")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    elapsed = time.time() - t0
    identical = first == second
    ok = identical and elapsed < 600.0
    return ok, f"two runs in {elapsed:.0f}s (< 600s), metrics.csv identical: {identical}"


FAST_CRITERIA = [
    (1, "gradient-fidelity", criterion_1_gradient_fidelity),
    (2, "convolution-oracle", criterion_2_conv_oracle),
    (3, "map-algebra", criterion_3_map_algebra),
    (4, "interpolation-contract", criterion_4_interpolation),
    (5, "architecture-accounting", criterion_5_architecture),
    (8, "reductions", criterion_8_reductions),
    (9, "pipeline-oracles", criterion_9_pipeline),
    (10, "metrics-oracles", criterion_10_metrics),
]
FULL_CRITERIA = [
    (6, "learning-works", criterion_6_learning),
    (7, "distillation-direction", criterion_7_distillation_direction),
    (11, "end-to-end-smoke", criterion_11_cli_smoke),
]


def run(level: str = "fast", out=print) -> bool:
    """Run the acceptance criteria; returns True when every one passes."""
    criteria = list(FAST_CRITERIA)
    if level == "full":
        criteria = sorted(criteria + FULL_CRITERIA)
    ctx: dict = {}
    all_ok = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for number, name, fn in criteria:
            try:
                ok, detail = fn(ctx)
            except Exception as err:  # a crashed criterion is a failed criterion
                ok, detail = False, f"raised {type(err).__name__}: {err}"
            all_ok &= ok
            out(f"{'PASS' if ok else 'FAIL'} [{number:>2}] {name}: {detail}")
    return all_ok
