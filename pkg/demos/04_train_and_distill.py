"""Train a small teacher, distill the student, and compare against scratch.

Uses a deliberately tiny dataset and epoch count so the whole script runs in
about a minute; the real benchmark settings live in the acceptance suite.
"""

from takd import losses as ls
from takd import metrics as mt
from takd import synth
from takd.pipeline import loso_split, renormalize_split
from takd.train import desk_config, distill_student, predict, train_student_scratch, train_teacher

ds = synth.generate_dataset(n_subjects=4, speeds=("SW",), windows_per_trial=6,
                            window=100, seed=1)
train_ds, test_ds = renormalize_split(*loso_split(ds, "04"))
print(f"train windows {train_ds.n_windows()}, held-out subject 04 "
      f"windows {test_ds.n_windows()}")

cfg = desk_config(epochs=10, batch=8, window=100, seed=0,
                  enc_widths=(8, 12, 16, 16), dec_widths=(48, 48, 48, 48))
teacher, rec = train_teacher("c3d", train_ds, cfg)
print(f"\nteacher: loss {rec.train_loss[0]:.4f} -> {rec.train_loss[-1]:.4f} "
      f"in {rec.wall_time_s:.0f}s (best epoch {rec.best_epoch})")

x_te, y_te = test_ds.stack()
rmse_t, _, r_t = mt.regression_metrics(predict(teacher, x_te), y_te)
print(f"teacher held-out: rmse {rmse_t:.4f}, r {r_t:.4f}")

plan = ls.tap_plan_preset("takd-dagger")
student_cfg = desk_config(epochs=10, batch=8, window=100, seed=0)
distilled, rec_d = distill_student(teacher, train_ds, plan, student_cfg)
scratch, rec_s = train_student_scratch(train_ds, student_cfg)

rmse_d, _, r_d = mt.regression_metrics(predict(distilled, x_te), y_te)
rmse_s, _, r_s = mt.regression_metrics(predict(scratch, x_te), y_te)
print(f"\ndistilled student: rmse {rmse_d:.4f}, r {r_d:.4f}")
print(f"scratch student:   rmse {rmse_s:.4f}, r {r_s:.4f}")
print("\n(one tiny seed proves nothing; the acceptance benchmark averages three)")
