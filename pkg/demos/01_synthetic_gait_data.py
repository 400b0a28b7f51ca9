"""Generate a small synthetic gait dataset and inspect what the generator produces.

Each subject walks with a double-bump vertical force curve (heel strike,
mid-stance valley, push-off), the feet half a cycle out of phase. The insole
renderer spreads each frame's force over a foot-shaped 16x8 mask with the
center of pressure traveling heel to toe.
"""

import numpy as np

from takd import synth
from takd.pipeline import save_dataset

profile = synth.subject_profile(seed=0, index=1, noise_sigma=0.0, drift_rate=0.0)
print(f"subject profile: bodyweight {profile.bodyweight:.0f} N, "
      f"cadence {profile.cadence(1.0):.0f} steps/min at 1 m/s, "
      f"asymmetry {profile.asymmetry:.3f}")

grf = synth.synth_grf_trial(profile, "RW", duration_s=6.0, fs=200)
print(f"\nforce trial: shape {grf.shape}, peak {grf.max():.3f} x bodyweight")
period = 120.0 / profile.cadence(1.0)
cycles = int(6.0 / period)
support = grf[:, : int(cycles * period * 200)].sum(axis=0).mean()
print(f"mean left+right support over {cycles} cycles: {support:.3f} x bodyweight "
      "(a walker carries ~1.0)")

video = synth.render_insole_video(grf, profile)
sums = video.sum(axis=(2, 3))
active = grf > 1e-9
ratio = sums[active] / grf[active]
print(f"\nrenderer conservation: pixel sum / force = {ratio.mean():.2f} "
      f"(spread {ratio.std():.2e}) for every stance frame")

# a simple ASCII look at one mid-stance frame
frame = video[0, np.argmax(grf[0])]
print("\npeak-force frame (left foot), columns are the 8 sensor columns:")
for row in frame:
    print("  " + "".join(" .:-=+*#@"[min(8, int(v))] for v in row))

ds = synth.generate_dataset(n_subjects=3, speeds=("SW", "FW"), windows_per_trial=4,
                            window=100, seed=0)
print(f"\ndataset: {ds.n_windows()} windows total, counts {ds.counts()}")
out = save_dataset(ds, "/tmp/takd-demo-data")
print(f"written to {out} (manifest.json + per-trial float32 payloads)")
