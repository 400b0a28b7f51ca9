"""The tensor engine and the relational maps the distillation losses compare.

Everything trains through a small reverse-mode tape over numpy arrays:
conv3d/conv1d, the Gram-map products, and corner-aligned bilinear resizing
are all differentiable, and central finite differences vouch for each one.
"""

import numpy as np

from takd import tensor as tc
from takd import losses as ls
from takd.gradcheck import check_gradients
from takd.models import FeatureTap
from takd.tensor import Tensor

# --- a conv3d and its gradient check ---------------------------------------
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(2, 2, 6, 8, 4)), requires_grad=True, dtype=np.float64)
k = Tensor(rng.normal(size=(3, 2, 3, 3, 3)) * 0.3, requires_grad=True, dtype=np.float64)
target = Tensor(np.zeros((2, 3, 6, 3, 2)), dtype=np.float64)

err = check_gradients(lambda: tc.mse(tc.conv3d(x, k, stride=(1, 2, 1), padding=(1, 0, 0)),
                                     target), {"x": x, "k": k})
print(f"conv3d finite-difference check: max relative error {err:.2e}")

# --- similarity vs temporal maps of one feature tap -------------------------
feats = rng.normal(size=(4, 8, 10)).astype(np.float32)  # (batch, channels, time)
tap = FeatureTap("Mid", Tensor(feats), "bct")
g = ls.similarity_map(tap)
p = ls.temporal_map(tap)
print(f"\nsimilarity map {g.shape} (one row per sample), "
      f"temporal map {p.shape} (one row per time step)")
print(f"both symmetric: {np.allclose(g.data, g.data.T)} / {np.allclose(p.data, p.data.T)}")

# scaling features does not move the normalized-map loss
entry = [ls.PlanEntry("Mid", "Mid", ("bs",), "mid")]
other = FeatureTap("Mid", Tensor(rng.normal(size=(4, 3, 10)).astype(np.float32)), "bct")
base = ls.loss_bs({"Mid": other}, {"Mid": tap}, entry).item()
scaled = ls.loss_bs({"Mid": other},
                    {"Mid": FeatureTap("Mid", Tensor(feats * 9.0), "bct")}, entry).item()
print(f"\nsimilarity loss {base:.6f} vs x9-scaled features {scaled:.6f} (invariant)")

# --- the composite objective falls back to plain regression -----------------
decoded = Tensor(rng.uniform(size=(4, 2, 10)).astype(np.float32))
truth = Tensor(rng.uniform(size=(4, 2, 10)).astype(np.float32))
plan = ls.tap_plan_preset("takd-dagger")
w_off = ls.LossWeights(lambda1=0.0, lambda2=0.0)
plain = ls.takd_objective(decoded, truth, {}, {}, plan, w_off).item()
print(f"\nobjective with map weights off equals the regression loss: "
      f"{plain:.6f} == {ls.loss_gt(decoded, truth).item():.6f}")

# --- a teacher map six time steps wide meets a student map three wide -------
teacher_tap = FeatureTap("Mid", Tensor(rng.normal(size=(2, 3, 6)).astype(np.float32)), "bct")
student_tap = FeatureTap("Mid", Tensor(rng.normal(size=(2, 5, 3)).astype(np.float32)), "bct")
tp_entry = [ls.PlanEntry("Mid", "Mid", ("tp",), "mid")]
loss = ls.loss_tp({"Mid": teacher_tap}, {"Mid": student_tap}, tp_entry)
print(f"temporal loss across map sizes 6 vs 3 (student resized up): {loss.item():.5f}")
