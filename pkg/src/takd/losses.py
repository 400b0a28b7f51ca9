"""Training objectives: regression loss, map-based distillation, and AE-family terms.

Distillation compares Gram maps of intermediate features between a frozen
teacher and the student. Three reshapes of a tap F give three map kinds:

* similarity ("bs"): rows are samples, G = F F^T is batch x batch;
* temporal ("tp"): rows are time steps, P = F F^T is t x t;
* channel ("ch"): rows are channels, Q = F F^T is c x c.

Maps are Frobenius-normalized before comparison, the student map is
bilinearly resized to the teacher's size when they differ, and the teacher
side never receives gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor
from .models import FeatureTap

MAP_KINDS = ("bs", "tp", "ch")
_TINY = 1e-12


@dataclass(frozen=True)
class PlanEntry:
    teacher: str
    student: str
    kinds: tuple
    group: str  # "mid" or "intermediate"

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("plan entry needs at least one map kind")
        unknown = set(self.kinds) - set(MAP_KINDS)
        if unknown:
            raise ValueError(f"unknown map kinds {sorted(unknown)}")
        if self.group not in ("mid", "intermediate"):
            raise ValueError(f"bad weight group {self.group!r}")


@dataclass
class TapPlan:
    """Which (teacher layer, student layer) pairs transfer which map kinds."""

    entries: list

    def __post_init__(self):
        for e in self.entries:
            expected = "mid" if e.teacher == "Mid" else "intermediate"
            if e.group != expected:
                raise ValueError(f"entry {e.teacher}->{e.student} must carry group {expected!r}")

    def required_taps(self) -> tuple:
        names = {e.teacher for e in self.entries} | {e.student for e in self.entries}
        return tuple(sorted(names))

    def group_entries(self, group: str, kind: str) -> list:
        return [e for e in self.entries if e.group == group and kind in e.kinds]


@dataclass
class LossWeights:
    lambda1: float = 0.01        # middle-representation terms
    lambda2: float = 0.1         # intermediate-layer terms
    kappa: float = 0.1           # temporal/channel relative to similarity
    contrastive: float = 0.1     # cross-modal cosine term
    alpha: float = 1.0           # classic feature-matching baselines
    # classic-KD softmax temperature has no regression analogue; kept but unused
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "kappa", "contrastive", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


_PRESETS = {
    "takd": [("Mid", ("bs", "tp"))],
    "takd_dagger": [("E2", ("bs", "tp")), ("Mid", ("bs", "tp")), ("D1", ("bs", "tp"))],
    "takd_ddagger": [("E1", ("bs",)), ("E2", ("bs", "tp")), ("Mid", ("bs", "tp")),
                     ("D1", ("bs", "tp")), ("D2", ("bs",))],
    "sp": [("Mid", ("bs",))],
    "bs_ch": [("E1", ("bs",)), ("E2", ("bs", "ch")), ("Mid", ("bs", "tp")),
              ("D1", ("bs", "ch")), ("D2", ("bs",))],
}
_PRESET_ALIASES = {
    "takd": "takd", "takd-dagger": "takd_dagger", "takd_dagger": "takd_dagger",
    "takd-ddagger": "takd_ddagger", "takd_ddagger": "takd_ddagger",
    "sp": "sp", "sp_mid": "sp", "bs_ch": "bs_ch", "bs-ch": "bs_ch",
    "bs_ch_variant": "bs_ch",
}


def tap_plan_preset(name: str) -> TapPlan:
    key = _PRESET_ALIASES.get(name.lower())
    if key is None:
        raise ValueError(f"unknown tap plan preset {name!r}")
    entries = [PlanEntry(tap, tap, kinds, "mid" if tap == "Mid" else "intermediate")
               for tap, kinds in _PRESETS[key]]
    return TapPlan(entries)


# ---------------------------------------------------------------------------
# maps


def _as_matrix(tap: FeatureTap, lead_axis: int) -> Tensor:
    """Move one axis to the front and flatten the rest: rows index that axis."""
    v = tap.values
    moved = tc.moveaxis(v, lead_axis, 0) if lead_axis != 0 else v
    rows = moved.shape[0]
    return tc.reshape(moved, (rows, v.size // rows))


def similarity_map(tap: FeatureTap) -> Tensor:
    if tap.values.shape[0] < 2:
        raise ValueError("similarity map needs a mini-batch of at least 2")
    return tc.gram_product(_as_matrix(tap, 0))


def temporal_map(tap: FeatureTap) -> Tensor:
    t_axis = 2
    if tap.values.shape[t_axis] < 2:
        raise ValueError("temporal map needs at least 2 time steps")
    return tc.gram_product(_as_matrix(tap, t_axis))


def channel_map(tap: FeatureTap) -> Tensor:
    if tap.values.shape[1] < 2:
        raise ValueError("channel map needs at least 2 channels")
    return tc.gram_product(_as_matrix(tap, 1))


_MAP_FN = {"bs": similarity_map, "tp": temporal_map, "ch": channel_map}


def _detached(tap: FeatureTap) -> FeatureTap:
    return FeatureTap(tap.name, tap.values.detach(), tap.layout)


def _normalized_diff_sq(map_t: Tensor, map_s: Tensor) -> Tensor | None:
    """||Gt/|Gt| - Gs/|Gs|||_F^2, or None when a map is all zero (skip with warning)."""
    nt = float(np.sqrt(np.sum(map_t.data.astype(np.float64) ** 2)))
    ns = float(np.sqrt(np.sum(map_s.data.astype(np.float64) ** 2)))
    if nt == 0.0 or ns == 0.0:
        warnings.warn("all-zero feature map in distillation; skipping this layer pair",
                      RuntimeWarning, stacklevel=3)
        return None
    diff = tc.sub(tc.div(map_t, tc.frobenius_norm(map_t)),
                  tc.div(map_s, tc.frobenius_norm(map_s)))
    return tc.tsum(tc.mul(diff, diff))


def _zero_scalar(dtype=np.float32) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def loss_bs(teacher_taps: dict, student_taps: dict, entries) -> Tensor:
    """Similarity-map matching, averaged as 1/(b^2 * #pairs)."""
    entries = [e for e in entries if "bs" in e.kinds]
    if not entries:
        return _zero_scalar()
    total = None
    batch = None
    for e in entries:
        g_t = similarity_map(_detached(teacher_taps[e.teacher]))
        g_s = similarity_map(student_taps[e.student])
        batch = g_s.shape[0]
        term = _normalized_diff_sq(g_t, g_s)
        if term is None:
            continue
        total = term if total is None else tc.add(total, term)
    if total is None:
        return _zero_scalar()
    return tc.scale(total, 1.0 / (batch * batch * len(entries)))


def _sized_map_loss(teacher_taps, student_taps, entries, kind: str) -> Tensor:
    """Temporal/channel-map matching: student map resized to the teacher's size,
    normalized after resizing, each pair weighted by 1/size_teacher^2."""
    entries = [e for e in entries if kind in e.kinds]
    if not entries:
        return _zero_scalar()
    total = None
    for e in entries:
        m_t = _MAP_FN[kind](_detached(teacher_taps[e.teacher]))
        m_s = _MAP_FN[kind](student_taps[e.student])
        size_t = m_t.shape[0]
        if m_s.shape[0] != size_t:
            m_s = tc.bilinear_resize_map(m_s, size_t)
        term = _normalized_diff_sq(m_t, m_s)
        if term is None:
            continue
        scaled = tc.scale(term, 1.0 / (size_t * size_t))
        total = scaled if total is None else tc.add(total, scaled)
    if total is None:
        return _zero_scalar()
    return tc.scale(total, 1.0 / len(entries))


def loss_tp(teacher_taps: dict, student_taps: dict, entries) -> Tensor:
    return _sized_map_loss(teacher_taps, student_taps, entries, "tp")


def loss_ch(teacher_taps: dict, student_taps: dict, entries) -> Tensor:
    return _sized_map_loss(teacher_taps, student_taps, entries, "ch")


def loss_gt(decoded: Tensor, target: Tensor) -> Tensor:
    """Regression loss between the decoded series and the measured one."""
    return tc.mse(decoded, target)


def takd_objective(decoded: Tensor, target: Tensor, teacher_taps: dict,
                   student_taps: dict, plan: TapPlan, weights: LossWeights,
                   with_terms: bool = False):
    """L_gt + lambda1*(bs_mid + kappa*(tp_mid|ch_mid)) + lambda2*(bs_int + kappa*(tp_int|ch_int))."""
    total = loss_gt(decoded, target)
    terms = {"L_gt": total.item(), "L_bs_mid": 0.0, "L_tp_mid": 0.0,
             "L_bs_int": 0.0, "L_tp_int": 0.0}
    for group, lam in (("mid", weights.lambda1), ("intermediate", weights.lambda2)):
        if lam == 0.0:
            continue
        entries = [e for e in plan.entries if e.group == group]
        if not entries:
            continue
        suffix = "mid" if group == "mid" else "int"
        group_term = None
        if any("bs" in e.kinds for e in entries):
            bs = loss_bs(teacher_taps, student_taps, entries)
            terms[f"L_bs_{suffix}"] = bs.item()
            group_term = bs
        if weights.kappa != 0.0:
            extra = None
            if any("tp" in e.kinds for e in entries):
                tp = loss_tp(teacher_taps, student_taps, entries)
                terms[f"L_tp_{suffix}"] = tp.item()
                extra = tp
            if any("ch" in e.kinds for e in entries):
                ch = loss_ch(teacher_taps, student_taps, entries)
                terms[f"L_tp_{suffix}"] += ch.item()
                extra = ch if extra is None else tc.add(extra, ch)
            if extra is not None:
                scaled = tc.scale(extra, weights.kappa)
                group_term = scaled if group_term is None else tc.add(group_term, scaled)
        if group_term is not None:
            total = tc.add(total, tc.scale(group_term, lam))
    if with_terms:
        terms["total"] = total.item()
        return total, terms
    return total


# ---------------------------------------------------------------------------
# classic feature-matching baselines


def _resize_like(student: Tensor, teacher_shape: tuple, skip_axes=(0,)) -> Tensor:
    out = student
    for axis, size in enumerate(teacher_shape):
        if axis in skip_axes:
            continue
        if out.shape[axis] != size:
            out = tc.resize_linear(out, axis, size)
    return out


def baseline_kd_mid(teacher_taps: dict, student_taps: dict) -> Tensor:
    """Plain middle-representation matching (student resized along mismatched dims)."""
    t_mid = teacher_taps["Mid"].values.detach()
    s_mid = _resize_like(student_taps["Mid"].values, t_mid.shape)
    return tc.mse(t_mid, s_mid)


def _attention_map(values: Tensor, target_spatial: tuple | None) -> Tensor:
    """Channel-collapsed sum of squares, flattened and L2-normalized per sample."""
    att = tc.tsum(tc.mul(values, values), axis=1)  # (b, t[, h, w])
    if target_spatial is not None and att.shape[1:] != target_spatial:
        for axis, size in enumerate(target_spatial, start=1):
            if att.shape[axis] != size:
                att = tc.resize_linear(att, axis, size)
    b = att.shape[0]
    flat = tc.reshape(att, (b, att.size // b))
    norms = tc.sqrt(tc.add(tc.tsum(tc.mul(flat, flat), axis=(1,)),
                           Tensor(np.full(b, _TINY, dtype=flat.dtype))))
    inv = tc.div(Tensor(np.ones(b, dtype=flat.dtype)), norms)
    return tc.row_scale(flat, inv)


def baseline_at(teacher_taps: dict, student_taps: dict) -> Tensor:
    """Attention transfer on the middle representation."""
    t_vals = teacher_taps["Mid"].values.detach()
    target_spatial = t_vals.shape[2:]
    at_t = _attention_map(t_vals, None)
    at_s = _attention_map(student_taps["Mid"].values, target_spatial)
    return tc.mse(at_t, at_s)


def baseline_losses(kind: str, teacher_taps: dict, student_taps: dict,
                    weights: LossWeights | None = None) -> Tensor:
    if "Mid" not in teacher_taps or "Mid" not in student_taps:
        raise ValueError("baseline losses need Mid taps from both models")
    if kind == "kd":
        return baseline_kd_mid(teacher_taps, student_taps)
    if kind == "at":
        return baseline_at(teacher_taps, student_taps)
    raise ValueError(f"unknown baseline kind {kind!r}")


# ---------------------------------------------------------------------------
# autoencoder-family terms


def vae_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over latent dims, mean over batch."""
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must share a shape")
    b = mu.shape[0]
    per_elem = tc.sub(tc.add(tc.mul(mu, mu), tc.exp(logvar)),
                      tc.add(Tensor(np.ones(mu.shape, dtype=mu.dtype)), logvar))
    return tc.scale(tc.tsum(per_elem), 0.5 / b)


def _safe_probs(chi: Tensor) -> Tensor:
    return tc.clip(chi, 1e-7, 1.0 - 1e-7)


def wae_discriminator_loss(chi_enc: Tensor, chi_prior: Tensor | None = None,
                           literal: bool = False) -> Tensor:
    """Discriminator objective for the two-step adversarial loop.

    Default: prior samples are the real class, encodings the fake one,
    -mean(log chi(z_prior)) - mean(log(1 - chi(h_z))). The literal form drops
    the prior term and returns mean(log(1 - chi(h_z))) as printed, which by
    itself leaves the game without a real-sample anchor.
    """
    enc = _safe_probs(chi_enc)
    if literal or chi_prior is None:
        return tc.mean(tc.log(tc.sub(Tensor(np.ones(enc.shape, dtype=enc.dtype)), enc)))
    prior = _safe_probs(chi_prior)
    term_prior = tc.mean(tc.log(prior))
    term_enc = tc.mean(tc.log(tc.sub(Tensor(np.ones(enc.shape, dtype=enc.dtype)), enc)))
    return tc.scale(tc.add(term_prior, term_enc), -1.0)


def wae_adversarial(chi_enc: Tensor) -> Tensor:
    """Encoder-side term pushing chi(h_z) -> 1 (encodings pass for prior samples)."""
    return tc.scale(tc.mean(tc.log(_safe_probs(chi_enc))), -1.0)


def contrastive_cosine(z_a: Tensor, z_b: Tensor) -> Tensor:
    """Mean over the batch of 1 - cos(flatten(z_a), flatten(z_b))."""
    if z_a.shape[0] != z_b.shape[0]:
        raise ValueError("batch sizes differ")
    b = z_a.shape[0]
    fa = tc.reshape(z_a, (b, z_a.size // b))
    fb = tc.reshape(z_b, (b, z_b.size // b))
    if fa.shape != fb.shape:
        raise ValueError(f"flattened representations differ: {fa.shape} vs {fb.shape}")
    if (np.all(fa.data == 0.0, axis=1) | np.all(fb.data == 0.0, axis=1)).any():
        warnings.warn("zero-norm representation in contrastive loss; its term is 1",
                      RuntimeWarning, stacklevel=2)
    tiny = Tensor(np.full(b, _TINY, dtype=fa.dtype))
    num = tc.tsum(tc.mul(fa, fb), axis=(1,))
    na = tc.sqrt(tc.add(tc.tsum(tc.mul(fa, fa), axis=(1,)), tiny))
    nb = tc.sqrt(tc.add(tc.tsum(tc.mul(fb, fb), axis=(1,)), tiny))
    cos = tc.div(num, tc.mul(na, nb))
    return tc.mean(tc.sub(Tensor(np.ones(b, dtype=cos.dtype)), cos))


def ae_family_losses(kind: str, **operands) -> Tensor:
    """Dispatch for the autoencoder-family terms used by teacher training."""
    if kind == "vae_kl":
        return vae_kl(operands["mu"], operands["logvar"])
    if kind == "wae_disc":
        return wae_discriminator_loss(operands["chi_enc"], operands.get("chi_prior"),
                                      operands.get("literal", False))
    if kind == "wae_gen":
        recon = tc.mse(operands["recon"], operands["target"])
        adv = wae_adversarial(operands["chi_enc"])
        return tc.add(recon, tc.scale(adv, operands.get("adv_weight", 0.1)))
    if kind == "contrastive_cosine":
        return contrastive_cosine(operands["z_a"], operands["z_b"])
    raise ValueError(f"unknown loss kind {kind!r}")
