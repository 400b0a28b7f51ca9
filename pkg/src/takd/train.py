"""Training orchestration: teachers, distilled students, and cross-modal strategies.

Every run derives its randomness from fixed-purpose streams of the config
seed (model init, batch order, prior/eps draws), so a (seed, config, dataset)
triple fully determines the trajectory. Distillation with both map weights
at zero takes the identical arithmetic path as training the student from
scratch, reproducing that trajectory bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import losses as ls
from . import models as mz
from . import tensor as tc
from .optim import Adam
from .pipeline import GaitDataset
from .tensor import Tensor

# fixed-purpose seed-stream keys
_K_BATCH = 101
_K_EPS = 103
_K_PRIOR = 105
_K_DISC_INIT = 109


@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 128
    lr: float | None = None          # resolved per encoder kind when unset
    seed: int = 0
    weights: ls.LossWeights = field(default_factory=ls.LossWeights)
    window: int = 200
    strategy: int = 1
    objective: str = "ae"            # ae | wae | vae
    encoder: str = "c3d"
    enc_widths: tuple | None = None
    dec_widths: tuple | None = None
    wae_adversarial_weight: float = 0.1
    wae_literal_disc: bool = False
    disc_hidden: int = 32
    vae_kl_weight: float = 1.0
    validate: bool = True
    renormalize: bool = True         # recompute min-max on the training subjects per fold
    # the 0.01/0.001 defaults belong to the batch-128 protocol; small desk
    # batches diverge there, so presets scale the rate linearly with batch
    scale_lr_to_batch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 2:
            raise ValueError("batch must be >= 2 (similarity maps need a mini-batch)")
        if self.strategy not in (1, 2, 3):
            raise ValueError(f"unknown strategy {self.strategy}")
        if self.objective not in ("ae", "wae", "vae"):
            raise ValueError(f"unknown teacher objective {self.objective!r}")

    def resolved_lr(self, kind: str | None = None) -> float:
        if self.lr is not None:
            return self.lr
        kind = kind or self.encoder
        base = 0.001 if kind == "r2p1d" else 0.01
        if self.scale_lr_to_batch:
            base *= self.batch / 128.0
        return base

    def echo(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


def desk_config(**overrides) -> TrainConfig:
    """Small-footprint defaults for laptop-scale runs."""
    base = dict(epochs=40, batch=16, window=100, disc_hidden=16, scale_lr_to_batch=True)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class RunRecord:
    config: dict
    seed: int
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    wall_time_s: float = 0.0
    notes: dict = field(default_factory=dict)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(json.dumps({
            "config": self.config,
            "seed": self.seed,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "best_epoch": self.best_epoch,
            "wall_time_s": self.wall_time_s,
            "notes": self.notes,
        }, indent=1, sort_keys=True))
        lines = ["epoch,train_loss,val_loss"]
        for i, tl in enumerate(self.train_loss):
            vl = self.val_loss[i] if i < len(self.val_loss) else ""
            lines.append(f"{i},{tl:.10g},{vl:.10g}" if vl != "" else f"{i},{tl:.10g},")
        (out / "losses.csv").write_text("\n".join(lines) + "\n")
        return out


def _train_val_arrays(dataset: GaitDataset, validate: bool):
    """Hold out the last training subject for checkpoint selection."""
    subjects = dataset.subjects
    if validate and len(subjects) >= 2:
        val_subject = subjects[-1]
        x_tr, y_tr = dataset.stack([s for s in subjects if s != val_subject])
        x_va, y_va = dataset.stack([val_subject])
        return x_tr, y_tr, x_va, y_va, val_subject
    x_tr, y_tr = dataset.stack()
    return x_tr, y_tr, x_tr, y_tr, None


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    out = []
    for i in range(0, n, batch):
        idx = perm[i:i + batch]
        if idx.size >= 2:
            out.append(idx)
    if not out:
        raise ValueError(f"{n} windows cannot form a mini-batch of >= 2")
    return out


def predict(model, x: np.ndarray, batch: int = 32) -> np.ndarray:
    """Batched no-grad forward over an (N, 2, W, 16, 8) array."""
    outs = []
    with tc.no_grad():
        for i in range(0, x.shape[0], batch):
            out, _ = model.forward(Tensor(np.ascontiguousarray(x[i:i + batch])), ())
            outs.append(out.data)
    return np.concatenate(outs, axis=0)


def _val_mse(model, x_va, y_va) -> float:
    pred = predict(model, x_va)
    return float(np.mean((pred - y_va) ** 2))


class _Loop:
    """Shared epoch/batch loop with NaN diagnostics and best-by-validation tracking."""

    def __init__(self, params: dict, config: TrainConfig, lr: float, n_train: int):
        self.opt = Adam(params, lr=lr)
        self.params = params
        self.config = config
        self.batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _K_BATCH]))
        self.n_train = n_train
        self.record = RunRecord(config=config.echo(), seed=config.seed)
        self.best = (float("inf"), None)
        self.step = 0

    def run(self, step_fn, val_fn):
        t0 = time.time()
        for epoch in range(self.config.epochs):
            epoch_loss, seen = 0.0, 0
            for idx in _batches(self.n_train, self.config.batch, self.batch_rng):
                loss_val = step_fn(idx, self.opt)
                if not np.isfinite(loss_val):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch}, step {self.step} "
                        f"(lr={self.opt.lr}, batch={idx.size})")
                epoch_loss += loss_val * idx.size
                seen += idx.size
                self.step += 1
            self.record.train_loss.append(epoch_loss / seen)
            val = val_fn()
            self.record.val_loss.append(val)
            if val < self.best[0]:
                self.best = (val, {k: p.data.copy() for k, p in self.params.items()})
                self.record.best_epoch = epoch
        if self.best[1] is not None:
            for k, p in self.params.items():
                p.data[...] = self.best[1][k]
        self.record.wall_time_s = time.time() - t0
        return self.record


def train_teacher(kind: str, dataset: GaitDataset, config: TrainConfig
                  ) -> tuple[mz.EncoderDecoder, RunRecord]:
    """Minimize the regression loss (plus a KL term for the vae objective)."""
    if dataset.window != config.window:
        raise ValueError(f"dataset window {dataset.window} != config window {config.window}")
    if config.objective == "wae":
        return train_wae_teacher(kind, dataset, config)
    variational = config.objective == "vae"
    model = mz.build_teacher(kind, config.window, seed=config.seed, variational=variational,
                             enc_widths=config.enc_widths, dec_widths=config.dec_widths)
    x_tr, y_tr, x_va, y_va, val_subject = _train_val_arrays(dataset, config.validate)
    params = model.params()
    loop = _Loop(params, config, config.resolved_lr(kind), x_tr.shape[0])
    eps_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _K_EPS]))

    def step(idx, opt):
        opt.zero_grad()
        xb = Tensor(np.ascontiguousarray(x_tr[idx]))
        yb = Tensor(np.ascontiguousarray(y_tr[idx]))
        if variational:
            zshape = model.encoder.out_shape(xb.shape)
            eps = Tensor(eps_rng.standard_normal(zshape).astype(np.float32))
            out, _, mu, logvar = model.forward_variational(xb, eps, ())
            loss = tc.add(tc.mse(out, yb),
                          tc.scale(ls.vae_kl(mu, logvar), config.vae_kl_weight))
        else:
            out, _ = model.forward(xb, ())
            loss = tc.mse(out, yb)
        tc.backward(loss)
        opt.step()
        return loss.item()

    record = loop.run(step, lambda: _val_mse(model, x_va, y_va))
    record.notes.update({"kind": kind, "objective": config.objective,
                         "val_subject": val_subject})
    return model, record


def train_wae_teacher(kind: str, dataset: GaitDataset, config: TrainConfig
                      ) -> tuple[mz.EncoderDecoder, RunRecord]:
    """Two alternating steps per batch: update the discriminator on frozen
    encodings vs prior samples, then update encoder/decoder on reconstruction
    plus the adversarial term."""
    if config.wae_adversarial_weight == 0.0:
        # no adversarial pressure: the encoder/decoder trajectory is plain teacher training
        from dataclasses import replace
        model, record = train_teacher(kind, dataset, replace(config, objective="ae"))
        record.notes["objective"] = "wae"
        record.notes["reduction"] = "adversarial weight 0; trained as plain teacher"
        return model, record

    model = mz.build_teacher(kind, config.window, seed=config.seed,
                             enc_widths=config.enc_widths, dec_widths=config.dec_widths)
    x_tr, y_tr, x_va, y_va, val_subject = _train_val_arrays(dataset, config.validate)
    mid_len = model.encoder.mid_channels(config.window) * config.window
    disc = mz.build_discriminator(mid_len, hidden=config.disc_hidden,
                                  seed=config.seed + _K_DISC_INIT)
    disc_opt = Adam(disc.params(), lr=config.resolved_lr(kind))
    prior_rng = np.random.default_rng(np.random.SeedSequence([config.seed, _K_PRIOR]))
    saturation_events = 0

    params = model.params()
    loop = _Loop(params, config, config.resolved_lr(kind), x_tr.shape[0])

    def _flat_mid(xb):
        mid, _ = model.encoder.forward(xb, ())
        b = mid.shape[0]
        return tc.reshape(mid, (b, mid.size // b)), mid

    def step(idx, opt):
        nonlocal saturation_events
        xb = Tensor(np.ascontiguousarray(x_tr[idx]))
        yb = Tensor(np.ascontiguousarray(y_tr[idx]))
        b = idx.size

        # step 1: encoder/decoder frozen, discriminator learns prior vs encodings
        with tc.no_grad():
            flat_frozen, _ = _flat_mid(xb)
        z_prior = Tensor(prior_rng.standard_normal((b, mid_len)).astype(np.float32))
        disc_opt.zero_grad()
        chi_enc = disc.forward(Tensor(flat_frozen.data))
        chi_prior = disc.forward(z_prior)
        d_loss = ls.wae_discriminator_loss(chi_enc, chi_prior, literal=config.wae_literal_disc)
        tc.backward(d_loss)
        disc_opt.step()
        if np.all(chi_enc.data < 2e-7) and np.all(chi_prior.data > 1.0 - 2e-7):
            saturation_events += 1

        # step 2: discriminator frozen, encoder/decoder learn reconstruction + adversarial term
        opt.zero_grad()
        for p in disc.params().values():
            p.grad = None
        flat, mid = _flat_mid(xb)
        out, _ = model.decoder.forward(mid, ())
        recon = tc.mse(out, yb)
        adv = ls.wae_adversarial(disc.forward(flat))
        loss = tc.add(recon, tc.scale(adv, config.wae_adversarial_weight))
        tc.backward(loss)
        opt.step()
        return recon.item()

    record = loop.run(step, lambda: _val_mse(model, x_va, y_va))
    record.notes.update({"kind": kind, "objective": "wae", "val_subject": val_subject,
                         "disc_saturation_events": saturation_events})
    return model, record


def distill_student(teacher: mz.EncoderDecoder | None, dataset: GaitDataset,
                    plan, config: TrainConfig, log_dir=None
                    ) -> tuple[mz.EncoderDecoder, RunRecord]:
    """Train the small student; `plan` is a TapPlan, "kd", "at", or None for scratch.

    The teacher runs forward-only per batch (never updated); with a TapPlan
    whose weights are zero, or plan None, no teacher forward happens at all
    and the run is exactly a scratch-student run.
    """
    if dataset.window != config.window:
        raise ValueError(f"dataset window {dataset.window} != config window {config.window}")
    student = mz.build_student(config.window, seed=config.seed)
    x_tr, y_tr, x_va, y_va, val_subject = _train_val_arrays(dataset, config.validate)
    w = config.weights

    if isinstance(plan, ls.TapPlan):
        active = w.lambda1 > 0 or w.lambda2 > 0
        taps_needed = plan.required_taps() if active else ()
        mode = "takd"
    elif plan in ("kd", "at"):
        active = w.alpha > 0
        taps_needed = ("Mid",)
        mode = plan
    elif plan is None:
        active, taps_needed, mode = False, (), "scratch"
    else:
        raise ValueError(f"bad plan {plan!r}")
    if active and teacher is None:
        raise ValueError("distillation with active weights needs a teacher")

    term_rows = []
    params = student.params()
    loop = _Loop(params, config, config.resolved_lr("c3d_small"), x_tr.shape[0])

    def step(idx, opt):
        opt.zero_grad()
        xb = Tensor(np.ascontiguousarray(x_tr[idx]))
        yb = Tensor(np.ascontiguousarray(y_tr[idx]))
        out, s_taps = student.forward(xb, taps_needed)
        if not active:
            loss = tc.mse(out, yb)
            terms = {"L_gt": loss.item(), "L_bs_mid": 0.0, "L_tp_mid": 0.0,
                     "L_bs_int": 0.0, "L_tp_int": 0.0, "total": loss.item()}
        else:
            with tc.no_grad():
                _, t_taps = teacher.forward(xb, taps_needed)
            if mode == "takd":
                loss, terms = ls.takd_objective(out, yb, t_taps, s_taps, plan, w,
                                                with_terms=True)
            else:
                lgt = ls.loss_gt(out, yb)
                extra = ls.baseline_losses(mode, t_taps, s_taps, w)
                loss = tc.add(lgt, tc.scale(extra, w.alpha))
                terms = {"L_gt": lgt.item(), "L_bs_mid": extra.item(), "L_tp_mid": 0.0,
                         "L_bs_int": 0.0, "L_tp_int": 0.0, "total": loss.item()}
        term_rows.append((loop.step, terms))
        tc.backward(loss)
        opt.step()
        return terms["L_gt"]

    record = loop.run(step, lambda: _val_mse(student, x_va, y_va))
    record.notes.update({"mode": mode, "val_subject": val_subject,
                         "plan": [[e.teacher, e.student, list(e.kinds), e.group]
                                  for e in plan.entries] if isinstance(plan, ls.TapPlan) else mode})
    if log_dir is not None:
        out = Path(log_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["step,L_gt,L_bs_mid,L_tp_mid,L_bs_int,L_tp_int,total"]
        for step_i, t in term_rows:
            lines.append(f"{step_i},{t['L_gt']:.10g},{t['L_bs_mid']:.10g},{t['L_tp_mid']:.10g},"
                         f"{t['L_bs_int']:.10g},{t['L_tp_int']:.10g},{t['total']:.10g}")
        (out / "loss_terms.csv").write_text("\n".join(lines) + "\n")
    return student, record


def train_student_scratch(dataset: GaitDataset, config: TrainConfig
                          ) -> tuple[mz.EncoderDecoder, RunRecord]:
    return distill_student(None, dataset, None, config)


def run_strategy(strategy: int, kind: str, dataset: GaitDataset, config: TrainConfig
                 ) -> tuple[dict, RunRecord]:
    """Cross-modal training strategies for an estimation model.

    1: plain teacher training. 2: pretrain a 1-D force autoencoder, then train
    the 3-D encoder with a fresh decoder plus a cosine term against the frozen
    1-D encodings. 3: train both encoders jointly with the cosine term.
    """
    if strategy == 1:
        model, record = train_teacher(kind, dataset, config)
        record.notes["strategy"] = 1
        return {"model": model, "grf_encoder": None}, record

    t = config.window
    mid_c = mz.Encoder3d(kind, config.enc_widths).mid_channels(t)
    x_tr, y_tr, x_va, y_va, val_subject = _train_val_arrays(dataset, config.validate)
    cw = config.weights.contrastive

    # step (i) for both strategies trains / initializes the 1-D force encoder
    enc1d = mz.build_grf_encoder1d(t, mid_channels=mid_c, seed=config.seed)
    dec1d_pre = mz.build_decoder1d(kind, mid_c, t, seed=config.seed + 1)
    if strategy == 2:
        pre_params = {**{f"enc.{k}": v for k, v in enc1d.params().items()},
                      **{f"dec.{k}": v for k, v in dec1d_pre.params().items()}}
        pre_loop = _Loop(pre_params, config, config.resolved_lr(kind), x_tr.shape[0])

        def pre_step(idx, opt):
            opt.zero_grad()
            yb = Tensor(np.ascontiguousarray(y_tr[idx]))
            mid, _ = enc1d.forward(yb, ())
            out, _ = dec1d_pre.forward(mid, ())
            loss = tc.mse(out, yb)
            tc.backward(loss)
            opt.step()
            return loss.item()

        def pre_val():
            with tc.no_grad():
                mid, _ = enc1d.forward(Tensor(np.ascontiguousarray(y_va)), ())
                out, _ = dec1d_pre.forward(mid, ())
            return float(np.mean((out.data - y_va) ** 2))

        pre_record = pre_loop.run(pre_step, pre_val)

    # main phase: 3-D encoder + (fresh) 1-D decoder, cosine-aligned representations
    model = mz.build_teacher(kind, t, seed=config.seed,
                             enc_widths=config.enc_widths, dec_widths=config.dec_widths)
    main_params = dict(model.params())
    if strategy == 3:
        main_params.update({f"grf.{k}": v for k, v in enc1d.params().items()})
    loop = _Loop(main_params, config, config.resolved_lr(kind), x_tr.shape[0])
    frozen_1d = strategy == 2

    def step(idx, opt):
        opt.zero_grad()
        xb = Tensor(np.ascontiguousarray(x_tr[idx]))
        yb = Tensor(np.ascontiguousarray(y_tr[idx]))
        out, taps = model.forward(xb, ("Mid",))
        mid3 = taps["Mid"].values
        loss = tc.mse(out, yb)
        if cw > 0:
            if frozen_1d:
                with tc.no_grad():
                    mid1, _ = enc1d.forward(yb, ())
            else:
                mid1, _ = enc1d.forward(yb, ())
            b = idx.size
            cos = ls.contrastive_cosine(tc.reshape(mid3, (b, mid3.size // b)),
                                        tc.reshape(mid1, (b, mid1.size // b)))
            loss = tc.add(loss, tc.scale(cos, cw))
        tc.backward(loss)
        opt.step()
        return loss.item()

    record = loop.run(step, lambda: _val_mse(model, x_va, y_va))
    record.notes.update({
        "strategy": strategy, "kind": kind, "val_subject": val_subject,
        "contrastive_weight": cw,
        "s2_decoder": "reinitialized" if strategy == 2 else None,
        "s2_pretrain_final_loss": pre_record.train_loss[-1] if strategy == 2 else None,
    })
    return {"model": model, "grf_encoder": enc1d}, record
