"""Spatiotemporal encoder / 1-D decoder networks with named tap points.

Encoder families: full 3-D convolutions (c3d, and the small student variant),
inflated 3-D convolutions (i3d), and factorized spatial-then-temporal blocks
(r2p1d). All encoders keep the temporal axis at full length and squeeze the
16x8 spatial grid down; the decoder reshapes the encoder output to (b, c, t),
runs four 1-D conv layers, and maps to two force channels.

Channel widths are tuned so the defaults land on ~1.00M / 1.18M / 1.58M
parameters for the three teachers and ~0.25M for the student.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor

TAP_NAMES = ("E1", "E2", "Mid", "D1", "D2")

ENCODER_WIDTHS = {
    "c3d": (16, 32, 64, 64),
    "c3d_small": (8, 16, 24, 24),
    "i3d": (12, 16, 16, 20, 20, 24, 24, 24),
    "r2p1d": (16, 24, 32, 40, 48),
}
DECODER_WIDTHS = {
    "c3d": (288, 288, 288, 288),
    "c3d_small": (128, 160, 160, 160),
    "i3d": (144, 192, 192, 192),
    "r2p1d": (192, 256, 256, 256),
}
DECODER_KERNEL = {"c3d": 3, "c3d_small": 3, "i3d": 5, "r2p1d": 5}

# per-layer (kernel, stride, padding); channel widths come separately
_C3D_LAYERS = [
    ((3, 4, 3), (1, 2, 1), (1, 0, 0)),
    ((3, 3, 3), (1, 1, 1), (1, 0, 0)),
    ((3, 3, 3), (1, 1, 1), (1, 0, 0)),
    ((3, 3, 3), (1, 1, 1), (1, 0, 1)),
]
_I3D_LAYERS = [
    ((5, 4, 3), (1, 2, 1), (2, 0, 0)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ((3, 3, 2), (1, 1, 1), (1, 1, 0)),
    ((3, 3, 3), (1, 1, 1), (1, 1, 1)),
]
# blocks: ("fact", spatial (kh,kw,sh,sw,ph,pw), temporal (kt,pt)) or ("full", kernel, stride, pad)
_R2P1D_BLOCKS = [
    ("fact", (4, 3, 2, 1, 0, 0), (3, 1)),
    ("fact", (3, 3, 1, 1, 1, 1), (5, 2)),
    ("fact", (3, 3, 1, 1, 1, 1), (3, 1)),
    ("full", (3, 3, 3), (1, 1, 1), (1, 0, 0)),
    ("fact", (3, 2, 1, 1, 1, 0), (3, 1)),
]


@dataclass
class FeatureTap:
    """An intermediate activation grabbed during a forward pass."""

    name: str
    values: Tensor
    layout: str  # "bcthw" or "bct"

    @property
    def dims(self) -> tuple:
        return self.values.shape


def _uniform_weight(rng, shape, fan_in, dtype):
    # He-scaled uniform: preserves activation scale through deep ReLU stacks,
    # where a 1/fan_in bound decays the signal ~2.5x per layer and stalls
    # small-step-budget training at the mean predictor
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _uniform_bias(rng, cout, fan_in, dtype):
    # nonzero bias keeps pre-activations off the exact ReLU kink (zero padding
    # plus zero bias would pin whole regions to 0, where gradients are ambiguous)
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=cout).astype(dtype), requires_grad=True)


class Conv3dLayer:
    def __init__(self, cin, cout, kernel, stride, padding, rng, dtype):
        self.stride, self.padding = tuple(stride), tuple(padding)
        self.kernel_size = tuple(kernel)
        fan_in = cin * int(np.prod(kernel))
        self.weight = _uniform_weight(rng, (cout, cin, *kernel), fan_in, dtype)
        self.bias = _uniform_bias(rng, cout, fan_in, dtype)

    def __call__(self, x):
        return tc.conv3d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        return {"w": self.weight, "b": self.bias}

    def out_shape(self, shape):
        b, _, t, h, w = shape
        k, s, p = self.kernel_size, self.stride, self.padding
        dims = [(n + 2 * p[i] - k[i]) // s[i] + 1 for i, n in enumerate((t, h, w))]
        return (b, self.weight.shape[0], *dims)

    def macs(self, out_shape):
        fan_in = self.weight.shape[1] * int(np.prod(self.kernel_size))
        return int(np.prod(out_shape)) * fan_in


class Conv1dLayer:
    def __init__(self, cin, cout, kernel, stride, padding, rng, dtype):
        self.stride, self.padding = stride, padding
        self.kernel_size = kernel
        self.weight = _uniform_weight(rng, (cout, cin, kernel), cin * kernel, dtype)
        self.bias = _uniform_bias(rng, cout, cin * kernel, dtype)

    def __call__(self, x):
        return tc.conv1d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        return {"w": self.weight, "b": self.bias}

    def out_shape(self, shape):
        b, _, t = shape
        return (b, self.weight.shape[0], (t + 2 * self.padding - self.kernel_size) // self.stride + 1)

    def macs(self, out_shape):
        return int(np.prod(out_shape)) * self.weight.shape[1] * self.kernel_size


class AffineLayer:
    def __init__(self, n_in, n_out, rng, dtype):
        self.weight = _uniform_weight(rng, (n_out, n_in), n_in, dtype)
        self.bias = _uniform_bias(rng, n_out, n_in, dtype)

    def __call__(self, x):
        return tc.affine(x, self.weight, self.bias)

    def params(self):
        return {"w": self.weight, "b": self.bias}

    def out_shape(self, shape):
        return (shape[0], self.weight.shape[0])

    def macs(self, out_shape):
        return int(np.prod(out_shape)) * self.weight.shape[1]


class FactorizedBlock:
    """2-D spatial conv followed by a 1-D temporal conv, both as conv3d."""

    def __init__(self, cin, cout, spatial, temporal, rng, dtype):
        kh, kw, sh, sw, ph, pw = spatial
        kt, pt = temporal
        self.spatial = Conv3dLayer(cin, cout, (1, kh, kw), (1, sh, sw), (0, ph, pw), rng, dtype)
        self.temporal = Conv3dLayer(cout, cout, (kt, 1, 1), (1, 1, 1), (pt, 0, 0), rng, dtype)

    def __call__(self, x):
        return self.temporal(self.spatial(x))

    def params(self):
        return {f"spatial.{k}": v for k, v in self.spatial.params().items()} | \
               {f"temporal.{k}": v for k, v in self.temporal.params().items()}

    def out_shape(self, shape):
        return self.temporal.out_shape(self.spatial.out_shape(shape))

    def macs(self, out_shape_final):
        # spatial output shape equals the block output except in time, which both preserve
        return self.spatial.macs(out_shape_final) + self.temporal.macs(out_shape_final)


def _collect(prefix: str, layers) -> dict:
    out = {}
    for i, layer in enumerate(layers, start=1):
        for k, v in layer.params().items():
            out[f"{prefix}{i}.{k}"] = v
    return out


class Encoder3d:
    """Stacked conv3d (or factorized) layers with ReLU and taps E1/E2/Mid."""

    def __init__(self, kind: str, widths=None, in_channels: int = 2,
                 seed: int = 0, dtype=np.float32):
        if kind not in ENCODER_WIDTHS:
            raise ValueError(f"unknown encoder kind {kind!r}")
        self.kind = kind
        self.widths = tuple(widths) if widths is not None else ENCODER_WIDTHS[kind]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        self.layers = []
        cin = in_channels
        if kind in ("c3d", "c3d_small"):
            recipe = _C3D_LAYERS
        elif kind == "i3d":
            recipe = _I3D_LAYERS
        else:
            recipe = _R2P1D_BLOCKS
        if len(self.widths) != len(recipe):
            raise ValueError(f"{kind} needs {len(recipe)} widths, got {len(self.widths)}")
        for cout, spec in zip(self.widths, recipe):
            if kind == "r2p1d":
                if spec[0] == "fact":
                    self.layers.append(FactorizedBlock(cin, cout, spec[1], spec[2], rng, dtype))
                else:
                    self.layers.append(Conv3dLayer(cin, cout, spec[1], spec[2], spec[3], rng, dtype))
            else:
                k, s, p = spec
                self.layers.append(Conv3dLayer(cin, cout, k, s, p, rng, dtype))
            cin = cout

    def params(self):
        return _collect("enc.l", self.layers)

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def mid_channels(self, t: int = 8) -> int:
        """Flattened per-timestep channel count of the encoder output."""
        b, c, _, h, w = self.out_shape((1, 2, t, 16, 8))
        return c * h * w

    def forward(self, x: Tensor, taps=()) -> tuple[Tensor, dict]:
        grabbed = {}
        h = x
        n = len(self.layers)
        for i, layer in enumerate(self.layers, start=1):
            h = tc.relu(layer(h))
            if i == 2 and "E1" in taps:
                grabbed["E1"] = FeatureTap("E1", h, "bcthw")
            if i == n - 1 and "E2" in taps:
                grabbed["E2"] = FeatureTap("E2", h, "bcthw")
        if "Mid" in taps:
            grabbed["Mid"] = FeatureTap("Mid", h, "bcthw")
        return h, grabbed


class Decoder1d:
    """Reshape the encoder output to (b, c, t), four conv1d+ReLU layers, then a 2-channel head."""

    def __init__(self, in_channels: int, kernel: int, widths, target_t: int,
                 seed: int = 0, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("decoder kernel must be odd to preserve length")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
        self.kernel = kernel
        self.target_t = target_t
        self.widths = tuple(widths)
        self.layers = []
        cin = in_channels
        for cout in self.widths:
            self.layers.append(Conv1dLayer(cin, cout, kernel, 1, kernel // 2, rng, dtype))
            cin = cout
        self.head = Conv1dLayer(cin, 2, 1, 1, 0, rng, dtype)

    def params(self):
        out = _collect("dec.l", self.layers)
        out.update({f"dec.head.{k}": v for k, v in self.head.params().items()})
        return out

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return self.head.out_shape((shape[0], shape[1], self.target_t))

    def forward(self, mid: Tensor, taps=()) -> tuple[Tensor, dict]:
        grabbed = {}
        if mid.ndim == 5:
            b, c, t, hh, ww = mid.shape
            h = tc.reshape(tc.moveaxis(mid, 2, 4), (b, c * hh * ww, t))
        elif mid.ndim == 3:
            h = mid
        else:
            raise ValueError(f"decoder expects a (b,c,t[,h,w]) representation, got {mid.shape}")
        for i, layer in enumerate(self.layers, start=1):
            h = tc.relu(layer(h))
            if i == 1 and "D1" in taps:
                grabbed["D1"] = FeatureTap("D1", h, "bct")
            if i == 3 and "D2" in taps:
                grabbed["D2"] = FeatureTap("D2", h, "bct")
        if h.shape[2] != self.target_t:
            h = tc.resize_linear(h, 2, self.target_t)
        return self.head(h), grabbed


class EncoderDecoder:
    """Full estimation model: insole video in, two-channel force series out."""

    def __init__(self, kind: str, t: int, enc_widths=None, dec_widths=None,
                 seed: int = 0, dtype=np.float32, variational: bool = False):
        if t < 4:
            raise ValueError(f"temporal length {t} too short")
        self.kind = kind
        self.t = t
        self.dtype = dtype
        self.variational = variational
        self.encoder = Encoder3d(kind, enc_widths, seed=seed, dtype=dtype)
        cmid = self.encoder.mid_channels(t)
        dec_widths = tuple(dec_widths) if dec_widths is not None else DECODER_WIDTHS[kind]
        self.decoder = Decoder1d(cmid, DECODER_KERNEL[kind], dec_widths, t, seed=seed, dtype=dtype)
        if variational:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 37]))
            c = self.encoder.widths[-1]
            self.mu_head = Conv3dLayer(c, c, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng, dtype)
            self.logvar_head = Conv3dLayer(c, c, (1, 1, 1), (1, 1, 1), (0, 0, 0), rng, dtype)

    def params(self):
        out = self.encoder.params()
        out.update(self.decoder.params())
        if self.variational:
            out.update({f"vae.mu.{k}": v for k, v in self.mu_head.params().items()})
            out.update({f"vae.logvar.{k}": v for k, v in self.logvar_head.params().items()})
        return out

    def forward(self, x: Tensor, taps=()) -> tuple[Tensor, dict]:
        mid, enc_taps = self.encoder.forward(x, taps)
        out, dec_taps = self.decoder.forward(mid, taps)
        return out, {**enc_taps, **dec_taps}

    def forward_variational(self, x: Tensor, eps: Tensor, taps=()):
        """Reparameterized forward: returns (out, taps, mu, logvar)."""
        if not self.variational:
            raise RuntimeError("model was not built with variational heads")
        h, _ = self.encoder.forward(x, ())
        mu = self.mu_head(h)
        logvar = tc.clip(self.logvar_head(h), -10.0, 10.0)
        z = tc.add(mu, tc.mul(tc.exp(tc.scale(logvar, 0.5)), eps))
        grabbed = {}
        if "Mid" in taps:
            grabbed["Mid"] = FeatureTap("Mid", z, "bcthw")
        out, dec_taps = self.decoder.forward(z, taps)
        return out, {**grabbed, **dec_taps}, mu, logvar

    def descriptor(self) -> dict:
        return {
            "class": "EncoderDecoder",
            "kind": self.kind,
            "t": self.t,
            "enc_widths": list(self.encoder.widths),
            "dec_widths": list(self.decoder.widths),
            "variational": self.variational,
        }

    def save(self, path):
        tc.save_checkpoint(path, self.params(), meta=self.descriptor())

    @classmethod
    def load(cls, path) -> "EncoderDecoder":
        arrays, meta = tc.load_checkpoint(path)
        if not meta or meta.get("class") != "EncoderDecoder":
            raise ValueError(f"{path}: checkpoint does not describe an EncoderDecoder")
        model = cls(meta["kind"], meta["t"], meta["enc_widths"], meta["dec_widths"],
                    variational=meta.get("variational", False))
        _install_params(model, arrays, path)
        return model


class Grf1dEncoder:
    """Small conv1d stack embedding a force window to a (b, c, t) representation."""

    def __init__(self, t: int, mid_channels: int = 48, widths=(16, 32),
                 seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
        self.t = t
        self.mid_channels = mid_channels
        self.widths = tuple(widths) + (mid_channels,)
        self.layers = []
        cin = 2
        for cout in self.widths:
            self.layers.append(Conv1dLayer(cin, cout, 3, 1, 1, rng, dtype))
            cin = cout

    def params(self):
        return _collect("grf1d.l", self.layers)

    def forward(self, y: Tensor, taps=()) -> tuple[Tensor, dict]:
        h = y
        for layer in self.layers:
            h = tc.relu(layer(h))
        grabbed = {"Mid": FeatureTap("Mid", h, "bct")} if "Mid" in taps else {}
        return h, grabbed

    def out_shape(self, shape):
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape


class Discriminator:
    """Five affine layers with four ReLUs on the flattened representation; logistic output."""

    def __init__(self, mid_len: int, hidden: int = 32, paper_scale: bool = False,
                 seed: int = 0, dtype=np.float32):
        if paper_scale:
            hidden = 4096
        rng = np.random.default_rng(np.random.SeedSequence([seed, 53]))
        self.mid_len = mid_len
        self.hidden = hidden
        dims = [mid_len, hidden, hidden, hidden, hidden, 1]
        self.layers = [AffineLayer(dims[i], dims[i + 1], rng, dtype) for i in range(5)]
        self.n_relu = 4

    def params(self):
        return _collect("disc.l", self.layers)

    def forward(self, z: Tensor) -> Tensor:
        h = z
        for layer in self.layers[:-1]:
            h = tc.relu(layer(h))
        out = tc.sigmoid(self.layers[-1](h))
        # strict (0,1): float32 sigmoid saturates to exactly 0/1 for |x| > ~17
        out = tc.clip(out, 1e-7, 1.0 - 1e-7)
        return tc.reshape(out, (z.shape[0],))


def _install_params(model, arrays: dict, path):
    params = model.params()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(f"{path}: parameter names do not match the architecture "
                         f"(missing {sorted(missing)}, extra {sorted(extra)})")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"{path}: {name} has shape {arrays[name].shape}, "
                             f"expected {p.data.shape}")
        p.data[...] = arrays[name].astype(p.dtype)


# ---------------------------------------------------------------------------
# builders


def build_encoder(kind: str, channel_widths=None, t: int = 200, seed: int = 0,
                  dtype=np.float32) -> Encoder3d:
    enc = Encoder3d(kind, channel_widths, seed=seed, dtype=dtype)
    enc.out_shape((1, 2, t, 16, 8))  # raises if spatial dims collapse
    return enc


def build_decoder1d(kind: str, in_channels: int, target_t: int, widths=None,
                    seed: int = 0, dtype=np.float32) -> Decoder1d:
    widths = widths if widths is not None else DECODER_WIDTHS[kind]
    return Decoder1d(in_channels, DECODER_KERNEL[kind], widths, target_t, seed=seed, dtype=dtype)


def build_teacher(kind: str, t: int, seed: int = 0, dtype=np.float32,
                  variational: bool = False, enc_widths=None, dec_widths=None) -> EncoderDecoder:
    return EncoderDecoder(kind, t, enc_widths, dec_widths, seed=seed, dtype=dtype,
                          variational=variational)


def build_student(t: int, seed: int = 0, dtype=np.float32) -> EncoderDecoder:
    return EncoderDecoder("c3d_small", t, seed=seed, dtype=dtype)


def build_grf_encoder1d(t: int, mid_channels: int = 48, seed: int = 0,
                        dtype=np.float32) -> Grf1dEncoder:
    return Grf1dEncoder(t, mid_channels, seed=seed, dtype=dtype)


def build_discriminator(mid_len: int, hidden: int = 32, paper_scale: bool = False,
                        seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(mid_len, hidden, paper_scale, seed=seed, dtype=dtype)


def forward_with_taps(model, x: Tensor, tap_names=()) -> tuple[Tensor, dict]:
    """Single forward pass; taps reference the activations used for the output."""
    unknown = set(tap_names) - set(TAP_NAMES)
    if unknown:
        raise ValueError(f"unknown tap names {sorted(unknown)}")
    return model.forward(x, tuple(tap_names))


def count_params_flops(model, t: int | None = None) -> tuple[int, int]:
    """Exact trainable-parameter count and a 2xMAC FLOPs estimate at length t."""
    n_params = sum(p.size for p in model.params().values())
    if isinstance(model, EncoderDecoder):
        t = t or model.t
        shape = (1, 2, t, 16, 8)
        macs = 0
        for layer in model.encoder.layers:
            shape = layer.out_shape(shape)
            macs += layer.macs(shape)
        shape = (1, shape[1] * shape[3] * shape[4], shape[2])
        for layer in model.decoder.layers:
            shape = layer.out_shape(shape)
            macs += layer.macs(shape)
        head_shape = model.decoder.head.out_shape((shape[0], shape[1], t))
        macs += model.decoder.head.macs(head_shape)
    elif isinstance(model, Grf1dEncoder):
        shape = (1, 2, t or model.t)
        macs = 0
        for layer in model.layers:
            shape = layer.out_shape(shape)
            macs += layer.macs(shape)
    elif isinstance(model, Discriminator):
        shape = (1, model.mid_len)
        macs = 0
        for layer in model.layers:
            shape = layer.out_shape(shape)
            macs += layer.macs(shape)
    else:
        raise TypeError(f"cannot count FLOPs for {type(model).__name__}")
    return n_params, 2 * macs
