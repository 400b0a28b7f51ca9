import numpy as np
import pytest

from takd import models
from takd import tensor as tc
from takd.optim import Adam


def rand_input(b=2, t=16, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return tc.Tensor(rng.uniform(size=(b, 2, t, 16, 8)).astype(dtype))


def test_c3d_smoke_taps_and_shapes():
    model = models.build_teacher("c3d", 200)
    x = rand_input(2, 200)
    out, taps = models.forward_with_taps(model, x, ("E1", "E2", "Mid"))
    assert out.shape == (2, 2, 200)
    assert np.all(np.isfinite(out.data))
    assert set(taps) == {"E1", "E2", "Mid"}
    assert taps["Mid"].layout == "bcthw"


def test_i3d_first_layer_height():
    enc = models.build_encoder("i3d", t=100)
    shape = enc.layers[0].out_shape((1, 2, 100, 16, 8))
    assert shape[3] == (16 + 0 - 4) // 2 + 1 == 7


def test_i3d_structure():
    enc = models.build_encoder("i3d", t=100)
    assert len(enc.layers) == 8
    assert enc.layers[0].kernel_size == (5, 4, 3)
    assert enc.layers[0].stride == (1, 2, 1)
    assert enc.layers[0].padding == (2, 0, 0)
    assert enc.layers[6].kernel_size == (3, 3, 2)


def test_r2p1d_factorization_identity():
    enc = models.build_encoder("r2p1d", t=12)
    block = enc.layers[2]
    assert isinstance(block, models.FactorizedBlock)
    # make the temporal conv an identity: delta kernel at the center tap
    c = block.temporal.weight.shape[0]
    ident = np.zeros(block.temporal.weight.shape, dtype=np.float32)
    for i in range(c):
        ident[i, i, 1, 0, 0] = 1.0
    block.temporal.weight.data[...] = ident
    block.temporal.bias.data[...] = 0.0
    rng = np.random.default_rng(3)
    x = tc.Tensor(rng.normal(size=(2, block.spatial.weight.shape[1], 6, 9, 7)).astype(np.float32))
    full = block(x)
    framewise = block.spatial(x)
    assert np.max(np.abs(full.data - framewise.data)) < 1e-6


def test_encoders_accept_both_windows():
    for kind in ("c3d", "i3d", "r2p1d", "c3d_small"):
        for t in (100, 200):
            model = models.build_teacher(kind, t) if kind != "c3d_small" else models.build_student(t)
            out, _ = model.forward(rand_input(2, t), ())
            assert out.shape == (2, 2, t)


def test_decoder_taps_and_zero_head():
    model = models.build_student(32)
    x = rand_input(2, 32)
    out, taps = model.forward(x, ("D1", "D2"))
    assert set(taps) == {"D1", "D2"}
    assert taps["D1"].layout == "bct"
    assert taps["D1"].values.shape[0] == 2
    model.decoder.head.weight.data[...] = 0.0
    model.decoder.head.bias.data[...] = np.array([0.25, -0.5], dtype=np.float32)
    out2, _ = model.forward(x, ())
    assert np.allclose(out2.data[:, 0], 0.25, atol=1e-6)
    assert np.allclose(out2.data[:, 1], -0.5, atol=1e-6)


def test_student_parameter_budget_and_ratios():
    stu, _ = models.count_params_flops(models.build_student(100))
    assert abs(stu - 250_000) / 250_000 < 0.10
    targets = {"c3d": (1.00e6, 25.10), "i3d": (1.18e6, 21.35), "r2p1d": (1.58e6, 15.88)}
    for kind, (p_target, ratio_target) in targets.items():
        p, _ = models.count_params_flops(models.build_teacher(kind, 100))
        assert abs(p - p_target) / p_target < 0.10
        assert abs(100.0 * stu / p - ratio_target) < 3.0


def test_layer_counts_structural():
    assert len(models.build_encoder("c3d").layers) == 4
    assert len(models.build_encoder("i3d").layers) == 8
    assert len(models.build_encoder("r2p1d").layers) == 5
    assert len(models.build_teacher("c3d", 100).decoder.layers) == 4
    disc = models.build_discriminator(96)
    assert len(disc.layers) == 5 and disc.n_relu == 4


def test_flops_temporal_linearity():
    m = models.build_teacher("c3d", 200)
    _, f100 = models.count_params_flops(m, 100)
    _, f200 = models.count_params_flops(m, 200)
    assert abs(f200 / f100 - 2.0) < 0.05


def test_student_taps_resolve():
    model = models.build_student(16)
    _, taps = models.forward_with_taps(model, rand_input(2, 16), models.TAP_NAMES)
    assert set(taps) == set(models.TAP_NAMES)


def test_unknown_tap_rejected():
    model = models.build_student(16)
    with pytest.raises(ValueError, match="unknown tap"):
        models.forward_with_taps(model, rand_input(2, 16), ("Zed",))


def test_mid_tap_is_decoder_input_no_recompute():
    model = models.build_student(16)
    x = rand_input(2, 16)
    captured = {}
    original = model.decoder.forward

    def spy(mid, taps=()):
        captured["mid"] = mid
        return original(mid, taps)

    model.decoder.forward = spy
    _, taps = model.forward(x, ("Mid",))
    assert taps["Mid"].values is captured["mid"]


def test_no_taps_equals_plain_forward():
    model = models.build_student(16)
    x = rand_input(2, 16)
    out1, taps = model.forward(x, ())
    out2, _ = model.forward(x, ("Mid",))
    assert taps == {}
    assert np.array_equal(out1.data, out2.data)


def test_grf_encoder_contract():
    enc = models.build_grf_encoder1d(100)
    stu = models.build_student(100)
    y = tc.Tensor(np.random.default_rng(0).uniform(size=(3, 2, 100)).astype(np.float32))
    mid, taps = enc.forward(y, ("Mid",))
    stu_mid_len = stu.encoder.mid_channels(100) * 100
    assert mid.shape[1] * mid.shape[2] == stu_mid_len
    assert taps["Mid"].layout == "bct"


def test_grf_autoencoder_overfits_constant_window():
    t = 32
    enc = models.build_grf_encoder1d(t, mid_channels=16, seed=1)
    dec = models.build_decoder1d("c3d_small", 16, t, widths=(24, 24, 24, 24), seed=1)
    y = tc.Tensor(np.full((4, 2, t), 0.6, dtype=np.float32))
    params = {**enc.params(), **{f"d.{k}": v for k, v in dec.params().items()}}
    opt = Adam(params, lr=0.01)
    loss_val = None
    for _ in range(150):
        opt.zero_grad()
        mid, _ = enc.forward(y)
        out, _ = dec.forward(mid)
        loss = tc.mse(out, y)
        tc.backward(loss)
        opt.step()
        loss_val = loss.item()
    assert loss_val < 1e-3


def test_grf_encoder_deterministic():
    a = models.build_grf_encoder1d(50, seed=7)
    b = models.build_grf_encoder1d(50, seed=7)
    for k in a.params():
        assert np.array_equal(a.params()[k].data, b.params()[k].data)


def test_discriminator_output_range_and_paper_scale():
    disc = models.build_discriminator(64, hidden=16)
    z = tc.Tensor(np.random.default_rng(1).normal(scale=30.0, size=(8, 64)).astype(np.float32))
    out = disc.forward(z)
    assert out.shape == (8,)
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)
    big = models.build_discriminator(25600, paper_scale=True)
    p, _ = models.count_params_flops(big)
    assert abs(p - 155e6) / 155e6 < 0.02


def test_checkpoint_roundtrip_with_descriptor(tmp_path):
    model = models.build_student(16, seed=5)
    path = tmp_path / "student.takd"
    model.save(path)
    again = models.EncoderDecoder.load(path)
    assert again.descriptor() == model.descriptor()
    x = rand_input(2, 16)
    a, _ = model.forward(x, ())
    b, _ = again.forward(x, ())
    assert np.array_equal(a.data, b.data)


def test_checkpoint_descriptor_mismatch_rejected(tmp_path):
    model = models.build_student(16)
    path = tmp_path / "student.takd"
    tc_params = model.params()
    dropped = dict(list(tc_params.items())[:-1])
    from takd.tensor import save_checkpoint
    save_checkpoint(path, dropped, meta=model.descriptor())
    with pytest.raises(ValueError, match="parameter names"):
        models.EncoderDecoder.load(path)


def test_variational_heads():
    model = models.build_teacher("c3d", 16, variational=True,
                                 enc_widths=(4, 6, 8, 8), dec_widths=(16, 16, 16, 16))
    x = rand_input(2, 16)
    rng = np.random.default_rng(0)
    zshape = model.encoder.out_shape((2, 2, 16, 16, 8))
    eps = tc.Tensor(rng.normal(size=zshape).astype(np.float32))
    out, taps, mu, logvar = model.forward_variational(x, eps, ("Mid",))
    assert out.shape == (2, 2, 16)
    assert mu.shape == zshape and logvar.shape == zshape
    assert "Mid" in taps


def test_decoder_temporal_resize_to_target():
    dec = models.build_decoder1d("c3d", 12, target_t=24, widths=(8, 8, 8, 8))
    mid = tc.Tensor(np.random.default_rng(0).normal(size=(3, 12, 16)).astype(np.float32))
    out, _ = dec.forward(mid, ())
    assert out.shape == (3, 2, 24)
