import numpy as np
import pytest

from dgpcyclegan.errors import CacheMismatch, MalformedFile, ShapeMismatch
from dgpcyclegan.nets import (
    AdamState,
    Discriminator,
    Generator,
    adam_step,
    load_checkpoint,
    save_checkpoint,
)
from dgpcyclegan.verify import fd_grad


def tiny_gen(seed=0):
    return Generator(16, hidden=(6, 4, 4, 6), tap_s=2, tap_z=3, rng=np.random.default_rng(seed))


# --- generator forward -------------------------------------------------------


def test_zero_params_zero_input_gives_zeros():
    gen = Generator(16, hidden=(6, 4, 4, 6), tap_s=2, tap_z=3)  # params start at zero
    y, s, z, _ = gen.forward(np.zeros((4, 4)))
    assert np.array_equal(y, np.zeros((4, 4)))
    assert np.array_equal(s, np.zeros(4))
    assert np.array_equal(z, np.zeros(4))


def test_forward_deterministic_for_fixed_seed():
    x = np.random.default_rng(1).uniform(0, 1, (4, 4))
    y1, s1, z1, _ = tiny_gen(7).forward(x)
    y2, s2, z2, _ = tiny_gen(7).forward(x)
    assert np.array_equal(y1, y2) and np.array_equal(s1, s2) and np.array_equal(z1, z2)


def test_output_shape_matches_input_shape():
    gen = Generator(32 * 32, hidden=(64, 16, 16, 64), tap_s=2, tap_z=3, rng=np.random.default_rng(2))
    x = np.random.default_rng(3).uniform(0, 1, (32, 32))
    y, s, z, _ = gen.forward(x)
    assert y.shape == (32, 32)
    assert s.shape == (16,) and z.shape == (16,)
    assert np.all(np.isfinite(s)) and np.all(np.isfinite(z))


def test_forward_rejects_wrong_shape():
    gen = tiny_gen()
    with pytest.raises(ShapeMismatch):
        gen.forward(np.zeros((5, 5)))


def test_tap_ordering_enforced():
    with pytest.raises(ValueError):
        Generator(16, hidden=(6, 4, 4, 6), tap_s=3, tap_z=2)
    with pytest.raises(ValueError):
        Generator(16, hidden=(6, 4, 4, 6), tap_s=2, tap_z=5)  # tap on output stage


def test_tap_s_precedes_tap_z_structurally():
    gen = tiny_gen(11)
    assert gen.tap_s < gen.tap_z
    _, s, z, cache = gen.forward(np.zeros((4, 4)))
    assert np.array_equal(cache.acts[gen.tap_s], s)
    assert np.array_equal(cache.acts[gen.tap_z], z)


# --- generator backward ------------------------------------------------------


def test_backward_zero_upstream_gives_zero_grads():
    gen = tiny_gen(5)
    x = np.random.default_rng(6).uniform(0, 1, (4, 4))
    _, _, _, cache = gen.forward(x)
    grads, gx = gen.backward(cache, np.zeros((4, 4)))
    assert np.array_equal(grads, np.zeros_like(gen.params))
    assert np.array_equal(gx, np.zeros((4, 4)))


def test_backward_matches_finite_differences():
    gen = Generator(16, hidden=(4, 3, 3, 4), tap_s=2, tap_z=3, rng=np.random.default_rng(8))
    assert gen.n_params <= 200
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (4, 4))
    wy = rng.standard_normal((4, 4))
    ws = rng.standard_normal(3)
    wz = rng.standard_normal(3)
    base = gen.params.copy()

    def scalar(params):
        gen.params = params
        y, s, z, _ = gen.forward(x)
        return float(np.sum(wy * y) + ws @ s + wz @ z)

    _, _, _, cache = gen.forward(x)
    analytic, _ = gen.backward(cache, wy, grad_s=ws, grad_z=wz)
    numeric = fd_grad(scalar, base.copy())
    gen.params = base
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    assert np.linalg.norm(analytic - numeric) / denom < 1e-4


def test_backward_input_grad_matches_finite_differences():
    gen = tiny_gen(10)
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, 16)
    wy = rng.standard_normal(16)

    def scalar_x(xv):
        y, _, _, _ = gen.forward(xv)
        return float(wy @ y)

    _, _, _, cache = gen.forward(x)
    _, gx = gen.backward(cache, wy)
    numeric = fd_grad(scalar_x, x.copy())
    assert np.linalg.norm(gx - numeric) / np.linalg.norm(numeric) < 1e-4


def test_backward_linearity_in_upstream():
    gen = tiny_gen(12)
    x = np.random.default_rng(13).uniform(0, 1, (4, 4))
    g = np.random.default_rng(14).standard_normal((4, 4))
    _, _, _, cache = gen.forward(x)
    g1, _ = gen.backward(cache, g)
    g2, _ = gen.backward(cache, 3.0 * g)
    assert np.allclose(3.0 * g1, g2, atol=1e-12)


def test_backward_rejects_foreign_cache():
    a, b = tiny_gen(1), tiny_gen(2)
    _, _, _, cache = a.forward(np.zeros((4, 4)))
    with pytest.raises(CacheMismatch):
        b.backward(cache, np.zeros((4, 4)))


# --- discriminator -----------------------------------------------------------


def test_disc_zero_params_zero_input_zero_score():
    disc = Discriminator(16, hidden=(5,))
    score, _ = disc.forward(np.zeros((4, 4)))
    assert score == 0.0


def test_disc_deterministic():
    x = np.random.default_rng(15).uniform(0, 1, (4, 4))
    d1 = Discriminator(16, hidden=(5,), rng=np.random.default_rng(3))
    d2 = Discriminator(16, hidden=(5,), rng=np.random.default_rng(3))
    assert d1.forward(x)[0] == d2.forward(x)[0]


def test_disc_backward_matches_finite_differences():
    disc = Discriminator(16, hidden=(6, 4), rng=np.random.default_rng(16))
    rng = np.random.default_rng(17)
    x = rng.uniform(0, 1, (4, 4))
    base = disc.params.copy()

    def scalar(params):
        disc.params = params
        return disc.forward(x)[0]

    _, cache = disc.forward(x)
    analytic, _ = disc.backward(cache, 1.0)
    numeric = fd_grad(scalar, base.copy())
    disc.params = base
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


# --- adam --------------------------------------------------------------------


def test_adam_zero_grads_leave_params():
    params = np.array([1.0, -2.0, 3.0])
    state = AdamState.for_params(params, lr=1e-3)
    assert np.array_equal(adam_step(state, params, np.zeros(3)), params)


def test_adam_zero_lr_leaves_params():
    params = np.array([1.0, -2.0])
    state = AdamState.for_params(params, lr=0.0)
    out = adam_step(state, params, np.array([0.5, -0.5]))
    assert np.array_equal(out, params)


def test_adam_first_step_hand_value():
    # g=1 at t=1: m_hat = v_hat = 1, delta = -lr / (1 + eps)
    lr = 2e-4
    params = np.array([0.0])
    state = AdamState.for_params(params, lr=lr)
    out = adam_step(state, params, np.array([1.0]))
    assert abs(out[0] + lr / (1.0 + 1e-8)) < 1e-18
    assert state.t == 1


def test_adam_defaults_and_shape_check():
    state = AdamState.for_params(np.zeros(3))
    assert (state.beta1, state.beta2, state.eps) == (0.5, 0.999, 1e-8)
    with pytest.raises(ShapeMismatch):
        adam_step(state, np.zeros(3), np.zeros(4))


def test_adam_t_strictly_increasing():
    params = np.zeros(2)
    state = AdamState.for_params(params)
    seen = []
    for _ in range(4):
        params = adam_step(state, params, np.ones(2))
        seen.append(state.t)
    assert seen == [1, 2, 3, 4]


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    gen = tiny_gen(20)
    disc = Discriminator(16, hidden=(5,), rng=np.random.default_rng(21))
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, {"gen_wc": gen, "disc_c": disc}, step=123)
    nets, step = load_checkpoint(path)
    assert step == 123
    assert isinstance(nets["gen_wc"], Generator)
    assert nets["gen_wc"].widths == gen.widths
    assert (nets["gen_wc"].tap_s, nets["gen_wc"].tap_z) == (gen.tap_s, gen.tap_z)
    assert np.array_equal(nets["gen_wc"].params, gen.params)
    assert np.array_equal(nets["disc_c"].params, disc.params)
    # parameter count and shapes stable across the round trip
    x = np.random.default_rng(22).uniform(0, 1, (4, 4))
    y1, s1, z1, _ = gen.forward(x)
    y2, s2, z2, _ = nets["gen_wc"].forward(x)
    assert np.array_equal(y1, y2) and np.array_equal(s1, s2) and np.array_equal(z1, z2)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(MalformedFile):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    gen = tiny_gen(23)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, {"g": gen}, step=1)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(MalformedFile):
        load_checkpoint(path)
