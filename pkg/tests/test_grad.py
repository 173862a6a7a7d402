import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from linvoc import grad as G
from linvoc.gradcheck import corrupted_rule, run_checks


def leaf(x):
    return G.tensor(np.asarray(x, dtype=np.float64), requires_grad=True, dtype=np.float64)


# --- forward examples -------------------------------------------------------
def test_layer_norm_of_constant_is_zero():
    out = G.layer_norm(G.tensor(np.full((2, 5), 3.7)), axis=-1)
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_softmax_symmetric_pair():
    assert np.allclose(G.softmax(G.tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).standard_normal((2, 1, 9)).astype(np.float32)
    out = G.conv1d(G.tensor(x), G.tensor(np.ones((1, 1, 1), dtype=np.float32)))
    assert np.array_equal(out.data, x)


def test_zero_size_reduction_rejected():
    with pytest.raises(G.GradError):
        G.mean(G.tensor(np.zeros((0, 3))))


def test_avg_pool_requires_divisible_length():
    with pytest.raises(G.GradError):
        G.avg_pool1d(G.tensor(np.zeros((1, 7))), 2)


def test_shape_mismatch_matmul():
    with pytest.raises(G.GradError):
        G.matmul(G.tensor(np.zeros((2, 3))), G.tensor(np.zeros((4, 2))))


# --- backward ---------------------------------------------------------------
def test_sum_of_squares_gradient():
    x = leaf([1.0, -2.0])
    G.backward(G.sum_(G.square(x)))
    assert np.array_equal(x.grad, [2.0, -4.0])


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(G.GradError):
        G.backward(x * 2.0)


def test_detach_blocks_gradient_and_keeps_values():
    x = leaf([1.0, 2.0, 3.0])
    d = G.detach(x)
    assert np.array_equal(d.data, x.data)
    G.backward(G.sum_(d * x))
    # only the non-detached factor contributes: d/dx (c * x) = c
    assert np.array_equal(x.grad, x.data)
    y = leaf([1.0])
    z = G.detach(y * 3.0)
    assert not z.requires_grad


def test_reused_node_accumulates():
    x = leaf([3.0])
    y = x * x + x
    G.backward(G.sum_(y))
    assert np.allclose(x.grad, [7.0])


def test_backward_deterministic():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 6))
    w = rng.standard_normal((6, 3))
    grads = []
    for _ in range(2):
        x, wt = leaf(a), leaf(w)
        G.backward(G.sum_(G.gelu(G.matmul(x, wt))))
        grads.append((x.grad.copy(), wt.grad.copy()))
    assert all(np.array_equal(p, q) for p, q in zip(grads[0], grads[1]))


def test_discriminator_loss_on_detached_fake_leaves_generator_grads_zero():
    from linvoc.critics import CriticConfig, CriticEnsemble
    from linvoc.dsp import SpectrogramConfig
    from linvoc.losses import adv_loss_discriminator

    rng = np.random.default_rng(0)
    with G.precision(np.float64):
        gen_w = leaf(rng.standard_normal((1, 256)) * 0.1)
        critics = CriticEnsemble(CriticConfig(spectral_cfg=SpectrogramConfig(64, 64, 16), widths=(2, 2, 2, 2)))
        fake = gen_w * 2.0
        loss = adv_loss_discriminator(critics(G.detach(fake)), critics(rng.standard_normal((1, 256))))
        G.backward(loss)
    assert gen_w.grad is None
    assert any(p.grad is not None and np.abs(p.grad).max() > 0 for p in critics.parameters().values())


# --- checker ------------------------------------------------------------------
def test_grad_check_square_at_three():
    x = leaf([3.0])
    err = G.grad_check(lambda: G.sum_(G.square(x)), [x])
    G.backward(G.sum_(G.square(x)))
    assert err < 1e-8


def test_grad_check_rejects_non_scalar_and_non_finite():
    x = leaf([1.0, 2.0])
    with pytest.raises(G.GradError):
        G.grad_check(lambda: x * 2.0, [x])
    y = leaf([-1.0])
    with pytest.raises(G.GradError):
        G.grad_check(lambda: G.sum_(G.log(y)), [y])


def test_grad_check_skips_kinks():
    # leaky_relu exactly at its kink: the central difference straddles two branches
    x = leaf([0.0, 1.0])
    stats = {}
    err = G.grad_check(lambda: G.sum_(G.leaky_relu(x)), [x], stats=stats)
    assert stats["skipped"] == 1 and stats["probed"] == 1
    assert err < 1e-8


def test_grad_check_detects_wrong_rule():
    x = leaf([0.3, -0.7, 1.1])
    with corrupted_rule("exp"):
        err = G.grad_check(lambda: G.sum_(G.exp(x)), [x])
    assert err > 0.1


@given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
def test_elementwise_chain_matches_finite_differences(values):
    x = leaf(values)
    f = lambda: G.sum_(G.gelu(x) * G.exp(x * 0.5) + G.square(G.softmax(x, axis=-1)))
    assert G.grad_check(f, [x]) < 1e-4


@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 2), st.integers(1, 2))
def test_conv1d_gradients_any_geometry(kernel, stride, padding, dilation):
    rng = np.random.default_rng(kernel * 100 + stride * 10 + padding + dilation)
    x, w, b = leaf(rng.standard_normal((2, 2, 10))), leaf(rng.standard_normal((4, 1, kernel))), leaf(rng.standard_normal(4))
    r = rng.standard_normal(G.conv1d(x, w, b, stride, padding, dilation, groups=2).shape)
    f = lambda: G.sum_(G.conv1d(x, w, b, stride, padding, dilation, groups=2) * r)
    assert G.grad_check(f, [x, w, b]) < 1e-4


def test_float32_training_precision_and_switch():
    assert G.default_dtype() == np.float32
    with G.precision(np.float64):
        assert G.tensor([1.0]).dtype == np.float64
    assert G.tensor([1.0]).dtype == np.float32


# --- whole-suite audit --------------------------------------------------------
def test_every_registered_op_passes():
    results = run_checks([n for n in ("add", "mul", "matmul", "matmul_batched", "conv1d", "conv2d", "transpose",
                                      "reshape", "slice", "concat", "stack", "pad1d_reflect", "mean", "sum",
                                      "square", "sqrt", "exp", "log", "softmax", "gelu", "leaky_relu",
                                      "layer_norm", "avg_pool1d", "reciprocal", "neg_sub")])
    bad = [(r.name, r.rel_err) for r in results if not r.passed]
    assert not bad


# --- checkpoint container -------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a/w": rng.standard_normal((3, 4)).astype(np.float32), "b": np.float32(2.5) * np.ones(()),
              "c": rng.standard_normal(7).astype(np.float32)}
    G.save_arrays(tmp_path / "ck", arrays, {"step": 12})
    loaded, meta = G.load_arrays(tmp_path / "ck")
    assert meta == {"step": 12}
    for k, v in arrays.items():
        assert np.array_equal(loaded[k], v) and loaded[k].shape == np.shape(v)
    import json
    manifest = json.loads((tmp_path / "ck.json").read_text())
    offsets = [e["offset"] for e in manifest["entries"]]
    assert offsets == sorted(offsets) and offsets[0] == 0
    assert (tmp_path / "ck.bin").stat().st_size == 4 * (12 + 1 + 7)


def test_checkpoint_truncated_payload(tmp_path):
    G.save_arrays(tmp_path / "ck", {"w": np.ones(10, dtype=np.float32)})
    raw = (tmp_path / "ck.bin").read_bytes()
    (tmp_path / "ck.bin").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        G.load_arrays(tmp_path / "ck")
