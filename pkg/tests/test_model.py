"""Fusion head and the assembled model pipeline."""

import numpy as np
import pytest

import gmic.tensor as T
from gmic.model import GMIC
from gmic.networks import DESK, NetworkConfig
from gmic.seeding import rng_for
from gmic.tensor import Tensor, finite_difference_check
from gmic.training import total_loss

MICRO = NetworkConfig(
    input_height=32, input_width=32, downsample_factor=8,
    first_conv=(3, 2, 1), stage_strides=(2, 2, 1, 1, 1),
    block_channels=(4, 6, 6, 8, 8), blocks_per_stage=(1, 1, 1, 1, 1),
    local_channels=(4, 6, 6, 8), local_first_conv=(3, 2, 1),
    patch_size=8, num_patches=2, embed_dim=8, attention_dim=4,
)


@pytest.fixture(scope="module")
def micro_model():
    return GMIC(MICRO, pool_fraction=0.2, seed=0)


def test_fusion_zero_features_and_weights_give_half(rng):
    model = GMIC(MICRO, pool_fraction=0.2, seed=0)
    model.fusion_head.weight.data[...] = 0.0
    model.fusion_head.bias.data[...] = 0.0
    gmp = Tensor(np.zeros((1, 8), dtype=np.float32))
    z = Tensor(np.zeros((1, 8), dtype=np.float32))
    out = T.sigmoid(model.fusion_head(T.concat([gmp, z], axis=1)))
    np.testing.assert_array_equal(out.data, [[0.5, 0.5]])


def test_fusion_input_width_desk():
    model = GMIC(DESK, pool_fraction=0.03, seed=0)
    assert model.fusion_head.weight.shape == (48 + 128, 2)


def test_fusion_head_gradient_check(rng):
    h_g = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
    z = Tensor(rng.normal(size=(2, 5)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.normal(size=(8, 2)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.normal(size=2), requires_grad=True, dtype=np.float64)
    target = rng.normal(size=(2, 2))

    def fn(hh, zz, ww, bb):
        fused = T.concat([T.global_max_pool(hh), zz], axis=1)
        out = T.sigmoid(T.linear(fused, ww, bb))
        return T.sum_all(T.mul(out, target))

    assert finite_difference_check(fn, [h_g, z, w, b]) < 1e-4


def test_forward_outputs_in_unit_interval(micro_model, rng):
    x = rng.normal(size=(3, 1, 32, 32)).astype(np.float32)
    out = micro_model.forward(x)
    for head in (out.y_global, out.y_local, out.y_fusion):
        assert head.shape == (3, 2)
        assert np.all(head.data >= 0.0) and np.all(head.data <= 1.0)
    assert out.saliency.shape == (3, 2, 4, 4)
    assert out.alpha.shape == (3, 2)
    np.testing.assert_allclose(out.alpha.data.sum(axis=1), 1.0, atol=1e-6)


def test_forward_deterministic(micro_model, rng):
    x = rng.normal(size=(2, 1, 32, 32)).astype(np.float32)
    with T.no_grad():
        a = micro_model.forward(x)
        b = micro_model.forward(x)
    np.testing.assert_array_equal(a.y_fusion.data, b.y_fusion.data)
    np.testing.assert_array_equal(a.saliency.data, b.saliency.data)
    assert [(w.grid_row, w.grid_col) for w in a.windows[0]] == [
        (w.grid_row, w.grid_col) for w in b.windows[0]]


def test_batch_permutation_equivariance_eval_mode(micro_model, rng):
    x = rng.normal(size=(4, 1, 32, 32)).astype(np.float32)
    perm = np.array([2, 0, 3, 1])
    with T.no_grad():
        out = micro_model.forward(x)
        out_p = micro_model.forward(x[perm])
    np.testing.assert_array_equal(out_p.y_fusion.data, out.y_fusion.data[perm])
    np.testing.assert_array_equal(out_p.y_global.data, out.y_global.data[perm])


def test_gradients_reach_both_branches(micro_model, rng):
    x = rng.normal(size=(2, 1, 32, 32)).astype(np.float32)
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = micro_model.forward(x, training=True)
    loss = total_loss(out, y, reg_weight=1e-4)
    micro_model.zero_grad()
    loss.backward()
    params = micro_model.parameters()
    g_global = params["global.conv1.weight"].grad
    g_local = params["local.conv1.weight"].grad
    assert g_global is not None and np.abs(g_global).max() > 0
    assert g_local is not None and np.abs(g_local).max() > 0
    assert params["fusion_head.weight"].grad is not None
    assert params["attention.V"].grad is not None


def test_fusion_responds_to_both_branches(micro_model, rng):
    """Perturbing either the pooled global features or the patch
    representation moves the fusion output."""
    gmp = rng.normal(size=(1, 8)).astype(np.float32)
    z = rng.normal(size=(1, 8)).astype(np.float32)

    def fuse(g, zz):
        with T.no_grad():
            return T.sigmoid(micro_model.fusion_head(
                T.concat([Tensor(g), Tensor(zz)], axis=1))).data.copy()

    base = fuse(gmp, z)
    assert not np.array_equal(fuse(gmp + 0.5, z), base)
    assert not np.array_equal(fuse(gmp, z + 0.5), base)


def test_end_to_end_gradient_check_micro():
    """Finite differences through the full loss for a sample of
    parameters at 64-bit (rel. err < 1e-3)."""
    model = GMIC(MICRO, pool_fraction=0.2, seed=1, dtype=np.float64)
    rng = rng_for(1, "fdcheck")
    x = rng.normal(size=(2, 1, 32, 32))
    y = np.array([[1.0, 0.0], [0.0, 1.0]])

    params = model.parameters()
    names = sorted(params)
    chosen = [names[i] for i in rng.choice(len(names), size=6, replace=False)]

    def loss_value():
        out = model.forward(x, training=True)
        return total_loss(out, y, reg_weight=1e-4)

    loss = loss_value()
    model.zero_grad()
    loss.backward()
    worst = 0.0
    for name in chosen:
        p = params[name]
        flat = p.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        analytic = p.grad.reshape(-1)[idx]
        orig = flat[idx]
        h = 1e-5 * max(1.0, abs(orig))
        flat[idx] = orig + h
        with T.no_grad():
            fp = loss_value().item()
        flat[idx] = orig - h
        with T.no_grad():
            fm = loss_value().item()
        flat[idx] = orig
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
    assert worst < 1e-3


def test_ablation_switches(micro_model, rng):
    x = rng.normal(size=(2, 1, 32, 32)).astype(np.float32)
    with T.no_grad():
        uniform = micro_model.forward(x, attention_mode="uniform")
        random_patches = micro_model.forward(x, patch_mode="random", patch_rng=np.random.default_rng(0))
        k1 = micro_model.forward(x, num_patches=1)
    np.testing.assert_array_equal(uniform.alpha.data, 0.5)
    assert random_patches.y_local.shape == (2, 2)
    assert k1.alpha.shape == (2, 1)
    np.testing.assert_array_equal(k1.alpha.data, 1.0)


def test_state_roundtrip(micro_model, rng):
    from gmic.checkpoint import load_checkpoint, save_checkpoint
    x = rng.normal(size=(2, 1, 32, 32)).astype(np.float32)
    with T.no_grad():
        before = micro_model.forward(x).y_fusion.data.copy()
    save_checkpoint("/tmp/model_state.ckpt", {"network": {}, "pool_fraction": 0.2}, micro_model.state())
    _, arrays = load_checkpoint("/tmp/model_state.ckpt")
    fresh = GMIC(MICRO, pool_fraction=0.2, seed=123)
    fresh.load_state(arrays)
    with T.no_grad():
        after = fresh.forward(x).y_fusion.data.copy()
    np.testing.assert_array_equal(before, after)
