"""Per-component contracts of the policy: stem resolution, multi-scale fusion,
action head affine map, loss gradient, and attention-row normalization."""

import numpy as np
import pytest

from deskgrasp import autodiff as ad
from deskgrasp.autodiff import Tape, Tensor
from deskgrasp.blocks import GuidedAttention
from deskgrasp.errors import DimensionError
from deskgrasp.gradcheck import grad_check
from deskgrasp.model import PolicyConfig, PolicyNet, mse_loss

SMALL = dict(height=32, width=32, base_channels=8, patch=2, spike_steps=2)


def _net(**over):
    kw = dict(SMALL)
    kw.update(over)
    return PolicyNet(PolicyConfig(**kw), seed=0)


# ----------------------------------------------------------------------- stem

def test_stem_quarters_resolution_64():
    net = _net(height=64, width=64)
    net.eval()
    out = net.stem(Tensor(np.random.default_rng(0).uniform(size=(2, 3, 64, 64))))
    assert out.data.shape == (2, 8, 16, 16)


def test_stem_quarters_resolution_128():
    net = _net(height=128, width=128)
    net.eval()
    out = net.stem(Tensor(np.random.default_rng(0).uniform(size=(1, 3, 128, 128))))
    assert out.data.shape == (1, 8, 32, 32)


def test_stem_gradient_check():
    net = _net()
    net.eval()
    x = np.random.default_rng(1).uniform(size=(2, 3, 32, 32))
    params = [net.stem_conv.weight, net.stem_conv.bias,
              net.stem_bn.gamma, net.stem_bn.beta]

    def f():
        return ad.mean_(ad.square(net.stem(Tensor(x))))

    assert grad_check(f, params, max_elems_per_param=25) <= 1e-4


def test_non_divisible_input_rejected_at_config():
    from deskgrasp.errors import ConfigurationError
    with pytest.raises(ConfigurationError, match="divisible by 32"):
        PolicyConfig(height=40, width=64).validate()


# --------------------------------------------------------------------- fusion

def _taps(net, seed=0):
    rng = np.random.default_rng(seed)
    h8 = net.config.height // 8
    return (Tensor(rng.normal(size=(2, 16, h8, h8))),
            Tensor(rng.normal(size=(2, 32, h8 // 2, h8 // 2))),
            Tensor(rng.normal(size=(2, 32, h8 // 4, h8 // 4))))


def test_fuse_one_zero_zero_is_projected_first_tap():
    net = _net()
    f1, f2, f3 = _taps(net)
    net.fuse_alpha.data[:] = [1.0, 0.0, 0.0]
    fused = net.fuse(f1, f2, f3)
    expected = net.fuse_proj1(f1)
    assert np.allclose(fused.data, expected.data, atol=1e-12)


def test_fuse_constant_inputs_linear_combination():
    net = _net()
    # zero the projections' weights so conv(constant) == bias (a constant map)
    for conv in (net.fuse_proj1, net.fuse_proj2):
        conv.weight.data[:] = 0.0
        conv.bias.data[:] = 0.0
    net.fuse_proj1.bias.data[:] = 2.0        # proj(F1) == 2 everywhere
    net.fuse_proj2.bias.data[:] = -1.0       # proj(up(F2)) == -1 everywhere
    net.fuse_alpha.data[:] = [0.5, 0.25, 2.0]
    f1, f2, f3 = _taps(net)
    f3 = Tensor(np.full_like(f3.data, 3.0))  # upsampling preserves constants
    fused = net.fuse(f1, f2, f3)
    expected = 0.5 * 2.0 + 0.25 * (-1.0) + 2.0 * 3.0
    assert np.allclose(fused.data, expected, atol=1e-12)


def test_fuse_alpha_gradient_matches_finite_differences():
    net = _net()
    f1, f2, f3 = _taps(net, seed=3)

    def f():
        return ad.mean_(ad.square(net.fuse(f1, f2, f3)))

    assert grad_check(f, [net.fuse_alpha]) <= 1e-6


def test_fuse_resolution_mismatch_rejected():
    net = _net()
    f1, f2, f3 = _taps(net)
    bad_f2 = Tensor(np.zeros((2, 32, 3, 3)))
    with pytest.raises(DimensionError, match="resolution"):
        net.fuse(f1, bad_f2, f3)


# ----------------------------------------------------------------------- head

def test_action_head_zero_weights_gives_bias():
    net = _net()
    net.eval()
    net.head_fc.weight.data[:] = 0.0
    net.head_fc.bias.data[:] = np.arange(6, dtype=np.float64)
    out = net(np.random.default_rng(0).uniform(size=(3, 3, 32, 32)))
    assert np.allclose(out.data, np.arange(6.0), atol=1e-12)


def test_action_head_output_dim_follows_config():
    net = _net(action_dim=4)
    net.eval()
    out = net(np.zeros((1, 3, 32, 32)))
    assert out.data.shape == (1, 4)


# ----------------------------------------------------------------------- loss

def test_loss_definition_points():
    assert mse_loss(Tensor(np.array([1.0, 2.0])), np.array([1.0, 2.0])).data == 0.0
    assert mse_loss(Tensor(np.zeros(2)), np.ones(2)).data == 1.0
    with pytest.raises(DimensionError):
        mse_loss(Tensor(np.zeros(3)), np.zeros(2))


def test_loss_gradient_is_two_residual_over_d():
    rng = np.random.default_rng(0)
    a = rng.normal(size=6)
    g = rng.normal(size=6)
    pred = ad.Parameter(a.copy(), "pred")
    with Tape() as tape:
        loss = mse_loss(pred, g)
    tape.backward(loss)
    assert np.allclose(pred.grad, 2.0 * (a - g) / 6.0, rtol=1e-12, atol=1e-15)

    def f():
        return mse_loss(pred, g)

    assert grad_check(f, [pred]) <= 1e-8


# ------------------------------------------------------------------ attention

def test_attention_rows_sum_to_one_via_constant_values():
    # If every attention row sums to exactly 1, constant value tokens pass
    # through unchanged no matter what the queries or the bias table contain.
    rng = np.random.default_rng(5)
    att = GuidedAttention(6, 4, 4, rng=rng)
    att.bias_table.data[:] = rng.normal(size=att.bias_table.data.shape) * 3.0
    qa = Tensor(rng.normal(size=(2, 6, 4, 4)))
    constant = rng.normal(size=(2, 6, 1, 1))
    fc = Tensor(np.broadcast_to(constant, (2, 6, 4, 4)).copy())
    out = att(qa, fc)
    v_const = att.v_conv(fc).data
    assert np.allclose(out.data, v_const, atol=1e-10)


def test_attention_rows_sum_to_one_explicit():
    rng = np.random.default_rng(6)
    att = GuidedAttention(4, 3, 3, rng=rng)
    att.bias_table.data[:] = rng.normal(size=att.bias_table.data.shape)
    qa = rng.normal(size=(1, 4, 3, 3))
    fc = rng.normal(size=(1, 4, 3, 3))
    q = att.q_conv(Tensor(qa)).data.reshape(1, 4, 9).transpose(0, 2, 1)
    k = att.k_conv(Tensor(fc)).data.reshape(1, 4, 9).transpose(0, 2, 1)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(4)
    bias = att.bias_table.data[att._bias_index]
    z = logits + bias[None]
    probs = np.exp(z - z.max(axis=-1, keepdims=True))
    probs /= probs.sum(axis=-1, keepdims=True)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-10)
    # and the module's output equals this explicit computation applied to V
    v = att.v_conv(Tensor(fc)).data.reshape(1, 4, 9).transpose(0, 2, 1)
    expected = (probs @ v).transpose(0, 2, 1).reshape(1, 4, 3, 3)
    assert np.allclose(att(Tensor(qa), Tensor(fc)).data, expected, atol=1e-10)
