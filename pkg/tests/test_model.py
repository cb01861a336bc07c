"""Whole-policy tests: config validation, determinism, batch composition,
and a sampled finite-difference check over every parameter tensor."""

import numpy as np
import pytest

from deskgrasp import autodiff as ad
from deskgrasp.autodiff import Parameter, Tape, Tensor
from deskgrasp.errors import ConfigurationError, DimensionError
from deskgrasp.gradcheck import grad_check
from deskgrasp.model import PolicyConfig, PolicyNet, mse_loss

SMALL = dict(height=32, width=32, base_channels=8, patch=2, spike_steps=2)


def small_config(**over):
    kw = dict(SMALL)
    kw.update(over)
    return PolicyConfig(**kw)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PolicyConfig(height=48).validate()
    with pytest.raises(ConfigurationError):
        PolicyConfig(base_channels=7).validate()
    with pytest.raises(ConfigurationError):
        PolicyConfig(base_channels=8, reduction=3).validate()
    with pytest.raises(ConfigurationError):
        PolicyConfig(wkv_mode="other").validate()
    with pytest.raises(ConfigurationError):
        PolicyConfig(spike_steps=0).validate()
    assert small_config().validate() is not None


def test_config_json_round_trip_and_digest():
    cfg = small_config(wkv_mode="static")
    d = cfg.to_json()
    back = PolicyConfig.from_json(d)
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert cfg.digest() != small_config().digest()
    with pytest.raises(ConfigurationError):
        PolicyConfig.from_json({"height": 32, "bogus": 1})


def test_forward_shape_and_input_validation():
    net = PolicyNet(small_config(), seed=0)
    net.eval()
    x = np.random.default_rng(0).uniform(0, 1, size=(3, 3, 32, 32))
    out = net(x)
    assert out.data.shape == (3, 6)
    with pytest.raises(DimensionError):
        net(np.zeros((1, 3, 64, 64)))
    with pytest.raises(DimensionError):
        net(np.zeros((3, 32, 32)))


def test_same_seed_same_outputs_different_seed_differs():
    cfg = small_config()
    x = np.random.default_rng(1).uniform(0, 1, size=(2, 3, 32, 32))
    a = PolicyNet(cfg, seed=7)
    b = PolicyNet(cfg, seed=7)
    c = PolicyNet(cfg, seed=8)
    a.eval(), b.eval(), c.eval()
    ya, yb, yc = a(x).data, b(x).data, c(x).data
    assert np.array_equal(ya, yb)
    assert not np.array_equal(ya, yc)
    # repeated forward of the same net is bit-stable
    assert np.array_equal(ya, a(x).data)


def test_eval_batch_composition_invariance():
    net = PolicyNet(small_config(), seed=3)
    net.eval()
    x = np.random.default_rng(2).uniform(0, 1, size=(4, 3, 32, 32))
    full = net(x).data
    for i in range(4):
        single = net(x[i:i + 1]).data[0]
        assert np.max(np.abs(full[i] - single)) <= 1e-10


def test_parameter_names_unique_and_counted():
    net = PolicyNet(small_config(), seed=0)
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    total = sum(p.data.size for p in net.parameters())
    assert total == net.parameter_count()
    assert total > 100_000


def test_spike_mode_propagates():
    net = PolicyNet(small_config(), seed=0)
    net.set_spike_mode("smooth")
    for st in net.stages:
        for blk in st.blocks:
            assert blk.sdfe.spike_mode == "smooth"


def test_mse_loss():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = np.array([[1.0, 1.0], [3.0, 2.0]])
    assert float(mse_loss(a, b).data) == pytest.approx((0 + 1 + 0 + 4) / 4)
    with pytest.raises(DimensionError):
        mse_loss(a, np.zeros(3))


def test_training_gradients_flow_to_all_used_parameters():
    # default-size patches keep every stage's decay convs on the graph only
    # when the patch grid has more than one token; at 32x32 with patch=2 the
    # last stage has a single token and its decay convs legitimately idle
    net = PolicyNet(small_config(), seed=0)
    x = np.random.default_rng(3).uniform(0, 1, size=(2, 3, 32, 32))
    tgt = np.random.default_rng(4).standard_normal((2, 6))
    net.zero_grad()
    with Tape() as t:
        loss = mse_loss(net(x), tgt)
        t.backward(loss)
    missing = [n for n, p in net.named_parameters() if p.grad is None]
    for name in missing:
        assert "decay_conv" in name and "stages.2" in name, name


def test_full_model_sampled_gradient_check():
    net = PolicyNet(small_config(), seed=5)
    net.eval()
    net.set_spike_mode("smooth")
    x = np.random.default_rng(5).uniform(0, 1, size=(1, 3, 32, 32))
    tgt = np.random.default_rng(6).standard_normal((1, 6))
    params = [p for _, p in net.named_parameters()]

    def f():
        return mse_loss(net(x), tgt)

    # h = 1e-3: deep parameters carry gradients down to ~1e-9 while the loss
    # is O(1), so smaller steps drown the difference signal in round-off
    err = grad_check(f, params, h=1e-3, max_elems_per_param=1,
                     rng=np.random.default_rng(0))
    assert err <= 1e-3
