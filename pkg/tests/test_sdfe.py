"""Masked spatial attention and spiking neuron tests, including frozen
hand-iterated membrane traces."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskgrasp import autodiff as ad
from deskgrasp.autodiff import Parameter, Tensor
from deskgrasp.errors import ConfigurationError, DimensionError
from deskgrasp.gradcheck import grad_check
from deskgrasp.sdfe import (
    SDFE,
    AdaptiveTau,
    DenseBlock,
    attend,
    centering_matrix,
    spatial_mask,
    spike_fn,
    spike_neuron_step,
)


def mask_oracle(tokens):
    """Triple-loop X_k for one (n, c') token matrix."""
    n, cp = tokens.shape
    x = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            dot = 0.0
            si = 0.0
            sj = 0.0
            for cc in range(cp):
                dot += tokens[i, cc] * tokens[j, cc]
                si += tokens[i, cc]
                sj += tokens[j, cc]
            x[i, j] = (dot - si * sj / n) / n
    return x


def test_spatial_mask_matches_oracle_and_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(12):
        n = int(rng.integers(1, 17))
        cp = int(rng.integers(1, 5))
        tokens = rng.standard_normal((1, n, cp))
        x = spatial_mask(Tensor(tokens), n).data[0]
        ref = mask_oracle(tokens[0])
        assert np.max(np.abs(x - ref)) <= 1e-12
        assert np.max(np.abs(x - x.T)) <= 1e-12


def test_spatial_mask_map_input_equals_token_input():
    rng = np.random.default_rng(1)
    b, cp, h, w = 2, 3, 4, 5
    m = rng.standard_normal((b, cp, h, w))
    from_map = spatial_mask(Tensor(m)).data
    tokens = np.transpose(m.reshape(b, cp, h * w), (0, 2, 1))
    from_tokens = spatial_mask(Tensor(tokens)).data
    assert np.max(np.abs(from_map - from_tokens)) <= 1e-12


def test_centering_matrix_values():
    n = 12
    ibar = centering_matrix(3, n)
    assert np.allclose(ibar, (np.eye(3) - np.ones((3, 3)) / n) / n)


def test_attend_zero_mask_gives_column_mean():
    rng = np.random.default_rng(2)
    n, cp = 7, 3
    d = rng.standard_normal((1, n, cp))
    out = attend(np.zeros((1, n, n)), d).data[0]
    assert np.max(np.abs(out - d[0].mean(axis=0))) <= 1e-12


def test_attend_single_token_is_identity():
    d = np.array([[[1.5, -2.0, 0.25]]])
    out = attend(np.zeros((1, 1, 1)), d).data
    assert np.array_equal(out, d)


def test_attend_shape_mismatch():
    with pytest.raises(DimensionError):
        attend(np.zeros((1, 4, 4)), np.zeros((1, 5, 3)))


# Hand-iterated trace, u_th=1, tau=2, v_reset=0, dt=1, H_0=0, X_t=0.4.
# The drive never reaches threshold within four steps.
TRACE_SUB = {
    "V": [0.4, 0.6426122638850534, 0.7897640403536303, 0.8790161044130023],
    "S": [0.0, 0.0, 0.0, 0.0],
    "H": [0.2426122638850534, 0.3897640403536303, 0.47901610441300224,
          0.5331502177076474],
}
# Same neuron, X_t=0.6: fires at t=2 (0-based), resets, recovers.
TRACE_FIRE = {
    "V": [0.6, 0.9639183958275801, 1.1846460605304454, 0.6],
    "S": [0.0, 0.0, 1.0, 0.0],
    "H": [0.36391839582758007, 0.5846460605304454, 0.0, 0.36391839582758007],
}


@pytest.mark.parametrize("drive,trace", [(0.4, TRACE_SUB), (0.6, TRACE_FIRE)])
def test_spike_neuron_frozen_trace(drive, trace):
    h = Tensor(np.zeros((1, 1, 1, 1)))
    for t in range(4):
        s, h, v = spike_neuron_step(h, np.full((1, 1, 1, 1), drive), 2.0)
        assert abs(v.data.item() - trace["V"][t]) <= 1e-15, t
        assert s.data.item() == trace["S"][t], t
        assert abs(h.data.item() - trace["H"][t]) <= 1e-15, t


def test_spike_invariants_random_steps():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((10, 4, 3, 3))
    for _ in range(100):  # 100 steps x 360 neurons = 36k checks
        x = rng.standard_normal((10, 4, 3, 3))
        tau = rng.uniform(0.5, 5.0, size=10)
        s, hn, v = spike_neuron_step(Tensor(h), Tensor(x), Tensor(tau),
                                     u_th=0.8, v_reset=0.1)
        sd, hd, vd = s.data, hn.data, v.data
        assert np.all((sd == 0.0) | (sd == 1.0))
        assert np.array_equal(sd, (vd >= 0.8).astype(float))
        fired = sd == 1.0
        assert np.allclose(hd[fired], 0.1)
        decay = np.exp(-1.0 / tau)[:, None, None, None]
        expect = (vd * np.broadcast_to(decay, vd.shape))[~fired]
        assert np.allclose(hd[~fired], expect)
        h = hd


@given(st.floats(0.2, 3.0), st.floats(-1.0, 2.0), st.floats(0.5, 4.0))
@settings(max_examples=60, deadline=None)
def test_spike_count_monotone_in_threshold(u_lo, drive, tau):
    def count(u_th):
        h = Tensor(np.zeros((1, 1, 1, 1)))
        total = 0.0
        for _ in range(8):
            s, h, _ = spike_neuron_step(h, np.full((1, 1, 1, 1), drive), tau, u_th=u_th)
            total += s.data.item()
        return total

    assert count(u_lo) >= count(u_lo + 0.7)


def test_spike_tau_validation_and_shapes():
    with pytest.raises(ConfigurationError):
        spike_neuron_step(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), 0.0)
    with pytest.raises(ConfigurationError):
        spike_neuron_step(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), -2.0)
    with pytest.raises(DimensionError):
        spike_neuron_step(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 1, 1)), 1.0)


def test_spike_surrogate_gradient_binary_and_smooth_agree():
    rng = np.random.default_rng(3)
    vals = rng.standard_normal(50)
    for mode in ("binary", "smooth"):
        p = Parameter(vals.copy(), "v")
        with ad.Tape() as t:
            y = ad.sum_(spike_fn(p, alpha=4.0, mode=mode))
            t.backward(y)
        sig = 1.0 / (1.0 + np.exp(-4.0 * vals))
        assert np.allclose(p.grad, 4.0 * sig * (1 - sig))


def test_spike_smooth_mode_finite_difference():
    rng = np.random.default_rng(4)
    p = Parameter(rng.standard_normal(20), "v")

    def f():
        return ad.mean_(ad.square(spike_fn(p, mode="smooth")))

    assert grad_check(f, [p]) <= 1e-4


def test_adaptive_tau_zero_weights_value():
    rng = np.random.default_rng(5)
    at = AdaptiveTau(8, 2, rng=rng)
    for p in at.parameters():
        p.assign(np.zeros_like(p.data))
    out = at(Tensor(rng.standard_normal((3, 8, 4, 4)))).data
    assert out.shape == (3,)
    expected = np.log(2.0) + 0.1  # softplus(0) + 0.1
    assert np.max(np.abs(out - expected)) <= 1e-15
    assert abs(expected - 0.7931471805599453) <= 1e-15


def test_adaptive_tau_is_per_sample():
    rng = np.random.default_rng(6)
    at = AdaptiveTau(4, 2, rng=rng)
    x = rng.standard_normal((2, 4, 3, 3))
    both = at(Tensor(x)).data
    one = at(Tensor(x[:1])).data
    assert np.allclose(both[0], one[0])
    assert np.all(both > 0.1)


def test_huge_threshold_silences_spike_readout():
    rng = np.random.default_rng(8)
    sdfe = SDFE(8, reduction=4, spike_steps=4, u_th=1e9, rng=rng)
    sdfe.eval()
    fk = Tensor(rng.standard_normal((2, 32, 4, 4)))
    readout = sdfe._spike_readout(fk).data
    assert np.array_equal(readout, np.zeros_like(readout))


def test_dense_block_shape_and_grads():
    rng = np.random.default_rng(9)
    blk = DenseBlock(4, rng=rng)
    x = Parameter(rng.standard_normal((2, 4, 5, 5)), "x")
    out = blk(x)
    assert out.data.shape == (2, 16, 5, 5)

    def f():
        return ad.mean_(ad.square(blk(x)))

    assert grad_check(f, [x], max_elems_per_param=4, rng=np.random.default_rng(0)) <= 1e-4


def test_sdfe_forward_shapes_and_mask_cap():
    rng = np.random.default_rng(10)
    sdfe = SDFE(8, reduction=4, rng=rng)
    sdfe.eval()
    x = Tensor(rng.standard_normal((2, 8, 8, 8)) * 0.3)
    out = sdfe(x)
    assert out.data.shape == (2, 8, 8, 8)

    capped = SDFE(8, reduction=4, mask_cap=16, rng=np.random.default_rng(10))
    capped.eval()
    out2 = capped(x)  # 8x8=64 tokens pooled down to 4x4=16
    assert out2.data.shape == (2, 8, 8, 8)
    assert not np.allclose(out.data, out2.data)


def test_sdfe_gradients_smooth_mode():
    rng = np.random.default_rng(11)
    sdfe = SDFE(4, reduction=4, spike_steps=2, rng=rng)
    sdfe.eval()
    sdfe.spike_mode = "smooth"
    x = Parameter(rng.standard_normal((1, 4, 4, 4)) * 0.5, "x")
    params = [x] + list(sdfe.parameters())

    def f():
        return ad.mean_(ad.square(sdfe(x)))

    assert grad_check(f, params, max_elems_per_param=2,
                      rng=np.random.default_rng(1)) <= 1e-3


def test_sdfe_rejects_bad_reduction():
    with pytest.raises(ConfigurationError):
        SDFE(6, reduction=4, rng=np.random.default_rng(0))
