"""WKV recurrence vs an independent closed-form evaluation.

The scan computes the recurrence in O(L); the reference below evaluates the
unrolled form directly, collapsing each decay product into exp(-sum W) so the
two routes share no intermediate arithmetic.
"""

import time

import numpy as np
import pytest

from deskgrasp import autodiff as ad
from deskgrasp.autodiff import Parameter, Tensor
from deskgrasp.errors import DimensionError, NumericError
from deskgrasp.gradcheck import grad_check
from deskgrasp.wkv import KEY_FLOOR, wkv_scan


def wkv_closed_form(k, v, w, u):
    """O(L^2) unrolled evaluation for stabilized keys k, one sequence."""
    length, c = k.shape
    out = np.zeros((length, c))
    bonus = np.exp(u)
    for i in range(length):
        num = np.zeros(c)
        den = np.zeros(c)
        for j in range(i + 1):
            g = np.exp(-w[j + 1:i + 1].sum(axis=0))  # empty sum -> weight 1
            num += g * k[j] * v[j]
            den += g * k[j]
        num += bonus * k[i] * v[i]
        den += bonus * k[i]
        out[i] = num / den
    return out


def stabilize(k):
    return np.logaddexp(0.0, k) + KEY_FLOOR


def test_scan_matches_closed_form_200_instances():
    rng = np.random.default_rng(42)
    start = time.monotonic()
    for case in range(200):
        length = int(rng.integers(1, 17))
        c = int(rng.integers(1, 9))
        k = rng.standard_normal((length, c)) * 2.0
        v = rng.standard_normal((length, c)) * 3.0
        w = rng.uniform(0.0, 3.0, size=(length, c))
        u = rng.uniform(0.05, 0.95, size=c)
        got = wkv_scan(k, v, w, u).data
        ref = wkv_closed_form(stabilize(k), v, w, u)
        err = np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0))
        assert err <= 1e-9, (case, err)
    assert time.monotonic() - start < 10.0


def test_scan_batched_matches_per_sequence():
    rng = np.random.default_rng(3)
    b, length, c = 4, 9, 5
    k = rng.standard_normal((b, length, c))
    v = rng.standard_normal((b, length, c))
    w = rng.uniform(0.1, 2.0, size=(b, length, c))
    u = rng.uniform(0.1, 0.9, size=c)
    got = wkv_scan(k, v, w, u).data
    for i in range(b):
        single = wkv_scan(k[i], v[i], w[i], u).data
        assert np.array_equal(got[i], single)
        ref = wkv_closed_form(stabilize(k[i]), v[i], w[i], u)
        assert np.max(np.abs(got[i] - ref)) <= 1e-9


def test_first_output_is_first_value():
    rng = np.random.default_rng(8)
    for _ in range(20):
        length, c = int(rng.integers(1, 10)), int(rng.integers(1, 6))
        k = rng.standard_normal((length, c))
        v = rng.standard_normal((length, c))
        w = rng.uniform(0.0, 2.0, size=(length, c))
        u = rng.uniform(0.1, 0.9, size=c)
        out = wkv_scan(k, v, w, u).data
        assert np.max(np.abs(out[0] - v[0])) <= 1e-12


def test_constant_values_are_a_fixed_point():
    # every output is a convex combination of the values, so a constant
    # value sequence must pass through unchanged
    rng = np.random.default_rng(5)
    length, c = 16, 4
    k = rng.standard_normal((length, c))
    w = rng.uniform(0.0, 2.0, size=(length, c))
    u = rng.uniform(0.1, 0.9, size=c)
    vstar = rng.standard_normal(c)
    v = np.broadcast_to(vstar, (length, c)).copy()
    out = wkv_scan(k, v, w, u).data
    assert np.max(np.abs(out - vstar)) <= 1e-9


def test_raw_keys_denominator_guard_names_patch_index():
    length, c = 4, 2
    k = np.ones((length, c))
    k[2] = 0.0  # with decayed history still positive this alone won't trip
    v = np.ones((length, c))
    w = np.full((length, c), 50.0)  # crush the history so step 2 has ~zero den
    u = np.full(c, 0.5)
    with pytest.raises(NumericError) as e:
        wkv_scan(k, v, w, u, raw_keys=True)
    assert "patch index 2" in str(e.value)


def test_u_validation():
    k = np.ones((3, 2))
    v = np.ones((3, 2))
    w = np.ones((3, 2))
    with pytest.raises(NumericError):
        wkv_scan(k, v, w, np.array([0.5, 1.0]))
    with pytest.raises(NumericError):
        wkv_scan(k, v, w, np.array([0.0, 0.5]))
    with pytest.raises(DimensionError):
        wkv_scan(k, v, w, np.array([0.5, 0.5, 0.5]))
    with pytest.raises(DimensionError):
        wkv_scan(k, v[:2], w, np.array([0.5, 0.5]))


def test_scan_gradients():
    rng = np.random.default_rng(11)
    length, c = 6, 3
    k = Parameter(rng.standard_normal((length, c)), "k")
    v = Parameter(rng.standard_normal((length, c)), "v")
    w = Parameter(rng.uniform(0.2, 1.5, size=(length, c)), "w")
    u = Parameter(rng.uniform(0.3, 0.7, size=c), "u")
    tgt = rng.standard_normal((length, c))

    def f():
        return ad.mean_(ad.square(ad.sub(wkv_scan(k, v, w, u), tgt)))

    assert grad_check(f, [k, v, w, u]) <= 1e-4


def test_raw_keys_gradients():
    rng = np.random.default_rng(13)
    length, c = 5, 2
    k = Parameter(rng.uniform(0.5, 2.0, size=(length, c)), "k")
    v = Parameter(rng.standard_normal((length, c)), "v")
    w = Parameter(rng.uniform(0.2, 1.0, size=(length, c)), "w")
    u = Parameter(np.full(c, 0.4), "u")

    def f():
        return ad.mean_(ad.square(wkv_scan(k, v, w, u, raw_keys=True)))

    assert grad_check(f, [k, v, w, u]) <= 1e-4
