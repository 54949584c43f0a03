import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stanet.autograd import Tensor
from stanet.stfa import (StfaBatch, StfaConfig, aggregate, aggregate_batch, conv2d_same, feature_layout,
                         init_params, maxpool, param_shapes)


def naive_conv(img, k, b):
    H, W = img.shape
    n = k.shape[0]
    p = n // 2
    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            s = b
            for i in range(n):
                for j in range(n):
                    yy, xx = y + i - p, x + j - p
                    if 0 <= yy < H and 0 <= xx < W:
                        s += k[i, j] * img[yy, xx]
            out[y, x] = s
    return out


def naive_pool(img, w=6):
    H, W = img.shape
    return np.array([[img[r:r + w, c:c + w].max() for c in range(0, W, w)] for r in range(0, H, w)])


def reference_feature(tc, Q, cfg, params):
    """Per-kernel loops over conv2d_same + ReLU + maxpool, laid out by hand."""
    steps = math.ceil(tc.shape[0] / cfg.pool[0])
    cols = []
    for branch in cfg.active_branches:
        img = tc if branch == "temporal" else Q
        for k in cfg.scales:
            W = params[f"stfa.{branch}.k{k}.weight"]
            b = params[f"stfa.{branch}.k{k}.bias"]
            for f in range(cfg.filters_per_scale):
                pooled = maxpool(np.maximum(conv2d_same(img, W[f], b[f]), 0.0), cfg.pool)
                if branch == "temporal":
                    cols.append(pooled)
                else:
                    cols.append(np.repeat(pooled.ravel()[None], steps, axis=0))
    return np.concatenate(cols, axis=1)


def test_conv_interior_of_constant_field():
    out = conv2d_same(np.ones((8, 8)), np.ones((3, 3)))
    np.testing.assert_array_equal(out[1:-1, 1:-1], 9.0)
    assert out[0, 0] == 4.0


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((5, 6))
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    np.testing.assert_allclose(conv2d_same(x, k, 0.5), x + 0.5)


def test_conv_matches_naive(rng):
    x, k = rng.standard_normal((7, 9)), rng.standard_normal((5, 5))
    np.testing.assert_allclose(conv2d_same(x, k, 0.3), naive_conv(x, k, 0.3), atol=1e-12)


def test_conv_even_kernel_rejected():
    with pytest.raises(ValueError):
        conv2d_same(np.ones((4, 4)), np.ones((2, 2)))


def test_maxpool_cases(rng):
    np.testing.assert_array_equal(maxpool(np.full((13, 7), 2.5)), np.full((3, 2), 2.5))
    x = np.zeros((6, 6))
    x[3, 4] = 7.0
    np.testing.assert_array_equal(maxpool(x), [[7.0]])
    r = rng.standard_normal((13, 14))
    np.testing.assert_array_equal(maxpool(r), naive_pool(r))
    assert maxpool(rng.standard_normal((4, 3))).shape == (1, 1)


def test_maxpool_empty_rejected():
    with pytest.raises(ValueError):
        maxpool(np.zeros((0, 3)))


def test_layout_arithmetic():
    cfg = StfaConfig()
    layout = feature_layout(cfg, 8, 10)
    # temporal: 95 x 8 pools to 16 x 2; spatial: 8 x 10 pools to 2 x 2 = 4 values
    assert len(layout) == 2 * 5 * 4
    assert sum(e.width for e in layout if e.branch == "temporal") == 5 * 4 * 2
    assert sum(e.width for e in layout if e.branch == "spatial") == 5 * 4 * 4
    offsets = [e.offset for e in layout]
    assert offsets == sorted(offsets) and offsets[0] == 0


def test_zero_params_give_zero_feature(rng):
    cfg = StfaConfig()
    params = {k: np.zeros(s) for k, s in param_shapes(cfg).items()}
    f = aggregate(rng.standard_normal((95, 8)), rng.standard_normal((8, 10)), cfg, params)
    assert f.data.shape == (16, 120)
    np.testing.assert_array_equal(f.data, 0.0)


def test_temporal_only_has_16_steps(rng):
    cfg = StfaConfig(branches="temporal-only")
    params = init_params(cfg, rng)
    f = aggregate(rng.standard_normal((95, 8)), rng.standard_normal((8, 10)), cfg, params)
    assert f.data.shape == (16, 40)
    assert {e.branch for e in f.layout} == {"temporal"}


def test_single_scale_override(rng):
    cfg = StfaConfig(single_scale_override=7)
    params = init_params(cfg, rng)
    f = aggregate(rng.standard_normal((30, 5)), rng.standard_normal((5, 4)), cfg, params)
    assert {e.kernel for e in f.layout} == {7}


def test_matches_reference_composition(rng):
    cfg = StfaConfig()
    params = init_params(cfg, rng)
    params = {k: v + (0.1 if k.endswith("bias") else 0) for k, v in params.items()}
    tc, Q = rng.standard_normal((23, 7)), rng.standard_normal((7, 9))
    f = aggregate(tc, Q, cfg, params)
    np.testing.assert_allclose(f.data, reference_feature(tc, Q, cfg, params), atol=1e-12)
    assert np.all(f.data >= 0)


def test_batch_equals_per_subject(rng):
    cfg = StfaConfig()
    params = init_params(cfg, rng)
    tc, Q = rng.standard_normal((4, 20, 6)), rng.standard_normal((4, 6, 5))
    out = aggregate_batch(StfaBatch(tc, Q, cfg), params).data
    for i in range(4):
        np.testing.assert_allclose(out[i], aggregate(tc[i], Q[i], cfg, params).data, atol=1e-12)


def test_subset_matches_fresh_batch(rng):
    cfg = StfaConfig()
    params = init_params(cfg, rng)
    tc, Q = rng.standard_normal((5, 14, 6)), rng.standard_normal((5, 6, 5))
    full = StfaBatch(tc, Q, cfg)
    idx = np.array([4, 1, 2])
    np.testing.assert_array_equal(aggregate_batch(full.subset(idx), params).data,
                                  aggregate_batch(StfaBatch(tc[idx], Q[idx], cfg), params).data)


def test_kernel_perturbation_is_local(rng):
    cfg = StfaConfig()
    params = init_params(cfg, rng)
    tc, Q = rng.standard_normal((20, 6)), rng.standard_normal((6, 5))
    base = aggregate(tc, Q, cfg, params)
    bumped = dict(params)
    w = params["stfa.spatial.k5.weight"].copy()
    w[2] += 0.5
    bumped["stfa.spatial.k5.weight"] = w
    new = aggregate(tc, Q, cfg, bumped)
    changed = np.flatnonzero(np.any(new.data != base.data, axis=0))
    entry = next(e for e in base.layout if (e.branch, e.kernel, e.filter) == ("spatial", 5, 2))
    assert set(changed) <= set(range(entry.offset, entry.offset + entry.width))


def test_shape_mismatch_rejected(rng):
    cfg = StfaConfig()
    params = init_params(cfg, rng)
    params["stfa.temporal.k3.weight"] = np.zeros((4, 5, 5))
    with pytest.raises(ValueError):
        aggregate(rng.standard_normal((12, 4)), rng.standard_normal((4, 3)), cfg, params)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_aggregate_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    cfg = StfaConfig(kernel_sizes=(3, 5), filters_per_scale=2)
    params = {k: v + 0.05 for k, v in init_params(cfg, r).items()}
    batch = StfaBatch(r.standard_normal((2, 13, 5)), r.standard_normal((2, 5, 4)), cfg)
    probe = r.standard_normal(aggregate_batch(batch, params).shape)

    def loss(p):
        return float(np.sum(aggregate_batch(batch, p).data * probe))

    P = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    (aggregate_batch(batch, P) * probe).sum().backward()
    h = 1e-5
    for name, v in params.items():
        for idx in np.ndindex(v.shape):
            up, dn = dict(params), dict(params)
            up[name] = v.copy()
            up[name][idx] += h
            dn[name] = v.copy()
            dn[name][idx] -= h
            fd = (loss(up) - loss(dn)) / (2 * h)
            an = P[name].grad[idx]
            assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-3), (name, idx, fd, an)


@settings(max_examples=10, deadline=None)
@given(T=st.integers(1, 20), N=st.integers(1, 9), R=st.integers(1, 9))
def test_layout_width_matches_output(T, N, R):
    cfg = StfaConfig(kernel_sizes=(3,), filters_per_scale=1)
    r = np.random.default_rng(T * 100 + N * 10 + R)
    f = aggregate(r.standard_normal((T, N)), r.standard_normal((N, R)), cfg, init_params(cfg, r))
    assert f.data.shape == (math.ceil(T / 6), sum(e.width for e in f.layout))
    assert np.all(f.data >= 0)
