import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (GRAD_SHAPES, grad_check, grad_check_problem, scalar_attention, scalar_fgru_step,
                     scalar_forward)
from stanet.afgru import (ABLATIONS, AfgruConfig, AfgruModel, FgruParams, NumericError, TrainConfig,
                          TrainingError, TrainingSet, adaptive_weight_update, apply_ablation, attention_pool,
                          fgru_step, forward, init_model, loss_and_grads, param_shapes, predict, round_schedule,
                          train)
from stanet.stfa import StfaBatch, StfaConfig, aggregate

TINY_STFA = StfaConfig(kernel_sizes=(3,), filters_per_scale=1)


def random_params(r, h, d, scale=0.5):
    return FgruParams(*(scale * r.standard_normal((h, h + d)) for _ in range(3)),
                      *(scale * r.standard_normal(h) for _ in range(3)))


def tiny_model(seed=0, **kw):
    cfg = AfgruConfig(hidden_size=3, **kw)
    m = init_model(TINY_STFA, cfg, 3, 2, seed=seed)
    r = np.random.default_rng(seed + 100)
    m.params = {k: np.asarray(v + 0.2 * r.standard_normal(v.shape)) for k, v in m.params.items()}
    return m


def tiny_batch(seed=0, B=4, T=9):
    r = np.random.default_rng(seed)
    return StfaBatch(r.standard_normal((B, T, 3)), r.standard_normal((B, 3, 2)), TINY_STFA)


# --- single step ------------------------------------------------------------
def test_fgru_zero_weights():
    p = FgruParams(*(np.zeros((2, 5)) for _ in range(3)))
    s = fgru_step(np.array([1.0, -2.0, 3.0]), np.array([0.4, -1.0]), p)
    np.testing.assert_array_equal(s.z, 0.5)
    np.testing.assert_array_equal(s.r, 0.5)
    np.testing.assert_array_equal(s.h_tilde, 0.0)
    np.testing.assert_array_equal(s.h, [0.2, -0.5])


def test_fgru_zero_state_zero_candidate(rng):
    p = random_params(rng, 3, 4)
    p.W[:] = 0.0
    p.b[:] = 0.0
    s = fgru_step(rng.standard_normal(4), np.zeros(3), p)
    np.testing.assert_array_equal(s.h, 0.0)


@pytest.mark.parametrize("use_fft", [True, False])
def test_fgru_matches_scalar_loops(rng, use_fft):
    for h, d in [(2, 3), (3, 5), (4, 8)]:
        p = random_params(rng, h, d)
        x, hp = rng.standard_normal(d), rng.standard_normal(h)
        s = fgru_step(x, hp, p, use_fft=use_fft)
        ref, z, r, ht = scalar_fgru_step(x, hp, p.W_z, p.W_r, p.W, p.b_z, p.b_r, p.b, use_fft)
        np.testing.assert_allclose(s.h, ref, atol=1e-12)
        np.testing.assert_allclose(s.z, z, atol=1e-12)
        np.testing.assert_allclose(s.r, r, atol=1e-12)


def test_fgru_shape_mismatch(rng):
    with pytest.raises(ValueError):
        fgru_step(np.zeros(5), np.zeros(3), random_params(rng, 3, 4))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 1.0))
def test_gate_ranges(seed, scale):
    r = np.random.default_rng(seed)
    p = random_params(r, 3, 4, scale)
    s = fgru_step(r.standard_normal(4), r.standard_normal(3), p)
    assert np.all((s.z > 0) & (s.z < 1)) and np.all((s.r > 0) & (s.r < 1))
    assert np.all(np.abs(s.h_tilde) < 1)


# --- attention -----------------------------------------------------------------
def test_attention_singleton_and_identical_rows(rng):
    P, q = rng.standard_normal((4, 4)), rng.standard_normal(4)
    row = rng.standard_normal(4)
    np.testing.assert_array_equal(attention_pool(row[None], P, q), row)
    np.testing.assert_allclose(attention_pool(np.tile(row, (5, 1)), P, q), row, atol=1e-15)


def test_attention_matches_scalar_loops(rng):
    H, P, q = rng.standard_normal((7, 4)), rng.standard_normal((4, 4)), rng.standard_normal(4)
    np.testing.assert_allclose(attention_pool(H, P, q), scalar_attention(H, P, q), atol=1e-12)


# --- forward -----------------------------------------------------------------------
def test_zero_model_scores_half(rng):
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=3), 3, 2)
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    score, outs = forward(m, rng.standard_normal((2, m.input_size)))
    assert score == 0.5 and len(outs) == 6
    np.testing.assert_array_equal(predict(m, tiny_batch()), 0.5)


def test_one_hot_weight_masks_later_blocks(rng):
    m = tiny_model()
    m.weights = np.array([1.0, 0, 0, 0, 0, 0])
    feat = rng.standard_normal((2, m.input_size))
    s0, _ = forward(m, feat)
    for name in list(m.params):
        if name.startswith(("fgru2", "fgru4", "attn3", "attn6")):
            m.params[name] = m.params[name] + 5.0
    s1, _ = forward(m, feat)
    assert s0 == s1


@pytest.mark.parametrize("kw", [{}, {"use_fft": False}, {"attention": False}, {"n_blocks": 2}])
def test_forward_matches_scalar_reference(kw, rng):
    m = tiny_model(seed=3, **kw)
    feat = rng.standard_normal((3, m.input_size))
    score, outs = forward(m, feat)
    ref, ref_outs = scalar_forward(m.params, m.weights, m.config, feat)
    assert abs(score - ref) < 1e-12
    for a, b in zip(outs, ref_outs):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_predict_equals_forward_per_subject():
    m, batch = tiny_model(), tiny_batch()
    scores = predict(m, batch)
    for i in range(batch.size):
        feat = aggregate(batch.timecourses[i], batch.similarity[i], TINY_STFA, m.params)
        assert abs(forward(m, feat)[0] - scores[i]) < 1e-12
        assert 0 < scores[i] < 1


def test_forward_shape_mismatch(rng):
    m = tiny_model()
    with pytest.raises(ValueError):
        forward(m, rng.standard_normal((3, m.input_size + 1)))
    with pytest.raises(ValueError):
        predict(m, StfaBatch(np.zeros((1, 5, 4)), np.zeros((1, 4, 2)), TINY_STFA))


# --- loss and gradients --------------------------------------------------------------
def test_zero_model_half_labels_is_exact_fit():
    m = tiny_model()
    m.params = {k: np.zeros_like(v) for k, v in m.params.items()}
    loss, grads = loss_and_grads(m, TrainingSet(tiny_batch(), np.full(4, 0.5)))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads.values())


def test_single_sample_loss():
    m, batch = tiny_model(), tiny_batch(B=1)
    s = predict(m, batch)[0]
    loss, _ = loss_and_grads(m, TrainingSet(batch, [1.0]))
    assert loss == pytest.approx((s - 1) ** 2, abs=1e-14)


def test_recipe_rows_match_explicit_interpolation():
    m, batch = tiny_model(), tiny_batch()
    origin = np.array([[0, 0], [1, 1], [2, 3]])
    step = np.array([0.0, 0.0, 0.25])
    loss, _ = loss_and_grads(m, TrainingSet(batch, [1.0, 0.0, 1.0], origin, step))
    fa = aggregate(batch.timecourses[2], batch.similarity[2], TINY_STFA, m.params).data
    fb = aggregate(batch.timecourses[3], batch.similarity[3], TINY_STFA, m.params).data
    s = [forward(m, aggregate(batch.timecourses[i], batch.similarity[i], TINY_STFA, m.params))[0] for i in (0, 1)]
    s.append(forward(m, fa + 0.25 * (fb - fa))[0])
    assert loss == pytest.approx(np.mean((np.array(s) - [1.0, 0.0, 1.0]) ** 2), abs=1e-14)


@pytest.mark.parametrize("shape", sorted(GRAD_SHAPES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed, shape):
    model, data = grad_check_problem(seed, shape)
    worst, count = grad_check(model, data)
    assert count == model.n_parameters()
    assert worst <= 1e-4


def test_numeric_error_names_sample():
    m, batch = tiny_model(), tiny_batch()
    origin = np.array([[0, 0], [1, 1], [2, 3], [3, 3]])
    step = np.array([0.0, 0.0, np.nan, 0.0])
    with pytest.raises(NumericError) as info:
        loss_and_grads(m, TrainingSet(batch, np.zeros(4), origin, step, ids=["a", "b", "c", "d"]))
    assert info.value.sample_id == "c"


# --- adaptive weights ------------------------------------------------------------------
def test_adaptive_update_examples(rng):
    w = rng.dirichlet(np.ones(6))
    np.testing.assert_allclose(adaptive_weight_update(w, np.full(6, 0.7), 0.01), w, atol=1e-15)
    np.testing.assert_allclose(adaptive_weight_update(w, np.zeros(6), 0.01), w, atol=1e-15)
    out = adaptive_weight_update(np.full(6, 1 / 6), [1, 0, 0, 0, 0, 0], 0.01)
    a = math.exp(-0.01)
    np.testing.assert_allclose(out, [a / (a + 5)] + [1 / (a + 5)] * 5, rtol=1e-14)


def test_adaptive_update_errors():
    with pytest.raises(NumericError):
        adaptive_weight_update(np.full(6, 1 / 6), [np.inf, 0, 0, 0, 0, 0], 0.01)
    with pytest.raises(ValueError):
        adaptive_weight_update([0.5, 0.6], [0, 0], 0.01)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), lr=st.floats(1e-4, 1.0))
def test_adaptive_update_stays_on_simplex(seed, lr):
    r = np.random.default_rng(seed)
    w = r.dirichlet(np.ones(6))
    for _ in range(20):
        w = adaptive_weight_update(w, r.uniform(-1, 1, 6), lr)
    assert np.all(w > 0) and abs(w.sum() - 1) < 1e-12


# --- training ----------------------------------------------------------------------------
def toy_separable(T=12, n=8):
    # class 1 carries a positive level, class 0 a negative one
    tc = np.zeros((n, T, 3))
    y = np.array([1, 0] * (n // 2), dtype=float)
    r = np.random.default_rng(5)
    tc += np.where(y == 1, 1.0, -1.0)[:, None, None] + 0.1 * r.standard_normal(tc.shape)
    sim = np.ones((n, 3, 2))
    return StfaBatch(tc, sim, TINY_STFA), y


def test_train_decreases_loss():
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4), 3, 2, seed=1)
    out = train(m, TrainingSet(batch, y), TrainConfig(epochs=50, weight_rounds=100))
    loss = out.curve["loss"]
    assert len(loss) == 50 and loss[-1] < loss[0]
    assert np.all(out.weights > 0) and abs(out.weights.sum() - 1) < 1e-12
    assert len(out.curve["weights"]) == 51


def test_train_sgd_decreases_loss():
    # frozen fusion weights isolate the gradient steps
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4, fusion="uniform"), 3, 2, seed=1)
    out = train(m, TrainingSet(batch, y), TrainConfig(epochs=50, lr=0.5, optimizer="sgd"))
    loss = out.curve["loss"]
    assert np.all(np.diff(loss) < 0)


def test_train_zero_epochs_returns_initial_model():
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4), 3, 2, seed=1)
    out = train(m, TrainingSet(batch, y), TrainConfig(epochs=0))
    assert out is not m
    for k in m.params:
        np.testing.assert_array_equal(out.params[k], m.params[k])
    np.testing.assert_array_equal(out.weights, m.weights)


def test_train_deterministic_and_leaves_input():
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4), 3, 2, seed=2)
    before = {k: v.copy() for k, v in m.params.items()}
    a = train(m, TrainingSet(batch, y), TrainConfig(epochs=5))
    b = train(m, TrainingSet(batch, y), TrainConfig(epochs=5))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
        np.testing.assert_array_equal(m.params[k], before[k])


def test_train_divergence_reports_epoch():
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4), 3, 2, seed=1)
    m.params["head.w"] = np.full(4, np.nan)
    with pytest.raises(TrainingError) as info:
        train(m, TrainingSet(batch, y), TrainConfig(epochs=3))
    assert info.value.epoch == 0


def test_train_precision_must_match_batch():
    batch, y = toy_separable()
    m = init_model(TINY_STFA, AfgruConfig(hidden_size=4), 3, 2)
    with pytest.raises(ValueError):
        train(m, TrainingSet(batch, y), TrainConfig(epochs=1, precision="float32"))


def test_round_schedule_spreads_rounds():
    s = round_schedule(200, 500)
    assert s.sum() == 500 and s.max() - s.min() <= 1
    assert round_schedule(10, 3).tolist() == [1, 0, 0, 1, 0, 0, 1, 0, 0, 0]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(precision="float16")


# --- ablations and serialisation -----------------------------------------------------
def shapes_for(name, N=8, R=10, h=32):
    stfa_cfg, cfg = apply_ablation(name, StfaConfig(), AfgruConfig(hidden_size=h))
    return stfa_cfg, cfg, param_shapes(stfa_cfg, cfg, N, R)


def count(shapes):
    return sum(int(np.prod(s)) for s in shapes.values())


def test_ablation_parameter_counts():
    h, D = 32, 120
    _, _, base = shapes_for("stanet")
    gates = 3 * h * (h + D) + 3 * h + 5 * (3 * h * 2 * h + 3 * h)
    attn = 6 * (h * h + h)
    stfa = 2 * 4 * (9 + 25 + 49 + 81 + 121 + 5)
    assert count(base) == stfa + gates + attn + h + 1
    assert count(shapes_for("agru")[2]) == count(base)
    assert count(shapes_for("atfgru")[2]) == count(base)
    assert count(shapes_for("adfgru")[2]) == count(base) - attn
    sgru_gates = 3 * h * (h + D) + 3 * h
    assert count(shapes_for("sgru")[2]) == stfa + sgru_gates + h + 1
    assert count(shapes_for("dgru")[2]) == stfa + sgru_gates + 3 * h * 2 * h + 3 * h + h + 1
    t_stfa, _, t_shapes = shapes_for("stanet_t")
    assert t_stfa.active_branches == ("temporal",)
    assert not any(k.startswith("stfa.spatial") for k in t_shapes)
    s_stfa, _, _ = shapes_for("stfa_s")
    assert s_stfa.scales == (7,)


def test_ablation_dataflow(rng):
    batch = tiny_batch()
    feat = rng.standard_normal((2, 2))
    # no FFT: block 1 sees the raw row, so the scalar reference without FFT agrees
    m = tiny_model(use_fft=False)
    assert abs(forward(m, feat)[0] - scalar_forward(m.params, m.weights, m.config, feat)[0]) < 1e-12
    # frozen uniform weights survive training
    m = init_model(TINY_STFA, apply_ablation("atfgru", TINY_STFA, AfgruConfig(hidden_size=3))[1], 3, 2)
    out = train(m, TrainingSet(batch, [1, 0, 1, 0]), TrainConfig(epochs=3))
    np.testing.assert_array_equal(out.weights, np.full(6, 1 / 6))
    # last-state pooling and a single block: no attention parameters, one-hot weight
    _, cfg = apply_ablation("sgru", TINY_STFA, AfgruConfig(hidden_size=3))
    m = init_model(TINY_STFA, cfg, 3, 2)
    assert m.weights.tolist() == [1.0] and not any(k.startswith("attn") for k in m.params)
    with pytest.raises(ValueError):
        apply_ablation("nope", TINY_STFA, AfgruConfig())


@pytest.mark.parametrize("name", sorted(ABLATIONS))
def test_every_ablation_runs(name):
    stfa_cfg, cfg = apply_ablation(name, TINY_STFA, AfgruConfig(hidden_size=3))
    m = init_model(stfa_cfg, cfg, 3, 2)
    r = np.random.default_rng(0)
    batch = StfaBatch(r.standard_normal((2, 8, 3)), r.standard_normal((2, 3, 2)), stfa_cfg)
    assert predict(m, batch).shape == (2,)


def test_initial_weights_on_simplex():
    for seed in range(5):
        w = init_model(TINY_STFA, AfgruConfig(hidden_size=3), 3, 2, seed=seed).weights
        assert np.all(w > 0) and abs(w.sum() - 1) < 1e-12


def test_init_ranges():
    m = init_model(StfaConfig(), AfgruConfig(), 8, 10)
    assert np.all(np.abs(m.params["fgru1.W_z"]) <= 1 / math.sqrt(32 + 120))
    assert np.all(m.params["fgru1.b_z"] == 0) and m.params["head.b"] == 0


def test_save_load_round_trip(tmp_path):
    m = tiny_model()
    m.curve = {"loss": [0.3, 0.2]}
    m.save(tmp_path / "model")
    back = AfgruModel.load(tmp_path / "model")
    assert back.config == m.config and back.stfa_cfg == m.stfa_cfg
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].astype(np.float64).tobytes()
    np.testing.assert_array_equal(back.weights, m.weights)
    np.testing.assert_array_equal(predict(back, tiny_batch()), predict(m, tiny_batch()))
