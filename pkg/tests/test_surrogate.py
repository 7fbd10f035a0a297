import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from magswarm.allocation import dual_lower_bound, evaluate_power
from magswarm.magnetics import CoilSpec, stack_geometry
from magswarm.surrogate import (
    LipschitzReport,
    MlpModel,
    TrainConfig,
    achieved_command_error,
    allocation_frame,
    bitflip_degradation,
    coefficients_from_gram,
    covering_radius,
    decode_geometry,
    empirical_lipschitz,
    encode_geometry,
    exact_pair_vector,
    far_pair_vector,
    flip_bound,
    gram_vector,
    init_mlp,
    inject_flips,
    learned_steady_error_bound,
    lipschitz_bound,
    load_model,
    mlp_forward,
    propagated_output_bound,
    quantization_error_bound,
    relative_errors,
    residual_quantize,
    save_model,
    train_mlp,
    _pair_swarm,
)


def random_model(seed=0, sizes=(6, 32, 32, 4)):
    rng = np.random.default_rng(seed)
    m = init_mlp(sizes, rng)
    m.biases = [rng.normal(scale=0.3, size=b.size) for b in m.biases]
    return m


# --------------------------------------------------------------------------
# forward pass and Lipschitz bound


def test_zero_weights_give_final_bias():
    m = MlpModel([np.zeros((5, 3)), np.zeros((2, 5))], [np.ones(5), np.array([0.7, -1.2])])
    np.testing.assert_array_equal(m(np.array([1.0, 2.0, 3.0])), [0.7, -1.2])


def test_single_linear_layer_is_affine():
    rng = np.random.default_rng(1)
    W, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    m = MlpModel([W], [b])
    x = rng.normal(size=(10, 3))
    np.testing.assert_allclose(mlp_forward(m, x), x @ W.T + b, rtol=1e-14)
    assert lipschitz_bound(m) == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-13)


def test_normalization_is_applied():
    rng = np.random.default_rng(2)
    W, b = rng.normal(size=(2, 3)), rng.normal(size=2)
    m = MlpModel([W], [b], in_offset=np.array([1.0, 2, 3]), in_scale=np.array([2.0, 4, 8]),
                 out_offset=np.array([5.0, -5]), out_scale=np.array([3.0, 0.5]))
    x = rng.normal(size=3)
    ref = np.array([5.0, -5]) + np.array([3.0, 0.5]) * (W @ ((x - [1, 2, 3]) / [2, 4, 8]) + b)
    np.testing.assert_allclose(m(x), ref, rtol=1e-14)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        random_model()(np.zeros(5))
    with pytest.raises(ValueError):
        MlpModel([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(ValueError):
        MlpModel([np.zeros((4, 3))], [np.zeros(3)])


def test_orthogonal_weights_give_unit_bound():
    Qs = [ortho_group.rvs(8, random_state=k) for k in range(4)]
    m = MlpModel(Qs, [np.zeros(8)] * 4)
    assert lipschitz_bound(m) == pytest.approx(1.0, rel=1e-12)


def test_empirical_slope_below_bound_on_pairs():
    m = random_model(3)
    rng = np.random.default_rng(4)
    X = rng.normal(size=(2000, 6))
    emp = empirical_lipschitz(m, X, rng, pairs=100_000)
    assert 0 < emp <= lipschitz_bound(m)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pairwise_lipschitz_inequality(seed):
    m = random_model(seed % 97)
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 50, 6)) * 3
    lhs = np.linalg.norm(m(x1) - m(x2), axis=1)
    assert np.all(lhs <= lipschitz_bound(m) * np.linalg.norm(x1 - x2, axis=1) * (1 + 1e-12))


def test_covering_radius_of_grid():
    g = np.arange(0.0, 1.01, 0.1)
    train = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    probe = np.random.default_rng(0).uniform(0, 1, size=(5000, 2))
    rho = covering_radius(train, probe)
    assert rho <= 0.05 * np.sqrt(2) + 1e-12
    assert rho > 0.06
    assert covering_radius(train, train) == 0.0


# --------------------------------------------------------------------------
# training


def test_training_memorizes_small_set():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(32, 2))
    Y = np.column_stack([np.sin(3 * X[:, 0]) * X[:, 1], X[:, 0] ** 2])
    m, hist = train_mlp(X, Y, TrainConfig(hidden=(32, 32), epochs=1500, batch=32, lr=5e-3, lr_final=1e-4))
    assert hist[-1] < hist[0] * 1e-2
    assert np.max(np.abs(m(X) - Y)) < 0.05


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(64, 3))
    Y = X[:, :1] * X[:, 1:2]
    cfg = TrainConfig(hidden=(8,), epochs=5, batch=16)
    a, ha = train_mlp(X, Y, cfg)
    b, hb = train_mlp(X, Y, cfg)
    assert ha == hb
    np.testing.assert_array_equal(a.weights[0], b.weights[0])


def test_bad_train_config():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(holdout=1.0)


# --------------------------------------------------------------------------
# geometry model


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 2.0))
def test_geometry_encoding_round_trip(seed, gamma):
    rng = np.random.default_rng(seed)
    x = np.hstack([rng.normal(size=(5, 3)) * 5, rng.normal(size=(5, 3))])
    g = rng.normal(size=(5, 6))
    np.testing.assert_allclose(decode_geometry(x, encode_geometry(x, g, gamma), gamma), g, rtol=1e-13)


def test_pair_vector_radius_scaling_is_exact():
    r, n = np.array([0.3, -0.5, 2.9]), np.array([0.2, 0.9, -0.4]) / np.linalg.norm([0.2, 0.9, -0.4])
    g1 = exact_pair_vector(r, n, 1.0, tol=1e-10)
    gR = exact_pair_vector(0.075 * r, n, 0.075, tol=1e-10)
    # force rows are scale free, torque rows carry one length
    scaled = np.concatenate([g1[:3], 0.075 * g1[3:]])
    assert np.linalg.norm(gR - scaled) <= 1e-8 * np.linalg.norm(gR)


def test_far_pair_vector_limit():
    n = np.array([0.0, 0.6, 0.8])
    r = 60.0 * np.array([0.48, 0.6, 0.64])
    assert relative_errors(exact_pair_vector(r, n)[None], far_pair_vector(r, n)[None])[0] < 1e-3


@pytest.mark.slow
def test_geometry_holdout_error(geometry_surrogate):
    rep = geometry_surrogate.report
    assert rep["holdout_median"] <= 0.05
    assert rep["holdout_p95"] >= rep["holdout_median"]


@pytest.mark.slow
def test_geometry_training_points_within_training_loss(geometry_surrogate, geometry_data):
    sur = geometry_surrogate
    i = sur.report["train_idx"][:200]
    enc = encode_geometry(geometry_data.X[i], geometry_data.G[i])
    pred = sur.model(geometry_data.X[i])
    scale = sur.model.out_scale
    # standardised Huber loss is at least 0.5 r^2 for small residuals
    assert np.median(np.abs((pred - enc) / scale)) < np.sqrt(2 * sur.report["history"][-1]) * 3


@pytest.mark.slow
def test_coaxial_holdout_against_quadrature(geometry_surrogate):
    R = 0.075
    ds = np.linspace(3.0, 15.0, 25) * R
    pred = np.array([geometry_surrogate.pair_vector([0, 0, d], [0, 0, 1], R) for d in ds])
    true = np.array([exact_pair_vector([0, 0, d], [0, 0, 1], R, tol=1e-9) for d in ds])
    far = np.array([far_pair_vector([0, 0, d], [0, 0, 1], R) for d in ds])
    err = relative_errors(pred, true)
    assert np.median(err) <= 0.05
    # closest configurations: the learned model beats the dipole model
    assert np.all(err[:3] < relative_errors(far, true)[:3])


# --------------------------------------------------------------------------
# allocation model


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gram_factorization_round_trip(seed):
    rng = np.random.default_rng(seed)
    s, c = rng.normal(size=(2, 6))
    s2, c2 = coefficients_from_gram(gram_vector(s, c))
    np.testing.assert_allclose(gram_vector(s2, c2), gram_vector(s, c), atol=1e-12 * (1 + s @ s + c @ c))


def test_allocation_frame_is_rotation():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r, cmd = rng.normal(size=3), rng.normal(size=6)
        R = allocation_frame(r, cmd)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
        assert np.linalg.det(R) == pytest.approx(1.0)
        np.testing.assert_allclose(R @ r, [np.linalg.norm(r), 0, 0], atol=1e-14)
        f = R @ cmd[:3]
        assert f[1] >= 0 and abs(f[2]) < 1e-14
    R = allocation_frame([1.0, 0, 0], [2.0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)


@pytest.mark.slow
def test_allocation_zero_command(allocation_surrogate):
    sur, _ = allocation_surrogate
    s, c = sur.coefficients([0.5, 0.1, 0.0], np.zeros(3), np.zeros(6))
    assert not np.any(s) and not np.any(c)


@pytest.mark.slow
def test_allocation_holdout_command_error(allocation_surrogate):
    sur, _ = allocation_surrogate
    assert sur.report["holdout_median"] <= 0.10


@pytest.mark.slow
def test_allocation_power_respects_dual_bound(allocation_surrogate):
    sur, data = allocation_surrogate
    for i in sur.report["holdout_idx"][:30]:
        r, sig = data.positions[i], data.sigmas[i]
        _, achieved = achieved_command_error(sur, r, sig, data.commands[i])
        stack = stack_geometry(_pair_swarm(r, sig), [data.coil] * 2, "far")
        lb = dual_lower_bound(np.vstack([achieved, -achieved]), stack, [1.0, 1.0])
        assert evaluate_power(sur.waves(r, sig, data.commands[i]), [1.0, 1.0]) >= lb * (1 - 1e-9)


@pytest.mark.slow
def test_allocation_surrogate_save_load(allocation_surrogate, tmp_path):
    sur, data = allocation_surrogate
    save_path = tmp_path / "alloc.npz"
    save_model(save_path, sur)
    back = load_model(save_path)
    assert isinstance(back.coil, CoilSpec) and back.coil.loop_radius == sur.coil.loop_radius
    r, sig, cmd = data.positions[0], data.sigmas[0], data.commands[0]
    np.testing.assert_array_equal(back.coefficients(r, sig, cmd)[0], sur.coefficients(r, sig, cmd)[0])


# --------------------------------------------------------------------------
# residual quantization


@pytest.mark.parametrize("P,n_bit", [(1, 4), (2, 4), (3, 3), (2, 8)])
def test_quantization_error_scan(P, n_bit):
    m = random_model(5)
    q = residual_quantize(m, P, n_bit)
    for W, Wq in zip(m.weights, q.dequantize().weights):
        # the bound is attained by the clipped largest entry, so allow rounding only
        assert np.abs(W - Wq).max() <= quantization_error_bound(W, P, n_bit) + 8 * np.finfo(float).eps * np.abs(W).max()


def test_single_level_four_bits_is_sixteenth():
    m = random_model(6)
    q = residual_quantize(m, 1, 4)
    for W, Wq in zip(m.weights, q.dequantize().weights):
        assert np.abs(W - Wq).max() <= np.abs(W).max() / 16 * (1 + 1e-12)
        assert quantization_error_bound(W, 1, 4) == np.abs(W).max() / 16


def test_many_levels_reconstruct_exactly():
    m = random_model(7)
    q = residual_quantize(m, 12, 8)
    for W, Wq in zip(m.weights, q.dequantize().weights):
        np.testing.assert_allclose(Wq, W, rtol=0, atol=4 * np.finfo(float).eps * np.abs(W).max())


def test_quantize_rejects_bad_levels():
    m = random_model()
    with pytest.raises(ValueError):
        residual_quantize(m, 0, 4)
    with pytest.raises(ValueError):
        residual_quantize(m, 2, 1)


def test_quantized_output_within_propagated_bound():
    m = random_model(8)
    X = np.random.default_rng(9).normal(size=(500, 6)) * 2
    for P in (1, 2):
        mq = residual_quantize(m, P, 4).dequantize()
        diff = np.linalg.norm(m(X) - mq(X), axis=1)
        bound = propagated_output_bound(m, mq, X)
        assert np.all(diff <= bound * (1 + 1e-10))
        assert bound.max() > 0


# --------------------------------------------------------------------------
# bit flips


def test_no_flips_give_unit_degradation():
    q = residual_quantize(random_model(10), 3, 4, protect=1)
    rep = bitflip_degradation(q, 0, seed=0)
    assert rep.gamma_bound == 1.0
    assert rep.gamma_measured <= 1 + 1e-12


def test_protected_level_flips_are_rejected():
    q = residual_quantize(random_model(11), 3, 4, protect=1)
    with pytest.raises(ValueError):
        inject_flips(q, [(0, 0, 3)])
    with pytest.raises(ValueError):
        inject_flips(q, [(0, 3, 3)])
    with pytest.raises(ValueError):
        bitflip_degradation(residual_quantize(random_model(11), 2, 4, protect=2), 1)


def test_flip_changes_one_weight_sign_of_level():
    q = residual_quantize(random_model(12), 3, 4, protect=1)
    flipped = inject_flips(q, [(1, 1, 7)])
    dW = flipped.layer_weight(1) - q.layer_weight(1)
    assert np.count_nonzero(dW) == 1
    assert abs(dW.reshape(-1)[7]) == pytest.approx(2 * abs(q.level_values(1, 1).reshape(-1)[7]))
    assert not np.shares_memory(flipped.signs[1][1], q.signs[1][1])


@pytest.mark.parametrize("n_bf", [1, 4, 16])
def test_measured_degradation_below_bound(n_bf):
    q = residual_quantize(random_model(13, (6, 64, 64, 64, 6)), 3, 4, protect=1)
    for seed in range(100):
        rep = bitflip_degradation(q, n_bf, seed=seed)
        assert rep.gamma_measured <= rep.gamma_bound


@pytest.mark.parametrize("protect", [0, 1, 2])
def test_flipped_model_empirical_below_its_bound(protect):
    q = residual_quantize(random_model(14), 3, 4, protect=protect)
    X = np.random.default_rng(15).normal(size=(1000, 6))
    rep = bitflip_degradation(q, 4, seed=1, probe=X, pairs=20_000)
    assert 0 < rep.empirical <= rep.product_bound


def test_flip_bound_monotone_in_flips():
    Ws = random_model(16).weights
    vals = [flip_bound(Ws, k, 1, 4) for k in range(0, 40)]
    assert vals[0] == 1.0
    assert np.all(np.diff(vals) >= 0)
    assert flip_bound(Ws, 4, 2, 4) < flip_bound(Ws, 4, 1, 4)


def test_quantized_model_save_load(tmp_path):
    q = residual_quantize(random_model(17), 3, 4, protect=1)
    save_model(tmp_path / "q.npz", q)
    back = load_model(tmp_path / "q.npz")
    assert (back.P, back.n_bit, back.protect) == (3, 4, 1)
    for l in range(3):
        np.testing.assert_array_equal(back.layer_weight(l), q.layer_weight(l))


def test_mlp_save_load_and_version_check(tmp_path):
    m = random_model(18)
    save_model(tmp_path / "m.npz", m)
    back = load_model(tmp_path / "m.npz")
    x = np.random.default_rng(0).normal(size=(4, 6))
    np.testing.assert_array_equal(back(x), m(x))
    with np.load(tmp_path / "m.npz") as f:
        arrs = {k: f[k] for k in f.files}
    arrs["header"] = np.array(str(arrs["header"]).replace('"version": 1', '"version": 99'))
    np.savez(tmp_path / "bad.npz", **arrs)
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.npz")


# --------------------------------------------------------------------------
# steady error bound


def _report(rho=0.0, L_true=0.0, L_learned=0.0, gamma=1.0):
    return LipschitzReport(np.ones(2), 1.0, 1.0, 0.5, 1.0, gamma, 0, rho, L_true, L_learned)


def test_steady_bound_trivial_cases():
    assert learned_steady_error_bound(_report(), (0.1, 0.2), 0.0, 1.5) == 0.0
    m, kp, kd = 1.5, 0.1, 0.2
    alpha = kd / m
    assert learned_steady_error_bound(_report(), (kp, kd), 2e-3, m) == pytest.approx(
        2e-3 / (alpha * np.sqrt(m * kp / kd)))


def test_steady_bound_flip_free_substitution():
    m, kp, kd = 1.2, 0.1, 0.1
    base = learned_steady_error_bound(_report(0.01, 3.0, 2.0, 1.0), (kp, kd), 1e-3, m)
    expect = (1e-3 + (3.0 + 2 * 2.0) * 0.01) / (kd / m * np.sqrt(m * kp / kd))
    assert base == pytest.approx(expect, rel=1e-14)
    assert learned_steady_error_bound(_report(0.01, 3.0, 2.0, 1.3), (kp, kd), 1e-3, m) > base


def test_steady_bound_rejects_bad_gains():
    with pytest.raises(ValueError):
        learned_steady_error_bound(_report(), (0.0, 0.1), 1e-3, 1.0)
    with pytest.raises(ValueError):
        learned_steady_error_bound(_report(), (0.1, 0.1), 1e-3, -1.0)
