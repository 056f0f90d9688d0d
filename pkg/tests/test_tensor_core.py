import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from usleep.exceptions import ContractError, NonFiniteGradientError
from usleep.tensor_core import (
    AdamState,
    BatchNormState,
    CategoricalBNState,
    SandwichBNState,
    adam_step,
    avgpool1d,
    avgpool1d_backward,
    batch_norm,
    batch_norm_backward,
    batch_norm_forward,
    categorical_bn,
    categorical_bn_backward,
    categorical_bn_forward,
    conv1d,
    conv1d_backward,
    conv1d_forward,
    elu,
    elu_backward,
    grad_check,
    maxpool1d,
    maxpool1d_backward,
    maxpool1d_forward,
    numerical_gradient,
    sandwich_bn,
    sandwich_bn_backward,
    sandwich_bn_forward,
    softmax,
    softmax_backward,
    tanh,
    tanh_backward,
    upsample_nearest,
    upsample_nearest_backward,
)
from usleep.train_eval.loss import masked_cross_entropy


def brute_conv1d(x, w, b):
    """Loop-based zero-padded correlation, independent of the vectorized path."""
    B, Cin, T = x.shape
    Cout, _, k = w.shape
    pad = (k - 1) // 2
    out = np.zeros((B, Cout, T))
    for bi in range(B):
        for o in range(Cout):
            for t in range(T):
                acc = b[o]
                for c in range(Cin):
                    for j in range(k):
                        src = t + j - pad
                        if 0 <= src < T:
                            acc += w[o, c, j] * x[bi, c, src]
                out[bi, o, t] = acc
    return out


class TestConv1d:
    def test_identity_kernel(self):
        x = np.array([[[1.0, 2, 3, 4]]])
        np.testing.assert_array_equal(conv1d(x, np.ones((1, 1, 1)), np.zeros(1)), x)

    def test_ones_kernel_zero_padding(self):
        x = np.ones((1, 1, 4))
        out = conv1d(x, np.ones((1, 1, 3)), np.zeros(1))
        np.testing.assert_array_equal(out[0, 0], [2, 3, 3, 2])

    def test_zero_kernel_gives_bias(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 7))
        out = conv1d(x, np.zeros((1, 3, 5)), np.array([5.0]))
        np.testing.assert_array_equal(out, 5.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 11))
        w = rng.normal(size=(4, 3, 5))
        b = rng.normal(size=4)
        np.testing.assert_allclose(conv1d(x, w, b), brute_conv1d(x, w, b), atol=1e-12)

    def test_shape_mismatch_names_axis(self):
        with pytest.raises(ContractError, match="channels"):
            conv1d(np.zeros((1, 2, 5)), np.zeros((1, 3, 3)), np.zeros(1))

    def test_even_kernel_rejected(self):
        with pytest.raises(ContractError):
            conv1d(np.zeros((1, 1, 5)), np.zeros((1, 1, 2)), np.zeros(1))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_input(self, seed, a, c):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 2, 3, 13))
        w = rng.normal(size=(2, 3, 3))
        zero = np.zeros(2)
        lhs = conv1d(a * x + c * y, w, zero)
        rhs = a * conv1d(x, w, zero) + c * conv1d(y, w, zero)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestPooling:
    def test_maxpool_values(self):
        np.testing.assert_array_equal(maxpool1d(np.array([[[1.0, 3, 2, 5]]])), [[[3, 5]]])

    def test_maxpool_constant(self):
        np.testing.assert_array_equal(maxpool1d(np.full((1, 2, 6), 4.0)), np.full((1, 2, 3), 4.0))

    def test_maxpool_tie_routes_to_first(self):
        x = np.array([[[2.0, 2.0]]])
        out, idx = maxpool1d_forward(x)
        assert out[0, 0, 0] == 2.0
        d = maxpool1d_backward(np.ones_like(out), idx)
        np.testing.assert_array_equal(d, [[[1.0, 0.0]]])
        # one-sided difference: raising x[0] raises the output, raising x[1] alone does not
        h = 1e-6
        up0 = maxpool1d(x + np.array([[[h, 0]]]))[0, 0, 0]
        up1 = maxpool1d(x + np.array([[[0, h]]]))[0, 0, 0]
        assert (up0 - 2.0) / h == pytest.approx(1.0)
        assert up1 - 2.0 == pytest.approx(h)  # ambiguous at an exact tie, hence the fixed rule

    def test_maxpool_odd_length(self):
        with pytest.raises(ContractError):
            maxpool1d(np.zeros((1, 1, 5)))

    def test_upsample(self):
        np.testing.assert_array_equal(upsample_nearest(np.array([[[1.0, 2.0]]])), [[[1, 1, 2, 2]]])
        x = np.arange(6.0).reshape(1, 2, 3)
        np.testing.assert_array_equal(upsample_nearest(x, 1), x)

    def test_upsample_backward_sums_pairs(self):
        g = np.array([[[1.0, 2.0, 3.0, 4.0]]])
        np.testing.assert_array_equal(upsample_nearest_backward(g), [[[3.0, 7.0]]])
        x = np.array([[[0.3, -0.2]]])
        num = numerical_gradient(lambda: float((upsample_nearest(x) * g).sum()), x)
        np.testing.assert_allclose(num, [[[3.0, 7.0]]], atol=1e-9)

    def test_avgpool(self):
        np.testing.assert_array_equal(avgpool1d(np.array([[[1.0, 3.0]]]), 2), [[[2.0]]])
        np.testing.assert_allclose(avgpool1d(np.full((1, 1, 12), 2.5), 3), 2.5)

    def test_avgpool_one_epoch(self):
        x = np.random.default_rng(1).normal(size=(1, 1, 30 * 128))
        out = avgpool1d(x, 3840)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(x.mean())

    def test_avgpool_indivisible(self):
        with pytest.raises(ContractError):
            avgpool1d(np.zeros((1, 1, 7)), 2)


class TestActivations:
    def test_elu_values(self):
        assert elu(np.array(0.0)) == 0.0
        assert elu(np.array(1.0)) == 1.0
        assert elu(np.array(-1.0)) == pytest.approx(math.exp(-1) - 1, abs=1e-15)
        assert float(elu(np.array(-1.0))) == pytest.approx(-0.63212, abs=1e-5)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(softmax(np.full(5, 3.7)), 0.2, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 500))
    def test_softmax_simplex(self, seed, scale):
        x = np.random.default_rng(seed).normal(size=(4, 7)) * scale
        p = softmax(x, axis=1)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def _bn_batch(rng, b=4, c=3, t=16):
    return rng.normal(loc=2.0, scale=3.0, size=(b, c, t))


class TestBatchNorm:
    def test_two_values(self):
        state = BatchNormState.create(1, eps=0.0)
        out = batch_norm(np.array([[[0.0, 2.0]]]), state)
        np.testing.assert_allclose(out, [[[-1.0, 1.0]]])

    def test_gamma_zero_beta_seven(self):
        state = BatchNormState.create(2)
        state.gamma[:] = 0.0
        state.beta[:] = 7.0
        out = batch_norm(_bn_batch(np.random.default_rng(0), c=2), state)
        np.testing.assert_array_equal(out, 7.0)

    def test_standardized_batch_is_near_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2, 32))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        out = batch_norm(x, BatchNormState.create(2))
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)
        np.testing.assert_allclose(out, x, atol=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_train_mode_moments(self, seed):
        # output variance is var / (var + eps); within 1e-6 of 1 needs var >= 10
        rng = np.random.default_rng(seed)
        x = rng.normal(loc=2.0, scale=5.0, size=(4, 3, 16))
        out = batch_norm(x, BatchNormState.create(3))
        assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-7)
        np.testing.assert_allclose(out.var(axis=(0, 2)), 1.0, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_train_mode_variance_bound(self, seed):
        x = _bn_batch(np.random.default_rng(seed), b=4, c=3, t=16)
        out = batch_norm(x, BatchNormState.create(3))
        var = x.var(axis=(0, 2))
        np.testing.assert_allclose(out.var(axis=(0, 2)), var / (var + 1e-5), rtol=1e-12)

    def test_running_stats_update_only_in_train(self):
        x = _bn_batch(np.random.default_rng(0))
        state = BatchNormState.create(3)
        batch_norm(x, state, training=False)
        np.testing.assert_array_equal(state.running_mean, 0.0)
        batch_norm(x, state, training=True)
        n = x.shape[0] * x.shape[2]
        np.testing.assert_allclose(state.running_mean, 0.01 * x.mean(axis=(0, 2)))
        np.testing.assert_allclose(state.running_var, 0.99 + 0.01 * x.var(axis=(0, 2)) * n / (n - 1))
        assert np.all(state.running_var >= 0)

    def test_eval_uses_running_stats(self):
        state = BatchNormState.create(1, eps=0.0)
        state.running_mean[:] = 1.0
        state.running_var[:] = 4.0
        out = batch_norm(np.array([[[3.0, 5.0]]]), state, training=False)
        np.testing.assert_allclose(out, [[[1.0, 2.0]]])

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            batch_norm(np.zeros((0, 1, 4)), BatchNormState.create(1))


class TestConditionalBN:
    def test_ccbn_single_group_equals_vanilla(self):
        rng = np.random.default_rng(5)
        x = _bn_batch(rng)
        van = BatchNormState.create(3)
        van.gamma[:] = rng.normal(size=3)
        van.beta[:] = rng.normal(size=3)
        cc = CategoricalBNState.create(3, 1)
        cc.gamma_g[0] = van.gamma
        cc.beta_g[0] = van.beta
        np.testing.assert_array_equal(categorical_bn(x, cc, 0), batch_norm(x, van))

    def test_ccbn_identical_affines(self):
        rng = np.random.default_rng(6)
        x = _bn_batch(rng)
        cc = CategoricalBNState.create(3, 3)
        cc.gamma_g[:] = rng.normal(size=3)
        cc.beta_g[:] = rng.normal(size=3)
        outs = [categorical_bn(x, cc, g, training=False) for g in range(3)]
        np.testing.assert_array_equal(outs[0], outs[1])
        np.testing.assert_array_equal(outs[0], outs[2])

    def test_ccbn_affine_evaluation(self):
        # normalized value 0.5: eval mode with mean 0, var 1 - eps
        cc = CategoricalBNState.create(1, 2, eps=0.0)
        cc.gamma_g[:, 0] = [2.0, 1.0]
        cc.beta_g[:, 0] = [0.0, 1.0]
        x = np.array([[[0.5]]])
        assert categorical_bn(x, cc, 0, training=False)[0, 0, 0] == pytest.approx(1.0)
        assert categorical_bn(x, cc, 1, training=False)[0, 0, 0] == pytest.approx(1.5)

    def test_sabn_evaluation(self):
        sa = SandwichBNState.create(1, 2, eps=0.0)
        sa.gamma_sa[:] = 2.0
        sa.beta_sa[:] = 1.0
        sa.gamma_g[1] = 3.0
        sa.beta_g[1] = -1.0
        out = sandwich_bn(np.array([[[1.0]]]), sa, 1, training=False)
        assert out[0, 0, 0] == pytest.approx(8.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_identity_sandwich_equals_ccbn_exactly(self, seed):
        rng = np.random.default_rng(seed)
        x = _bn_batch(rng)
        G = 3
        cc = CategoricalBNState.create(3, G)
        cc.gamma_g[:] = rng.normal(size=(G, 3))
        cc.beta_g[:] = rng.normal(size=(G, 3))
        sa = SandwichBNState.create(3, G)
        sa.gamma_g[:] = cc.gamma_g
        sa.beta_g[:] = cc.beta_g
        g = rng.integers(0, G, size=x.shape[0])
        np.testing.assert_array_equal(sandwich_bn(x, sa, g), categorical_bn(x, cc, g))

    def test_unit_group_affines_equal_vanilla(self):
        rng = np.random.default_rng(7)
        x = _bn_batch(rng)
        sa = SandwichBNState.create(3, 4)
        sa.gamma_sa[:] = rng.normal(size=3)
        sa.beta_sa[:] = rng.normal(size=3)
        van = BatchNormState.create(3)
        van.gamma[:] = sa.gamma_sa
        van.beta[:] = sa.beta_sa
        for g in range(4):
            np.testing.assert_array_equal(sandwich_bn(x, sa, g, training=False), batch_norm(x, van, training=False))

    def test_group_out_of_range(self):
        x = np.zeros((2, 1, 4))
        with pytest.raises(ContractError):
            categorical_bn(x, CategoricalBNState.create(1, 2), 2)
        with pytest.raises(ContractError):
            sandwich_bn(x, SandwichBNState.create(1, 2), -1)


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_closed_form(self):
        g = np.array([0.5, -3.0, 1e-3])
        p = {"w": np.zeros(3)}
        state = AdamState(lr=0.01)
        adam_step(p, {"w": g}, state)
        np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        assert state.step_count == 1

    def test_equal_grads_move_equally(self):
        p = {"a": np.array([0.3]), "b": np.array([0.3])}
        state = AdamState()
        for _ in range(3):
            adam_step(p, {"a": np.array([0.7]), "b": np.array([0.7])}, state)
        assert p["a"][0] == p["b"][0]

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        names = ["x", "y", "z"]
        init = {n: rng.normal(size=4) for n in names}
        grads = [{n: rng.normal(size=4) for n in names} for _ in range(4)]
        p1 = {n: init[n].copy() for n in names}
        p2 = {n: init[n].copy() for n in reversed(names)}
        s1, s2 = AdamState(), AdamState()
        for g in grads:
            adam_step(p1, g, s1)
            adam_step(p2, {n: g[n] for n in reversed(names)}, s2)
        for n in names:
            np.testing.assert_array_equal(p1[n], p2[n])

    def test_non_finite_gradient_names_parameter(self):
        with pytest.raises(NonFiniteGradientError, match="bad"):
            adam_step({"bad": np.zeros(2)}, {"bad": np.array([np.nan, 0.0])}, AdamState())

    def test_invalid_betas(self):
        with pytest.raises(ContractError):
            AdamState(beta1=1.0)


class TestGradCheck:
    def test_linear_function_exact(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=10)
        c = rng.normal(size=10)
        assert grad_check(lambda: float(c @ x), [x], [c]) < 1e-10

    def test_conv_elu_bn_composite(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 2, 12))
        w = rng.normal(size=(3, 2, 5))
        b = rng.normal(size=3)
        state = BatchNormState.create(3)
        state.gamma[:] = rng.normal(size=3)
        state.beta[:] = rng.normal(size=3)
        weights = rng.normal(size=(3, 3, 12))

        def f():
            z, _ = conv1d_forward(x, w, b)
            return float((batch_norm_forward(elu(z), state)[0] * weights).sum())

        z, xp = conv1d_forward(x, w, b)
        a = elu(z)
        _, cache = batch_norm_forward(a, state)
        da, pg = batch_norm_backward(weights, cache, state)
        dz = elu_backward(da, z)
        dx, dw, db = conv1d_backward(dz, xp, w)
        err = grad_check(f, [x, w, b, state.gamma, state.beta], [dx, dw, db, pg["gamma"], pg["beta"]])
        assert err < 1e-4

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(2, 3, 5))
        targets = rng.integers(0, 5, size=(2, 3))
        targets[0, 1] = -1

        def f():
            return masked_cross_entropy(softmax(logits, -1), targets)[0]

        p = softmax(logits, -1)
        _, dp = masked_cross_entropy(p, targets)
        dl = softmax_backward(dp, p, -1)
        assert grad_check(f, [logits], [dl]) < 1e-4


# --- randomized per-op gradient checks (20 seeds each) ---------------------


def _check_conv(rng):
    x = rng.normal(size=(2, 3, 9))
    w = rng.normal(size=(2, 3, 3))
    b = rng.normal(size=2)
    up = rng.normal(size=(2, 2, 9))
    f = lambda: float((conv1d(x, w, b) * up).sum())
    _, xp = conv1d_forward(x, w, b)
    return grad_check(f, [x, w, b], conv1d_backward(up, xp, w))


def _check_maxpool(rng):
    x = rng.normal(size=(2, 2, 8))
    up = rng.normal(size=(2, 2, 4))
    f = lambda: float((maxpool1d(x) * up).sum())
    _, idx = maxpool1d_forward(x)
    return grad_check(f, [x], [maxpool1d_backward(up, idx)])


def _check_upsample(rng):
    x = rng.normal(size=(2, 2, 5))
    up = rng.normal(size=(2, 2, 10))
    f = lambda: float((upsample_nearest(x) * up).sum())
    return grad_check(f, [x], [upsample_nearest_backward(up)])


def _check_avgpool(rng):
    x = rng.normal(size=(2, 2, 12))
    up = rng.normal(size=(2, 2, 4))
    f = lambda: float((avgpool1d(x, 3) * up).sum())
    return grad_check(f, [x], [avgpool1d_backward(up, 3)])


def _check_elu(rng):
    x = rng.normal(size=(2, 2, 7))
    up = rng.normal(size=(2, 2, 7))
    f = lambda: float((elu(x) * up).sum())
    return grad_check(f, [x], [elu_backward(up, x)])


def _check_tanh(rng):
    x = rng.normal(size=(2, 2, 7))
    up = rng.normal(size=(2, 2, 7))
    f = lambda: float((tanh(x) * up).sum())
    return grad_check(f, [x], [tanh_backward(up, tanh(x))])


def _check_softmax(rng):
    x = rng.normal(size=(2, 3, 5))
    up = rng.normal(size=(2, 3, 5))
    f = lambda: float((softmax(x, -1) * up).sum())
    return grad_check(f, [x], [softmax_backward(up, softmax(x, -1), -1)])


def _check_bn(rng):
    x = rng.normal(size=(3, 2, 6))
    st_ = BatchNormState.create(2)
    st_.gamma[:] = rng.normal(size=2)
    st_.beta[:] = rng.normal(size=2)
    up = rng.normal(size=x.shape)
    f = lambda: float((batch_norm(x, st_) * up).sum())
    _, cache = batch_norm_forward(x, st_)
    dx, g = batch_norm_backward(up, cache, st_)
    return grad_check(f, [x, st_.gamma, st_.beta], [dx, g["gamma"], g["beta"]])


def _check_ccbn(rng):
    x = rng.normal(size=(4, 2, 6))
    st_ = CategoricalBNState.create(2, 3)
    st_.gamma_g[:] = rng.normal(size=(3, 2))
    st_.beta_g[:] = rng.normal(size=(3, 2))
    g = rng.integers(0, 3, size=4)
    up = rng.normal(size=x.shape)
    f = lambda: float((categorical_bn(x, st_, g) * up).sum())
    _, cache = categorical_bn_forward(x, st_, g)
    dx, pg = categorical_bn_backward(up, cache, st_)
    return grad_check(f, [x, st_.gamma_g, st_.beta_g], [dx, pg["gamma_g"], pg["beta_g"]])


def _check_sabn(rng):
    x = rng.normal(size=(4, 2, 6))
    st_ = SandwichBNState.create(2, 3)
    for name in ("gamma_sa", "beta_sa", "gamma_g", "beta_g"):
        arr = getattr(st_, name)
        arr[...] = rng.normal(size=arr.shape)
    g = rng.integers(0, 3, size=4)
    up = rng.normal(size=x.shape)
    f = lambda: float((sandwich_bn(x, st_, g) * up).sum())
    _, cache = sandwich_bn_forward(x, st_, g)
    dx, pg = sandwich_bn_backward(up, cache, st_)
    names = ["gamma_sa", "beta_sa", "gamma_g", "beta_g"]
    return grad_check(f, [x] + [getattr(st_, n) for n in names], [dx] + [pg[n] for n in names])


OP_CHECKS = {
    "conv1d": _check_conv,
    "maxpool1d": _check_maxpool,
    "upsample": _check_upsample,
    "avgpool1d": _check_avgpool,
    "elu": _check_elu,
    "tanh": _check_tanh,
    "softmax": _check_softmax,
    "batch_norm": _check_bn,
    "categorical_bn": _check_ccbn,
    "sandwich_bn": _check_sabn,
}


@pytest.mark.parametrize("op", sorted(OP_CHECKS))
def test_op_gradients_20_seeds(op):
    worst = max(OP_CHECKS[op](np.random.default_rng(seed)) for seed in range(20))
    assert worst < 1e-4
