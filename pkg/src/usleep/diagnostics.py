"""Finite-difference gradient suite used by the ``gradcheck`` command.

Every layer and a small composed model are checked against float64 central
differences. 64-bit analytic gradients are compared element-wise with the
relative error ``|a - b| / max(|a|, |b|, 1e-8)``. 32-bit analytic gradients
are compared with the error scaled by the largest numerical gradient of the
tensor, since element-wise relative error is meaningless for entries near
float32 resolution.
"""
import time
from dataclasses import dataclass

import numpy as np

from .model import ArchitectureConfig, build
from .tensor_core import ops
from .tensor_core.gradcheck import numerical_gradient, relative_error
from .tensor_core.norm import (
    BatchNormState,
    CategoricalBNState,
    SandwichBNState,
    batch_norm_backward,
    batch_norm_forward,
    categorical_bn_backward,
    categorical_bn_forward,
    sandwich_bn_backward,
    sandwich_bn_forward,
)
from .train_eval.loss import masked_cross_entropy, masked_cross_entropy_logit_grad

TOL_64 = 1e-4
TOL_32 = 1e-2
MODEL_CONFIG = dict(depth=2, base_filters=2.0, rate=4, epoch_s=2.0)


@dataclass
class CheckResult:
    name: str
    err64: float
    err32: float
    seconds: float

    @property
    def passed(self):
        return self.err64 < TOL_64 and self.err32 < TOL_32


def _scaled_error(analytic, numeric):
    scale = max(float(np.abs(numeric).max()), 1e-3)
    return float(np.abs(np.asarray(analytic, np.float64) - numeric).max() / scale)


def _compare(fn64, arrays, analytic64, analytic32):
    """Numerical gradients once in float64, scored against both precisions."""
    e64 = e32 = 0.0
    for x, a64, a32 in zip(arrays, analytic64, analytic32):
        num = numerical_gradient(fn64, x)
        if num.size:
            e64 = max(e64, float(relative_error(a64, num).max()))
            e32 = max(e32, _scaled_error(a32, num))
    return e64, e32


# Each layer case: build(rng) -> (arrays, fn(arrays) scalar, grads(arrays, dtype) list)

def _case_conv(rng):
    arrays = [rng.normal(size=(2, 3, 9)), rng.normal(size=(2, 3, 3)), rng.normal(size=2)]
    up = rng.normal(size=(2, 2, 9))

    def fn(a):
        return float((ops.conv1d_forward(*a)[0] * up).sum())

    def grads(a, dt):
        x, w, b = (v.astype(dt) for v in a)
        _, xp = ops.conv1d_forward(x, w, b)
        return list(ops.conv1d_backward(up.astype(dt), xp, w))
    return arrays, fn, grads


def _unary_case(shape, out_shape, forward, backward):
    def case(rng):
        arrays = [rng.normal(size=shape)]
        up = rng.normal(size=out_shape)

        def fn(a):
            return float((forward(a[0]) * up).sum())

        def grads(a, dt):
            return [backward(up.astype(dt), a[0].astype(dt))]
        return arrays, fn, grads
    return case


def _maxpool_backward(up, x):
    return ops.maxpool1d_backward(up, ops.maxpool1d_forward(x)[1])


def _bn_case(kind):
    def case(rng):
        x = rng.normal(size=(4, 2, 6))
        g = rng.integers(0, 3, size=4)
        if kind == "vanilla":
            st = BatchNormState.create(2)
            names = ["gamma", "beta"]
        elif kind == "ccbn":
            st = CategoricalBNState.create(2, 3)
            names = ["gamma_g", "beta_g"]
        else:
            st = SandwichBNState.create(2, 3)
            names = ["gamma_sa", "beta_sa", "gamma_g", "beta_g"]
        arrays = [x] + [rng.normal(size=getattr(st, n).shape) for n in names]
        up = rng.normal(size=x.shape)

        def run(a, dt):
            for n, v in zip(names, a[1:]):
                setattr(st, n, v.astype(dt))
            xx = a[0].astype(dt)
            if kind == "vanilla":
                return batch_norm_forward(xx, st, True), batch_norm_backward
            if kind == "ccbn":
                return categorical_bn_forward(xx, st, g, True), categorical_bn_backward
            return sandwich_bn_forward(xx, st, g, True), sandwich_bn_backward

        def fn(a):
            (out, _), _ = run(a, np.float64)
            return float((out * up).sum())

        def grads(a, dt):
            (_, cache), backward = run(a, dt)
            dx, pg = backward(up.astype(dt), cache, st)
            return [dx] + [pg[n] for n in names]
        return arrays, fn, grads
    return case


LAYER_CASES = {
    "conv1d": _case_conv,
    "maxpool1d": _unary_case((2, 2, 8), (2, 2, 4), lambda x: ops.maxpool1d_forward(x)[0], _maxpool_backward),
    "upsample": _unary_case((2, 2, 5), (2, 2, 10), lambda x: ops.upsample_nearest_forward(x, 2),
                            lambda up, x: ops.upsample_nearest_backward(up, 2)),
    "avgpool1d": _unary_case((2, 2, 12), (2, 2, 4), lambda x: ops.avgpool1d_forward(x, 3),
                             lambda up, x: ops.avgpool1d_backward(up, 3)),
    "elu": _unary_case((2, 2, 7), (2, 2, 7), ops.elu_forward, ops.elu_backward),
    "tanh": _unary_case((2, 2, 7), (2, 2, 7), ops.tanh_forward,
                        lambda up, x: ops.tanh_backward(up, ops.tanh_forward(x))),
    "softmax": _unary_case((2, 3, 5), (2, 3, 5), lambda x: ops.softmax_forward(x, -1),
                           lambda up, x: ops.softmax_backward(up, ops.softmax_forward(x, -1), -1)),
    "batch_norm": _bn_case("vanilla"),
    "categorical_bn": _bn_case("ccbn"),
    "sandwich_bn": _bn_case("sabn"),
}


def check_layer(name, seed):
    rng = np.random.default_rng(seed)
    arrays, fn, grads = LAYER_CASES[name](rng)
    return _compare(lambda: fn(arrays), arrays, grads(arrays, np.float64), grads(arrays, np.float32))


def _pool_margin(net, tape):
    gap = np.inf
    for n in range(1, net.config.depth + 1):
        cache = tape[f"encoder.{n}.bn"]
        state = net.bn_states[f"encoder.{n}.bn"]
        s = state.gamma[None, :, None] * cache.x_hat + state.beta[None, :, None]
        pairs = s.reshape(s.shape[0], s.shape[1], -1, 2)
        gap = min(gap, float(np.abs(pairs[..., 0] - pairs[..., 1]).min()))
    return gap


def check_model(seed, config=None, batch=3, n_epochs=3, min_gap=1e-3):
    """Gradient check of the composed model under the masked cross-entropy loss.

    Inputs whose max-pool windows hold a near-tie (gap below ``min_gap``) are
    redrawn: central differences straddling an argmax flip do not estimate a
    derivative.
    """
    cfg = ArchitectureConfig(**(config or MODEL_CONFIG))
    rng = np.random.default_rng(seed)
    net64 = build(cfg, seed=seed)
    net32 = build(cfg, seed=seed, dtype=np.float32)
    shape = (batch, cfg.n_channels, n_epochs * cfg.samples_per_epoch)
    for _ in range(100):
        x = rng.normal(size=shape)
        _, tape = net64.forward(x, training=True, return_tape=True)
        if _pool_margin(net64, tape) > min_gap:
            break
    targets = rng.integers(0, cfg.n_classes, size=(batch, n_epochs))
    targets[0, 0] = -1

    def analytic(net):
        probs, tape = net.forward(x, training=True, return_tape=True)
        return net.backward(tape, d_logits=masked_cross_entropy_logit_grad(probs, targets))

    def loss():
        return masked_cross_entropy(net64.forward(x, training=True), targets)[0]

    g64, g32 = analytic(net64), analytic(net32)
    names = sorted(net64.params)
    return _compare(loss, [net64.params[k] for k in names], [g64[k] for k in names], [g32[k] for k in names])


def run_suite(seeds=range(20), layers=None, model=True):
    """Run every check over ``seeds``; returns a list of :class:`CheckResult`."""
    results = []
    for name in layers or sorted(LAYER_CASES):
        t0 = time.perf_counter()
        errs = [check_layer(name, s) for s in seeds]
        results.append(CheckResult(name, max(e[0] for e in errs), max(e[1] for e in errs),
                                   time.perf_counter() - t0))
    if model:
        t0 = time.perf_counter()
        errs = [check_model(s) for s in seeds]
        results.append(CheckResult("model(depth=2)", max(e[0] for e in errs), max(e[1] for e in errs),
                                   time.perf_counter() - t0))
    return results
