"""The U-Sleep network: encoder, decoder with skip connections, segment classifier.

Parameters live in one flat ``params`` dict keyed ``encoder.N.*``,
``decoder.N.*`` and ``classifier.*`` so the optimizer and the checkpoint code
can treat them uniformly. Batch-norm running statistics are kept apart in
``buffers``. BN state objects reference the very same arrays, so in-place
optimizer updates are seen by the forward pass.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .._validation import check_group_index, check_random_state, check_tensor
from ..exceptions import ContractError
from ..tensor_core import ops
from ..tensor_core.norm import (
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

BN_VARIANTS = ("vanilla", "ccbn", "sabn")
_BN_PARAMS = {
    "vanilla": ("gamma", "beta"),
    "ccbn": ("gamma_g", "beta_g"),
    "sabn": ("gamma_sa", "beta_sa", "gamma_g", "beta_g"),
}
_BN_BUFFERS = ("running_mean", "running_var")


@dataclass
class ArchitectureConfig:
    depth: int = 12
    base_filters: float = 5.0
    filter_growth: float = math.sqrt(2)
    kernel_size: int = 9
    rate: int = 128
    epoch_s: float = 30.0
    n_classes: int = 5
    n_channels: int = 2
    bn_variant: str = "vanilla"
    n_groups: int = 1
    dense_filters: int = 0  # 0 -> n_classes

    def __post_init__(self):
        if self.depth < 1:
            raise ContractError(f"depth must be >= 1, got {self.depth}")
        if self.n_classes != 5:
            raise ContractError(f"five sleep stages are required, got n_classes={self.n_classes}")
        if self.kernel_size % 2 != 1:
            raise ContractError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.bn_variant not in BN_VARIANTS:
            raise ContractError(f"bn_variant must be one of {BN_VARIANTS}, got {self.bn_variant!r}")
        if self.n_groups < 1:
            raise ContractError(f"n_groups must be >= 1, got {self.n_groups}")
        if self.bn_variant == "vanilla":
            self.n_groups = 1

    def filters(self, n):
        """Filter count of encoder/decoder block ``n`` (1-based)."""
        return max(1, math.floor(self.base_filters * self.filter_growth ** n + 1e-9))

    @property
    def samples_per_epoch(self):
        return int(round(self.rate * self.epoch_s))

    @property
    def alignment(self):
        return 2 ** self.depth

    @property
    def classifier_width(self):
        return self.dense_filters or self.n_classes

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in kinds:
                raise ContractError(f"unknown architecture key {key!r}")
            raw = raw.strip().strip("'\"")
            kind = kinds[key]
            kind = {"int": int, "float": float, "str": str}.get(kind, kind)
            values[key] = kind(float(raw)) if kind is int else kind(raw)
        return cls(**values)


def _init_conv(params, name, c_in, c_out, k, rng, dtype):
    limit = math.sqrt(3.0 / (c_in * k))
    params[f"{name}.weight"] = rng.uniform(-limit, limit, size=(c_out, c_in, k)).astype(dtype)
    params[f"{name}.bias"] = np.zeros(c_out, dtype)


def _make_bn_state(variant, c, n_groups, dtype):
    if variant == "vanilla":
        return BatchNormState.create(c, dtype)
    if variant == "ccbn":
        return CategoricalBNState.create(c, n_groups, dtype)
    return SandwichBNState.create(c, n_groups, dtype)


class USleepNet:
    """Parameters, BN states and the forward/backward passes of one model.

    Use :func:`build` to construct a freshly initialised network.
    """

    def __init__(self, config: ArchitectureConfig, params, buffers, dtype=np.float64):
        self.config = config
        self.params = params
        self.buffers = buffers
        self.dtype = np.dtype(dtype)
        self.bn_states = {}
        for name in self.bn_names():
            self.bn_states[name] = self._bind_state(name)

    # -- layout -------------------------------------------------------------

    def conv_names(self):
        names = []
        for n in range(1, self.config.depth + 1):
            names.append(f"encoder.{n}.conv")
        for n in range(self.config.depth, 0, -1):
            names += [f"decoder.{n}.up_conv", f"decoder.{n}.conv"]
        names += ["classifier.dense", "classifier.hidden", "classifier.out"]
        return names

    def bn_names(self):
        names = [f"encoder.{n}.bn" for n in range(1, self.config.depth + 1)]
        for n in range(self.config.depth, 0, -1):
            names += [f"decoder.{n}.up_bn", f"decoder.{n}.bn"]
        return names

    def _bind_state(self, name):
        variant = self.config.bn_variant
        kwargs = {p: self.params[f"{name}.{p}"] for p in _BN_PARAMS[variant]}
        kwargs.update({b: self.buffers[f"{name}.{b}"] for b in _BN_BUFFERS})
        cls = {"vanilla": BatchNormState, "ccbn": CategoricalBNState, "sabn": SandwichBNState}[variant]
        return cls(**kwargs)

    @property
    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return USleepNet(
            ArchitectureConfig(**asdict(self.config)),
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.dtype,
        )

    # -- layers -------------------------------------------------------------

    def _conv(self, name, x, tape):
        out, xp = ops.conv1d_forward(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        if tape is not None:
            tape[name] = xp
        return out

    def _conv_back(self, name, grad, tape, grads):
        d_x, d_w, d_b = ops.conv1d_backward(grad, tape[name], self.params[f"{name}.weight"])
        grads[f"{name}.weight"] = d_w
        grads[f"{name}.bias"] = d_b
        return d_x

    def _bn(self, name, x, g, training, tape):
        state = self.bn_states[name]
        variant = self.config.bn_variant
        if variant == "vanilla":
            out, cache = batch_norm_forward(x, state, training)
        elif variant == "ccbn":
            out, cache = categorical_bn_forward(x, state, g, training)
        else:
            out, cache = sandwich_bn_forward(x, state, g, training)
        if tape is not None:
            tape[name] = cache
        return out

    def _bn_back(self, name, grad, tape, grads):
        state = self.bn_states[name]
        backward = {
            "vanilla": batch_norm_backward,
            "ccbn": categorical_bn_backward,
            "sabn": sandwich_bn_backward,
        }[self.config.bn_variant]
        d_x, pg = backward(grad, tape[name], state)
        for key, value in pg.items():
            grads[f"{name}.{key}"] = value
        return d_x

    def _conv_elu_bn(self, prefix, conv, bn, x, g, training, tape):
        z = self._conv(f"{prefix}.{conv}", x, tape)
        a = ops.elu_forward(z)
        if tape is not None:
            tape[f"{prefix}.{conv}.z"] = z
        return self._bn(f"{prefix}.{bn}", a, g, training, tape)

    def _conv_elu_bn_back(self, prefix, conv, bn, grad, tape, grads):
        d_a = self._bn_back(f"{prefix}.{bn}", grad, tape, grads)
        d_z = ops.elu_backward(d_a, tape[f"{prefix}.{conv}.z"])
        return self._conv_back(f"{prefix}.{conv}", d_z, tape, grads)

    # -- passes -------------------------------------------------------------

    def forward(self, x, g=0, training=False, return_tape=False):
        """Per-epoch class probabilities ``[B, L, K]`` for input ``[B, C, T]``.

        ``T`` must be a whole number of epochs. The input is zero-padded
        symmetrically to a multiple of ``2 ** depth`` and the decoder output
        cropped back before the segment classifier. ``g`` (scalar or per-sample
        group indices) is only consulted by the conditional BN variants.
        """
        cfg = self.config
        x = check_tensor(x, 3, "model input", dtype=self.dtype)
        b, c, t = x.shape
        if c != cfg.n_channels:
            raise ContractError(f"model input: channels axis has extent {c}, expected {cfg.n_channels}")
        spe = cfg.samples_per_epoch
        if t == 0 or t % spe:
            raise ContractError(f"model input: time axis has extent {t}, not a positive multiple of {spe}")
        g = check_group_index(g, b, cfg.n_groups) if cfg.bn_variant != "vanilla" else None
        tape = {} if return_tape else None

        total = -(-t // cfg.alignment) * cfg.alignment
        left = (total - t) // 2
        h = np.pad(x, ((0, 0), (0, 0), (left, total - t - left))) if total != t else x

        skips = []
        for n in range(1, cfg.depth + 1):
            s = self._conv_elu_bn(f"encoder.{n}", "conv", "bn", h, g, training, tape)
            skips.append(s)
            h, idx = ops.maxpool1d_forward(s)
            if tape is not None:
                tape[f"encoder.{n}.pool"] = idx
        for n in range(cfg.depth, 0, -1):
            u = ops.upsample_nearest_forward(h, 2)
            up = self._conv_elu_bn(f"decoder.{n}", "up_conv", "up_bn", u, g, training, tape)
            cat = np.concatenate([up, skips[n - 1]], axis=1)
            h = self._conv_elu_bn(f"decoder.{n}", "conv", "bn", cat, g, training, tape)
        h = h[:, :, left:left + t]

        z = self._conv("classifier.dense", h, tape)
        a = ops.tanh_forward(z)
        pooled = ops.avgpool1d_forward(a, spe)
        z2 = self._conv("classifier.hidden", pooled, tape)
        a2 = ops.elu_forward(z2)
        logits = self._conv("classifier.out", a2, tape)
        probs = ops.softmax_forward(logits, axis=1).transpose(0, 2, 1)
        if tape is None:
            return probs
        tape.update(left=left, total=total, t=t, tanh=a, hidden_z=z2, probs=probs)
        return probs, tape

    def backward(self, tape, d_probs=None, d_logits=None):
        """Gradients of a scalar loss w.r.t. every parameter.

        Pass either ``d_probs`` (``[B, L, K]``) or, when the loss is fused with
        the softmax, ``d_logits`` of the same shape.
        """
        cfg = self.config
        grads = {}
        probs = tape["probs"]
        if d_logits is None:
            d_logits = ops.softmax_backward(d_probs, probs, axis=2)
        d_logits = np.ascontiguousarray(d_logits.transpose(0, 2, 1), dtype=self.dtype)

        d_a2 = self._conv_back("classifier.out", d_logits, tape, grads)
        d_z2 = ops.elu_backward(d_a2, tape["hidden_z"])
        d_pooled = self._conv_back("classifier.hidden", d_z2, tape, grads)
        d_a = ops.avgpool1d_backward(d_pooled, cfg.samples_per_epoch)
        d_z = ops.tanh_backward(d_a, tape["tanh"])
        d_h = self._conv_back("classifier.dense", d_z, tape, grads)

        left, total, t = tape["left"], tape["total"], tape["t"]
        if total != t:
            d_h = np.pad(d_h, ((0, 0), (0, 0), (left, total - t - left)))

        d_skips = [None] * cfg.depth
        for n in range(1, cfg.depth + 1):
            d_cat = self._conv_elu_bn_back(f"decoder.{n}", "conv", "bn", d_h, tape, grads)
            n_up = cfg.filters(n)
            d_skips[n - 1] = d_cat[:, n_up:]
            d_u = self._conv_elu_bn_back(f"decoder.{n}", "up_conv", "up_bn", d_cat[:, :n_up], tape, grads)
            d_h = ops.upsample_nearest_backward(d_u, 2)
        for n in range(cfg.depth, 0, -1):
            d_s = ops.maxpool1d_backward(d_h, tape[f"encoder.{n}.pool"]) + d_skips[n - 1]
            d_h = self._conv_elu_bn_back(f"encoder.{n}", "conv", "bn", d_s, tape, grads)
        return grads


def build(config: ArchitectureConfig = None, seed=0, dtype=np.float64) -> USleepNet:
    """Freshly initialised network: fan-in scaled uniform weights, zero biases, identity BN."""
    config = config or ArchitectureConfig()
    rng = check_random_state(seed)
    params, buffers = {}, {}
    k = config.kernel_size
    c_in = config.n_channels
    bn_channels = {}
    for n in range(1, config.depth + 1):
        f = config.filters(n)
        _init_conv(params, f"encoder.{n}.conv", c_in, f, k, rng, dtype)
        bn_channels[f"encoder.{n}.bn"] = f
        c_in = f
    for n in range(config.depth, 0, -1):
        f = config.filters(n)
        _init_conv(params, f"decoder.{n}.up_conv", c_in, f, k, rng, dtype)
        _init_conv(params, f"decoder.{n}.conv", 2 * f, f, k, rng, dtype)
        bn_channels[f"decoder.{n}.up_bn"] = f
        bn_channels[f"decoder.{n}.bn"] = f
        c_in = f
    width = config.classifier_width
    _init_conv(params, "classifier.dense", c_in, width, 1, rng, dtype)
    _init_conv(params, "classifier.hidden", width, config.n_classes, 1, rng, dtype)
    _init_conv(params, "classifier.out", config.n_classes, config.n_classes, 1, rng, dtype)
    for name, c in bn_channels.items():
        state = _make_bn_state(config.bn_variant, c, config.n_groups, dtype)
        for p in _BN_PARAMS[config.bn_variant]:
            params[f"{name}.{p}"] = getattr(state, p)
        for b in _BN_BUFFERS:
            buffers[f"{name}.{b}"] = getattr(state, b)
    return USleepNet(config, params, buffers, dtype)


def forward(net: USleepNet, inputs, g=0, mode="eval"):
    """Functional form of :meth:`USleepNet.forward`; ``mode`` is ``"train"`` or ``"eval"``."""
    if mode not in ("train", "eval"):
        raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
    return net.forward(inputs, g, training=mode == "train")


def convert_to_sabn(net: USleepNet, n_groups) -> USleepNet:
    """Copy of a vanilla network with sandwich BN over ``n_groups`` groups.

    Each BN affine becomes the shared pair; every group pair starts at
    ``gamma_g = 1, beta_g = 0`` so outputs are unchanged for all groups.
    """
    if net.config.bn_variant != "vanilla":
        raise ContractError(f"convert_to_sabn needs a vanilla network, got {net.config.bn_variant!r}")
    if n_groups < 1:
        raise ContractError(f"n_groups must be >= 1, got {n_groups}")
    cfg = ArchitectureConfig(**{**asdict(net.config), "bn_variant": "sabn", "n_groups": n_groups})
    params = {k: v.copy() for k, v in net.params.items() if not k.endswith((".gamma", ".beta"))}
    buffers = {k: v.copy() for k, v in net.buffers.items()}
    for name in net.bn_names():
        sa = SandwichBNState.from_vanilla(net.bn_states[name], n_groups)
        for p in _BN_PARAMS["sabn"]:
            params[f"{name}.{p}"] = getattr(sa, p)
    return USleepNet(cfg, params, buffers, net.dtype)


def collapse_to_vanilla(net: USleepNet, group=0) -> USleepNet:
    """Fold a sandwich network's shared and group-``group`` affines into vanilla BN."""
    if net.config.bn_variant != "sabn":
        raise ContractError(f"collapse_to_vanilla needs a sabn network, got {net.config.bn_variant!r}")
    cfg = ArchitectureConfig(**{**asdict(net.config), "bn_variant": "vanilla", "n_groups": 1})
    params = {k: v.copy() for k, v in net.params.items()
              if not k.endswith((".gamma_sa", ".beta_sa", ".gamma_g", ".beta_g"))}
    buffers = {k: v.copy() for k, v in net.buffers.items()}
    for name in net.bn_names():
        van = net.bn_states[name].collapse(group)
        params[f"{name}.gamma"] = van.gamma
        params[f"{name}.beta"] = van.beta
    return USleepNet(cfg, params, buffers, net.dtype)
