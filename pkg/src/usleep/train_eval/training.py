"""Adam training with validation-driven early stopping."""
import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..exceptions import ContractError, NonFiniteGradientError
from ..tensor_core.adam import AdamState, adam_step
from .evaluation import pooled_macro_f1
from .loss import masked_cross_entropy, masked_cross_entropy_logit_grad

REGIMES = ("scratch", "finetune", "finetune_sabn")


@dataclass
class TrainConfig:
    lr: float = 1e-5
    patience: int = 100
    max_iterations: int = 1000
    batches_per_iteration: int = 100
    batch_size: int = 12
    seed: int = 0
    target_f1: Optional[float] = None  # stop as soon as validation macro F1 reaches this
    update_bn_stats: bool = True

    def __post_init__(self):
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ContractError(f"lr must be a finite non-negative number, got {self.lr}")
        for name in ("patience", "max_iterations", "batches_per_iteration", "batch_size"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class IterationRecord:
    iteration: int
    train_loss: float
    val_macro_f1: float
    seconds: float


@dataclass
class TrainResult:
    net: object  # best-validation network
    history: list = field(default_factory=list)
    best_iteration: int = 0
    best_f1: float = -math.inf
    stop_reason: str = ""
    target_iteration: Optional[int] = None

    @property
    def iterations(self):
        return len(self.history)

    def history_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "train_loss", "val_macro_f1"])
        for h in self.history:
            w.writerow([h.iteration, repr(h.train_loss), repr(h.val_macro_f1)])
        return buf.getvalue()


def _next_batch(sampler, batch_size):
    if hasattr(sampler, "batch"):
        return sampler.batch(batch_size)
    return sampler.get()


def train_step(net, batch, opt: AdamState, update_bn_stats=True):
    """One Adam step on a batch; returns the loss. Raises on non-finite loss or gradient."""
    frozen = None if update_bn_stats else {k: v.copy() for k, v in net.buffers.items()}
    g = batch.group_index if net.config.bn_variant != "vanilla" else 0
    probs, tape = net.forward(batch.inputs, g, training=True, return_tape=True)
    loss, _ = masked_cross_entropy(probs, batch.targets)
    if frozen is not None:
        for k, v in frozen.items():
            net.buffers[k][...] = v
    if not math.isfinite(loss):
        raise NonFiniteGradientError("loss")
    grads = net.backward(tape, d_logits=masked_cross_entropy_logit_grad(probs, batch.targets))
    adam_step(net.params, grads, opt)
    return loss


def train(net, sampler, val_set, config: TrainConfig = None, regime="scratch", log=None) -> TrainResult:
    """Train a copy of ``net`` and return the best-validation copy with its history.

    One iteration is ``batches_per_iteration`` optimizer steps followed by a
    full validation pass (macro F1 on the confusion matrix pooled over
    ``val_set``). Training stops after ``patience`` iterations without
    improvement, at ``max_iterations``, when ``target_f1`` is reached, or on a
    non-finite loss/gradient (the best network so far is returned).
    """
    config = config or TrainConfig()
    if regime not in REGIMES:
        raise ContractError(f"regime must be one of {REGIMES}, got {regime!r}")
    variant = net.config.bn_variant
    if regime == "finetune_sabn" and variant != "sabn":
        raise ContractError("finetune_sabn needs a sandwich-BN network; call convert_to_sabn first")
    n_groups = net.config.n_groups if variant != "vanilla" else 1
    sampler_groups = getattr(getattr(sampler, "config", None), "n_groups", n_groups)
    if variant != "vanilla" and sampler_groups != n_groups:
        raise ContractError(f"sampler draws {sampler_groups} groups, model expects {n_groups}")
    val_set = list(val_set)
    if not val_set:
        raise ContractError("validation set is empty")

    net = net.copy()
    opt = AdamState(lr=config.lr)
    result = TrainResult(net=net.copy())
    since_best = 0
    for it in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        losses = []
        try:
            for _ in range(config.batches_per_iteration):
                losses.append(train_step(net, _next_batch(sampler, config.batch_size), opt, config.update_bn_stats))
        except NonFiniteGradientError as err:
            result.stop_reason = f"diverged at iteration {it}: non-finite {err.name}"
            break
        f1 = pooled_macro_f1(net, val_set, n_groups)
        record = IterationRecord(it, float(np.mean(losses)), f1, time.perf_counter() - t0)
        result.history.append(record)
        if log is not None:
            log(record)
        if f1 > result.best_f1:
            result.best_f1, result.best_iteration = f1, it
            result.net = net.copy()
            since_best = 0
        else:
            since_best += 1
        if config.target_f1 is not None and f1 >= config.target_f1:
            result.target_iteration = it
            result.stop_reason = f"target macro F1 {config.target_f1} reached"
            break
        if since_best >= config.patience:
            result.stop_reason = f"no improvement for {config.patience} iterations"
            break
    else:
        result.stop_reason = "max_iterations reached"
    return result
