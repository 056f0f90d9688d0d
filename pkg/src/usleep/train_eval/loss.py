import numpy as np

from ..stages import MASK

_TINY = 1e-300


def masked_cross_entropy(probs, targets):
    """Mean ``-log p[target]`` over unmasked positions.

    ``probs`` is ``[B, L, K]`` with simplex rows, ``targets`` is ``[B, L]`` of
    class indices where ``MASK`` entries carry no loss. Returns ``(loss,
    d_probs)``; an all-masked batch gives ``(0.0, zeros)``.
    """
    probs = np.asarray(probs)
    targets = np.asarray(targets)
    valid = targets != MASK
    n = int(valid.sum())
    grad = np.zeros_like(probs)
    if n == 0:
        return 0.0, grad
    b, l = np.nonzero(valid)
    t = targets[b, l]
    p_t = np.maximum(probs[b, l, t].astype(np.float64), _TINY)
    loss = float(-np.log(p_t).sum() / n)
    grad[b, l, t] = -1.0 / (p_t * n)
    return loss, grad


def masked_cross_entropy_logit_grad(probs, targets):
    """Gradient of the masked loss w.r.t. the pre-softmax logits: ``(p - onehot) / n``.

    Numerically preferable to chaining through the softmax Jacobian when a
    target probability underflows.
    """
    probs = np.asarray(probs)
    valid = np.asarray(targets) != MASK
    n = int(valid.sum())
    grad = np.zeros_like(probs)
    if n == 0:
        return grad
    grad[valid] = probs[valid]
    b, l = np.nonzero(valid)
    grad[b, l, targets[b, l]] -= 1.0
    return grad / n
