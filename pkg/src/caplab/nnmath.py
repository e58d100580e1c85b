"""Minimal differentiable kernels with hand-written backward rules.

Everything here is plain numpy float64. Forward functions return values;
each backward takes the upstream gradient plus whatever the forward needed,
and returns gradients in argument order. The finite-difference checker at
the bottom is the ground truth the rest of the package is tested against.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DataError


def _as_float(x):
    """Promote ints to float64; keep float32/float64/longdouble untouched so
    callers can run the whole stack in a wider precision."""
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def sigmoid(x):
    """Numerically stable logistic function 1 / (1 + exp(-x))."""
    x = _as_float(x)
    pos = 1.0 / (1.0 + np.exp(-np.maximum(x, 0)))
    ex = np.exp(np.minimum(x, 0))
    return np.where(x >= 0, pos, ex / (1.0 + ex))


def sigmoid_backward(dy, y):
    """dL/dx given dL/dy and the forward output y = sigmoid(x)."""
    return dy * y * (1.0 - y)


def tanh(x):
    return np.tanh(_as_float(x))


def tanh_backward(dy, y):
    """dL/dx given dL/dy and the forward output y = tanh(x)."""
    return dy * (1.0 - y * y)


def softmax(x):
    """Softmax along the last axis, stabilized by max subtraction."""
    x = _as_float(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dy, y):
    """dL/dx for y = softmax(x) along the last axis."""
    inner = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


def log_softmax(x):
    x = _as_float(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def affine(x, w, b):
    """y = x @ w + b for a vector or a stack of vectors x."""
    return x @ w + b


def affine_backward(dy, x, w):
    """Gradients of y = x @ w + b.

    Returns:
        (dx, dw, db); shapes mirror (x, w, b).
    """
    x = np.asarray(x)
    dy = np.asarray(dy)
    if x.ndim == 1:
        return dy @ w.T, np.outer(x, dy), dy.copy()
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def embed(table, token_id: int):
    """Row lookup returning a copy, so callers cannot alias the table."""
    if not 0 <= token_id < table.shape[0]:
        raise DataError(f"token id {token_id} out of range [0, {table.shape[0]})")
    return table[token_id].copy()


def embed_backward(dy, token_id: int, dtable):
    """Accumulate the upstream gradient into one row of dtable (in place)."""
    dtable[token_id] += dy
    return dtable


def masked_cross_entropy(logits, targets, mask):
    """Mean negative log-likelihood over unmasked positions.

    Args:
        logits: (..., V) scores; leading axes are flattened together.
        targets: (...) int ids, one per logit row.
        mask: (...) floats, 1.0 where the position counts.

    Returns:
        (loss, dlogits) with the fused softmax + cross-entropy gradient
        (probs - onehot) * mask / n_unmasked already applied; dlogits has
        the shape of logits.
    """
    logits = _as_float(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise DataError("masked_cross_entropy: logits/targets/mask shapes disagree")
    denom = mask.sum()
    if denom == 0:
        raise DataError("masked_cross_entropy: mask has no unmasked positions")
    flat = logits.reshape(-1, logits.shape[-1])
    tflat = targets.reshape(-1)
    mflat = mask.reshape(-1)
    logp = log_softmax(flat)
    rows = np.arange(flat.shape[0])
    loss = -(logp[rows, tflat] * mflat).sum() / denom
    dlogits = np.exp(logp)
    dlogits[rows, tflat] -= 1.0
    dlogits *= (mflat / denom)[:, None]
    return loss, dlogits.reshape(logits.shape)


def gradient_check(f, params: dict, grads: dict, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients to central finite differences.

    Args:
        f: zero-argument callable returning a scalar loss; it must read the
           arrays in `params`, which are perturbed in place and restored.
        params: name -> float64 array, the coordinates to probe.
        grads: name -> analytic gradient array, same shapes as params.

    Returns:
        The worst relative error |analytic - numeric| over
        max(|analytic|, |numeric|, 1e-8), across every coordinate.
    """
    worst = 0.0
    for name, arr in params.items():
        ga = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            keep = arr[idx]
            arr[idx] = keep + epsilon
            hi = f()
            arr[idx] = keep - epsilon
            lo = f()
            arr[idx] = keep
            numeric = (hi - lo) / (2.0 * epsilon)
            analytic = ga[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
            it.iternext()
    return worst
