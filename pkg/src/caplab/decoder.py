"""LSTM caption decoders over pre-extracted image features.

Two variants share one cell:

  baseline   - the image enters once, through the initial hidden and cell
               states (tanh affine of the mean-pooled feature grid).
  attention  - additionally, every step mixes a context vector (a softmax
               weighted sum of region features, scored against the previous
               hidden state) into all four gate pre-activations.

Forward passes optionally record a tape with every intermediate needed for
the exact backward pass in `training`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import START_ID
from .exceptions import DataError
from .features import FeatureSet
from .nnmath import embed, sigmoid, softmax, tanh

GATES = ("input", "forget", "output", "cell")

VARIANTS = ("baseline", "attention")


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    feature_dim: int
    attention_dim: int

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 1:
                raise DataError(f"{name} must be >= 1, got {v}")


@dataclass
class DecoderParams:
    """All trainable tensors of one decoder.

    `tensor_items` fixes the declared order used for checkpoints, gradient
    containers, and optimizer state.
    """

    variant: str
    dims: ModelDims
    embedding: np.ndarray
    init_h_w: np.ndarray
    init_h_b: np.ndarray
    init_c_w: np.ndarray
    init_c_b: np.ndarray
    gate_w: dict
    gate_r: dict
    gate_b: dict
    out_w: np.ndarray
    out_b: np.ndarray
    att_feat_w: np.ndarray | None = None
    att_hid_w: np.ndarray | None = None
    att_bias: np.ndarray | None = None
    att_score: np.ndarray | None = None
    ctx_w: dict | None = None

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        items = [
            ("embedding", self.embedding),
            ("init.h.W", self.init_h_w),
            ("init.h.b", self.init_h_b),
            ("init.c.W", self.init_c_w),
            ("init.c.b", self.init_c_b),
        ]
        for g in GATES:
            items += [(f"lstm.{g}.W", self.gate_w[g]),
                      (f"lstm.{g}.R", self.gate_r[g]),
                      (f"lstm.{g}.b", self.gate_b[g])]
        if self.variant == "attention":
            items += [
                ("attention.feature.W", self.att_feat_w),
                ("attention.hidden.W", self.att_hid_w),
                ("attention.bias", self.att_bias),
                ("attention.score", self.att_score),
            ]
            items += [(f"context.{g}.W", self.ctx_w[g]) for g in GATES]
        items += [("out.W", self.out_w), ("out.b", self.out_b)]
        return items

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.tensor_items())


def init_params(variant: str, dims: ModelDims, seed: int) -> DecoderParams:
    """Uniform [-s, s] init with s = 1/sqrt(fan-in); forget bias starts at +1."""
    if variant not in VARIANTS:
        raise DataError(f"unknown decoder variant {variant!r}")
    rng = np.random.default_rng(seed)

    def mat(fan_in, *shape):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    V, E, H = dims.vocab_size, dims.embed_dim, dims.hidden_dim
    D, A = dims.feature_dim, dims.attention_dim
    params = DecoderParams(
        variant=variant,
        dims=dims,
        embedding=mat(V, V, E),
        init_h_w=mat(D, D, H),
        init_h_b=np.zeros(H),
        init_c_w=mat(D, D, H),
        init_c_b=np.zeros(H),
        gate_w={g: mat(E, E, H) for g in GATES},
        gate_r={g: mat(H, H, H) for g in GATES},
        gate_b={g: np.full(H, 1.0) if g == "forget" else np.zeros(H) for g in GATES},
        out_w=mat(H, H, V),
        out_b=np.zeros(V),
    )
    if variant == "attention":
        params.att_feat_w = mat(D, D, A)
        params.att_hid_w = mat(H, H, A)
        params.att_bias = np.zeros(A)
        params.att_score = mat(A, A)
        params.ctx_w = {g: mat(D, D, H) for g in GATES}
    return params


def zero_grads(params: DecoderParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.tensor_items()}


def params_from_tensors(variant: str, dims: ModelDims, tensors: dict) -> DecoderParams:
    """Rebuild a DecoderParams from a name -> array mapping (checkpoint load)."""
    if variant not in VARIANTS:
        raise DataError(f"unknown decoder variant {variant!r}")
    t = dict(tensors)
    params = DecoderParams(
        variant=variant,
        dims=dims,
        embedding=t["embedding"],
        init_h_w=t["init.h.W"],
        init_h_b=t["init.h.b"],
        init_c_w=t["init.c.W"],
        init_c_b=t["init.c.b"],
        gate_w={g: t[f"lstm.{g}.W"] for g in GATES},
        gate_r={g: t[f"lstm.{g}.R"] for g in GATES},
        gate_b={g: t[f"lstm.{g}.b"] for g in GATES},
        out_w=t["out.W"],
        out_b=t["out.b"],
    )
    if variant == "attention":
        params.att_feat_w = t["attention.feature.W"]
        params.att_hid_w = t["attention.hidden.W"]
        params.att_bias = t["attention.bias"]
        params.att_score = t["attention.score"]
        params.ctx_w = {g: t[f"context.{g}.W"] for g in GATES}
    expected = {name for name, _ in params.tensor_items()}
    if expected - set(tensors):
        raise DataError(f"missing tensors: {sorted(expected - set(tensors))}")
    return params


def copy_params(params: DecoderParams) -> DecoderParams:
    """Deep copy of all tensors; dims/variant are shared (immutable)."""
    return params_from_tensors(
        params.variant, params.dims,
        {name: arr.copy() for name, arr in params.tensor_items()},
    )


def cast_params(params: DecoderParams, dtype) -> DecoderParams:
    """Copy with every tensor cast; used to drive forward passes in a wider
    precision than the stored float64 (e.g. finite-difference oracles)."""
    return params_from_tensors(
        params.variant, params.dims,
        {name: arr.astype(dtype) for name, arr in params.tensor_items()},
    )


def _feature_matrix(features) -> np.ndarray:
    grid = features.regions if isinstance(features, FeatureSet) else features
    return np.asarray(grid, dtype=np.float64)


def init_states(params: DecoderParams, features):
    """Image-conditioned start states.

    Returns:
        (h0, c0, a, a_mean) where a is the float64 region matrix and
        a_mean its mean-pooled row, kept for the backward pass.
    """
    a = _feature_matrix(features)
    if a.shape[1] != params.dims.feature_dim:
        raise DataError(
            f"feature dim {a.shape[1]} does not match model dim "
            f"{params.dims.feature_dim}"
        )
    a_mean = a.mean(axis=0)
    h0 = tanh(a_mean @ params.init_h_w + params.init_h_b)
    c0 = tanh(a_mean @ params.init_c_w + params.init_c_b)
    return h0, c0, a, a_mean


def attention_context(params: DecoderParams, a, h_prev):
    """Score each region against the previous hidden state.

    Returns:
        (z, alpha, m): context vector, softmax weights over regions, and
        the tanh layer output kept for backward.
    """
    m = tanh(a @ params.att_feat_w + h_prev @ params.att_hid_w + params.att_bias)
    alpha = softmax(m @ params.att_score)
    z = alpha @ a
    return z, alpha, m


def _cell(params: DecoderParams, x, h_prev, c_prev, z=None):
    """Shared LSTM cell; z (when given) is mixed into every gate."""
    pre = {}
    for g in GATES:
        u = x @ params.gate_w[g] + h_prev @ params.gate_r[g]
        if z is not None:
            u = u + z @ params.ctx_w[g]
        pre[g] = u + params.gate_b[g]
    gi = sigmoid(pre["input"])
    gf = sigmoid(pre["forget"])
    go = sigmoid(pre["output"])
    gc = tanh(pre["cell"])
    c = gf * c_prev + gi * gc
    tc = tanh(c)
    h = go * tc
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev,
             "gi": gi, "gf": gf, "go": go, "gc": gc, "c": c, "tc": tc, "h": h}
    return h, c, cache


def lstm_step(params: DecoderParams, x, h_prev, c_prev):
    """One baseline step. Returns (h, c, cache)."""
    return _cell(params, x, h_prev, c_prev)


def attention_lstm_step(params: DecoderParams, x, z, h_prev, c_prev):
    """One attention step; with all-zero context weights this computes
    exactly what lstm_step computes. Returns (h, c, cache)."""
    return _cell(params, x, h_prev, c_prev, z=z)


def step_logits(params: DecoderParams, h) -> np.ndarray:
    return h @ params.out_w + params.out_b


@dataclass
class Tape:
    """Everything the backward pass needs for one sequence."""

    params: DecoderParams
    a: np.ndarray
    a_mean: np.ndarray
    input_ids: np.ndarray
    h0: np.ndarray
    c0: np.ndarray
    steps: list = field(default_factory=list)
    consumed: bool = False


def forward_sequence(params: DecoderParams, features, input_ids,
                     record_tape: bool = False):
    """Teacher-forced forward pass over one id sequence.

    Args:
        features: FeatureSet or raw (regions, dim) array for one image.
        input_ids: (T,) ids fed to the decoder; position 0 must be start.

    Returns:
        (logits, alphas, tape): logits is (T, vocab); alphas is (T, regions)
        for the attention variant, else None; tape is None unless requested.
    """
    input_ids = np.asarray(input_ids, dtype=np.int64)
    if input_ids.ndim != 1 or input_ids.size == 0:
        raise DataError("input_ids must be a non-empty 1-D id sequence")
    V = params.dims.vocab_size
    if input_ids.min() < 0 or input_ids.max() >= V:
        raise DataError(f"input id out of range [0, {V})")
    if input_ids[0] != START_ID:
        raise DataError(f"input_ids must begin with the start id {START_ID}")

    h, c, a, a_mean = init_states(params, features)
    T = input_ids.shape[0]
    dtype = params.embedding.dtype
    logits = np.empty((T, V), dtype=dtype)
    alphas = np.empty((T, a.shape[0]), dtype=dtype) \
        if params.variant == "attention" else None
    tape = Tape(params, a, a_mean, input_ids, h, c) if record_tape else None

    for t in range(T):
        x = embed(params.embedding, int(input_ids[t]))
        if params.variant == "attention":
            z, alpha, m = attention_context(params, a, h)
            alphas[t] = alpha
            h, c, cache = attention_lstm_step(params, x, z, h, c)
            cache.update({"z": z, "alpha": alpha, "m": m})
        else:
            h, c, cache = lstm_step(params, x, h, c)
        logits[t] = step_logits(params, h)
        if record_tape:
            tape.steps.append(cache)
    return logits, alphas, tape
