"""Teacher-forced training: loss, exact BPTT, Adam, the epoch loop, checkpoints.

The backward pass here is the analytic mirror of decoder.forward_sequence;
it is validated against central finite differences in the test suite.
"""

from __future__ import annotations

import copy
import json
import struct
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import inference, metrics
from .corpus import Batch, CaptionCorpus, Vocabulary, make_batches
from .decoder import (GATES, DecoderParams, ModelDims, VARIANTS, copy_params,
                      forward_sequence, init_params, params_from_tensors)
from .exceptions import CorruptionError, DataError, FormatError, VersionError
from .features import FeatureStore
from .nnmath import log_softmax
from .validation import check_ids_covered

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sI")


@dataclass
class TrainConfig:
    variant: str = "baseline"
    embed_dim: int = 256
    hidden_dim: int = 512
    attention_dim: int = 512
    learning_rate: float = 4e-4
    batch_size: int = 32
    max_epochs: int = 30
    clip_norm: float = 5.0
    early_stop_patience: int = 10
    seed: int = 0
    max_len: int = 38

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("embed_dim", "hidden_dim", "attention_dim", "learning_rate",
                     "batch_size", "max_epochs", "clip_norm", "early_stop_patience",
                     "max_len"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.max_len < 3:
            raise DataError(f"max_len must be >= 3 (start + token + end), "
                            f"got {self.max_len}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(blob) - known
        if unknown:
            raise DataError(f"unknown config fields: {sorted(unknown)}")
        return cls(**blob)


@dataclass
class BatchTape:
    """Per-sample forward tapes plus ready-to-use logit gradients."""

    samples: list
    token_count: float
    consumed: bool = False


def sequence_loss(params: DecoderParams, store: FeatureStore, batch: Batch,
                  record_tape: bool = True):
    """Mean negative log-likelihood per unmasked target token.

    Each caption is trimmed to its effective length before the forward pass;
    the mask is a contiguous prefix by construction, so nothing is lost.

    Returns:
        (loss, tape) where tape is a BatchTape (None if record_tape=False).
    """
    token_count = float(batch.mask.sum())
    if token_count == 0:
        raise DataError("sequence_loss: batch mask has no unmasked positions")
    total_nll = 0.0
    samples = []
    for b, image_id in enumerate(batch.image_ids):
        T = int(batch.mask[b].sum())
        inputs = batch.inputs[b, :T]
        targets = batch.targets[b, :T]
        logits, _, tape = forward_sequence(params, store[image_id], inputs,
                                           record_tape=record_tape)
        logp = log_softmax(logits)
        rows = np.arange(T)
        total_nll += -logp[rows, targets].sum()
        if record_tape:
            dlogits = np.exp(logp)
            dlogits[rows, targets] -= 1.0
            samples.append((tape, dlogits))
    loss = total_nll / token_count
    return loss, (BatchTape(samples, token_count) if record_tape else None)


def _backward_sequence(tape, dlogits, grads):
    """Exact BPTT for one sequence; accumulates into grads in place."""
    p = tape.params
    attention = p.variant == "attention"
    H = p.dims.hidden_dim
    a, a_mean = tape.a, tape.a_mean
    dh_carry = np.zeros(H)
    dc_carry = np.zeros(H)

    for t in range(len(tape.steps) - 1, -1, -1):
        s = tape.steps[t]
        dlog = dlogits[t]
        grads["out.W"] += np.outer(s["h"], dlog)
        grads["out.b"] += dlog
        dh = p.out_w @ dlog + dh_carry

        gi, gf, go, gc = s["gi"], s["gf"], s["go"], s["gc"]
        d_go = dh * s["tc"]
        dc = dh * go * (1.0 - s["tc"] ** 2) + dc_carry
        du = {
            "input": (dc * gc) * gi * (1.0 - gi),
            "forget": (dc * s["c_prev"]) * gf * (1.0 - gf),
            "output": d_go * go * (1.0 - go),
            "cell": (dc * gi) * (1.0 - gc * gc),
        }
        dc_carry = dc * gf

        x, h_prev = s["x"], s["h_prev"]
        dx = np.zeros(p.dims.embed_dim)
        dh_prev = np.zeros(H)
        dz = np.zeros(p.dims.feature_dim) if attention else None
        for g in GATES:
            u = du[g]
            grads[f"lstm.{g}.W"] += np.outer(x, u)
            grads[f"lstm.{g}.R"] += np.outer(h_prev, u)
            grads[f"lstm.{g}.b"] += u
            dx += p.gate_w[g] @ u
            dh_prev += p.gate_r[g] @ u
            if attention:
                grads[f"context.{g}.W"] += np.outer(s["z"], u)
                dz += p.ctx_w[g] @ u

        if attention:
            alpha, m = s["alpha"], s["m"]
            dalpha = a @ dz
            dscore = alpha * (dalpha - float(alpha @ dalpha))
            grads["attention.score"] += m.T @ dscore
            dm = np.outer(dscore, p.att_score)
            dpre = dm * (1.0 - m * m)
            dpre_sum = dpre.sum(axis=0)
            grads["attention.feature.W"] += a.T @ dpre
            grads["attention.hidden.W"] += np.outer(h_prev, dpre_sum)
            grads["attention.bias"] += dpre_sum
            dh_prev += p.att_hid_w @ dpre_sum

        grads["embedding"][int(tape.input_ids[t])] += dx
        dh_carry = dh_prev

    dpre_h = dh_carry * (1.0 - tape.h0 ** 2)
    grads["init.h.W"] += np.outer(a_mean, dpre_h)
    grads["init.h.b"] += dpre_h
    dpre_c = dc_carry * (1.0 - tape.c0 ** 2)
    grads["init.c.W"] += np.outer(a_mean, dpre_c)
    grads["init.c.b"] += dpre_c


def backward_pass(batch_tape: BatchTape) -> dict:
    """Gradients of sequence_loss for every DecoderParams tensor.

    A tape is single-use: gradients flow once, then the tape is dead.
    """
    if batch_tape is None or not isinstance(batch_tape, BatchTape):
        raise DataError("backward_pass needs the tape returned by sequence_loss")
    if batch_tape.consumed:
        raise DataError("backward_pass: tape already consumed")
    batch_tape.consumed = True
    first_tape = batch_tape.samples[0][0]
    grads = {name: np.zeros_like(arr)
             for name, arr in first_tape.params.tensor_items()}
    for tape, dlogits in batch_tape.samples:
        _backward_sequence(tape, dlogits / batch_tape.token_count, grads)
    return grads


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale all tensors by max_norm/norm when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise DataError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: DecoderParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.tensor_items()},
            v={name: np.zeros_like(arr) for name, arr in params.tensor_items()},
        )

    def clone(self) -> "AdamState":
        return AdamState(m={k: a.copy() for k, a in self.m.items()},
                         v={k: a.copy() for k, a in self.v.items()}, t=self.t)


def adam_step(params: DecoderParams, grads: dict, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, in place over params and state."""
    state.t += 1
    t = state.t
    for name, arr in params.tensor_items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Checkpoint:
    """Full training state at one epoch; enough to resume exactly."""

    config: TrainConfig
    vocab_hash: str
    params: DecoderParams
    adam: AdamState
    epoch: int
    best_val_bleu4: float


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_bleu4: float
    seconds: float


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def csv_text(self, timing: bool = False) -> str:
        """Render the log as CSV.

        The default view holds only model-derived columns, so identical
        runs serialize to identical bytes; timing=True appends the
        wall-clock seconds column for diagnostics.
        """
        lines = ["epoch,train_loss,val_loss,val_bleu4" + (",seconds" if timing else "")]
        for r in self.rows:
            cells = [str(r.epoch), repr(float(r.train_loss)),
                     repr(float(r.val_loss)), repr(float(r.val_bleu4))]
            if timing:
                cells.append(f"{r.seconds:.3f}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.csv_text(), encoding="utf-8")


def evaluate_loss(params: DecoderParams, store: FeatureStore, batches) -> float:
    total, tokens = 0.0, 0.0
    for batch in batches:
        loss, _ = sequence_loss(params, store, batch, record_tape=False)
        n = float(batch.mask.sum())
        total += loss * n
        tokens += n
    return total / tokens if tokens else 0.0


def validation_bleu4(params: DecoderParams, store: FeatureStore,
                     corpus: CaptionCorpus, image_ids, vocab: Vocabulary,
                     max_len: int) -> float:
    """Greedy-decode every validation image and score corpus BLEU-4.

    Empty decodes (possible early in training) are scored as a lone unk
    token so the metric stays defined.
    """
    instances = []
    for image_id in sorted(image_ids):
        cap = inference.greedy_decode(params, store[image_id], vocab, max_len)
        words = cap.words if cap.words else ["<unk>"]
        instances.append(metrics.EvalInstance(image_id, words,
                                              corpus.references(image_id)))
    return metrics.bleu(instances)[3]


def train(config: TrainConfig, store: FeatureStore, corpus: CaptionCorpus,
          vocab: Vocabulary, splits, run_dir=None, resume: Checkpoint | None = None):
    """Run the epoch loop; returns (best Checkpoint, TrainLog).

    splits is (train_image_ids, val_image_ids). The checkpoint snapshots the
    epoch with the best validation BLEU-4, including optimizer state, so a
    resumed run replays exactly what an uninterrupted one would have done.
    When run_dir is given, config.json, vocab.json, checkpoint.ckpt and
    trainlog.csv are written there.
    """
    train_ids, val_ids = splits
    for ids, what in ((train_ids, "features"), (val_ids, "features")):
        check_ids_covered(ids, store, what=what)
    for ids in (train_ids, val_ids):
        check_ids_covered(ids, corpus.by_image, what="captions")

    train_records = corpus.subset(train_ids).records
    if not train_records:
        raise DataError("training split has no captions")
    val_batches = make_batches(corpus.subset(val_ids).records, vocab,
                               config.max_len, config.batch_size)

    vocab_hash = vocab.content_hash()
    if resume is not None:
        if resume.vocab_hash != vocab_hash:
            raise DataError("resume checkpoint was trained with a different vocabulary")
        params = copy_params(resume.params)
        adam = resume.adam.clone()
        start_epoch = resume.epoch + 1
        best_score = resume.best_val_bleu4
        best = (copy_params(params), adam.clone(), resume.epoch, best_score)
    else:
        dims = ModelDims(vocab_size=len(vocab), embed_dim=config.embed_dim,
                         hidden_dim=config.hidden_dim, feature_dim=store.dim,
                         attention_dim=config.attention_dim)
        params = init_params(config.variant, dims, config.seed)
        adam = AdamState.for_params(params)
        start_epoch = 1
        best_score = -np.inf
        best = None

    log = TrainLog()
    since_best = 0
    for epoch in range(start_epoch, config.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_records, vocab, config.max_len,
                               config.batch_size, shuffle_seed=[config.seed, epoch])
        total_nll, tokens = 0.0, 0.0
        for batch in batches:
            loss, tape = sequence_loss(params, store, batch)
            grads = backward_pass(tape)
            clip_gradients(grads, config.clip_norm)
            adam_step(params, grads, adam, config.learning_rate)
            n = float(batch.mask.sum())
            total_nll += loss * n
            tokens += n
        train_loss = total_nll / tokens
        val_loss = evaluate_loss(params, store, val_batches)
        val_b4 = validation_bleu4(params, store, corpus, val_ids, vocab,
                                  config.max_len)
        log.rows.append(EpochStats(epoch, train_loss, val_loss, val_b4,
                                   time.perf_counter() - t0))
        if val_b4 > best_score:
            best_score = val_b4
            best = (copy_params(params), adam.clone(), epoch, best_score)
            since_best = 0
        else:
            since_best += 1
            if since_best > config.early_stop_patience:
                break

    if best is None:
        if resume is None:
            raise DataError("train ran no epochs; check max_epochs")
        best = (copy_params(resume.params), resume.adam.clone(),
                resume.epoch, resume.best_val_bleu4)
    ckpt = Checkpoint(config=config, vocab_hash=vocab_hash, params=best[0],
                      adam=best[1], epoch=best[2], best_val_bleu4=best[3])

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump({"config": config.to_dict(), "vocab_hash": vocab_hash,
                       "encoder": store.manifest.to_dict()}, fh, indent=2)
        vocab.save(run_dir / "vocab.json")
        save_checkpoint(ckpt, run_dir / "checkpoint.ckpt")
        log.save(run_dir / "trainlog.csv")
    return ckpt, log


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """JSON header + raw little-endian float64 payload, tensors in declared
    order: params, then Adam first and second moments."""
    items = ckpt.params.tensor_items()
    header = {
        "format_version": CKPT_VERSION,
        "config": ckpt.config.to_dict(),
        "vocab_hash": ckpt.vocab_hash,
        "variant": ckpt.params.variant,
        "dims": asdict(ckpt.params.dims),
        "dtype": "<f8",
        "epoch": ckpt.epoch,
        "best_val_bleu4": ckpt.best_val_bleu4,
        "adam_t": ckpt.adam.t,
        "tensors": [[name, list(arr.shape)] for name, arr in items],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(CKPT_MAGIC, len(raw)))
        fh.write(raw)
        for _, arr in items:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for moments in (ckpt.adam.m, ckpt.adam.v):
            for name, _ in items:
                fh.write(np.ascontiguousarray(moments[name], dtype="<f8").tobytes())


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Checkpoint:
    """Read a checkpoint; when vocab is given its hash must match."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: too small to be a checkpoint")
    magic, header_len = _CKPT_HEAD.unpack_from(blob, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    try:
        header = json.loads(blob[_CKPT_HEAD.size:_CKPT_HEAD.size + header_len])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable checkpoint header") from exc
    if header.get("format_version") != CKPT_VERSION:
        raise VersionError(
            f"{path}: checkpoint version {header.get('format_version')}, "
            f"reader supports {CKPT_VERSION}"
        )
    if vocab is not None and header["vocab_hash"] != vocab.content_hash():
        raise DataError(f"{path}: checkpoint vocabulary hash does not match "
                        "the supplied vocabulary")

    shapes = [(name, tuple(shape)) for name, shape in header["tensors"]]
    n_floats = sum(int(np.prod(s)) for _, s in shapes)
    payload = blob[_CKPT_HEAD.size + header_len:]
    if len(payload) != 3 * n_floats * 8:
        raise CorruptionError(f"{path}: payload is {len(payload)} bytes, "
                              f"expected {3 * n_floats * 8}")

    def take(pos):
        out = {}
        for name, shape in shapes:
            n = int(np.prod(shape))
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=pos * 8)
            out[name] = arr.reshape(shape).copy()
            pos += n
        return out, pos

    tensors, pos = take(0)
    m, pos = take(pos)
    v, _ = take(pos)
    config = TrainConfig.from_dict(header["config"])
    dims = ModelDims(**header["dims"])
    params = params_from_tensors(header["variant"], dims, tensors)
    adam = AdamState(m=m, v=v, t=int(header["adam_t"]))
    return Checkpoint(config=config, vocab_hash=header["vocab_hash"],
                      params=params, adam=adam, epoch=int(header["epoch"]),
                      best_val_bleu4=float(header["best_val_bleu4"]))
