"""Caption generation: greedy decoding and beam search.

Scores are summed token log-probabilities with no length normalization.
For the attention variant every emitted token carries its softmax weights
over regions, stacked into an (emitted, regions) trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import END_ID, START_ID, Vocabulary
from .decoder import (DecoderParams, attention_context, attention_lstm_step,
                      init_states, lstm_step, step_logits)
from .exceptions import DataError, UsageError
from .nnmath import embed, log_softmax


@dataclass
class DecodedCaption:
    ids: list
    words: list
    log_prob: float
    attention: np.ndarray | None = None


def _advance(params, a, token_id, h, c):
    """One decoding step from the last emitted id; returns (h, c, logprobs, alpha)."""
    x = embed(params.embedding, token_id)
    alpha = None
    if params.variant == "attention":
        z, alpha, _ = attention_context(params, a, h)
        h, c, _ = attention_lstm_step(params, x, z, h, c)
    else:
        h, c, _ = lstm_step(params, x, h, c)
    return h, c, log_softmax(step_logits(params, h)), alpha


def _finish(ids, log_prob, alphas, vocab):
    trace = np.stack(alphas) if alphas else None
    return DecodedCaption(ids=list(ids), words=vocab.decode_tokens(ids),
                          log_prob=float(log_prob), attention=trace)


def greedy_decode(params: DecoderParams, features, vocab: Vocabulary,
                  max_len: int) -> DecodedCaption:
    """Feed the argmax token back in until end or max_len total length.

    Exact ties pick the smaller id (numpy argmax takes the first maximum).
    """
    if max_len < 2:
        raise DataError(f"max_len must be >= 2, got {max_len}")
    h, c, a, _ = init_states(params, features)
    ids = [START_ID]
    alphas = []
    total = 0.0
    for _ in range(max_len - 1):
        h, c, logprobs, alpha = _advance(params, a, ids[-1], h, c)
        if alpha is not None:
            alphas.append(alpha)
        tok = int(np.argmax(logprobs))
        ids.append(tok)
        total += logprobs[tok]
        if tok == END_ID:
            break
    return _finish(ids, total, alphas, vocab)


def beam_decode_all(params: DecoderParams, features, vocab: Vocabulary,
                    beam_width: int, max_len: int) -> list[DecodedCaption]:
    """Beam search returning the ranked n-best list (best first).

    Each step expands every active hypothesis over the whole vocabulary and
    keeps the beam_width best by (log_prob, then lexicographically smaller
    id sequence). Hypotheses that emit end retire from the beam; if none
    finish within max_len the best unfinished ones are returned instead.
    """
    if beam_width < 1:
        raise UsageError(f"beam_width must be >= 1, got {beam_width}")
    if max_len < 2:
        raise DataError(f"max_len must be >= 2, got {max_len}")
    h0, c0, a, _ = init_states(params, features)
    # hypothesis: (ids tuple, log_prob, h, c, alphas tuple)
    active = [((START_ID,), 0.0, h0, c0, ())]
    finished = []
    for _ in range(max_len - 1):
        if not active:
            break
        candidates = []
        for ids, lp, h, c, alphas in active:
            h2, c2, logprobs, alpha = _advance(params, a, ids[-1], h, c)
            alphas2 = alphas + (alpha,) if alpha is not None else alphas
            for tok in range(params.dims.vocab_size):
                candidates.append((ids + (tok,), lp + logprobs[tok], h2, c2, alphas2))
        candidates.sort(key=lambda cand: (-cand[1], cand[0]))
        active = []
        for cand in candidates[:beam_width]:
            if cand[0][-1] == END_ID:
                finished.append(cand)
            else:
                active.append(cand)
    pool = finished if finished else active
    pool.sort(key=lambda cand: (-cand[1], cand[0]))
    return [_finish(ids, lp, list(alphas), vocab)
            for ids, lp, _, _, alphas in pool]


def beam_decode(params: DecoderParams, features, vocab: Vocabulary,
                beam_width: int, max_len: int) -> DecodedCaption:
    """Best hypothesis from beam_decode_all."""
    return beam_decode_all(params, features, vocab, beam_width, max_len)[0]


def caption_images(params: DecoderParams, store, vocab: Vocabulary,
                   image_ids, max_len: int, beam_width: int | None = None):
    """Decode many images deterministically (sorted by id).

    Returns a list of (image_id, DecodedCaption). beam_width None means
    greedy decoding.
    """
    out = []
    for image_id in sorted(image_ids):
        fs = store[image_id]
        if beam_width is None or beam_width == 1:
            cap = greedy_decode(params, fs, vocab, max_len)
        else:
            cap = beam_decode(params, fs, vocab, beam_width, max_len)
        out.append((image_id, cap))
    return out
