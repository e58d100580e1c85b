"""Greedy and beam decoding.

The exhaustive enumerator below scores every end-terminated sequence and is
the ground truth the beam is checked against.
"""

import numpy as np
import pytest

from caplab.corpus import END_ID, START_ID, Vocabulary
from caplab.decoder import ModelDims, init_params, init_states
from caplab.exceptions import UsageError
from caplab.features import synthetic_store
from caplab.inference import (
    _advance,
    beam_decode,
    beam_decode_all,
    caption_images,
    greedy_decode,
)

VOCAB = Vocabulary(["w4"], min_freq=1)  # four specials + one word = 5 ids
V, MAX_LEN = 5, 4
DIMS = ModelDims(vocab_size=V, embed_dim=4, hidden_dim=6, feature_dim=5,
                 attention_dim=4)


def toy_model(seed):
    variant = "baseline" if seed % 2 == 0 else "attention"
    return init_params(variant, DIMS, seed=seed)


def toy_features(seed):
    return synthetic_store(["im"], regions=3, dim=5, seed=seed + 5000)["im"]


def enumerate_best(params, features):
    """Argmax over every sequence that ends with the end token within
    MAX_LEN total ids, ties broken toward lexicographically smaller ids."""
    h0, c0, a, _ = init_states(params, features)
    best = {}

    def recurse(ids, log_prob, h, c):
        if ids[-1] == END_ID:
            key = (-log_prob, tuple(ids))
            if "best" not in best or key < best["best"][0]:
                best["best"] = (key, list(ids), log_prob)
            return
        if len(ids) == MAX_LEN:
            return
        h2, c2, logprobs, _ = _advance(params, a, ids[-1], h, c)
        for token in range(V):
            recurse(ids + [token], log_prob + logprobs[token], h2, c2)

    recurse([START_ID], 0.0, h0, c0)
    return best["best"][1], best["best"][2]


class TestGreedy:
    def test_deterministic(self):
        p, f = toy_model(0), toy_features(0)
        a = greedy_decode(p, f, VOCAB, MAX_LEN)
        b = greedy_decode(p, f, VOCAB, MAX_LEN)
        assert a.ids == b.ids and a.log_prob == b.log_prob

    def test_starts_with_start_and_respects_max_len(self):
        for seed in range(10):
            cap = greedy_decode(toy_model(seed), toy_features(seed), VOCAB, MAX_LEN)
            assert cap.ids[0] == START_ID
            assert len(cap.ids) <= MAX_LEN

    def test_tie_breaks_toward_smaller_id(self):
        p = init_params("baseline", DIMS, seed=0)
        for name, arr in p.tensor_items():
            arr[...] = 0.0
        p.out_b[END_ID] = 5.0
        p.out_b[4] = 5.0  # tied with the end token; end id is smaller
        cap = greedy_decode(p, toy_features(0), VOCAB, MAX_LEN)
        assert cap.ids == [START_ID, END_ID]

    def test_log_prob_is_sum_of_step_logprobs(self):
        p, f = toy_model(3), toy_features(3)
        cap = greedy_decode(p, f, VOCAB, MAX_LEN)
        h, c, a, _ = init_states(p, f)
        total = 0.0
        for prev, emitted in zip(cap.ids, cap.ids[1:]):
            h, c, logprobs, _ = _advance(p, a, prev, h, c)
            total += logprobs[emitted]
        assert cap.log_prob == pytest.approx(total, abs=1e-12)

    def test_attention_recorded_per_emitted_token(self):
        p = init_params("attention", DIMS, seed=1)
        cap = greedy_decode(p, toy_features(1), VOCAB, MAX_LEN)
        assert cap.attention is not None
        assert len(cap.attention) == len(cap.ids) - 1
        for alpha in cap.attention:
            assert alpha.shape == (3,)
            assert alpha.sum() == pytest.approx(1.0, abs=1e-9)


class TestBeam:
    @pytest.mark.parametrize("seed", range(30))
    def test_width_one_equals_greedy(self, seed):
        p, f = toy_model(seed), toy_features(seed)
        g = greedy_decode(p, f, VOCAB, MAX_LEN)
        b = beam_decode(p, f, VOCAB, 1, MAX_LEN)
        assert b.ids == g.ids
        assert b.log_prob == pytest.approx(g.log_prob, abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_full_width_finds_global_argmax(self, seed):
        p, f = toy_model(seed), toy_features(seed)
        want_ids, want_lp = enumerate_best(p, f)
        got = beam_decode(p, f, VOCAB, V, MAX_LEN)
        assert got.ids == want_ids
        assert got.log_prob == pytest.approx(want_lp, abs=1e-10)

    def test_all_returns_sorted_unique_hypotheses(self):
        p, f = toy_model(2), toy_features(2)
        caps = beam_decode_all(p, f, VOCAB, 3, MAX_LEN)
        assert 1 <= len(caps) <= 3
        scores = [c.log_prob for c in caps]
        assert scores == sorted(scores, reverse=True)
        assert len({tuple(c.ids) for c in caps}) == len(caps)

    def test_invalid_width_rejected(self):
        with pytest.raises(UsageError):
            beam_decode(toy_model(0), toy_features(0), VOCAB, 0, MAX_LEN)

    def test_sequences_are_end_terminated(self):
        for seed in range(10):
            cap = beam_decode(toy_model(seed), toy_features(seed), VOCAB, 3,
                              MAX_LEN)
            assert cap.ids[-1] == END_ID or len(cap.ids) == MAX_LEN


class TestCaptionImages:
    def test_orders_by_image_id(self):
        store = synthetic_store(["b", "a", "c"], regions=3, dim=5, seed=7)
        p = toy_model(4)
        caps = caption_images(p, store, VOCAB, ["b", "a", "c"], MAX_LEN)
        assert [image_id for image_id, _ in caps] == ["a", "b", "c"]

    def test_dispatches_to_greedy_or_beam(self):
        store = synthetic_store(["a", "b"], regions=3, dim=5, seed=8)
        p = toy_model(6)
        greedy = dict(caption_images(p, store, VOCAB, ["a", "b"], MAX_LEN))
        beamed = dict(caption_images(p, store, VOCAB, ["a", "b"], MAX_LEN,
                                     beam_width=2))
        for image_id in ("a", "b"):
            fs = store[image_id]
            assert greedy[image_id].ids == \
                greedy_decode(p, fs, VOCAB, MAX_LEN).ids
            assert beamed[image_id].ids == \
                beam_decode(p, fs, VOCAB, 2, MAX_LEN).ids
