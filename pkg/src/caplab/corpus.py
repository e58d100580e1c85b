"""Caption corpus handling: token files, vocabulary, batch construction.

Caption files use one record per line: `<image_id>#<index>\\t<caption text>`.
Token ids 0..3 are reserved: pad=0, start=1, end=2, unk=3; real words get
ids from 4 upward, ordered by descending corpus frequency (ties broken
lexicographically) so a rebuilt vocabulary is always identical.
"""

from __future__ import annotations

import hashlib
import json
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, ParseError

PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3
PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
SPECIALS = (PAD, START, END, UNK)

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, drop trailing punctuation-only tokens.

    >>> tokenize("A dog runs .")
    ['a', 'dog', 'runs']
    """
    toks = text.lower().split()
    while toks and all(ch in _PUNCT for ch in toks[-1]):
        toks.pop()
    return toks


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    caption_index: int
    tokens: tuple[str, ...]


def load_caption_file(path) -> list[CaptionRecord]:
    """Parse a caption token file into records.

    Raises ParseError naming the first bad line, and DataError on duplicate
    (image_id, caption_index) keys.
    """
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            head, sep, text = line.partition("\t")
            if not sep:
                raise ParseError(f"{path}:{lineno}: expected '<image>#<idx>\\t<caption>'")
            image_id, sep, idx = head.rpartition("#")
            if not sep or not idx.isdigit():
                raise ParseError(f"{path}:{lineno}: bad record key {head!r}")
            tokens = tokenize(text)
            if not tokens:
                raise ParseError(f"{path}:{lineno}: caption has no tokens after cleanup")
            key = (image_id, int(idx))
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate caption key {head!r}")
            seen.add(key)
            records.append(CaptionRecord(image_id, int(idx), tuple(tokens)))
    return records


class CaptionCorpus:
    """All captions of a dataset, addressable by image id."""

    def __init__(self, records: list[CaptionRecord]):
        self.records = sorted(records, key=lambda r: (r.image_id, r.caption_index))
        self.by_image: dict[str, list[CaptionRecord]] = {}
        for rec in self.records:
            self.by_image.setdefault(rec.image_id, []).append(rec)

    @classmethod
    def load(cls, path) -> "CaptionCorpus":
        return cls(load_caption_file(path))

    def image_ids(self) -> list[str]:
        return sorted(self.by_image)

    def references(self, image_id: str) -> list[list[str]]:
        """Token lists of every caption for one image."""
        if image_id not in self.by_image:
            raise DataError(f"no captions for image {image_id!r}")
        return [list(rec.tokens) for rec in self.by_image[image_id]]

    def subset(self, image_ids) -> "CaptionCorpus":
        wanted = set(image_ids)
        return CaptionCorpus([r for r in self.records if r.image_id in wanted])

    def __len__(self):
        return len(self.records)


def load_split(path) -> list[str]:
    """Read one image id per line; order kept, blanks skipped."""
    ids = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            image_id = line.strip()
            if image_id and image_id not in seen:
                seen.add(image_id)
                ids.append(image_id)
    if not ids:
        raise DataError(f"split file {path} lists no image ids")
    return ids


class Vocabulary:
    """Word <-> id mapping with the four reserved ids fixed."""

    def __init__(self, tokens: list[str], min_freq: int):
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary token list contains duplicates")
        if any(t in SPECIALS for t in tokens):
            raise DataError("vocabulary token list may not contain reserved tokens")
        self.min_freq = min_freq
        self.id_to_word = list(SPECIALS) + list(tokens)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    @classmethod
    def build(cls, token_lists, min_freq: int = 5) -> "Vocabulary":
        """Count words over token lists and keep those with freq >= min_freq."""
        counts = Counter()
        for toks in token_lists:
            counts.update(toks)
        kept = [w for w, c in counts.items() if c >= min_freq]
        kept.sort(key=lambda w: (-counts[w], w))
        return cls(kept, min_freq)

    def __len__(self):
        return len(self.id_to_word)

    def __contains__(self, word):
        return word in self.word_to_id

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.id_to_word):
            raise DataError(f"token id {token_id} out of range [0, {len(self)})")
        return self.id_to_word[token_id]

    def encode_caption(self, tokens, max_len: int) -> tuple[list[int], int]:
        """Wrap tokens in start/end ids, truncate to fit, pad to max_len.

        Returns (ids, effective_length) where ids has exactly max_len entries
        and effective_length counts start + kept tokens + end.
        """
        body = [self.id_of(t) for t in tokens][: max_len - 2]
        ids = [START_ID] + body + [END_ID]
        length = len(ids)
        ids.extend([PAD_ID] * (max_len - length))
        return ids, length

    def decode_tokens(self, ids) -> list[str]:
        """Ids back to words: start/pad dropped, stops at the first end id."""
        words = []
        for token_id in ids:
            if token_id == END_ID:
                break
            if token_id in (PAD_ID, START_ID):
                continue
            words.append(self.word_of(int(token_id)))
        return words

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.id_to_word[4:], "min_freq": self.min_freq}, fh)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            try:
                blob = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(blob, dict) or "tokens" not in blob or "min_freq" not in blob:
            raise ParseError(f"{path}: expected object with 'tokens' and 'min_freq'")
        return cls(list(blob["tokens"]), int(blob["min_freq"]))

    def content_hash(self) -> str:
        """Stable digest used to pair checkpoints with their vocabulary."""
        canon = json.dumps(
            {"tokens": self.id_to_word[4:], "min_freq": self.min_freq},
            sort_keys=True, separators=(",", ":"),
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass
class Batch:
    """Teacher-forcing arrays for a group of captions.

    inputs[b, t] feeds the decoder at step t; targets[b, t] is the id the
    decoder should predict there; mask is 1.0 exactly where the target is
    a real token (not pad).
    """

    image_ids: list[str]
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not (self.inputs.shape == self.targets.shape == self.mask.shape):
            raise DataError("batch arrays must share one shape")
        if len(self.image_ids) != self.inputs.shape[0]:
            raise DataError("batch image_ids length must match array rows")


def make_batches(records, vocab: Vocabulary, max_len: int, batch_size: int,
                 shuffle_seed=None) -> list[Batch]:
    """Encode caption records into batches of size <= batch_size.

    Order is deterministic: records are sorted by (image_id, caption_index),
    then permuted by shuffle_seed when given. Shifted copies implement
    next-token prediction: inputs = ids[:-1], targets = ids[1:].
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if max_len < 3:
        raise DataError(f"max_len must be >= 3, got {max_len}")
    recs = sorted(records, key=lambda r: (r.image_id, r.caption_index))
    if shuffle_seed is not None:
        rng = np.random.default_rng(shuffle_seed)
        recs = [recs[i] for i in rng.permutation(len(recs))]
    batches = []
    for lo in range(0, len(recs), batch_size):
        chunk = recs[lo:lo + batch_size]
        ids = np.array([vocab.encode_caption(r.tokens, max_len)[0] for r in chunk],
                       dtype=np.int64)
        inputs, targets = ids[:, :-1], ids[:, 1:]
        mask = (targets != PAD_ID).astype(np.float64)
        batches.append(Batch([r.image_id for r in chunk], inputs, targets, mask))
    return batches
