"""Corpus-level caption metrics: BLEU-1..4, ROUGE-L, CIDEr-D.

All reported scores are x100. BLEU pools clipped n-gram counts over the
whole corpus (no smoothing); ROUGE-L takes the best F-measure (beta=1.2)
over each instance's references and averages; CIDEr-D uses tf-idf n-gram
vectors with count clipping and a Gaussian length penalty (sigma=6).
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field

from .exceptions import DataError

CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2
MAX_NGRAM = 4


@dataclass
class EvalInstance:
    image_id: str
    candidate: list
    references: list

    def __post_init__(self):
        if not self.candidate:
            raise DataError(f"empty candidate for image {self.image_id!r}")
        if not self.references or any(not r for r in self.references):
            raise DataError(f"image {self.image_id!r} needs non-empty references")


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    n_instances: int
    cnn_name: str = "unknown"
    parameter_count_thousands: int = 0
    dataset_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1, "bleu2": self.bleu2,
            "bleu3": self.bleu3, "bleu4": self.bleu4,
            "rouge_l": self.rouge_l, "cider": self.cider,
            "n_instances": self.n_instances,
            "cnn_name": self.cnn_name,
            "parameter_count_thousands": self.parameter_count_thousands,
            "dataset_hash": self.dataset_hash,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "MetricReport":
        return cls(**{k: blob[k] for k in cls.__dataclass_fields__ if k in blob})


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _require(instances):
    if not instances:
        raise DataError("metric called with no instances")
    return instances


def bleu(instances) -> tuple:
    """Corpus BLEU-1..4 (x100), clipped counts pooled over all instances."""
    _require(instances)
    correct = [0] * MAX_NGRAM
    guess = [0] * MAX_NGRAM
    cand_len = 0
    ref_len = 0
    for inst in instances:
        c = len(inst.candidate)
        cand_len += c
        # closest reference length; ties prefer the shorter one
        ref_len += min((len(r) for r in inst.references),
                       key=lambda L: (abs(L - c), L))
        for n in range(1, MAX_NGRAM + 1):
            counts = _ngrams(inst.candidate, n)
            best = Counter()
            for ref in inst.references:
                for gram, cnt in _ngrams(ref, n).items():
                    if cnt > best[gram]:
                        best[gram] = cnt
            correct[n - 1] += sum(min(cnt, best[gram]) for gram, cnt in counts.items())
            guess[n - 1] += max(0, c - n + 1)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    for k in range(1, MAX_NGRAM + 1):
        ps = [correct[n] / guess[n] if guess[n] else 0.0 for n in range(k)]
        if min(ps) == 0.0:
            scores.append(0.0)
        else:
            scores.append(100.0 * bp * math.exp(sum(math.log(p) for p in ps) / k))
    return tuple(scores)


def _lcs_len(a, b) -> int:
    """Classic O(len(a)*len(b)) longest-common-subsequence table."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(instances) -> float:
    """Mean over instances of the best per-reference LCS F-measure (x100)."""
    _require(instances)
    total = 0.0
    b2 = ROUGE_BETA * ROUGE_BETA
    for inst in instances:
        best = 0.0
        for ref in inst.references:
            lcs = _lcs_len(inst.candidate, ref)
            if lcs == 0:
                continue
            prec = lcs / len(inst.candidate)
            rec = lcs / len(ref)
            f = (1.0 + b2) * prec * rec / (rec + b2 * prec)
            best = max(best, f)
        total += best
    return 100.0 * total / len(instances)


def cider(instances) -> float:
    """CIDEr-D on the evaluation kit's 0-10 scale.

    Documents for idf are per-image reference sets. Similarity per n is the
    clipped tf-idf cosine, damped by exp(-(len_c - len_r)^2 / (2*sigma^2)),
    averaged over references then over n = 1..4, times 10.
    """
    _require(instances)
    M = len(instances)
    if M == 1:
        warnings.warn("cider over a single image: all idf weights are zero",
                      stacklevel=2)
    doc_freq = Counter()
    for inst in instances:
        grams = set()
        for ref in inst.references:
            for n in range(1, MAX_NGRAM + 1):
                grams.update(_ngrams(ref, n))
        doc_freq.update(grams)
    log_m = math.log(M)

    def tfidf_vec(tokens):
        vecs, norms = [], []
        for n in range(1, MAX_NGRAM + 1):
            vec = {g: cnt * (log_m - math.log(max(1, doc_freq[g])))
                   for g, cnt in _ngrams(tokens, n).items()}
            vecs.append(vec)
            norms.append(math.sqrt(sum(w * w for w in vec.values())))
        return vecs, norms

    total = 0.0
    for inst in instances:
        cvecs, cnorms = tfidf_vec(inst.candidate)
        per_n = [0.0] * MAX_NGRAM
        for ref in inst.references:
            rvecs, rnorms = tfidf_vec(ref)
            delta = float(len(inst.candidate) - len(ref))
            damp = math.exp(-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA))
            for n in range(MAX_NGRAM):
                acc = sum(min(w, rvecs[n].get(g, 0.0)) * rvecs[n].get(g, 0.0)
                          for g, w in cvecs[n].items())
                if cnorms[n] != 0.0 and rnorms[n] != 0.0:
                    acc /= cnorms[n] * rnorms[n]
                per_n[n] += acc * damp
        total += 10.0 * sum(per_n) / (MAX_NGRAM * len(inst.references))
    return total / M


def evaluate_run(candidates: dict, corpus, image_ids, cnn_name: str = "unknown",
                 parameter_count_thousands: int = 0,
                 dataset_hash: str = "") -> MetricReport:
    """Score candidate word lists against each split image's references.

    Args:
        candidates: image_id -> word list.
        corpus: CaptionCorpus supplying references.
        image_ids: the split to score; every id needs a candidate.
    """
    image_ids = sorted(image_ids)
    missing = [i for i in image_ids if i not in candidates]
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise DataError(f"no candidate caption for {len(missing)} images: {shown}{more}")
    instances = [EvalInstance(i, list(candidates[i]), corpus.references(i))
                 for i in image_ids]
    b1, b2, b3, b4 = bleu(instances)
    return MetricReport(
        bleu1=b1, bleu2=b2, bleu3=b3, bleu4=b4,
        rouge_l=rouge_l(instances),
        cider=10.0 * cider(instances),
        n_instances=len(instances),
        cnn_name=cnn_name,
        parameter_count_thousands=parameter_count_thousands,
        dataset_hash=dataset_hash,
    )
