"""Scikit-learn style facade over the training and decoding pipeline."""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import inference, metrics
from .corpus import CaptionCorpus, Vocabulary
from .decoder import VARIANTS
from .training import TrainConfig, train
from .validation import (check_choice, check_feature_store, check_ids_covered,
                         check_is_fitted, check_positive)


class CaptionGenerator(BaseEstimator):
    """Image caption generator with a fit/predict interface.

    X is a FeatureStore (pre-extracted CNN features); y is a CaptionCorpus.
    fit trains the chosen decoder variant and keeps the best-validation
    checkpoint; predict greedy- or beam-decodes captions for stored images.

    Parameters mirror TrainConfig plus vocabulary and decoding controls.
    """

    def __init__(self, variant="baseline", embed_dim=256, hidden_dim=512,
                 attention_dim=512, learning_rate=4e-4, batch_size=32,
                 max_epochs=30, clip_norm=5.0, early_stop_patience=10,
                 min_freq=5, max_len=38, beam_width=1, seed=0):
        self.variant = variant
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.clip_norm = clip_norm
        self.early_stop_patience = early_stop_patience
        self.min_freq = min_freq
        self.max_len = max_len
        self.beam_width = beam_width
        self.seed = seed

    def _config(self) -> TrainConfig:
        check_choice("variant", self.variant, VARIANTS)
        check_positive("min_freq", self.min_freq)
        check_positive("beam_width", self.beam_width)
        return TrainConfig(
            variant=self.variant, embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim, attention_dim=self.attention_dim,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, clip_norm=self.clip_norm,
            early_stop_patience=self.early_stop_patience, seed=self.seed,
            max_len=self.max_len,
        )

    def fit(self, X, y, val_ids=None):
        """Train on every image of y; validate on val_ids (default: same ids)."""
        config = self._config()
        check_feature_store(X)
        if not isinstance(y, CaptionCorpus):
            y = CaptionCorpus(list(y))
        train_ids = y.image_ids()
        if val_ids is None:
            val_ids = train_ids
        vocab = Vocabulary.build(
            (rec.tokens for rec in y.records), min_freq=self.min_freq)
        ckpt, log = train(config, X, y, vocab, (train_ids, list(val_ids)))
        self.vocab_ = vocab
        self.params_ = ckpt.params
        self.checkpoint_ = ckpt
        self.log_ = log
        self.n_parameters_ = ckpt.params.param_count()
        return self

    def predict(self, X, image_ids=None) -> list:
        """Caption strings for image_ids (default: every image in X), in
        the order given."""
        check_is_fitted(self, ("params_", "vocab_"))
        if image_ids is None:
            image_ids = X.image_ids()
        check_ids_covered(image_ids, X)
        width = None if self.beam_width == 1 else self.beam_width
        decoded = dict(inference.caption_images(
            self.params_, X, self.vocab_, image_ids, self.max_len, width))
        return [" ".join(decoded[i].words) for i in image_ids]

    def predict_log_proba(self, X, image_ids=None) -> list:
        """Summed token log-probabilities of the predicted captions."""
        check_is_fitted(self, ("params_", "vocab_"))
        if image_ids is None:
            image_ids = X.image_ids()
        check_ids_covered(image_ids, X)
        width = None if self.beam_width == 1 else self.beam_width
        decoded = dict(inference.caption_images(
            self.params_, X, self.vocab_, image_ids, self.max_len, width))
        return [decoded[i].log_prob for i in image_ids]

    def score(self, X, y, image_ids=None) -> float:
        """Corpus BLEU-4 (x100) of predictions against y's references."""
        check_is_fitted(self, ("params_", "vocab_"))
        if not isinstance(y, CaptionCorpus):
            y = CaptionCorpus(list(y))
        if image_ids is None:
            image_ids = y.image_ids()
        captions = self.predict(X, image_ids)
        instances = []
        for image_id, text in zip(image_ids, captions):
            words = text.split() if text else ["<unk>"]
            instances.append(metrics.EvalInstance(image_id, words,
                                                  y.references(image_id)))
        return metrics.bleu(instances)[3]
