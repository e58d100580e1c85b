"""caplab: LSTM caption decoders over pre-extracted CNN image features.

Two decoder variants (image-initialized LSTM, and soft region attention),
trained from scratch on numpy with exact hand-derived gradients, plus
corpus BLEU/ROUGE-L/CIDEr-D scoring and encoder comparison reports.
"""

from .corpus import CaptionCorpus, CaptionRecord, Vocabulary, tokenize
from .decoder import DecoderParams, ModelDims, forward_sequence, init_params
from .estimator import CaptionGenerator
from .features import (ExtractorManifest, FeatureSet, FeatureStore, mean_pool,
                       read_capf, synthetic_store, write_capf)
from .inference import DecodedCaption, beam_decode, greedy_decode
from .metrics import EvalInstance, MetricReport, bleu, cider, evaluate_run, rouge_l
from .training import (Checkpoint, TrainConfig, TrainLog, load_checkpoint,
                       save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "CaptionCorpus", "CaptionRecord", "Vocabulary", "tokenize",
    "DecoderParams", "ModelDims", "forward_sequence", "init_params",
    "CaptionGenerator",
    "ExtractorManifest", "FeatureSet", "FeatureStore", "mean_pool",
    "read_capf", "synthetic_store", "write_capf",
    "DecodedCaption", "beam_decode", "greedy_decode",
    "EvalInstance", "MetricReport", "bleu", "cider", "evaluate_run", "rouge_l",
    "Checkpoint", "TrainConfig", "TrainLog", "load_checkpoint",
    "save_checkpoint", "train",
    "__version__",
]
