"""capfeat: dump truncated-CNN region features into CAPF files.

Loads an ImageNet classification model from the torchvision zoo, captures
the activation of its last spatial feature map during a canonical forward
pass, average-pools that map onto a fixed region grid, and stores the
resulting vectors in the CAPF format consumed by the caption-decoder
library.
"""

__version__ = "0.1.0"

from .encoders import EncoderSpec, count_parameters, encoder_names, encoder_spec
from .extraction import extract_features, save_features

__all__ = [
    "EncoderSpec",
    "count_parameters",
    "encoder_names",
    "encoder_spec",
    "extract_features",
    "save_features",
    "__version__",
]
