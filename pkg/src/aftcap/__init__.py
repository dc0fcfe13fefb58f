"""Audio captioning with an attention-free decoder, at desk scale.

The pieces: a float64 tape-autodiff core (:mod:`aftcap.autograd`), a log-mel
audio frontend, a small CNN encoder, an attention-free decoder whose
cross weights carry a local-region window, teacher-forced training with
label smoothing and Adam, greedy/beam caption decoding, caption metrics
(BLEU, ROUGE-L, CIDEr-D), and a synthetic-corpus generator that makes the
whole pipeline trainable and testable on a laptop CPU.
"""

from .autograd import Graph, Tensor
from .decoder import Decoder, DecoderConfig
from .encoder import CnnEncoder, EncoderConfig
from .training import TrainConfig, train

__all__ = [
    "CnnEncoder", "Decoder", "DecoderConfig", "EncoderConfig",
    "Graph", "Tensor", "TrainConfig", "train",
]
__version__ = "0.1.0"
