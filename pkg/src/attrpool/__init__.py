"""Character-level attribute annotation with hybrid CNN/LSTM pooling networks.

Classifies raw attribute-value strings (e.g. "$12,345", "3:05 pm EDT")
into schema attributes of a web domain, learning directly from character
sequences. Includes a small dense-math layer, manually backpropagated
network blocks, an Adam training loop with gradient checking, bag-of-tokens
MLP and tfidf/Gaussian-kernel matching baselines, and a leave-one-source-out
evaluation harness.
"""

from attrpool.data import (
    AttributeRecord,
    CharVocabulary,
    DomainCatalog,
    build_vocab,
    encode,
    ingest,
    split_by_source,
)
from attrpool.network import HybridNetwork, NetworkConfig, load_checkpoint, save_checkpoint
from attrpool.training import TrainConfig, TrainedModel, grad_check, train

__all__ = [
    "AttributeRecord",
    "CharVocabulary",
    "DomainCatalog",
    "HybridNetwork",
    "NetworkConfig",
    "TrainConfig",
    "TrainedModel",
    "build_vocab",
    "encode",
    "grad_check",
    "ingest",
    "load_checkpoint",
    "save_checkpoint",
    "split_by_source",
    "train",
]
