"""The hybrid two-branch classifier and its checkpoint format.

A CNN branch (convolution + max-over-time) and an LSTM branch each turn the
embedded character sequence of an attribute value into a fixed-size vector;
a pooling combiner merges the two and a softmax layer emits class
probabilities. Either branch can run alone, in which case the combiner is
the identity.

Checkpoints are a single self-describing JSON document holding the format
version, all hyper-parameters, the character vocabulary, the class labels
and every parameter array with its shape and row-major values. Python
serializes floats via repr, so load(save(net)) is bit-exact.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from attrpool.data import CharVocabulary
from attrpool.layers import (
    POOLING_OPS,
    ConvMaxOverTime,
    DropoutHidden,
    EmbeddingTable,
    LstmLayer,
    PoolingCombiner,
    SoftmaxOutput,
    relu,
    relu_backward,
)
from attrpool.numerics import DTYPE

CHECKPOINT_VERSION = 1

BRANCH_MODES = ("hybrid", "cnn_only", "lstm_only")


class CheckpointError(ValueError):
    """Checkpoint document is malformed or incompatible."""


@dataclass
class NetworkConfig:
    """Architecture hyper-parameters.

    ``conv_filters``, ``lstm_hidden`` and ``branch_output`` default to the
    embedding size when left unset, which keeps both branch vectors the same
    length so element-wise pooling is always well-defined.
    """

    embedding_size: int = 100
    window: int = 3
    conv_filters: int | None = None
    lstm_hidden: int | None = None
    branch_output: int | None = None
    pooling: str = "max"
    branch_mode: str = "hybrid"
    drop_rate: float = 0.25
    hidden_activation: str = "relu"
    shared_embedding: bool = True
    lstm_output: str = "last"
    init_scale: float = 0.05

    def __post_init__(self):
        if self.conv_filters is None:
            self.conv_filters = self.embedding_size
        if self.lstm_hidden is None:
            self.lstm_hidden = self.embedding_size
        if self.branch_output is None:
            self.branch_output = self.embedding_size
        if self.pooling not in POOLING_OPS:
            raise ValueError(f"pooling must be one of {POOLING_OPS}, got {self.pooling!r}")
        if self.branch_mode not in BRANCH_MODES:
            raise ValueError(f"branch_mode must be one of {BRANCH_MODES}, got {self.branch_mode!r}")
        if self.hidden_activation not in ("relu", "none"):
            raise ValueError(f"hidden_activation must be 'relu' or 'none', got {self.hidden_activation!r}")
        if self.lstm_output not in ("last", "mean"):
            raise ValueError(f"lstm_output must be 'last' or 'mean', got {self.lstm_output!r}")


class HybridNetwork:
    """Two-branch character classifier with hand-written backpropagation.

    ``params()`` exposes every trainable array under a dotted name; the
    training loop mutates those arrays in place and ``backward`` returns a
    gradient dict under the same keys.
    """

    def __init__(self, config, vocab_size, num_classes, rng=None, pad_index=1):
        c = config
        self.config = c
        self.vocab_size = vocab_size
        self.num_classes = num_classes
        self.pad_index = pad_index
        self.has_cnn = c.branch_mode in ("hybrid", "cnn_only")
        self.has_rnn = c.branch_mode in ("hybrid", "lstm_only")

        # Initialization order is fixed so a seed fully determines the model.
        if c.shared_embedding or not (self.has_cnn and self.has_rnn):
            self.embedding = EmbeddingTable(vocab_size, c.embedding_size, rng, c.init_scale)
            self.embedding_cnn = self.embedding_rnn = self.embedding
        else:
            self.embedding_cnn = EmbeddingTable(vocab_size, c.embedding_size, rng, c.init_scale)
            self.embedding_rnn = EmbeddingTable(vocab_size, c.embedding_size, rng, c.init_scale)
            self.embedding = None

        self.conv = self.cnn_hidden = None
        if self.has_cnn:
            self.conv = ConvMaxOverTime(c.window, c.embedding_size, c.conv_filters, rng, c.init_scale)
            self.cnn_hidden = DropoutHidden(c.conv_filters, c.branch_output, c.drop_rate, rng, c.init_scale)
        self.lstm = self.rnn_hidden = None
        if self.has_rnn:
            self.lstm = LstmLayer(c.embedding_size, c.lstm_hidden, rng, c.init_scale, c.lstm_output)
            self.rnn_hidden = DropoutHidden(c.lstm_hidden, c.branch_output, c.drop_rate, rng, c.init_scale)

        if c.branch_mode == "hybrid":
            self.combiner = PoolingCombiner(c.pooling)
            softmax_in = self.combiner.output_dim(c.branch_output, c.branch_output)
        else:
            self.combiner = None
            softmax_in = c.branch_output
        self.output = SoftmaxOutput(softmax_in, num_classes, rng, c.init_scale)

    def params(self):
        out = {}
        if self.embedding is not None:
            out.update({f"embedding.{k}": v for k, v in self.embedding.params().items()})
        else:
            out.update({f"embedding_cnn.{k}": v for k, v in self.embedding_cnn.params().items()})
            out.update({f"embedding_rnn.{k}": v for k, v in self.embedding_rnn.params().items()})
        if self.has_cnn:
            out.update({f"conv.{k}": v for k, v in self.conv.params().items()})
            out.update({f"cnn_hidden.{k}": v for k, v in self.cnn_hidden.params().items()})
        if self.has_rnn:
            out.update({f"lstm.{k}": v for k, v in self.lstm.params().items()})
            out.update({f"rnn_hidden.{k}": v for k, v in self.rnn_hidden.params().items()})
        out.update({f"softmax.{k}": v for k, v in self.output.params().items()})
        return out

    def _padded(self, indices):
        idx = list(indices)
        if self.has_cnn and len(idx) < self.config.window:
            idx = idx + [self.pad_index] * (self.config.window - len(idx))
        return idx

    def _branch_forward(self, seq_layer, hidden, emb_out, mode, rng):
        raw, layer_cache = seq_layer.forward(emb_out)
        pre, mask, hid_cache = hidden.forward(raw, mode, rng)
        out = relu(pre) if self.config.hidden_activation == "relu" else pre
        return out, (layer_cache, hid_cache, pre)

    def _branch_backward(self, seq_layer, hidden, cache, grad_out):
        layer_cache, hid_cache, pre = cache
        if self.config.hidden_activation == "relu":
            grad_out = relu_backward(pre, grad_out)
        hid_grads, grad_raw = hidden.backward(hid_cache, grad_out)
        layer_grads, grad_emb = seq_layer.backward(layer_cache, grad_raw)
        return layer_grads, hid_grads, grad_emb

    def forward(self, indices, mode="test", rng=None):
        """Class probabilities for one encoded value; cache feeds backward."""
        idx = self._padded(indices)
        cache = {"mode": mode}
        u = v = None
        if self.has_cnn:
            emb_c, emb_c_cache = self.embedding_cnn.forward(idx)
            u, cache["cnn"] = self._branch_forward(self.conv, self.cnn_hidden, emb_c, mode, rng)
            cache["emb_cnn"] = emb_c_cache
        if self.has_rnn:
            emb_r, emb_r_cache = self.embedding_rnn.forward(idx)
            v, cache["rnn"] = self._branch_forward(self.lstm, self.rnn_hidden, emb_r, mode, rng)
            cache["emb_rnn"] = emb_r_cache
        if self.combiner is not None:
            pooled, cache["pool"] = self.combiner.combine(u, v)
        else:
            pooled = u if self.has_cnn else v
        probs, cache["softmax"] = self.output.forward(pooled)
        return probs, cache

    def backward(self, cache, true_class):
        """Gradient of -log P(true_class) for every parameter array."""
        if cache is None or "softmax" not in cache:
            raise ValueError("backward needs the cache of a matching forward call")
        if cache["mode"] != "train":
            raise ValueError("backward requires a train-mode forward cache")
        grads = {}
        sm_grads, grad_pooled = self.output.backward(cache["softmax"], true_class)
        grads.update({f"softmax.{k}": g for k, g in sm_grads.items()})
        if self.combiner is not None:
            grad_u, grad_v = self.combiner.backward(cache["pool"], grad_pooled)
        else:
            grad_u = grad_v = grad_pooled
        grad_emb_cnn = grad_emb_rnn = None
        if self.has_cnn:
            conv_grads, hid_grads, grad_emb_cnn = self._branch_backward(
                self.conv, self.cnn_hidden, cache["cnn"], grad_u
            )
            grads.update({f"conv.{k}": g for k, g in conv_grads.items()})
            grads.update({f"cnn_hidden.{k}": g for k, g in hid_grads.items()})
        if self.has_rnn:
            lstm_grads, hid_grads, grad_emb_rnn = self._branch_backward(
                self.lstm, self.rnn_hidden, cache["rnn"], grad_v
            )
            grads.update({f"lstm.{k}": g for k, g in lstm_grads.items()})
            grads.update({f"rnn_hidden.{k}": g for k, g in hid_grads.items()})
        if self.embedding is not None:
            total = None
            source_cache = None
            if grad_emb_cnn is not None:
                total, source_cache = grad_emb_cnn, cache["emb_cnn"]
            if grad_emb_rnn is not None:
                total = grad_emb_rnn if total is None else total + grad_emb_rnn
                source_cache = cache["emb_rnn"]
            emb_grads, _ = self.embedding.backward(source_cache, total)
            grads.update({f"embedding.{k}": g for k, g in emb_grads.items()})
        else:
            emb_grads, _ = self.embedding_cnn.backward(cache["emb_cnn"], grad_emb_cnn)
            grads.update({f"embedding_cnn.{k}": g for k, g in emb_grads.items()})
            emb_grads, _ = self.embedding_rnn.backward(cache["emb_rnn"], grad_emb_rnn)
            grads.update({f"embedding_rnn.{k}": g for k, g in emb_grads.items()})
        return grads


def save_checkpoint(net, vocab, class_labels):
    """Serialize a network plus its vocabulary and labels to a JSON string."""
    params = {
        name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
        for name, arr in net.params().items()
    }
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "pad_index": net.pad_index,
        "num_classes": net.num_classes,
        "vocab": vocab.to_dict(),
        "class_labels": list(class_labels),
        "params": params,
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False)


def load_checkpoint(text):
    """Rebuild (network, vocabulary, class_labels) from a checkpoint string."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"not a valid checkpoint document: {exc}") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    config = NetworkConfig(**doc["config"])
    vocab = CharVocabulary.from_dict(doc["vocab"])
    labels = list(doc["class_labels"])
    net = HybridNetwork(config, vocab.size, doc["num_classes"], rng=None, pad_index=doc["pad_index"])
    params = net.params()
    stored = doc["params"]
    if set(stored) != set(params):
        raise CheckpointError("checkpoint parameter names do not match the architecture")
    for name, arr in params.items():
        entry = stored[name]
        data = np.array(entry["data"], dtype=DTYPE).reshape(entry["shape"])
        if data.shape != arr.shape:
            raise CheckpointError(f"parameter {name} has shape {data.shape}, expected {arr.shape}")
        arr[...] = data
    return net, vocab, labels


__all__ = [
    "BRANCH_MODES",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "HybridNetwork",
    "NetworkConfig",
    "load_checkpoint",
    "save_checkpoint",
]
