"""Reference baselines: bag-of-tokens MLP and catalog matching.

The MLP ignores character order entirely: a value becomes a binary
token-presence vector and flows through two dense layers (300 and 50 units)
into a softmax, trained with the same loss and optimizer as the sequence
networks.

The matching baseline scores a value directly against per-attribute
statistics, no gradient training involved. Textual attributes use an
attribute-conditional token probability weighted by inverse attribute
frequency (a tfidf-flavored score); numeric attributes use a Gaussian
kernel around the attribute's mean. Values are normalized for the numeric
path by dropping every character that is not a digit or a decimal point,
so phone-style strings like "555-0100" become plain numbers.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from attrpool.layers import DropoutHidden, SoftmaxOutput, relu, relu_backward
from attrpool.numerics import DTYPE, Rng
from attrpool.training import STREAM_INIT, STREAM_MASKS, STREAM_SHUFFLE, STREAM_SPLIT, fit_classifier, stratified_split_indices

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

NUMERIC_FRACTION_THRESHOLD = 0.9


def tokenize(value):
    """Lowercased alphanumeric runs; whitespace and punctuation are boundaries."""
    return _TOKEN_RE.findall(value.lower())


def normalize_numeric(value):
    """Float left after stripping non-numeric characters, or None."""
    kept = "".join(ch for ch in value if ch.isdigit() or ch == ".")
    if not kept:
        return None
    try:
        return float(kept)
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# Bag-of-tokens MLP


class TokenVocabulary:
    """Dense token-to-index map over the training tokens."""

    def __init__(self, records):
        tokens = set()
        for rec in records:
            tokens.update(tokenize(rec.value))
        self.token_to_index = {t: i for i, t in enumerate(sorted(tokens))}

    @property
    def size(self):
        return len(self.token_to_index)

    def features(self, value):
        """Binary presence vector; unseen tokens contribute nothing."""
        vec = np.zeros(self.size, dtype=DTYPE)
        for tok in tokenize(value):
            idx = self.token_to_index.get(tok)
            if idx is not None:
                vec[idx] = 1.0
        return vec


class MlpModel:
    """300-unit and 50-unit dense layers with relu, then softmax."""

    HIDDEN = (300, 50)

    def __init__(self, in_dim, num_classes, rng, hidden=HIDDEN):
        self.h1 = DropoutHidden(in_dim, hidden[0], 0.0, rng)
        self.h2 = DropoutHidden(hidden[0], hidden[1], 0.0, rng)
        self.output = SoftmaxOutput(hidden[1], num_classes, rng)

    def params(self):
        out = {f"h1.{k}": v for k, v in self.h1.params().items()}
        out.update({f"h2.{k}": v for k, v in self.h2.params().items()})
        out.update({f"softmax.{k}": v for k, v in self.output.params().items()})
        return out

    def forward(self, x, mode="test", rng=None):
        pre1, _, c1 = self.h1.forward(x, mode, rng)
        a1 = relu(pre1)
        pre2, _, c2 = self.h2.forward(a1, mode, rng)
        a2 = relu(pre2)
        probs, c3 = self.output.forward(a2)
        return probs, (c1, pre1, c2, pre2, c3, mode)

    def backward(self, cache, true_class):
        c1, pre1, c2, pre2, c3, _ = cache
        sm_grads, g = self.output.backward(c3, true_class)
        g = relu_backward(pre2, g)
        h2_grads, g = self.h2.backward(c2, g)
        g = relu_backward(pre1, g)
        h1_grads, _ = self.h1.backward(c1, g)
        out = {f"h1.{k}": v for k, v in h1_grads.items()}
        out.update({f"h2.{k}": v for k, v in h2_grads.items()})
        out.update({f"softmax.{k}": v for k, v in sm_grads.items()})
        return out


@dataclass
class MlpTrained:
    model: MlpModel
    token_vocab: TokenVocabulary
    class_labels: list
    best_validation_accuracy: float | None
    history: list = field(default_factory=list)


def mlp_train(catalog, cfg):
    """Fit the bag-of-tokens MLP on a catalog with the shared training loop."""
    labels = catalog.attributes
    if len(labels) < 2:
        raise ValueError(f"need at least two attribute classes, got {labels}")
    class_index = {a: i for i, a in enumerate(labels)}
    vocab = TokenVocabulary(catalog.records)
    examples = [(vocab.features(r.value), class_index[r.attribute]) for r in catalog.records]
    rng = Rng(cfg.seed)
    train_idx, val_idx = stratified_split_indices(
        [y for _, y in examples], cfg.validation_fraction, rng.child(STREAM_SPLIT)
    )
    model = MlpModel(vocab.size, len(labels), rng.child(STREAM_INIT))
    best_acc, _, history = fit_classifier(
        model,
        [examples[i] for i in train_idx],
        [examples[i] for i in val_idx],
        cfg,
        rng.child(STREAM_MASKS),
        rng.child(STREAM_SHUFFLE),
    )
    return MlpTrained(model, vocab, labels, best_acc, history)


def mlp_predict(trained, value):
    probs, _ = trained.model.forward(trained.token_vocab.features(value), "test")
    return trained.class_labels[int(np.argmax(probs))]


# ---------------------------------------------------------------------------
# Catalog matching baseline


@dataclass
class OnduxModel:
    """Per-attribute matching statistics.

    ``kinds`` flags each attribute numeric or textual. Numeric attributes
    carry (mean, standard deviation); textual ones carry token term counts.
    ``doc_freq`` counts, per token, how many textual attributes contain it.
    """

    kinds: dict
    numeric_stats: dict
    term_counts: dict
    doc_freq: dict
    total_term_counts: dict

    @property
    def attributes(self):
        return sorted(self.kinds)

    @property
    def num_textual(self):
        return sum(1 for k in self.kinds.values() if k == "textual")


def ondux_fit(catalog):
    """Classify each attribute numeric or textual and collect its statistics.

    An attribute is numeric when at least 90% of its training values still
    parse as numbers after normalization; real columns carry occasional junk
    so an exact-100% rule would be brittle.
    """
    kinds = {}
    numeric_stats = {}
    term_counts = {}
    for attr, records in catalog.by_attribute.items():
        parsed = [normalize_numeric(r.value) for r in records]
        numbers = [x for x in parsed if x is not None]
        if len(numbers) >= NUMERIC_FRACTION_THRESHOLD * len(records):
            kinds[attr] = "numeric"
            mu = float(np.mean(numbers))
            sigma = float(np.std(numbers, ddof=1)) if len(numbers) > 1 else 0.0
            if sigma == 0.0:
                sigma = max(1e-9, 1e-6 * max(abs(mu), 1.0))
            numeric_stats[attr] = (mu, sigma)
        else:
            kinds[attr] = "textual"
            counts = {}
            for r in records:
                for tok in tokenize(r.value):
                    counts[tok] = counts.get(tok, 0) + 1
            term_counts[attr] = counts
    doc_freq = {}
    total = {}
    for counts in term_counts.values():
        for tok, c in counts.items():
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
            total[tok] = total.get(tok, 0) + c
    return OnduxModel(kinds, numeric_stats, term_counts, doc_freq, total)


def ondux_score_numeric(model, attribute, x):
    """Gaussian kernel distance of x from the attribute's value distribution."""
    if model.kinds.get(attribute) != "numeric":
        raise ValueError(f"attribute {attribute!r} is not numeric")
    mu, sigma = model.numeric_stats[attribute]
    return math.exp(-((x - mu) ** 2) / (2.0 * sigma * sigma))


def ondux_score_textual(model, attribute, value):
    """Mean over tokens of P(attribute | token) weighted by normalized idf.

    P(a|t) is the token's count in the attribute divided by its count across
    all textual attributes; idf(t) = log(1 + |A|/df(t)) with |A| the number
    of textual attributes, normalized by its maximum log(1 + |A|). Unknown
    tokens contribute zero but still count toward the mean.
    """
    counts = model.term_counts.get(attribute)
    if counts is None:
        raise ValueError(f"attribute {attribute!r} is not textual")
    tokens = tokenize(value)
    if not tokens:
        return 0.0
    n_attrs = model.num_textual
    max_idf = math.log(1.0 + n_attrs)
    score = 0.0
    for tok in tokens:
        total = model.total_term_counts.get(tok)
        if not total:
            continue
        p_attr = counts.get(tok, 0) / total
        idf = math.log(1.0 + n_attrs / model.doc_freq[tok])
        score += p_attr * idf / max_idf
    return score / len(tokens)


def ondux_predict(model, value):
    """Best-scoring attribute; numeric values compete among numeric attributes.

    Ties break toward the alphabetically first attribute name.
    """
    x = normalize_numeric(value)
    numeric_attrs = [a for a in model.attributes if model.kinds[a] == "numeric"]
    textual_attrs = [a for a in model.attributes if model.kinds[a] == "textual"]
    if x is not None and numeric_attrs:
        scored = [(a, ondux_score_numeric(model, a, x)) for a in numeric_attrs]
    elif textual_attrs:
        scored = [(a, ondux_score_textual(model, a, value)) for a in textual_attrs]
    else:
        scored = [(a, 0.0) for a in model.attributes]
    best_attr, best_score = scored[0]
    for attr, s in scored[1:]:
        if s > best_score:
            best_attr, best_score = attr, s
    return best_attr


__all__ = [
    "MlpModel",
    "MlpTrained",
    "OnduxModel",
    "TokenVocabulary",
    "mlp_predict",
    "mlp_train",
    "normalize_numeric",
    "ondux_fit",
    "ondux_predict",
    "ondux_score_numeric",
    "ondux_score_textual",
    "tokenize",
]
