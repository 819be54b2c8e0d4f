"""Loss, Adam optimizer, minibatch training loop and gradient checking.

The loop is single-writer over the parameters: per-example gradients within
a minibatch are accumulated sequentially in shuffle order, so a seed fully
determines the trained model. Model selection keeps the epoch with the best
validation accuracy (earliest epoch on ties).
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from attrpool.data import build_vocab
from attrpool.network import HybridNetwork, NetworkConfig, load_checkpoint, save_checkpoint
from attrpool.numerics import Rng, ShapeError

log = logging.getLogger(__name__)

# Sub-stream keys derived from the user seed; every stochastic component
# gets its own stream so adding one never perturbs the others.
STREAM_SPLIT = 0
STREAM_INIT = 1
STREAM_MASKS = 2
STREAM_SHUFFLE = 3

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run.

    The defaults mirror the usual reference settings (learning rate 1e-6,
    minibatch 10, 20 epochs, drop rate 0.25); tests and desk-scale runs
    override the learning rate since 1e-6 barely moves a small model.
    """

    learning_rate: float = 1e-6
    batch_size: int = 10
    epochs: int = 20
    drop_rate: float = 0.25
    embedding_size: int = 100
    window: int = 3
    pooling: str = "max"
    branch_mode: str = "hybrid"
    seed: int = 0
    validation_fraction: float = 0.20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    conv_filters: int | None = None
    lstm_hidden: int | None = None
    branch_output: int | None = None
    hidden_activation: str = "relu"
    shared_embedding: bool = True
    lstm_output: str = "last"
    init_scale: float = 0.05
    # Stop as soon as training accuracy reaches this value (None = never).
    # Convenience for bounded-budget runs; the classic protocol leaves it off.
    target_train_accuracy: float | None = None

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in (0,1), got {self.validation_fraction}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    def network_config(self):
        return NetworkConfig(
            embedding_size=self.embedding_size,
            window=self.window,
            conv_filters=self.conv_filters,
            lstm_hidden=self.lstm_hidden,
            branch_output=self.branch_output,
            pooling=self.pooling,
            branch_mode=self.branch_mode,
            drop_rate=self.drop_rate,
            hidden_activation=self.hidden_activation,
            shared_embedding=self.shared_embedding,
            lstm_output=self.lstm_output,
            init_scale=self.init_scale,
        )


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: dict
    v: dict
    t: int = 0


def init_adam(params):
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update, applied to the arrays in place."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    mc = 1.0 - b1**state.t
    vc = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= cfg.learning_rate * (m / mc) / (np.sqrt(v / vc) + cfg.adam_eps)


def nll_loss(probs, true_class):
    """Negative log of the true-class probability; batch loss sums these."""
    p = probs[true_class]
    if p < PROB_FLOOR:
        log.warning("probability %.3e clamped to %.0e in loss", p, PROB_FLOOR)
        p = PROB_FLOOR
    return -float(np.log(p))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float | None


def metrics_lines(history):
    """Per-epoch log as comma-separated ``epoch,train_loss,val_accuracy`` lines."""
    lines = ["epoch,train_loss,val_accuracy"]
    for h in history:
        acc = "" if h.val_accuracy is None else f"{h.val_accuracy:.6f}"
        lines.append(f"{h.epoch},{h.train_loss:.6f},{acc}")
    return lines


def stratified_split_indices(labels, fraction, rng):
    """Validation/train index split preserving class proportions.

    Every class keeps at least one training example; singleton classes stay
    entirely in training so the model can learn to predict them at all.
    """
    by_class = {}
    for i, y in enumerate(labels):
        by_class.setdefault(y, []).append(i)
    train_idx, val_idx = [], []
    for y in sorted(by_class):
        idx = by_class[y]
        order = rng.permutation(len(idx))
        n_val = min(int(round(len(idx) * fraction)), len(idx) - 1)
        for pos, j in enumerate(order):
            (val_idx if pos < n_val else train_idx).append(idx[j])
    return sorted(train_idx), sorted(val_idx)


def _accuracy(model, examples):
    if not examples:
        return None
    hits = 0
    for x, y in examples:
        probs, _ = model.forward(x, "test")
        hits += int(np.argmax(probs)) == y
    return hits / len(examples)


def _snapshot(params):
    return {k: p.copy() for k, p in params.items()}


def fit_classifier(model, train_xy, val_xy, cfg, mask_rng, shuffle_rng):
    """Run the minibatch Adam loop over (input, class) pairs.

    Returns (best_val_accuracy, best_epoch, history) and leaves the model
    holding the selected parameters. Works for any model exposing
    ``params() / forward(x, mode, rng) / backward(cache, y)``.
    """
    params = model.params()
    state = init_adam(params)
    best_acc, best_epoch, best_params = None, None, None
    history = []
    stopped_at_target = False
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_xy))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            grad_sum = None
            for j in order[start : start + cfg.batch_size]:
                x, y = train_xy[j]
                probs, cache = model.forward(x, "train", mask_rng)
                epoch_loss += nll_loss(probs, y)
                grads = model.backward(cache, y)
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for k in grad_sum:
                        grad_sum[k] += grads[k]
            adam_step(params, grad_sum, state, cfg)
        val_acc = _accuracy(model, val_xy)
        history.append(EpochStats(epoch, epoch_loss, val_acc))
        if val_acc is not None and (best_acc is None or val_acc > best_acc):
            best_acc, best_epoch, best_params = val_acc, epoch, _snapshot(params)
        if cfg.target_train_accuracy is not None:
            train_acc = _accuracy(model, train_xy)
            if train_acc is not None and train_acc >= cfg.target_train_accuracy:
                best_acc, best_epoch = val_acc, epoch
                stopped_at_target = True
                break
    if best_params is not None and not stopped_at_target:
        for k, p in params.items():
            p[...] = best_params[k]
    return best_acc, best_epoch, history


@dataclass
class TrainedModel:
    """A trained network bundled with everything prediction needs."""

    network: HybridNetwork
    vocab: object
    class_labels: list
    best_validation_accuracy: float | None
    best_epoch: int | None
    config: TrainConfig | None
    history: list = field(default_factory=list)

    def predict(self, value):
        """(label, probability) for one raw attribute value string."""
        probs, _ = self.network.forward(self.vocab.encode(value), "test")
        k = int(np.argmax(probs))
        return self.class_labels[k], float(probs[k])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(save_checkpoint(self.network, self.vocab, self.class_labels))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            net, vocab, labels = load_checkpoint(fh.read())
        return cls(net, vocab, labels, None, None, None)


def train(catalog, cfg):
    """Train a hybrid network on a domain catalog.

    Carves a stratified validation split off the catalog, runs the minibatch
    loop and returns the parameters of the best-validation epoch.
    """
    labels = catalog.attributes
    if len(labels) < 2:
        raise ValueError(f"need at least two attribute classes, got {labels}")
    class_index = {a: i for i, a in enumerate(labels)}
    vocab = build_vocab(catalog.records)
    examples = [(vocab.encode(r.value), class_index[r.attribute]) for r in catalog.records]

    rng = Rng(cfg.seed)
    train_idx, val_idx = stratified_split_indices(
        [y for _, y in examples], cfg.validation_fraction, rng.child(STREAM_SPLIT)
    )
    train_xy = [examples[i] for i in train_idx]
    val_xy = [examples[i] for i in val_idx]

    net = HybridNetwork(
        cfg.network_config(), vocab.size, len(labels), rng.child(STREAM_INIT), pad_index=vocab.EOS
    )
    best_acc, best_epoch, history = fit_classifier(
        net, train_xy, val_xy, cfg, rng.child(STREAM_MASKS), rng.child(STREAM_SHUFFLE)
    )
    return TrainedModel(net, vocab, labels, best_acc, best_epoch, cfg, history)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckReport:
    """Max relative error of analytic vs central-difference gradients, per array."""

    eps: float
    tol: float
    group_errors: dict

    @property
    def max_error(self):
        return max(self.group_errors.values())

    @property
    def passed(self):
        return self.max_error <= self.tol

    def lines(self):
        width = max(len(k) for k in self.group_errors)
        out = []
        for name in sorted(self.group_errors):
            err = self.group_errors[name]
            status = "ok" if err <= self.tol else "FAIL"
            out.append(f"{name:<{width}}  max rel err {err:.3e}  {status}")
        out.append(f"overall max {self.max_error:.3e} vs tol {self.tol:.0e}: "
                   f"{'PASS' if self.passed else 'FAIL'}")
        return out


def numeric_gradients(loss_fn, params, eps):
    """Central-difference gradient of ``loss_fn()`` for every parameter coordinate."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            loss_plus = loss_fn()
            flat_p[i] = orig - eps
            loss_minus = loss_fn()
            flat_p[i] = orig
            flat_g[i] = (loss_plus - loss_minus) / (2.0 * eps)
        out[name] = g
    return out


def gradient_errors(analytic, numeric, floor=1e-6):
    """Per-array max of |a-n| / max(|a|, |n|, floor).

    The floor absorbs the finite-difference noise on coordinates whose true
    gradient is essentially zero, where a plain relative error would explode.
    """
    errors = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        errors[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return errors


class EmbeddingMeanToy:
    """Softmax over the mean of the character embeddings; no sequence layers.

    The smallest model that still exercises embedding accumulation and the
    softmax backward, used as the smoke case of the gradient checker.
    """

    def __init__(self, vocab_size, dim, num_classes, rng):
        from attrpool.layers import EmbeddingTable, SoftmaxOutput

        self.embedding = EmbeddingTable(vocab_size, dim, rng, scale=0.5)
        self.output = SoftmaxOutput(dim, num_classes, rng, scale=0.5)

    def params(self):
        out = {f"embedding.{k}": v for k, v in self.embedding.params().items()}
        out.update({f"softmax.{k}": v for k, v in self.output.params().items()})
        return out

    def forward(self, indices, mode="test", rng=None):
        emb, emb_cache = self.embedding.forward(indices)
        mean = emb.mean(axis=0)
        probs, sm_cache = self.output.forward(mean)
        return probs, (emb_cache, emb.shape[0], sm_cache, mode)

    def backward(self, cache, true_class):
        emb_cache, n, sm_cache, _ = cache
        sm_grads, grad_mean = self.output.backward(sm_cache, true_class)
        grad_emb = np.tile(grad_mean / n, (n, 1))
        emb_grads, _ = self.embedding.backward(emb_cache, grad_emb)
        out = {f"embedding.{k}": g for k, g in emb_grads.items()}
        out.update({f"softmax.{k}": g for k, g in sm_grads.items()})
        return out


def _toy_network(seed=7):
    """Tiny full hybrid net over a 10-char vocabulary, dropout disabled."""
    from attrpool.data import CharVocabulary

    vocab = CharVocabulary("ab1z$ 3")
    cfg = NetworkConfig(
        embedding_size=4,
        window=3,
        conv_filters=5,
        lstm_hidden=5,
        branch_output=4,
        pooling="max",
        branch_mode="hybrid",
        drop_rate=0.0,
    )
    net = HybridNetwork(cfg, vocab.size, 3, Rng(seed), pad_index=vocab.EOS)
    examples = [(vocab.encode("ab1 z3"), 0), (vocab.encode("$3z"), 2)]
    return net, examples


def check_model_gradients(model, examples, eps=1e-5, tol=1e-4, grad_scale=1.0):
    """Compare a model's analytic gradients against central differences.

    ``grad_scale`` multiplies the analytic gradients and exists so tests can
    prove the check rejects corrupted gradients.
    """
    params = model.params()
    analytic = None
    for x, y in examples:
        _, cache = model.forward(x, "train", None)
        grads = model.backward(cache, y)
        if analytic is None:
            analytic = grads
        else:
            for k in analytic:
                analytic[k] += grads[k]
    if grad_scale != 1.0:
        analytic = {k: grad_scale * g for k, g in analytic.items()}

    def loss_fn():
        total = 0.0
        for x, y in examples:
            probs, _ = model.forward(x, "train", None)
            total += nll_loss(probs, y)
        return total

    numeric = numeric_gradients(loss_fn, params, eps)
    return GradCheckReport(eps, tol, gradient_errors(analytic, numeric))


def grad_check(cfg=None, eps=1e-5, tol=1e-4):
    """Gradient check of the full hybrid network at toy size.

    ``cfg`` may override pooling / branch_mode / lstm_output of the toy
    architecture; sizes stay tiny so the sweep finishes in seconds.
    """
    net, examples = _toy_network()
    if cfg is not None:
        toy = replace(
            net.config,
            pooling=cfg.pooling,
            branch_mode=cfg.branch_mode,
            lstm_output=cfg.lstm_output,
            hidden_activation=cfg.hidden_activation,
        )
        net = HybridNetwork(toy, net.vocab_size, net.num_classes, Rng(7), pad_index=net.pad_index)
    return check_model_gradients(net, examples, eps, tol)


__all__ = [
    "AdamState",
    "EpochStats",
    "GradCheckReport",
    "TrainConfig",
    "TrainedModel",
    "adam_step",
    "check_model_gradients",
    "fit_classifier",
    "grad_check",
    "gradient_errors",
    "init_adam",
    "metrics_lines",
    "nll_loss",
    "numeric_gradients",
    "stratified_split_indices",
    "train",
]
