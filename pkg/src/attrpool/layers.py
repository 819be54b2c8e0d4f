"""Network building blocks with explicit forward and backward passes.

Every block follows the same shape: ``forward`` returns the output plus a
cache of intermediates, ``backward`` consumes that cache and an upstream
gradient and returns ``(param_grads, input_grad)``. No autograd framework
is involved; the backward code is the hand derivative of the forward code
and is validated against finite differences in the test suite.

Sequences are (n, d) float64 arrays, one embedded character per row.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from attrpool.numerics import DTYPE, ShapeError, init_uniform, relu, sigmoid

POOLING_OPS = ("max", "sum", "avg", "mul", "outer", "concat")


class VocabularyError(ValueError):
    """A character index falls outside the embedding table."""


class EmbeddingTable:
    """Character embeddings: column i of ``weights`` is the vector of char i.

    ``weights`` has shape (dim, vocab_size); the vocabulary already includes
    the begin/end/unknown markers.
    """

    def __init__(self, vocab_size, dim, rng=None, scale=0.05):
        self.vocab_size = vocab_size
        self.dim = dim
        if rng is None:
            self.weights = np.zeros((dim, vocab_size), dtype=DTYPE)
        else:
            self.weights = init_uniform(rng, dim, vocab_size, scale)

    def lookup(self, index):
        if not 0 <= index < self.vocab_size:
            raise VocabularyError(f"index {index} outside vocabulary of size {self.vocab_size}")
        return self.weights[:, index]

    def forward(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab_size):
            raise VocabularyError(f"indices outside vocabulary of size {self.vocab_size}")
        out = self.weights.T[idx]  # (n, dim)
        return out, idx

    def backward(self, cache, grad_out):
        idx = cache
        grad_w = np.zeros_like(self.weights)
        # Repeated characters accumulate into the same column.
        np.add.at(grad_w.T, idx, grad_out)
        return {"weights": grad_w}, None

    def params(self):
        return {"weights": self.weights}


class ConvMaxOverTime:
    """Window convolution followed by an element-wise max across windows.

    ``filter`` stacks one flattened (window * in_dim) filter per output
    channel, so row j of ``filter`` produces output channel j. A sequence of
    n >= window rows yields n - window + 1 window vectors; the max over them
    gives a fixed-size output regardless of n.
    """

    def __init__(self, window, in_dim, out_dim, rng=None, scale=0.05):
        self.window = window
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            self.filter = np.zeros((out_dim, window * in_dim), dtype=DTYPE)
        else:
            self.filter = init_uniform(rng, out_dim, window * in_dim, scale)
        self.bias = np.zeros(out_dim, dtype=DTYPE)

    def forward(self, seq):
        n = seq.shape[0]
        if n < self.window:
            raise ShapeError(
                f"sequence of length {n} shorter than window {self.window}; padding rule violated"
            )
        # (n-k+1, k*d) matrix of flattened windows.
        windows = sliding_window_view(seq, (self.window, self.in_dim)).reshape(
            n - self.window + 1, self.window * self.in_dim
        )
        values = windows @ self.filter.T + self.bias  # (n-k+1, out_dim)
        winners = values.argmax(axis=0)  # first window wins ties
        pooled = values[winners, np.arange(self.out_dim)]
        return pooled, (windows, winners, n)

    def backward(self, cache, grad_out):
        windows, winners, n = cache
        grad_values = np.zeros((windows.shape[0], self.out_dim), dtype=DTYPE)
        grad_values[winners, np.arange(self.out_dim)] = grad_out
        grad_filter = grad_values.T @ windows
        grad_bias = grad_out.copy()
        grad_windows = grad_values @ self.filter  # (n-k+1, k*d)
        grad_seq = np.zeros((n, self.in_dim), dtype=DTYPE)
        for i in range(grad_windows.shape[0]):
            grad_seq[i : i + self.window] += grad_windows[i].reshape(self.window, self.in_dim)
        return {"filter": grad_filter, "bias": grad_bias}, grad_seq

    def params(self):
        return {"filter": self.filter, "bias": self.bias}


class LstmLayer:
    """Single recurrent layer of gated memory cells.

    Gate variant where the output gate sees only x_t and h_{t-1}, never the
    cell state, so all four gate pre-activations share two matrix products
    per step. Weights live as eight separate matrices (checkpoint layout)
    and are stacked gate-wise [input, forget, candidate, output] per call.
    """

    GATES = ("i", "f", "c", "o")

    def __init__(self, in_dim, hidden_dim, rng=None, scale=0.05, output_mode="last"):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.output_mode = output_mode
        for g in self.GATES:
            if rng is None:
                wx = np.zeros((hidden_dim, in_dim), dtype=DTYPE)
                wh = np.zeros((hidden_dim, hidden_dim), dtype=DTYPE)
            else:
                wx = init_uniform(rng, hidden_dim, in_dim, scale)
                wh = init_uniform(rng, hidden_dim, hidden_dim, scale)
            setattr(self, f"W_x{g}", wx)
            setattr(self, f"W_h{g}", wh)
            setattr(self, f"b_{g}", np.zeros(hidden_dim, dtype=DTYPE))

    def _stacked(self):
        wx = np.concatenate([getattr(self, f"W_x{g}") for g in self.GATES], axis=0)
        wh = np.concatenate([getattr(self, f"W_h{g}") for g in self.GATES], axis=0)
        b = np.concatenate([getattr(self, f"b_{g}") for g in self.GATES])
        return wx, wh, b

    def forward(self, seq):
        n = seq.shape[0]
        if n == 0:
            raise ValueError("LSTM input sequence is empty")
        h = self.hidden_dim
        wx, wh, b = self._stacked()
        pre_x = seq @ wx.T  # all input-side gate pre-activations at once
        gates = np.empty((n, 4 * h), dtype=DTYPE)
        cells = np.empty((n, h), dtype=DTYPE)
        cell_tanh = np.empty((n, h), dtype=DTYPE)
        hiddens = np.empty((n, h), dtype=DTYPE)
        h_prev = np.zeros(h, dtype=DTYPE)
        c_prev = np.zeros(h, dtype=DTYPE)
        for t in range(n):
            a = pre_x[t] + wh @ h_prev + b
            gi, gf = sigmoid(a[:h]), sigmoid(a[h : 2 * h])
            gc = np.tanh(a[2 * h : 3 * h])
            go = sigmoid(a[3 * h :])
            c_t = gf * c_prev + gi * gc
            tc = np.tanh(c_t)
            h_t = go * tc
            gates[t, :h], gates[t, h : 2 * h] = gi, gf
            gates[t, 2 * h : 3 * h], gates[t, 3 * h :] = gc, go
            cells[t], cell_tanh[t], hiddens[t] = c_t, tc, h_t
            h_prev, c_prev = h_t, c_t
        out = hiddens[-1] if self.output_mode == "last" else hiddens.mean(axis=0)
        return out, (seq, gates, cells, cell_tanh, hiddens, wx, wh)

    def backward(self, cache, grad_out):
        seq, gates, cells, cell_tanh, hiddens, wx, wh = cache
        n, h = hiddens.shape
        grad_pre = np.empty((n, 4 * h), dtype=DTYPE)  # gate pre-activation grads
        if self.output_mode == "last":
            dh = grad_out.copy()
            dh_extra = None
        else:
            dh = grad_out / n
            dh_extra = grad_out / n
        dc = np.zeros(h, dtype=DTYPE)
        for t in range(n - 1, -1, -1):
            gi, gf = gates[t, :h], gates[t, h : 2 * h]
            gc, go = gates[t, 2 * h : 3 * h], gates[t, 3 * h :]
            tc = cell_tanh[t]
            do = dh * tc
            dc = dc + dh * go * (1.0 - tc * tc)
            c_prev = cells[t - 1] if t > 0 else np.zeros(h, dtype=DTYPE)
            di = dc * gc
            df = dc * c_prev
            dgc = dc * gi
            grad_pre[t, :h] = di * gi * (1.0 - gi)
            grad_pre[t, h : 2 * h] = df * gf * (1.0 - gf)
            grad_pre[t, 2 * h : 3 * h] = dgc * (1.0 - gc * gc)
            grad_pre[t, 3 * h :] = do * go * (1.0 - go)
            dh = wh.T @ grad_pre[t]
            if dh_extra is not None and t > 0:
                dh = dh + dh_extra
            dc = dc * gf
        h_prevs = np.vstack([np.zeros((1, h), dtype=DTYPE), hiddens[:-1]])
        grad_wx = grad_pre.T @ seq
        grad_wh = grad_pre.T @ h_prevs
        grad_b = grad_pre.sum(axis=0)
        grad_seq = grad_pre @ wx
        grads = {}
        for k, g in enumerate(self.GATES):
            grads[f"W_x{g}"] = grad_wx[k * h : (k + 1) * h]
            grads[f"W_h{g}"] = grad_wh[k * h : (k + 1) * h]
            grads[f"b_{g}"] = grad_b[k * h : (k + 1) * h]
        return grads, grad_seq

    def params(self):
        out = {}
        for g in self.GATES:
            out[f"W_x{g}"] = getattr(self, f"W_x{g}")
            out[f"W_h{g}"] = getattr(self, f"W_h{g}")
            out[f"b_{g}"] = getattr(self, f"b_{g}")
        return out


class DropoutHidden:
    """Dense layer whose input coordinates are masked out during training.

    Train mode draws a keep mask r ~ Bernoulli(keep_prob) and computes
    W (r * z) + b; dropped coordinates contribute exactly zero. Test mode is
    deterministic and uses the keep_prob-scaled weights: (keep_prob W) z + b.
    ``drop_rate`` is the probability of removing a unit, keep_prob is its
    complement. The output is pre-activation; callers apply any nonlinearity.
    """

    def __init__(self, in_dim, out_dim, drop_rate=0.0, rng=None, scale=0.05):
        if not 0.0 <= drop_rate < 1.0:
            raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.drop_rate = drop_rate
        if rng is None:
            self.weights = np.zeros((out_dim, in_dim), dtype=DTYPE)
        else:
            self.weights = init_uniform(rng, out_dim, in_dim, scale)
        self.bias = np.zeros(out_dim, dtype=DTYPE)

    @property
    def keep_prob(self):
        return 1.0 - self.drop_rate

    def forward(self, z, mode, rng=None, mask=None):
        if z.shape[0] != self.in_dim:
            raise ShapeError(f"hidden layer expects {self.in_dim} inputs, got {z.shape[0]}")
        if mode == "train":
            if mask is None:
                if self.drop_rate == 0.0:
                    mask = np.ones(self.in_dim, dtype=DTYPE)
                else:
                    mask = (rng.random(self.in_dim) < self.keep_prob).astype(DTYPE)
            masked = mask * z
            y = self.weights @ masked + self.bias
        elif mode == "test":
            mask = np.ones(self.in_dim, dtype=DTYPE)
            y = (self.keep_prob * self.weights) @ z + self.bias
        else:
            raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
        return y, mask, (z, mask)

    def backward(self, cache, grad_out):
        z, mask = cache
        masked = mask * z
        grad_w = np.outer(grad_out, masked)
        grad_b = grad_out.copy()
        grad_z = mask * (self.weights.T @ grad_out)
        return {"weights": grad_w, "bias": grad_b}, grad_z

    def params(self):
        return {"weights": self.weights, "bias": self.bias}


class PoolingCombiner:
    """Merges the two branch vectors with one fixed operation.

    max/sum/avg/mul require equal lengths and preserve them; outer flattens
    the length-|u| by length-|v| product row-major; concat appends v to u.
    """

    def __init__(self, op):
        if op not in POOLING_OPS:
            raise ValueError(f"pooling op must be one of {POOLING_OPS}, got {op!r}")
        self.op = op

    def output_dim(self, u_dim, v_dim):
        if self.op == "outer":
            return u_dim * v_dim
        if self.op == "concat":
            return u_dim + v_dim
        if u_dim != v_dim:
            raise ShapeError(f"{self.op} pooling needs equal branch sizes, got {u_dim} and {v_dim}")
        return u_dim

    def combine(self, u, v):
        if self.op in ("max", "sum", "avg", "mul") and u.shape != v.shape:
            raise ShapeError(f"{self.op} pooling: {u.shape} vs {v.shape}")
        if self.op == "max":
            out = np.maximum(u, v)
        elif self.op == "sum":
            out = u + v
        elif self.op == "avg":
            out = (u + v) / 2.0
        elif self.op == "mul":
            out = u * v
        elif self.op == "outer":
            out = np.outer(u, v).reshape(-1)
        else:
            out = np.concatenate([u, v])
        return out, (u, v)

    def backward(self, cache, grad_out):
        u, v = cache
        if self.op == "max":
            wins = u >= v  # ties route to the first branch
            return grad_out * wins, grad_out * ~wins
        if self.op == "sum":
            return grad_out.copy(), grad_out.copy()
        if self.op == "avg":
            return grad_out / 2.0, grad_out / 2.0
        if self.op == "mul":
            return grad_out * v, grad_out * u
        if self.op == "outer":
            g = grad_out.reshape(u.shape[0], v.shape[0])
            return g @ v, g.T @ u
        return grad_out[: u.shape[0]].copy(), grad_out[u.shape[0] :].copy()


class SoftmaxOutput:
    """Affine map to class logits plus a numerically stable softmax.

    The max logit is subtracted before exponentiation; the result is
    mathematically identical and immune to overflow.
    """

    def __init__(self, in_dim, num_classes, rng=None, scale=0.05):
        self.in_dim = in_dim
        self.num_classes = num_classes
        if rng is None:
            self.weights = np.zeros((num_classes, in_dim), dtype=DTYPE)
        else:
            self.weights = init_uniform(rng, num_classes, in_dim, scale)
        self.bias = np.zeros(num_classes, dtype=DTYPE)

    def forward(self, x):
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"softmax layer expects {self.in_dim} inputs, got {x.shape[0]}")
        logits = self.weights @ x + self.bias
        shifted = logits - logits.max()
        ex = np.exp(shifted)
        probs = ex / ex.sum()
        return probs, (x, probs)

    def backward(self, cache, true_class):
        """Gradient of -log(probs[true_class]) through softmax and affine."""
        x, probs = cache
        grad_logits = probs.copy()
        grad_logits[true_class] -= 1.0
        grad_w = np.outer(grad_logits, x)
        grad_b = grad_logits
        grad_x = self.weights.T @ grad_logits
        return {"weights": grad_w, "bias": grad_b}, grad_x

    def params(self):
        return {"weights": self.weights, "bias": self.bias}


def relu_backward(pre_activation, grad_out):
    """Derivative of relu applied at ``pre_activation``; zero on the flat side."""
    return grad_out * (pre_activation > 0)


__all__ = [
    "POOLING_OPS",
    "ConvMaxOverTime",
    "DropoutHidden",
    "EmbeddingTable",
    "LstmLayer",
    "PoolingCombiner",
    "SoftmaxOutput",
    "VocabularyError",
    "relu",
    "relu_backward",
]
