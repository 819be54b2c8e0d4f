"""Leave-one-source-out evaluation, per-attribute metrics and reporting.

Each run holds one source out: the remaining sources form the catalog (and
everything derived from it: vocabulary, token statistics, validation split),
the held-out source supplies the test records. Attributes that exist only in
the test source stay in the confusion tally as true-label rows that the
model can never predict, so their zero precision/recall is visible instead
of silently inflating accuracy.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from attrpool.baselines import mlp_predict, mlp_train, ondux_fit, ondux_predict
from attrpool.data import split_by_source
from attrpool.training import TrainConfig, train

# Method names in report order; hybrids expand to (branch_mode, pooling).
DL_METHODS = {
    "hybrid-max": ("hybrid", "max"),
    "hybrid-sum": ("hybrid", "sum"),
    "hybrid-avg": ("hybrid", "avg"),
    "hybrid-mul": ("hybrid", "mul"),
    "hybrid-outer": ("hybrid", "outer"),
    "hybrid-concat": ("hybrid", "concat"),
    "cnn": ("cnn_only", "max"),
    "lstm": ("lstm_only", "max"),
}
METHODS = tuple(DL_METHODS) + ("mlp", "ondux")

PAPER_GRID = tuple((e, w) for e in (100, 200, 300) for w in (3, 5))


class ConfusionTally:
    """Count matrix over (true attribute, predicted attribute) pairs."""

    def __init__(self, labels):
        self.labels = sorted(set(labels))
        self.index = {a: i for i, a in enumerate(self.labels)}
        self.counts = np.zeros((len(self.labels), len(self.labels)), dtype=np.int64)

    def add(self, true_label, predicted_label, count=1):
        self.counts[self.index[true_label], self.index[predicted_label]] += count

    @property
    def total(self):
        return int(self.counts.sum())

    def merge(self, other):
        for t in other.labels:
            for p in other.labels:
                c = other.counts[other.index[t], other.index[p]]
                if c:
                    self.add(t, p, int(c))


@dataclass
class AttributeMetrics:
    precision: float
    recall: float
    f1: float


def metrics(tally):
    """Per-attribute precision/recall/F1 plus overall accuracy.

    Zero denominators yield zero, so an attribute that is never predicted
    and never true scores 0/0/0 by convention.
    """
    if tally.total == 0:
        raise ValueError("empty tally")
    per_attribute = {}
    c = tally.counts
    for a, i in tally.index.items():
        tp = float(c[i, i])
        predicted = float(c[:, i].sum())
        actual = float(c[i, :].sum())
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / actual if actual > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_attribute[a] = AttributeMetrics(precision, recall, f1)
    accuracy = float(np.trace(c)) / tally.total
    return per_attribute, accuracy


@dataclass
class RunResult:
    test_source: str
    accuracy: float
    chosen_config: dict | None
    tally: ConfusionTally
    validation_accuracy: float | None = None


@dataclass
class EvalReport:
    method: str
    runs: list
    mean_accuracy: float
    per_attribute: dict
    macro_f1: float  # extension beyond the usual single-accuracy reporting
    attributes: list = field(default_factory=list)


def _derived_seed(base, run_index, grid_index=0):
    # Fixed arithmetic so every (run, config) pair trains with its own
    # deterministic seed derived from the single user seed.
    return base + 1_000_003 * run_index + 10_007 * grid_index


def _fit_dl(method, catalog, cfg, grid, run_index):
    branch_mode, pooling = DL_METHODS[method]
    if branch_mode == "lstm_only":
        # Window size is meaningless without the convolution branch.
        seen, reduced = set(), []
        for e, w in grid:
            if e not in seen:
                seen.add(e)
                reduced.append((e, w))
        grid = reduced
    best = None
    for gi, (emb, win) in enumerate(grid):
        run_cfg = replace(
            cfg,
            embedding_size=emb,
            window=win,
            branch_mode=branch_mode,
            pooling=pooling,
            seed=_derived_seed(cfg.seed, run_index, gi),
        )
        model = train(catalog, run_cfg)
        val = -1.0 if model.best_validation_accuracy is None else model.best_validation_accuracy
        if best is None or val > best[0]:
            best = (val, model, {"window": win, "embedding": emb})
    val, model, chosen = best
    return (lambda value: model.predict(value)[0]), chosen, (None if val < 0 else val)


def _fit_method(method, catalog, cfg, grid, run_index):
    if method in DL_METHODS:
        return _fit_dl(method, catalog, cfg, grid, run_index)
    if method == "mlp":
        trained = mlp_train(catalog, replace(cfg, seed=_derived_seed(cfg.seed, run_index)))
        return (lambda value: mlp_predict(trained, value)), None, trained.best_validation_accuracy
    if method == "ondux":
        model = ondux_fit(catalog)
        return (lambda value: ondux_predict(model, value)), None, None
    raise ValueError(f"unknown method {method!r}; have {', '.join(METHODS)}")


def run_loo(records, method, cfg=None, grid=None):
    """Leave-one-source-out evaluation of one method over all sources."""
    records = list(records)
    sources = sorted({r.source for r in records})
    if len(sources) < 2:
        raise ValueError("leave-one-out needs at least two sources")
    if cfg is None:
        cfg = TrainConfig()
    if grid is None:
        grid = PAPER_GRID
    all_labels = sorted({r.attribute for r in records})
    aggregate = ConfusionTally(all_labels)
    runs = []
    for run_index, source in enumerate(sources):
        catalog, test = split_by_source(records, source)
        predict, chosen, val_acc = _fit_method(method, catalog, cfg, grid, run_index)
        labels = sorted(set(catalog.attributes) | {r.attribute for r in test})
        tally = ConfusionTally(labels)
        for rec in test:
            tally.add(rec.attribute, predict(rec.value))
        _, accuracy = metrics(tally)
        aggregate.merge(tally)
        runs.append(RunResult(source, accuracy, chosen, tally, val_acc))
    per_attribute, _ = metrics(aggregate)
    mean_accuracy = float(np.mean([r.accuracy for r in runs]))
    macro_f1 = float(np.mean([m.f1 for m in per_attribute.values()]))
    return EvalReport(method, runs, mean_accuracy, per_attribute, macro_f1, all_labels)


def _config_bracket(chosen):
    if not chosen:
        return ""
    return f"[w={chosen['window']},e={chosen['embedding']}]"


def render_report(reports):
    """Plain-text summary tables for one or more method reports.

    Output is a pure function of the report contents: same inputs, same
    bytes. The bracket next to each method shows the configuration chosen
    for its best run.
    """
    if isinstance(reports, EvalReport):
        reports = [reports]
    lines = []
    if not reports:
        return "no results\n"
    sources = [r.test_source for r in reports[0].runs]
    name_w = max(len(r.method) for r in reports)
    header = f"{'method':<{name_w}}  {'mean':>6}  " + "  ".join(f"{s:>12}" for s in sources)
    lines.append("== accuracy by held-out source ==")
    lines.append(header)
    for rep in reports:
        best_run = max(rep.runs, key=lambda r: (r.accuracy, -rep.runs.index(r)))
        cells = "  ".join(f"{r.accuracy:>12.3f}" for r in rep.runs)
        bracket = _config_bracket(best_run.chosen_config)
        lines.append(f"{rep.method:<{name_w}}  {rep.mean_accuracy:>6.3f}  {cells}  {bracket}".rstrip())
    for rep in reports:
        lines.append("")
        lines.append(f"== per-attribute metrics: {rep.method} (macro-F1 {rep.macro_f1:.3f}, extension) ==")
        attr_w = max([len(a) for a in rep.per_attribute] + [len("attribute")])
        lines.append(f"{'attribute':<{attr_w}}  precision  recall  f1")
        for attr in sorted(rep.per_attribute):
            m = rep.per_attribute[attr]
            lines.append(f"{attr:<{attr_w}}  {m.precision:>9.3f}  {m.recall:>6.3f}  {m.f1:>6.3f}")
    return "\n".join(lines) + "\n"


def report_records(reports):
    """One machine-readable dict per (method, run) for record-per-line output."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    out = []
    for rep in reports:
        for run in rep.runs:
            per_attr, _ = metrics(run.tally)
            out.append(
                {
                    "method": rep.method,
                    "test_source": run.test_source,
                    "accuracy": run.accuracy,
                    "config": run.chosen_config,
                    "per_attribute": {
                        a: {"precision": m.precision, "recall": m.recall, "f1": m.f1}
                        for a, m in sorted(per_attr.items())
                    },
                }
            )
        out.append(
            {
                "method": rep.method,
                "mean_accuracy": rep.mean_accuracy,
                "macro_f1": rep.macro_f1,
            }
        )
    return out


__all__ = [
    "DL_METHODS",
    "METHODS",
    "PAPER_GRID",
    "AttributeMetrics",
    "ConfusionTally",
    "EvalReport",
    "RunResult",
    "metrics",
    "render_report",
    "report_records",
    "run_loo",
]
