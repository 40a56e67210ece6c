"""Scores of an estimate against ground truth or a Z-score table."""

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import canonical_pair, natural_key


class EmptyEvaluable(ValueError):
    """No predicted pair could be scored."""


def _pairs(pairs):
    return {canonical_pair(a, b) for a, b in pairs}


def _prf(tp, n_est, n_true):
    precision = tp / n_est if n_est else 1.0
    recall = tp / n_true if n_true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def dag_scores(est_edges, true_edges):
    """Precision, recall and F1 over directed edges.

    A reversed edge is both a false positive and a false negative.

    >>> dag_scores({("A", "B"), ("C", "D")}, {("A", "B")})
    (0.5, 1.0, 0.6666666666666666)
    """
    est, true = set(map(tuple, est_edges)), set(map(tuple, true_edges))
    return _prf(len(est & true), len(est), len(true))


def adjacency_scores(est_edges, true_edges):
    """Like ``dag_scores`` but ignoring orientation."""
    est, true = _pairs(est_edges), _pairs(true_edges)
    return _prf(len(est & true), len(est), len(true))


def _status(directed, undirected, pair):
    a, b = pair
    if (a, b) in directed:
        return "fwd"
    if (b, a) in directed:
        return "bwd"
    if pair in undirected:
        return "und"
    return None


def shd(est_directed, true_directed, est_undirected=()):
    """Number of vertex pairs whose edge status differs.

    Each pair is absent, ``a->b``, ``b->a`` or unoriented; one edit (add,
    delete or reorient) fixes one pair.  An unoriented estimated edge over a
    true adjacency costs one reorientation.
    """
    est_d, true_d = set(map(tuple, est_directed)), set(map(tuple, true_directed))
    est_u = _pairs(est_undirected)
    pairs = _pairs(est_d) | _pairs(true_d) | est_u
    return sum(_status(est_d, est_u, p) != _status(true_d, set(), p) for p in pairs)


def pair_accuracy(predicted, true):
    """Fraction of predicted pairs that are true; ``None`` when nothing is predicted."""
    pred = _pairs(predicted)
    if not pred:
        return None
    return len(pred & _pairs(true)) / len(pred)


def pair_recall(predicted, true):
    true = _pairs(true)
    if not true:
        return None
    return len(_pairs(predicted) & true) / len(true)


@dataclass
class ZscoreDetail:
    pair: tuple
    z: tuple
    correct: bool


def zscore_eval(selection_pairs, zscores, threshold=0.15):
    """Share of predicted selection pairs whose genes both have ``|z| > threshold``.

    Pairs with a gene missing from ``zscores`` are skipped and listed in the
    returned ``missing``.  Returns ``(accuracy, details, missing)``.
    """
    details, missing = [], []
    for a, b in sorted(_pairs(selection_pairs), key=lambda p: (natural_key(p[0]), natural_key(p[1]))):
        if a not in zscores or b not in zscores:
            missing.append((a, b))
            continue
        za, zb = float(zscores[a]), float(zscores[b])
        details.append(ZscoreDetail((a, b), (za, zb), abs(za) > threshold and abs(zb) > threshold))
    if not details:
        raise EmptyEvaluable(f"no evaluable pair ({len(missing)} with missing Z-scores)")
    return sum(d.correct for d in details) / len(details), details, missing


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    shd: int
    adjacency_f1: float
    selection_accuracy: float = None
    selection_recall: float = None
    confounder_accuracy: float = None
    confounder_recall: float = None
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)

    def to_text(self):
        return format_table([self.to_dict()], columns=REPORT_COLUMNS)


REPORT_COLUMNS = (
    "precision",
    "recall",
    "f1",
    "shd",
    "adjacency_f1",
    "selection_accuracy",
    "selection_recall",
    "confounder_accuracy",
    "confounder_recall",
)


def evaluate(result, true_edges, true_confounded, true_selected):
    """Full report for a ``GislResult`` against ground-truth sets."""
    directed, unoriented = result.graph.dag_projection()
    p, r, f = dag_scores(directed, true_edges)
    adj_f1 = adjacency_scores(set(directed) | set(unoriented), true_edges)[2]
    counts = {
        "est_directed": len(directed),
        "true_directed": len(set(true_edges)),
        "predicted_selection": len(result.selected),
        "true_selection": len(_pairs(true_selected)),
        "predicted_confounded": len(result.confounded),
        "true_confounded": len(_pairs(true_confounded)),
        "unknown": len(result.unknown),
        "untested": len(result.untested),
    }
    return EvalReport(
        precision=p,
        recall=r,
        f1=f,
        shd=shd(directed, true_edges, unoriented),
        adjacency_f1=adj_f1,
        selection_accuracy=pair_accuracy(result.selected, true_selected),
        selection_recall=pair_recall(result.selected, true_selected),
        confounder_accuracy=pair_accuracy(result.confounded, true_confounded),
        confounder_recall=pair_recall(result.confounded, true_confounded),
        counts=counts,
    )


def aggregate(reports, columns=REPORT_COLUMNS):
    """Mean, standard deviation and number of defined values per column.

    ``None`` entries (undefined accuracies) are left out of the mean.
    """
    out = {}
    for col in columns:
        vals = [r[col] if isinstance(r, dict) else getattr(r, col) for r in reports]
        vals = [float(v) for v in vals if v is not None]
        if vals:
            out[col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}
        else:
            out[col] = {"mean": None, "std": None, "n": 0}
    return out


def _fmt(v):
    if v is None:
        return "undef"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.3f}"
    if isinstance(v, dict) and "mean" in v:
        if v["mean"] is None:
            return "undef"
        return f"{100 * v['mean']:.1f}±{100 * v['std']:.1f}" if v.get("pct", True) else f"{v['mean']:.2f}"
    return str(v)


def format_table(rows, columns):
    """Aligned plain-text table; ``rows`` are dicts."""
    header = list(columns)
    body = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body)) for k, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines) + "\n"
