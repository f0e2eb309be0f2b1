"""Confusion matrix, macro-F1, Cohen's kappa and the divergent subset."""

import json
from dataclasses import dataclass, field

import numpy as np

from .data import LABELS, SentimentLabel
from .errors import EmptyMatrix, LengthMismatch, ParseError

K = len(LABELS)


def confusion_matrix(gold, pred):
    """3x3 counts with rows indexed by gold label and columns by prediction."""
    gold = [int(g) for g in gold]
    pred = [int(p) for p in pred]
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold labels vs {len(pred)} predictions")
    m = np.zeros((K, K), dtype=np.int64)
    if gold:
        np.add.at(m, (np.asarray(gold), np.asarray(pred)), 1)
    return m


def _safe_div(num, den):
    return num / den if den else 0.0


def per_class_scores(m):
    """Lists of precision, recall and F1 per class; every 0/0 counts as 0."""
    m = np.asarray(m)
    precision, recall, f1 = [], [], []
    for c in range(K):
        tp = m[c, c]
        p = _safe_div(tp, m[:, c].sum())
        r = _safe_div(tp, m[c, :].sum())
        precision.append(float(p))
        recall.append(float(r))
        f1.append(float(_safe_div(2 * p * r, p + r)))
    return precision, recall, f1


def macro_f1(m):
    m = np.asarray(m)
    if m.sum() == 0:
        raise EmptyMatrix("macro-F1 of an empty confusion matrix")
    return float(np.mean(per_class_scores(m)[2]))


def cohens_kappa(a, b):
    """Chance-corrected agreement between two label sequences."""
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} labels")
    if not len(a):
        raise LengthMismatch("kappa needs at least one labelled item")
    m = confusion_matrix(a, b).astype(np.float64)
    n = m.sum()
    p_o = np.trace(m) / n
    p_e = float((m.sum(axis=1) / n) @ (m.sum(axis=0) / n))
    if p_e == 1.0:
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


def divergent_subset(records):
    return [r for r in records if r.sentence_sentiment != r.targeted_sentiment]


@dataclass
class MetricsReport:
    precision: list
    recall: list
    f1: list
    macro_f1: float
    support: list
    n_examples: int
    subset: str = "full"
    confusion: list = field(default_factory=list)

    def to_dict(self):
        names = [str(label) for label in LABELS]
        return {
            "subset": self.subset,
            "n_examples": self.n_examples,
            "macro_f1": self.macro_f1,
            "per_class": {
                name: {
                    "precision": self.precision[i],
                    "recall": self.recall[i],
                    "f1": self.f1[i],
                    "support": self.support[i],
                }
                for i, name in enumerate(names)
            },
            "confusion_matrix": self.confusion,
        }


def evaluate(gold, pred, subset="full"):
    m = confusion_matrix(gold, pred)
    precision, recall, f1 = per_class_scores(m)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro_f1(m),
        support=m.sum(axis=1).tolist(),
        n_examples=int(m.sum()),
        subset=subset,
        confusion=m.tolist(),
    )


def load_predictions(path):
    """Read a JSONL file of ``{"id", "gold", "pred"}`` objects."""
    ids, gold, pred = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ids.append(str(obj["id"]))
                gold.append(SentimentLabel.parse(obj["gold"]))
                pred.append(SentimentLabel.parse(obj["pred"]))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ParseError(lineno, f"bad prediction line: {exc}") from None
    return ids, gold, pred


def save_predictions(path, ids, gold, pred):
    with open(path, "w", encoding="utf-8") as fh:
        for i, g, p in zip(ids, gold, pred):
            row = {"id": i, "gold": str(SentimentLabel(g)), "pred": str(SentimentLabel(p))}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
