"""Per-attribute and aggregate accuracy, with a consistency-enforced mode.

Plain mode scores each attribute independently.  Consistency-enforced mode
first checks every prediction row against the schema; rows that are not
fully consistent count as wrong on every attribute.  That whole-row
invalidation is the strictest reading of "evaluating under logical
consistency" and is an interpretation, not an established convention --
per-group invalidation would be the milder alternative.

Aggregates are unweighted means over attributes, skipping attributes whose
denominator is empty (e.g. no positive-labeled row for the positive-sample
accuracy).
"""

import json
from dataclasses import dataclass

import numpy as np

from .audit import BinaryMatrix, check_vector
from .errors import DimensionMismatchError
from .schema import AttributeSchema

__all__ = ["MetricsReport", "attribute_accuracy", "consistency_enforced_accuracy"]


def _nanmean(arr) -> float:
    finite = np.asarray(arr)[~np.isnan(arr)]
    return float(finite.mean()) if finite.size else float("nan")


@dataclass
class MetricsReport:
    """Accuracy per attribute and averaged, split by label polarity.

    Per-attribute entries are NaN when the denominator is empty; such
    attributes are skipped by the aggregates.
    """

    mode: str  # "plain" or "consistency_enforced"
    attributes: tuple[str, ...]
    accuracy: np.ndarray
    positive_accuracy: np.ndarray
    negative_accuracy: np.ndarray

    @property
    def acc_avg(self) -> float:
        return _nanmean(self.accuracy)

    @property
    def acc_avg_p(self) -> float:
        return _nanmean(self.positive_accuracy)

    @property
    def acc_avg_n(self) -> float:
        return _nanmean(self.negative_accuracy)

    def to_dict(self) -> dict:
        def listify(arr):
            return [None if np.isnan(v) else float(v) for v in arr]

        return {
            "mode": self.mode,
            "acc_avg": self.acc_avg,
            "acc_avg_p": self.acc_avg_p,
            "acc_avg_n": self.acc_avg_n,
            "per_attribute": {
                name: {
                    "accuracy": acc,
                    "positive_accuracy": pos,
                    "negative_accuracy": neg,
                }
                for name, acc, pos, neg in zip(
                    self.attributes,
                    listify(self.accuracy),
                    listify(self.positive_accuracy),
                    listify(self.negative_accuracy),
                )
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        """Aligned plain-text table: one row per attribute plus the averages."""
        width = max(len("attribute"), max(len(a) for a in self.attributes))

        def fmt(v):
            return "     -" if np.isnan(v) else f"{100 * v:6.2f}"

        lines = [f"{'attribute':<{width}}  {'acc':>6}  {'acc_n':>6}  {'acc_p':>6}"]
        lines.append("-" * (width + 26))
        for i, name in enumerate(self.attributes):
            lines.append(
                f"{name:<{width}}  {fmt(self.accuracy[i])}  "
                f"{fmt(self.negative_accuracy[i])}  {fmt(self.positive_accuracy[i])}"
            )
        lines.append("-" * (width + 26))
        lines.append(
            f"{'average':<{width}}  {fmt(self.acc_avg)}  "
            f"{fmt(self.acc_avg_n)}  {fmt(self.acc_avg_p)}"
        )
        return "\n".join(lines)


def _accuracy_arrays(correct: np.ndarray, labels: np.ndarray):
    n, _ = labels.shape
    pos = labels.astype(bool)
    neg = ~pos
    with np.errstate(invalid="ignore"):
        acc = correct.sum(axis=0) / n
        acc_p = np.where(pos.sum(axis=0) > 0, (correct & pos).sum(axis=0) / pos.sum(axis=0), np.nan)
        acc_n = np.where(neg.sum(axis=0) > 0, (correct & neg).sum(axis=0) / neg.sum(axis=0), np.nan)
    return acc, acc_p, acc_n


def _check_shapes(preds: BinaryMatrix, labels: BinaryMatrix):
    if preds.shape != labels.shape:
        raise DimensionMismatchError(f"prediction shape {preds.shape} != label shape {labels.shape}")


def attribute_accuracy(
    preds: BinaryMatrix, labels: BinaryMatrix, attributes=None
) -> MetricsReport:
    """Plain per-attribute accuracy report."""
    _check_shapes(preds, labels)
    if attributes is None:
        attributes = tuple(f"attr{i}" for i in range(preds.shape[1]))
    correct = preds.values == labels.values
    acc, acc_p, acc_n = _accuracy_arrays(correct, labels.values)
    return MetricsReport("plain", tuple(attributes), acc, acc_p, acc_n)


def consistency_enforced_accuracy(
    schema: AttributeSchema, preds: BinaryMatrix, labels: BinaryMatrix
) -> MetricsReport:
    """Accuracy report where inconsistent prediction rows score zero.

    Rows whose prediction vector is not consistent under the schema are
    marked incorrect on every attribute; consistent rows are scored as in
    plain mode.
    """
    _check_shapes(preds, labels)
    if preds.shape[1] != len(schema):
        raise DimensionMismatchError(
            f"prediction width {preds.shape[1]} != schema attribute count {len(schema)}"
        )
    correct = preds.values == labels.values
    for i in range(preds.shape[0]):
        if check_vector(schema, preds.values[i]).status != "consistent":
            correct[i, :] = False
    acc, acc_p, acc_n = _accuracy_arrays(correct, labels.values)
    return MetricsReport("consistency_enforced", schema.attributes, acc, acc_p, acc_n)
