"""Thresholding and logical-consistency auditing of prediction matrices.

A prediction row is *impossible* when it violates an exclusion or dependency
rule, *incomplete* when every rule holds but some exhaustive group has no
positive member, and *consistent* otherwise.  A row that is both is counted
as impossible only, so the three statuses partition a dataset and
``failure_ratio = (n_incomplete + n_impossible) / n_total`` is exact.

Score/label files are comma-separated text with header ``id,<attr1>,...``
where the attribute columns match the schema; audit reports serialize to
JSON with per-rule violation counts.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InputValueError
from .schema import AttributeSchema

__all__ = [
    "ScoreMatrix",
    "BinaryMatrix",
    "ConsistencyVerdict",
    "AuditReport",
    "binarize",
    "check_vector",
    "audit_dataset",
    "load_score_csv",
    "load_binary_csv",
    "load_table_csv",
    "write_matrix_csv",
]


@dataclass
class ScoreMatrix:
    """N x K real-valued prediction scores, one row per image."""

    row_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionMismatchError("score matrix must be 2-dimensional")
        if len(self.row_ids) != self.values.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.row_ids)} row ids for {self.values.shape[0]} rows"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class BinaryMatrix:
    """N x K thresholded predictions or ground-truth labels, entries in {0,1}."""

    row_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DimensionMismatchError("binary matrix must be 2-dimensional")
        if values.size and not np.isin(values, (0, 1)).all():
            raise InputValueError("binary matrix entries must be exactly 0 or 1")
        self.values = values.astype(np.int8)
        if len(self.row_ids) != self.values.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.row_ids)} row ids for {self.values.shape[0]} rows"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class ConsistencyVerdict:
    """Classification of a single prediction row.

    ``status`` is "impossible" iff a violation list is non-empty,
    "incomplete" iff only ``empty_groups`` is non-empty, else "consistent".
    Exclusion violations are reported once per unordered attribute pair.
    """

    status: str
    violated_exclusions: list[tuple[str, str]] = field(default_factory=list)
    violated_dependencies: list[str] = field(default_factory=list)
    empty_groups: list[str] = field(default_factory=list)


@dataclass
class AuditReport:
    """Aggregate consistency accounting over a dataset."""

    n_total: int
    n_incomplete: int
    n_impossible: int
    per_rule_counts: dict[str, int] = field(default_factory=dict)

    @property
    def failure_ratio(self) -> float:
        if self.n_total == 0:
            return 0.0
        return (self.n_incomplete + self.n_impossible) / self.n_total

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_incomplete": self.n_incomplete,
            "n_impossible": self.n_impossible,
            "failure_ratio": self.failure_ratio,
            "per_rule_counts": dict(self.per_rule_counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _require_width(values: np.ndarray, schema: AttributeSchema):
    if values.shape[-1] != len(schema):
        raise DimensionMismatchError(
            f"matrix width {values.shape[-1]} != schema attribute count {len(schema)}"
        )


def binarize(scores: ScoreMatrix, threshold: float) -> BinaryMatrix:
    """Threshold scores strictly: entry = 1 iff score > threshold."""
    bad = ~np.isfinite(scores.values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise InputValueError(
            f"non-finite score at row {scores.row_ids[row]!r}, column {col}"
        )
    return BinaryMatrix(list(scores.row_ids), (scores.values > threshold).astype(np.int8))


def check_vector(schema: AttributeSchema, row) -> ConsistencyVerdict:
    """Classify one binary row as consistent, incomplete, or impossible.

    Every violated rule is listed: exclusion pairs once per unordered pair,
    dependency subjects whose list has no positive member, and exhaustive
    groups with no positive member.  Impossibility takes precedence over
    incompleteness.
    """
    row = np.asarray(row).ravel()
    if row.shape[0] != len(schema):
        raise DimensionMismatchError(
            f"row length {row.shape[0]} != schema attribute count {len(schema)}"
        )
    attrs = schema.attributes

    exclusions = []
    seen_pairs = set()
    for subj, members in schema.exclusion_indices():
        if not row[subj]:
            continue
        for m in members:
            if row[m]:
                pair = (subj, m) if subj < m else (m, subj)
                if pair not in seen_pairs:
                    seen_pairs.add(pair)
                    exclusions.append((attrs[pair[0]], attrs[pair[1]]))

    dependencies = [
        attrs[subj]
        for subj, members in schema.dependency_indices()
        if row[subj] and not any(row[m] for m in members)
    ]

    empty = [
        name for name, members in schema.group_indices() if not any(row[m] for m in members)
    ]

    if exclusions or dependencies:
        status = "impossible"
    elif empty:
        status = "incomplete"
    else:
        status = "consistent"
    return ConsistencyVerdict(status, exclusions, dependencies, empty)


def audit_dataset(schema: AttributeSchema, scores: ScoreMatrix, threshold: float) -> AuditReport:
    """Binarize and audit every row; aggregate counts into an AuditReport.

    Equivalent to counting check_vector verdicts row by row, but vectorized;
    the result is independent of row order.
    """
    binpreds = binarize(scores, threshold)
    return audit_binary(schema, binpreds)


def audit_binary(schema: AttributeSchema, binpreds: BinaryMatrix) -> AuditReport:
    """Audit an already-thresholded matrix (see audit_dataset)."""
    values = binpreds.values
    _require_width(values, schema)
    n = values.shape[0]
    on = values.astype(bool)
    attrs = schema.attributes

    impossible = np.zeros(n, dtype=bool)
    per_rule: dict[str, int] = {}

    # Exclusions counted per unordered pair so symmetric rule derivation
    # does not double-count.
    pair_hits: dict[tuple[int, int], np.ndarray] = {}
    for subj, members in schema.exclusion_indices():
        for m in members:
            pair = (subj, m) if subj < m else (m, subj)
            if pair not in pair_hits:
                pair_hits[pair] = on[:, pair[0]] & on[:, pair[1]]
    for (a, b), hits in sorted(pair_hits.items()):
        count = int(hits.sum())
        if count:
            per_rule[f"exclusion:{attrs[a]}+{attrs[b]}"] = count
        impossible |= hits

    for subj, members in schema.dependency_indices():
        hits = on[:, subj] & ~on[:, members].any(axis=1)
        count = int(hits.sum())
        if count:
            per_rule[f"dependency:{attrs[subj]}"] = count
        impossible |= hits

    incomplete = np.zeros(n, dtype=bool)
    for name, members in schema.group_indices():
        hits = ~on[:, members].any(axis=1)
        count = int(hits.sum())
        if count:
            per_rule[f"empty_group:{name}"] = count
        incomplete |= hits
    incomplete &= ~impossible

    return AuditReport(
        n_total=n,
        n_incomplete=int(incomplete.sum()),
        n_impossible=int(impossible.sum()),
        per_rule_counts=per_rule,
    )


def load_table_csv(path, schema: AttributeSchema | None = None):
    """Read any ``id,<col>,...`` CSV into (columns, row ids, float matrix).

    When a schema is given, the columns must match its attributes exactly.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputValueError(f"{path}: empty file") from None
        if not header or header[0] != "id":
            raise InputValueError(f"{path}: first header column must be 'id'")
        columns = header[1:]
        if schema is not None and tuple(columns) != schema.attributes:
            raise DimensionMismatchError(
                f"{path}: columns do not match schema attributes"
            )
        ids, rows = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(columns) + 1:
                raise InputValueError(f"{path}: line {line_no} has {len(rec)} fields")
            ids.append(rec[0])
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise InputValueError(f"{path}: line {line_no}: {exc}") from None
    return columns, ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), len(columns))


def load_score_csv(path, schema: AttributeSchema | None = None) -> ScoreMatrix:
    """Read a score file (header ``id,<attr1>,...``) into a ScoreMatrix."""
    _, ids, values = load_table_csv(path, schema)
    return ScoreMatrix(ids, values)


def load_binary_csv(path, schema: AttributeSchema | None = None) -> BinaryMatrix:
    """Read a 0/1 label or prediction file into a BinaryMatrix."""
    _, ids, values = load_table_csv(path, schema)
    return BinaryMatrix(ids, values)


def write_matrix_csv(path, columns, matrix) -> None:
    """Write a Score/BinaryMatrix in the same comma-separated layout."""
    values = matrix.values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *columns])
        is_binary = np.issubdtype(values.dtype, np.integer)
        for row_id, row in zip(matrix.row_ids, values):
            if is_binary:
                writer.writerow([row_id, *(int(v) for v in row)])
            else:
                writer.writerow([row_id, *(format(v, ".10g") for v in row)])
