"""Logical-consistency engine and evaluation toolkit for multi-label
attribute prediction.

Declares attribute-group constraints, audits prediction sets for incomplete
and impossible rows, applies label compensation, computes the consistency
loss family, trains a desk-scale classifier demonstrating the consistency
effect, and analyzes recognition-score distributions by attribute-pair
category.
"""

from .audit import (
    AuditReport,
    BinaryMatrix,
    ConsistencyVerdict,
    ScoreMatrix,
    audit_dataset,
    binarize,
    check_vector,
)
from .compensate import compensate_dataset, compensate_vector
from .errors import AttrLogicError
from .loss import (
    ConsistencyStats,
    LossConfig,
    bce_loss,
    hard_consistency_stats,
    lcp_loss,
    soft_lcp_surrogate,
    total_loss,
)
from .metrics import MetricsReport, attribute_accuracy, consistency_enforced_accuracy
from .schema import AttributeSchema, fh37k_default, parse_schema, serialize_schema, validate_schema

__version__ = "0.1.0"

__all__ = [
    "AttrLogicError",
    "AttributeSchema",
    "AuditReport",
    "BinaryMatrix",
    "ConsistencyStats",
    "ConsistencyVerdict",
    "LossConfig",
    "MetricsReport",
    "ScoreMatrix",
    "attribute_accuracy",
    "audit_dataset",
    "bce_loss",
    "binarize",
    "check_vector",
    "compensate_dataset",
    "compensate_vector",
    "consistency_enforced_accuracy",
    "fh37k_default",
    "hard_consistency_stats",
    "lcp_loss",
    "parse_schema",
    "serialize_schema",
    "soft_lcp_surrogate",
    "total_loss",
    "validate_schema",
]
