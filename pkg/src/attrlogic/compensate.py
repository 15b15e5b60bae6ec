"""Label compensation: fill each empty exhaustive group with its top score.

Groups are processed in schema declaration order and each group's emptiness
is re-checked after earlier fills, so an attribute shared between groups
(clean_shaven spans beard area and beard length) can satisfy a later group
without a second bit being added.  The argmax uses the raw scores, not the
thresholded values; bits are only ever flipped 0 -> 1.
"""

import numpy as np

from .audit import BinaryMatrix, ScoreMatrix, binarize
from .errors import DimensionMismatchError
from .schema import AttributeSchema

__all__ = ["compensate_vector", "compensate_dataset"]


def compensate_vector(schema: AttributeSchema, scores, row) -> np.ndarray:
    """Return a copy of ``row`` with every empty exhaustive group filled.

    For each group with no positive member, the member with the maximal raw
    score is set to 1 (ties break to the lowest attribute index).
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    out = np.asarray(row).ravel().astype(np.int8).copy()
    if scores.shape[0] != len(schema) or out.shape[0] != len(schema):
        raise DimensionMismatchError(
            f"expected vectors of length {len(schema)}, "
            f"got scores {scores.shape[0]} and row {out.shape[0]}"
        )
    for _, members in schema.group_indices():
        if not out[members].any():
            # ascending index order so argmax ties break to the lowest index
            members = sorted(members)
            best = members[int(np.argmax(scores[members]))]
            out[best] = 1
    return out


def compensate_dataset(schema: AttributeSchema, scores: ScoreMatrix, threshold: float) -> BinaryMatrix:
    """Binarize then compensate every row; the result has no empty groups."""
    binpreds = binarize(scores, threshold)
    return compensate_binary(schema, scores, binpreds)


def compensate_binary(schema: AttributeSchema, scores: ScoreMatrix, binpreds: BinaryMatrix) -> BinaryMatrix:
    """Compensate an already-thresholded matrix using its raw scores."""
    if scores.shape != binpreds.shape:
        raise DimensionMismatchError(
            f"score shape {scores.shape} != prediction shape {binpreds.shape}"
        )
    values = binpreds.values.copy()
    raw = scores.values
    if values.shape[1] != len(schema):
        raise DimensionMismatchError(
            f"matrix width {values.shape[1]} != schema attribute count {len(schema)}"
        )
    for _, members in schema.group_indices():
        members = sorted(members)
        empty = ~values[:, members].astype(bool).any(axis=1)
        if not empty.any():
            continue
        best = np.argmax(raw[np.ix_(empty, members)], axis=1)
        cols = np.asarray(members)[best]
        values[np.flatnonzero(empty), cols] = 1
    return BinaryMatrix(list(binpreds.row_ids), values)
