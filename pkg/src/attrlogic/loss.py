"""Loss functions steering a multi-label classifier toward consistency.

The consistency penalty is built from two batch statistics computed over
the per-subject rule sets of a schema:

  * p_ex -- across exclusion rules, the mean conditional frequency of the
    subject co-occurring with an excluded attribute, given the subject fired;
  * p_d  -- across dependency rules, the mean conditional frequency of at
    least one required attribute firing, given the subject fired.

Rules whose conditioning event never fires in the batch are excluded from
the mean (counting them as zero would reward suppressing the subject
attribute outright).  A batch with no firing exclusion subjects scores
p_ex = 0 and one with no firing dependency subjects scores p_d = 1: no
evidence, no penalty.

The consistency penalty is ``(alpha * p_ex + beta * (1 - p_d))**2`` and the
training objective blends it with binary cross-entropy as
``(1 - lam) * bce + lam * penalty``.

The hard statistics are defined on thresholded predictions and carry no
gradient, so training uses a product relaxation: indicator[subject = 1]
becomes p(subject) and indicator[any list member = 1] becomes
1 - prod(1 - p(member)).  The relaxation converges to the hard value as
probabilities saturate toward {0, 1}.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, InputValueError
from .schema import AttributeSchema

__all__ = [
    "LossConfig",
    "ConsistencyStats",
    "bce_loss",
    "hard_consistency_stats",
    "lcp_loss",
    "total_loss",
    "soft_lcp_surrogate",
]

PROB_EPS = 1e-7
RULE_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Weights for the consistency penalty and the blended objective.

    alpha scales p_ex, beta scales (1 - p_d), lam in [0, 1] mixes the
    penalty with BCE, and threshold binarizes scores for the hard path.
    """

    alpha: float = 1.0
    beta: float = 24.0
    lam: float = 0.5
    threshold: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InputValueError("alpha and beta must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise InputValueError("lam must lie in [0, 1]")


@dataclass
class ConsistencyStats:
    """Batch-level consistency statistics, both probabilities in [0, 1]."""

    p_ex: float
    p_d: float
    per_rule: dict[str, float] = field(default_factory=dict)


def _values(matrix) -> np.ndarray:
    return matrix.values if hasattr(matrix, "values") else np.asarray(matrix)


def bce_loss(probs, labels) -> float:
    """Mean binary cross-entropy over all N*K entries.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logarithms.
    """
    p = np.asarray(_values(probs), dtype=np.float64)
    y = np.asarray(_values(labels), dtype=np.float64)
    if p.shape != y.shape:
        raise DimensionMismatchError(f"probability shape {p.shape} != label shape {y.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _conditional_frequencies(rules, on: np.ndarray, attrs) -> dict[str, float]:
    freqs = {}
    for subj, members in rules:
        fired = on[:, subj]
        denom = int(fired.sum())
        if denom == 0:
            continue
        hit = fired & on[:, members].any(axis=1)
        freqs[attrs[subj]] = int(hit.sum()) / denom
    return freqs


def hard_consistency_stats(schema: AttributeSchema, binpreds) -> ConsistencyStats:
    """Compute p_ex and p_d from thresholded predictions."""
    on = np.asarray(_values(binpreds)).astype(bool)
    if on.ndim != 2 or on.shape[1] != len(schema):
        raise DimensionMismatchError(
            f"prediction width {on.shape[-1]} != schema attribute count {len(schema)}"
        )
    ex = _conditional_frequencies(schema.exclusion_indices(), on, schema.attributes)
    dep = _conditional_frequencies(schema.dependency_indices(), on, schema.attributes)
    per_rule = {f"exclusion:{k}": v for k, v in ex.items()}
    per_rule.update({f"dependency:{k}": v for k, v in dep.items()})
    p_ex = float(np.mean(list(ex.values()))) if ex else 0.0
    p_d = float(np.mean(list(dep.values()))) if dep else 1.0
    return ConsistencyStats(p_ex=p_ex, p_d=p_d, per_rule=per_rule)


def lcp_loss(stats: ConsistencyStats, config: LossConfig) -> float:
    """Consistency penalty (alpha * p_ex + beta * (1 - p_d))**2."""
    inner = config.alpha * stats.p_ex + config.beta * (1.0 - stats.p_d)
    return float(inner * inner)


def total_loss(bce: float, lcp: float, config: LossConfig) -> float:
    """Affine blend (1 - lam) * bce + lam * lcp."""
    return (1.0 - config.lam) * bce + config.lam * lcp


def _soft_rule_terms(rules, p: np.ndarray):
    """Relaxed conditional frequency and intermediates per usable rule."""
    terms = []
    for subj, members in rules:
        a = p[:, subj]
        if not np.any(a >= RULE_EPS):
            continue  # conditioning event effectively never fires
        one_minus = 1.0 - p[:, members]
        q = 1.0 - one_minus.prod(axis=1)
        denom = a.sum()
        cond = float((a * q).sum() / denom)
        terms.append((subj, members, a, q, one_minus, denom, cond))
    return terms


def soft_lcp_surrogate(
    schema: AttributeSchema, probs, config: LossConfig
) -> tuple[float, np.ndarray]:
    """Differentiable relaxation of the consistency penalty.

    Returns ``(value, grad)`` where ``grad`` has the shape of ``probs`` and
    holds d(value)/d(probs).  The relaxed conditional frequency of a rule is
    ``sum_rows p(subject) * relax / sum_rows p(subject)`` with
    ``relax = 1 - prod(1 - p(member))``; the result is plugged into the same
    squared penalty as the hard path.

    Args:
        schema: constraint schema supplying the rule sets.
        probs: N x K matrix of probabilities, all strictly inside (0, 1).
        config: penalty weights (alpha, beta).

    Returns:
        The scalar surrogate value and its gradient matrix.
    """
    # The per-rule ratio is scale-invariant in the subject probabilities, so
    # a rule only drops out once its subject mass crosses the hard skip
    # threshold; convergence to the hard value therefore requires batches
    # whose rule subjects all genuinely fire somewhere.
    p = np.asarray(_values(probs), dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != len(schema):
        raise DimensionMismatchError(
            f"probability width {p.shape[-1]} != schema attribute count {len(schema)}"
        )
    if p.size and (p.min() <= 0.0 or p.max() >= 1.0):
        raise InputValueError("probabilities must lie strictly inside (0, 1)")

    ex_terms = _soft_rule_terms(schema.exclusion_indices(), p)
    dep_terms = _soft_rule_terms(schema.dependency_indices(), p)

    p_ex = float(np.mean([t[6] for t in ex_terms])) if ex_terms else 0.0
    p_d = float(np.mean([t[6] for t in dep_terms])) if dep_terms else 1.0
    inner = config.alpha * p_ex + config.beta * (1.0 - p_d)
    value = inner * inner

    grad = np.zeros_like(p)

    def accumulate(terms, weight):
        # weight = d(value)/d(mean conditional frequency), shared by the
        # rules of one kind; each rule contributes through its own terms.
        if not terms:
            return
        w = weight / len(terms)
        for subj, members, a, q, one_minus, denom, cond in terms:
            grad[:, subj] += w * (q - cond) / denom
            for j, col in enumerate(members):
                if len(members) == 1:
                    others = np.ones_like(a)
                else:
                    others = np.prod(np.delete(one_minus, j, axis=1), axis=1)
                grad[:, col] += w * a * others / denom

    accumulate(ex_terms, 2.0 * inner * config.alpha)
    accumulate(dep_terms, -2.0 * inner * config.beta)
    return float(value), grad
