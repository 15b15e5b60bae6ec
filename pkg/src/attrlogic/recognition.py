"""Recognition-score analysis by beard-area pair category.

Takes identity- and attribute-tagged feature vectors (produced by an
external face matcher), forms all within-demographic image pairs, splits
them into genuine (same subject) and impostor (different subjects) streams
tagged by the unordered pair of beard-area categories, calibrates a
similarity threshold to a target false-match rate on a reference
demographic, and reports per-category FMR tables and score histograms.

Similarity is the cosine of the two vectors.  The embedding file format is
binary: magic ``EMB1``, uint32 little-endian record count and vector
dimension, then per record a uint16-length-prefixed UTF-8 image id, a
uint16-length-prefixed UTF-8 subject id, a uint8 demographic code, a uint8
beard-category code, a float32 confidence, and ``dim`` float32 components.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import AttrLogicError, InputValueError

__all__ = [
    "BEARD_CATEGORIES",
    "DEMOGRAPHIC_NAMES",
    "PAIR_CATEGORIES",
    "EmbeddingSet",
    "PairScores",
    "CalibrationResult",
    "FmrReport",
    "EmbeddingFormatError",
    "CalibrationError",
    "load_embeddings",
    "save_embeddings",
    "filter_high_confidence",
    "pair_scores",
    "calibrate_threshold",
    "fmr_by_category",
    "distribution_histograms",
    "generate_embeddings",
]

BEARD_CATEGORIES = ("CS", "CA", "S2S")
DEMOGRAPHIC_NAMES = ("AM", "BM", "IM", "WM")

# All unordered beard-area pairs, in canonical (alphabetical) order.
PAIR_CATEGORIES = (
    ("CA", "CA"),
    ("CA", "CS"),
    ("CA", "S2S"),
    ("CS", "CS"),
    ("CS", "S2S"),
    ("S2S", "S2S"),
)


class EmbeddingFormatError(AttrLogicError):
    """The embedding file is malformed or internally inconsistent."""


class CalibrationError(AttrLogicError):
    """No threshold can achieve the requested false-match rate."""


def _demographic_name(code: int) -> str:
    if code < len(DEMOGRAPHIC_NAMES):
        return DEMOGRAPHIC_NAMES[code]
    return f"D{code}"


def _demographic_code(name: str) -> int:
    if name in DEMOGRAPHIC_NAMES:
        return DEMOGRAPHIC_NAMES.index(name)
    if name.startswith("D") and name[1:].isdigit() and 0 <= int(name[1:]) <= 255:
        return int(name[1:])
    raise InputValueError(f"unknown demographic tag {name!r}")


@dataclass
class EmbeddingSet:
    """Columnar store of tagged feature vectors.

    ``vectors`` is N x dim float32; ``categories`` holds beard-area tags
    from BEARD_CATEGORIES; ``confidences`` lie in [0, 1]; vectors must be
    non-zero (they are normalized before similarity computation).
    """

    image_ids: list[str]
    subject_ids: list[str]
    demographics: list[str]
    categories: list[str]
    confidences: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.confidences = np.asarray(self.confidences, dtype=np.float32)
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        n = len(self.image_ids)
        if not (
            len(self.subject_ids) == len(self.demographics) == len(self.categories) == n
            and self.confidences.shape == (n,)
            and self.vectors.shape[0] == n
        ):
            raise InputValueError("embedding set columns have mismatched lengths")
        if self.vectors.ndim != 2:
            raise InputValueError("vectors must be a 2-d array")
        if n and (self.confidences.min() < 0 or self.confidences.max() > 1):
            raise InputValueError("confidences must lie in [0, 1]")
        if n and not np.linalg.norm(self.vectors, axis=1).all():
            raise InputValueError("zero vector in embedding set")
        for cat in self.categories:
            if cat not in BEARD_CATEGORIES:
                raise InputValueError(f"unknown beard-area category {cat!r}")

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def select(self, mask) -> "EmbeddingSet":
        idx = np.flatnonzero(mask)
        return EmbeddingSet(
            [self.image_ids[i] for i in idx],
            [self.subject_ids[i] for i in idx],
            [self.demographics[i] for i in idx],
            [self.categories[i] for i in idx],
            self.confidences[idx],
            self.vectors[idx],
        )


def save_embeddings(embeddings: EmbeddingSet, path) -> None:
    """Write the documented EMB1 binary format."""
    with open(path, "wb") as fh:
        fh.write(b"EMB1")
        fh.write(struct.pack("<II", len(embeddings), embeddings.dim))
        for i in range(len(embeddings)):
            for text in (embeddings.image_ids[i], embeddings.subject_ids[i]):
                raw = text.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise InputValueError(f"id too long: {text[:32]!r}...")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            fh.write(
                struct.pack(
                    "<BBf",
                    _demographic_code(embeddings.demographics[i]),
                    BEARD_CATEGORIES.index(embeddings.categories[i]),
                    float(embeddings.confidences[i]),
                )
            )
            fh.write(embeddings.vectors[i].astype("<f4").tobytes())


def load_embeddings(path) -> EmbeddingSet:
    """Read an EMB1 file, enforcing dimension and confidence constraints."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != b"EMB1":
        raise EmbeddingFormatError(f"{path}: bad magic")
    if len(data) < 12:
        raise EmbeddingFormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 4)
    offset = 12
    image_ids, subject_ids, demographics, categories = [], [], [], []
    confidences = np.empty(count, dtype=np.float32)
    vectors = np.empty((count, dim), dtype=np.float32)

    def take(n):
        nonlocal offset
        if offset + n > len(data):
            raise EmbeddingFormatError(f"{path}: truncated record {len(image_ids)}")
        chunk = data[offset : offset + n]
        offset += n
        return chunk

    for i in range(count):
        for bucket in (image_ids, subject_ids):
            (length,) = struct.unpack("<H", take(2))
            bucket.append(take(length).decode("utf-8"))
        demo_code, cat_code, conf = struct.unpack("<BBf", take(6))
        if cat_code >= len(BEARD_CATEGORIES):
            raise EmbeddingFormatError(f"{path}: record {i}: bad category code {cat_code}")
        if not 0.0 <= conf <= 1.0:
            raise EmbeddingFormatError(f"{path}: record {i}: confidence {conf} out of range")
        demographics.append(_demographic_name(demo_code))
        categories.append(BEARD_CATEGORIES[cat_code])
        confidences[i] = conf
        vectors[i] = np.frombuffer(take(dim * 4), dtype="<f4")
    if offset != len(data):
        raise EmbeddingFormatError(f"{path}: trailing bytes after last record")
    return EmbeddingSet(image_ids, subject_ids, demographics, categories, confidences, vectors)


def filter_high_confidence(embeddings: EmbeddingSet, min_conf: float) -> EmbeddingSet:
    """Keep records whose category confidence is >= min_conf."""
    if not 0.0 <= min_conf <= 1.0:
        raise InputValueError("min_conf must lie in [0, 1]")
    return embeddings.select(embeddings.confidences >= min_conf)


def _canonical_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass
class PairScores:
    """Genuine and impostor cosine-score streams keyed by pair category."""

    demographic: str
    genuine: dict
    impostor: dict

    def stream(self, tag: str, category: tuple[str, str]) -> np.ndarray:
        table = self.genuine if tag == "genuine" else self.impostor
        return table.get(category, np.empty(0))

    def n_pairs(self) -> int:
        return sum(len(v) for v in self.genuine.values()) + sum(
            len(v) for v in self.impostor.values()
        )


def pair_scores(embeddings: EmbeddingSet, demographic: str, threads: int = 1) -> PairScores:
    """Enumerate every unordered within-demographic pair exactly once.

    Cosine similarity is computed on normalized vectors; pairs of the same
    subject id feed the genuine streams, others the impostor streams, each
    keyed by the unordered pair of beard-area categories.  Blocks of rows
    may be processed on ``threads`` workers; results are merged in block
    order, so the output is independent of the worker count.
    """
    subset = embeddings.select([d == demographic for d in embeddings.demographics])
    n = len(subset)
    if n < 2:
        raise InputValueError(
            f"demographic {demographic!r} has {n} record(s); need at least 2"
        )
    vectors = subset.vectors.astype(np.float64)
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    subjects = np.asarray(subset.subject_ids)
    cat_codes = np.asarray([BEARD_CATEGORIES.index(c) for c in subset.categories])
    n_cats = len(BEARD_CATEGORIES)
    # unordered category pair -> dense bucket index, via a lookup table
    pair_index = {}
    bucket_table = np.zeros((n_cats, n_cats), dtype=np.int64)
    for a in range(n_cats):
        for b in range(a, n_cats):
            pair_index[(a, b)] = len(pair_index)
            bucket_table[a, b] = bucket_table[b, a] = pair_index[(a, b)]

    block = 512

    def process(start):
        stop = min(start + block, n)
        sims = vectors[start:stop] @ vectors.T  # (b, n)
        genuine_buckets = [[] for _ in pair_index]
        impostor_buckets = [[] for _ in pair_index]
        for local in range(stop - start):
            i = start + local
            if i + 1 >= n:
                continue
            sim_row = sims[local, i + 1 :]
            same = subjects[i + 1 :] == subjects[i]
            bucket_ids = bucket_table[cat_codes[i], cat_codes[i + 1 :]]
            for bucket_id in range(len(pair_index)):
                mask = bucket_ids == bucket_id
                if not mask.any():
                    continue
                genuine_buckets[bucket_id].append(sim_row[mask & same])
                impostor_buckets[bucket_id].append(sim_row[mask & ~same])
        return genuine_buckets, impostor_buckets

    starts = list(range(0, n, block))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(process, starts))
    else:
        results = [process(s) for s in starts]

    genuine, impostor = {}, {}
    for (a, b), bucket_id in pair_index.items():
        key = (BEARD_CATEGORIES[a], BEARD_CATEGORIES[b])
        key = _canonical_pair(*key)
        g = [chunk for res in results for chunk in res[0][bucket_id]]
        m = [chunk for res in results for chunk in res[1][bucket_id]]
        g = np.concatenate(g) if g else np.empty(0)
        m = np.concatenate(m) if m else np.empty(0)
        if len(g):
            genuine[key] = g
        if len(m):
            impostor[key] = m
    return PairScores(demographic, genuine, impostor)


@dataclass
class CalibrationResult:
    threshold: float
    achieved_fmr: float
    n_scores: int


def calibrate_threshold(impostor_scores, target_fmr: float) -> CalibrationResult:
    """Smallest score value whose at-or-above fraction is <= target_fmr.

    Requires at least 1/target_fmr scores.  With heavily tied scores the
    target may be unreachable at any observed value; that raises
    CalibrationError rather than silently over- or under-shooting.
    """
    scores = np.sort(np.asarray(impostor_scores, dtype=np.float64))
    n = scores.size
    if target_fmr <= 0 or target_fmr > 1:
        raise InputValueError("target_fmr must lie in (0, 1]")
    if n < 1.0 / target_fmr:
        raise InputValueError(
            f"{n} impostor scores cannot resolve a {target_fmr:g} false-match rate"
        )
    allowed = int(np.floor(target_fmr * n))
    idx = n - allowed
    if idx <= 0:
        threshold_pos = 0
    elif scores[idx] != scores[idx - 1]:
        threshold_pos = idx
    else:
        threshold_pos = int(np.searchsorted(scores, scores[idx], side="right"))
        if threshold_pos >= n:
            raise CalibrationError(
                "tied scores make the target false-match rate unreachable"
            )
    threshold = float(scores[threshold_pos])
    first = int(np.searchsorted(scores, threshold, side="left"))
    return CalibrationResult(threshold, (n - first) / n, n)


@dataclass
class FmrReport:
    """Per-demographic, per-pair-category false-match rates.

    ``entries`` maps demographic -> pair category -> (n_pairs, fmr); fmr is
    None for empty categories.
    """

    threshold: float
    target_fmr: float
    reference_demographic: str
    entries: dict

    def to_dict(self) -> dict:
        out = {
            "threshold": self.threshold,
            "target_fmr": self.target_fmr,
            "reference_demographic": self.reference_demographic,
            "demographics": {},
        }
        for demo, rows in self.entries.items():
            out["demographics"][demo] = {
                f"{a},{b}": {"n_pairs": n, "fmr": fmr} for (a, b), (n, fmr) in rows.items()
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        """Aligned text table: one row per pair category, demographics across."""
        demos = list(self.entries)
        header = f"{'pair':<12}"
        for demo in demos:
            header += f"{demo + ' N_pairs':>16}{demo + ' FMR':>12}"
        lines = [
            f"threshold {self.threshold:.6f} "
            f"(target FMR {self.target_fmr:g} on {self.reference_demographic})",
            header,
            "-" * len(header),
        ]
        for cat in PAIR_CATEGORIES:
            row = f"({cat[0]},{cat[1]})"
            line = f"{row:<12}"
            for demo in demos:
                n, fmr = self.entries[demo].get(cat, (0, None))
                line += f"{n:>16,}" + (f"{fmr:>12.4f}" if fmr is not None else f"{'-':>12}")
            lines.append(line)
        return "\n".join(lines)


def fmr_by_category(
    impostors_by_demographic: dict,
    threshold: float,
    reference_demographic: str,
    target_fmr: float,
) -> FmrReport:
    """Count impostor scores at or above one shared threshold per category.

    ``impostors_by_demographic`` maps demographic -> pair category ->
    impostor score array (as produced by pair_scores).  Categories with no
    pairs are reported with count 0 and no rate.
    """
    entries = {}
    for demo, streams in impostors_by_demographic.items():
        rows = {}
        for cat in PAIR_CATEGORIES:
            scores = streams.get(cat)
            if scores is None or len(scores) == 0:
                rows[cat] = (0, None)
            else:
                rows[cat] = (int(len(scores)), float((scores >= threshold).mean()))
        entries[demo] = rows
    return FmrReport(threshold, target_fmr, reference_demographic, entries)


def distribution_histograms(pairs: PairScores, bins: int) -> dict:
    """Histogram every (tag, category) stream over [-1, 1].

    Returns ``(tag, category) -> (edges, counts)``; bin totals equal stream
    lengths.  Scores are clipped to [-1, 1] to absorb floating-point spill
    from the cosine computation.
    """
    if bins < 2:
        raise InputValueError("need at least 2 bins")
    out = {}
    for tag, table in (("genuine", pairs.genuine), ("impostor", pairs.impostor)):
        for cat, scores in table.items():
            counts, edges = np.histogram(np.clip(scores, -1.0, 1.0), bins=bins, range=(-1.0, 1.0))
            out[(tag, cat)] = (edges, counts)
    return out


def write_histogram_csv(path, edges, counts) -> None:
    """Write one histogram as comma-separated (bin_low, bin_high, count)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo:.6f},{hi:.6f},{int(c)}\n")


def generate_embeddings(
    n_subjects: int,
    images_per_subject: int,
    dim: int = 32,
    seed: int = 0,
    demographics=DEMOGRAPHIC_NAMES,
    within_subject_noise: float = 0.35,
) -> EmbeddingSet:
    """Synthesize a clustered embedding set for demos and tests.

    Each subject gets a random unit base vector, a demographic, and a
    beard-area category; its images scatter around the base with the given
    noise and carry confidences in [0.5, 1].
    """
    rng = np.random.default_rng(seed)
    image_ids, subject_ids, demo_tags, categories = [], [], [], []
    confidences = []
    vectors = []
    for s in range(n_subjects):
        base = rng.standard_normal(dim)
        base /= np.linalg.norm(base)
        demo = demographics[int(rng.integers(len(demographics)))]
        cat = BEARD_CATEGORIES[int(rng.integers(len(BEARD_CATEGORIES)))]
        for i in range(images_per_subject):
            vec = base + within_subject_noise * rng.standard_normal(dim)
            image_ids.append(f"s{s:04d}-i{i:02d}")
            subject_ids.append(f"s{s:04d}")
            demo_tags.append(demo)
            categories.append(cat)
            confidences.append(rng.uniform(0.5, 1.0))
            vectors.append(vec)
    return EmbeddingSet(
        image_ids,
        subject_ids,
        demo_tags,
        categories,
        np.asarray(confidences, dtype=np.float32),
        np.asarray(vectors, dtype=np.float32),
    )
