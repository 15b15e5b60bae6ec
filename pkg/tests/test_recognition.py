import itertools
import math
import struct

import numpy as np
import pytest

from attrlogic.errors import InputValueError
from attrlogic.recognition import (
    BEARD_CATEGORIES,
    PAIR_CATEGORIES,
    CalibrationError,
    EmbeddingFormatError,
    EmbeddingSet,
    calibrate_threshold,
    distribution_histograms,
    filter_high_confidence,
    fmr_by_category,
    generate_embeddings,
    load_embeddings,
    pair_scores,
    save_embeddings,
    write_histogram_csv,
)


def small_set():
    vectors = np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ],
        dtype=np.float32,
    )
    return EmbeddingSet(
        image_ids=["x-0", "x-1", "y-0"],
        subject_ids=["x", "x", "y"],
        demographics=["WM", "WM", "WM"],
        categories=["CS", "CA", "CS"],
        confidences=np.array([1.0, 0.8, 0.95], dtype=np.float32),
        vectors=vectors,
    )


def brute_force_pairs(embeddings, demographic):
    """O(n^2) enumeration: multiset of (tag, category pair, rounded score)."""
    idx = [i for i, d in enumerate(embeddings.demographics) if d == demographic]
    out = []
    for i, j in itertools.combinations(idx, 2):
        a = embeddings.vectors[i].astype(np.float64)
        b = embeddings.vectors[j].astype(np.float64)
        score = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        tag = "genuine" if embeddings.subject_ids[i] == embeddings.subject_ids[j] else "impostor"
        cat = tuple(sorted((embeddings.categories[i], embeddings.categories[j])))
        out.append((tag, cat, round(score, 9)))
    return sorted(out)


class TestEmbeddingIO:
    def test_small_file_roundtrip(self, tmp_path):
        path = tmp_path / "e.emb"
        save_embeddings(small_set(), path)
        loaded = load_embeddings(path)
        assert len(loaded) == 3
        assert loaded.dim == 4
        assert loaded.image_ids == ["x-0", "x-1", "y-0"]
        assert loaded.categories == ["CS", "CA", "CS"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"XXXX" + b"\x00" * 8)
        with pytest.raises(EmbeddingFormatError):
            load_embeddings(path)

    def test_random_set_roundtrip(self, tmp_path):
        embeddings = generate_embeddings(n_subjects=12, images_per_subject=3, dim=9, seed=4)
        path = tmp_path / "r.emb"
        save_embeddings(embeddings, path)
        loaded = load_embeddings(path)
        assert loaded.image_ids == embeddings.image_ids
        assert loaded.subject_ids == embeddings.subject_ids
        assert loaded.demographics == embeddings.demographics
        assert loaded.categories == embeddings.categories
        assert np.array_equal(loaded.confidences, embeddings.confidences)
        assert np.array_equal(loaded.vectors, embeddings.vectors)

    def test_truncated_record(self, tmp_path):
        path = tmp_path / "t.emb"
        save_embeddings(small_set(), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(EmbeddingFormatError):
            load_embeddings(path)

    def test_confidence_out_of_range(self, tmp_path):
        path = tmp_path / "c.emb"
        payload = b"EMB1" + struct.pack("<II", 1, 2)
        payload += struct.pack("<H", 1) + b"a" + struct.pack("<H", 1) + b"s"
        payload += struct.pack("<BBf", 0, 0, 1.5) + struct.pack("<ff", 1.0, 0.0)
        path.write_bytes(payload)
        with pytest.raises(EmbeddingFormatError):
            load_embeddings(path)

    def test_zero_vector_rejected(self):
        with pytest.raises(InputValueError):
            EmbeddingSet(["a"], ["s"], ["WM"], ["CS"], np.array([1.0]), np.zeros((1, 3)))


class TestFilter:
    def test_min_conf_zero_is_identity(self):
        embeddings = small_set()
        assert len(filter_high_confidence(embeddings, 0.0)) == len(embeddings)

    def test_min_conf_one_keeps_only_full_confidence(self):
        kept = filter_high_confidence(small_set(), 1.0)
        assert kept.image_ids == ["x-0"]

    def test_out_of_range_rejected(self):
        with pytest.raises(InputValueError):
            filter_high_confidence(small_set(), 1.0 + 1e-9)

    def test_counting_oracle(self):
        embeddings = generate_embeddings(n_subjects=30, images_per_subject=2, dim=5, seed=1)
        for min_conf in (0.5, 0.7, 0.9):
            kept = filter_high_confidence(embeddings, min_conf)
            expected = sum(1 for c in embeddings.confidences if c >= min_conf)
            assert len(kept) == expected


class TestPairScores:
    def test_identical_vectors_have_similarity_one(self):
        pairs = pair_scores(small_set(), "WM")
        impostor_cs = pairs.impostor[("CS", "CS")]
        assert impostor_cs.tolist() == pytest.approx([1.0])

    def test_orthogonal_vectors_have_similarity_zero(self):
        pairs = pair_scores(small_set(), "WM")
        genuine = pairs.genuine[("CA", "CS")]
        assert genuine.tolist() == pytest.approx([0.0])

    def test_matches_full_enumeration(self):
        embeddings = generate_embeddings(n_subjects=8, images_per_subject=3, dim=6, seed=3)
        demographic = embeddings.demographics[0]
        pairs = pair_scores(embeddings, demographic)
        actual = []
        for table, tag in ((pairs.genuine, "genuine"), (pairs.impostor, "impostor")):
            for cat, scores in table.items():
                actual.extend((tag, cat, round(float(v), 9)) for v in scores)
        assert sorted(actual) == brute_force_pairs(embeddings, demographic)

    def test_streams_partition_all_pairs(self):
        embeddings = generate_embeddings(n_subjects=10, images_per_subject=2, dim=4, seed=9)
        for demographic in set(embeddings.demographics):
            n = sum(1 for d in embeddings.demographics if d == demographic)
            if n < 2:
                continue
            pairs = pair_scores(embeddings, demographic)
            assert pairs.n_pairs() == n * (n - 1) // 2

    def test_threaded_equals_serial(self):
        embeddings = generate_embeddings(n_subjects=40, images_per_subject=3, dim=8, seed=5)
        demographic = embeddings.demographics[0]
        serial = pair_scores(embeddings, demographic, threads=1)
        threaded = pair_scores(embeddings, demographic, threads=4)
        assert sorted(serial.genuine) == sorted(threaded.genuine)
        for cat in serial.genuine:
            assert np.array_equal(serial.genuine[cat], threaded.genuine[cat])
        for cat in serial.impostor:
            assert np.array_equal(serial.impostor[cat], threaded.impostor[cat])

    def test_cosine_bounded(self):
        embeddings = generate_embeddings(n_subjects=15, images_per_subject=2, dim=5, seed=6)
        demographic = embeddings.demographics[0]
        pairs = pair_scores(embeddings, demographic)
        for table in (pairs.genuine, pairs.impostor):
            for scores in table.values():
                assert (scores <= 1.0 + 1e-9).all() and (scores >= -1.0 - 1e-9).all()

    def test_demographic_too_small(self):
        with pytest.raises(InputValueError):
            pair_scores(small_set(), "AM")


class TestCalibration:
    def test_ten_thousand_distinct_scores(self):
        rng = np.random.default_rng(0)
        scores = rng.permutation(np.linspace(-0.9, 0.9, 10_000))
        result = calibrate_threshold(scores, 1e-4)
        assert int((scores >= result.threshold).sum()) == 1
        assert result.achieved_fmr == pytest.approx(1e-4)

    def test_target_one_keeps_everything(self):
        scores = np.array([0.3, -0.1, 0.5, 0.2])
        result = calibrate_threshold(scores, 1.0)
        assert result.threshold <= scores.min()
        assert result.achieved_fmr == 1.0

    def test_recount_within_one_quantization_step(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(-1, 1, 50_000)
        target = 1e-4
        result = calibrate_threshold(scores, target)
        achieved = float((scores >= result.threshold).mean())
        assert achieved == pytest.approx(result.achieved_fmr, abs=1e-12)
        assert achieved <= target
        assert achieved > target - 1.0 / scores.size

    def test_insufficient_scores(self):
        with pytest.raises(InputValueError):
            calibrate_threshold(np.linspace(0, 1, 100), 1e-4)

    def test_all_tied_scores_unreachable(self):
        with pytest.raises(CalibrationError):
            calibrate_threshold(np.full(100, 0.5), 0.5)

    def test_fmr_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(-1, 1, 5_000)
        fmrs = [float((scores >= t).mean()) for t in np.linspace(-1, 1, 21)]
        assert all(a >= b for a, b in zip(fmrs, fmrs[1:]))


class TestFmrReport:
    def test_matches_bruteforce_on_synthetic_identities(self):
        embeddings = generate_embeddings(n_subjects=200, images_per_subject=4, dim=16, seed=8)
        kept = filter_high_confidence(embeddings, 0.6)
        demos = sorted(set(kept.demographics))
        tables = {d: pair_scores(kept, d) for d in demos}
        threshold = 0.5
        report = fmr_by_category(
            {d: t.impostor for d, t in tables.items()}, threshold, "WM", 1e-4
        )
        for demo in demos:
            expected = {}
            for tag, cat, score in brute_force_pairs(kept, demo):
                if tag != "impostor":
                    continue
                n, hits = expected.get(cat, (0, 0))
                expected[cat] = (n + 1, hits + (score >= threshold))
            for cat in PAIR_CATEGORIES:
                n, fmr = report.entries[demo][cat]
                if cat not in expected:
                    assert (n, fmr) == (0, None)
                else:
                    exp_n, exp_hits = expected[cat]
                    assert n == exp_n
                    assert fmr == pytest.approx(exp_hits / exp_n, abs=1e-12)

    def test_threshold_above_max_gives_zero(self):
        embeddings = generate_embeddings(n_subjects=10, images_per_subject=2, dim=4, seed=2)
        demo = embeddings.demographics[0]
        pairs = pair_scores(embeddings, demo)
        report = fmr_by_category({demo: pairs.impostor}, 2.0, demo, 1e-4)
        for n, fmr in report.entries[demo].values():
            assert fmr in (None, 0.0)

    def test_published_row_renders_as_format_fixture(self):
        entries = {
            "WM": {cat: (0, None) for cat in PAIR_CATEGORIES},
            "AM": {cat: (0, None) for cat in PAIR_CATEGORIES},
        }
        entries["WM"][("CA", "CA")] = (6_716_047, 0.0142)
        entries["AM"][("CA", "CA")] = (1_833_490, 0.0558)
        from attrlogic.recognition import FmrReport

        report = FmrReport(0.37, 1e-4, "WM", entries)
        table = report.to_table()
        assert "6,716,047" in table
        assert "0.0142" in table
        for cat in PAIR_CATEGORIES:
            assert f"({cat[0]},{cat[1]})" in table
        data = report.to_dict()
        assert data["demographics"]["WM"]["CA,CA"]["n_pairs"] == 6_716_047
        second_matcher = FmrReport(0.41, 1e-4, "WM", {
            "WM": {("CA", "CA"): (6_716_047, 0.0176)},
        })
        assert "0.0176" in second_matcher.to_table()


class TestHistograms:
    def test_all_scores_at_one_fill_top_bin(self):
        from attrlogic.recognition import PairScores

        pairs = PairScores("WM", {}, {("CS", "CS"): np.ones(7)})
        hists = distribution_histograms(pairs, 10)
        edges, counts = hists[("impostor", ("CS", "CS"))]
        assert counts[-1] == 7
        assert counts[:-1].sum() == 0

    def test_totals_equal_stream_lengths(self):
        embeddings = generate_embeddings(n_subjects=12, images_per_subject=3, dim=6, seed=7)
        demo = embeddings.demographics[0]
        pairs = pair_scores(embeddings, demo)
        hists = distribution_histograms(pairs, 16)
        for (tag, cat), (_, counts) in hists.items():
            table = pairs.genuine if tag == "genuine" else pairs.impostor
            assert counts.sum() == len(table[cat])

    def test_uniform_scores_within_binomial_bound(self):
        from attrlogic.recognition import PairScores

        rng = np.random.default_rng(10)
        n, bins = 200_000, 20
        pairs = PairScores("WM", {}, {("CS", "CS"): rng.uniform(-1, 1, n)})
        hists = distribution_histograms(pairs, bins)
        _, counts = hists[("impostor", ("CS", "CS"))]
        expected = n / bins
        sigma = math.sqrt(n * (1 / bins) * (1 - 1 / bins))
        assert (np.abs(counts - expected) <= 5 * sigma).all()

    def test_too_few_bins_rejected(self):
        from attrlogic.recognition import PairScores

        with pytest.raises(InputValueError):
            distribution_histograms(PairScores("WM", {}, {}), 1)

    def test_csv_rendering(self, tmp_path):
        edges = np.array([-1.0, 0.0, 1.0])
        counts = np.array([3, 4])
        path = tmp_path / "h.csv"
        write_histogram_csv(path, edges, counts)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_low,bin_high,count"
        assert lines[1].endswith(",3") and lines[2].endswith(",4")
