import numpy as np
import pytest

from attrlogic.audit import BinaryMatrix
from attrlogic.errors import DimensionMismatchError
from attrlogic.metrics import attribute_accuracy, consistency_enforced_accuracy
from attrlogic.schema import fh37k_default

from bruteforce import brute_force_verdict, random_binary_rows


@pytest.fixture(scope="module")
def fh37k():
    return fh37k_default()


def _bm(values):
    values = np.asarray(values)
    return BinaryMatrix([f"r{i}" for i in range(values.shape[0])], values)


def consistent_rows(fh37k, n):
    patterns = [
        ("clean_shaven", "mustache_none", "sideburns_none", "bald_false"),
        ("chin_area", "short", "mustache_none", "sideburns_none", "bald_false"),
        ("side_to_side", "long", "mustache_connected", "sideburns_connected", "bald_top"),
    ]
    rows = np.zeros((n, 22), dtype=np.int8)
    for i in range(n):
        for attr in patterns[i % len(patterns)]:
            rows[i, fh37k.index_of(attr)] = 1
    return rows


class TestPlainAccuracy:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(0)
        labels = _bm(random_binary_rows(rng, 20, 6))
        report = attribute_accuracy(labels, labels)
        assert report.acc_avg == 1.0
        assert report.acc_avg_p == 1.0
        assert report.acc_avg_n == 1.0

    def test_complemented_predictions(self):
        rng = np.random.default_rng(1)
        labels = random_binary_rows(rng, 20, 6)
        report = attribute_accuracy(_bm(1 - labels), _bm(labels))
        assert report.acc_avg == 0.0
        assert report.acc_avg_p == 0.0
        assert report.acc_avg_n == 0.0

    def test_matches_confusion_count_oracle(self):
        rng = np.random.default_rng(2)
        preds = random_binary_rows(rng, 50, 5)
        labels = random_binary_rows(rng, 50, 5)
        report = attribute_accuracy(_bm(preds), _bm(labels))
        for k in range(5):
            correct = pos_correct = neg_correct = pos = neg = 0
            for i in range(50):
                match = preds[i, k] == labels[i, k]
                correct += match
                if labels[i, k] == 1:
                    pos += 1
                    pos_correct += match
                else:
                    neg += 1
                    neg_correct += match
            assert report.accuracy[k] == pytest.approx(correct / 50, abs=1e-12)
            if pos:
                assert report.positive_accuracy[k] == pytest.approx(pos_correct / pos, abs=1e-12)
            if neg:
                assert report.negative_accuracy[k] == pytest.approx(neg_correct / neg, abs=1e-12)

    def test_aggregate_is_mean_of_per_attribute(self):
        rng = np.random.default_rng(3)
        report = attribute_accuracy(
            _bm(random_binary_rows(rng, 40, 7)), _bm(random_binary_rows(rng, 40, 7))
        )
        assert report.acc_avg == pytest.approx(float(np.mean(report.accuracy)), abs=1e-12)

    def test_empty_denominator_skipped(self):
        labels = np.zeros((10, 3), dtype=np.int8)  # no positive sample anywhere
        preds = np.zeros((10, 3), dtype=np.int8)
        report = attribute_accuracy(_bm(preds), _bm(labels))
        assert np.isnan(report.positive_accuracy).all()
        assert report.acc_avg_n == 1.0
        assert report.acc_avg == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            attribute_accuracy(_bm(np.zeros((2, 3), dtype=int)), _bm(np.zeros((2, 4), dtype=int)))


class TestConsistencyEnforced:
    def test_all_consistent_equals_plain(self, fh37k):
        rows = consistent_rows(fh37k, 12)
        rng = np.random.default_rng(4)
        labels = rows.copy()
        flips = rng.integers(0, 22, 12)
        for i, j in enumerate(flips):
            labels[i, j] ^= 1  # imperfect labels, predictions stay consistent
        plain = attribute_accuracy(_bm(rows), _bm(labels))
        enforced = consistency_enforced_accuracy(fh37k, _bm(rows), _bm(labels))
        np.testing.assert_array_equal(plain.accuracy, enforced.accuracy)
        assert plain.acc_avg == enforced.acc_avg

    def test_all_inconsistent_scores_zero(self, fh37k):
        preds = np.zeros((6, 22), dtype=np.int8)  # every group empty
        labels = consistent_rows(fh37k, 6)
        report = consistency_enforced_accuracy(fh37k, _bm(preds), _bm(labels))
        assert report.acc_avg == 0.0

    def test_mixed_batch_matches_oracle(self, fh37k):
        rng = np.random.default_rng(5)
        preds = np.vstack([consistent_rows(fh37k, 8), random_binary_rows(rng, 8, 22)])
        labels = random_binary_rows(rng, 16, 22)
        report = consistency_enforced_accuracy(fh37k, _bm(preds), _bm(labels))
        correct = (preds == labels).astype(float)
        for i in range(16):
            if brute_force_verdict(fh37k, preds[i])[0] != "consistent":
                correct[i, :] = 0.0
        np.testing.assert_allclose(report.accuracy, correct.mean(axis=0), atol=1e-12)

    def test_never_exceeds_plain_accuracy(self, fh37k):
        rng = np.random.default_rng(6)
        for _ in range(10):
            preds = random_binary_rows(rng, 30, 22, p=rng.uniform(0.1, 0.5))
            labels = random_binary_rows(rng, 30, 22, p=0.25)
            plain = attribute_accuracy(_bm(preds), _bm(labels))
            enforced = consistency_enforced_accuracy(fh37k, _bm(preds), _bm(labels))
            mask = ~np.isnan(plain.accuracy)
            assert (enforced.accuracy[mask] <= plain.accuracy[mask] + 1e-12).all()
            assert enforced.acc_avg <= plain.acc_avg + 1e-12


class TestRendering:
    def test_json_and_table(self, fh37k):
        rows = consistent_rows(fh37k, 6)
        report = consistency_enforced_accuracy(fh37k, _bm(rows), _bm(rows))
        data = report.to_dict()
        assert data["mode"] == "consistency_enforced"
        assert set(data["per_attribute"]) == set(fh37k.attributes)
        table = report.to_table()
        assert "clean_shaven" in table
        assert "average" in table
        # one line per attribute plus header, two rules, and the average row
        assert len(table.splitlines()) == 22 + 4
