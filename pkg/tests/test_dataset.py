import numpy as np
import pytest

from src.dataset import Bucket, degrees, load_dataset, popularity_buckets
from src.models import ParseError, SplitError
from tests.conftest import matrix


class TestLoadDataset:

    def test_adjacency(self, toy_dataset):
        assert toy_dataset.n_users == 6
        assert toy_dataset.n_items == 8
        assert toy_dataset.train.nnz == 18
        assert toy_dataset.test.nnz == 6
        assert toy_dataset.user_ids == [str(u) for u in range(6)]
        assert list(toy_dataset.train.row(0)) == [0, 1, 2]
        assert list(toy_dataset.test.row(0)) == [3]

    def test_statistics(self, toy_dataset):
        stats = toy_dataset.statistics()
        assert stats["interactions"] == 24
        assert stats["sparsity"] == pytest.approx(1 - 24 / 48)

    def test_overlap_rejected(self, tmp_path):
        (tmp_path / "train.txt").write_text("0 1 2\n")
        (tmp_path / "test.txt").write_text("0 2\n")
        with pytest.raises(SplitError):
            load_dataset(str(tmp_path / "train.txt"), str(tmp_path / "test.txt"))

    def test_empty_test_rejected(self, tmp_path):
        (tmp_path / "train.txt").write_text("0 1 2\n")
        (tmp_path / "test.txt").write_text("\n")
        with pytest.raises(SplitError):
            load_dataset(str(tmp_path / "train.txt"), str(tmp_path / "test.txt"))

    def test_parse_error_reports_line(self, tmp_path):
        (tmp_path / "train.txt").write_text("0 1 2\n1 x\n")
        (tmp_path / "test.txt").write_text("0 3\n")
        with pytest.raises(ParseError) as info:
            load_dataset(str(tmp_path / "train.txt"), str(tmp_path / "test.txt"))
        assert info.value.line_number == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_dataset(str(tmp_path / "nope.txt"), str(tmp_path / "test.txt"))

    def test_cold_test_users_excluded(self, tmp_path):
        (tmp_path / "train.txt").write_text("0 1 2\n")
        (tmp_path / "test.txt").write_text("0 3\n1 1\n")
        dataset = load_dataset(str(tmp_path / "train.txt"), str(tmp_path / "test.txt"))
        assert dataset.n_users == 2
        assert dataset.test.nnz == 1

    def test_triplet_with_threshold(self, tmp_path):
        (tmp_path / "train.tsv").write_text("a\tx\t5\na\ty\t2\nb\ty\t4\n")
        (tmp_path / "test.tsv").write_text("b\tx\t5\n")
        dataset = load_dataset(str(tmp_path / "train.tsv"), str(tmp_path / "test.tsv"), format="triplet",
                               rating_threshold=4)
        assert dataset.user_ids == ["a", "b"]
        assert dataset.item_ids == ["x", "y"]
        assert dataset.train.to_triplets() == [(0, 0, 1.0), (1, 1, 1.0)]

    def test_validation_split_hidden_on_test(self, tmp_path):
        (tmp_path / "train.txt").write_text("0 1 2\n")
        (tmp_path / "valid.txt").write_text("0 3\n")
        (tmp_path / "test.txt").write_text("0 4\n")
        dataset = load_dataset(str(tmp_path / "train.txt"), str(tmp_path / "test.txt"),
                               validation_path=str(tmp_path / "valid.txt"))
        assert list(dataset.known_positives("test").row(0)) == [0, 1, 2]
        assert list(dataset.known_positives("validation").row(0)) == [0, 1]

    def test_unknown_split(self, toy_dataset):
        with pytest.raises(SplitError):
            toy_dataset.split("validation")


class TestDegreesAndBuckets:

    def test_degrees(self):
        R = matrix([(0, 0), (0, 1), (1, 1), (2, 1)], 3, 3)
        D = degrees(R)
        assert D.user_degree.tolist() == [2, 1, 1]
        assert D.item_degree.tolist() == [1, 3, 0]
        assert D.total == 4

    def test_bucket_sizes(self):
        # item i has degree i + 1
        pairs = [(u, i) for i in range(20) for u in range(i + 1)]
        buckets = popularity_buckets(matrix(pairs, 20, 20))
        assert buckets.sizes() == {"unpopular": 16, "normal": 3, "popular": 1}
        assert buckets.items(Bucket.POPULAR).tolist() == [19]
        assert buckets.items(Bucket.NORMAL).tolist() == [16, 17, 18]

    def test_ties_go_to_lower_bucket_by_index(self):
        pairs = [(0, i) for i in range(20)]
        buckets = popularity_buckets(matrix(pairs, 1, 20))
        np.testing.assert_array_equal(buckets.items(Bucket.UNPOPULAR), np.arange(16))
        assert buckets.items(Bucket.POPULAR).tolist() == [19]

    def test_every_item_in_one_bucket(self, toy_dataset):
        buckets = popularity_buckets(toy_dataset.train)
        assert sum(buckets.sizes().values()) == toy_dataset.n_items
