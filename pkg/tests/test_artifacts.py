import numpy as np
import pytest
import scipy.sparse as sp

from src.matrix import EmbeddingTable, Provenance, SimilarityMatrix, from_arrays
from src.models import ParseError
from utils.artifact_utils import (
    describe_artifact,
    read_embeddings,
    read_id_map,
    read_interactions,
    read_similarity,
    sha256_file,
    write_embeddings,
    write_id_map,
    write_interactions,
    write_similarity,
    write_yaml,
)


@pytest.fixture
def augmented():
    provenance = np.array([Provenance.OBSERVED, Provenance.PSEUDO_S2D, Provenance.OBSERVED, Provenance.PSEUDO_D2S],
                          dtype=np.int8)
    return from_arrays([0, 0, 1, 2], [1, 3, 0, 2], [1.0, 0.3, 1.0, 1.0], 3, 4, provenance)


@pytest.fixture
def similarity():
    dense = np.array([[0.0, 0.5, 0.0], [0.25, 0.0, -0.1], [0.0, 0.7, 0.0]])
    return SimilarityMatrix(sp.csc_matrix(dense))


class TestInteractions:

    def test_provenance_and_weights_survive(self, tmp_path, augmented):
        path = write_interactions(tmp_path / "r_hat.tsv", augmented)
        loaded = read_interactions(path)
        assert loaded.shape == (3, 4)
        for a, b in zip(loaded.to_records(), augmented.to_records()):
            np.testing.assert_array_equal(a, b)
        assert path.read_text().splitlines()[0] == "# 3 4 4"

    def test_deterministic_bytes(self, tmp_path, augmented):
        a = write_interactions(tmp_path / "a.tsv", augmented)
        b = write_interactions(tmp_path / "b.tsv", augmented)
        assert sha256_file(a) == sha256_file(b)

    def test_entry_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("# 2 2 2\n0\t1\t1.0\tobserved\n")
        with pytest.raises(ParseError):
            read_interactions(path)

    def test_unknown_provenance(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("# 2 2 1\n0\t1\t1.0\tguessed\n")
        with pytest.raises(ParseError) as info:
            read_interactions(path)
        assert info.value.line_number == 2


class TestBinaryContainers:

    def test_similarity(self, tmp_path, similarity):
        loaded = read_similarity(write_similarity(tmp_path / "S.bin", similarity))
        np.testing.assert_array_equal(loaded.to_dense(), similarity.to_dense())

    def test_embeddings_are_float32(self, tmp_path):
        rng = np.random.default_rng(0)
        E = EmbeddingTable(rng.normal(size=(3, 2)), rng.normal(size=(5, 2)))
        loaded = read_embeddings(write_embeddings(tmp_path / "E.bin", E))
        rounded = E.rounded()
        np.testing.assert_array_equal(loaded.user_matrix, rounded.user_matrix)
        np.testing.assert_array_equal(loaded.item_matrix, rounded.item_matrix)

    def test_bad_magic(self, tmp_path, similarity):
        path = write_similarity(tmp_path / "S.bin", similarity)
        with pytest.raises(ParseError):
            read_embeddings(path)

    def test_truncated(self, tmp_path, similarity):
        path = write_similarity(tmp_path / "S.bin", similarity)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ParseError):
            read_similarity(path)


class TestIdMapAndDescribe:

    def test_id_map(self, tmp_path):
        path = write_id_map(tmp_path / "users.tsv", ["u7", "u3", "u9"])
        assert read_id_map(path) == ["u7", "u3", "u9"]

    def test_describe_each_kind(self, tmp_path, augmented, similarity):
        info = describe_artifact(write_interactions(tmp_path / "r.tsv", augmented))
        assert info["type"] == "interactions"
        assert info["provenance"] == {"observed": 2, "pseudo_s2d": 1, "pseudo_d2s": 1}

        info = describe_artifact(write_similarity(tmp_path / "S.bin", similarity))
        assert info["type"] == "similarity"
        assert info["nnz"] == 4
        assert info["nnz_per_column"]["max"] == 2

        info = describe_artifact(write_yaml(tmp_path / "m.yaml", {"beta": 1.0, "views": {}}))
        assert info == {**info, "type": "yaml", "keys": ["beta", "views"]}

    def test_describe_unknown(self, tmp_path):
        path = tmp_path / "notes.bin"
        path.write_bytes(b"\x00\x01\x02\x03")
        with pytest.raises(ParseError):
            describe_artifact(path)
