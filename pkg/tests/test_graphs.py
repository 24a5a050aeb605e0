import numpy as np
import pytest

from ragseco.autodiff import ContractError, SparseMatrix
from ragseco.data import DataError, Dataset, similarity_matrix
from ragseco.graphs import (
    NormalizedAdjacency,
    build_ddi_adjacency,
    build_dds_adjacency,
    dump_coo,
    matrix_power,
    normalize_adjacency,
)

from conftest import drug, random_dataset


def random_symmetric(rng, n, density=0.4, weighted=True):
    a = rng.random((n, n)) * (rng.random((n, n)) < density)
    if not weighted:
        a = (a > 0).astype(float)
    a = np.triu(a, 1)
    return a + a.T


def hand_normalized(a):
    """Element-by-element reference for D^-1/2 A D^-1/2."""
    n = a.shape[0]
    deg = [sum(a[i, k] for k in range(n)) for i in range(n)]
    out = np.zeros_like(a)
    for i in range(n):
        for j in range(n):
            if deg[i] > 0 and deg[j] > 0:
                out[i, j] = a[i, j] / np.sqrt(deg[i] * deg[j])
    return out


class TestDDIAdjacency:
    def test_empty(self):
        adj = build_ddi_adjacency([], 4, 3)
        assert all(m.nnz == 0 for m in adj.matrices)
        np.testing.assert_array_equal(adj.relation_counts, 0)

    def test_single_edge(self):
        adj = build_ddi_adjacency([(0, 1, 2)], 3, 3)
        assert adj.matrices[2].entries == [(0, 1, 1.0), (1, 0, 1.0)]
        assert adj.matrices[0].nnz == adj.matrices[1].nnz == 0
        np.testing.assert_array_equal(adj.relation_counts, [1, 1, 0])

    def test_distinct_relation_count(self):
        adj = build_ddi_adjacency([(0, 1, 0), (0, 2, 0), (0, 3, 2)], 4, 3)
        assert adj.relation_counts[0] == 2

    def test_duplicates_idempotent(self):
        a = build_ddi_adjacency([(0, 1, 1), (1, 0, 1), (0, 1, 1)], 3, 2)
        b = build_ddi_adjacency([(0, 1, 1)], 3, 2)
        assert [m.entries for m in a.matrices] == [m.entries for m in b.matrices]
        np.testing.assert_array_equal(a.relation_counts, b.relation_counts)

    def test_self_pair_rejected(self):
        with pytest.raises(DataError):
            build_ddi_adjacency([(1, 1, 0)], 3, 1)

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            build_ddi_adjacency([(0, 5, 0)], 3, 1)
        with pytest.raises(DataError):
            build_ddi_adjacency([(0, 1, 4)], 3, 2)

    @pytest.mark.parametrize("seed", range(10))
    def test_symmetric_zero_diagonal(self, seed):
        ds = random_dataset(np.random.default_rng(seed))
        adj = build_ddi_adjacency(ds.ddis, ds.n_drugs, ds.n_relations)
        for m in adj.matrices:
            d = m.to_dense()
            np.testing.assert_array_equal(d, d.T)
            assert not np.diag(d).any()

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng)
        perm = rng.permutation(ds.n_drugs)
        relabeled = [(int(perm[i]), int(perm[j]), r) for i, j, r in ds.ddis]
        a = build_ddi_adjacency(ds.ddis, ds.n_drugs, ds.n_relations)
        b = build_ddi_adjacency(relabeled, ds.n_drugs, ds.n_relations)
        p = np.eye(ds.n_drugs)[perm].T  # column perm[i] of row i
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(p @ ma.to_dense() @ p.T, mb.to_dense())
        np.testing.assert_array_equal(a.relation_counts, b.relation_counts[perm])


class TestNormalize:
    def test_two_node(self):
        np.testing.assert_array_equal(normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]])), [[0, 1], [1, 0]])

    def test_weighted_two_node(self):
        np.testing.assert_array_equal(normalize_adjacency(np.array([[0.0, 2.0], [2.0, 0.0]])), [[0, 1], [1, 0]])

    def test_isolated_node(self):
        a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        out = normalize_adjacency(a)
        assert not out[2].any() and not out[:, 2].any()

    def test_asymmetric_rejected(self):
        with pytest.raises(ContractError, match="symmetric"):
            normalize_adjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_negative_rejected(self):
        with pytest.raises(ContractError, match="negative"):
            normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    @pytest.mark.parametrize("seed", range(20))
    def test_hand_normalized_5x5(self, seed):
        a = random_symmetric(np.random.default_rng(seed), 5, density=0.6)
        assert np.abs(normalize_adjacency(a) - hand_normalized(a)).max() <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_sparse_matches_dense(self, seed):
        a = random_symmetric(np.random.default_rng(seed), 12, weighted=False)
        sparse = normalize_adjacency(SparseMatrix.from_dense(a))
        np.testing.assert_allclose(sparse.to_dense(), normalize_adjacency(a), atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_symmetric(self, seed):
        a = random_symmetric(np.random.default_rng(seed), 17)
        out = normalize_adjacency(a)
        np.testing.assert_array_equal(out, out.T)

    @pytest.mark.parametrize("scale", [1e-3, 0.5, 7.0, 1e4])
    def test_scale_invariant(self, scale):
        a = random_symmetric(np.random.default_rng(1), 15)
        np.testing.assert_allclose(normalize_adjacency(scale * a), normalize_adjacency(a), atol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_spectral_radius_at_most_one(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 31))
        a = random_symmetric(rng, n, density=rng.uniform(0.1, 0.9))
        a[np.diag_indices(n)] = rng.random(n)  # self loops, as in the similarity graphs
        eig = np.linalg.eigvalsh(normalize_adjacency(a))
        assert np.abs(eig).max() <= 1 + 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_powers_do_not_diverge(self, seed):
        rng = np.random.default_rng(seed)
        a = normalize_adjacency(random_symmetric(rng, 20))
        x = rng.normal(size=20)
        bound = np.linalg.norm(x)
        for n in range(6):
            assert np.linalg.norm(matrix_power(a, n) @ x) <= bound + 1e-9


class TestPower:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(matrix_power(np.ones((4, 4)), 0), np.eye(4))

    def test_one_is_unchanged(self):
        a = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(matrix_power(a, 1), a)

    def test_permutation_squared(self):
        np.testing.assert_array_equal(matrix_power(np.array([[0.0, 1.0], [1.0, 0.0]]), 2), np.eye(2))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            matrix_power(np.eye(2), -1)

    def test_cached(self):
        na = NormalizedAdjacency.from_raw(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert na.power(3) is na.power(3)


class TestDDS:
    def test_uniform_substructure(self):
        ds = Dataset([drug(f"D{i}", {"a", "b"}, {f"e{i}"}) for i in range(4)], [], 1)
        np.testing.assert_array_equal(build_dds_adjacency(ds).substructure, np.ones((4, 4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_feature_blocks(self, seed):
        ds = random_dataset(np.random.default_rng(seed))
        dds = build_dds_adjacency(ds)
        np.testing.assert_array_equal(dds.enzyme, similarity_matrix(ds, "enzyme"))
        n = ds.n_drugs
        for i in range(n):
            for j in range(n):
                u, v = ds.drugs[i].descriptors["enzyme"], ds.drugs[j].descriptors["enzyme"]
                expect = len(u & v) / len(u | v) if u | v else 0.0
                assert dds.enzyme[i, j] == expect

    def test_unannotated_drug_rows_zero(self):
        ds = Dataset([drug("A", {"a"}, {"e"}, {"t"}), drug("B", {"a"}, {"e"}, {"t"}), drug("C")], [], 1)
        for m in build_dds_adjacency(ds).matrices():
            assert not m[2].any() and not m[:, 2].any()
            np.testing.assert_array_equal(m, m.T)

    def test_dump(self, tmp_path):
        p = tmp_path / "a.coo"
        dump_coo(normalize_adjacency(np.array([[0.0, 2.0], [2.0, 0.0]])), p)
        assert p.read_text().splitlines() == ["0 1 1.0", "1 0 1.0"]
