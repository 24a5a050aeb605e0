"""DDI and DDS graph construction, symmetric normalization, matrix powers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import ContractError, SparseMatrix
from .data import ATTRIBUTES, DataError, Dataset, similarity_matrix


@dataclass
class MultiRelAdjacency:
    matrices: list[SparseMatrix]
    relation_counts: np.ndarray

    @property
    def n_relations(self) -> int:
        return len(self.matrices)

    @property
    def n_drugs(self) -> int:
        return len(self.relation_counts)


def build_ddi_adjacency(train_ddis: Iterable[tuple[int, int, int]], n_drugs: int, n_relations: int) -> MultiRelAdjacency:
    edges: list[set[tuple[int, int]]] = [set() for _ in range(n_relations)]
    for i, j, r in train_ddis:
        if i == j:
            raise DataError(f"self-interaction ({i}, {i}) under relation {r}")
        if not (0 <= i < n_drugs and 0 <= j < n_drugs and 0 <= r < n_relations):
            raise DataError(f"DDI ({i}, {j}, {r}) out of range for N={n_drugs}, R={n_relations}")
        edges[r].add((i, j))
        edges[r].add((j, i))
    counts = np.zeros(n_drugs, dtype=np.int64)
    mats = []
    for e in edges:
        touched = {i for i, _ in e}
        for i in touched:
            counts[i] += 1
        mats.append(SparseMatrix(n_drugs, n_drugs, ((i, j, 1.0) for i, j in e)))
    return MultiRelAdjacency(mats, counts)


def _check_symmetric_nonneg(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if (a < 0).any():
        raise ContractError("adjacency has negative entries")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ContractError("adjacency is not symmetric")


def normalize_adjacency(a):
    """D^{-1/2} A D^{-1/2}; rows/columns of zero-degree nodes become zero.

    Accepts a dense array or a :class:`SparseMatrix` and returns the same kind.
    """
    if isinstance(a, SparseMatrix):
        dense = a.to_dense()
        _check_symmetric_nonneg(dense)
        deg = dense.sum(axis=1)
        scaled = []
        for r, c, w in a.entries:
            d = deg[r] * deg[c]
            scaled.append((r, c, w / np.sqrt(d) if d > 0 else 0.0))
        return SparseMatrix(a.rows, a.cols, scaled)
    a = np.asarray(a, dtype=np.float64)
    _check_symmetric_nonneg(a)
    deg = a.sum(axis=1)
    scale = np.sqrt(np.outer(deg, deg))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(scale > 0, a / np.where(scale > 0, scale, 1.0), 0.0)


def matrix_power(a: np.ndarray, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError(f"power must be nonnegative, got {n}")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"matrix_power needs a square matrix, got {a.shape}")
    out = np.eye(a.shape[0])
    for _ in range(n):
        out = out @ a
    return out


@dataclass
class NormalizedAdjacency:
    matrix: np.ndarray
    _powers: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @classmethod
    def from_raw(cls, a: np.ndarray) -> "NormalizedAdjacency":
        return cls(normalize_adjacency(a))

    def power(self, n: int) -> np.ndarray:
        if n not in self._powers:
            self._powers[n] = matrix_power(self.matrix, n)
        return self._powers[n]


@dataclass
class SimilarityAdjacency:
    substructure: np.ndarray
    enzyme: np.ndarray
    target: np.ndarray

    def matrices(self) -> list[np.ndarray]:
        return [self.substructure, self.enzyme, self.target]

    def normalized(self) -> list[NormalizedAdjacency]:
        return [NormalizedAdjacency.from_raw(m) for m in self.matrices()]


def build_dds_adjacency(dataset: Dataset) -> SimilarityAdjacency:
    return SimilarityAdjacency(*(similarity_matrix(dataset, a) for a in ATTRIBUTES))


def dump_coo(a, path) -> None:
    """Debug dump of a matrix as 'row col weight' lines."""
    entries = a.entries if isinstance(a, SparseMatrix) else SparseMatrix.from_dense(a).entries
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, w in entries:
            fh.write(f"{r} {c} {w!r}\n")
