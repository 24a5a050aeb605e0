"""Cluster-structured synthetic drug/DDI data for smoke runs and tests.

Drugs are assigned to latent clusters. Descriptor tokens and SMILES are drawn
mostly from cluster-specific pools, and the event type of an interacting pair
is a fixed symmetric function of the two clusters.
"""

from __future__ import annotations

import itertools

import numpy as np

from .data import ATTRIBUTES, Dataset, DrugRecord

_MOTIFS = ["CC(=O)O", "c1ccccc1", "N(C)C", "OCCO", "C#N", "S(=O)(=O)N", "c1ccncc1", "C(F)(F)F"]
_FILLER = ["C", "O", "N", "Cl", "Br", "=O", "c1", "(C)"]


def make_synthetic_dataset(
    n_drugs: int = 30,
    n_relations: int = 4,
    n_clusters: int = 4,
    density: float = 0.5,
    own_tokens: int = 4,
    shared_tokens: int = 2,
    pool_size: int = 8,
    smiles_motifs: bool = True,
    seed: int = 0,
) -> Dataset:
    rng = np.random.default_rng(seed)
    clusters = rng.permutation(np.arange(n_drugs) % n_clusters)
    pools = {
        a: [[f"{a[:3]}{c}_{k}" for k in range(pool_size)] for c in range(n_clusters)] for a in ATTRIBUTES
    }
    shared = {a: [f"{a[:3]}x_{k}" for k in range(3 * pool_size)] for a in ATTRIBUTES}
    drugs = []
    for i in range(n_drugs):
        c = int(clusters[i])
        desc = {}
        for a in ATTRIBUTES:
            own = rng.choice(pools[a][c], size=own_tokens, replace=False).tolist()
            other = rng.choice(shared[a], size=shared_tokens, replace=False).tolist()
            desc[a] = frozenset(own + other)
        tail = "".join(rng.choice(_FILLER, size=int(rng.integers(1, 4))).tolist())
        if smiles_motifs:
            motif = _MOTIFS[c % len(_MOTIFS)]
            smiles = motif + tail + motif[::-1].replace(")", "").replace("(", "")
        else:
            smiles = "".join(rng.choice(_FILLER, size=8).tolist()) + tail
        drugs.append(DrugRecord(f"D{i:03d}", desc, smiles))

    cluster_pairs = list(itertools.combinations_with_replacement(range(n_clusters), 2))
    relation_of = {}
    for k, cp in enumerate(rng.permutation(len(cluster_pairs))):
        relation_of[cluster_pairs[cp]] = k % n_relations
    ddis = []
    for i, j in itertools.combinations(range(n_drugs), 2):
        if rng.random() < density:
            a, b = sorted((int(clusters[i]), int(clusters[j])))
            ddis.append((i, j, relation_of[(a, b)]))
    return Dataset(drugs, ddis, n_relations)


def cold_start_dataset(seed: int = 0) -> Dataset:
    """A harder setting for cold-start comparisons.

    Six clusters, diluted descriptor pools and SMILES without cluster motifs,
    so a drug unseen in training is typed mainly through its similarity to
    known drugs.
    """
    return make_synthetic_dataset(
        n_drugs=30,
        n_relations=4,
        n_clusters=6,
        density=0.7,
        own_tokens=3,
        shared_tokens=3,
        pool_size=10,
        smiles_motifs=False,
        seed=seed,
    )


def cluster_labels(dataset: Dataset) -> np.ndarray:
    """Recover cluster ids from descriptor token names (generator convention)."""
    out = []
    for d in dataset.drugs:
        tok = min(t for t in d.descriptors[ATTRIBUTES[0]] if "x_" not in t)
        out.append(int(tok[3:].split("_")[0]))
    return np.array(out)
