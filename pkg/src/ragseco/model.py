"""RaGSECo network: relation-aware embedding learning and propagation,
three-view drug-pair encoders, co-contrastive losses, fusion and decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ContractError, ShapeError, SparseMatrix, Tensor
from .config import VARIANTS, HyperParams
from .data import Dataset, build_initial_features, encode_all_smiles
from .graphs import (
    MultiRelAdjacency,
    build_ddi_adjacency,
    build_dds_adjacency,
    normalize_adjacency,
)

CLAMP = ad.CLAMP


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.weight = glorot(rng, n_in, n_out, (n_in, n_out))
        self.bias = zeros((n_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.dense_matmul(x, self.weight), self.bias)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class BatchNorm:
    def __init__(self, features: int):
        self.gamma = ones((features,))
        self.beta = zeros((features,))
        self.state = BatchNormState.fresh(features)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        return ad.batchnorm(x, self.state, mode, self.gamma, self.beta)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def buffers(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.running_mean": self.state.running_mean, f"{prefix}.running_var": self.state.running_var}

    def load_buffers(self, prefix: str, values: dict[str, np.ndarray]) -> None:
        self.state.running_mean = np.array(values[f"{prefix}.running_mean"], dtype=np.float64)
        self.state.running_var = np.array(values[f"{prefix}.running_var"], dtype=np.float64)


class TwoLayer:
    """affine -> GeLU -> batchnorm -> dropout -> affine (optionally softmax).

    Used for FNN1, FNN2 and the decoder.
    """

    def __init__(self, rng, n_in: int, hidden: int, n_out: int, dropout: float, softmax: bool = False):
        self.fc1 = Linear(rng, n_in, hidden)
        self.bn = BatchNorm(hidden)
        self.fc2 = Linear(rng, hidden, n_out)
        self.dropout = dropout
        self.softmax = softmax

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator | None) -> Tensor:
        h = ad.gelu(self.fc1(x))
        h = self.bn(h, mode)
        h = ad.dropout(h, self.dropout, mode, rng)
        out = self.fc2(h)
        return ad.softmax_rows(out) if self.softmax else out

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fc1.parameters(f"{prefix}.fc1"), **self.bn.parameters(f"{prefix}.bn"), **self.fc2.parameters(f"{prefix}.fc2")}

    def buffers(self, prefix: str) -> dict[str, np.ndarray]:
        return self.bn.buffers(f"{prefix}.bn")

    def load_buffers(self, prefix: str, values) -> None:
        self.bn.load_buffers(f"{prefix}.bn", values)


class SmilesCNN:
    """Stacked valid 1-D convolutions with ReLU, global max pool, affine projection."""

    def __init__(self, rng, in_channels: int, channels: Sequence[int], kernels: Sequence[int], n_out: int):
        self.convs: list[tuple[Tensor, Tensor]] = []
        c_in = in_channels
        for c_out, k in zip(channels, kernels):
            w = glorot(rng, c_in * k, c_out * k, (c_out, c_in, k))
            self.convs.append((w, zeros((c_out,))))
            c_in = c_out
        self.proj = Linear(rng, c_in, n_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(ad.conv1d_maxpool(x, self.convs))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k, (w, b) in enumerate(self.convs):
            out[f"{prefix}.conv{k}.weight"] = w
            out[f"{prefix}.conv{k}.bias"] = b
        out.update(self.proj.parameters(f"{prefix}.proj"))
        return out


# ---------------------------------------------------------------------------
# Parameter groups for the graph stages
# ---------------------------------------------------------------------------


@dataclass
class RaGSELParams:
    relation_weights: list[Tensor]
    self_weight: Tensor

    @classmethod
    def init(cls, rng, n_relations: int, d: int, d_prime: int) -> "RaGSELParams":
        return cls([glorot(rng, d, d_prime, (d, d_prime)) for _ in range(n_relations)], glorot(rng, d, d_prime, (d, d_prime)))

    def parameters(self) -> dict[str, Tensor]:
        out = {f"ragsel.W_r.{r:04d}": w for r, w in enumerate(self.relation_weights)}
        out["ragsel.W_o"] = self.self_weight
        return out


@dataclass
class RaGSEPParams:
    weights: list[Tensor]  # substructure, enzyme, target
    n: int

    @classmethod
    def init(cls, rng, d_in: int, d_prime: int, n: int) -> "RaGSEPParams":
        return cls([glorot(rng, d_in, d_prime, (d_in, d_prime)) for _ in range(3)], n)

    def parameters(self) -> dict[str, Tensor]:
        return dict(zip(("ragsep.W_s", "ragsep.W_e", "ragsep.W_t"), self.weights))


# ---------------------------------------------------------------------------
# Graph-stage forward functions
# ---------------------------------------------------------------------------


def relation_scaled(adjacency: MultiRelAdjacency) -> list[SparseMatrix]:
    """Per-relation Â_r with row i divided by R_i (zero rows when R_i = 0)."""
    counts = adjacency.relation_counts.astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.where(counts > 0, counts, 1.0), 0.0)
    out = []
    for a in adjacency.matrices:
        norm = normalize_adjacency(a)
        out.append(SparseMatrix(a.rows, a.cols, ((r, c, w * inv[r]) for r, c, w in norm.entries)))
    return out


def ragsel_forward(x: Tensor, adjacency: MultiRelAdjacency, params: RaGSELParams) -> Tensor:
    """h_i = ReLU( sum_r sum_j Â_r[i,j] / R_i · x_j W_r + x_i W_o )."""
    if len(params.relation_weights) != adjacency.n_relations:
        raise ShapeError(f"{len(params.relation_weights)} relation weights for {adjacency.n_relations} relations")
    acc = ad.dense_matmul(x, params.self_weight)
    for s, w in zip(relation_scaled(adjacency), params.relation_weights):
        if s.nnz:
            acc = ad.add(acc, ad.sparse_dense_matmul(s, ad.dense_matmul(x, w)))
    return ad.relu(acc)


def ragsel_forward_premixed(messages: np.ndarray, x: np.ndarray, params: RaGSELParams) -> Tensor:
    """Same as :func:`ragsel_forward` for a constant X, with (Â_r/R_i)·X precomputed.

    ``messages`` is the N x (R·d) block [S_0 X | ... | S_{R-1} X].
    """
    stacked = ad.concat(params.relation_weights + [params.self_weight], axis=0)
    inputs = Tensor(np.hstack([messages, x]))
    return ad.relu(ad.dense_matmul(inputs, stacked))


def ragsep_forward(h: Tensor, powers: Sequence[np.ndarray | None], params: RaGSEPParams) -> Tensor:
    """H_embed = sum over attributes of ReLU(Â_a^n · H · W_a); ``None`` power means identity."""
    if len(powers) != len(params.weights):
        raise ShapeError(f"{len(powers)} propagation matrices for {len(params.weights)} weights")
    out = None
    for p, w in zip(powers, params.weights):
        hw = ad.dense_matmul(h, w)
        if p is not None:
            if p.shape != (h.shape[0], h.shape[0]):
                raise ShapeError(f"propagation matrix {p.shape} does not match {h.shape[0]} drugs")
            hw = ad.dense_matmul(Tensor(p), hw)
        term = ad.relu(hw)
        out = term if out is None else ad.add(out, term)
    return out


# ---------------------------------------------------------------------------
# Contrastive pair selection and losses
# ---------------------------------------------------------------------------


def interaction_characteristics(train_ddis, n_drugs: int, n_relations: int) -> np.ndarray:
    t = np.zeros((n_drugs, n_relations))
    for i, j, r in train_ddis:
        t[i, r] = 1.0
        t[j, r] = 1.0
    return t


def cosine_matrix(c: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(c, axis=1)
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, (c @ c.T) / np.where(denom > 0, denom, 1.0), np.nan)


def select_contrastive_pairs(
    pairs: np.ndarray, characteristics: np.ndarray, t_pos: float, t_neg: float
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean K x K masks (positives, negatives) over ordered batch pairs (k, q).

    Thresholds are compared on squared quantities so that integer-valued
    characteristics give exact decisions (in particular cosine == 1).
    """
    pairs = np.asarray(pairs, dtype=np.int64)
    c = characteristics[pairs[:, 0]] + characteristics[pairs[:, 1]]
    dot = c @ c.T
    sq = (c * c).sum(axis=1)
    nonzero = sq > 0
    valid = nonzero[:, None] & nonzero[None, :]
    prod = np.outer(sq, sq)
    # characteristics are nonnegative, so dot >= 0 and cos >= t <=> dot^2 >= t^2 |c_k|^2 |c_q|^2
    dot2 = dot * dot
    pos = valid & (dot2 >= (t_pos * t_pos) * prod) if t_pos > 0 else valid.copy()
    neg = valid & (dot2 <= (t_neg * t_neg) * prod) if t_neg >= 0 else np.zeros_like(valid)
    return pos, neg & ~pos


class Discriminator:
    def __init__(self, rng, dim: int):
        self.weight = glorot(rng, dim, dim, (dim, dim))

    def scores(self, a: Tensor, b: Tensor) -> Tensor:
        """K x K matrix of sigmoid(a_k W b_q^T)."""
        return ad.sigmoid(ad.dense_matmul(ad.dense_matmul(a, self.weight), ad.transpose(b)))


def _bce_over_masks(psi: Tensor, pos: np.ndarray, neg: np.ndarray) -> Tensor:
    count = int(pos.sum() + neg.sum())
    log_p = ad.clamped_log(psi)
    log_q = ad.clamped_log(ad.sub(Tensor(np.ones(psi.shape)), psi))
    s = ad.add(ad.total(ad.mul(log_p, Tensor(pos.astype(np.float64)))), ad.total(ad.mul(log_q, Tensor(neg.astype(np.float64)))))
    return ad.scale(s, -1.0 / count)


def contrastive_losses(
    p_embed: Tensor, p_initi: Tensor, pos: np.ndarray, neg: np.ndarray, disc: Discriminator
) -> tuple[Tensor, Tensor]:
    """(l_ss1, l_ss2); both zero when no pair was selected."""
    if not pos.any() and not neg.any():
        return Tensor(0.0), Tensor(0.0)
    l1 = _bce_over_masks(disc.scores(p_embed, p_initi), pos, neg)
    l2 = _bce_over_masks(disc.scores(p_initi, p_embed), pos, neg)
    return l1, l2


# ---------------------------------------------------------------------------
# Fusion, decoding, losses
# ---------------------------------------------------------------------------


def fuse_pair(views: dict[str, Tensor], variant: str = "full") -> Tensor:
    i, e, s = views.get("initi"), views.get("embed"), views.get("smile")
    if variant == "-C":
        return e
    if variant == "-I":
        parts = [s, e, ad.add(s, e)]
    elif variant == "-S":
        parts = [i, e, ad.add(i, e)]
    elif variant == "-E":
        parts = [i, s, ad.add(i, s)]
    else:
        if len({i.shape[1], e.shape[1], s.shape[1]}) != 1:
            raise ShapeError(f"view widths differ: {i.shape[1]}, {e.shape[1]}, {s.shape[1]}")
        parts = [i, e, s, ad.add(ad.add(i, e), s)]
    return ad.concat(parts, axis=1)


def fused_width(d_fnn: int, variant: str) -> int:
    if variant == "-C":
        return d_fnn
    if variant in ("-I", "-S", "-E"):
        return 3 * d_fnn
    return 4 * d_fnn


def classification_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Summed cross entropy -sum_k sum_r yhat_kr log y_kr."""
    return ad.scale(ad.total(ad.mul(ad.clamped_log(probs), Tensor(targets))), -1.0)


def total_loss(l_ce: Tensor, l_ss1: Tensor, l_ss2: Tensor, lam: float, variant: str = "full") -> Tensor:
    if variant == "-C":
        return l_ce
    if lam <= 0:
        raise ContractError(f"lambda must be positive, got {lam}")
    return ad.add(ad.add(ad.scale(l_ce, lam), l_ss1), l_ss2)


# ---------------------------------------------------------------------------
# Precomputed graph inputs
# ---------------------------------------------------------------------------


@dataclass
class GraphInputs:
    features: np.ndarray          # X, N x d
    messages: np.ndarray          # [S_r X]_r, N x (R d)
    dds_powers: list[np.ndarray | None]
    smiles: np.ndarray            # N x p x q
    characteristics: np.ndarray   # N x R
    adjacency: MultiRelAdjacency

    @property
    def n_drugs(self) -> int:
        return self.features.shape[0]


def build_graph_inputs(dataset: Dataset, train_ddis, hp: HyperParams, charset: Sequence[str]) -> GraphInputs:
    x = build_initial_features(dataset)
    adjacency = build_ddi_adjacency(train_ddis, dataset.n_drugs, dataset.n_relations)
    scaled = relation_scaled(adjacency)
    messages = np.hstack([s.matvec(x) for s in scaled]) if scaled else np.zeros((dataset.n_drugs, 0))
    if hp.n == 0:
        powers: list[np.ndarray | None] = [None, None, None]
    else:
        powers = [na.power(hp.n) for na in build_dds_adjacency(dataset).normalized()]
    smiles = encode_all_smiles(dataset, charset, hp.smiles_len)
    t = interaction_characteristics(train_ddis, dataset.n_drugs, dataset.n_relations)
    return GraphInputs(x, messages, powers, smiles, t, adjacency)


# ---------------------------------------------------------------------------
# The full network
# ---------------------------------------------------------------------------


@dataclass
class BatchOutput:
    probs: Tensor
    views: dict[str, Tensor]
    fused: Tensor


class RaGSECo:
    def __init__(self, n_drugs: int, n_relations: int, d: int, hp: HyperParams, variant: str = "full", p: int = 64):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.n_drugs, self.n_relations, self.d, self.p = n_drugs, n_relations, d, p
        self.hp = hp
        self.variant = variant
        rng = np.random.default_rng(hp.seed)
        dp, dfnn = hp.d_prime, hp.d_fnn
        self.ragsel = RaGSELParams.init(rng, n_relations, d, dp) if variant != "-R" else None
        self.ragsep = RaGSEPParams.init(rng, d if variant == "-R" else dp, dp, hp.n) if variant != "-M" else None
        self.fnn1 = TwoLayer(rng, 2 * d, dfnn, dfnn, hp.dr) if variant != "-C" else None
        self.fnn2 = TwoLayer(rng, 2 * dp, dfnn, dfnn, hp.dr)
        self.cnn = (
            SmilesCNN(rng, p, hp.cnn_channels, hp.cnn_kernels, dfnn) if variant not in ("-S", "-C") else None
        )
        self.disc = Discriminator(rng, dfnn) if variant != "-C" else None
        width = fused_width(dfnn, variant)
        hidden = hp.decoder_hidden or width + n_relations
        self.decoder = TwoLayer(rng, width, hidden, n_relations, hp.dr, softmax=True)

    # -- parameter bookkeeping -------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.ragsel is not None:
            out.update(self.ragsel.parameters())
        if self.ragsep is not None:
            out.update(self.ragsep.parameters())
        if self.fnn1 is not None:
            out.update(self.fnn1.parameters("fnn1"))
        out.update(self.fnn2.parameters("fnn2"))
        if self.cnn is not None:
            out.update(self.cnn.parameters("cnn"))
        if self.disc is not None:
            out["disc.W"] = self.disc.weight
        out.update(self.decoder.parameters("decoder"))
        return dict(sorted(out.items()))

    def _norm_layers(self) -> dict[str, TwoLayer]:
        layers = {"fnn2": self.fnn2, "decoder": self.decoder}
        if self.fnn1 is not None:
            layers["fnn1"] = self.fnn1
        return layers

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._norm_layers().items():
            out.update(layer.buffers(name))
        return dict(sorted(out.items()))

    def load_buffers(self, values: dict[str, np.ndarray]) -> None:
        for name, layer in self._norm_layers().items():
            layer.load_buffers(name, values)

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None

    # -- forward ----------------------------------------------------------

    def drug_embeddings(self, g: GraphInputs) -> tuple[Tensor | None, Tensor]:
        """(H, H_embed) for all drugs; H is None under -R."""
        if self.ragsel is not None:
            h = ragsel_forward_premixed(g.messages, g.features, self.ragsel)
        else:
            h = None
        if self.ragsep is None:
            return h, h
        source = h if h is not None else Tensor(g.features)
        return h, ragsep_forward(source, g.dds_powers, self.ragsep)

    def encode_pair_views(self, g: GraphInputs, h_embed: Tensor, pairs: np.ndarray, mode: str, rng) -> dict[str, Tensor]:
        pairs = np.asarray(pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ShapeError(f"pairs must be K x 2, got {pairs.shape}")
        if (pairs[:, 0] == pairs[:, 1]).any():
            raise ContractError("drug pair with identical endpoints")
        i, j = pairs[:, 0], pairs[:, 1]
        views = {"embed": self.fnn2(ad.concat([ad.take_rows(h_embed, i), ad.take_rows(h_embed, j)], axis=1), mode, rng)}
        if self.fnn1 is not None:
            views["initi"] = self.fnn1(Tensor(np.hstack([g.features[i], g.features[j]])), mode, rng)
        if self.cnn is not None:
            views["smile"] = self.cnn(Tensor(np.concatenate([g.smiles[i], g.smiles[j]], axis=2)))
        return views

    def decode(self, fused: Tensor, mode: str, rng) -> Tensor:
        return self.decoder(fused, mode, rng)

    def forward(self, g: GraphInputs, pairs: np.ndarray, mode: str = "eval", rng=None, h_embed: Tensor | None = None) -> BatchOutput:
        if h_embed is None:
            _, h_embed = self.drug_embeddings(g)
        views = self.encode_pair_views(g, h_embed, pairs, mode, rng)
        fused = fuse_pair(views, self.variant)
        return BatchOutput(self.decode(fused, mode, rng), views, fused)
