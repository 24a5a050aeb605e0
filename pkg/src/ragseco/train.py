"""Training loop, Mixup, evaluation and model checkpoints."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, read_tensors, write_tensors
from .config import VARIANTS, ConfigError, HyperParams
from .data import DataError, Dataset, Fold, default_charset
from .metrics import MetricsReport, compute_metrics
from .model import (
    GraphInputs,
    RaGSECo,
    build_graph_inputs,
    classification_loss,
    contrastive_losses,
    fuse_pair,
    select_contrastive_pairs,
    total_loss,
)
from .optim import NumericalError, RAdam

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = "# epoch\tbatch\tL\tL_ce\tl_ss1\tl_ss2\n"


@dataclass
class TrainConfig:
    hp: HyperParams
    task: int = 1
    fold: int = 0
    variant: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in (1, 2, 3):
            raise ConfigError(f"task must be 1, 2 or 3, got {self.task}")


@dataclass
class LossRecord:
    epoch: int
    batch: int
    total: float
    ce: float
    ss1: float
    ss2: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.batch}\t{self.total!r}\t{self.ce!r}\t{self.ss1!r}\t{self.ss2!r}\n"


@dataclass
class TrainResult:
    model: RaGSECo
    graph: GraphInputs
    train_ddis: list[tuple[int, int, int]]
    charset: list[str]
    config: TrainConfig
    losses: list[LossRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Mixup
# ---------------------------------------------------------------------------


def sample_mixup_coefficient(alpha: float, rng: np.random.Generator) -> float:
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup(features, labels: np.ndarray, alpha: float, rng: np.random.Generator, mu: float | None = None, perm=None):
    """Convex combination of each row with a randomly permuted partner.

    ``features`` may be a Tensor (differentiable) or an ndarray. Returns
    (mixed features, mixed labels, mu).
    """
    if alpha <= 0:
        raise ValueError(f"mixup alpha must be positive, got {alpha}")
    if mu is None:
        mu = sample_mixup_coefficient(alpha, rng)
    k = labels.shape[0]
    if perm is None:
        perm = rng.permutation(k)
    mixed_labels = mu * labels + (1.0 - mu) * labels[perm]
    if isinstance(features, Tensor):
        mixed = ad.add(ad.scale(features, mu), ad.scale(ad.take_rows(features, perm), 1.0 - mu))
    else:
        features = np.asarray(features, dtype=np.float64)
        mixed = mu * features + (1.0 - mu) * features[perm]
    return mixed, mixed_labels, mu


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def onehot(labels: Sequence[int], n: int) -> np.ndarray:
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def doubled_pairs(ddis: Sequence[tuple[int, int, int]]) -> tuple[np.ndarray, np.ndarray]:
    """Both orientations of every DDI: (pairs K x 2, labels K)."""
    arr = np.asarray(ddis, dtype=np.int64).reshape(-1, 3)
    pairs = np.concatenate([arr[:, :2], arr[:, [1, 0]]])
    return pairs, np.concatenate([arr[:, 2], arr[:, 2]])


def batch_slices(n: int, bs: int) -> list[slice]:
    """Contiguous batches; a trailing batch of one row is folded into its predecessor."""
    cuts = list(range(0, n, bs)) + [n]
    if len(cuts) > 2 and cuts[-1] - cuts[-2] == 1:
        cuts.pop(-2)
    return [slice(a, b) for a, b in zip(cuts[:-1], cuts[1:])]


def batch_objective(
    model: RaGSECo,
    g: GraphInputs,
    pairs: np.ndarray,
    labels: np.ndarray,
    rng_dropout: np.random.Generator | None,
    rng_mixup: np.random.Generator | None,
    mode: str = "train",
    mixup_mu: float | None = None,
    mixup_perm=None,
):
    """Forward one batch; returns (L, L_ce, l_ss1, l_ss2) tensors."""
    hp = model.hp
    _, h_embed = model.drug_embeddings(g)
    views = model.encode_pair_views(g, h_embed, pairs, mode, rng_dropout)
    if model.variant == "-C":
        l1 = l2 = Tensor(0.0)
    else:
        pos, neg = select_contrastive_pairs(pairs, g.characteristics, hp.t_pos, hp.t_neg)
        l1, l2 = contrastive_losses(views["embed"], views["initi"], pos, neg, model.disc)
    fused = fuse_pair(views, model.variant)
    targets = onehot(labels, model.n_relations)
    if hp.mixup_alpha > 0 and (rng_mixup is not None or mixup_mu is not None):
        fused, targets, _ = mixup(fused, targets, hp.mixup_alpha, rng_mixup, mu=mixup_mu, perm=mixup_perm)
    probs = model.decode(fused, mode, rng_dropout)
    l_ce = classification_loss(probs, targets)
    return total_loss(l_ce, l1, l2, hp.lam, model.variant), l_ce, l1, l2


def train(
    dataset: Dataset,
    fold: Fold,
    config: TrainConfig,
    charset: Sequence[str] | None = None,
    loss_log: TextIO | None = None,
) -> TrainResult:
    hp = config.hp
    train_ddis = [dataset.ddis[q] for q in fold.train]
    if not train_ddis:
        raise ConfigError(f"fold {config.fold} has no training DDIs")
    charset = list(charset) if charset is not None else default_charset()
    g = build_graph_inputs(dataset, train_ddis, hp, charset)
    model = RaGSECo(dataset.n_drugs, dataset.n_relations, g.features.shape[1], hp, config.variant, p=len(charset))
    result = TrainResult(model, g, train_ddis, charset, config)
    if hp.te == 0:
        return result

    opt = RAdam(model.parameters(), hp.lr)
    shuffle_rng, dropout_rng, mixup_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(hp.seed).spawn(3))
    pairs, labels = doubled_pairs(train_ddis)
    if loss_log is not None:
        loss_log.write(LOSS_LOG_HEADER)
    last_good = None
    for epoch in range(hp.te):
        order = shuffle_rng.permutation(len(pairs))
        for b, sl in enumerate(batch_slices(len(pairs), hp.bs)):
            idx = order[sl]
            loss, l_ce, l1, l2 = batch_objective(
                model, g, pairs[idx], labels[idx], dropout_rng, mixup_rng if hp.mixup_alpha > 0 else None
            )
            rec = LossRecord(epoch, b, loss.item(), l_ce.item(), l1.item(), l2.item())
            if not np.isfinite([rec.total, rec.ce, rec.ss1, rec.ss2]).all():
                where = f"epoch {last_good[0]} batch {last_good[1]}" if last_good else "none"
                raise NumericalError(f"non-finite loss at epoch {epoch} batch {b}; last good batch: {where}")
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            result.losses.append(rec)
            last_good = (epoch, b)
            if loss_log is not None:
                loss_log.write(rec.line())
                loss_log.flush()
        log.debug("epoch %d: last batch loss %.6g", epoch, result.losses[-1].total)
    return result


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict_pairs(model: RaGSECo, g: GraphInputs, pairs: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Eval-mode probabilities averaged over both orientations of each pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros((0, model.n_relations))
    if pairs.min() < 0 or pairs.max() >= g.n_drugs:
        raise DataError("pair references an unknown drug index")
    canon = np.sort(pairs, axis=1)
    out = np.empty((len(pairs), model.n_relations))
    with ad.no_grad():
        _, h_embed = model.drug_embeddings(g)
        for start in range(0, len(canon), chunk):
            c = canon[start : start + chunk]
            fwd = model.forward(g, c, "eval", None, h_embed).probs.data
            rev = model.forward(g, c[:, ::-1], "eval", None, h_embed).probs.data
            out[start : start + chunk] = 0.5 * (fwd + rev)
    return out


def evaluate_model(model: RaGSECo, g: GraphInputs, test_ddis: Sequence[tuple[int, int, int]]) -> MetricsReport:
    arr = np.asarray(test_ddis, dtype=np.int64).reshape(-1, 3)
    probs = predict_pairs(model, g, arr[:, :2])
    return compute_metrics(probs, arr[:, 2], model.n_relations)


def evaluate(result: TrainResult, dataset: Dataset, test_ddis) -> MetricsReport:
    return evaluate_model(result.model, result.graph, test_ddis)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_meta(result: TrainResult, dataset: Dataset) -> dict:
    hp = dataclasses.asdict(result.config.hp)
    return {
        "format": "ragseco",
        "variant": result.config.variant,
        "task": result.config.task,
        "fold": result.config.fold,
        "hyperparams": {k: list(v) if isinstance(v, tuple) else v for k, v in hp.items()},
        "n_drugs": dataset.n_drugs,
        "n_relations": dataset.n_relations,
        "feature_dim": int(result.graph.features.shape[1]),
        "drug_ids": dataset.drug_ids,
        "charset": "".join(result.charset),
        "train_ddis": [list(map(int, t)) for t in result.train_ddis],
    }


def save_checkpoint(path: str | Path, result: TrainResult, dataset: Dataset) -> None:
    tensors = {k: t.data for k, t in result.model.parameters().items()}
    for k, v in result.model.buffers().items():
        tensors[k] = v
    write_tensors(path, tensors, checkpoint_meta(result, dataset))


def hyperparams_from_meta(meta: dict) -> HyperParams:
    raw = dict(meta["hyperparams"])
    for k in ("cnn_channels", "cnn_kernels"):
        raw[k] = tuple(raw[k])
    return HyperParams(**raw)


def load_checkpoint(path: str | Path, dataset: Dataset) -> TrainResult:
    """Rebuild a trained model and its graph inputs against ``dataset``."""
    tensors, meta = read_tensors(path)
    if meta.get("format") != "ragseco":
        raise CheckpointError(f"{path}: not a RaGSECo checkpoint")
    if meta["n_drugs"] != dataset.n_drugs or meta["n_relations"] != dataset.n_relations:
        raise CheckpointError(
            f"checkpoint expects {meta['n_drugs']} drugs / {meta['n_relations']} event types, "
            f"dataset has {dataset.n_drugs} / {dataset.n_relations}"
        )
    if meta["drug_ids"] != dataset.drug_ids:
        raise CheckpointError("checkpoint drug ids do not match the dataset's drug order")
    hp = hyperparams_from_meta(meta)
    charset = list(meta["charset"])
    train_ddis = [tuple(t) for t in meta["train_ddis"]]
    g = build_graph_inputs(dataset, train_ddis, hp, charset)
    if g.features.shape[1] != meta["feature_dim"]:
        raise CheckpointError(f"feature width {g.features.shape[1]} differs from checkpoint's {meta['feature_dim']}")
    model = RaGSECo(dataset.n_drugs, dataset.n_relations, g.features.shape[1], hp, meta["variant"], p=len(charset))
    params = model.parameters()
    expected = set(params) | set(model.buffers())
    if set(tensors) != expected:
        missing = sorted(expected - set(tensors))
        extra = sorted(set(tensors) - expected)
        raise CheckpointError(f"checkpoint tensors mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, t in params.items():
        if tensors[name].shape != t.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {tensors[name].shape}, model {t.shape}")
        t.data = tensors[name].copy()
    model.load_buffers(tensors)
    config = TrainConfig(hp, meta["task"], meta["fold"], meta["variant"])
    return TrainResult(model, g, train_ddis, charset, config)
