"""Drug/DDI file parsing, Jaccard features, SMILES encoding and CV splits."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

ATTRIBUTES = ("substructure", "enzyme", "target")
SMILES_CHARS = 64
SMILES_LEN = 100
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DrugRecord:
    drug_id: str
    descriptors: dict[str, frozenset[str]]
    smiles: str = ""

    def __post_init__(self):
        missing = [a for a in ATTRIBUTES if a not in self.descriptors]
        if missing:
            raise DataError(f"drug {self.drug_id!r} lacks attributes {missing}")


@dataclass
class Dataset:
    drugs: list[DrugRecord]
    ddis: list[tuple[int, int, int]]
    n_relations: int

    def __post_init__(self):
        n = len(self.drugs)
        ids = [d.drug_id for d in self.drugs]
        if len(set(ids)) != n:
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate drug ids: {dup}")
        seen: set[tuple[int, int]] = set()
        for k, (i, j, r) in enumerate(self.ddis):
            if i == j:
                raise DataError(f"ddi #{k}: self-interaction on drug {ids[i]!r}")
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"ddi #{k}: drug index out of range")
            if not 0 <= r < self.n_relations:
                raise DataError(f"ddi #{k}: event type {r} outside [0, {self.n_relations})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataError(f"ddi #{k}: pair ({ids[i]}, {ids[j]}) listed twice")
            seen.add(key)
        self._index = {d: i for i, d in enumerate(ids)}

    @property
    def n_drugs(self) -> int:
        return len(self.drugs)

    @property
    def n_ddis(self) -> int:
        return len(self.ddis)

    @property
    def drug_ids(self) -> list[str]:
        return [d.drug_id for d in self.drugs]

    def index_of(self, drug_id: str) -> int:
        try:
            return self._index[drug_id]
        except KeyError:
            raise DataError(f"unknown drug id {drug_id!r}") from None


# ---------------------------------------------------------------------------
# File parsing
# ---------------------------------------------------------------------------


def _tokens(cell: str) -> frozenset[str]:
    return frozenset(t.strip() for t in cell.split("|") if t.strip())


def read_drugs(path: str | Path) -> list[DrugRecord]:
    """Read the drugs TSV: drug_id, substructure, enzyme, target, smiles."""
    drugs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[0].strip().lower() == "drug_id":
                continue
            if len(cells) != 5:
                col = len(line) + 1 if len(cells) < 5 else sum(len(c) + 1 for c in cells[:5]) + 1
                raise DataError(f"{path}:{lineno}:{col}: expected 5 tab-separated columns, found {len(cells)}")
            drug_id = cells[0].strip()
            if not drug_id:
                raise DataError(f"{path}:{lineno}:1: empty drug_id")
            desc = {a: _tokens(c) for a, c in zip(ATTRIBUTES, cells[1:4])}
            drugs.append(DrugRecord(drug_id, desc, cells[4].strip()))
    return drugs


def read_ddis(path: str | Path, drugs: Sequence[DrugRecord]) -> list[tuple[int, int, int]]:
    """Read the DDI TSV: drug_id_a, drug_id_b, event_type (0-based)."""
    index = {d.drug_id: i for i, d in enumerate(drugs)}
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[0].strip().lower() == "drug_id_a":
                continue
            if len(cells) != 3:
                raise DataError(f"{path}:{lineno}:1: expected 3 tab-separated columns, found {len(cells)}")
            col = 1
            ends = []
            for c in cells:
                ends.append(col)
                col += len(c) + 1
            a, b, r = (c.strip() for c in cells)
            for name, column in ((a, ends[0]), (b, ends[1])):
                if name not in index:
                    raise DataError(f"{path}:{lineno}:{column}: unknown drug id {name!r}")
            try:
                rel = int(r)
            except ValueError:
                raise DataError(f"{path}:{lineno}:{ends[2]}: event type {r!r} is not an integer") from None
            if rel < 0:
                raise DataError(f"{path}:{lineno}:{ends[2]}: negative event type {rel}")
            out.append((index[a], index[b], rel))
    return out


def load_dataset(drugs_path: str | Path, ddis_path: str | Path, n_relations: int | None = None) -> Dataset:
    drugs = read_drugs(drugs_path)
    ddis = read_ddis(ddis_path, drugs)
    if n_relations is None:
        n_relations = max((r for _, _, r in ddis), default=-1) + 1
    return Dataset(drugs, ddis, n_relations)


def write_dataset(dataset: Dataset, drugs_path: str | Path, ddis_path: str | Path) -> None:
    with open(drugs_path, "w", encoding="utf-8") as fh:
        fh.write("drug_id\tsubstructure\tenzyme\ttarget\tsmiles\n")
        for d in dataset.drugs:
            cells = ["|".join(sorted(d.descriptors[a])) for a in ATTRIBUTES]
            fh.write("\t".join([d.drug_id, *cells, d.smiles]) + "\n")
    ids = dataset.drug_ids
    with open(ddis_path, "w", encoding="utf-8") as fh:
        fh.write("drug_id_a\tdrug_id_b\tevent_type\n")
        for i, j, r in dataset.ddis:
            fh.write(f"{ids[i]}\t{ids[j]}\t{r}\n")


def default_charset() -> list[str]:
    text = resources.files("ragseco").joinpath("default_charset.txt").read_text(encoding="utf-8")
    return _parse_charset(text.splitlines(), "<default charset>")


def read_charset(path: str | Path | None) -> list[str]:
    if path is None:
        return default_charset()
    with open(path, encoding="utf-8") as fh:
        return _parse_charset(fh.read().splitlines(), str(path))


def _parse_charset(lines: Iterable[str], origin: str) -> list[str]:
    chars = [ln for ln in lines if ln != ""]
    for lineno, c in enumerate(chars, 1):
        if len(c) != 1:
            raise DataError(f"{origin}:{lineno}: expected one character per line, got {c!r}")
    if len(set(chars)) != len(chars):
        raise DataError(f"{origin}: charset contains duplicates")
    if len(chars) != SMILES_CHARS:
        raise DataError(f"{origin}: charset must have {SMILES_CHARS} characters, found {len(chars)}")
    return chars


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def jaccard_similarity(u: Iterable[str], v: Iterable[str]) -> float:
    u, v = set(u), set(v)
    union = len(u | v)
    if union == 0:
        return 0.0
    return len(u & v) / union


def similarity_matrix(dataset: Dataset, attribute: str) -> np.ndarray:
    """N x N Jaccard matrix for one attribute (computed via a binary incidence matrix)."""
    sets = [d.descriptors[attribute] for d in dataset.drugs]
    vocab = sorted(set().union(*sets)) if sets else []
    col = {t: k for k, t in enumerate(vocab)}
    inc = np.zeros((len(sets), len(vocab)))
    for i, s in enumerate(sets):
        for t in s:
            inc[i, col[t]] = 1.0
    inter = inc @ inc.T
    sizes = inc.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / union, 0.0)
    return sim


def build_initial_features(dataset: Dataset) -> np.ndarray:
    """X = [S_substructure | S_enzyme | S_target], shape N x 3N."""
    return np.hstack([similarity_matrix(dataset, a) for a in ATTRIBUTES])


def encode_smiles(smiles: str, charset: Sequence[str], q: int = SMILES_LEN) -> np.ndarray:
    """p x q one-hot matrix; unknown characters are dropped, then truncate/pad to q."""
    index = {c: k for k, c in enumerate(charset)}
    known = [c for c in smiles if c in index]
    if len(known) != len(smiles):
        unknown = sorted({c for c in smiles if c not in index})
        log.debug("dropping characters %s from SMILES %r", unknown, smiles)
    out = np.zeros((len(charset), q))
    for t, c in enumerate(known[:q]):
        out[index[c], t] = 1.0
    return out


def encode_all_smiles(dataset: Dataset, charset: Sequence[str], q: int = SMILES_LEN) -> np.ndarray:
    return np.stack([encode_smiles(d.smiles, charset, q) for d in dataset.drugs])


# ---------------------------------------------------------------------------
# Cross-validation splits
# ---------------------------------------------------------------------------


@dataclass
class Fold:
    train: list[int]
    test: list[int]
    new_drugs: list[int] = field(default_factory=list)

    def known_drugs(self, n_drugs: int) -> list[int]:
        new = set(self.new_drugs)
        return [i for i in range(n_drugs) if i not in new]


@dataclass
class SplitPlan:
    task: int
    seed: int
    n_drugs: int
    n_ddis: int
    folds: list[Fold]

    def to_text(self) -> str:
        lines = [
            f"# ragseco split manifest v{MANIFEST_VERSION}",
            f"task = {self.task}",
            f"seed = {self.seed}",
            f"n_drugs = {self.n_drugs}",
            f"n_ddis = {self.n_ddis}",
            f"folds = {len(self.folds)}",
        ]
        for k, f in enumerate(self.folds):
            lines.append("")
            lines.append(f"[fold {k}]")
            lines.append("train = " + " ".join(map(str, f.train)))
            lines.append("test = " + " ".join(map(str, f.test)))
            lines.append("new_drugs = " + " ".join(map(str, f.new_drugs)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, origin: str = "<manifest>") -> "SplitPlan":
        header: dict[str, str] = {}
        folds: list[dict[str, list[int]]] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[fold"):
                folds.append({})
                continue
            if "=" not in line:
                raise DataError(f"{origin}:{lineno}:1: expected 'key = value'")
            key, _, value = (s.strip() for s in line.partition("="))
            if folds:
                try:
                    folds[-1][key] = [int(v) for v in value.split()]
                except ValueError:
                    raise DataError(f"{origin}:{lineno}: non-integer index in {key!r}") from None
            else:
                header[key] = value
        try:
            plan = cls(
                task=int(header["task"]),
                seed=int(header["seed"]),
                n_drugs=int(header["n_drugs"]),
                n_ddis=int(header["n_ddis"]),
                folds=[Fold(f.get("train", []), f.get("test", []), f.get("new_drugs", [])) for f in folds],
            )
        except KeyError as exc:
            raise DataError(f"{origin}: missing header field {exc.args[0]!r}") from None
        if int(header.get("folds", len(plan.folds))) != len(plan.folds):
            raise DataError(f"{origin}: header announces {header['folds']} folds, found {len(plan.folds)}")
        return plan


def make_splits(dataset: Dataset, task: int, fold_count: int = 5, seed: int = 0) -> SplitPlan:
    """Task 1 splits DDIs; Tasks 2/3 split drugs into known/new."""
    if fold_count < 2:
        raise ValueError("fold_count must be at least 2")
    if dataset.n_ddis == 0:
        raise DataError("cannot split an empty dataset")
    if task not in (1, 2, 3):
        raise ValueError(f"task must be 1, 2 or 3, got {task}")
    rng = np.random.default_rng(seed)
    folds = []
    if task == 1:
        parts = np.array_split(rng.permutation(dataset.n_ddis), fold_count)
        for k in range(fold_count):
            test = sorted(parts[k].tolist())
            held = set(test)
            folds.append(Fold([q for q in range(dataset.n_ddis) if q not in held], test, []))
    else:
        parts = np.array_split(rng.permutation(dataset.n_drugs), fold_count)
        for k in range(fold_count):
            new = set(parts[k].tolist())
            train, test = [], []
            for q, (i, j, _) in enumerate(dataset.ddis):
                n_new = (i in new) + (j in new)
                if n_new == 0:
                    train.append(q)
                elif n_new == task - 1:
                    test.append(q)
            folds.append(Fold(train, test, sorted(new)))
    for k, f in enumerate(folds):
        if not f.test:
            warnings.warn(f"task {task} fold {k} has an empty test set", stacklevel=2)
    return SplitPlan(task, seed, dataset.n_drugs, dataset.n_ddis, folds)


def validate_split(dataset: Dataset, plan: SplitPlan) -> list[str]:
    """Exhaustively check a plan against the dataset; returns a list of problems."""
    problems = []
    if plan.n_drugs != dataset.n_drugs or plan.n_ddis != dataset.n_ddis:
        problems.append(
            f"manifest sized for {plan.n_drugs} drugs / {plan.n_ddis} DDIs, "
            f"dataset has {dataset.n_drugs} / {dataset.n_ddis}"
        )
        return problems
    all_test: list[int] = []
    for k, f in enumerate(plan.folds):
        for q in f.train + f.test:
            if not 0 <= q < dataset.n_ddis:
                problems.append(f"fold {k}: DDI index {q} out of range")
        if set(f.train) & set(f.test):
            problems.append(f"fold {k}: train and test overlap")
        if problems:
            continue
        new = set(f.new_drugs)
        train_drugs = {d for q in f.train for d in dataset.ddis[q][:2]}
        test_drugs = {d for q in f.test for d in dataset.ddis[q][:2]}
        if plan.task == 1:
            if len(f.train) + len(f.test) != dataset.n_ddis:
                problems.append(f"fold {k}: train/test do not cover all DDIs")
        else:
            if train_drugs & new:
                problems.append(f"fold {k}: train DDIs touch new drugs {sorted(train_drugs & new)}")
            for q in f.test:
                i, j, _ = dataset.ddis[q]
                n_new = (i in new) + (j in new)
                if n_new != plan.task - 1:
                    problems.append(f"fold {k}: test DDI {q} has {n_new} new endpoints")
            if plan.task == 3 and train_drugs & test_drugs:
                problems.append(f"fold {k}: drugs {sorted(train_drugs & test_drugs)} in both train and test")
        all_test.extend(f.test)
    if plan.task == 1 and not problems:
        if sorted(all_test) != list(range(dataset.n_ddis)):
            problems.append("task 1 test sets do not partition the DDIs")
    return problems
