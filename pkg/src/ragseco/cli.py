"""Command-line front end: split, train, evaluate, predict, validate-manifest.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import VARIANTS, ConfigError, RunConfig, load_run_config
from .data import DataError, Dataset, SplitPlan, load_dataset, make_splits, read_charset, validate_split, write_dataset
from .optim import NumericalError
from .synthetic import cold_start_dataset, make_synthetic_dataset
from .train import TrainConfig, evaluate_model, load_checkpoint, predict_pairs, save_checkpoint, train

log = logging.getLogger("ragseco")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cli = {
        "drugs": getattr(args, "drugs", None),
        "ddis": getattr(args, "ddis", None),
        "charset": getattr(args, "charset", None),
        "out": getattr(args, "out", None),
        "task": getattr(args, "task", None),
        "variant": getattr(args, "variant", None),
        "profile": getattr(args, "profile", None),
        "seed": getattr(args, "seed", None),
    }
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cli[key.strip()] = value.strip()
    cfg = load_run_config(args.config, **cli)
    cfg.validate(need_data=True)
    return cfg


def _load(cfg: RunConfig) -> Dataset:
    return load_dataset(cfg.drugs, cfg.ddis)


def _manifest_path(args, cfg: RunConfig) -> Path:
    return Path(args.manifest) if args.manifest else cfg.out / "manifest.txt"


def _read_manifest(path: Path) -> SplitPlan:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc.strerror}") from None
    return SplitPlan.from_text(text, str(path))


def _checked_plan(dataset: Dataset, path: Path) -> SplitPlan:
    plan = _read_manifest(path)
    problems = validate_split(dataset, plan)
    if problems:
        raise DataError(f"{path}: " + "; ".join(problems[:5]))
    return plan


def _folds(value: str, plan: SplitPlan) -> list[int]:
    if value == "all":
        return list(range(len(plan.folds)))
    try:
        k = int(value)
    except ValueError:
        raise ConfigError(f"--fold must be an integer or 'all', got {value!r}") from None
    if not 0 <= k < len(plan.folds):
        raise ConfigError(f"fold {k} not in manifest (has {len(plan.folds)} folds)")
    return [k]


def fold_dir(out: Path, k: int) -> Path:
    return out / f"fold-{k}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_split(args) -> int:
    cfg = _run_config(args)
    dataset = _load(cfg)
    plan = make_splits(dataset, cfg.task, fold_count=args.folds, seed=cfg.seed)
    path = _manifest_path(args, cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(plan.to_text(), encoding="utf-8")
    for k, f in enumerate(plan.folds):
        print(f"fold {k}: train {len(f.train)} test {len(f.test)} new_drugs {len(f.new_drugs)}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_validate_manifest(args) -> int:
    cfg = _run_config(args)
    dataset = _load(cfg)
    path = _manifest_path(args, cfg)
    problems = validate_split(dataset, _read_manifest(path))
    for p in problems:
        print(f"{path}: {p}", file=sys.stderr)
    if problems:
        return EXIT_DATA
    print(f"{path}: ok")
    return EXIT_OK


def _train_fold(cfg: RunConfig, plan: SplitPlan, k: int) -> str:
    dataset = _load(cfg)
    charset = read_charset(cfg.charset)
    out = fold_dir(cfg.out, k)
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(cfg.hyperparams(), plan.task, k, cfg.variant)
    with open(out / "loss.log", "w", encoding="utf-8") as fh:
        result = train(dataset, plan.folds[k], config, charset, loss_log=fh)
    save_checkpoint(out / "checkpoint.bin", result, dataset)
    final = result.losses[-1].total if result.losses else float("nan")
    return f"fold {k}: {len(result.losses)} batches, final L={final:.6g}, wrote {out}"


def cmd_train(args) -> int:
    cfg = _run_config(args)
    dataset = _load(cfg)
    path = _manifest_path(args, cfg)
    if not path.exists() and not args.manifest:
        plan = make_splits(dataset, cfg.task, seed=cfg.seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(plan.to_text(), encoding="utf-8")
        log.info("no manifest found; wrote %s", path)
    plan = _checked_plan(dataset, path)
    if plan.task != cfg.task:
        log.warning("manifest is for task %d; overriding configured task %d", plan.task, cfg.task)
    folds = _folds(args.fold, plan)
    if args.jobs > 1 and len(folds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            lines = list(pool.map(_train_fold, [cfg] * len(folds), [plan] * len(folds), folds))
    else:
        lines = [_train_fold(cfg, plan, k) for k in folds]
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    dataset = _load(cfg)
    plan = _checked_plan(dataset, _manifest_path(args, cfg))
    folds = _folds(args.fold, plan)
    if args.checkpoint and len(folds) > 1:
        raise ConfigError("--checkpoint names a single model; pick one --fold")
    for k in folds:
        ckpt = Path(args.checkpoint) if args.checkpoint else fold_dir(cfg.out, k) / "checkpoint.bin"
        result = load_checkpoint(ckpt, dataset)
        report = evaluate_model(result.model, result.graph, [dataset.ddis[q] for q in plan.folds[k].test])
        target = ckpt.parent / "metrics.txt"
        target.write_text(report.to_text(), encoding="utf-8")
        for w in report.warnings:
            log.warning("fold %d: %s", k, w)
        print(f"fold {k}: {report.summary()}")
    return EXIT_OK


def _read_pairs(path: Path, dataset: Dataset) -> tuple[list[tuple[int, int, str, str]], int]:
    pairs, errors = [], 0
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read pairs file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        cells = [c.strip() for c in raw.split("\t")]
        if lineno == 1 and cells[0].lower() == "drug_id_a":
            continue
        if len(cells) < 2:
            print(f"{path}:{lineno}:1: expected two tab-separated drug ids", file=sys.stderr)
            errors += 1
            continue
        a, b = cells[0], cells[1]
        try:
            i, j = dataset.index_of(a), dataset.index_of(b)
        except DataError as exc:
            print(f"{path}:{lineno}: {exc}", file=sys.stderr)
            errors += 1
            continue
        if i == j:
            print(f"{path}:{lineno}: pair repeats drug {a!r}", file=sys.stderr)
            errors += 1
            continue
        pairs.append((i, j, a, b))
    return pairs, errors


def top_pairs_per_event(probs: np.ndarray, pairs: np.ndarray, n: int) -> list[list[tuple[int, int, float]]]:
    """For each event column, the n highest-probability pairs (ties broken by pair order)."""
    out = []
    for r in range(probs.shape[1]):
        order = np.argsort(-probs[:, r], kind="stable")[:n]
        out.append([(int(pairs[q, 0]), int(pairs[q, 1]), float(probs[q, r])) for q in order])
    return out


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    dataset = _load(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else fold_dir(cfg.out, 0) / "checkpoint.bin"
    result = load_checkpoint(ckpt, dataset)
    ids = dataset.drug_ids
    errors = 0
    output = Path(args.output) if args.output else ckpt.parent / "predictions.tsv"
    with open(output, "w", encoding="utf-8") as fh:
        if args.pairs:
            pairs, errors = _read_pairs(Path(args.pairs), dataset)
            probs = predict_pairs(result.model, result.graph, np.array([p[:2] for p in pairs]).reshape(-1, 2))
            fh.write("drug_id_a\tdrug_id_b\ttop1\t" + "\t".join(f"p{r}" for r in range(dataset.n_relations)) + "\n")
            for (_, _, a, b), row in zip(pairs, probs):
                fh.write(f"{a}\t{b}\t{int(row.argmax())}\t" + "\t".join(repr(float(v)) for v in row) + "\n")
        if args.top:
            known = {(min(i, j), max(i, j)) for i, j, _ in result.train_ddis}
            cand = np.array(
                [(i, j) for i in range(dataset.n_drugs) for j in range(i + 1, dataset.n_drugs) if (i, j) not in known]
            ).reshape(-1, 2)
            probs = predict_pairs(result.model, result.graph, cand)
            fh.write("# top pairs per event\n# event\trank\tdrug_id_a\tdrug_id_b\tprobability\n")
            for r, ranked in enumerate(top_pairs_per_event(probs, cand, args.top)):
                for rank, (i, j, p) in enumerate(ranked, 1):
                    fh.write(f"{r}\t{rank}\t{ids[i]}\t{ids[j]}\t{p!r}\n")
    print(f"wrote {output}" + (f" ({errors} lines skipped)" if errors else ""))
    return EXIT_DATA if errors else EXIT_OK


def cmd_synth(args) -> int:
    dataset = cold_start_dataset(args.seed) if args.preset == "cold-start" else make_synthetic_dataset(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out / "drugs.tsv", out / "ddis.tsv")
    (out / "run.cfg").write_text(
        "drugs = drugs.tsv\nddis = ddis.tsv\nout = runs\nprofile = desk\n", encoding="utf-8"
    )
    print(f"wrote {dataset.n_drugs} drugs and {dataset.n_ddis} DDIs to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ragseco", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--drugs", help="drugs TSV (overrides config)")
        p.add_argument("--ddis", help="DDI TSV (overrides config)")
        p.add_argument("--charset", help="SMILES charset file, one character per line")
        p.add_argument("--out", help="output directory")
        p.add_argument("--task", type=int, choices=(1, 2, 3))
        p.add_argument("--seed", type=int)
        p.add_argument("--profile", help="hyperparameter profile, e.g. dataset1-task1 or desk")
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter override")
        p.add_argument("--manifest", help="split manifest path (default: OUT/manifest.txt)")

    p = sub.add_parser("split", help="write a cross-validation split manifest")
    common(p)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("validate-manifest", help="check a manifest against the dataset")
    common(p)
    p.set_defaults(func=cmd_validate_manifest)

    p = sub.add_parser("train", help="train one fold (or all) and write checkpoint + loss log")
    common(p)
    p.add_argument("--fold", default="0", help="fold index or 'all'")
    p.add_argument("--jobs", type=int, default=1, help="concurrent folds with --fold all")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on its fold's test DDIs")
    common(p)
    p.add_argument("--fold", default="0", help="fold index or 'all'")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="event probabilities for drug pairs")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", help="TSV of drug_id_a, drug_id_b")
    p.add_argument("--top", type=int, default=0, help="list the top N non-train pairs per event")
    p.add_argument("--output", help="predictions file (default: next to the checkpoint)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a generated cluster-structured dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=("default", "cold-start"), default="default")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ragseco: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "predict" and not (args.pairs or args.top):
            raise ConfigError("predict needs --pairs and/or --top")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
