import numpy as np
import pytest

from ragseco.cli import main, top_pairs_per_event
from ragseco.data import Dataset, SplitPlan, load_dataset, write_dataset
from ragseco.metrics import METRIC_KEYS, read_metrics
from ragseco.synthetic import make_synthetic_dataset
from ragseco.train import load_checkpoint, predict_pairs

from conftest import drug


def write_config(root, ds, **extra):
    write_dataset(ds, root / "drugs.tsv", root / "ddis.tsv")
    lines = ["drugs = drugs.tsv", "ddis = ddis.tsv", "out = runs", "profile = desk"]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    (root / "run.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(root / "run.cfg")


def toy_twenty():
    drugs = [drug(f"D{i}", {f"s{i % 3}"}, {f"e{i % 2}"}, {"t"}) for i in range(10)]
    ddis = [(i, j, (i + j) % 2) for i in range(10) for j in range(i + 1, 10)][:20]
    return Dataset(drugs, ddis, 2)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root, make_synthetic_dataset(seed=0), te=30)
    assert main(["split", "--config", cfg, "--task", "1"]) == 0
    assert main(["train", "--config", cfg]) == 0
    return root, cfg


class TestSplit:
    def test_twenty_ddis_five_folds(self, tmp_path, capsys):
        cfg = write_config(tmp_path, toy_twenty())
        assert main(["split", "--config", cfg, "--task", "1"]) == 0
        plan = SplitPlan.from_text((tmp_path / "runs" / "manifest.txt").read_text())
        assert [len(f.test) for f in plan.folds] == [4] * 5
        assert "fold 4: train 16 test 4" in capsys.readouterr().out

    def test_same_seed_same_bytes(self, tmp_path):
        cfg = write_config(tmp_path, make_synthetic_dataset(seed=1))
        main(["split", "--config", cfg, "--task", "2", "--seed", "7", "--manifest", str(tmp_path / "a.txt")])
        main(["split", "--config", cfg, "--task", "2", "--seed", "7", "--manifest", str(tmp_path / "b.txt")])
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_task3_manifest_validates(self, tmp_path, capsys):
        cfg = write_config(tmp_path, make_synthetic_dataset(seed=1))
        assert main(["split", "--config", cfg, "--task", "3"]) == 0
        assert main(["validate-manifest", "--config", cfg]) == 0
        manifest = tmp_path / "runs" / "manifest.txt"
        plan = SplitPlan.from_text(manifest.read_text())
        ds = load_dataset(tmp_path / "drugs.tsv", tmp_path / "ddis.tsv")
        new = set(plan.folds[0].new_drugs)
        plan.folds[0].train.append(next(q for q, (i, j, _) in enumerate(ds.ddis) if i in new and j not in new))
        manifest.write_text(plan.to_text())
        assert main(["validate-manifest", "--config", cfg]) == 2
        assert "train DDIs touch new drugs" in capsys.readouterr().err

    def test_parse_error_reports_position(self, tmp_path, capsys):
        cfg = write_config(tmp_path, toy_twenty())
        (tmp_path / "drugs.tsv").write_text("drug_id\tsubstructure\tenzyme\ttarget\tsmiles\nD0\tonly-two\n")
        assert main(["split", "--config", cfg]) == 2
        assert "drugs.tsv:2:" in capsys.readouterr().err


class TestTrain:
    def test_smoke_writes_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, toy_twenty(), te=1)
        assert main(["train", "--config", cfg]) == 0
        out = tmp_path / "runs" / "fold-0"
        assert (out / "checkpoint.bin").stat().st_size > 0
        assert len((out / "loss.log").read_text().splitlines()) > 1
        assert (tmp_path / "runs" / "manifest.txt").exists()

    def test_contrastive_ablation_log_columns(self, tmp_path):
        cfg = write_config(tmp_path, toy_twenty(), te=2)
        assert main(["train", "--config", cfg, "--variant=-C"]) == 0
        rows = [ln.split("\t") for ln in (tmp_path / "runs" / "fold-0" / "loss.log").read_text().splitlines()[1:]]
        assert rows and all(float(r[4]) == 0.0 and float(r[5]) == 0.0 for r in rows)
        assert all(r[2] == r[3] for r in rows)

    def test_rerun_identical(self, tmp_path):
        cfg = write_config(tmp_path, toy_twenty(), te=2)
        out = tmp_path / "runs" / "fold-0"
        main(["train", "--config", cfg, "--seed", "3"])
        first = (out / "loss.log").read_bytes(), (out / "checkpoint.bin").read_bytes()
        main(["train", "--config", cfg, "--seed", "3"])
        assert ((out / "loss.log").read_bytes(), (out / "checkpoint.bin").read_bytes()) == first

    def test_all_folds_concurrently_match_sequential(self, tmp_path):
        cfg = write_config(tmp_path, toy_twenty(), te=1)
        assert main(["train", "--config", cfg, "--fold", "all", "--jobs", "2", "--out", str(tmp_path / "par")]) == 0
        assert main(["train", "--config", cfg, "--fold", "all", "--out", str(tmp_path / "seq")]) == 0
        for k in range(5):
            a = (tmp_path / "par" / f"fold-{k}" / "checkpoint.bin").read_bytes()
            assert a == (tmp_path / "seq" / f"fold-{k}" / "checkpoint.bin").read_bytes()

    def test_nan_loss_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, toy_twenty(), te=3, lr="1e300")
        with np.errstate(all="ignore"):
            assert main(["train", "--config", cfg, "--variant=-C"]) == 3
        assert "last good batch" in capsys.readouterr().err

    @pytest.mark.parametrize("override", ["t_pos=0.1", "t_neg=0.95", "lambda=0", "lam=-1"])
    def test_invalid_hyperparameters_rejected_before_compute(self, tmp_path, override):
        cfg = write_config(tmp_path, toy_twenty(), te=1)
        assert main(["train", "--config", cfg, "--set", override]) == 1
        assert not (tmp_path / "runs").exists()

    def test_usage_error_exit_code(self, capsys):
        assert main(["train", "--variant=-Q"]) == 1
        assert main([]) == 1

    def test_missing_data_paths(self, tmp_path):
        (tmp_path / "run.cfg").write_text("drugs = nowhere.tsv\nddis = nowhere.tsv\n")
        assert main(["split", "--config", str(tmp_path / "run.cfg")]) == 1


class TestEvaluate:
    def test_separable_run_scores_high(self, trained_run, capsys):
        root, cfg = trained_run
        assert main(["evaluate", "--config", cfg]) == 0
        metrics = read_metrics(root / "runs" / "fold-0" / "metrics.txt")
        assert set(metrics) == set(METRIC_KEYS)
        assert metrics["acc"] >= 0.95
        assert capsys.readouterr().out.startswith("fold 0: acc=")

    def test_missing_checkpoint(self, trained_run, tmp_path):
        _, cfg = trained_run
        assert main(["evaluate", "--config", cfg, "--checkpoint", str(tmp_path / "none.bin")]) != 0

    def test_shape_mismatch_described(self, trained_run, tmp_path, capsys):
        root, _ = trained_run
        other = write_config(tmp_path, make_synthetic_dataset(n_drugs=20, seed=0))
        main(["split", "--config", other])
        code = main(["evaluate", "--config", other, "--checkpoint", str(root / "runs" / "fold-0" / "checkpoint.bin")])
        assert code == 2
        assert "30 drugs" in capsys.readouterr().err


class TestPredict:
    def test_single_pair(self, trained_run, tmp_path):
        _, cfg = trained_run
        (tmp_path / "pairs.tsv").write_text("D000\tD007\n")
        out = tmp_path / "pred.tsv"
        assert main(["predict", "--config", cfg, "--pairs", str(tmp_path / "pairs.tsv"), "--output", str(out)]) == 0
        header, row = out.read_text().splitlines()
        cells = row.split("\t")
        probs = np.array([float(c) for c in cells[3:]])
        assert cells[:2] == ["D000", "D007"] and len(probs) == 4
        assert abs(probs.sum() - 1) <= 1e-9
        assert int(cells[2]) == probs.argmax()

    def test_swapped_pair_identical(self, trained_run, tmp_path):
        _, cfg = trained_run
        (tmp_path / "pairs.tsv").write_text("D003\tD011\nD011\tD003\n")
        out = tmp_path / "pred.tsv"
        main(["predict", "--config", cfg, "--pairs", str(tmp_path / "pairs.tsv"), "--output", str(out)])
        a, b = (ln.split("\t")[2:] for ln in out.read_text().splitlines()[1:])
        assert a == b

    def test_unknown_id_skipped(self, trained_run, tmp_path, capsys):
        _, cfg = trained_run
        (tmp_path / "pairs.tsv").write_text("D000\tNOPE\nD001\tD002\n")
        out = tmp_path / "pred.tsv"
        assert main(["predict", "--config", cfg, "--pairs", str(tmp_path / "pairs.tsv"), "--output", str(out)]) == 2
        assert "pairs.tsv:1: unknown drug id 'NOPE'" in capsys.readouterr().err
        assert len(out.read_text().splitlines()) == 2

    def test_top_n_matches_brute_force(self, trained_run, tmp_path):
        root, cfg = trained_run
        out = tmp_path / "top.tsv"
        assert main(["predict", "--config", cfg, "--top", "10", "--output", str(out)]) == 0
        ds = load_dataset(root / "drugs.tsv", root / "ddis.tsv")
        result = load_checkpoint(root / "runs" / "fold-0" / "checkpoint.bin", ds)
        train = {(min(i, j), max(i, j)) for i, j, _ in result.train_ddis}
        cand = [(i, j) for i in range(ds.n_drugs) for j in range(i + 1, ds.n_drugs) if (i, j) not in train]
        probs = predict_pairs(result.model, result.graph, np.array(cand))
        rows = [ln.split("\t") for ln in out.read_text().splitlines() if not ln.startswith("#")]
        for r in range(ds.n_relations):
            scored = sorted(((probs[q, r], q) for q in range(len(cand))), key=lambda t: (-t[0], t[1]))[:10]
            expect = [(ds.drug_ids[cand[q][0]], ds.drug_ids[cand[q][1]]) for _, q in scored]
            got = [(row[2], row[3]) for row in rows if int(row[0]) == r]
            assert got == expect

    def test_predict_needs_input(self, trained_run):
        _, cfg = trained_run
        assert main(["predict", "--config", cfg]) == 1


def test_top_pairs_helper():
    probs = np.array([[0.1, 0.9], [0.7, 0.3], [0.7, 0.2]])
    pairs = np.array([[0, 1], [0, 2], [1, 2]])
    assert top_pairs_per_event(probs, pairs, 2) == [[(0, 2, 0.7), (1, 2, 0.7)], [(0, 1, 0.9), (0, 2, 0.3)]]


def test_synth_command(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--preset", "cold-start", "--seed", "2"]) == 0
    ds = load_dataset(tmp_path / "d" / "drugs.tsv", tmp_path / "d" / "ddis.tsv")
    assert ds.n_drugs == 30
    assert main(["split", "--config", str(tmp_path / "d" / "run.cfg"), "--task", "3"]) == 0
