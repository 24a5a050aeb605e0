import numpy as np
import pytest

from ragseco.data import ATTRIBUTES, Dataset, DrugRecord
from ragseco.synthetic import make_synthetic_dataset


def drug(drug_id, substructure=(), enzyme=(), target=(), smiles="CC"):
    sets = dict(zip(ATTRIBUTES, (substructure, enzyme, target)))
    return DrugRecord(drug_id, {a: frozenset(v) for a, v in sets.items()}, smiles)


def random_dataset(rng, n_drugs=12, n_relations=3, vocab=6, density=0.4):
    drugs = []
    for i in range(n_drugs):
        sets = [
            {f"{a[0]}{k}" for k in range(vocab) if rng.random() < 0.4}
            for a in ATTRIBUTES
        ]
        drugs.append(drug(f"D{i}", *sets))
    ddis = [
        (i, j, int(rng.integers(n_relations)))
        for i in range(n_drugs)
        for j in range(i + 1, n_drugs)
        if rng.random() < density
    ]
    return Dataset(drugs, ddis, n_relations)


@pytest.fixture(scope="session")
def synthetic():
    return make_synthetic_dataset(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(module.report_line(number, *results[number]))
