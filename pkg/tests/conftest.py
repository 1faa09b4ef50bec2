from __future__ import annotations

import csv
import warnings
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from polycascade.molgraph import SmilesWarning, parse_smiles

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def read_fixture(name: str) -> list[dict]:
    with open(FIXTURES / name, newline="") as fh:
        return list(csv.DictReader(fh))


def quiet_parse(smiles: str):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmilesWarning)
        return parse_smiles(smiles)


@pytest.fixture
def corpus():
    return read_fixture("smiles_corpus.csv")


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {name}: {detail}")
