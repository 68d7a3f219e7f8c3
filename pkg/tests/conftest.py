import numpy as np
import pytest

from helpers import ACCEPTANCE_RESULTS, N_CRITERIA, random_alignment
from vbpimix.tree import TaxonSet, default_taxa, parse_newick


@pytest.fixture
def abcd():
    return TaxonSet("ABCD")


@pytest.fixture
def quartet(abcd):
    t, _ = parse_newick("((A,B),C,D);", abcd)
    return t


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_alignment(rng):
    return random_alignment(default_taxa(5), 30, rng)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE_RESULTS:
            ok, detail = ACCEPTANCE_RESULTS[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL  (no result: deselected or errored)")
