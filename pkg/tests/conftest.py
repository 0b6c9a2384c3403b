import numpy as np
import pytest

from ssmtori.model import assemble_first_order, build_coupled_oscillators
from ssmtori.rom import CartesianROM
from ssmtori.spectral import eig_pair, select_master
from ssmtori.ssm import compute_ssm

# Example-1 forcing amplitude used throughout (see the decisions ledger).
F1 = 2.0


@pytest.fixture(scope="session")
def ex1():
    return build_coupled_oscillators(f1=F1)


@pytest.fixture(scope="session")
def ex1_fo(ex1):
    return assemble_first_order(ex1)


@pytest.fixture(scope="session")
def ex1_master(ex1_fo):
    return select_master(eig_pair(ex1_fo.A, ex1_fo.B, 2), [0, 1])


@pytest.fixture(scope="session")
def ex1_models(ex1_fo, ex1_master):
    """Reduced models of orders 3, 5 and 7 keyed by order."""
    return {k: compute_ssm(ex1_fo, ex1_master, k, 1.0) for k in (3, 5, 7)}


@pytest.fixture(scope="session")
def rom3(ex1_models):
    return CartesianROM(ex1_models[3])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One summary line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
