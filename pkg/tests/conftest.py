import textwrap

import pytest

from koike import DegeneracyFamily
from ledger import RunLedger
from profiles import Grid, Profile


def ks_family(sigma: float, validate: bool = True) -> DegeneracyFamily:
    """lambda2 = 1, lambda3 = exp(-2/|x|^sigma) on R^1"""
    power = "" if sigma == 1 else f"^{sigma}"
    return DegeneracyFamily(
        1, 3, 3,
        (
            Profile.from_text("1", 1, at0=1.0, name="lambda2"),
            Profile.from_text(f"exp(-2/abs(x1){power})", 1, at0=0.0, name="lambda3"),
        ),
        validate=validate,
    )


@pytest.fixture
def fails_family():
    return ks_family(1.0)


@pytest.fixture
def holds_family():
    return ks_family(0.5)


@pytest.fixture
def line_grid():
    return Grid(1, 1.0, 401)


@pytest.fixture
def write(tmp_path):
    """Write a dedented text file under tmp_path and return its path"""
    def _write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text).lstrip(), encoding="utf-8")
        return str(path)
    return _write


@pytest.fixture
def memory_ledger():
    ledger = RunLedger("sqlite://")
    assert ledger.is_available()
    return ledger
