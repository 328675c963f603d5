from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np
import pytest

from duccex.hamio import SpatialIntegrals, read_fcidump, to_spin_orbital
from duccex.minint import Molecule, build_basis, mo_transform, rhf

# Near-square trapezoidal H4 analog (bohr): two H2 units of bond 2.0 stacked
# 2.0 apart, the upper one widened by 0.001.  Not the literature geometry.
H4_TRAPEZOID = "H -1 0 0; H 1 0 0; H -1.001 2 0; H 1.001 2 0"
H4_LINEAR = "H 0 0 0; H 0 0 1.8; H 0 0 3.6; H 0 0 5.4"


@lru_cache(maxsize=None)
def molecular_integrals(geometry: str, basis: str) -> SpatialIntegrals:
    mol = Molecule.from_string(geometry)
    scf, ao = rhf(mol, build_basis(mol, basis))
    return mo_transform(scf, ao)


def h2_geometry(R: float) -> str:
    return f"H 0 0 0; H 0 0 {R}"


def fixture_path(name: str):
    return resources.files("duccex") / "fixtures" / f"{name}.fcidump.gz"


@lru_cache(maxsize=None)
def fixture_integrals(name: str) -> SpatialIntegrals:
    path = fixture_path(name)
    if not path.is_file():
        pytest.skip(f"fixture {name} not shipped")
    return read_fcidump(path)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def h2_sto3g():
    return to_spin_orbital(molecular_integrals(h2_geometry(1.4008), "sto-3g"))


@pytest.fixture(scope="session")
def h2_631g():
    return to_spin_orbital(molecular_integrals(h2_geometry(1.4008), "6-31g"))


@pytest.fixture(scope="session")
def h4_sto3g():
    return to_spin_orbital(molecular_integrals(H4_TRAPEZOID, "sto-3g"))


@pytest.fixture(scope="session")
def h4_linear_sto3g():
    return to_spin_orbital(molecular_integrals(H4_LINEAR, "sto-3g"))


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
