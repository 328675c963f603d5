"""Regenerate the shipped FCIDUMP fixtures with PySCF (not a runtime dependency).

    python tools/make_fixtures.py                      # H2/cc-pVTZ at R = 1.4008 and 10.0 bohr
    python tools/make_fixtures.py --h4 NAME "GEOM"     # extra H4/cc-pVTZ fixture, geometry in bohr

cc-pVTZ is used with Cartesian d shells (15 functions per hydrogen).  Each
file records its geometry, basis, generator versions and RHF energy in
``!`` comment lines.
"""

from __future__ import annotations

import argparse
import gzip
from pathlib import Path

import pyscf
from pyscf import ao2mo, gto, scf

from duccex.hamio import SpatialIntegrals, emit_fcidump

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "duccex" / "fixtures"


def make(name: str, atom: str, basis: str = "cc-pvtz", cart: bool = True) -> Path:
    mol = gto.M(atom=atom, unit="bohr", basis=basis, cart=cart, verbose=0)
    mf = scf.RHF(mol)
    mf.conv_tol = 1e-12
    mf.kernel()
    if not mf.converged:
        raise RuntimeError(f"RHF did not converge for {name}")
    C = mf.mo_coeff
    n = C.shape[1]
    h1 = C.T @ mf.get_hcore() @ C
    eri = ao2mo.restore(1, ao2mo.kernel(mol, C), n)
    comments = (
        f"molecule {atom}",
        f"basis {basis}{' cartesian' if cart else ''}",
        "units bohr",
        f"generator pyscf {pyscf.__version__}",
        f"rhf energy {mf.e_tot:.12f}",
    )
    ints = SpatialIntegrals(n, float(mol.energy_nuc()), h1, eri, int(mol.nelectron), 0, comments=comments)
    path = FIXTURES / f"{name}.fcidump.gz"
    # mtime=0 keeps the archive byte-stable across regenerations
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write(emit_fcidump(ints).encode())
    return path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h4", nargs=2, metavar=("NAME", "GEOM"), action="append", default=[])
    args = ap.parse_args()
    FIXTURES.mkdir(parents=True, exist_ok=True)
    jobs = [("h2_ccpvtz_r1.4008", "H 0 0 0; H 0 0 1.4008"), ("h2_ccpvtz_r10.0", "H 0 0 0; H 0 0 10.0")]
    jobs += [tuple(j) for j in args.h4]
    for name, atom in jobs:
        print(make(name, atom))


if __name__ == "__main__":
    main()
