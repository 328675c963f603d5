"""s-type Gaussian integrals and closed-shell Hartree-Fock.

Everything here works with spherical s Gaussians only, so every integral has a
closed form in terms of the Boys function ``F0(x) = 1/2 sqrt(pi/x) erf(sqrt(x))``.
That is enough to run hydrogen (and helium) model systems end to end without
external integral files.  Positions are in bohr, energies in Hartree.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import erf

from .ccsd import Diis
from .detspace import fix_sign
from .hamio import SpatialIntegrals

__all__ = [
    "Molecule",
    "BasisShell",
    "AoIntegrals",
    "ScfConfig",
    "ScfResult",
    "ScfError",
    "boys0",
    "available_basis_sets",
    "build_basis",
    "integrals_s",
    "rhf",
    "mo_transform",
]

log = logging.getLogger(__name__)

ELEMENTS = {"H": 1, "He": 2}
_SYMBOL = {z: s for s, z in ELEMENTS.items()}


class ScfError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class Molecule:
    """Point nuclei ``(Z, (x, y, z))`` in bohr plus a total charge."""

    atoms: tuple[tuple[int, tuple[float, float, float]], ...]
    charge: int = 0

    def __post_init__(self):
        atoms = tuple((int(z), tuple(float(c) for c in pos)) for z, pos in self.atoms)
        for z, pos in atoms:
            if z <= 0 or len(pos) != 3 or not np.all(np.isfinite(pos)):
                raise ValueError(f"invalid atom {(z, pos)}")
        object.__setattr__(self, "atoms", atoms)
        if self.n_elec < 0:
            raise ValueError("charge exceeds the total nuclear charge")

    @classmethod
    def from_string(cls, text: str, charge: int = 0) -> "Molecule":
        """Parse ``"H 0 0 0; H 0 0 1.4"`` (bohr)."""
        atoms = []
        for part in re.split(r"[;\n]", text):
            tok = part.split()
            if not tok:
                continue
            if len(tok) != 4 or tok[0] not in ELEMENTS:
                raise ValueError(f"cannot parse atom {part.strip()!r}")
            atoms.append((ELEMENTS[tok[0]], tuple(float(x) for x in tok[1:])))
        return cls(tuple(atoms), charge)

    @classmethod
    def hydrogen_chain(cls, n: int, spacing: float) -> "Molecule":
        return cls(tuple((1, (0.0, 0.0, k * spacing)) for k in range(n)))

    @property
    def n_elec(self) -> int:
        return sum(z for z, _ in self.atoms) - self.charge

    @property
    def coords(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float).reshape(-1, 3)

    @property
    def charges(self) -> np.ndarray:
        return np.array([z for z, _ in self.atoms], dtype=float)

    def nuclear_repulsion(self) -> float:
        R, Z = self.coords, self.charges
        e = 0.0
        for a in range(len(Z)):
            for b in range(a):
                e += Z[a] * Z[b] / np.linalg.norm(R[a] - R[b])
        return float(e)

    def to_string(self) -> str:
        return "; ".join(f"{_SYMBOL.get(z, z)} {x!r} {y!r} {w!r}" for z, (x, y, w) in self.atoms)


def _prim_norm(alpha) -> np.ndarray:
    return (2.0 * np.asarray(alpha) / np.pi) ** 0.75


@dataclass(frozen=True)
class BasisShell:
    """Contracted s function; ``coefficients`` multiply normalized primitives."""

    center: tuple[float, float, float]
    exponents: tuple[float, ...]
    coefficients: tuple[float, ...]

    def __post_init__(self):
        if len(self.exponents) < 1 or len(self.exponents) != len(self.coefficients):
            raise ValueError("a shell needs matching, non-empty exponent and coefficient lists")
        if min(self.exponents) <= 0:
            raise ValueError("exponents must be positive")

    @property
    def weights(self) -> np.ndarray:
        """Raw-primitive weights giving a unit-norm contracted function."""
        a = np.array(self.exponents)
        d = np.array(self.coefficients) * _prim_norm(a)
        p = a[:, None] + a[None, :]
        s = float(d @ ((np.pi / p) ** 1.5) @ d)
        return d / np.sqrt(s)


@lru_cache(maxsize=None)
def _basis_table() -> dict[tuple[str, str], list[list[tuple[float, float]]]]:
    text = resources.files("duccex.data").joinpath("basis_sets.txt").read_text()
    table: dict = defaultdict(lambda: defaultdict(list))
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, el, shell, a, c = line.split()
        table[(name.lower(), el)][int(shell)].append((float(a), float(c)))
    return {k: [v[i] for i in sorted(v)] for k, v in table.items()}


def available_basis_sets() -> list[str]:
    return sorted({name for name, _ in _basis_table()})


def build_basis(molecule: Molecule, name: str) -> list[BasisShell]:
    """Shells for every atom, in atom order then shell order."""
    table = _basis_table()
    shells = []
    for z, pos in molecule.atoms:
        key = (name.lower(), _SYMBOL.get(z, "?"))
        if key not in table:
            raise KeyError(f"basis {name!r} has no entry for Z={z}")
        for prims in table[key]:
            a, c = zip(*prims)
            shells.append(BasisShell(pos, a, c))
    return shells


def boys0(x) -> np.ndarray:
    """``F0(x)``; the series branch avoids cancellation near zero."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-8
    xs = np.where(small, 1.0, x)
    out = 0.5 * np.sqrt(np.pi / xs) * erf(np.sqrt(xs))
    return np.where(small, 1.0 - x / 3.0 + x * x / 10.0, out)


@dataclass(frozen=True, eq=False)
class AoIntegrals:
    S: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    eri: np.ndarray = field(repr=False)
    e_nuc: float = 0.0

    @property
    def n_ao(self) -> int:
        return self.S.shape[0]

    @property
    def hcore(self) -> np.ndarray:
        return self.T + self.V


def integrals_s(molecule: Molecule, shells: list[BasisShell]) -> AoIntegrals:
    """Overlap, kinetic, nuclear attraction and ERIs ``(ab|cd)`` over contracted shells."""
    owner = np.concatenate([[i] * len(s.exponents) for i, s in enumerate(shells)]).astype(int)
    a = np.concatenate([s.exponents for s in shells])
    w = np.concatenate([s.weights for s in shells])
    A = np.concatenate([np.tile(s.center, (len(s.exponents), 1)) for s in shells]).reshape(-1, 3)
    n = len(shells)
    C = np.zeros((n, len(a)))
    C[owner, np.arange(len(a))] = w

    p = a[:, None] + a[None, :]
    mu = a[:, None] * a[None, :] / p
    R2 = ((A[:, None, :] - A[None, :, :]) ** 2).sum(-1)
    K = np.exp(-mu * R2)
    P = (a[:, None, None] * A[:, None, :] + a[None, :, None] * A[None, :, :]) / p[..., None]

    s_prim = (np.pi / p) ** 1.5 * K
    t_prim = mu * (3.0 - 2.0 * mu * R2) * s_prim
    v_prim = np.zeros_like(s_prim)
    for Z, Rc in zip(molecule.charges, molecule.coords):
        PC2 = ((P - Rc) ** 2).sum(-1)
        v_prim -= Z * 2.0 * np.pi / p * K * boys0(p * PC2)

    # primitive ERIs over unique bra/ket pairs, then contraction to shells
    m = len(a)
    iu = np.triu_indices(m)
    pp, KK, PP = p[iu], K[iu], P[iu]
    pq = pp[:, None] * pp[None, :]
    alpha = pq / (pp[:, None] + pp[None, :])
    PQ2 = ((PP[:, None, :] - PP[None, :, :]) ** 2).sum(-1)
    g = 2.0 * np.pi**2.5 / (pq * np.sqrt(pp[:, None] + pp[None, :])) * KK[:, None] * KK[None, :] * boys0(alpha * PQ2)
    i, j = iu
    tmp = np.zeros((m, m, len(pp)))
    tmp[i, j] = g
    tmp[j, i] = g
    full = np.zeros((m, m, m, m))
    full[:, :, i, j] = tmp
    full[:, :, j, i] = tmp
    eri = np.einsum("ai,bj,ck,dl,ijkl->abcd", C, C, C, C, full, optimize=True)
    return AoIntegrals(C @ s_prim @ C.T, C @ t_prim @ C.T, C @ v_prim @ C.T, eri, molecule.nuclear_repulsion())


@dataclass(frozen=True)
class ScfConfig:
    max_iter: int = 100
    conv_tol: float = 1e-10
    diis_depth: int = 8


@dataclass(frozen=True, eq=False)
class ScfResult:
    """Canonical RHF solution; ``C`` maps AOs (rows) to MOs (columns)."""

    C: np.ndarray = field(repr=False)
    mo_energy: np.ndarray
    e_total: float
    converged: bool
    n_iter: int
    n_elec: int
    density: np.ndarray = field(repr=False)

    @property
    def n_docc(self) -> int:
        return self.n_elec // 2


def _orthogonalizer(S: np.ndarray, lindep: float = 1e-10) -> np.ndarray:
    s, U = np.linalg.eigh(S)
    keep = s > lindep * s.max()
    if not keep.all():
        log.warning("dropping %d linearly dependent AO combinations", int((~keep).sum()))
    return U[:, keep] / np.sqrt(s[keep])


def _fock(h, eri, D):
    J = np.einsum("pqrs,rs->pq", eri, D)
    K = np.einsum("prqs,rs->pq", eri, D)
    return h + J - 0.5 * K


def _atomic_guess(molecule: Molecule, shells: list[BasisShell], ao: AoIntegrals) -> np.ndarray:
    """Superposition of atomic densities: each atom's lowest orbital of its
    own (h, S) block holds Z electrons; rescaled to the molecular count."""
    centers = np.array([s.center for s in shells], dtype=float).reshape(len(shells), 3)
    D = np.zeros((ao.n_ao, ao.n_ao))
    for Z, pos in zip(molecule.charges, molecule.coords):
        idx = np.flatnonzero(np.all(np.abs(centers - pos) < 1e-12, axis=1))
        if len(idx) == 0:
            continue
        blk = np.ix_(idx, idx)
        S_a = ao.S[blk]
        X_a = _orthogonalizer(S_a)
        _, U = np.linalg.eigh(X_a.T @ ao.hcore[blk] @ X_a)
        c = X_a @ U[:, 0]
        D[blk] += min(Z, 2.0) * np.outer(c, c)
    total = float(np.sum(D * ao.S))
    return D * (molecule.n_elec / total) if total > 0 else D


def _bonding_first(e, C, S, n_docc, tol=1e-9):
    """Inside a degenerate cluster straddling the Fermi level, put the
    nodeless combination first.  Without this, exactly degenerate levels at
    dissociation come back localized and the occupied one is ionic."""
    if n_docc == 0 or n_docc >= len(e) or e[n_docc] - e[n_docc - 1] > tol:
        return C
    lo = hi = n_docc - 1
    while lo > 0 and e[n_docc - 1] - e[lo - 1] <= tol:
        lo -= 1
    while hi + 1 < len(e) and e[hi + 1] - e[n_docc - 1] <= tol:
        hi += 1
    blk = C[:, lo:hi + 1]
    g = blk.T @ S @ np.ones(len(S))
    if np.linalg.norm(g) < 1e-12:
        return C
    Q, _ = np.linalg.qr(np.column_stack([g, np.eye(len(g))]))
    C = C.copy()
    C[:, lo:hi + 1] = blk @ Q[:, :len(g)]
    return C


def _diag(F, X, n_docc, S=None):
    e, Cp = np.linalg.eigh(X.T @ F @ X)
    C = X @ Cp
    if S is not None:
        C = _bonding_first(e, C, S, n_docc)
    C = np.column_stack([fix_sign(c) for c in C.T])
    D = 2.0 * C[:, :n_docc] @ C[:, :n_docc].T
    return e, C, D


def rhf(molecule: Molecule, shells: list[BasisShell] | None = None, config: ScfConfig | None = None,
        ao: AoIntegrals | None = None) -> tuple[ScfResult, AoIntegrals]:
    """Closed-shell SCF with Fock-matrix DIIS.

    The start is a superposition of atomic densities when ``shells`` are
    given (this keeps stretched bonds on the symmetric, non-ionic branch
    where the core-Hamiltonian guess is degenerate), else the core guess.

    Converged when ``max|FDS - SDF| < conv_tol``.  Returns the result and the
    AO integrals it was computed from.
    """
    config = config or ScfConfig()
    n_elec = molecule.n_elec
    if n_elec % 2:
        raise ValueError(f"restricted Hartree-Fock needs an even electron count (got {n_elec})")
    if ao is None:
        ao = integrals_s(molecule, shells)
    n_docc = n_elec // 2
    if n_docc > ao.n_ao:
        raise ValueError("more doubly occupied orbitals than basis functions")
    h, S, X = ao.hcore, ao.S, _orthogonalizer(ao.S)
    if shells is not None and n_elec > 0:
        e, C, D = _diag(_fock(h, ao.eri, _atomic_guess(molecule, shells, ao)), X, n_docc, S)
    else:
        e, C, D = _diag(h, X, n_docc, S)
    diis = Diis(config.diis_depth)
    e_tot, err_max = 0.0, np.inf
    for it in range(1, config.max_iter + 1):
        F = _fock(h, ao.eri, D)
        e_tot = 0.5 * float(np.sum(D * (h + F))) + ao.e_nuc
        err = F @ D @ S - S @ D @ F
        err_max = float(np.abs(err).max())
        log.debug("scf iter %3d  E %.12f  max|FDS-SDF| %.3e", it, e_tot, err_max)
        if err_max < config.conv_tol:
            e, C, _ = _diag(F, X, n_docc, S)
            return ScfResult(C, e, e_tot, True, it, n_elec, D), ao
        diis.push(F.ravel(), (X.T @ err @ X).ravel())
        F = diis.extrapolate().reshape(F.shape)
        e, C, D = _diag(F, X, n_docc, S)
    last = ScfResult(C, e, e_tot, False, config.max_iter, n_elec, D)
    raise ScfError(f"SCF not converged in {config.max_iter} iterations (max|FDS-SDF| = {err_max:.3e})", last)


def mo_transform(scf: ScfResult, ao: AoIntegrals, comments: tuple[str, ...] = ()) -> SpatialIntegrals:
    """AO -> MO integrals, transforming the ERI one index at a time."""
    C = scf.C
    h = C.T @ ao.hcore @ C
    g = np.einsum("pa,pqrs->aqrs", C, ao.eri, optimize=True)
    g = np.einsum("qb,aqrs->abrs", C, g, optimize=True)
    g = np.einsum("rc,abrs->abcs", C, g, optimize=True)
    g = np.einsum("sd,abcs->abcd", C, g, optimize=True)
    # restore exact permutational symmetry lost to rounding
    g = (g + g.transpose(1, 0, 2, 3)) / 2
    g = (g + g.transpose(0, 1, 3, 2)) / 2
    g = (g + g.transpose(2, 3, 0, 1)) / 2
    h = (h + h.T) / 2
    return SpatialIntegrals(C.shape[1], ao.e_nuc, h, g, scf.n_elec, 0, tuple(comments))
