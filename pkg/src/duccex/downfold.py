"""State-specific external generator and the single-commutator CAS Hamiltonian.

``S_ext(K)`` is read off the normalized EOMCCSD(A) vector
``N (P+Q1+Q2) R_K e^{T} |Phi>``: its singles part is ``R0 T1 + R1`` and its
doubles part is ``R0 (T2 + T1^2/2) + R1 T1 + R2``, so keeping only the
coefficients whose excitation touches an inactive spin orbital gives the
external amplitudes.  ``sigma = S - S^dagger`` then enters
``P_CAS (H + H sigma - sigma H) P_CAS``, which is assembled column by column
in the full determinant sector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ccsd import ClusterAmplitudes
from .detspace import (
    DeterminantSpace,
    FermionOperator,
    Sector,
    apply_operator,
    eig_sym,
    enumerate_space,
    hamiltonian_operator,
)
from .detspace.excitations import ExcitationMap, det_label, parse_excitation, resolve_excitation
from .eomccsd import EomState, eomccsd_a_vector, top_determinants
from .hamio import ActiveSpace, SpinOrbitalHamiltonian, classify_active

__all__ = [
    "SigmaExt",
    "EffectiveHamiltonian",
    "EffectiveSpectrum",
    "DownfoldError",
    "extract_sigma_ext",
    "build_effective",
    "diagonalize_effective",
    "export_effective",
    "load_effective",
]

ASYMMETRY_LIMIT = 1e-8


class DownfoldError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SigmaExt:
    """External amplitudes of ``S_ext(K)`` in operator convention.

    ``singles`` rows are ``(i, a)`` and ``doubles`` rows ``(i, j, a, b)``
    relative to ``reference``; every row touches an inactive spin orbital.
    """

    n_so: int
    reference: tuple[int, ...]
    singles: np.ndarray = field(repr=False)
    s1: np.ndarray = field(repr=False)
    doubles: np.ndarray = field(repr=False)
    s2: np.ndarray = field(repr=False)
    state: int = 0
    n_k_a: float = 1.0

    @property
    def is_empty(self) -> bool:
        return len(self.s1) == 0 and len(self.s2) == 0

    def s_operator(self) -> FermionOperator:
        """``S_ext`` as a pure-excitation operator."""
        one = np.zeros((self.n_so, self.n_so))
        if len(self.s1):
            one[self.singles[:, 1], self.singles[:, 0]] = self.s1
        two = np.zeros((self.n_so,) * 4)
        if len(self.s2):
            i, j, a, b = self.doubles.T
            # a+_a a+_b a_j a_i, with a<b and i<j, is the (p,q,r,s)=(a,b,i,j) term
            two[a, b, i, j] = self.s2
        op = FermionOperator.from_tensor(self.n_so, 0.0, one, two)
        return FermionOperator(self.n_so, 0.0, op.one, op.two, excitation=True)

    def operator(self) -> FermionOperator:
        """Anti-Hermitian ``sigma_ext = S_ext - S_ext^dagger``."""
        s = self.s_operator()
        return s - s.adjoint()


def _external_masks(exmap: ExcitationMap, active: ActiveSpace, n_orb: int):
    flags = classify_active(active, n_orb)
    ext1 = ~flags[exmap.singles].all(axis=1) if exmap.n1 else np.zeros(0, bool)
    ext2 = ~flags[exmap.doubles].all(axis=1) if exmap.n2 else np.zeros(0, bool)
    return ext1, ext2


def extract_sigma_ext(state: EomState, amps: ClusterAmplitudes, active: ActiveSpace,
                      sd_space: DeterminantSpace | None = None) -> SigmaExt:
    """External part of the normalized EOMCCSD(A) vector as ``S_ext(K)``."""
    sector = amps.space.sector
    sd = sd_space or enumerate_space(sector, "sd", reference=amps.reference)
    psi, nka = eomccsd_a_vector(state, amps, sd)
    exmap = ExcitationMap.build(sd, amps.reference)
    a1, a2 = exmap.read(psi * nka)
    ext1, ext2 = _external_masks(exmap, active, sector.n_orb)
    return SigmaExt(sector.n_so, amps.reference, exmap.singles[ext1], a1[ext1],
                    exmap.doubles[ext2], a2[ext2], state.root, nka)


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    """Symmetric CAS matrix of ``H`` (order 0) or ``H + [H, sigma_ext]`` (order 1)."""

    space: DeterminantSpace
    matrix: np.ndarray = field(repr=False)
    active: ActiveSpace
    order: int
    state: int | None = None
    energies: dict = field(default_factory=dict)
    asymmetry: float = 0.0

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def reference(self) -> tuple[int, ...]:
        return self.space.reference

    def labels(self) -> list[str]:
        return [det_label(o, self.reference) for o in self.space.occ]


def build_effective(H: SpinOrbitalHamiltonian, sigma: SigmaExt | None, active: ActiveSpace,
                    sector: Sector | None = None, reference=None, chunk: int = 64,
                    energies: dict | None = None) -> EffectiveHamiltonian:
    """``P_CAS (H + H sigma - sigma H) P_CAS``, Hermitized.

    With ``sigma`` of None (or empty) the result is the bare CAS block.
    """
    if sector is None:
        sector = Sector(H.n_so, H.n_elec, H.spatial.ms2)
    if reference is None and sigma is not None:
        reference = sigma.reference
    active.validate(sector.n_orb)
    cas = enumerate_space(sector, "cas", active=active, reference=reference)
    hop = hamiltonian_operator(H)
    bare = sigma is None or sigma.is_empty
    order = 0 if sigma is None else 1
    n = cas.dim
    M = np.zeros((n, n))
    if bare:
        for c0 in range(0, n, chunk):
            c1 = min(n, c0 + chunk)
            E = np.zeros((n, c1 - c0))
            E[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
            M[:, c0:c1] = apply_operator(hop, E, cas, cas)
    else:
        full = enumerate_space(sector, "full", reference=cas.reference)
        pos = full.index_ranks(cas.ranks)
        sig = sigma.operator()
        for c0 in range(0, n, chunk):
            c1 = min(n, c0 + chunk)
            E = np.zeros((full.dim, c1 - c0))
            E[pos[c0:c1], np.arange(c1 - c0)] = 1.0
            HE = apply_operator(hop, E, full)
            SE = apply_operator(sig, E, full)
            M[:, c0:c1] = (HE + apply_operator(hop, SE, full) - apply_operator(sig, HE, full))[pos]
    asym = float(np.abs(M - M.T).max(initial=0.0))
    if asym > ASYMMETRY_LIMIT:
        raise DownfoldError(f"effective Hamiltonian asymmetry {asym:.3e} exceeds {ASYMMETRY_LIMIT:g}")
    M = 0.5 * (M + M.T)
    return EffectiveHamiltonian(cas, M, active, order, None if sigma is None else sigma.state,
                                dict(energies or {}), asym)


@dataclass(frozen=True, eq=False)
class EffectiveSpectrum:
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    signatures: tuple[tuple[tuple[str, float], ...], ...] = ()


def diagonalize_effective(heff: EffectiveHamiltonian, n_roots: int | None = None,
                          n_top: int = 5) -> EffectiveSpectrum:
    w, V = eig_sym(heff.matrix, n_roots)
    sigs = tuple(top_determinants(V[:, k], heff.space, heff.reference, n_top) for k in range(len(w)))
    return EffectiveSpectrum(w, V, sigs)


# --------------------------------------------------------------------------
# Plain-text persistence
# --------------------------------------------------------------------------

_MAGIC = "# duccex effective hamiltonian v1"


def export_effective(heff: EffectiveHamiltonian, path) -> Path:
    """Write header, determinant labels and the dense matrix (row-major).

    Layout::

        # duccex effective hamiltonian v1
        n_so = 8
        ...                      (key = value header)
        [determinants]
        ref
        1a->2a
        ...
        [matrix]
        <dim rows of dim values>
    """
    sec = heff.space.sector
    lines = [
        _MAGIC,
        f"n_so = {sec.n_so}",
        f"n_elec = {sec.n_elec}",
        f"ms2 = {sec.ms2}",
        f"reference = {','.join(str(s) for s in heff.reference)}",
        f"active = {','.join(str(p) for p in heff.active.active_spatial)}",
        f"state = {'' if heff.state is None else heff.state}",
        f"order = {heff.order}",
        f"asymmetry = {heff.asymmetry!r}",
        f"dim = {heff.dim}",
    ]
    for k in sorted(heff.energies):
        lines.append(f"energy.{k} = {float(heff.energies[k])!r}")
    lines.append("[determinants]")
    lines.extend(heff.labels())
    lines.append("[matrix]")
    for row in heff.matrix:
        lines.append(" ".join(f"{v: .17e}" for v in row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_effective(path) -> EffectiveHamiltonian:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _MAGIC:
        raise DownfoldError(f"{path}: not an effective-Hamiltonian file")
    head, i = {}, 1
    while text[i].strip() != "[determinants]":
        key, _, val = text[i].partition("=")
        head[key.strip()] = val.strip()
        i += 1
    dim = int(head["dim"])
    labels = [s.strip() for s in text[i + 1:i + 1 + dim]]
    if text[i + 1 + dim].strip() != "[matrix]":
        raise DownfoldError(f"{path}: malformed determinant block")
    M = np.array([[float(x) for x in row.split()] for row in text[i + 2 + dim:i + 2 + 2 * dim]])
    sector = Sector(int(head["n_so"]), int(head["n_elec"]), int(head["ms2"]))
    ref = tuple(int(s) for s in head["reference"].split(",") if s)
    active = ActiveSpace(tuple(int(p) for p in head["active"].split(",") if p))
    cas = enumerate_space(sector, "cas", active=active, reference=ref)
    if cas.dim != dim or M.shape != (dim, dim):
        raise DownfoldError(f"{path}: dimension mismatch")
    for k, lab in enumerate(labels):
        occ = ref if lab == "ref" else resolve_excitation(ref, *parse_excitation(lab))[1]
        if cas.index(occ) != k:
            raise DownfoldError(f"{path}: determinant {lab!r} out of canonical order")
    energies = {k[len("energy."):]: float(v) for k, v in head.items() if k.startswith("energy.")}
    state = int(head["state"]) if head.get("state") else None
    return EffectiveHamiltonian(cas, M, active, int(head["order"]), state, energies, float(head["asymmetry"]))
