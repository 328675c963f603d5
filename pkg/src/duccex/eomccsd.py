"""EOMCCSD: similarity-transformed Hamiltonian over {Phi, S, D} and its roots."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .ccsd import ClusterAmplitudes
from .detspace import (
    DeterminantSpace,
    EigenError,
    apply_operator,
    eig_nonsym,
    enumerate_space,
    exp_apply,
    fix_sign,
    hamiltonian_operator,
    spin_squared_operator,
)
from .detspace.excitations import ExcitationMap, det_label
from .hamio import SpinOrbitalHamiltonian

__all__ = [
    "Hbar",
    "EomState",
    "EomError",
    "build_hbar",
    "solve_eomccsd",
    "eomccsd_a_vector",
    "top_determinants",
    "state_summary_csv",
]

HBAR_DENSE_GUARD = 50_000
SINGLET_S2_TOL = 0.1


class EomError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Hbar:
    """``e^{-T} H e^{T}`` restricted to the reference-plus-SD space.

    ``matrix`` is dense when the SD dimension fits the guard, otherwise
    ``None`` and ``matvec`` must be used.
    """

    amps: ClusterAmplitudes
    sd_space: DeterminantSpace
    sd_in_full: np.ndarray
    matrix: np.ndarray | None
    hop: object = field(repr=False)

    @property
    def dim(self) -> int:
        return self.sd_space.dim

    def _embed(self, X):
        full = np.zeros((self.amps.space.dim,) + X.shape[1:])
        full[self.sd_in_full] = X
        return full

    def matvec(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, float)
        T = self.amps.operator()
        space = self.amps.space
        Y = exp_apply(T, apply_operator(self.hop, exp_apply(T, self._embed(X), space), space), space, sign=-1.0)
        return Y[self.sd_in_full]


def build_hbar(amps: ClusterAmplitudes, H: SpinOrbitalHamiltonian, guard: int = HBAR_DENSE_GUARD,
               chunk: int = 256) -> Hbar:
    """Columns ``P_SD e^{-T} H e^{T} |mu>`` for every ``mu`` in {Phi} + S + D."""
    full = amps.space
    sd = enumerate_space(full.sector, "sd", reference=amps.reference)
    sd_in_full = full.index_ranks(sd.ranks)
    hop = hamiltonian_operator(H)
    hb = Hbar(amps, sd, sd_in_full, None, hop)
    if sd.dim > guard:
        return hb
    M = np.zeros((sd.dim, sd.dim))
    for c0 in range(0, sd.dim, chunk):
        c1 = min(sd.dim, c0 + chunk)
        E = np.zeros((sd.dim, c1 - c0))
        E[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
        M[:, c0:c1] = hb.matvec(E)
    return Hbar(amps, sd, sd_in_full, M, hop)


@dataclass(frozen=True, eq=False)
class EomState:
    """One right eigenvector of H-bar.

    ``r_vec`` holds the coefficients of ``R|Phi>`` on the SD space
    (determinant basis, unit norm); ``r0``, ``r1``, ``r2`` are the same
    numbers in operator convention.  ``n_k_a`` normalizes
    ``(P + Q1 + Q2) R e^{T} |Phi>``.
    """

    root: int
    energy: float
    omega: float
    r0: float
    r1: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    r_vec: np.ndarray = field(repr=False)
    n_k_a: float = 1.0
    s2: float = 0.0
    top: tuple[tuple[str, float], ...] = ()
    residual: float = 0.0

    @property
    def singlet(self) -> bool:
        return abs(self.s2) <= SINGLET_S2_TOL


def eomccsd_a_vector(state: EomState, amps: ClusterAmplitudes, sd_space: DeterminantSpace | None = None):
    """``(P+Q1+Q2)(R0+R1+R2) e^{T1+T2}|Phi>`` and ``N_K(A)``.

    Returns ``(vector over the SD space, N_K(A))``; the vector is not scaled.
    """
    full = amps.space
    sd = sd_space or enumerate_space(full.sector, "sd", reference=amps.reference)
    sd_in_full = full.index_ranks(sd.ranks)
    exmap = amps.exmap
    r = exmap.write(state.r1, state.r2, state.r0)
    psi = exp_apply(amps.operator(), r, full)[sd_in_full]
    nrm = np.linalg.norm(psi)
    if nrm < 1e-12:
        raise EomError(f"EOMCCSD(A) vector of root {state.root} has vanishing norm")
    return psi, 1.0 / nrm


def top_determinants(vec: np.ndarray, space: DeterminantSpace, reference, n: int = 5) -> tuple[tuple[str, float], ...]:
    """Largest-|c| determinants as ``(label, coefficient)``, labels relative to ``reference``."""
    order = np.argsort(-np.abs(vec), kind="stable")[:n]
    return tuple((det_label(space.occ[k], reference), float(vec[k])) for k in order if vec[k] != 0)


def solve_eomccsd(hbar: Hbar, n_roots: int | None = None, annotate: bool = True) -> list[EomState]:
    """Lowest right eigenpairs of H-bar sorted by energy (all if ``n_roots`` is None).

    Each eigenvector is scaled to unit norm on the SD space with its largest
    component positive.  ``r0`` is its reference component.
    """
    amps = hbar.amps
    exmap_sd = ExcitationMap.build(hbar.sd_space, amps.reference)
    if hbar.matrix is not None:
        w, V = eig_nonsym(hbar.matrix, n_roots)
    else:
        k = n_roots or 6
        op = spla.LinearOperator((hbar.dim, hbar.dim), matvec=lambda x: hbar.matvec(x[:, None])[:, 0])
        w, V = spla.eigs(op, k=k, which="SR", tol=1e-10)
        if np.abs(w.imag).max() > 1e-8:
            raise EigenError("complex EOMCCSD root requested")
        order = np.argsort(w.real)
        w, V = w.real[order], np.real(V[:, order])
        V = np.column_stack([fix_sign(v / np.linalg.norm(v)) for v in V.T])
    states = []
    s2op = spin_squared_operator(amps.space.sector.n_so) if annotate else None
    T = amps.operator()
    full = amps.space
    for k in range(len(w)):
        v = fix_sign(V[:, k] / np.linalg.norm(V[:, k]))
        r0 = float(v[exmap_sd.ref_pos])
        r1, r2 = exmap_sd.read(v)
        res = 0.0
        if hbar.matrix is not None:
            res = float(np.linalg.norm(hbar.matrix @ v - w[k] * v))
        st = EomState(k, float(w[k]), float(w[k] - amps.e_total), r0, r1, r2, v, residual=res)
        psi, nka = eomccsd_a_vector(st, amps, hbar.sd_space)
        s2, top = 0.0, ()
        if annotate:
            full_vec = exp_apply(T, hbar._embed(v), full)
            s2 = float(full_vec @ apply_operator(s2op, full_vec, full) / (full_vec @ full_vec))
            top = top_determinants(psi * nka, hbar.sd_space, amps.reference)
        states.append(EomState(k, st.energy, st.omega, r0, r1, r2, v, nka, s2, top, res))
    return states


def state_summary_csv(states: list[EomState]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["root", "energy", "omega", "r0", "s2", "top_determinants"])
    for s in states:
        top = " ".join(f"{lab}:{c:+.6f}" for lab, c in s.top)
        w.writerow([s.root, f"{s.energy:.12f}", f"{s.omega:.12f}", f"{s.r0:.12f}", f"{s.s2:.6f}", top])
    return buf.getvalue()
