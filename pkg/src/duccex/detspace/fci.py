"""Full CI oracle and the bare active-space baseline."""

from __future__ import annotations

import numpy as np

from ..hamio import ActiveSpace, SpinOrbitalHamiltonian
from .eigen import davidson, eig_sym
from .operators import apply_operator, dense_matrix, hamiltonian_operator
from .space import DeterminantSpace, Sector, enumerate_space

__all__ = ["DENSE_GUARD", "hamiltonian_diagonal", "hamiltonian_matrix", "fci_solve", "bare_cas_spectrum"]

DENSE_GUARD = 20_000


def hamiltonian_diagonal(H: SpinOrbitalHamiltonian, space: DeterminantSpace) -> np.ndarray:
    """Diagonal Slater-Condon energies of every determinant in ``space``."""
    n = H.spatial.n_orb
    g = H.spatial.eri
    so = np.arange(2 * n)
    sp, spin = so // 2, so % 2
    J = np.einsum("iijj->ij", g)[np.ix_(sp, sp)]
    K = np.einsum("ijji->ij", g)[np.ix_(sp, sp)] * (spin[:, None] == spin[None, :])
    JK = J - K
    occ = space.occ.astype(np.int64)
    d = np.full(space.dim, H.e_core) + np.diag(H.h_so)[occ].sum(axis=1)
    N = occ.shape[1]
    for a in range(N):
        for b in range(a + 1, N):
            d += JK[occ[:, a], occ[:, b]]
    return d


def hamiltonian_matrix(H: SpinOrbitalHamiltonian, space: DeterminantSpace, guard: int = DENSE_GUARD) -> np.ndarray:
    return dense_matrix(hamiltonian_operator(H), space, guard=guard)


def fci_solve(H: SpinOrbitalHamiltonian, sector: Sector | None = None, n_roots: int = 1,
              space: DeterminantSpace | None = None, guard: int = DENSE_GUARD, **davidson_kw):
    """Lowest ``n_roots`` eigenpairs of H in the full sector.

    Returns ``(energies, vectors, space)``.  Dense LAPACK below ``guard``
    determinants, Davidson above.
    """
    if space is None:
        if sector is None:
            sector = Sector(H.n_so, H.n_elec, H.spatial.ms2)
        space = enumerate_space(sector, "full")
    op = hamiltonian_operator(H)
    if space.dim <= guard:
        M = dense_matrix(op, space, guard=guard)
        w, V = eig_sym(M, n_roots)
    else:
        diag = hamiltonian_diagonal(H, space)
        w, V = davidson(lambda X: apply_operator(op, X, space), diag, n_roots, **davidson_kw)
    return w, V, space


def bare_cas_spectrum(H: SpinOrbitalHamiltonian, active: ActiveSpace, sector: Sector | None = None,
                      n_roots: int | None = None, reference=None):
    """Eigenpairs of the bare Hamiltonian projected onto the CAS.

    Returns ``(energies, vectors, cas_space)``.
    """
    if sector is None:
        sector = Sector(H.n_so, H.n_elec, H.spatial.ms2)
    cas = enumerate_space(sector, "cas", active=active, reference=reference)
    M = hamiltonian_matrix(H, cas)
    w, V = eig_sym(M, n_roots)
    return w, V, cas
