"""Determinant spaces, fermionic operator algebra, eigensolvers and FCI."""

from .eigen import EigenError, davidson, eig_nonsym, eig_sym, fix_sign
from .fci import DENSE_GUARD, bare_cas_spectrum, fci_solve, hamiltonian_diagonal, hamiltonian_matrix
from .operators import (
    ExcitationOperator,
    FermionOperator,
    SeriesError,
    apply_excitation,
    apply_hamiltonian,
    apply_operator,
    dense_matrix,
    exp_apply,
    hamiltonian_operator,
    pair_index,
    pair_lists,
    spin_squared_operator,
)
from .space import (
    DeterminantSpace,
    Sector,
    SpaceError,
    WavefunctionVector,
    enumerate_space,
    excitation_sign,
    mask_to_occ,
    occ_to_mask,
    rank_occ,
    reference_occupation,
    transfer,
    transfer_array,
)

__all__ = [
    "DENSE_GUARD",
    "DeterminantSpace",
    "EigenError",
    "ExcitationOperator",
    "FermionOperator",
    "Sector",
    "SeriesError",
    "SpaceError",
    "WavefunctionVector",
    "apply_excitation",
    "apply_hamiltonian",
    "apply_operator",
    "bare_cas_spectrum",
    "davidson",
    "dense_matrix",
    "eig_nonsym",
    "eig_sym",
    "enumerate_space",
    "excitation_sign",
    "exp_apply",
    "fci_solve",
    "fix_sign",
    "hamiltonian_diagonal",
    "hamiltonian_matrix",
    "hamiltonian_operator",
    "mask_to_occ",
    "occ_to_mask",
    "pair_index",
    "pair_lists",
    "rank_occ",
    "reference_occupation",
    "spin_squared_operator",
    "transfer",
    "transfer_array",
]
