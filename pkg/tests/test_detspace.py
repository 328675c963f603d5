import numpy as np
import pytest
from scipy.linalg import expm

from duccex.detspace import (
    EigenError,
    ExcitationOperator,
    FermionOperator,
    SeriesError,
    Sector,
    SpaceError,
    WavefunctionVector,
    apply_excitation,
    apply_hamiltonian,
    apply_operator,
    bare_cas_spectrum,
    davidson,
    dense_matrix,
    eig_nonsym,
    eig_sym,
    enumerate_space,
    excitation_sign,
    exp_apply,
    fci_solve,
    hamiltonian_diagonal,
    hamiltonian_matrix,
    hamiltonian_operator,
    occ_to_mask,
    reference_occupation,
    transfer_array,
)
from duccex.detspace.excitations import ExcitationMap, det_label, parse_excitation, resolve_excitation
from duccex.hamio import ActiveSpace, SpatialIntegrals, to_spin_orbital

from .oracles import random_integrals, string_hamiltonian


def random_hamiltonian(rng, n, n_elec, ms2=0):
    h, g = random_integrals(rng, n)
    return to_spin_orbital(SpatialIntegrals(n, 0.3, h, g, n_elec, ms2))


def random_excitation(rng, space, scale=0.2):
    exmap = ExcitationMap.build(space, space.reference)
    return exmap, exmap.operator(scale * rng.normal(size=exmap.n1), scale * rng.normal(size=exmap.n2))


# --------------------------------------------------------------------------
# Spaces
# --------------------------------------------------------------------------

def test_space_counts():
    assert enumerate_space(Sector(4, 2, 0)).dim == 4
    assert enumerate_space(Sector(60, 2, 0), "cas", ActiveSpace((0, 1, 2, 3))).dim == 16
    assert enumerate_space(Sector(40, 4, 0), "cas", ActiveSpace(tuple(range(7)))).dim == 441


def test_canonical_order_is_bitmask_order():
    space = enumerate_space(Sector(12, 4, 0))
    masks = [occ_to_mask(o) for o in space.occ]
    assert masks == sorted(masks)
    assert space.bitmasks() == masks


def test_impossible_sector_is_empty():
    assert enumerate_space(Sector(4, 3, 0)).dim == 0


def test_sector_validation():
    with pytest.raises(SpaceError):
        Sector(5, 2)
    with pytest.raises(SpaceError):
        Sector(4, 6)


def test_sd_space_and_cas_contents():
    sector = Sector(12, 4, 0)
    ref = reference_occupation(sector)
    sd = enumerate_space(sector, "sd")
    full = enumerate_space(sector)
    in_ref = np.isin(full.occ, ref).sum(axis=1)
    assert sd.dim == int((in_ref >= 2).sum())
    cas = enumerate_space(sector, "cas", ActiveSpace((1, 2, 3)))
    assert np.all(np.isin([0, 1], cas.occ))  # orbital 0 stays doubly occupied


def test_excitation_sign_convention():
    # a+_3 a_0 on |0 1>: remove 0 (no occupied below), insert 3 above 1 -> one crossing
    assert excitation_sign((0, 1), (0,), (3,)) == (-1, (1, 3))
    assert excitation_sign((0, 1), (2,), (3,)) is None
    assert det_label((1, 3), (0, 1)) == "1a->2b"


def test_parse_and_resolve_excitation():
    ann, cre = parse_excitation("1a->2a,1b->2b")
    sign, occ = resolve_excitation((0, 1), ann, cre)
    assert occ == (2, 3) and sign == 1
    with pytest.raises(ValueError):
        parse_excitation("1c->2a")


# --------------------------------------------------------------------------
# Slater-Condon application vs. operator-string oracle
# --------------------------------------------------------------------------

def test_diagonal_rule(h2_631g):
    space = enumerate_space(Sector(h2_631g.n_so, 2, 0))
    d = hamiltonian_diagonal(h2_631g, space)
    v = h2_631g.v_as
    for k in range(space.dim):
        occ = space.occ[k]
        e = h2_631g.e_core + sum(h2_631g.h_so[i, i] for i in occ)
        e += 0.5 * sum(v[i, j, i, j] for i in occ for j in occ)
        assert abs(d[k] - e) < 1e-12
        assert abs(h2_631g.determinant_energy(occ) - e) < 1e-12


def test_single_excitation_rule(h4_sto3g):
    H = h4_sto3g
    sector = Sector(H.n_so, 4, 0)
    space = enumerate_space(sector)
    M = hamiltonian_matrix(H, space)
    ref = reference_occupation(sector)
    v = H.v_as
    for a in ref:
        for r in range(H.n_so):
            if r in ref or r % 2 != a % 2:
                continue
            sign, det = excitation_sign(ref, (a,), (r,))
            expect = H.h_so[r, a] + sum(v[r, i, a, i] for i in ref)
            assert abs(M[space.index(det), space.index(ref)] - sign * expect) < 1e-12


def _oracle_matrix_in_space(H, space, n_elec, ms2):
    M, masks = string_hamiltonian(H.spatial.h, H.spatial.eri, H.e_core, n_elec, ms2)
    assert masks == space.bitmasks()
    return M


def test_h2_sto3g_matrix_matches_string_oracle(h2_sto3g):
    space = enumerate_space(Sector(4, 2, 0))
    M = hamiltonian_matrix(h2_sto3g, space)
    assert np.abs(M - _oracle_matrix_in_space(h2_sto3g, space, 2, 0)).max() < 1e-12


@pytest.mark.parametrize("n,n_elec,ms2", [(3, 2, 0), (3, 3, 1), (4, 2, 2), (4, 3, -1), (4, 4, 0), (5, 4, 0)])
def test_random_sectors_match_string_oracle(rng, n, n_elec, ms2):
    H = random_hamiltonian(rng, n, n_elec, ms2)
    space = enumerate_space(Sector(2 * n, n_elec, ms2))
    M = hamiltonian_matrix(H, space)
    assert np.abs(M - _oracle_matrix_in_space(H, space, n_elec, ms2)).max() < 1e-11


def test_hamiltonian_symmetric_on_random_vectors(rng):
    H = random_hamiltonian(rng, 5, 4)
    space = enumerate_space(Sector(10, 4, 0))
    x, y = rng.normal(size=(2, space.dim))
    op = hamiltonian_operator(H)
    assert abs(x @ apply_operator(op, y, space) - y @ apply_operator(op, x, space)) < 1e-11
    wf = WavefunctionVector(space, x)
    assert np.allclose(apply_hamiltonian(H, wf).coeffs, apply_operator(op, x, space), atol=1e-13)


# --------------------------------------------------------------------------
# Excitation operators and exponentials
# --------------------------------------------------------------------------

def test_single_term_excitation_on_reference():
    sector = Sector(8, 2, 0)
    space = enumerate_space(sector)
    ref = reference_occupation(sector)
    phi = np.zeros(space.dim)
    phi[space.index(ref)] = 1.0
    t = 0.37
    T1 = ExcitationOperator(8, ((t, (4,), (0,)),))
    out = apply_excitation(T1, WavefunctionVector(space, phi)).coeffs
    sign, det = excitation_sign(ref, (0,), (4,))
    expect = np.zeros(space.dim)
    expect[space.index(det)] = sign * t
    assert np.allclose(out, expect, atol=1e-15)


def test_anti_hermitian_matrix_is_antisymmetric(rng):
    space = enumerate_space(Sector(8, 4, 0))
    _, S = random_excitation(rng, space)
    sigma = S - S.adjoint()
    A = dense_matrix(sigma, space)
    assert np.abs(A + A.T).max() == 0.0


def test_exp_series_matches_dense_expm(rng):
    space = enumerate_space(Sector(8, 2, 0))
    _, T = random_excitation(rng, space)
    Tm = dense_matrix(T, space)
    v = np.zeros(space.dim)
    v[space.reference_index()] = 1.0
    assert np.abs(exp_apply(T, v, space) - expm(Tm) @ v).max() < 1e-13
    # a pure excitation operator is nilpotent on this sector: T^3 = 0 for two electrons
    assert np.abs(np.linalg.matrix_power(Tm, 3)).max() == 0.0


def test_exp_of_zero_operator_is_identity(rng):
    space = enumerate_space(Sector(8, 2, 0))
    v = rng.normal(size=space.dim)
    assert np.array_equal(exp_apply(FermionOperator(8), v, space), v)


def test_exp_sigma_round_trip_and_unit_determinant(rng):
    space = enumerate_space(Sector(8, 4, 0))  # 36 determinants
    _, S = random_excitation(rng, space, 0.4)
    sigma = S - S.adjoint()
    v = rng.normal(size=space.dim)
    back = exp_apply(sigma, exp_apply(sigma, v, space), space, sign=-1.0)
    assert np.abs(back - v).max() < 1e-10
    U = expm(dense_matrix(sigma, space))
    assert abs(np.linalg.det(U) - 1.0) < 1e-9
    assert np.allclose(np.abs(np.linalg.eigvals(U)), 1.0, atol=1e-9)


def test_series_cap_raises(rng):
    space = enumerate_space(Sector(8, 4, 0))
    big = FermionOperator(8, 0.0, 50.0 * np.eye(8))
    with pytest.raises(SeriesError):
        exp_apply(big, rng.normal(size=space.dim), space, max_terms=5)


def test_internal_sigma_keeps_reference_inside_cas(rng):
    sector = Sector(12, 4, 0)
    active = ActiveSpace((1, 2, 3))
    full = enumerate_space(sector)
    cas = enumerate_space(sector, "cas", active)
    exmap = ExcitationMap.build(full, full.reference)
    flags = active.spin_flags(6)
    int1 = flags[exmap.singles].all(axis=1)
    int2 = flags[exmap.doubles].all(axis=1)
    S = exmap.operator(rng.normal(size=exmap.n1) * int1, rng.normal(size=exmap.n2) * int2)
    sigma = S - S.adjoint()
    phi = np.zeros(full.dim)
    phi[full.reference_index()] = 1.0
    psi = exp_apply(sigma, phi, full)
    outside = np.ones(full.dim, bool)
    outside[full.index_ranks(cas.ranks)] = False
    assert np.linalg.norm(psi[outside]) < 1e-14


# --------------------------------------------------------------------------
# Dense matrices, projections, FCI
# --------------------------------------------------------------------------

def test_identity_closure_gives_identity():
    space = enumerate_space(Sector(8, 2, 0))
    assert np.array_equal(dense_matrix(lambda X: X, space), np.eye(space.dim))


def test_dense_guard():
    space = enumerate_space(Sector(8, 2, 0))
    with pytest.raises(SpaceError):
        dense_matrix(lambda X: X, space, guard=3)


def test_full_matrix_symmetric_and_matches_fci(h2_sto3g):
    space = enumerate_space(Sector(4, 2, 0))
    M = hamiltonian_matrix(h2_sto3g, space)
    assert np.array_equal(M, M.T)
    w, _, _ = fci_solve(h2_sto3g, n_roots=4)
    assert np.allclose(np.linalg.eigvalsh(M), w, atol=1e-12)


def test_h2_sto3g_ground_state_two_by_two_oracle(h2_sto3g):
    # ground state lives in span{|1a1b>, |2a2b>}: analytic 2x2 diagonalization
    H = h2_sto3g
    g = H.spatial.eri
    e0 = H.determinant_energy([0, 1])
    e2 = H.determinant_energy([2, 3])
    k = g[0, 1, 0, 1]
    lam = 0.5 * (e0 + e2) - np.sqrt(0.25 * (e0 - e2) ** 2 + k * k)
    w, _, _ = fci_solve(H)
    assert abs(w[0] - lam) < 1e-12


def test_cas_matrix_is_subblock_of_full(h4_sto3g):
    sector = Sector(8, 4, 0)
    full = enumerate_space(sector)
    cas = enumerate_space(sector, "cas", ActiveSpace((1, 2)))
    F = hamiltonian_matrix(h4_sto3g, full)
    C = hamiltonian_matrix(h4_sto3g, cas)
    idx = full.index_ranks(cas.ranks)
    assert np.array_equal(C, F[np.ix_(idx, idx)])
    assert np.array_equal(transfer_array(np.eye(full.dim)[:, idx], full, cas), np.eye(cas.dim))


def test_bare_cas_all_active_equals_fci(h4_sto3g):
    w_cas, _, _ = bare_cas_spectrum(h4_sto3g, ActiveSpace((0, 1, 2, 3)))
    w_fci, _, _ = fci_solve(h4_sto3g, n_roots=36)
    assert np.allclose(w_cas, w_fci, atol=1e-12)


def test_fci_davidson_path_matches_dense(rng):
    H = random_hamiltonian(rng, 6, 4)
    w_dense, _, _ = fci_solve(H, n_roots=4)
    w_dav, V, space = fci_solve(H, n_roots=4, guard=10)
    assert np.abs(w_dense - w_dav).max() < 1e-9


# --------------------------------------------------------------------------
# Eigensolvers
# --------------------------------------------------------------------------

def test_eig_sym_trivial():
    w, V = eig_sym(np.diag([3.0, 1.0, 2.0]))
    assert np.array_equal(w, [1.0, 2.0, 3.0])


def test_davidson_matches_dense(rng):
    A = rng.normal(size=(200, 200))
    A = 0.5 * (A + A.T) + np.diag(np.arange(200.0))
    w_ref = np.linalg.eigvalsh(A)[:5]
    w, V = davidson(lambda X: A @ X, np.diag(A).copy(), 5)
    assert np.abs(w - w_ref).max() < 1e-9
    assert np.abs(V.T @ V - np.eye(5)).max() < 1e-10


def test_davidson_degenerate_pair():
    A = np.diag([1.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    A[4, 5] = A[5, 4] = 0.1
    w, V = eig_sym(lambda X: A @ X, 2, diag=np.diag(A).copy())
    assert np.allclose(w, [1.0, 1.0], atol=1e-10)
    assert abs(V[:, 0] @ V[:, 1]) < 1e-10


def test_eig_nonsym_upper_triangular():
    A = np.triu(np.arange(1.0, 17.0).reshape(4, 4))
    w, _ = eig_nonsym(A)
    assert np.allclose(w, np.sort(np.diag(A)))


def test_eig_nonsym_complex_pair_rejected():
    with pytest.raises(EigenError):
        eig_nonsym(np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_eig_nonsym_similarity_oracle(rng):
    d = np.sort(rng.normal(size=8))
    S = rng.normal(size=(8, 8)) + 4 * np.eye(8)
    w, V = eig_nonsym(np.linalg.solve(S, np.diag(d) @ S))
    assert np.abs(w - d).max() < 1e-9
    for k in range(8):
        v = V[:, k]
        assert v[np.argmax(np.abs(v))] > 0
