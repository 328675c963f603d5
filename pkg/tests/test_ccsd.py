import numpy as np
import pytest
from scipy.linalg import expm

from duccex.ccsd import CcsdConfig, CcsdError, Diis, ccsd_residuals, mp2_energy, solve_ccsd
from duccex.detspace import fci_solve, hamiltonian_operator

from .oracles import apply_string, loop_v_as, mp2_sum, string_hamiltonian


def string_operator(strings, masks):
    index = {m: i for i, m in enumerate(masks)}
    M = np.zeros((len(masks), len(masks)))
    for c, ops in strings:
        for j, m in enumerate(masks):
            r = apply_string(ops, m)
            if r and r[1] in index:
                M[index[r[1]], j] += c * r[0]
    return M


def oracle_cluster(exmap, t1, t2, masks):
    """T as a dense matrix from explicit ``a+ i`` / ``a+ b+ j i`` strings."""
    s = [(x, [("+", a), ("-", i)]) for (i, a), x in zip(exmap.singles, t1)]
    d = [(x, [("+", a), ("+", b), ("-", j), ("-", i)]) for (i, j, a, b), x in zip(exmap.doubles, t2)]
    return string_operator(s + d, masks)


def oracle_fixed_point(ints, n_elec, iters=400, tol=1e-10):
    """DIIS-free Jacobi iteration on dense matrices built from bitstring operators."""
    M, masks = string_hamiltonian(ints.h, ints.eri, ints.e_core, n_elec)
    n_so = 2 * ints.n_orb
    occ = list(range(n_elec))
    vir = list(range(n_elec, n_so))
    v = loop_v_as(ints.eri)
    h_so = np.kron(ints.h, np.eye(2))
    eps = np.array([h_so[p, p] + sum(v[p, i, p, i] for i in occ) for p in range(n_so)])
    ref = sum(1 << i for i in occ)
    index = {m: k for k, m in enumerate(masks)}
    exc = []
    for i in occ:
        for a in vir:
            if i % 2 == a % 2:
                exc.append(([("+", a), ("-", i)], eps[a] - eps[i]))
    for x, i in enumerate(occ):
        for j in occ[x + 1:]:
            for y, a in enumerate(vir):
                for b in vir[y + 1:]:
                    if i % 2 + j % 2 == a % 2 + b % 2:
                        exc.append(([("+", a), ("+", b), ("-", j), ("-", i)], eps[a] + eps[b] - eps[i] - eps[j]))
    ops = [string_operator([(1.0, s)], masks) for s, _ in exc]
    D = np.array([d for _, d in exc])
    rows = [ops_k[:, index[ref]] for ops_k in ops]
    phi = np.zeros(len(masks))
    phi[index[ref]] = 1.0
    t = np.zeros(len(exc))
    for _ in range(iters):
        T = sum(tk * Ok for tk, Ok in zip(t, ops))
        w = expm(-T) @ M @ expm(T) @ phi
        r = np.array([row @ w for row in rows])
        if np.abs(r).max() < tol:
            return w[index[ref]] - M[index[ref], index[ref]]
        t = t - r / D
    raise RuntimeError("oracle fixed point did not converge")


def test_h2_ccsd_equals_fci(h2_sto3g, h2_631g):
    for H in (h2_sto3g, h2_631g):
        amps = solve_ccsd(H)
        e_fci = fci_solve(H)[0][0]
        assert amps.converged
        assert abs(amps.e_total - e_fci) < 1e-9


def test_first_iteration_is_mp2(h2_631g, h4_linear_sto3g):
    for H in (h2_631g, h4_linear_sto3g):
        amps = solve_ccsd(H)
        n = H.n_elec
        eps = np.diag(H.fock(list(range(n))))
        ref = mp2_sum(loop_v_as(H.spatial.eri), eps, range(n), range(n, H.n_so))
        assert abs(amps.history[1][2] - ref) < 1e-12
        assert abs(mp2_energy(H) - ref) < 1e-12


def test_h4_matches_diis_free_oracle(h4_linear_sto3g):
    amps = solve_ccsd(h4_linear_sto3g)
    e_ref = oracle_fixed_point(h4_linear_sto3g.spatial, 4)
    assert abs(amps.e_corr - e_ref) < 1e-9


def test_diis_depth_invariance(h4_linear_sto3g):
    e = [solve_ccsd(h4_linear_sto3g, config=CcsdConfig(diis_depth=d)).e_corr for d in (4, 8, 12)]
    assert max(e) - min(e) < 1e-9


def test_stationarity_by_independent_reevaluation(h4_linear_sto3g):
    amps = solve_ccsd(h4_linear_sto3g)
    ints = h4_linear_sto3g.spatial
    M, masks = string_hamiltonian(ints.h, ints.eri, ints.e_core, 4)
    T = oracle_cluster(amps.exmap, amps.t1_flat, amps.t2_flat, masks)
    index = {m: k for k, m in enumerate(masks)}
    phi = np.zeros(len(masks))
    phi[index[sum(1 << i for i in amps.reference)]] = 1.0
    w = expm(-T) @ M @ expm(T) @ phi
    sd = [index[sum(1 << k for k in amps.space.occ[p])] for p in np.concatenate([amps.exmap.pos1, amps.exmap.pos2])]
    assert np.abs(w[sd]).max() < CcsdConfig().conv_tol
    assert abs(w[phi == 1][0] - amps.e_total) < 1e-10
    # the library residual agrees with the re-evaluation term by term
    _, r1, r2 = ccsd_residuals(hamiltonian_operator(h4_linear_sto3g), amps.exmap, amps.t1_flat, amps.t2_flat)
    assert np.abs(np.concatenate([r1, r2])).max() < CcsdConfig().conv_tol


def test_two_electron_wavefunction_is_fci_vector(h2_631g):
    amps = solve_ccsd(h2_631g)
    _, V, space = fci_solve(h2_631g)
    psi = amps.wavefunction()
    assert space.dim == amps.space.dim
    assert abs(psi @ V[:, 0]) / np.linalg.norm(psi) > 1 - 1e-10


def test_t2_stored_antisymmetric(h4_linear_sto3g):
    t2 = solve_ccsd(h4_linear_sto3g).t2
    assert np.array_equal(t2, -t2.transpose(1, 0, 2, 3))
    assert np.array_equal(t2, -t2.transpose(0, 1, 3, 2))


def test_level_shift_reaches_same_solution(h4_linear_sto3g):
    a = solve_ccsd(h4_linear_sto3g)
    b = solve_ccsd(h4_linear_sto3g, config=CcsdConfig(level_shift=0.1))
    assert abs(a.e_corr - b.e_corr) < 1e-9


def test_nonconvergence_error_carries_last_iterate(h4_linear_sto3g):
    with pytest.raises(CcsdError) as info:
        solve_ccsd(h4_linear_sto3g, config=CcsdConfig(max_iter=2, conv_tol=1e-14))
    assert info.value.last is not None and not info.value.last.converged


def test_diis_exact_on_linear_problem(rng):
    # for a linear fixed-point map, DIIS over n+1 iterates solves it exactly
    A = np.diag([0.5, 0.3, -0.2]) + 0.05 * rng.normal(size=(3, 3))
    b = rng.normal(size=3)
    x = np.zeros(3)
    d = Diis(depth=8)
    for _ in range(6):
        x_new = A @ x + b
        d.push(x_new, x_new - x)
        x = d.extrapolate()
    assert np.abs(x - np.linalg.solve(np.eye(3) - A, b)).max() < 1e-8
