"""Independent reference implementations used as test oracles.

Nothing here imports the package's operator or integral engines: the
second-quantized oracle works on Python integer bitstrings with explicit
creation/annihilation strings, and the integral oracle integrates Gaussians
on a quadrature grid.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.integrate import quad
from scipy.special import roots_hermite


# --------------------------------------------------------------------------
# Second quantization on bitstrings
# --------------------------------------------------------------------------

def annihilate(mask: int, p: int):
    if not mask >> p & 1:
        return None
    sign = -1 if bin(mask & ((1 << p) - 1)).count("1") % 2 else 1
    return sign, mask ^ (1 << p)


def create(mask: int, p: int):
    if mask >> p & 1:
        return None
    sign = -1 if bin(mask & ((1 << p) - 1)).count("1") % 2 else 1
    return sign, mask | (1 << p)


def apply_string(ops, mask: int):
    """Apply ``ops`` (list of ('+'|'-', p), rightmost acts first) to a determinant."""
    sign = 1
    for kind, p in reversed(ops):
        r = (create if kind == "+" else annihilate)(mask, p)
        if r is None:
            return None
        s, mask = r
        sign *= s
    return sign, mask


def sector_masks(n_so: int, n_elec: int, ms2: int = 0) -> list[int]:
    out = []
    for occ in combinations(range(n_so), n_elec):
        na = sum(1 for o in occ if o % 2 == 0)
        if 2 * na - n_elec == ms2:
            out.append(sum(1 << o for o in occ))
    return sorted(out)


def loop_v_as(h_spatial_eri: np.ndarray) -> np.ndarray:
    """``<pq||rs>`` by explicit loops over interleaved spin orbitals."""
    g = h_spatial_eri
    n = g.shape[0]
    v = np.zeros((2 * n,) * 4)
    for p in range(2 * n):
        for q in range(2 * n):
            for r in range(2 * n):
                for s in range(2 * n):
                    d = g[p // 2, r // 2, q // 2, s // 2] if (p % 2 == r % 2 and q % 2 == s % 2) else 0.0
                    x = g[p // 2, s // 2, q // 2, r // 2] if (p % 2 == s % 2 and q % 2 == r % 2) else 0.0
                    v[p, q, r, s] = d - x
    return v


def string_hamiltonian(h: np.ndarray, eri: np.ndarray, e_core: float, n_elec: int, ms2: int = 0):
    """Dense H over a sector from ``sum h_pq p+q + 1/2 sum (pr|qs) p+ q+ s r`` strings.

    Returns ``(matrix, masks)`` with masks ascending.
    """
    n = h.shape[0]
    n_so = 2 * n
    masks = sector_masks(n_so, n_elec, ms2)
    index = {m: i for i, m in enumerate(masks)}
    M = np.zeros((len(masks), len(masks)))
    for j, m in enumerate(masks):
        M[j, j] += e_core
        for p in range(n_so):
            for q in range(n_so):
                if p % 2 != q % 2:
                    continue
                c = h[p // 2, q // 2]
                if c == 0:
                    continue
                r = apply_string([("+", p), ("-", q)], m)
                if r and r[1] in index:
                    M[index[r[1]], j] += c * r[0]
        for p in range(n_so):
            for q in range(n_so):
                for r_ in range(n_so):
                    if p % 2 != r_ % 2:
                        continue
                    for s in range(n_so):
                        if q % 2 != s % 2:
                            continue
                        c = 0.5 * eri[p // 2, r_ // 2, q // 2, s // 2]
                        if c == 0:
                            continue
                        res = apply_string([("+", p), ("+", q), ("-", s), ("-", r_)], m)
                        if res and res[1] in index:
                            M[index[res[1]], j] += c * res[0]
    return M, masks


def random_integrals(rng: np.random.Generator, n: int, scale: float = 0.3):
    """Random real integrals with full 8-fold ERI symmetry."""
    h = rng.normal(size=(n, n))
    h = 0.5 * (h + h.T)
    g = rng.normal(size=(n, n, n, n)) * scale
    g = g + g.transpose(1, 0, 2, 3)
    g = g + g.transpose(0, 1, 3, 2)
    g = g + g.transpose(2, 3, 0, 1)
    return h, g / 8.0


# --------------------------------------------------------------------------
# Gaussian integrals by quadrature (s functions)
# --------------------------------------------------------------------------

def _s_norm(a):
    return (2 * a / np.pi) ** 0.75


def quadrature_s_integrals(centers, exps, coefs, nuclei, charges):
    """S, T, V over contracted s functions on a Gauss-Hermite product grid.

    Nuclear attraction uses the Gaussian-transform identity
    ``1/r = 2/sqrt(pi) int_0^inf exp(-u^2 r^2) du`` with adaptive quadrature
    in ``u``; the spatial Gaussian integral is done in closed form per ``u``.
    Kinetic energy uses ``<a|-1/2 lap|b>`` with the Laplacian of ``b``
    evaluated on the grid.  Contractions are renormalized to unit
    self-overlap.
    """
    n = len(centers)
    S = np.zeros((n, n))
    T = np.zeros((n, n))
    V = np.zeros((n, n))
    xg, wg = roots_hermite(60)
    for i in range(n):
        for j in range(n):
            for a, ca in zip(exps[i], coefs[i]):
                for b, cb in zip(exps[j], coefs[j]):
                    A, B = np.asarray(centers[i], float), np.asarray(centers[j], float)
                    na, nb = _s_norm(a), _s_norm(b)
                    p = a + b
                    P = (a * A + b * B) / p
                    K = np.exp(-a * b / p * np.sum((A - B) ** 2))
                    # 1-D Gauss-Hermite: int exp(-p (x-P)^2) f(x) dx = sum w f(P + x/sqrt p)/sqrt p
                    pts = [P[k] + xg / np.sqrt(p) for k in range(3)]
                    w1 = wg / np.sqrt(p)
                    s1 = [w1.sum()] * 3
                    s_val = K * s1[0] * s1[1] * s1[2]
                    # kinetic: -1/2 lap exp(-b|r-B|^2) = (3b - 2 b^2 |r-B|^2) exp(...)
                    r2 = sum(
                        np.einsum("i,i->", w1, (pts[k] - B[k]) ** 2) * s1[(k + 1) % 3] * s1[(k + 2) % 3]
                        for k in range(3)
                    )
                    t_val = K * (3 * b * s_val / K - 2 * b * b * r2)
                    v_val = 0.0
                    for Z, C in zip(charges, nuclei):
                        C = np.asarray(C, float)
                        d2 = np.sum((P - C) ** 2)
                        # int exp(-p|r-P|^2 - u^2|r-C|^2) dr = (pi/(p+u^2))^1.5 exp(-p u^2 d2/(p+u^2))
                        def f(u, p=p, d2=d2):
                            return (np.pi / (p + u * u)) ** 1.5 * np.exp(-p * u * u * d2 / (p + u * u))
                        v_val -= Z * K * 2 / np.sqrt(np.pi) * quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
                    c = ca * cb * na * nb
                    S[i, j] += c * s_val
                    T[i, j] += c * t_val
                    V[i, j] += c * v_val
    # contracted functions are normalized to unit self-overlap
    d = 1 / np.sqrt(np.diag(S))
    scale = d[:, None] * d[None, :]
    return S * scale, T * scale, V * scale


def contracted_norm(exps, coefs) -> float:
    """Factor making ``sum_k c_k N(a_k) exp(-a_k r^2)`` unit-normalized."""
    tot = 0.0
    for a, ca in zip(exps, coefs):
        for b, cb in zip(exps, coefs):
            tot += ca * cb * _s_norm(a) * _s_norm(b) * (np.pi / (a + b)) ** 1.5
    return 1 / np.sqrt(tot)


def quadrature_eri_ssss(a, A, b, B, c, C, d, D):
    """Primitive (ab|cd) over unnormalized s Gaussians via the 1/r transform."""
    A, B, C, D = (np.asarray(x, float) for x in (A, B, C, D))
    p, q = a + b, c + d
    P, Q = (a * A + b * B) / p, (c * C + d * D) / q
    Kab = np.exp(-a * b / p * np.sum((A - B) ** 2))
    Kcd = np.exp(-c * d / q * np.sum((C - D) ** 2))
    # two Gaussians coupled by exp(-u^2 |r1-r2|^2): closed form per u
    mu = p * q / (p + q)
    R2 = np.sum((P - Q) ** 2)

    def f(u):
        return (np.pi**2 / (p * q)) ** 1.5 * (mu / (mu + u * u)) ** 1.5 * np.exp(-mu * u * u / (mu + u * u) * R2)

    return Kab * Kcd * 2 / np.sqrt(np.pi) * quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13)[0]


# --------------------------------------------------------------------------
# SCF and MP2 oracles
# --------------------------------------------------------------------------

def plain_rhf(S, h, eri, n_docc, e_nuc, iters=500, tol=1e-12):
    """Textbook Roothaan iterations with damping-free dense eigensolves."""
    from scipy.linalg import eigh

    _, C = eigh(h, S)
    D = 2 * C[:, :n_docc] @ C[:, :n_docc].T
    e_old = 0.0
    for _ in range(iters):
        J = np.einsum("pqrs,rs->pq", eri, D)
        K = np.einsum("prqs,rs->pq", eri, D)
        F = h + J - 0.5 * K
        e = 0.5 * np.sum(D * (h + F)) + e_nuc
        _, C = eigh(F, S)
        D_new = 2 * C[:, :n_docc] @ C[:, :n_docc].T
        if abs(e - e_old) < tol and np.abs(D_new - D).max() < 1e-10:
            return e, C
        D, e_old = D_new, e
    raise RuntimeError("oracle SCF did not converge")


def mp2_sum(v_as: np.ndarray, fock_diag: np.ndarray, occ, vir) -> float:
    e = 0.0
    for i, j in combinations(occ, 2):
        for a, b in combinations(vir, 2):
            d = fock_diag[i] + fock_diag[j] - fock_diag[a] - fock_diag[b]
            e += v_as[i, j, a, b] ** 2 / d
    return e
