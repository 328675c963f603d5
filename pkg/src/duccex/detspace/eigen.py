"""Symmetric and non-symmetric eigensolvers."""

from __future__ import annotations

import logging

import numpy as np

__all__ = ["EigenError", "eig_sym", "davidson", "eig_nonsym", "fix_sign", "fix_signs"]

log = logging.getLogger(__name__)


class EigenError(RuntimeError):
    pass


def fix_sign(v: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude component is positive.

    Components within ``rel`` (relative) of the maximum count as ties; the
    first one in index order decides.
    """
    a = np.abs(v)
    m = a.max(initial=0.0)
    if m == 0:
        return v
    j = int(np.argmax(a >= m * (1 - rel)))
    return -v if v[j] < 0 else v


def fix_signs(V: np.ndarray) -> np.ndarray:
    return np.column_stack([fix_sign(V[:, k]) for k in range(V.shape[1])]) if V.size else V


def eig_sym(A, n_roots: int | None = None, guesses: np.ndarray | None = None,
            diag: np.ndarray | None = None, dim: int | None = None, **kw):
    """Lowest eigenpairs of a symmetric operator, ascending.

    ``A`` is a dense array (solved with LAPACK) or a callable mapping a
    ``(dim, k)`` block to its image, in which case Davidson is used and
    ``diag`` (or ``dim``) must be supplied.
    """
    if callable(A):
        if diag is None:
            if dim is None:
                raise ValueError("matvec mode needs diag= or dim=")
            diag = np.zeros(dim)
        return davidson(A, np.asarray(diag, float), n_roots or 1, guesses=guesses, **kw)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    if n_roots is not None:
        w, V = w[:n_roots], V[:, :n_roots]
    return w, fix_signs(V)


def _orthonormalize(V: np.ndarray, basis: np.ndarray | None, drop: float = 1e-10) -> np.ndarray:
    out = []
    for k in range(V.shape[1]):
        v = V[:, k].copy()
        for _ in range(2):
            if basis is not None and basis.shape[1]:
                v -= basis @ (basis.T @ v)
            for u in out:
                v -= u * (u @ v)
        n = np.linalg.norm(v)
        if n > drop:
            out.append(v / n)
    return np.column_stack(out) if out else np.zeros((V.shape[0], 0))


def davidson(matvec, diag: np.ndarray, n_roots: int, guesses: np.ndarray | None = None,
             tol: float = 1e-9, max_iter: int = 1000, max_space: int | None = None):
    """Block Davidson with diagonal preconditioner and thick restart.

    Converged when every requested root has residual norm below ``tol``.
    The subspace is capped at ``max(20 * n_roots, n_roots + 8)`` vectors;
    on overflow it restarts from the current ``2 * n_roots`` Ritz vectors.
    """
    dim = len(diag)
    n_roots = min(n_roots, dim)
    max_space = max_space or max(20 * n_roots, n_roots + 8)
    max_space = min(max_space, dim)
    if guesses is None:
        n_guess = min(dim, max(n_roots + 2, 2 * n_roots))
        idx = np.argsort(diag, kind="stable")[:n_guess]
        guesses = np.zeros((dim, n_guess))
        guesses[idx, np.arange(n_guess)] = 1.0
    V = _orthonormalize(np.asarray(guesses, float), None)
    AV = matvec(V)
    for it in range(max_iter):
        Hs = V.T @ AV
        theta, s = np.linalg.eigh(0.5 * (Hs + Hs.T))
        X = V @ s[:, :n_roots]
        AX = AV @ s[:, :n_roots]
        R = AX - X * theta[:n_roots]
        rn = np.linalg.norm(R, axis=0)
        if np.all(rn < tol):
            return theta[:n_roots], fix_signs(X)
        todo = np.flatnonzero(rn >= tol)
        denom = theta[todo][None, :] - diag[:, None]
        denom = np.where(np.abs(denom) < 1e-8, np.copysign(1e-8, denom + 0.0), denom)
        corr = R[:, todo] / denom
        if V.shape[1] + len(todo) > max_space:
            keep = min(V.shape[1], max(2 * n_roots, n_roots + 1))
            V = V @ s[:, :keep]
            AV = AV @ s[:, :keep]
        new = _orthonormalize(corr, V)
        if new.shape[1] == 0:
            # preconditioned residuals collapsed onto the subspace; use raw residuals
            new = _orthonormalize(R[:, todo], V)
            if new.shape[1] == 0:
                break
        V = np.column_stack([V, new])
        AV = np.column_stack([AV, matvec(new)])
    raise EigenError(f"Davidson stagnated: residuals {rn.max():.2e} after {it + 1} iterations")


def eig_nonsym(A: np.ndarray, n_roots: int | None = None, imag_tol: float = 1e-8,
               select=None):
    """Right eigenpairs of a real matrix sorted by real part.

    Roots with ``|imag| > imag_tol`` are errors if they fall among the
    requested ones.  ``select`` (optional) is a boolean mask over the sorted
    roots; only those are returned and checked.
    """
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eig(A)
    order = np.lexsort((w.imag, w.real))
    w, V = w[order], V[:, order]
    if select is not None:
        idx = np.flatnonzero(select(w.real))
    else:
        idx = np.arange(len(w) if n_roots is None else min(n_roots, len(w)))
    bad = idx[np.abs(w.imag[idx]) > imag_tol]
    if len(bad):
        raise EigenError(f"requested root {int(bad[0])} is complex: {w[bad[0]]:.6g}")
    vecs = np.real(V[:, idx])
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    return w.real[idx], fix_signs(vecs)
