"""Number-conserving fermionic operators of rank <= 2 on determinant spaces.

Every operator is stored as

    const + sum_{pq} one[p, q] a+_p a_q
          + sum_{p<q, r<s} W[(pq), (rs)] a+_p a+_q a_s a_r

Application runs through intermediate (N-1)- and (N-2)-electron spaces: the
ket is first contracted with annihilators ``a_q`` or pairs ``a_s a_r``,
multiplied by the coefficient block, then re-created into the output space.
Blocks are kept per spin type of the orbital (pair), which is exact whenever
the input and output spaces share a sector.  Signs follow the ascending
creation convention: ``a_p`` on a determinant picks up ``(-1)`` to the number
of occupied spin orbitals below ``p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from ..hamio import SpinOrbitalHamiltonian
from .space import DeterminantSpace, SpaceError, WavefunctionVector, rank_occ, transfer_array

__all__ = [
    "FermionOperator",
    "ExcitationOperator",
    "pair_index",
    "pair_lists",
    "hamiltonian_operator",
    "spin_squared_operator",
    "apply_operator",
    "apply_hamiltonian",
    "apply_excitation",
    "exp_apply",
    "dense_matrix",
    "SeriesError",
]

# Budget (float64 entries) for one intermediate block during application.
_CHUNK_BUDGET = 3_000_000


class SeriesError(RuntimeError):
    pass


def pair_index(r, s):
    """Colex index of the pair ``r < s``."""
    return s * (s - 1) // 2 + r


@lru_cache(maxsize=None)
def pair_lists(n_so: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Per spin type (aa, mixed, bb): arrays ``(r, s)`` of canonical pairs."""
    out = []
    r, s = np.array(list(combinations(range(n_so), 2)), dtype=np.int64).reshape(-1, 2).T
    t = r % 2 + s % 2
    for typ in range(3):
        m = t == typ
        order = np.argsort(pair_index(r[m], s[m]))
        out.append((r[m][order], s[m][order]))
    return tuple(out)


@lru_cache(maxsize=None)
def _pair_position(n_so: int) -> tuple[np.ndarray, np.ndarray]:
    """Global pair index -> (type, local position)."""
    npair = n_so * (n_so - 1) // 2
    typ = np.full(npair, -1, dtype=np.int64)
    loc = np.full(npair, -1, dtype=np.int64)
    for t, (r, s) in enumerate(pair_lists(n_so)):
        g = pair_index(r, s)
        typ[g] = t
        loc[g] = np.arange(len(g))
    return typ, loc


@dataclass(frozen=True, eq=False)
class FermionOperator:
    """Numeric rank-<=2 operator in block form (see module docstring).

    ``one`` is ``(n_so, n_so)``; ``two`` maps pair type (0 = alpha-alpha,
    1 = mixed, 2 = beta-beta) to a square block over ``pair_lists(n_so)[t]``.
    ``excitation`` marks pure excitation operators, whose exponential series
    terminates exactly.
    """

    n_so: int
    const: float = 0.0
    one: np.ndarray | None = None
    two: dict[int, np.ndarray] = field(default_factory=dict)
    excitation: bool = False

    def adjoint(self) -> "FermionOperator":
        return FermionOperator(
            self.n_so,
            self.const,
            None if self.one is None else self.one.T.copy(),
            {t: w.T.copy() for t, w in self.two.items()},
            False,
        )

    def scaled(self, c: float) -> "FermionOperator":
        return FermionOperator(
            self.n_so,
            c * self.const,
            None if self.one is None else c * self.one,
            {t: c * w for t, w in self.two.items()},
            self.excitation,
        )

    def __add__(self, other: "FermionOperator") -> "FermionOperator":
        if other.n_so != self.n_so:
            raise ValueError("operators act on different spin-orbital sets")
        if self.one is None:
            one = None if other.one is None else other.one.copy()
        else:
            one = self.one.copy() if other.one is None else self.one + other.one
        two = {t: w.copy() for t, w in self.two.items()}
        for t, w in other.two.items():
            two[t] = two[t] + w if t in two else w.copy()
        return FermionOperator(self.n_so, self.const + other.const, one, two,
                               self.excitation and other.excitation)

    def __sub__(self, other: "FermionOperator") -> "FermionOperator":
        return self + other.scaled(-1.0)

    def is_zero(self) -> bool:
        return (
            self.const == 0
            and (self.one is None or not self.one.any())
            and all(not w.any() for w in self.two.values())
        )

    @classmethod
    def from_tensor(cls, n_so: int, const=0.0, one=None, two=None) -> "FermionOperator":
        """Build from ``one[p,q]`` and a 4-index ``two[p,q,r,s]`` multiplying
        ``a+_p a+_q a_s a_r`` (summed over all p, q, r, s)."""
        blocks = {}
        if two is not None:
            for t, (r, s) in enumerate(pair_lists(n_so)):
                if len(r) == 0:
                    continue
                P, Q = r[:, None], s[:, None]
                R, S = r[None, :], s[None, :]
                w = two[P, Q, R, S] - two[Q, P, R, S] - two[P, Q, S, R] + two[Q, P, S, R]
                if w.any():
                    blocks[t] = w
        return cls(n_so, float(const), None if one is None else np.array(one, dtype=float), blocks)


@dataclass(frozen=True)
class ExcitationOperator:
    """Term list ``amp * a+_{c1} a+_{c2} a_{a2} a_{a1}``.

    Each term is ``(amplitude, creations, annihilations)``; rank <= 2 and no
    index repeated within a term.  The adjoint swaps creations and
    annihilations and keeps the amplitude.
    """

    n_so: int
    terms: tuple[tuple[float, tuple[int, ...], tuple[int, ...]], ...] = ()

    def __post_init__(self):
        clean = []
        for amp, cre, ann in self.terms:
            cre, ann = tuple(int(c) for c in cre), tuple(int(a) for a in ann)
            if len(cre) != len(ann) or len(cre) > 2:
                raise ValueError(f"term rank must be <= 2 and number conserving: {cre}, {ann}")
            if len(set(cre)) != len(cre) or len(set(ann)) != len(ann):
                raise ValueError(f"repeated index within term {cre}, {ann}")
            if not np.isfinite(amp):
                raise ValueError("non-finite amplitude")
            if any(not 0 <= x < self.n_so for x in cre + ann):
                raise ValueError("spin-orbital index out of range")
            clean.append((float(amp), cre, ann))
        object.__setattr__(self, "terms", tuple(clean))

    def adjoint(self) -> "ExcitationOperator":
        return ExcitationOperator(self.n_so, tuple((a, ann, cre) for a, cre, ann in self.terms))

    def anti_hermitian(self) -> "ExcitationOperator":
        """``S - S+`` as a term list."""
        return ExcitationOperator(
            self.n_so, self.terms + tuple((-a, ann, cre) for a, cre, ann in self.terms)
        )

    def to_operator(self) -> FermionOperator:
        n = self.n_so
        const = 0.0
        one = np.zeros((n, n))
        typ, loc = _pair_position(n) if n >= 2 else (None, None)
        sizes = [len(r) for r, _ in pair_lists(n)]
        blocks: dict[int, np.ndarray] = {}
        excitation = True
        for amp, cre, ann in self.terms:
            if len(cre) == 0:
                const += amp
                excitation = False
            elif len(cre) == 1:
                one[cre[0], ann[0]] += amp
            else:
                sign = 1.0
                c1, c2 = cre
                if c1 > c2:
                    c1, c2, sign = c2, c1, -sign
                a1, a2 = ann
                if a1 > a2:
                    a1, a2, sign = a2, a1, -sign
                gc, ga = pair_index(c1, c2), pair_index(a1, a2)
                if typ[gc] != typ[ga]:
                    # changes S_z: vanishes between spaces of one sector
                    continue
                t = int(typ[gc])
                if t not in blocks:
                    blocks[t] = np.zeros((sizes[t], sizes[t]))
                blocks[t][loc[gc], loc[ga]] += sign * amp
        return FermionOperator(n, const, one if one.any() else None, blocks, excitation)


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------

def hamiltonian_operator(H: SpinOrbitalHamiltonian) -> FermionOperator:
    """Blocks of H assembled from spatial integrals without forming ``v_as``."""
    n_so = H.n_so
    g = H.spatial.eri
    blocks = {}
    for t, (r, s) in enumerate(pair_lists(n_so)):
        if len(r) == 0:
            continue
        P, Q = r[:, None], s[:, None]
        R, S = r[None, :], s[None, :]
        pP, pQ, pR, pS = P // 2, Q // 2, R // 2, S // 2
        direct = np.where((P % 2 == R % 2) & (Q % 2 == S % 2), g[pP, pR, pQ, pS], 0.0)
        exch = np.where((P % 2 == S % 2) & (Q % 2 == R % 2), g[pP, pS, pQ, pR], 0.0)
        blocks[t] = direct - exch
    return FermionOperator(n_so, H.e_core, np.array(H.h_so), blocks)


def spin_squared_operator(n_so: int) -> FermionOperator:
    """``S^2 = S- S+ + Sz (Sz + 1)`` written in rank-<=2 form."""
    n = n_so // 2
    a = 2 * np.arange(n)
    b = a + 1
    one = np.zeros((n_so, n_so))
    two = np.zeros((n_so,) * 4)
    # S- S+ = sum_p n_{p beta} - sum_{pq} a+_{p b} a+_{q a} a_{p a} a_{q b}
    one[b, b] += 1.0
    for p in range(n):
        for q in range(n):
            two[b[p], a[q], b[q], a[p]] -= 1.0
    # Sz = 1/2 (N_a - N_b);  Sz^2 = 1/4 sum_pq (n_p - ...)(n_q - ...)
    sz = np.zeros(n_so)
    sz[a], sz[b] = 0.5, -0.5
    # n_p n_q = a+_p a+_q a_q a_p + delta_pq n_p
    one[np.arange(n_so), np.arange(n_so)] += sz**2 + sz
    for p in range(n_so):
        for q in range(n_so):
            if p != q:
                two[p, q, p, q] += sz[p] * sz[q]
    return FermionOperator.from_tensor(n_so, 0.0, one, two)


# --------------------------------------------------------------------------
# Application machinery
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _removal_table(space: DeterminantSpace, k: int):
    """For k = 1 or 2: (det index, removed orbital/pair global index, sign, K rank)."""
    n_el = space.sector.n_elec
    occ = space.occ.astype(np.int64)
    rows, gidx, signs, kranks = [], [], [], []
    dets = np.arange(space.dim, dtype=np.int64)
    if n_el < k or space.dim == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, np.zeros(0), e
    for pos in combinations(range(n_el), k):
        keep = [j for j in range(n_el) if j not in pos]
        if k == 1:
            g = occ[:, pos[0]]
            sign = -1.0 if pos[0] % 2 else 1.0
        else:
            g = pair_index(occ[:, pos[0]], occ[:, pos[1]])
            sign = -1.0 if (pos[0] + pos[1] - 1) % 2 else 1.0
        rows.append(dets)
        gidx.append(g)
        signs.append(np.full(space.dim, sign))
        kranks.append(rank_occ(occ[:, keep], space.sector.n_so))
    return (np.concatenate(rows), np.concatenate(gidx), np.concatenate(signs), np.concatenate(kranks))


@dataclass
class _Link:
    blocks: list  # per type: (n_local, nK, L_in csr, L_out csr)


@lru_cache(maxsize=64)
def _link(space_in: DeterminantSpace, space_out: DeterminantSpace, k: int) -> _Link:
    if space_in.sector != space_out.sector:
        raise SpaceError("input and output spaces belong to different sectors")
    n_so = space_in.sector.n_so
    if k == 1:
        ntypes = 2
        typ_of = lambda g: g % 2  # noqa: E731
        loc_of = lambda g: g // 2  # noqa: E731
        sizes = [n_so // 2, n_so // 2]
    else:
        ntypes = 3
        ptyp, ploc = _pair_position(n_so)
        typ_of = lambda g: ptyp[g]  # noqa: E731
        loc_of = lambda g: ploc[g]  # noqa: E731
        sizes = [len(r) for r, _ in pair_lists(n_so)]
    tin = _removal_table(space_in, k)
    tout = tin if space_out is space_in else _removal_table(space_out, k)
    blocks = []
    for t in range(ntypes):
        mi = typ_of(tin[1]) == t
        mo = typ_of(tout[1]) == t
        if not mi.any() or not mo.any():
            blocks.append(None)
            continue
        kr = np.concatenate([tin[3][mi], tout[3][mo]])
        uniq, inv = np.unique(kr, return_inverse=True)
        nK = len(uniq)
        kin, kout = inv[: mi.sum()], inv[mi.sum():]
        rows_in = loc_of(tin[1][mi]) * nK + kin
        rows_out = loc_of(tout[1][mo]) * nK + kout
        shape_rows = sizes[t] * nK
        L_in = sp.csr_matrix((tin[2][mi], (rows_in, tin[0][mi])), shape=(shape_rows, space_in.dim))
        L_outT = sp.csr_matrix((tout[2][mo], (tout[0][mo], rows_out)), shape=(space_out.dim, shape_rows))
        blocks.append((sizes[t], nK, L_in, L_outT))
    return _Link(blocks)


def _apply_block(W, n_local, nK, L_in, L_outT, V, out):
    X = L_in @ V  # (n_local*nK, ncols)
    ncols = V.shape[1]
    X = X.reshape(n_local, nK * ncols)
    Y = W @ X
    out += L_outT @ Y.reshape(n_local * nK, ncols)


def apply_operator(op: FermionOperator, V: np.ndarray, space_in: DeterminantSpace,
                   space_out: DeterminantSpace | None = None) -> np.ndarray:
    """Apply ``op`` to a vector or column block over ``space_in``.

    The exact image is projected onto ``space_out`` (default ``space_in``).
    """
    space_out = space_in if space_out is None else space_out
    if op.n_so != space_in.sector.n_so:
        raise SpaceError("operator and space have different spin-orbital counts")
    V = np.asarray(V, dtype=float)
    vec = V.ndim == 1
    V2 = V.reshape(space_in.dim, -1)
    ncols = V2.shape[1]
    out = np.zeros((space_out.dim, ncols))
    if op.const:
        out += op.const * transfer_array(V2, space_in, space_out)
    for k, present in ((1, op.one is not None), (2, bool(op.two))):
        if not present:
            continue
        link = _link(space_in, space_out, k)
        for t, blk in enumerate(link.blocks):
            if blk is None:
                continue
            if k == 1:
                W = op.one[t::2, t::2]
            else:
                W = op.two.get(t)
                if W is None:
                    continue
            n_local, nK, L_in, L_outT = blk
            step = max(1, _CHUNK_BUDGET // max(1, n_local * nK))
            for c0 in range(0, ncols, step):
                sl = slice(c0, min(ncols, c0 + step))
                o = out[:, sl]
                _apply_block(W, n_local, nK, L_in, L_outT, V2[:, sl], o)
                out[:, sl] = o
    return out[:, 0] if vec else out


def _wrap(op, wf: WavefunctionVector, out_space):
    out_space = wf.space if out_space is None else out_space
    return WavefunctionVector(out_space, apply_operator(op, wf.coeffs, wf.space, out_space))


def apply_hamiltonian(H, wf: WavefunctionVector, out_space: DeterminantSpace | None = None) -> WavefunctionVector:
    """``H|wf>`` projected onto ``out_space``; ``H`` may be a Hamiltonian or operator."""
    op = hamiltonian_operator(H) if isinstance(H, SpinOrbitalHamiltonian) else H
    return _wrap(op, wf, out_space)


def apply_excitation(op, wf: WavefunctionVector, out_space: DeterminantSpace | None = None,
                     adjoint: bool = False) -> WavefunctionVector:
    if isinstance(op, ExcitationOperator):
        op = op.to_operator()
    if adjoint:
        op = op.adjoint()
    return _wrap(op, wf, out_space)


def exp_apply(op: FermionOperator, V, space: DeterminantSpace, sign: float = 1.0,
              max_terms: int = 40, rel_tol: float = 1e-14) -> np.ndarray:
    """``sum_k (sign * op)^k / k! V`` on ``space``.

    Pure excitation operators are summed until a term vanishes identically
    (exact).  Otherwise terms are appended until one has norm below
    ``rel_tol * ||result||``; hitting ``max_terms`` raises :class:`SeriesError`.
    """
    if isinstance(op, ExcitationOperator):
        op = op.to_operator()
    if isinstance(V, WavefunctionVector):
        return WavefunctionVector(V.space, exp_apply(op, V.coeffs, V.space, sign, max_terms, rel_tol))
    result = np.array(V, dtype=float, copy=True)
    if op.is_zero():
        return result
    term = result.copy()
    for k in range(1, max_terms + 1):
        term = apply_operator(op, term, space) * (sign / k)
        tn = np.linalg.norm(term)
        result += term
        if tn == 0.0:
            return result
        if not op.excitation and tn < rel_tol * np.linalg.norm(result):
            return result
    raise SeriesError(f"exponential series not converged after {max_terms} terms (last term norm {tn:.3e})")


def dense_matrix(op_closure, space: DeterminantSpace, guard: int = 20_000,
                 out_space: DeterminantSpace | None = None, chunk: int = 512) -> np.ndarray:
    """Matrix whose column ``j`` is ``op_closure`` applied to basis vector ``j``.

    ``op_closure`` maps a ``(dim, ncols)`` block to a ``(dim_out, ncols)`` block.
    A :class:`FermionOperator` is accepted directly.
    """
    if space.dim > guard:
        raise SpaceError(f"space dimension {space.dim} exceeds dense guard {guard}")
    out_space = space if out_space is None else out_space
    if isinstance(op_closure, FermionOperator):
        op = op_closure
        op_closure = lambda X: apply_operator(op, X, space, out_space)  # noqa: E731
    M = np.zeros((out_space.dim, space.dim))
    for c0 in range(0, space.dim, chunk):
        c1 = min(space.dim, c0 + chunk)
        E = np.zeros((space.dim, c1 - c0))
        E[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
        M[:, c0:c1] = op_closure(E)
    return M
