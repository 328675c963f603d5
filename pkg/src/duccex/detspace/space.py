"""Determinant sectors, canonical ordering and restricted spaces.

A determinant is stored as the ascending list of its occupied spin orbitals.
Spaces are sorted by the determinant's combinadic rank, which for a fixed
electron count coincides with ordering by the occupation bitmask read as an
integer (bit ``s`` set when spin orbital ``s`` is occupied).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from ..hamio import ActiveSpace, classify_active

__all__ = [
    "Sector",
    "DeterminantSpace",
    "WavefunctionVector",
    "SpaceError",
    "enumerate_space",
    "reference_occupation",
    "occ_to_mask",
    "mask_to_occ",
    "rank_occ",
    "excitation_sign",
]

_RANK_LIMIT = 2**62


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Sector:
    """Fixed particle number and spin projection (``ms2 = n_alpha - n_beta``)."""

    n_so: int
    n_elec: int
    ms2: int = 0

    def __post_init__(self):
        if self.n_so % 2:
            raise SpaceError("spin-orbital count must be even (interleaved alpha/beta)")
        if not 0 <= self.n_elec <= self.n_so:
            raise SpaceError(f"need 0 <= n_elec <= n_so, got {self.n_elec}, {self.n_so}")

    @property
    def n_orb(self) -> int:
        return self.n_so // 2

    @property
    def n_alpha(self) -> int:
        return (self.n_elec + self.ms2) // 2

    @property
    def n_beta(self) -> int:
        return (self.n_elec - self.ms2) // 2

    @property
    def achievable(self) -> bool:
        return (
            (self.n_elec + self.ms2) % 2 == 0
            and 0 <= self.n_alpha <= self.n_orb
            and 0 <= self.n_beta <= self.n_orb
        )


@lru_cache(maxsize=None)
def _binom_table(n: int, k: int) -> np.ndarray:
    t = np.zeros((n + 1, k + 2), dtype=np.int64)
    for i in range(n + 1):
        for j in range(k + 2):
            t[i, j] = comb(i, j)
    return t


def rank_occ(occ: np.ndarray, n_so: int) -> np.ndarray:
    """Combinadic rank of each row of ascending occupations (int64)."""
    occ = np.asarray(occ)
    if occ.ndim == 1:
        occ = occ[None, :]
    k = occ.shape[1]
    if k == 0:
        return np.zeros(occ.shape[0], dtype=np.int64)
    if comb(n_so, k) >= _RANK_LIMIT:
        raise SpaceError(f"sector C({n_so},{k}) too large for int64 ranks")
    table = _binom_table(n_so, k)
    r = np.zeros(occ.shape[0], dtype=np.int64)
    for j in range(k):
        r += table[occ[:, j], j + 1]
    return r


def occ_to_mask(occ) -> int:
    m = 0
    for s in occ:
        m |= 1 << int(s)
    return m


def mask_to_occ(mask: int) -> tuple[int, ...]:
    out = []
    s = 0
    while mask:
        if mask & 1:
            out.append(s)
        mask >>= 1
        s += 1
    return tuple(out)


def reference_occupation(sector: Sector) -> tuple[int, ...]:
    """Aufbau reference: lowest spatial orbitals, alpha and beta."""
    occ = [2 * p for p in range(sector.n_alpha)] + [2 * p + 1 for p in range(sector.n_beta)]
    return tuple(sorted(occ))


def excitation_sign(occ, annihilate, create) -> tuple[int, tuple[int, ...]] | None:
    """Apply ``a+_{c1} a+_{c2} ... a_{a2} a_{a1}`` to an occupation tuple.

    Annihilators act right-to-left in the order given (``annihilate[0]``
    first), then creators (``create[-1]`` first).  Returns ``(sign, occ)``
    or ``None`` when the result vanishes.
    """
    occ = list(occ)
    sign = 1
    for a in annihilate:
        if a not in occ:
            return None
        pos = occ.index(a)
        if pos % 2:
            sign = -sign
        occ.pop(pos)
    for c in reversed(create):
        if c in occ:
            return None
        pos = int(np.searchsorted(occ, c))
        if pos % 2:
            sign = -sign
        occ.insert(pos, c)
    return sign, tuple(occ)


@dataclass(frozen=True, eq=False)
class DeterminantSpace:
    """Ordered set of determinants within one sector.

    ``restriction`` is ``"full"``, ``"cas"`` (reference-anchored active space)
    or ``"sd"`` (reference plus singles and doubles).
    """

    sector: Sector
    occ: np.ndarray = field(repr=False)
    ranks: np.ndarray = field(repr=False)
    restriction: str = "full"
    active: ActiveSpace | None = None
    reference: tuple[int, ...] | None = None

    def __post_init__(self):
        self.occ.setflags(write=False)
        self.ranks.setflags(write=False)

    def __len__(self) -> int:
        return self.occ.shape[0]

    @property
    def dim(self) -> int:
        return self.occ.shape[0]

    def index(self, det) -> int:
        """Position of a determinant (bitmask int or occupation tuple); -1 if absent."""
        occ = mask_to_occ(det) if isinstance(det, (int, np.integer)) else tuple(sorted(det))
        if len(occ) != self.sector.n_elec or (occ and max(occ) >= self.sector.n_so):
            return -1
        r = rank_occ(np.array([occ], dtype=np.int64).reshape(1, -1), self.sector.n_so)[0]
        return self.index_ranks(np.array([r]))[0]

    def index_ranks(self, ranks: np.ndarray) -> np.ndarray:
        ranks = np.asarray(ranks, dtype=np.int64)
        if self.dim == 0:
            return np.full(len(ranks), -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.ranks, ranks), self.dim - 1)
        return np.where(self.ranks[pos] == ranks, pos, -1)

    def index_occ(self, occ: np.ndarray) -> np.ndarray:
        return self.index_ranks(rank_occ(occ, self.sector.n_so))

    def bitmask(self, i: int) -> int:
        return occ_to_mask(self.occ[i])

    def bitmasks(self) -> list[int]:
        return [occ_to_mask(o) for o in self.occ]

    def reference_index(self) -> int:
        ref = self.reference if self.reference is not None else reference_occupation(self.sector)
        return self.index(ref)

    def occupancy(self) -> np.ndarray:
        """Dense boolean occupation table (dim x n_so)."""
        out = np.zeros((self.dim, self.sector.n_so), dtype=bool)
        if self.sector.n_elec:
            np.put_along_axis(out, self.occ.astype(np.int64), True, axis=1)
        return out


@dataclass(frozen=True, eq=False)
class WavefunctionVector:
    """Real coefficients aligned with a :class:`DeterminantSpace`."""

    space: DeterminantSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.dim,):
            raise SpaceError(f"vector length {c.shape} does not match space dim {self.space.dim}")
        if not np.all(np.isfinite(c)):
            raise SpaceError("non-finite coefficients")
        object.__setattr__(self, "coeffs", c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def normalized(self) -> "WavefunctionVector":
        n = self.norm()
        if n == 0:
            raise SpaceError("cannot normalize a zero vector")
        return WavefunctionVector(self.space, self.coeffs / n)

    def dot(self, other: "WavefunctionVector") -> float:
        if other.space is not self.space:
            other = transfer(other, self.space)
        return float(self.coeffs @ other.coeffs)


def _strings(n_orb: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations(range(n_orb), k)), dtype=np.int64)


def _combine(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    na, nb = len(alpha), len(beta)
    a = np.repeat(2 * alpha, nb, axis=0)
    b = np.tile(2 * beta + 1, (na, 1))
    occ = np.concatenate([a, b], axis=1)
    occ.sort(axis=1)
    return occ


def _finish(sector, occ, restriction, active=None, reference=None) -> DeterminantSpace:
    occ = occ.reshape(-1, sector.n_elec).astype(np.int64)
    ranks = rank_occ(occ, sector.n_so) if len(occ) else np.zeros(0, dtype=np.int64)
    order = np.argsort(ranks, kind="stable")
    occ, ranks = occ[order], ranks[order]
    return DeterminantSpace(sector, np.ascontiguousarray(occ.astype(np.int32)), ranks, restriction, active, reference)


def enumerate_space(
    sector: Sector,
    restriction: str = "full",
    active: ActiveSpace | None = None,
    reference=None,
) -> DeterminantSpace:
    """All determinants of ``sector`` obeying ``restriction``, in canonical order.

    An impossible sector yields an empty space.  For ``"cas"`` the inactive
    spin orbitals keep the reference occupation; a reference whose electron
    count or spin does not fit the sector is an error.
    """
    if reference is None:
        reference = reference_occupation(sector) if sector.achievable else None
    elif reference is not None:
        reference = tuple(sorted(int(s) for s in reference))
    if not sector.achievable:
        return _finish(sector, np.zeros((0, sector.n_elec)), restriction, active, reference)
    n_orb = sector.n_orb

    if restriction == "full":
        occ = _combine(_strings(n_orb, sector.n_alpha), _strings(n_orb, sector.n_beta))
        return _finish(sector, occ, "full", None, reference)

    _check_reference(sector, reference)
    if restriction == "cas":
        if active is None:
            raise SpaceError("CAS restriction needs an ActiveSpace")
        flags = classify_active(active, n_orb)
        ref = np.array(reference, dtype=np.int64)
        frozen = ref[~flags[ref]]
        act_orb = np.array(sorted(active.active_spatial), dtype=np.int64)
        na_act = sector.n_alpha - int(np.sum(frozen % 2 == 0))
        nb_act = sector.n_beta - int(np.sum(frozen % 2 == 1))
        if not (0 <= na_act <= len(act_orb) and 0 <= nb_act <= len(act_orb)):
            raise SpaceError("reference not representable in the active space")
        a = act_orb[_strings(len(act_orb), na_act)]
        b = act_orb[_strings(len(act_orb), nb_act)]
        occ = _combine(a, b)
        occ = np.concatenate([occ, np.tile(frozen, (len(occ), 1))], axis=1)
        occ.sort(axis=1)
        return _finish(sector, occ, "cas", active, reference)

    if restriction == "sd":
        full = enumerate_space(sector, "full", reference=reference)
        in_ref = np.zeros(sector.n_so, dtype=bool)
        in_ref[list(reference)] = True
        level = sector.n_elec - in_ref[full.occ].sum(axis=1)
        return _finish(sector, full.occ[level <= 2], "sd", None, reference)

    raise SpaceError(f"unknown restriction {restriction!r}")


def _check_reference(sector: Sector, reference) -> None:
    if reference is None or len(reference) != sector.n_elec:
        raise SpaceError("reference determinant does not match the sector electron count")
    ref = np.asarray(reference)
    if ref.size and (ref.max() >= sector.n_so or ref.min() < 0):
        raise SpaceError("reference orbital out of range")
    if int(np.sum(ref % 2 == 0)) != sector.n_alpha:
        raise SpaceError("reference spin projection does not match the sector")


def transfer(vec, out_space: DeterminantSpace):
    """Re-express a vector (or matrix of column vectors) on another space.

    Determinants absent from ``out_space`` are dropped (projection).
    """
    if isinstance(vec, WavefunctionVector):
        return WavefunctionVector(out_space, transfer_array(vec.coeffs, vec.space, out_space))
    raise TypeError("transfer expects a WavefunctionVector; use transfer_array for arrays")


def transfer_array(arr: np.ndarray, in_space: DeterminantSpace, out_space: DeterminantSpace) -> np.ndarray:
    if in_space is out_space:
        return np.array(arr, dtype=float, copy=True)
    if in_space.sector != out_space.sector:
        raise SpaceError("sector mismatch")
    pos = out_space.index_ranks(in_space.ranks)
    keep = pos >= 0
    out = np.zeros((out_space.dim,) + arr.shape[1:])
    out[pos[keep]] = arr[keep]
    return out
