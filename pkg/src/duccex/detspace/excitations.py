"""Reference-relative singles/doubles bookkeeping and determinant labels.

An amplitude ``x`` on the excitation ``(i, j -> a, b)`` means the operator
``x a+_a a+_b a_j a_i`` (``i < j``, ``a < b``); its image on the reference is
``sign * |det>`` where ``det`` is the determinant in canonical bitmask order.
The maps below hold those positions and signs so amplitudes and determinant
coefficients convert in both directions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .operators import FermionOperator, pair_index, pair_lists, _pair_position
from .space import DeterminantSpace, SpaceError, excitation_sign, rank_occ

__all__ = ["ExcitationMap", "det_label", "parse_excitation", "resolve_excitation"]


@dataclass(frozen=True, eq=False)
class ExcitationMap:
    """Spin-conserving singles and doubles of ``reference`` located in ``space``."""

    space: DeterminantSpace
    reference: tuple[int, ...]
    occ: np.ndarray
    vir: np.ndarray
    singles: np.ndarray = field(repr=False)  # (n1, 2): i, a
    doubles: np.ndarray = field(repr=False)  # (n2, 4): i, j, a, b
    pos1: np.ndarray = field(repr=False)
    sign1: np.ndarray = field(repr=False)
    pos2: np.ndarray = field(repr=False)
    sign2: np.ndarray = field(repr=False)
    ref_pos: int = -1

    @classmethod
    def build(cls, space: DeterminantSpace, reference=None) -> "ExcitationMap":
        sector = space.sector
        if reference is None:
            reference = space.reference
        ref = tuple(sorted(int(s) for s in reference))
        occ = np.array(ref, dtype=np.int64)
        vir = np.array([s for s in range(sector.n_so) if s not in ref], dtype=np.int64)
        singles = [(i, a) for i in occ for a in vir if i % 2 == a % 2]
        doubles = [
            (i, j, a, b)
            for i, j in combinations(occ, 2)
            for a, b in combinations(vir, 2)
            if (i % 2 + j % 2) == (a % 2 + b % 2)
        ]
        singles = np.array(singles, dtype=np.int64).reshape(-1, 2)
        doubles = np.array(doubles, dtype=np.int64).reshape(-1, 4)

        def locate(rows, k):
            pos, sgn = np.zeros(len(rows), dtype=np.int64), np.zeros(len(rows))
            dets = []
            for n, row in enumerate(rows):
                ann, cre = tuple(row[:k]), tuple(row[k:])
                s, det = excitation_sign(ref, ann, cre)
                sgn[n] = s
                dets.append(det)
            if dets:
                pos[:] = space.index_occ(np.array(dets, dtype=np.int64))
            return pos, sgn

        pos1, sign1 = locate(singles, 1)
        pos2, sign2 = locate(doubles, 2)
        if (pos1 < 0).any() or (pos2 < 0).any():
            raise SpaceError("space does not contain every single and double of the reference")
        return cls(space, ref, occ, vir, singles, doubles, pos1, sign1, pos2, sign2, space.index(ref))

    @property
    def n1(self) -> int:
        return len(self.singles)

    @property
    def n2(self) -> int:
        return len(self.doubles)

    def read(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Amplitudes (operator convention) from determinant coefficients."""
        return self.sign1 * vec[self.pos1], self.sign2 * vec[self.pos2]

    def write(self, a1, a2, c0: float = 0.0, out: np.ndarray | None = None) -> np.ndarray:
        """Determinant-coefficient vector of ``(c0 + A1 + A2)|ref>``."""
        v = np.zeros(self.space.dim) if out is None else out
        v[self.ref_pos] += c0
        v[self.pos1] += self.sign1 * np.asarray(a1)
        v[self.pos2] += self.sign2 * np.asarray(a2)
        return v

    def operator(self, a1=None, a2=None, const: float = 0.0) -> FermionOperator:
        """Excitation operator ``const + A1 + A2`` from flat amplitude vectors."""
        n_so = self.space.sector.n_so
        one = None
        if a1 is not None and self.n1:
            one = np.zeros((n_so, n_so))
            one[self.singles[:, 1], self.singles[:, 0]] = a1
        blocks = {}
        if a2 is not None and self.n2:
            typ, loc = _pair_position(n_so)
            i, j, a, b = self.doubles.T
            gc, ga = pair_index(a, b), pair_index(i, j)
            sizes = [len(r) for r, _ in pair_lists(n_so)]
            for t in range(3):
                m = typ[gc] == t
                if m.any():
                    w = np.zeros((sizes[t], sizes[t]))
                    w[loc[gc[m]], loc[ga[m]]] = np.asarray(a2)[m]
                    blocks[t] = w
        return FermionOperator(n_so, float(const), one, blocks, excitation=(const == 0.0))

    def expand_t2(self, a2) -> np.ndarray:
        """Full antisymmetric ``t2[i, j, a, b]`` over (occ, occ, vir, vir) positions."""
        no, nv = len(self.occ), len(self.vir)
        io = {int(s): k for k, s in enumerate(self.occ)}
        iv = {int(s): k for k, s in enumerate(self.vir)}
        t2 = np.zeros((no, no, nv, nv))
        for (i, j, a, b), x in zip(self.doubles, a2):
            i, j, a, b = io[int(i)], io[int(j)], iv[int(a)], iv[int(b)]
            t2[i, j, a, b] = x
            t2[j, i, a, b] = -x
            t2[i, j, b, a] = -x
            t2[j, i, b, a] = x
        return t2

    def expand_t1(self, a1) -> np.ndarray:
        io = {int(s): k for k, s in enumerate(self.occ)}
        iv = {int(s): k for k, s in enumerate(self.vir)}
        t1 = np.zeros((len(self.occ), len(self.vir)))
        for (i, a), x in zip(self.singles, a1):
            t1[io[int(i)], iv[int(a)]] = x
        return t1


# --------------------------------------------------------------------------
# Determinant notation: "ref", "1a->3a", "1a->2a,1b->2b" (1-based spatial)
# --------------------------------------------------------------------------

def _so_label(s: int) -> str:
    return f"{s // 2 + 1}{'ab'[s % 2]}"


def det_label(occ, reference) -> str:
    """Label a determinant by its excitation from ``reference``."""
    occ, ref = set(int(s) for s in occ), set(int(s) for s in reference)
    holes = sorted(ref - occ)
    parts = sorted(occ - ref)
    if not holes:
        return "ref"
    return ",".join(f"{_so_label(h)}->{_so_label(p)}" for h, p in zip(holes, parts))


_PAIR = re.compile(r"^\s*(\d+)\s*([abAB])\s*->\s*(\d+)\s*([abAB])\s*$")


def parse_excitation(text: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """``"1a->2a,1b->2b"`` -> (annihilated, created) spin orbitals (0-based)."""
    ann, cre = [], []
    for part in text.split(","):
        m = _PAIR.match(part)
        if not m:
            raise ValueError(f"cannot parse excitation {part!r}")
        o, so, v, sv = int(m[1]), m[2].lower(), int(m[3]), m[4].lower()
        if o < 1 or v < 1:
            raise ValueError("orbital indices are 1-based")
        ann.append(2 * (o - 1) + (so == "b"))
        cre.append(2 * (v - 1) + (sv == "b"))
    return tuple(ann), tuple(cre)


def resolve_excitation(reference, ann, cre) -> tuple[int, tuple[int, ...]]:
    """Apply ``a+_{c1} a+_{c2} .. a_{o2} a_{o1}`` to the reference.

    Returns ``(sign, occupation)``; raises if the string annihilates it.
    """
    res = excitation_sign(tuple(sorted(reference)), tuple(ann), tuple(cre))
    if res is None:
        raise ValueError(f"excitation {ann}->{cre} annihilates the reference")
    return res
