"""Integral containers, FCIDUMP I/O, spin-orbital assembly and active spaces.

Spin orbitals are interleaved: spatial orbital ``p`` carries alpha spin at
index ``2p`` and beta spin at ``2p + 1``.  Two-electron integrals are kept in
chemists' notation ``(pq|rs)`` for spatial orbitals and as antisymmetrized
physicists' integrals ``<pq||rs>`` for spin orbitals.
"""

from __future__ import annotations

import gzip
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "FcidumpError",
    "SpatialIntegrals",
    "SpinOrbitalHamiltonian",
    "ActiveSpace",
    "parse_fcidump",
    "emit_fcidump",
    "read_fcidump",
    "write_fcidump",
    "to_spin_orbital",
    "classify_active",
    "restricted_energy",
]

DUPLICATE_TOL = 1e-12
EMIT_ZERO_TOL = 1e-14


class FcidumpError(ValueError):
    """Raised for malformed or inconsistent FCIDUMP content."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpatialIntegrals:
    """Bare electronic Hamiltonian over spatial orbitals (Hartree)."""

    n_orb: int
    e_core: float
    h: np.ndarray
    eri: np.ndarray
    n_elec: int
    ms2: int = 0
    comments: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.n_orb
        object.__setattr__(self, "h", _frozen(self.h))
        object.__setattr__(self, "eri", _frozen(self.eri))
        object.__setattr__(self, "e_core", float(self.e_core))
        if self.h.shape != (n, n) or self.eri.shape != (n,) * 4:
            raise ValueError(f"integral shapes {self.h.shape}, {self.eri.shape} do not match n_orb={n}")
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.eri)) and np.isfinite(self.e_core)):
            raise ValueError("integrals contain non-finite entries")
        if self.n_elec < 0 or self.n_elec > 2 * n:
            raise ValueError(f"n_elec={self.n_elec} impossible for {n} orbitals")
        if (self.n_elec + self.ms2) % 2 or abs(self.ms2) > self.n_elec:
            raise ValueError(f"ms2={self.ms2} inconsistent with n_elec={self.n_elec}")

    def symmetry_violation(self) -> float:
        """Largest deviation from the 2-fold (h) and 8-fold (eri) symmetries."""
        g = self.eri
        dev = [
            np.abs(self.h - self.h.T).max(initial=0.0),
            np.abs(g - g.transpose(1, 0, 2, 3)).max(initial=0.0),
            np.abs(g - g.transpose(0, 1, 3, 2)).max(initial=0.0),
            np.abs(g - g.transpose(2, 3, 0, 1)).max(initial=0.0),
        ]
        return float(max(dev))

    def allclose(self, other: "SpatialIntegrals", atol: float = 0.0) -> bool:
        return (
            self.n_orb == other.n_orb
            and self.n_elec == other.n_elec
            and self.ms2 == other.ms2
            and abs(self.e_core - other.e_core) <= atol
            and np.allclose(self.h, other.h, rtol=0, atol=atol)
            and np.allclose(self.eri, other.eri, rtol=0, atol=atol)
        )


# --------------------------------------------------------------------------
# FCIDUMP
# --------------------------------------------------------------------------

_HEADER_END = re.compile(r"^\s*(&END|/)\s*$", re.IGNORECASE)
_KEYVAL = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=,?\s*[A-Za-z_][A-Za-z0-9_]*\s*=|,?\s*$)", re.S)


def _parse_header(header: str) -> dict[str, list[int]]:
    body = re.sub(r"^\s*&FCI", "", header.strip(), flags=re.IGNORECASE)
    body = body.replace("\n", " ")
    out: dict[str, list[int]] = {}
    for key, raw in _KEYVAL.findall(body):
        vals = [v for v in re.split(r"[,\s]+", raw.strip()) if v]
        try:
            out[key.upper()] = [int(v) for v in vals]
        except ValueError as exc:
            raise FcidumpError(f"non-integer header value for {key}: {raw!r}") from exc
    return out


def parse_fcidump(text: str) -> SpatialIntegrals:
    """Parse FCIDUMP text into :class:`SpatialIntegrals`.

    Lines starting with ``!`` or ``#`` before the namelist are kept as
    comments (fixture provenance).  ORBSYM and ISYM are read and ignored.
    Orbital-energy lines ``e i 0 0 0`` are ignored as well.
    """
    lines = text.splitlines()
    comments = []
    start = 0
    while start < len(lines) and (not lines[start].strip() or lines[start].lstrip()[:1] in "!#"):
        if lines[start].strip():
            comments.append(lines[start].lstrip()[1:].strip())
        start += 1
    if start >= len(lines) or not lines[start].lstrip().upper().startswith("&FCI"):
        raise FcidumpError("missing &FCI namelist header")
    end = start
    while end < len(lines) and not _HEADER_END.match(lines[end]):
        if re.search(r"(&END|/)\s*$", lines[end].strip(), re.IGNORECASE):
            break
        end += 1
    if end >= len(lines):
        raise FcidumpError("unterminated namelist header (no &END or /)")
    header_text = "\n".join(lines[start:end + 1])
    header_text = re.sub(r"(&END|/)\s*$", "", header_text.strip(), flags=re.IGNORECASE)
    header = _parse_header(header_text)
    for key in ("NORB", "NELEC"):
        if key not in header or len(header[key]) != 1:
            raise FcidumpError(f"header lacks a single {key} value")
    n = header["NORB"][0]
    nelec = header["NELEC"][0]
    ms2 = header.get("MS2", [0])[0]
    if n <= 0:
        raise FcidumpError(f"NORB must be positive, got {n}")

    body = [ln.split() for ln in lines[end + 1:] if ln.strip()]
    h = np.zeros((n, n))
    eri = np.zeros((n, n, n, n))
    e_core = 0.0
    if body:
        try:
            vals = np.array([float(b[0].replace("D", "E").replace("d", "e")) for b in body])
            idx = np.array([[int(x) for x in b[1:5]] for b in body], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise FcidumpError("malformed integral line") from exc
        if idx.shape[1] != 4:
            raise FcidumpError("integral lines need a value and four indices")
        if idx.min() < 0 or idx.max() > n:
            raise FcidumpError(f"integral index outside [0, {n}]")
        nz = idx != 0
        is_eri = nz.all(axis=1)
        is_one = nz[:, 0] & nz[:, 1] & ~nz[:, 2] & ~nz[:, 3]
        is_core = ~nz.any(axis=1)
        is_orbe = nz[:, 0] & ~nz[:, 1] & ~nz[:, 2] & ~nz[:, 3]
        bad = ~(is_eri | is_one | is_core | is_orbe)
        if bad.any():
            raise FcidumpError(f"unrecognized index pattern {idx[bad][0].tolist()}")

        if is_core.any():
            core = vals[is_core]
            if np.ptp(core) > DUPLICATE_TOL:
                raise FcidumpError("conflicting core-energy entries")
            e_core = float(core[-1])

        p, q = idx[is_one, 0] - 1, idx[is_one, 1] - 1
        v = vals[is_one]
        key = np.maximum(p, q) * n + np.minimum(p, q)
        _check_duplicates(key, v, "one-electron")
        h[p, q] = v
        h[q, p] = v

        p, q, r, s = (idx[is_eri, k] - 1 for k in range(4))
        v = vals[is_eri]
        pq = np.maximum(p, q) * (np.maximum(p, q) + 1) // 2 + np.minimum(p, q)
        rs = np.maximum(r, s) * (np.maximum(r, s) + 1) // 2 + np.minimum(r, s)
        key = np.maximum(pq, rs) * (np.maximum(pq, rs) + 1) // 2 + np.minimum(pq, rs)
        _check_duplicates(key, v, "two-electron")
        for a, b, c, d in ((p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r)):
            eri[a, b, c, d] = v
            eri[c, d, a, b] = v
    return SpatialIntegrals(n, e_core, h, eri, nelec, ms2, tuple(comments))


def _check_duplicates(key: np.ndarray, vals: np.ndarray, what: str) -> None:
    if key.size == 0:
        return
    order = np.argsort(key, kind="stable")
    k, v = key[order], vals[order]
    same = k[1:] == k[:-1]
    if np.any(same & (np.abs(v[1:] - v[:-1]) > DUPLICATE_TOL)):
        raise FcidumpError(f"duplicate {what} entry with conflicting value")


def _fmt(v: float) -> str:
    return f"{v: .17e}"


def emit_fcidump(ints: SpatialIntegrals) -> str:
    """Render canonical FCIDUMP text.

    Two-electron entries satisfy p>=q, r>=s, (pq)>=(rs); they are sorted by
    the (pq) pair ascending and, inside one (pq) block, by (rs) descending so
    the diagonal (pq|pq) leads its block.  One-electron entries follow
    (p>=q, ascending), then the core energy.  Magnitudes below 1e-14 are
    dropped, the core energy included (a missing core line reads as 0).
    """
    n = ints.n_orb
    out = [f"! {c}" for c in ints.comments]
    out.append(f" &FCI NORB={n},NELEC={ints.n_elec},MS2={ints.ms2},")
    out.append("  ORBSYM=" + ",".join(["1"] * n) + ",")
    out.append("  ISYM=1,")
    out.append(" &END")
    pairs = [(p, q) for p in range(n) for q in range(p + 1)]
    g = ints.eri
    for ij, (p, q) in enumerate(pairs):
        for kl in range(ij, -1, -1):
            r, s = pairs[kl]
            v = g[p, q, r, s]
            if abs(v) >= EMIT_ZERO_TOL:
                out.append(f"{_fmt(v)} {p + 1:4d} {q + 1:4d} {r + 1:4d} {s + 1:4d}")
    for p, q in pairs:
        v = ints.h[p, q]
        if abs(v) >= EMIT_ZERO_TOL:
            out.append(f"{_fmt(v)} {p + 1:4d} {q + 1:4d}    0    0")
    if abs(ints.e_core) >= EMIT_ZERO_TOL:
        out.append(f"{_fmt(ints.e_core)}    0    0    0    0")
    return "\n".join(out) + "\n"


def read_fcidump(path) -> SpatialIntegrals:
    """Read an FCIDUMP file; ``.gz`` files are decompressed transparently."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        return parse_fcidump(fh.read())


def write_fcidump(ints: SpatialIntegrals, path) -> None:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt") as fh:
        fh.write(emit_fcidump(ints))


# --------------------------------------------------------------------------
# Spin-orbital Hamiltonian
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpinOrbitalHamiltonian:
    """Second-quantized H over interleaved spin orbitals.

    ``v_as`` is assembled lazily because it scales as ``(2 n_orb)**4``; the
    determinant engine builds its pair blocks straight from ``spatial``.
    """

    spatial: SpatialIntegrals
    h_so: np.ndarray = field(repr=False)

    @property
    def n_so(self) -> int:
        return 2 * self.spatial.n_orb

    @property
    def e_core(self) -> float:
        return self.spatial.e_core

    @property
    def n_elec(self) -> int:
        return self.spatial.n_elec

    @cached_property
    def v_as(self) -> np.ndarray:
        """``<pq||rs>`` as a dense ``n_so**4`` tensor."""
        n = self.spatial.n_orb
        g = self.spatial.eri
        spin = np.arange(2 * n) % 2
        sp = np.arange(2 * n) // 2
        same = spin[:, None] == spin[None, :]
        # <pq|rs> = (pr|qs) delta(sp,sr) delta(sq,ss)
        direct = g[np.ix_(sp, sp, sp, sp)].transpose(0, 2, 1, 3)
        direct = direct * same[:, None, :, None] * same[None, :, None, :]
        v = direct - direct.transpose(0, 1, 3, 2)
        v.setflags(write=False)
        return v

    def fock(self, occ) -> np.ndarray:
        """Fock matrix ``f_pq = h_pq + sum_i <pi||qi>`` for occupied spin orbitals."""
        occ = np.asarray(occ, dtype=int)
        n = self.spatial.n_orb
        g = self.spatial.eri
        sp = np.arange(2 * n) // 2
        spin = np.arange(2 * n) % 2
        same = spin[:, None] == spin[None, :]
        f = self.h_so.copy()
        for i in occ:
            si, pi = spin[i], sp[i]
            f += g[:, :, pi, pi][np.ix_(sp, sp)] * same
            f -= g[:, pi, pi, :][np.ix_(sp, sp)] * ((spin[:, None] == si) & (spin[None, :] == si))
        return f

    def determinant_energy(self, occ) -> float:
        """Diagonal Slater-Condon energy of a determinant, including e_core."""
        occ = np.asarray(occ, dtype=int)
        g = self.spatial.eri
        sp, spin = occ // 2, occ % 2
        e1 = self.h_so[occ, occ].sum()
        J = g[np.ix_(sp, sp, sp, sp)]
        coul = np.einsum("iijj->ij", J)
        exch = np.einsum("ijji->ij", J) * (spin[:, None] == spin[None, :])
        return float(self.e_core + e1 + 0.5 * (coul - exch).sum())


def to_spin_orbital(ints: SpatialIntegrals) -> SpinOrbitalHamiltonian:
    """Spin-duplicate the one-electron integrals (interleaved ordering)."""
    n = ints.n_orb
    h_so = np.zeros((2 * n, 2 * n))
    h_so[0::2, 0::2] = ints.h
    h_so[1::2, 1::2] = ints.h
    h_so.setflags(write=False)
    return SpinOrbitalHamiltonian(ints, h_so)


def restricted_energy(ints: SpatialIntegrals, n_docc: int) -> float:
    """Closed-shell determinant energy from spatial integrals."""
    o = slice(0, n_docc)
    g = ints.eri
    J = np.einsum("iijj->ij", g[o, o, o, o])
    K = np.einsum("ijji->ij", g[o, o, o, o])
    return float(ints.e_core + 2 * np.trace(ints.h[o, o]) + (2 * J - K).sum())


# --------------------------------------------------------------------------
# Active spaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ActiveSpace:
    """Ordered list of active spatial orbitals (0-based)."""

    active_spatial: tuple[int, ...]

    def __post_init__(self):
        act = tuple(int(p) for p in self.active_spatial)
        if len(set(act)) != len(act):
            raise ValueError(f"duplicate active orbitals in {act}")
        if any(p < 0 for p in act):
            raise ValueError(f"negative active orbital index in {act}")
        object.__setattr__(self, "active_spatial", act)

    @classmethod
    def first(cls, n: int) -> "ActiveSpace":
        return cls(tuple(range(n)))

    def validate(self, n_orb: int) -> None:
        bad = [p for p in self.active_spatial if p >= n_orb]
        if bad:
            raise ValueError(f"active orbitals {bad} out of range for n_orb={n_orb}")

    def spin_flags(self, n_orb: int) -> np.ndarray:
        return classify_active(self, n_orb)

    def is_external(self, indices, n_orb: int) -> bool:
        """True if any spin-orbital index in ``indices`` is inactive."""
        flags = classify_active(self, n_orb)
        return not all(flags[i] for i in indices)


def classify_active(space: ActiveSpace, n_orb: int) -> np.ndarray:
    """Boolean flag per spin orbital: ``True`` when its spatial orbital is active."""
    space.validate(n_orb)
    spatial = np.zeros(n_orb, dtype=bool)
    spatial[list(space.active_spatial)] = True
    return np.repeat(spatial, 2)
