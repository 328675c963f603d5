"""Spin-orbital CCSD by exact determinant-space residuals.

The residual on every single/double ``mu`` is ``<mu| e^{-T} H e^{T} |Phi>``
evaluated by exponentiating T numerically in the full sector, so there is no
diagrammatic truncation to get wrong.  Amplitudes are updated with
Moller-Plesset denominators and accelerated by DIIS.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .detspace import (
    DeterminantSpace,
    FermionOperator,
    Sector,
    apply_operator,
    enumerate_space,
    exp_apply,
    hamiltonian_operator,
    reference_occupation,
)
from .detspace.excitations import ExcitationMap
from .hamio import SpinOrbitalHamiltonian

__all__ = ["CcsdConfig", "ClusterAmplitudes", "CcsdError", "solve_ccsd", "ccsd_residuals", "mp2_energy", "Diis"]

log = logging.getLogger(__name__)


class CcsdError(RuntimeError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class CcsdConfig:
    conv_tol: float = 1e-9
    max_iter: int = 200
    diis_depth: int = 8
    level_shift: float = 0.0  # 0.1 Hartree is a reasonable start for near-degenerate cases


@dataclass(frozen=True, eq=False)
class ClusterAmplitudes:
    """Converged T1/T2 in operator convention over ``exmap``'s excitation lists."""

    exmap: ExcitationMap
    t1_flat: np.ndarray
    t2_flat: np.ndarray
    e_ref: float
    e_corr: float
    converged: bool = True
    n_iter: int = 0
    history: tuple[tuple[int, float, float], ...] = field(default=(), repr=False)

    @property
    def reference(self) -> tuple[int, ...]:
        return self.exmap.reference

    @property
    def space(self) -> DeterminantSpace:
        return self.exmap.space

    @property
    def e_total(self) -> float:
        return self.e_ref + self.e_corr

    @property
    def t1(self) -> np.ndarray:
        return self.exmap.expand_t1(self.t1_flat)

    @property
    def t2(self) -> np.ndarray:
        return self.exmap.expand_t2(self.t2_flat)

    def operator(self, singles: bool = True, doubles: bool = True) -> FermionOperator:
        return self.exmap.operator(self.t1_flat if singles else None, self.t2_flat if doubles else None)

    def wavefunction(self) -> np.ndarray:
        """``e^T |Phi>`` over the full sector (unnormalized)."""
        phi = np.zeros(self.space.dim)
        phi[self.exmap.ref_pos] = 1.0
        return exp_apply(self.operator(), phi, self.space)


def ccsd_residuals(hop: FermionOperator, exmap: ExcitationMap, t1, t2) -> tuple[float, np.ndarray, np.ndarray]:
    """Return ``(<Phi|Hbar|Phi>, r1, r2)`` for amplitudes ``t1, t2``."""
    space = exmap.space
    T = exmap.operator(t1, t2)
    phi = np.zeros(space.dim)
    phi[exmap.ref_pos] = 1.0
    w = exp_apply(T, apply_operator(hop, exp_apply(T, phi, space), space), space, sign=-1.0)
    r1, r2 = exmap.read(w)
    return float(w[exmap.ref_pos]), r1, r2


def _denominators(H: SpinOrbitalHamiltonian, exmap: ExcitationMap, shift: float):
    eps = np.diag(H.fock(exmap.reference))
    d1 = eps[exmap.singles[:, 1]] - eps[exmap.singles[:, 0]] + shift
    i, j, a, b = exmap.doubles.T
    d2 = eps[a] + eps[b] - eps[i] - eps[j] + shift
    return d1, d2


def mp2_energy(H: SpinOrbitalHamiltonian, reference=None) -> float:
    """Direct sum ``-1/4 sum |<ij||ab>|^2 / D_ijab`` over the spin-orbital
    integral tensor (canonical orbitals assumed)."""
    n_so = H.n_so
    if reference is None:
        reference = reference_occupation(Sector(n_so, H.n_elec, H.spatial.ms2))
    occ = np.array(sorted(reference))
    vir = np.array([s for s in range(n_so) if s not in set(occ)])
    eps = np.diag(H.fock(occ))
    v = H.v_as[np.ix_(occ, occ, vir, vir)]
    D = eps[vir][None, None, :, None] + eps[vir][None, None, None, :] - eps[occ][:, None, None, None] - eps[occ][None, :, None, None]
    return float(-0.25 * np.sum(v**2 / D))


class Diis:
    """Pulay extrapolation over (vector, error) pairs."""

    def __init__(self, depth: int = 8, cond_limit: float = 1e12):
        self.depth = depth
        self.cond_limit = cond_limit
        self.vecs: deque = deque(maxlen=depth)
        self.errs: deque = deque(maxlen=depth)

    def push(self, vec: np.ndarray, err: np.ndarray) -> None:
        self.vecs.append(np.array(vec, copy=True))
        self.errs.append(np.array(err, copy=True))

    def extrapolate(self) -> np.ndarray:
        n = len(self.vecs)
        if n < 2 or self.depth < 2:
            return self.vecs[-1]
        E = np.array(self.errs)
        B = np.empty((n + 1, n + 1))
        B[:n, :n] = E @ E.T
        B[n, :n] = B[:n, n] = -1.0
        B[n, n] = 0.0
        rhs = np.zeros(n + 1)
        rhs[n] = -1.0
        if np.linalg.cond(B) > self.cond_limit:
            c = np.linalg.pinv(B, rcond=1e-14) @ rhs
        else:
            c = np.linalg.solve(B, rhs)
        return c[:n] @ np.array(self.vecs)


def solve_ccsd(H: SpinOrbitalHamiltonian, reference=None, config: CcsdConfig | None = None,
               space: DeterminantSpace | None = None) -> ClusterAmplitudes:
    """Converge CCSD amplitudes for ``H`` about ``reference`` (aufbau by default)."""
    config = config or CcsdConfig()
    sector = Sector(H.n_so, H.n_elec, H.spatial.ms2)
    if reference is None:
        reference = reference_occupation(sector)
    if space is None:
        space = enumerate_space(sector, "full", reference=reference)
    exmap = ExcitationMap.build(space, reference)
    hop = hamiltonian_operator(H)
    d1, d2 = _denominators(H, exmap, config.level_shift)
    small = min(np.abs(d1).min(initial=np.inf), np.abs(d2).min(initial=np.inf))
    if small < 1e-8 and config.level_shift == 0:
        raise CcsdError(f"near-zero orbital-energy denominator ({small:.2e}); set level_shift > 0")
    n1 = exmap.n1
    t = np.zeros(n1 + exmap.n2)
    e_ref = H.determinant_energy(reference)
    diis = Diis(config.diis_depth)
    history = []
    e_corr = 0.0
    for it in range(config.max_iter + 1):
        e_tot, r1, r2 = ccsd_residuals(hop, exmap, t[:n1], t[n1:])
        e_corr = e_tot - e_ref
        r = np.concatenate([r1, r2])
        rmax = float(np.abs(r).max(initial=0.0))
        history.append((it, rmax, e_corr))
        log.debug("ccsd iter %3d  max|r| %.3e  E_corr %.12f", it, rmax, e_corr)
        if rmax < config.conv_tol:
            return ClusterAmplitudes(exmap, t[:n1].copy(), t[n1:].copy(), e_ref, e_corr, True, it, tuple(history))
        if it == config.max_iter:
            break
        t_new = t - r / np.concatenate([d1, d2])
        diis.push(t_new, r)
        t = diis.extrapolate()
    last = ClusterAmplitudes(exmap, t[:n1].copy(), t[n1:].copy(), e_ref, e_corr, False, config.max_iter, tuple(history))
    raise CcsdError(f"CCSD not converged in {config.max_iter} iterations (max|r| = {rmax:.3e})", last)
