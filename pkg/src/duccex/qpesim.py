"""Matrix-level statistical simulation of quantum phase estimation.

A shot starting from a trial state collapses onto eigenstate ``i`` with
probability ``p_i = |<v_i|trial>|^2``.  In ideal mode the shot reports ``E_i``
exactly.  In register mode an ``m``-bit phase register reads outcome ``k``
with the Fejer-kernel probability of textbook QPE, and the shot reports the
energy that ``k`` encodes.

Random numbers come from counter-based Philox streams keyed by the seed, one
stream per fixed-size block of shots, so the sampled energies do not depend
on how blocks are distributed over worker threads.
"""

from __future__ import annotations

import csv
import io
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detspace import DeterminantSpace, eig_sym
from .detspace.excitations import parse_excitation, resolve_excitation
from .downfold import EffectiveHamiltonian
from .eomccsd import top_determinants

__all__ = [
    "TrialState",
    "QpeConfig",
    "QpeReport",
    "Cluster",
    "QpeError",
    "parse_trial",
    "run_qpe",
    "fejer_probabilities",
    "report_table",
    "table_csv",
    "histogram_csv",
    "probabilities_csv",
]

SHOT_BLOCK = 4096
_TAIL_WINDOW = 4096
_TAIL_CHUNK = 1 << 18


class QpeError(ValueError):
    pass


# --------------------------------------------------------------------------
# Trial states
# --------------------------------------------------------------------------

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_PAIR = r"\d+\s*[abAB]\s*->\s*\d+\s*[abAB]"
_TERM = re.compile(
    rf"\s*(?P<sign>[+-])?\s*(?:(?P<coef>{_NUM})\s*\*\s*)?(?P<det>ref|{_PAIR}(?:\s*,\s*{_PAIR})*)\s*"
)


@dataclass(frozen=True, eq=False)
class TrialState:
    """Normalized determinant superposition over ``space``."""

    terms: tuple[tuple[float, str], ...]
    space: DeterminantSpace
    vector: np.ndarray = field(repr=False)
    text: str = ""


def _split_terms(text: str) -> list[tuple[float, str]]:
    pos, out = 0, []
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos:
            raise QpeError(f"cannot parse trial state at {text[pos:]!r}")
        if out and m["sign"] is None:
            raise QpeError(f"missing '+' or '-' before {m['det']!r}")
        coef = float(m["coef"]) if m["coef"] else 1.0
        if m["sign"] == "-":
            coef = -coef
        out.append((coef, re.sub(r"\s+", "", m["det"])))
        pos = m.end()
    if not out:
        raise QpeError("empty trial state")
    return out


def parse_trial(text: str, space: DeterminantSpace, reference=None) -> TrialState:
    """Resolve ``"0.6*ref + 0.8*1a->2a,1b->2b"`` to a unit vector over ``space``.

    Orbital indices are 1-based spatial; ``a``/``b`` select alpha/beta spin.
    Each excitation string ``o1->v1,o2->v2`` means
    ``a+_{v1} a+_{v2} a_{o2} a_{o1}`` acting on the reference.
    """
    reference = tuple(sorted(reference if reference is not None else space.reference))
    terms = _split_terms(text)
    vec = np.zeros(space.dim)
    for coef, det in terms:
        if det == "ref":
            sign, occ = 1, reference
        else:
            try:
                sign, occ = resolve_excitation(reference, *parse_excitation(det))
            except ValueError as exc:
                raise QpeError(str(exc)) from None
        k = space.index(occ)
        if k < 0:
            raise QpeError(f"determinant {det!r} is not in the Hamiltonian's space")
        vec[k] += sign * coef
    nrm = np.linalg.norm(vec)
    if nrm < 1e-12:
        raise QpeError(f"trial state {text!r} has zero norm")
    return TrialState(tuple(terms), space, vec / nrm, text)


# --------------------------------------------------------------------------
# Configuration and sampling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QpeConfig:
    """``bits`` of None selects ideal mode; otherwise an m-bit register.

    ``shift``/``time`` of None use the automatic scaling from the exact
    spectral bounds.
    """

    n_shots: int = 10_000
    bits: int | None = None
    seed: int = 0
    shift: float | None = None
    time: float | None = None
    cluster_tol: float = 1e-6
    threads: int = 1
    hist_width: float = 1e-3

    def __post_init__(self):
        if self.n_shots < 1:
            raise QpeError("n_shots must be at least 1")
        if self.bits is not None and not 1 <= self.bits <= 24:
            raise QpeError("register size must be between 1 and 24 bits")
        if self.threads < 1:
            raise QpeError("threads must be at least 1")

    @property
    def mode(self) -> str:
        return "ideal" if self.bits is None else f"register({self.bits})"


def fejer_probabilities(phase: float, bits: int, k=None) -> np.ndarray:
    """Outcome probabilities ``sin^2(2^m pi d) / (2^{2m} sin^2(pi d))``, ``d = phase - k/2^m``."""
    M = 1 << bits
    k = np.arange(M) if k is None else np.asarray(k)
    d = phase - k / M
    s = np.sin(np.pi * d)
    tiny = np.abs(s) < 1e-15
    num = np.sin(M * np.pi * d) ** 2
    out = np.where(tiny, 1.0, num / (M * M * np.where(tiny, 1.0, s * s)))
    return out


class _Register:
    """Exact outcome sampler for one eigen-phase."""

    def __init__(self, phase: float, bits: int):
        self.phase, self.bits, self.M = phase, bits, 1 << bits
        k0 = int(np.floor(phase * self.M)) % self.M
        W = min(self.M // 2, _TAIL_WINDOW)
        self.offsets = np.arange(-W + 1, W + 1)
        self.k_window = (k0 + self.offsets) % self.M
        p = fejer_probabilities(phase, bits, self.k_window)
        self.cdf = np.cumsum(p)
        self.window_mass = self.cdf[-1]
        self.k0, self.W = k0, W

    def sample(self, u: np.ndarray) -> np.ndarray:
        out = np.empty(len(u), dtype=np.int64)
        inside = u < self.window_mass
        idx = np.minimum(np.searchsorted(self.cdf, u[inside], side="right"), len(self.cdf) - 1)
        out[inside] = self.k_window[idx]
        for n in np.flatnonzero(~inside):
            out[n] = self._tail(u[n] - self.window_mass)
        return out

    def _tail(self, r: float) -> int:
        # offsets W+1 .. M-W in ascending order, streamed in chunks
        acc = 0.0
        last = self.k0
        for lo in range(self.W + 1, self.M - self.W + 1, _TAIL_CHUNK):
            off = np.arange(lo, min(lo + _TAIL_CHUNK, self.M - self.W + 1))
            k = (self.k0 + off) % self.M
            c = acc + np.cumsum(fejer_probabilities(self.phase, self.bits, k))
            hit = np.searchsorted(c, r, side="right")
            if hit < len(c):
                return int(k[hit])
            acc, last = c[-1], int(k[-1])
        return last  # rounding left r past the total mass


@dataclass(frozen=True)
class Cluster:
    energy: float
    count: int
    mean: float
    std: float
    probability: float
    states: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class QpeReport:
    """Shot energies, exact overlap probabilities and per-cluster statistics."""

    energies: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    probabilities: np.ndarray = field(repr=False)
    clusters: tuple[Cluster, ...]
    hist_edges: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)
    config: QpeConfig
    shift: float | None = None
    time: float | None = None
    signatures: tuple = field(default=(), repr=False)

    @property
    def n_shots(self) -> int:
        return len(self.energies)


def _scaling(w: np.ndarray, cfg: QpeConfig) -> tuple[float, float]:
    lo, hi = float(w.min()), float(w.max())
    span = hi - lo
    pad = 0.05 * (span + 1e-6)
    shift = lo - pad if cfg.shift is None else cfg.shift
    if cfg.time is not None:
        t = cfg.time
    else:
        t = 2 * np.pi * (1 - 2.0 ** -cfg.bits) / (span + 2 * pad)
    if not t > 0:
        raise QpeError("evolution time must be positive")
    return shift, t


def _clusters(w: np.ndarray, p: np.ndarray, shots: np.ndarray, tol: float) -> tuple[Cluster, ...]:
    groups = [[0]]
    for i in range(1, len(w)):
        if w[i] - w[groups[-1][-1]] < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    owner = np.empty(len(w), dtype=np.int64)
    for g, members in enumerate(groups):
        owner[members] = g
    # nearest eigenvalue for every shot (w ascending)
    j = np.clip(np.searchsorted(w, shots), 1, len(w) - 1) if len(w) > 1 else np.zeros(len(shots), int)
    if len(w) > 1:
        j = np.where(np.abs(shots - w[j - 1]) <= np.abs(shots - w[j]), j - 1, j)
    g_of_shot = owner[j]
    out = []
    for g, members in enumerate(groups):
        e = shots[g_of_shot == g]
        n = len(e)
        if n and e.min() == e.max():
            # identical shots: avoid summation round-off in mean and std
            mean, std = float(e[0]), 0.0
        else:
            mean = float(e.mean()) if n else float("nan")
            std = float(e.std(ddof=1)) if n > 1 else 0.0
        out.append(Cluster(float(w[members[0]]), n, mean, std, float(p[members].sum()), tuple(members)))
    return tuple(out)


def _histogram(shots: np.ndarray, width: float):
    lo = np.floor(shots.min() / width) * width
    nb = max(1, int(np.ceil((shots.max() - lo) / width + 1e-9)))
    if lo + nb * width <= shots.max():
        nb += 1
    edges = lo + width * np.arange(nb + 1)
    counts, _ = np.histogram(shots, bins=edges)
    return edges, counts


def run_qpe(heff: EffectiveHamiltonian | np.ndarray, trial: TrialState | np.ndarray,
            config: QpeConfig | None = None) -> QpeReport:
    """Sample ``config.n_shots`` QPE outcomes for ``trial`` under ``heff``."""
    config = config or QpeConfig()
    if isinstance(heff, EffectiveHamiltonian):
        matrix, space = heff.matrix, heff.space
    else:
        matrix, space = np.asarray(heff, float), None
    if isinstance(trial, TrialState):
        if space is not None and (trial.space.dim != space.dim or not np.array_equal(trial.space.ranks, space.ranks)):
            raise QpeError("trial state and Hamiltonian live on different determinant spaces")
        vec = trial.vector
    else:
        vec = np.asarray(trial, float)
    if vec.shape != (matrix.shape[0],) or np.linalg.norm(vec) < 1e-12:
        raise QpeError("empty or mismatched trial state")
    vec = vec / np.linalg.norm(vec)
    w, V = eig_sym(matrix)
    p = (V.T @ vec) ** 2
    p = p / p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0

    shift = t = None
    registers: dict[int, _Register] = {}
    if config.bits is not None:
        shift, t = _scaling(w, config)
        phases = np.mod((w - shift) * t / (2 * np.pi), 1.0)
        for i in np.flatnonzero(p > 0):
            registers[int(i)] = _Register(float(phases[i]), config.bits)

    n = config.n_shots
    shots = np.empty(n)
    n_blocks = -(-n // SHOT_BLOCK)

    def run_block(b: int) -> None:
        lo, hi = b * SHOT_BLOCK, min(n, (b + 1) * SHOT_BLOCK)
        bitgen = np.random.Philox(key=config.seed, counter=[0, 0, 0, b])
        u = np.random.Generator(bitgen).random((hi - lo, 2))
        state = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), len(w) - 1)
        if config.bits is None:
            shots[lo:hi] = w[state]
            return
        k = np.empty(hi - lo, dtype=np.int64)
        for i in np.unique(state):
            m = state == i
            k[m] = registers[int(i)].sample(u[m, 1])
        shots[lo:hi] = shift + 2 * np.pi * k / ((1 << config.bits) * t)

    if config.threads == 1 or n_blocks == 1:
        for b in range(n_blocks):
            run_block(b)
    else:
        with ThreadPoolExecutor(config.threads) as pool:
            list(pool.map(run_block, range(n_blocks)))

    clusters = _clusters(w, p, shots, config.cluster_tol)
    edges, counts = _histogram(shots, config.hist_width)
    sigs = ()
    if space is not None and space.reference is not None:
        sigs = tuple(top_determinants(V[:, c.states[0]], space, space.reference, 3) for c in clusters)
    return QpeReport(shots, w, p, clusters, edges, counts, config, shift, t, sigs)


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------

def report_table(report: QpeReport, labels=None) -> list[dict]:
    """Clusters holding at least ``max(5, 0.5% of shots)`` shots, by energy.

    ``labels`` optionally maps a cluster index to a state name; otherwise
    the dominant determinants of the cluster's eigenvector are used.
    """
    threshold = max(5, 0.005 * report.n_shots)
    rows = []
    for c_idx, c in enumerate(report.clusters):
        if c.count < threshold:
            continue
        if labels is not None and c_idx in labels:
            sig = labels[c_idx]
        elif report.signatures:
            sig = " ".join(f"{lab}:{x:+.4f}" for lab, x in report.signatures[c_idx])
        else:
            sig = ""
        rows.append({"cluster_energy": c.energy, "mean": c.mean, "std": c.std, "count": c.count,
                     "top_determinants": sig})
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cluster_energy", "mean", "std", "count", "top_determinants"])
    for r in rows:
        w.writerow([f"{r['cluster_energy']:.12f}", f"{r['mean']:.12f}", f"{r['std']:.12f}", r["count"],
                    r["top_determinants"]])
    return buf.getvalue()


def histogram_csv(report: QpeReport) -> str:
    e, c = report.hist_edges, report.hist_counts
    lines = ["bin_lo,bin_hi,count"]
    lines.extend(f"{e[i]:.9f},{e[i + 1]:.9f},{int(c[i])}" for i in range(len(c)))
    return "\n".join(lines) + "\n"


def probabilities_csv(report: QpeReport) -> str:
    """Exact overlap block: eigenvalue and ``p_i`` for every eigenstate."""
    lines = ["state,eigenvalue,probability"]
    lines.extend(f"{i},{w:.12f},{p:.15e}" for i, (w, p) in enumerate(zip(report.eigenvalues, report.probabilities)))
    return "\n".join(lines) + "\n"
