"""Command-line driver: integrals -> SCF -> CCSD -> EOMCCSD -> downfold -> QPE.

Configuration is a flat ``key = value`` file; ``#`` starts a comment and
lists are comma-separated.  Recognized keys (defaults in brackets)::

    input.molecule   atoms "H 0 0 0; H 0 0 1.4008" in bohr   (or input.fcidump)
    input.basis      s-only basis name [sto-3g]
    input.charge     total charge [0]
    input.fcidump    FCIDUMP path, relative to the config file (or input.molecule)
    active           active spatial orbitals, 0-based [all]
    target           EOM root index, "ref", or a determinant signature such
                     as "1a->2a,1b->2b" [1]
    target.energy    restrict signature matching to this energy window centre
    target.window    half-width of that window in Hartree [0.005]
    commutator       0 = bare active-space Hamiltonian, 1 = DUCC-ex [1]
    scf.conv_tol scf.max_iter scf.diis_depth
    ccsd.conv_tol ccsd.max_iter ccsd.diis_depth ccsd.level_shift
                     (a level shift around 0.1 helps near-degenerate cases)
    fci.roots        FCI roots to report [10]; 0 skips the FCI stage output
    eom.roots        EOMCCSD roots [all when the SD space is small, else 10]
    qpe.trial        trial state, e.g. "0.7071*1a->3a + 0.7071*1b->3b" [ref]
    qpe.shots qpe.bits qpe.shift qpe.time qpe.cluster_tol qpe.threads qpe.hist_width
    seed             QPE seed [0]
    output           output directory [duccex-out]

Every stage writes its artifacts to the output directory, so a single stage
can be re-run later from what an earlier run persisted.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import platform
import sys
import time
from dataclasses import dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import ccsd as ccsd_mod
from .ccsd import CcsdConfig, ClusterAmplitudes, solve_ccsd
from .detspace import (
    Sector,
    apply_operator,
    enumerate_space,
    fci_solve,
    reference_occupation,
    spin_squared_operator,
)
from .detspace.excitations import ExcitationMap, parse_excitation, resolve_excitation
from .downfold import (
    build_effective,
    diagonalize_effective,
    export_effective,
    extract_sigma_ext,
    load_effective,
)
from .eomccsd import EomState, build_hbar, eomccsd_a_vector, solve_eomccsd, state_summary_csv
from .hamio import ActiveSpace, SpatialIntegrals, read_fcidump, to_spin_orbital, write_fcidump
from .minint import Molecule, ScfConfig, build_basis, mo_transform, rhf
from .qpesim import QpeConfig, histogram_csv, parse_trial, probabilities_csv, report_table, run_qpe, table_csv

__all__ = ["RunConfig", "RunManifest", "ConfigError", "StageError", "load_config", "parse_config",
           "run_pipeline", "run_stage", "select_target", "main", "STAGES"]

log = logging.getLogger("duccex")

STAGES = ("scf", "fci", "ccsd", "eomccsd", "downfold", "qpe")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"stage {stage}: {msg}")
        self.stage = stage


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _opt(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return parse


_KEYS = {
    "input.molecule": ("molecule", _opt(str)),
    "input.basis": ("basis", str),
    "input.charge": ("charge", int),
    "input.fcidump": ("fcidump", _opt(str)),
    "active": ("active", _opt(_int_list)),
    "target": ("target", str),
    "target.energy": ("target_energy", _opt(float)),
    "target.window": ("target_window", float),
    "commutator": ("commutator", int),
    "scf.conv_tol": ("scf_conv_tol", float),
    "scf.max_iter": ("scf_max_iter", int),
    "scf.diis_depth": ("scf_diis_depth", int),
    "ccsd.conv_tol": ("ccsd_conv_tol", float),
    "ccsd.max_iter": ("ccsd_max_iter", int),
    "ccsd.diis_depth": ("ccsd_diis_depth", int),
    "ccsd.level_shift": ("ccsd_level_shift", float),
    "fci.roots": ("fci_roots", int),
    "eom.roots": ("eom_roots", _opt(int)),
    "qpe.trial": ("qpe_trial", str),
    "qpe.shots": ("qpe_shots", int),
    "qpe.bits": ("qpe_bits", _opt(int)),
    "qpe.shift": ("qpe_shift", _opt(float)),
    "qpe.time": ("qpe_time", _opt(float)),
    "qpe.cluster_tol": ("qpe_cluster_tol", float),
    "qpe.threads": ("qpe_threads", int),
    "qpe.hist_width": ("qpe_hist_width", float),
    "seed": ("seed", int),
    "output": ("output", str),
}
_FIELD_KEY = {f: k for k, (f, _) in _KEYS.items()}


@dataclass(frozen=True)
class RunConfig:
    molecule: str | None = None
    basis: str = "sto-3g"
    charge: int = 0
    fcidump: str | None = None
    active: tuple[int, ...] | None = None
    target: str = "1"
    target_energy: float | None = None
    target_window: float = 0.005
    commutator: int = 1
    scf_conv_tol: float = 1e-10
    scf_max_iter: int = 100
    scf_diis_depth: int = 8
    ccsd_conv_tol: float = 1e-9
    ccsd_max_iter: int = 200
    ccsd_diis_depth: int = 8
    ccsd_level_shift: float = 0.0
    fci_roots: int = 10
    eom_roots: int | None = None
    qpe_trial: str = "ref"
    qpe_shots: int = 10_000
    qpe_bits: int | None = None
    qpe_shift: float | None = None
    qpe_time: float | None = None
    qpe_cluster_tol: float = 1e-6
    qpe_threads: int = 1
    qpe_hist_width: float = 1e-3
    seed: int = 0
    output: str = "duccex-out"

    def validate(self) -> None:
        if (self.molecule is None) == (self.fcidump is None):
            raise ConfigError("give exactly one of input.molecule and input.fcidump")
        if self.commutator not in (0, 1):
            raise ConfigError("commutator must be 0 (bare) or 1 (DUCC-ex)")
        n_orb = self.n_orb()
        if self.active is not None:
            try:
                ActiveSpace(self.active).validate(n_orb)
            except ValueError as exc:
                raise ConfigError(f"active: {exc}") from None
        try:
            self.qpe_config()
        except ValueError as exc:
            raise ConfigError(f"qpe: {exc}") from None

    def n_orb(self) -> int:
        """Orbital count without computing integrals."""
        if self.fcidump is not None:
            path = Path(self.fcidump)
            if not path.exists():
                raise ConfigError(f"input.fcidump: {path} does not exist")
            return read_fcidump(path).n_orb
        try:
            mol = Molecule.from_string(self.molecule, self.charge)
            return len(build_basis(mol, self.basis))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"input.molecule/basis: {exc}") from None

    def qpe_config(self) -> QpeConfig:
        return QpeConfig(self.qpe_shots, self.qpe_bits, self.seed, self.qpe_shift, self.qpe_time,
                         self.qpe_cluster_tol, self.qpe_threads, self.qpe_hist_width)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = "none"
            elif isinstance(v, tuple):
                s = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{_FIELD_KEY[f.name]} = {s}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        if key not in _KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        name, conv = _KEYS[key]
        try:
            values[name] = conv(val.strip())
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from None
    if values.get("fcidump") and base_dir is not None and not Path(values["fcidump"]).is_absolute():
        values["fcidump"] = str((base_dir / values["fcidump"]).resolve())
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: RunConfig
    scalars: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def to_text(self, out: Path) -> str:
        lines = ["[config]", self.config.to_text().rstrip(), "", "[versions]"]
        try:
            version = metadata.version("duccex")
        except metadata.PackageNotFoundError:
            version = "unknown"
        lines += [f"duccex = {version}", f"numpy = {np.__version__}", f"scipy = {scipy.__version__}",
                  f"python = {platform.python_version()}", "", "[scalars]"]
        lines += [f"{k} = {v}" for k, v in self.scalars.items()]
        lines += ["", "[timings]"]
        lines += [f"{k} = {v:.3f}" for k, v in self.timings.items()]
        lines += ["", "[files]"]
        lines += [f"{name} = {(out / name).stat().st_size}" for name in sorted(set(self.files))]
        return "\n".join(lines) + "\n"


def _fmt_list(xs) -> str:
    return ",".join(f"{float(x):.12f}" for x in xs)


class _Run:
    """Per-invocation state: in-memory results with on-disk fallbacks."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.cache: dict = {}
        self.manifest = RunManifest(cfg)
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.manifest.files.append(name)

    def need(self, name: str, stage: str) -> Path:
        p = self.out / name
        if not p.exists():
            raise StageError(stage, f"missing prerequisite artifact {name}; run the earlier stages first")
        return p

    # -- shared objects --------------------------------------------------
    def integrals(self, stage: str) -> SpatialIntegrals:
        if "ints" not in self.cache:
            self.cache["ints"] = read_fcidump(self.need("integrals.fcidump", stage))
        return self.cache["ints"]

    def hamiltonian(self, stage: str):
        if "H" not in self.cache:
            self.cache["H"] = to_spin_orbital(self.integrals(stage))
        return self.cache["H"]

    def active(self, stage: str) -> ActiveSpace:
        ints = self.integrals(stage)
        act = self.cfg.active if self.cfg.active is not None else tuple(range(ints.n_orb))
        return ActiveSpace(act)

    def sector(self, stage: str) -> Sector:
        H = self.hamiltonian(stage)
        return Sector(H.n_so, H.n_elec, H.spatial.ms2)

    def amplitudes(self, stage: str) -> ClusterAmplitudes:
        if "amps" not in self.cache:
            z = np.load(self.need("ccsd_amplitudes.npz", stage))
            sector = self.sector(stage)
            ref = tuple(int(s) for s in z["reference"])
            space = enumerate_space(sector, "full", reference=ref)
            exmap = ExcitationMap.build(space, ref)
            self.cache["amps"] = ClusterAmplitudes(exmap, z["t1"], z["t2"], float(z["e_ref"]), float(z["e_corr"]),
                                                   bool(z["converged"]), int(z["n_iter"]))
        return self.cache["amps"]

    def eom_states(self, stage: str) -> list[EomState]:
        if "eom" not in self.cache:
            z = np.load(self.need("eom_states.npz", stage))
            amps = self.amplitudes(stage)
            sd = enumerate_space(amps.space.sector, "sd", reference=amps.reference)
            exmap = ExcitationMap.build(sd, amps.reference)
            states = []
            for k, (e, v, nka, s2) in enumerate(zip(z["energies"], z["vectors"].T, z["n_k_a"], z["s2"])):
                r1, r2 = exmap.read(v)
                states.append(EomState(k, float(e), float(e - amps.e_total), float(v[exmap.ref_pos]), r1, r2,
                                       v.copy(), float(nka), float(s2)))
            self.cache["eom"] = states
        return self.cache["eom"]


def _stage_scf(run: _Run) -> None:
    cfg = run.cfg
    if cfg.fcidump is not None:
        ints = read_fcidump(cfg.fcidump)
        run.manifest.scalars["e_rhf"] = f"{_reference_energy(ints):.12f}"
        text_comment = (f"source fcidump {Path(cfg.fcidump).name}",)
        ints = SpatialIntegrals(ints.n_orb, ints.e_core, ints.h, ints.eri, ints.n_elec, ints.ms2,
                                ints.comments or text_comment)
    else:
        mol = Molecule.from_string(cfg.molecule, cfg.charge)
        shells = build_basis(mol, cfg.basis)
        res, ao = rhf(mol, shells, ScfConfig(cfg.scf_max_iter, cfg.scf_conv_tol, cfg.scf_diis_depth))
        ints = mo_transform(res, ao, (f"molecule {mol.to_string()}", f"basis {cfg.basis}",
                                      f"rhf energy {res.e_total!r}"))
        run.manifest.scalars["e_rhf"] = f"{res.e_total:.12f}"
        run.write("scf.csv", "orbital,energy\n" + "".join(f"{i},{e:.12f}\n" for i, e in enumerate(res.mo_energy)))
    write_fcidump(ints, run.out / "integrals.fcidump")
    run.manifest.files.append("integrals.fcidump")
    # later stages see exactly what a stage-only re-run would read back
    run.cache["ints"] = read_fcidump(run.out / "integrals.fcidump")


def _reference_energy(ints: SpatialIntegrals) -> float:
    H = to_spin_orbital(ints)
    return H.determinant_energy(reference_occupation(Sector(H.n_so, H.n_elec, ints.ms2)))


def _stage_fci(run: _Run) -> None:
    if run.cfg.fci_roots <= 0:
        return
    H = run.hamiltonian("fci")
    w, V, space = fci_solve(H, n_roots=run.cfg.fci_roots)
    s2 = apply_operator(spin_squared_operator(H.n_so), V, space)
    s2 = np.einsum("ij,ij->j", V, s2)
    run.write("fci_roots.csv", "root,energy,s2\n" + "".join(f"{k},{e:.12f},{s:.6f}\n" for k, (e, s) in enumerate(zip(w, s2))))
    run.manifest.scalars["fci_roots"] = _fmt_list(w)


def _stage_ccsd(run: _Run) -> None:
    cfg = run.cfg
    H = run.hamiltonian("ccsd")
    conf = CcsdConfig(cfg.ccsd_conv_tol, cfg.ccsd_max_iter, cfg.ccsd_diis_depth, cfg.ccsd_level_shift)
    try:
        amps = solve_ccsd(H, config=conf)
    except ccsd_mod.CcsdError as exc:
        raise StageError("ccsd", str(exc)) from None
    run.cache["amps"] = amps
    run.write("ccsd_log.csv", "iteration,max_residual,e_corr\n"
              + "".join(f"{i},{r:.6e},{e:.12f}\n" for i, r, e in amps.history))
    np.savez(run.out / "ccsd_amplitudes.npz", t1=amps.t1_flat, t2=amps.t2_flat, e_ref=amps.e_ref,
             e_corr=amps.e_corr, converged=amps.converged, n_iter=amps.n_iter, reference=np.array(amps.reference))
    run.manifest.files.append("ccsd_amplitudes.npz")
    run.manifest.scalars["e_ccsd"] = f"{amps.e_total:.12f}"


def _stage_eom(run: _Run) -> None:
    H = run.hamiltonian("eomccsd")
    amps = run.amplitudes("eomccsd")
    hb = build_hbar(amps, H)
    n_roots = run.cfg.eom_roots
    if n_roots is None and hb.matrix is None:
        n_roots = 10
    states = solve_eomccsd(hb, n_roots)
    run.cache["eom"] = states
    run.write("eom_states.csv", state_summary_csv(states))
    np.savez(run.out / "eom_states.npz", energies=np.array([s.energy for s in states]),
             vectors=np.column_stack([s.r_vec for s in states]), n_k_a=np.array([s.n_k_a for s in states]),
             s2=np.array([s.s2 for s in states]))
    run.manifest.files.append("eom_states.npz")
    run.manifest.scalars["eom_roots"] = _fmt_list(s.energy for s in states[:20])


def select_target(states: list[EomState], amps: ClusterAmplitudes, target: str,
                  energy: float | None = None, window: float = 0.005) -> EomState:
    """Resolve a root index, ``ref``, or a determinant signature to one EOM root.

    Signatures pick the singlet excited root (window-restricted when
    ``energy`` is given) with the largest weight on that determinant in
    ``N Psi_K(A)``; a runner-up within 0.02 of the winner is reported as an
    ambiguity.
    """
    t = target.strip()
    if t.isdigit():
        k = int(t)
        if k >= len(states):
            raise StageError("downfold", f"target root {k} not among the {len(states)} computed roots")
        return states[k]
    if t == "ref":
        return states[0]
    try:
        _, occ = resolve_excitation(amps.reference, *parse_excitation(t))
    except ValueError as exc:
        raise StageError("downfold", f"target: {exc}") from None
    sd = enumerate_space(amps.space.sector, "sd", reference=amps.reference)
    j = sd.index(occ)
    cands = [s for s in states[1:] if s.singlet and (energy is None or abs(s.energy - energy) <= window)]
    if not cands:
        raise StageError("downfold", f"no singlet excited root matches target {t!r}")
    weights = []
    for s in cands:
        psi, nka = eomccsd_a_vector(s, amps, sd)
        weights.append(abs(psi[j] * nka))
    order = np.argsort(weights)[::-1]
    if len(order) > 1 and weights[order[0]] - weights[order[1]] < 0.02:
        a, b = cands[order[0]], cands[order[1]]
        raise StageError("downfold", f"target {t!r} is ambiguous between roots {a.root} (E={a.energy:.6f}, "
                         f"w={weights[order[0]]:.3f}) and {b.root} (E={b.energy:.6f}, w={weights[order[1]]:.3f}); "
                         "set target.energy or give a root index")
    return cands[order[0]]


def _stage_downfold(run: _Run) -> None:
    cfg = run.cfg
    H = run.hamiltonian("downfold")
    active = run.active("downfold")
    sector = run.sector("downfold")
    ref = reference_occupation(sector)
    bare = build_effective(H, None, active, sector, reference=ref)
    bw = diagonalize_effective(bare)
    run.write("bare_spectrum.csv", _spectrum_csv(bw))
    run.manifest.scalars["bare_eigenvalues"] = _fmt_list(bw.energies[:20])
    if cfg.commutator == 0:
        heff = bare
    else:
        amps = run.amplitudes("downfold")
        state = select_target(run.eom_states("downfold"), amps, cfg.target, cfg.target_energy, cfg.target_window)
        sigma = extract_sigma_ext(state, amps, active)
        heff = build_effective(H, sigma, active, sector, reference=ref,
                               energies={"eom": state.energy, "ccsd": amps.e_total})
        run.manifest.scalars["target_root"] = str(state.root)
        run.manifest.scalars["target_energy"] = f"{state.energy:.12f}"
        run.manifest.scalars["asymmetry"] = f"{heff.asymmetry:.3e}"
    export_effective(heff, run.out / "heff.txt")
    run.manifest.files.append("heff.txt")
    spectrum = diagonalize_effective(heff)
    run.write("heff_spectrum.csv", _spectrum_csv(spectrum))
    run.manifest.scalars["heff_eigenvalues"] = _fmt_list(spectrum.energies[:20])


def _spectrum_csv(spectrum) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["root", "energy", "top_determinants"])
    for k, (e, sig) in enumerate(zip(spectrum.energies, spectrum.signatures)):
        w.writerow([k, f"{e:.12f}", " ".join(f"{lab}:{c:+.6f}" for lab, c in sig)])
    return buf.getvalue()


def _stage_qpe(run: _Run) -> None:
    heff = load_effective(run.need("heff.txt", "qpe"))
    try:
        trial = parse_trial(run.cfg.qpe_trial, heff.space)
        report = run_qpe(heff, trial, run.cfg.qpe_config())
    except ValueError as exc:
        raise StageError("qpe", str(exc)) from None
    rows = report_table(report)
    run.write("qpe_table.csv", table_csv(rows))
    run.write("qpe_histogram.csv", histogram_csv(report))
    run.write("qpe_probabilities.csv", probabilities_csv(report))
    run.manifest.scalars["qpe_clusters"] = ";".join(f"{r['mean']:.6f}:{r['count']}" for r in rows)


_RUNNERS = {
    "scf": _stage_scf,
    "fci": _stage_fci,
    "ccsd": _stage_ccsd,
    "eomccsd": _stage_eom,
    "downfold": _stage_downfold,
    "qpe": _stage_qpe,
}


def _execute(cfg: RunConfig, stages) -> RunManifest:
    cfg.validate()
    out = Path(cfg.output)
    run = _Run(cfg, out)
    for name in stages:
        t0 = time.perf_counter()
        try:
            _RUNNERS[name](run)
        except StageError:
            raise
        except Exception as exc:  # surface any solver failure with its stage name
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        run.manifest.timings[name] = time.perf_counter() - t0
    manifest_name = "manifest.txt" if len(stages) > 1 else f"manifest_{stages[0]}.txt"
    (out / manifest_name).write_text(run.manifest.to_text(out))
    return run.manifest


def run_pipeline(cfg: RunConfig) -> RunManifest:
    return _execute(cfg, list(STAGES))


def run_stage(stage: str, cfg: RunConfig) -> RunManifest:
    if stage not in _RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}")
    return _execute(cfg, [stage])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="duccex", description=__doc__.split("\n\n")[0])
    ap.add_argument("verb", choices=("pipeline",) + STAGES)
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides 'output')")
    ap.add_argument("--seed", type=int, help="QPE seed (overrides 'seed')")
    ap.add_argument("--roots", type=int, help="number of FCI and EOMCCSD roots")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        over = {}
        if args.out:
            over["output"] = args.out
        if args.seed is not None:
            over["seed"] = args.seed
        if args.roots is not None:
            over["fci_roots"] = args.roots
            over["eom_roots"] = args.roots
        cfg = replace(cfg, **over)
        manifest = run_pipeline(cfg) if args.verb == "pipeline" else run_stage(args.verb, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for k, v in manifest.scalars.items():
        print(f"{k} = {v}")
    return 0
