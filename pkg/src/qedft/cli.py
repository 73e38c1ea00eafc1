"""Command-line runner: ``qedft run|scan|validate-config``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_quantity
from .dftcore.pseudo import ConfigurationError
from .evolution import AteSchedule, write_trajectory
from .units import ANGSTROM, EV, HARTREE_IN_EV

log = logging.getLogger("qedft")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

CONVENTIONS = {
    "units": "hartree atomic units; CODATA 2018 conversions",
    "grid_order": "C-ordered (Nx, Ny, Nz)",
    "cqft": "centered unitary FFT, forward exp(-iG.r)",
    "encoding": "amp(i, r) = sqrt(dV / N_band) psi_i(r), padded rows zero",
    "qpe_phase": "controlled exp(+i dt H); bin energy 2 pi k / (N dt) - E_shift",
    "smearing": "f(x) = erfc(x / sigma) / 2",
    "xc": "LDA: Slater exchange + PW92 correlation",
    "pseudopotential": "GTH local part (q1 Li, q1 H)",
}

PATH_POINTS = {"G": (0.0, 0.0, 0.0), "X": (0.0, 0.0, 0.5), "M": (0.0, 0.5, 0.5), "R": (0.5, 0.5, 0.5)}


class SolverFailure(RuntimeError):
    pass


# ----------------------------------------------------------------- helpers


def _schedule(cfg: ExperimentConfig, default=(20.0, 100, 1.0, "general")) -> AteSchedule:
    s = cfg.section("schedule")
    t_f, n, e0, split = default
    n = s.get("steps", n)
    if "dt" in s and "t_final" not in s:
        t_f = s["dt"] * n
    else:
        t_f = s.get("t_final", t_f)
    return AteSchedule(t_f, n, s.get("e0", e0), s.get("splitting", split))


def _lih(cfg: ExperimentConfig, bond_length=None, box_default=10 * ANGSTROM, qubits_default=5):
    from .experiments import lih_setup

    sysc = cfg.section("system")
    return lih_setup(bond_length or sysc["bond_length"], sysc.get("box", box_default), sysc.get("qubits", qubits_default),
                     sysc.get("atom_box_factor", 1))


def _metal(cfg: ExperimentConfig):
    from .experiments import bcc_li_cell, metal_setup

    sysc = cfg.section("system")
    cell = bcc_li_cell(sysc.get("lattice_constant", 3.5 * ANGSTROM), sysc.get("qubits", 4))
    return metal_setup(cell, sysc.get("atom_box_factor", 2))


def _readout(cfg):
    r = cfg.section("readout")
    return {
        "dt": r.get("dt", 0.15),
        "n_qpe": r.get("n_qpe", 2048),
        "sigma": r.get("sigma", 0.05 * EV),
        "e_shift": None if r.get("e_shift", "auto") == "auto" else r["e_shift"],
        "substeps": r.get("substeps", 1),
        "tau": r.get("tau"),
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_summary(outdir: Path, summary: dict) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path: Path, rows, fields=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({f: ("" if r.get(f) is None else r.get(f)) for f in fields})
    return path


# --------------------------------------------------------------- pipelines


def run_harris_ate(cfg, outdir, bond_length=None, ionicity=None, t_final=None):
    from .experiments import harris_ate, lih_oracle_energy

    setup = _lih(cfg, bond_length)
    init = cfg.section("initial")
    sched = _schedule(cfg)
    if t_final is not None:
        sched = AteSchedule(t_final, sched.n_steps, sched.e0, sched.splitting)
    r = _readout(cfg)
    lam = init.get("ionicity", 0.0) if ionicity is None else ionicity
    run = harris_ate(setup, lam, sched, init.get("slater_exponent", 0.5 / ANGSTROM), init.get("center_rule", "formula"),
                     r["tau"], cfg.values.get("shots"), cfg.seed)
    out = {
        "bond_length_angstrom": setup.cell.atoms[1].position[0] / ANGSTROM - setup.cell.atoms[0].position[0] / ANGSTROM,
        "ionicity": lam,
        "harris_energy_hartree": run.energy,
        "harris_energy_ev": run.energy * HARTREE_IN_EV,
        "band_energy_hartree": run.band_energy,
        "oracle_band_energy_hartree": run.oracle_band_energy,
        "fidelity_initial": run.fidelity_initial,
        "fidelity_final": run.fidelity_final,
        "hadamard_tau_au": run.tau,
        "harris_terms_hartree": run.harris.as_dict(),
        "t_final_au": sched.t_final,
    }
    if cfg.values.get("oracle", True):
        e_ks = lih_oracle_energy(setup)
        out["oracle_ks_energy_hartree"] = e_ks
        out["harris_minus_ks_ev"] = (run.energy - e_ks) * HARTREE_IN_EV
    return out


def run_harris_variational(cfg, outdir):
    from .experiments import lambda_scan

    setup = _lih(cfg)
    init = cfg.section("initial")
    scan = cfg.section("scan")
    lams = scan.get("values") if scan.get("parameter") == "ionicity" else list(np.round(np.linspace(0, 1, 6), 6))
    sc, runs = lambda_scan(setup, [float(x) for x in lams], schedule=_schedule(cfg),
                           q=init.get("slater_exponent", 0.5 / ANGSTROM), center_rule=init.get("center_rule", "formula"))
    rows = [{"ionicity": r.ionicity, "harris_energy_hartree": r.energy, "fidelity_final": r.fidelity_final} for r in runs]
    _write_rows(outdir / "ionicity_scan.csv", rows)
    return {"best_ionicity": sc.best_ionicity, "best_energy_hartree": sc.best.total_with_ions,
            "boundary_maximum": sc.boundary, "points": rows}


def run_kpoint_dos(cfg, outdir, n_band=None):
    from .experiments import metal_dos
    from .readout import merge_dos

    setup = _metal(cfg)
    r = _readout(cfg)
    mesh = cfg.section("kpoints").get("mesh", [9, 9, 9])
    if len(set(mesh)) != 1:
        raise ConfigError("kpoint-dos uses a symmetric n x n x n mesh")
    nb = n_band or cfg.section("initial").get("n_band", 19)
    sched = _schedule(cfg, (7.5, 50, 1.0, "tv"))
    run = metal_dos(setup, mesh[0], r["sigma"], nb, sched, r["dt"], r["n_qpe"], r["substeps"])
    e, dos = merge_dos(run.histograms)
    from .smearing import occupation

    occ = occupation(e - run.fermi.fermi_level, r["sigma"])
    rows = [{"energy_ev": x * HARTREE_IN_EV, "dos_states_per_bin": d, "occupation": f} for x, d, f in zip(e, dos, occ)]
    _write_rows(outdir / "dos.csv", rows)
    return {
        "fermi_level_hartree": run.fermi.fermi_level,
        "fermi_level_ev": run.fermi.fermi_level * HARTREE_IN_EV,
        "band_energy_hartree": run.band_energy,
        "oracle_band_energy_hartree": run.oracle_band_energy,
        "oracle_fermi_level_hartree": run.oracle_fermi_level,
        "band_energy_error_ev_per_atom": run.band_energy_error_per_atom * HARTREE_IN_EV,
        "n_kpoints": len(run.histograms),
        "n_band": nb,
        "qpe": {"dt_au": r["dt"], "n_qpe": r["n_qpe"], "bin_width_hartree": run.histograms[0].bin_width,
                "e_shift_hartree": run.histograms[0].e_shift},
        "timings_s": run.timings,
    }


def run_band_structure(cfg, outdir):
    from .experiments import kpoint_histogram
    from .lattice import kpath
    from .readout import band_structure, write_band_csv

    setup = _metal(cfg)
    r = _readout(cfg)
    kc = cfg.section("kpoints")
    try:
        way = [(lab, PATH_POINTS[lab]) for lab in kc["path"]]
    except KeyError as exc:
        raise ConfigError(f"unknown path label {exc.args[0]!r}; use {sorted(PATH_POINTS)}") from exc
    from .lattice import KPoint

    pts = [KPoint(frac, 1.0, label, coord) for frac, label, coord in kpath(setup.cell, way, kc.get("points_per_segment", 5))]
    nb = cfg.section("initial").get("n_band", 19)
    sched = _schedule(cfg, (7.5, 50, 1.0, "tv"))
    rows, hists = band_structure(pts, lambda kp: kpoint_histogram(setup, kp, nb, sched, r["dt"], r["n_qpe"],
                                                                  r["e_shift"], r["substeps"])[0])
    write_band_csv(outdir / "bands.csv", rows)
    return {"n_kpoints": len(pts), "labels": [p.label for p in pts if p.label]}


def _scf_setup(cfg):
    from .experiments import scf_copies_setup

    sysc = cfg.section("system")
    nl = cfg.section("nonlinear")
    return scf_copies_setup(sysc["bond_length"], sysc.get("box", 5 * ANGSTROM), sysc.get("qubits", 4),
                            nl.get("r_c", 0.3), nl.get("xc_degree", 2), xc_tolerance=nl.get("xc_tolerance", 0.25))


def run_scf_copies_ate(cfg, outdir, t_final=None):
    from .experiments import density_distance
    from .nonlinear import run_exact_nonlinear_rte, run_scf_ate

    s = _scf_setup(cfg)
    nl = cfg.section("nonlinear")
    sched = _schedule(cfg, (20.0, 200, 1.0, "tv"))
    if t_final is not None:
        sched = AteSchedule(t_final, sched.n_steps, sched.e0, sched.splitting)
    if nl.get("mode", "channel") == "exact":
        tr = run_exact_nonlinear_rte(s.initial_state(), sched.n_steps, sched.dt, s.lih.cell.atoms, v0=s.v_harris,
                                     reference=s.reference()[None])
    else:
        tr = run_scf_ate(s.initial_state(), sched.n_steps, sched.dt, s.kernel, v0=s.v_harris,
                         reference=s.reference(), ramp=nl.get("ramp", True))
    write_trajectory(outdir / "trajectory.csv", tr.rows,
                     ["step", "time_au", "purity", "fidelity", "kinetic_hartree"])
    last = tr.rows[-1]
    return {
        "mode": nl.get("mode", "channel"),
        "final_fidelity": last["fidelity"],
        "final_purity": last["purity"],
        "density_error_final": density_distance(tr.final_density, s.scf.density, s.grid),
        "density_error_input": density_distance(s.rho_in, s.scf.density, s.grid),
        "xc_fit": {"coefficients": s.xc_fit.coeffs, "relative_residual": s.xc_fit.residual},
        "dt_au": sched.dt,
        "steps": sched.n_steps,
    }


def run_scf_copies_pite(cfg, outdir):
    from .experiments import density_distance
    from .nonlinear import run_scf_pite

    s = _scf_setup(cfg)
    nl = cfg.section("nonlinear")
    steps = cfg.section("schedule").get("steps", 200)
    pc = pite_config_for(s, nl.get("pite_dt", 0.05), nl.get("pite_phase", np.pi / 3))
    run = run_scf_pite(s.initial_state(), s.kernel, pc, steps, reference=s.reference())
    write_trajectory(outdir / "trajectory.csv", run.rows, ["step", "purity", "fidelity", "success_probability"])
    last = run.rows[-1]
    return {
        "final_fidelity": last["fidelity"],
        "final_purity": last["purity"],
        "density_error_final": density_distance(run.final_density, s.scf.density, s.grid),
        "density_error_input": density_distance(s.rho_in, s.scf.density, s.grid),
        "pite": {"dt_au": pc.dt, "theta_rad": pc.theta, "imaginary_step_au": pc.imaginary_step, "e_ref_hartree": pc.e_ref},
        "steps": steps,
    }


def pite_config_for(setup, dt_max: float, x0: float):
    """Step bound from the grid's kinetic ceiling plus the potential range, referenced to the Harris level."""
    from .nonlinear import PiteConfig
    from .oracle import lowest_eigenpairs

    g = setup.grid
    spread = float(0.5 * g.g2().max() + setup.v_harris.max() - setup.v_harris.min())
    e0 = float(lowest_eigenpairs(g, setup.v_harris, 1)[0][0])
    return PiteConfig.for_spectrum(spread, x0, dt_max, e_ref=e0)


def run_oracle_only(cfg, outdir, bond_length=None):
    from .dftcore import atomic_densities, input_density
    from .lattice import Atom, Cell, Grid
    from .oracle import scf_loop

    kind = cfg.section("system")["kind"]
    if kind == "lih":
        setup = _lih(cfg, bond_length)
        res = scf_loop(setup.grid, setup.cell.atoms, input_density(0.0, setup.densities))
        return {"oracle": res.summary(), "ion_ion_hartree": setup.ion_ion}
    if kind == "bcc-li":
        from .experiments import oracle_band_energy
        from .lattice import kpoint_mesh

        setup = _metal(cfg)
        mesh = cfg.section("kpoints").get("mesh", [9, 9, 9])
        kp = kpoint_mesh(setup.cell, *mesh, reduce=len(set(mesh)) == 1)
        sigma = _readout(cfg)["sigma"]
        band, ef, eigs = oracle_band_energy(setup, kp, sigma)
        return {"band_energy_hartree": band, "fermi_level_hartree": ef, "n_kpoints": len(kp),
                "gamma_eigenvalues_hartree": eigs[0]}
    sysc = cfg.section("system")
    atoms = tuple(Atom(a["species"], tuple(a["position"])) for a in sysc["atoms"])
    q = sysc.get("qubits", 4)
    cell = Cell(tuple(sysc["lengths"]), (q,) * 3, atoms)
    grid = Grid(cell)
    dens = atomic_densities(grid, atoms, box_factor=sysc.get("atom_box_factor", 1))
    res = scf_loop(grid, atoms, input_density(0.0, dens, transfer={}))
    return {"oracle": res.summary()}


PIPELINES = {
    "harris-ate": run_harris_ate,
    "harris-variational": run_harris_variational,
    "kpoint-dos": run_kpoint_dos,
    "band-structure": run_band_structure,
    "scf-copies-ate": run_scf_copies_ate,
    "scf-copies-pite": run_scf_copies_pite,
    "oracle-only": run_oracle_only,
}


def execute(cfg: ExperimentConfig, outdir, **overrides) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = PIPELINES[cfg.method](cfg, outdir, **overrides)
    summary = {
        "method": cfg.method,
        "software_version": __version__,
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "conventions": CONVENTIONS,
        "result": result,
    }
    write_summary(outdir, summary)
    return summary


# -------------------------------------------------------------------- scan

_SCAN_KW = {"bond-length": "bond_length", "ionicity": "ionicity", "n-band": "n_band", "t-final": "t_final"}
_SCAN_KIND = {"bond-length": "length", "t-final": "time"}


def scan_values(cfg: ExperimentConfig) -> tuple:
    sc = cfg.section("scan")
    p = sc["parameter"]
    vals = []
    for v in sc["values"]:
        if p in _SCAN_KIND:
            if not isinstance(v, str):
                raise ConfigError(f"scan values for {p} need units, e.g. '1.55 angstrom'")
            vals.append(parse_quantity(v, _SCAN_KIND[p]))
        else:
            vals.append(int(v) if p == "n-band" else float(v))
    return p, vals


def _scan_point(args):
    cfg, outdir, kw, value = args
    try:
        s = execute(cfg, outdir, **{kw: value})
        return value, s["result"], None
    except Exception as exc:  # partial results are preserved
        return value, None, f"{type(exc).__name__}: {exc}"


def run_scan(cfg: ExperimentConfig, outdir, workers: int = 1) -> list:
    outdir = Path(outdir)
    p, vals = scan_values(cfg)
    kw = _SCAN_KW[p]
    jobs = [(cfg, outdir / f"point_{i:03d}", kw, v) for i, v in enumerate(vals)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_scan_point, jobs))
    else:
        results = [_scan_point(j) for j in jobs]
    unit = {"bond-length": "angstrom", "t-final": "au"}.get(p)
    rows = []
    for value, res, err in results:
        shown = value / ANGSTROM if p == "bond-length" else value
        row = {f"{p}" + (f"_{unit}" if unit else ""): shown, "error": err}
        res = res or {}
        row["harris_energy_hartree"] = res.get("harris_energy_hartree")
        row["oracle_ks_energy_hartree"] = res.get("oracle_ks_energy_hartree", (res.get("oracle") or {}).get("energy_hartree"))
        row["fidelity"] = res.get("fidelity_final", res.get("final_fidelity"))
        row["band_energy_hartree"] = res.get("band_energy_hartree")
        row["best_ionicity"] = res.get("best_ionicity")
        rows.append(row)
    _write_rows(outdir / "scan.csv", rows)
    return rows


# --------------------------------------------------------------------- CLI


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qedft", description="Quantum-algorithm DFT simulator and reference toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one experiment"), ("scan", "run a parameter scan"),
                           ("validate-config", "check a configuration file")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML experiment configuration")
        if name != "validate-config":
            p.add_argument("-o", "--output", help="output directory (overrides the config)")
            p.add_argument("--seed", type=int, help="seed override for shot sampling")
            p.add_argument("--workers", type=int, default=1, help="worker processes for scan points")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    from .nonlinear import UnsupportedBandCountError, VanishingSuccessError
    from .oracle import ConvergenceError
    from .readout import IllConditionedPhaseError

    try:
        cfg = load_config(args.config)
        if args.command == "validate-config":
            print(f"{args.config}: valid ({cfg.method})")
            return EXIT_OK
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            from .config import from_dict

            cfg = from_dict(raw, cfg.source)
        outdir = Path(args.output or cfg.values.get("output") or "qedft-output")
        if args.command == "run":
            s = execute(cfg, outdir)
            print(json.dumps(_jsonable(s["result"]), indent=2, sort_keys=True, default=str))
        else:
            if "scan" not in cfg.values:
                raise ConfigError("scan needs a 'scan' section with parameter and values")
            if cfg.method == "harris-variational":
                raise ConfigError("harris-variational consumes its ionicity list itself; use 'qedft run'")
            rows = run_scan(cfg, outdir, args.workers)
            failed = [r for r in rows if r["error"]]
            print(f"wrote {outdir / 'scan.csv'} ({len(rows)} points, {len(failed)} failed)")
            if failed:
                return EXIT_SOLVER
        return EXIT_OK
    except (ConfigError, ConfigurationError, UnsupportedBandCountError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, IllConditionedPhaseError, VanishingSuccessError, SolverFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
