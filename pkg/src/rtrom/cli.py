"""Command-line driver: fom, merge, offline, online, restore and pareto phases.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed
files), 2 runtime failure of a simulation.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import snapshots as snapio
from .decomposition import INDICATOR_KINDS, read_partition, write_partition
from .hydro import FomConfig, LagrangianHydro, SimulationError
from .mesh import ConfigurationError
from .metrics import RunReport, pareto_front, read_reports, relative_errors, write_reports
from .rom import WindowedROM
from .windows import load_window, save_window

LGR = logging.getLogger("rtrom")

META_FILE = "meta.json"
PARTITION_FILE = "partition.txt"


class UsageError(Exception):
    """Invalid invocation or input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _window_file(rom_dir, j):
    return Path(rom_dir) / f"window_{j:04d}.lrombas"


def _base_report(label, phase, cfg, spaces):
    return RunReport(label=label, phase=phase, atwood=cfg.atwood,
                     density_ratio=cfg.density_ratio,
                     refinement_level=cfg.refinement_level,
                     element_count=spaces.mesh.element_count, n_kin=spaces.n_kin,
                     n_thermo=spaces.n_thermo, t_final=cfg.t_final)


def _fom_config(args):
    return FomConfig(atwood=args.atwood, t_final=args.tf, refinement_level=args.refine,
                     cfl=args.cfl)


# ---- phases ---------------------------------------------------------------------
def cmd_fom(args):
    cfg = _fom_config(args)
    hydro = LagrangianHydro(cfg)
    rec = snapio.SnapshotRecorder(cfg.atwood) if args.write_snapshots else None
    state, run = hydro.run(hook=rec)
    if rec is not None:
        sp = hydro.spaces
        s = snapio.SnapshotSet(sp.n_kin, sp.n_thermo, sp.mesh.refinement_level,
                               sp.kinematic_degree, sp.thermodynamic_degree)
        s.add(rec.result())
        snapio.save(s, args.write_snapshots)
    if args.write_solution:
        snapio.save_state(args.write_solution, state, hydro.spaces, cfg.atwood)
    rep = _base_report(args.label or "fom", "fom", cfg, hydro.spaces)
    rep.steps, rep.setup_seconds, rep.loop_seconds = run.steps, run.setup_seconds, run.loop_seconds
    rep.fom_loop_seconds = run.loop_seconds
    rep.min_energy = float(state.e.min())
    if args.report:
        write_reports(args.report, [rep])
    print(f"fom: {run.steps} steps, time loop {run.loop_seconds:.3f} s, "
          f"n_kin {hydro.n_kin}, n_thermo {hydro.n_thermo}")
    return 0


def _write_rom_dir(snaps, args):
    rom = WindowedROM(indicator=args.indicator, n_sample=args.nsample,
                      delta_sigma=1.0 - args.ef, lambda_v=args.sfac_v, lambda_e=args.sfac_e)
    rom.fit(snaps)
    d = Path(args.rom_dir)
    d.mkdir(parents=True, exist_ok=True)
    for b in rom.bases_:
        save_window(_window_file(d, b.index), b)
    write_partition(d / PARTITION_FILE, rom.partition_)
    meta = {
        "indicator": args.indicator, "n_sample": args.nsample, "delta_sigma": 1.0 - args.ef,
        "lambda_v": args.sfac_v, "lambda_e": args.sfac_e, "n_windows": rom.n_windows_,
        "discretization": list(snaps.discretization()),
        "training_atwoods": snaps.atwoods,
        "endpoints": [float(p) for p in rom.partition_.endpoints],
        "basis_sizes": [list(b.sizes) for b in rom.bases_],
    }
    (d / META_FILE).write_text(json.dumps(meta, indent=1))
    print(f"offline: {rom.n_windows_} windows ({args.indicator} indicator), "
          f"{rom.fit_seconds_:.2f} s")
    return 0


def cmd_merge(args):
    snaps = snapio.merge(args.inputs)
    if args.output:
        snapio.save(snaps, args.output)
    print(f"merge: {snaps.n_mu} parameters, {snaps.n_columns} columns")
    if args.rom_dir:
        return _write_rom_dir(snaps, args)
    return 0


def cmd_offline(args):
    snaps = snapio.merge(args.snapshots)
    return _write_rom_dir(snaps, args)


def _load_rom(rom_dir, args):
    d = Path(rom_dir)
    if not (d / META_FILE).is_file():
        raise UsageError(f"missing window bases: no {META_FILE} in {d} (run offline first)")
    meta = json.loads((d / META_FILE).read_text())
    bases = []
    for j in range(meta["n_windows"]):
        f = _window_file(d, j)
        if not f.is_file():
            raise UsageError(f"missing window bases: {f}")
        bases.append(load_window(f)[0])
    lam_v = args.sfac_v if args.sfac_v is not None else meta["lambda_v"]
    lam_e = args.sfac_e if args.sfac_e is not None else meta["lambda_e"]
    rom = WindowedROM(indicator=meta["indicator"], n_sample=meta["n_sample"],
                      delta_sigma=meta["delta_sigma"], lambda_v=lam_v, lambda_e=lam_e,
                      strict=args.strict)
    part = read_partition(d / PARTITION_FILE) if (d / PARTITION_FILE).is_file() else None
    rom.set_bases(bases, meta["discretization"], part)
    return rom, meta


def cmd_online(args):
    rom, meta = _load_rom(args.rom_dir, args)
    t0 = time.perf_counter()
    prepared = rom.prepare(args.atwood, args.tf)
    res = rom.simulate(args.atwood, args.tf, prepared=prepared)
    res.setup_seconds = time.perf_counter() - t0 - res.loop_seconds
    hydro, windows = prepared
    if args.save_hyper:
        hd = Path(args.save_hyper)
        hd.mkdir(parents=True, exist_ok=True)
        for w in windows:
            save_window(_window_file(hd, w.index), w.basis, w.hyper_data())
    snapio.save_state(args.output, res.state, hydro.spaces, args.atwood)
    if args.trace:
        res.trace.write_csv(args.trace)
    rep = _base_report(args.label or f"rom-{meta['indicator']}", "rom", hydro.config,
                       hydro.spaces)
    rep.indicator = meta["indicator"]
    rep.delta_sigma, rep.n_sample = meta["delta_sigma"], meta["n_sample"]
    rep.lambda_v, rep.lambda_e = rom.lambda_v, rom.lambda_e
    rep.steps, rep.windows = res.steps, res.windows_used
    rep.setup_seconds, rep.loop_seconds = res.setup_seconds, res.loop_seconds
    rep.min_energy = float(res.state.e.min())
    if args.report:
        write_reports(args.report, [rep])
    print(f"online: {res.steps} steps, {res.windows_used} of {meta['n_windows']} windows, "
          f"time loop {res.loop_seconds:.3f} s")
    return 0


def cmd_restore(args):
    rom_state, _, _ = snapio.load_state(args.rom_solution)
    ref_state, _, _ = snapio.load_state(args.reference)
    if rom_state.v.shape != ref_state.v.shape or rom_state.e.shape != ref_state.e.shape:
        raise UsageError("solution files belong to different discretizations")
    errs = relative_errors(ref_state, rom_state)
    rep = read_reports(args.rom_report)[0] if args.rom_report else RunReport(label="restore")
    rep.set_errors(errs)
    if args.fom_report:
        rep.set_speedup(read_reports(args.fom_report)[0].loop_seconds)
    if args.report:
        write_reports(args.report, [rep])
    print("restore: eps_v {:.4e} eps_e {:.4e} eps_x {:.4e} speedup {:.3g}".format(
        *errs, rep.speedup))
    return 0


def cmd_pareto(args):
    reports = [r for p in args.inputs for r in read_reports(p)]
    front = pareto_front(reports, error=args.error, time=args.time)
    if args.output:
        write_reports(args.output, front)
    for r in front:
        print(f"{r.label}: {args.error}={getattr(r, args.error):.4e} "
              f"{args.time}={getattr(r, args.time):.4g}")
    return 0


# ---- parser ---------------------------------------------------------------------
def _offline_flags(p, rom_dir_required):
    p.add_argument("--nsample", type=int, default=20,
                   help="max intermediate snapshots per window and parameter")
    p.add_argument("--ef", type=float, default=0.9999, help="POD energy fraction 1 - delta_sigma")
    p.add_argument("--indicator", choices=INDICATOR_KINDS, default="time")
    p.add_argument("--sfac-v", type=float, default=2.0, help="momentum oversampling factor")
    p.add_argument("--sfac-e", type=float, default=2.0, help="energy oversampling factor")
    p.add_argument("--rom-dir", required=rom_dir_required, help="directory for window bases")


def build_parser():
    ap = _Parser(prog="rtrom", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fom", help="full-order reference solve")
    p.add_argument("--refine", type=int, default=2)
    p.add_argument("--tf", type=float, default=1.5)
    p.add_argument("--atwood", type=float, default=1.0 / 3.0)
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--write-snapshots")
    p.add_argument("--write-solution")
    p.add_argument("--report")
    p.add_argument("--label")
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("merge", help="merge snapshot files (optionally build windows)")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--output")
    _offline_flags(p, rom_dir_required=False)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("offline", help="partition the indicator range and build window bases")
    p.add_argument("--snapshots", nargs="+", required=True)
    _offline_flags(p, rom_dir_required=True)
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="hyper-reduce and run the windowed ROM")
    p.add_argument("--rom-dir", required=True)
    p.add_argument("--atwood", type=float, required=True)
    p.add_argument("--tf", type=float, required=True)
    p.add_argument("--output", required=True, help="final lifted state (.lsnap)")
    p.add_argument("--trace")
    p.add_argument("--report")
    p.add_argument("--label")
    p.add_argument("--sfac-v", type=float)
    p.add_argument("--sfac-e", type=float)
    p.add_argument("--strict", action="store_true",
                   help="abort when the indicator passes the last window")
    p.add_argument("--save-hyper", help="directory for hyper-reduced window files")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("restore", help="errors of a ROM solution against a reference")
    p.add_argument("--rom-solution", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--rom-report")
    p.add_argument("--fom-report")
    p.add_argument("--report")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("pareto", help="non-dominated runs in (error, wall time)")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--output")
    p.add_argument("--error", default="eps_v", choices=("eps_v", "eps_e", "eps_x"))
    p.add_argument("--time", default="loop_seconds", choices=("loop_seconds", "speedup"))
    p.set_defaults(func=cmd_pareto)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"rtrom: error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, ConfigurationError, ValueError) as exc:
        print(f"rtrom: error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, np.linalg.LinAlgError) as exc:
        print(f"rtrom: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
