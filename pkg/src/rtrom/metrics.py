"""Relative errors, run reports and Pareto fronts."""
import csv
from dataclasses import asdict, dataclass, fields

import numpy as np


def relative_errors(reference, approx):
    """Relative l2 errors ``(eps_v, eps_e, eps_x)`` of ``approx`` against ``reference``."""
    out = []
    for var in ("v", "e", "x"):
        ref = getattr(reference, var)
        den = np.linalg.norm(ref)
        if den == 0.0:
            raise ValueError(f"reference {var} has zero norm")
        out.append(float(np.linalg.norm(getattr(approx, var) - ref) / den))
    return tuple(out)


@dataclass
class RunReport:
    """One row of the CSV run report.

    ``speedup`` is the FOM time-loop seconds divided by the ROM time-loop
    seconds; setup, offline work and file I/O are excluded from both.
    ``min_energy`` flags negative internal energy (and pressure) when < 0.
    """

    label: str = ""
    phase: str = "rom"
    indicator: str = ""
    atwood: float = float("nan")
    density_ratio: float = float("nan")
    refinement_level: int = -1
    element_count: int = 0
    n_kin: int = 0
    n_thermo: int = 0
    t_final: float = float("nan")
    delta_sigma: float = float("nan")
    n_sample: int = 0
    lambda_v: float = float("nan")
    lambda_e: float = float("nan")
    steps: int = 0
    windows: int = 0
    setup_seconds: float = 0.0
    loop_seconds: float = 0.0
    fom_loop_seconds: float = float("nan")
    speedup: float = float("nan")
    eps_v: float = float("nan")
    eps_e: float = float("nan")
    eps_x: float = float("nan")
    min_energy: float = float("nan")

    def set_errors(self, errors):
        self.eps_v, self.eps_e, self.eps_x = errors
        return self

    def set_speedup(self, fom_loop_seconds):
        self.fom_loop_seconds = float(fom_loop_seconds)
        if self.loop_seconds > 0:
            self.speedup = self.fom_loop_seconds / self.loop_seconds
        return self


CSV_COLUMNS = tuple(f.name for f in fields(RunReport))
_TYPES = {f.name: f.type for f in fields(RunReport)}


def write_reports(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in asdict(r).items()})


def read_reports(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(RunReport(**{k: _TYPES[k](row[k]) for k in CSV_COLUMNS}))
    return out


def pareto_mask(errors, times):
    """Non-dominated points when minimizing both ``errors`` and ``times``.

    A point is dominated by another that is no worse in both objectives and
    strictly better in one; identical points do not dominate each other.
    Points with a NaN objective are never on the front.
    """
    errors = np.asarray(errors, dtype=float)
    times = np.asarray(times, dtype=float)
    order = np.lexsort((errors, times))
    keep = np.zeros(len(errors), dtype=bool)
    best_e, best_t = np.inf, np.inf
    for i in order:
        e, t = errors[i], times[i]
        if e < best_e:
            keep[i] = True
            best_e, best_t = e, t
        elif e == best_e and t == best_t:
            keep[i] = True
    return keep


def pareto_front(reports, error="eps_v", time="loop_seconds"):
    """Non-dominated reports in (error, wall time), ordered by wall time."""
    if not reports:
        return []
    err = [getattr(r, error) for r in reports]
    tim = [getattr(r, time) for r in reports]
    keep = pareto_mask(err, tim)
    idx = [i for i in np.argsort(tim, kind="stable") if keep[i]]
    return [reports[i] for i in idx]
