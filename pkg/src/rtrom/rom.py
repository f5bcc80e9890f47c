"""Windowed hyper-reduced ROM as a single estimator object."""
import time

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .decomposition import INDICATOR_KINDS, make_indicator, partition
from .hydro import FomConfig, LagrangianHydro
from .mesh import build_mesh, build_spaces
from .online import build_window_roms, run_rom
from .windows import build_window_bases


class WindowedROM(BaseEstimator):
    """Indicator-windowed POD/DEIM reduced model of the Rayleigh-Taylor problem.

    ``fit`` partitions the indicator range of a :class:`SnapshotSet` and
    builds one POD basis triple per window.  ``simulate`` hyper-reduces the
    windows for an Atwood number and runs the reduced time loop.

    Parameters
    ----------
    indicator : {"time", "distance"}
    n_sample : int
        Maximum number of intermediate snapshots per window and parameter.
    delta_sigma : float
        Energy-criterion threshold of the POD truncation.
    lambda_v, lambda_e : float
        Oversampling factors of the momentum and energy nonlinear terms.
    strict : bool
        Abort instead of continuing in the last window when the indicator
        passes the last endpoint.
    """

    def __init__(self, indicator="time", n_sample=20, delta_sigma=1e-4, lambda_v=2.0,
                 lambda_e=2.0, strict=False):
        self.indicator = indicator
        self.n_sample = n_sample
        self.delta_sigma = delta_sigma
        self.lambda_v = lambda_v
        self.lambda_e = lambda_e
        self.strict = strict

    def _validate(self):
        if self.indicator not in INDICATOR_KINDS:
            raise ValueError(f"indicator must be one of {INDICATOR_KINDS}")
        if int(self.n_sample) < 1:
            raise ValueError("n_sample must be at least 1")
        if not 0.0 <= self.delta_sigma < 1.0:
            raise ValueError("delta_sigma must lie in [0, 1)")
        if self.lambda_v < 1 or self.lambda_e < 1:
            raise ValueError("oversampling factors must be at least 1")

    def fit(self, snapshots, y=None):
        self._validate()
        t0 = time.perf_counter()
        mesh = build_mesh(snapshots.refinement_level)
        spaces = build_spaces(mesh, snapshots.kin_degree, snapshots.thermo_degree)
        self.indicator_ = make_indicator(self.indicator, spaces)
        self.partition_ = partition(snapshots, int(self.n_sample), self.indicator_)
        self.bases_ = build_window_bases(snapshots, self.partition_, self.delta_sigma,
                                         spaces.boundary_constrained_dofs())
        self.discretization_ = snapshots.discretization()
        self.training_atwoods_ = snapshots.atwoods
        self.n_windows_ = len(self.bases_)
        self.fit_seconds_ = time.perf_counter() - t0
        return self

    def set_bases(self, bases, discretization, part=None):
        """Adopt precomputed window bases (e.g. loaded from disk)."""
        self._validate()
        n_kin, n_thermo, level, kd, td = discretization
        spaces = build_spaces(build_mesh(level), kd, td)
        self.indicator_ = make_indicator(self.indicator, spaces)
        self.partition_ = part
        self.bases_ = list(bases)
        self.discretization_ = tuple(discretization)
        self.n_windows_ = len(self.bases_)
        return self

    def fom_config(self, atwood, t_final, **overrides):
        _, _, level, kd, td = self.discretization_
        return FomConfig(atwood=atwood, t_final=t_final, refinement_level=level,
                         kin_degree=kd, thermo_degree=td, **overrides)

    def prepare(self, atwood, t_final=1.5, hyper=None, **overrides):
        """Hyper-reduce all windows for ``atwood``; returns ``(hydro, windows)``."""
        check_is_fitted(self, "bases_")
        hydro = LagrangianHydro(self.fom_config(atwood, t_final, **overrides))
        windows = build_window_roms(self.bases_, hydro, self.lambda_v, self.lambda_e,
                                    hyper=hyper)
        return hydro, windows

    def simulate(self, atwood, t_final, dt_schedule=None, measure_jumps=False,
                 prepared=None, **overrides):
        """Run the reduced model; returns an :class:`OnlineResult`."""
        t0 = time.perf_counter()
        hydro, windows = prepared or self.prepare(atwood, t_final, **overrides)
        setup = time.perf_counter() - t0
        result = run_rom(windows, self.indicator_, t_final, hydro.config,
                         dt_schedule=dt_schedule, strict=self.strict,
                         measure_jumps=measure_jumps, setup_seconds=setup)
        self.last_windows_ = windows
        return result

    def predict(self, atwood, t_final):
        """Final lifted state at ``t_final``."""
        return self.simulate(atwood, t_final).state
