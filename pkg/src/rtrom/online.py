"""Online stage: hyper-reduced windows and the windowed reduced time loop.

With ``v = v_os + Phi_v v^``, ``e = e_os + Phi_e e^``, ``x = x_os + Phi_x x^``
and nonlinear-term bases ``B_F1 = M_v Phi_v``, ``B_Ftv = M_e Phi_e``, the
reduced system reads::

    dv^/dt = (P^T B_F1)^+ P^T (M_v g - F1)
    de^/dt =  (P^T B_Ftv)^+ P^T Ftv(w)
    dx^/dt =  Phi_x^T v_os + Phi_x^T Phi_v v^

where only the sampled rows of ``F1`` and ``Ftv`` are assembled, on the
elements that touch them.  Gravity goes through the same sampled
projection as the force, so a hydrostatic balance ``F1 = M_v g`` is kept
exactly even when ``g`` is not in the span of ``Phi_v``.  When it is, the
gravity term equals ``Phi_v^T g``.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .hydro import SimulationError, State, StepFailure
from .reduction import oversampled_size, select_sampling_indices, sampled_pinv, sns_basis

LGR = logging.getLogger(__name__)


class IndicatorRangeExhausted(SimulationError):
    """The indicator passed the last window endpoint before the final time."""


@dataclass
class ReducedState:
    v: np.ndarray
    e: np.ndarray
    x: np.ndarray
    t: float
    window: int = 0


class WindowRom:
    """One window's bases, sampling and precomputed reduced operators.

    Parameters
    ----------
    basis : WindowBasis
    hydro : LagrangianHydro
        Discretization at the online parameter; supplies the mass matrices,
        gravity and the element kernels.
    offsets : dict
        Offsets ``v``, ``e``, ``x`` (full-order vectors).
    lambda_v, lambda_e : float
        Oversampling factors of the two nonlinear terms.
    hyper : dict, optional
        Previously computed ``s_F1``, ``s_Ftv`` (skips the greedy selection).
    consistent_gravity : bool
        Project gravity through the sampled rows instead of ``Phi_v^T g``.
    """

    def __init__(self, basis, hydro, offsets, lambda_v=2.0, lambda_e=2.0, hyper=None,
                 consistent_gravity=True):
        self.basis = basis
        self.index = basis.index
        self.psi_lo, self.psi_hi = basis.psi_lo, basis.psi_hi
        self.offsets = offsets
        Pv, Pe, Px = (basis.phi[var] for var in ("v", "e", "x"))
        self.n_v, self.n_e, self.n_x = Pv.shape[1], Pe.shape[1], Px.shape[1]
        name = f"window {basis.index}"

        B_F1 = sns_basis(hydro.mass.M_v, Pv)
        B_Ftv = sns_basis(hydro.mass.apply_M_e, Pe)
        if hyper is not None:
            self.s_F1 = np.asarray(hyper["s_F1"], dtype=np.int64)
            self.s_Ftv = np.asarray(hyper["s_Ftv"], dtype=np.int64)
        else:
            # constrained rows carry wall reactions outside span(B_F1)
            free = hydro.free
            self.s_F1 = select_sampling_indices(
                B_F1, oversampled_size(len(free), self.n_v, lambda_v), free)
            self.s_Ftv = select_sampling_indices(
                B_Ftv, oversampled_size(hydro.n_thermo, self.n_e, lambda_e))
        self.pinv_F1 = sampled_pinv(B_F1, self.s_F1, f"{name} (momentum)")
        self.pinv_Ftv = sampled_pinv(B_Ftv, self.s_Ftv, f"{name} (energy)")

        sp = hydro.spaces
        nodes = self.s_F1 % sp.n_nodes
        touch = np.isin(sp.kin_connectivity, nodes).any(axis=1)
        touch |= np.isin(sp.thermo_dofs, self.s_Ftv).any(axis=1)
        self.sample_elements = np.flatnonzero(touch)
        if self.sample_elements.size == 0:
            self.sample_elements = np.array([0])
        self.kernel = k = hydro.make_kernel(self.sample_elements)

        comp = self.s_F1 // sp.n_nodes
        self.f1_pos = comp * k.n_compact + np.searchsorted(k.nodes, nodes)
        tpos = np.full(sp.n_thermo, -1, dtype=np.int64)
        tpos[k.tdofs] = np.arange(len(k.tdofs))
        self.ftv_pos = tpos[self.s_Ftv]

        rows = k.kin_rows
        self.v_os_c = offsets["v"][rows]
        self.x_os_c = offsets["x"][rows]
        self.e_os_c = offsets["e"][k.tdofs]
        self.Pv_c = np.ascontiguousarray(Pv[rows])
        self.Px_c = np.ascontiguousarray(Px[rows])
        self.Pe_c = np.ascontiguousarray(Pe[k.tdofs])
        self.PxT_Pv = Px.T @ Pv
        self.PxT_vos = Px.T @ offsets["v"]
        if consistent_gravity:
            # gravity enters through the same gappy fit as F1, so the large
            # hydrostatic balance F1 ~ M_v g cancels on the sampled rows
            self.PvT_g = self.pinv_F1 @ hydro.mass.apply_M_v(hydro.gravity_vector)[self.s_F1]
        else:
            self.PvT_g = Pv.T @ hydro.gravity_vector
        iface = sp.interface_dofs()
        self.iface_x_os = offsets["x"][iface]
        self.iface_Px = np.ascontiguousarray(Px[iface])
        self.offset_shift = None

    @property
    def sizes(self):
        return self.n_v, self.n_e, self.n_x

    def hyper_data(self):
        return {"s_F1": self.s_F1, "s_Ftv": self.s_Ftv,
                "pinv_F1": self.pinv_F1, "pinv_Ftv": self.pinv_Ftv}

    def link(self, previous):
        """Precompute ``Phi_j^T (os_prev - os_j)`` for the transition from ``previous``."""
        self.offset_shift = {
            var: self.basis.phi[var].T @ (previous.offsets[var] - self.offsets[var])
            for var in ("v", "e", "x")
        }

    # ---- lifting ------------------------------------------------------------
    def lift(self, r):
        """Full-order state of a reduced state."""
        b, o = self.basis.phi, self.offsets
        return State(o["v"] + b["v"] @ r.v, o["e"] + b["e"] @ r.e, o["x"] + b["x"] @ r.x, r.t)

    def project(self, state, window=None):
        """Reduced coordinates of a full-order state."""
        b, o = self.basis.phi, self.offsets
        return ReducedState(b["v"].T @ (state.v - o["v"]), b["e"].T @ (state.e - o["e"]),
                            b["x"].T @ (state.x - o["x"]), state.t,
                            self.index if window is None else window)

    def interface_heights(self, xh):
        return self.iface_x_os + self.iface_Px @ xh

    def transfer(self, r, previous):
        """Carry ``r`` from ``previous`` into this window."""
        T = self.basis.transfer
        if not T:
            raise SimulationError(f"window {self.index} has no transfer operators")
        if self.offset_shift is None:
            self.link(previous)
        d = self.offset_shift
        return ReducedState(T["v"] @ r.v + d["v"], T["e"] @ r.e + d["e"],
                            T["x"] @ r.x + d["x"], r.t, self.index)

    # ---- reduced right-hand side -------------------------------------------
    def evaluate(self, vh, eh, xh):
        x = self.x_os_c + self.Px_c @ xh
        v = self.v_os_c + self.Pv_c @ vh
        e = self.e_os_c + self.Pe_c @ eh
        return self.kernel.evaluate(x, v, e)

    def velocity_rate(self, ev):
        f1 = ev.F_one[self.f1_pos]
        if not np.all(np.isfinite(f1)):
            raise StepFailure("non-finite force")
        return self.PvT_g - self.pinv_F1 @ f1

    def energy_rate(self, ev, wh):
        w = self.v_os_c + self.Pv_c @ wh
        return self.pinv_Ftv @ ev.F_tv(w)[self.ftv_pos]

    def position_rate(self, wh):
        return self.PxT_vos + self.PxT_Pv @ wh

    def step(self, r, dt, ev=None):
        """Reduced RK2-average step; returns ``(new_state, force_at_new_state)``."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        if ev is None:
            ev = self.evaluate(r.v, r.e, r.x)
        v_half = r.v + 0.5 * dt * self.velocity_rate(ev)
        e_half = r.e + 0.5 * dt * self.energy_rate(ev, v_half)
        x_half = r.x + 0.5 * dt * self.position_rate(v_half)
        ev_half = self.evaluate(v_half, e_half, x_half)
        v_new = r.v + dt * self.velocity_rate(ev_half)
        v_bar = 0.5 * (r.v + v_new)
        e_new = r.e + dt * self.energy_rate(ev_half, v_bar)
        x_new = r.x + dt * self.position_rate(v_bar)
        new = ReducedState(v_new, e_new, x_new, r.t + dt, r.window)
        return new, self.evaluate(v_new, e_new, x_new)


def initial_offsets(hydro):
    """Offsets equal to the initial state of the online parameter."""
    s = hydro.initial_state()
    return {"v": s.v, "e": s.e, "x": s.x}


def build_window_roms(bases, hydro, lambda_v=2.0, lambda_e=2.0, offsets=None, hyper=None):
    """Hyper-reduce every window basis for the parameter of ``hydro``."""
    offsets = initial_offsets(hydro) if offsets is None else offsets
    roms = []
    for i, b in enumerate(bases):
        w = WindowRom(b, hydro, offsets, lambda_v, lambda_e,
                      hyper=None if hyper is None else hyper[i])
        if roms:
            w.link(roms[-1])
        roms.append(w)
    return roms


@dataclass
class OnlineTrace:
    """Per accepted step: time, step size, active window and indicator value."""

    t: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    window: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    transition_times: list = field(default_factory=list)
    transition_jumps: list = field(default_factory=list)

    def append(self, t, dt, window, psi):
        self.t.append(t)
        self.dt.append(dt)
        self.window.append(window)
        self.psi.append(psi)

    @property
    def windows_used(self):
        return 1 + len(self.transition_times)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,dt,window,psi\n")
            for row in zip(self.t, self.dt, self.window, self.psi):
                fh.write("{!r},{!r},{},{!r}\n".format(*row))


@dataclass
class OnlineResult:
    state: State
    reduced: ReducedState
    trace: OnlineTrace
    steps: int
    setup_seconds: float
    loop_seconds: float

    @property
    def windows_used(self):
        return self.trace.windows_used


def _indicator(indicator, w, r):
    if indicator.kind == "time":
        return r.t
    return indicator.from_heights(w.interface_heights(r.x))


def run_rom(windows, indicator, t_final, config, dt_schedule=None, strict=False,
            initial_state=None, measure_jumps=False, setup_seconds=0.0):
    """Windowed hyper-reduced time loop.

    The indicator is evaluated at accepted step states; the window advances
    as soon as it reaches the window's upper endpoint.  With the time
    indicator, steps are shortened to land on window endpoints.  Past the
    last endpoint the loop stays in the last window (``strict`` aborts).
    """
    if not windows:
        raise SimulationError("no windows")
    last = len(windows) - 1
    j = 0
    w = windows[0]
    if initial_state is None:
        r = ReducedState(np.zeros(w.n_v), np.zeros(w.n_e), np.zeros(w.n_x), 0.0, 0)
    else:
        r = w.project(initial_state, 0)
    trace = OnlineTrace()
    psi = _indicator(indicator, w, r)
    landing = indicator.kind == "time" and dt_schedule is None
    warned = False
    n = 0
    nominal = None
    start = time.perf_counter()

    def advance(r, w, j, psi):
        while j < last and psi >= w.psi_hi:
            nxt = windows[j + 1]
            before = w.lift(r) if measure_jumps else None
            r = nxt.transfer(r, w)
            if measure_jumps:
                after = nxt.lift(r)
                num = np.linalg.norm(np.concatenate([after.v - before.v, after.x - before.x]))
                den = np.linalg.norm(np.concatenate([before.v, before.x]))
                trace.transition_jumps.append(num / den)
            trace.transition_times.append(r.t)
            w, j = nxt, j + 1
        return r, w, j

    r, w, j = advance(r, w, j, psi)
    ev = w.evaluate(r.v, r.e, r.x)
    while r.t < t_final * (1.0 - 1e-14):
        land = False
        if dt_schedule is not None:
            dt = dt_schedule[n]
        else:
            nominal = ev.dt_est if nominal is None else min(ev.dt_est, config.dt_growth * nominal)
            dt = min(nominal, t_final - r.t)
            if landing and j < last and r.t + dt >= w.psi_hi:
                dt, land = w.psi_hi - r.t, True
        while True:
            try:
                new, ev_new = w.step(r, dt, ev)
                break
            except StepFailure as exc:
                if dt_schedule is not None:
                    raise SimulationError(f"reduced step {n} failed with forced dt: {exc}") from exc
                dt *= 0.5
                nominal, land = dt, False
                if dt < config.dt_min:
                    raise SimulationError(
                        f"reduced time step fell below {config.dt_min:g} at t={r.t:.6g}"
                    ) from exc
        if land:
            new.t = w.psi_hi
        n += 1
        r, ev = new, ev_new
        psi = max(psi, _indicator(indicator, w, r))
        trace.append(r.t, dt, j, psi)
        if psi > w.psi_hi and j == last:
            if strict:
                raise IndicatorRangeExhausted(
                    f"indicator range exhausted: {psi:.6g} exceeds last endpoint "
                    f"{w.psi_hi:.6g} at t={r.t:.6g} (t_final {t_final:g})"
                )
            if not warned:
                LGR.warning("indicator %.6g beyond last endpoint %.6g at t=%.6g; "
                            "continuing in the last window", psi, w.psi_hi, r.t)
                warned = True
        j_before = j
        r, w, j = advance(r, w, j, psi)
        if j != j_before:
            ev = w.evaluate(r.v, r.e, r.x)
    loop = time.perf_counter() - start
    return OnlineResult(w.lift(r), r, trace, n, setup_seconds, loop)
