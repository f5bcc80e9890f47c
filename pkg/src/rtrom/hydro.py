"""Full-order Lagrangian compressible Euler solver for Rayleigh-Taylor flow.

Semi-discrete system (kinematic mass ``M_v``, thermodynamic mass ``M_e``)::

    M_v dv/dt = -F(v, e, x) . 1 + M_v g
    M_e de/dt =  F(v, e, x)^T . v
        dx/dt =  v

integrated with the energy-conserving RK2-average scheme under adaptive
time-step control.  The force matrix ``F`` is assembled element by element
from the stress ``-p I + sigma_visc`` on the deformed configuration; density
is recovered pointwise from strong mass conservation.  Normal velocity
vanishes on the walls of the box.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import numba
import numpy as np
from scipy.sparse.linalg import factorized

from .mesh import ConfigurationError, assemble_mass, build_mesh, build_spaces

LGR = logging.getLogger(__name__)

VISCOSITY_MODELS = ("eigen", "divergence")


class StepFailure(RuntimeError):
    """Raised when a stage produces an inverted element or a non-finite value."""


class SimulationError(RuntimeError):
    """Unrecoverable failure of a time loop."""


def atwood_from_ratio(R):
    return (R - 1.0) / (R + 1.0)


def ratio_from_atwood(A):
    return (1.0 + A) / (1.0 - A)


@dataclass(frozen=True)
class FomConfig:
    """Problem and solver settings.  The Atwood number is the problem parameter.

    ``viscosity`` selects the artificial viscosity coefficient at a
    quadrature point, with ``l`` the local length scale and ``c`` the sound
    speed:

    * ``"eigen"``: ``rho l (q1 c [lam < 0] + q2 l |lam|)`` where ``lam`` is the
      smallest eigenvalue of the symmetrized velocity gradient;
    * ``"divergence"``: ``rho l (q1 c + q2 l |div v|)`` where ``div v < 0``,
      zero elsewhere.

    The time-step estimate is ``cfl * l / (c + |v| + visc_dt * mu / (rho l))``.
    """

    atwood: float = 1.0 / 3.0
    t_final: float = 1.5
    refinement_level: int = 2
    kin_degree: int = 2
    thermo_degree: int = 1
    gamma: float = 5.0 / 3.0
    gravity: tuple = (0.0, -1.0)
    cfl: float = 0.5
    q1: float = 0.5
    q2: float = 2.0
    perturbation: float = 0.02
    dt_growth: float = 1.02
    dt_min: float = 1e-12
    wall_bc: bool = True
    viscosity: str = "eigen"
    visc_dt: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.atwood < 1.0:
            raise ConfigurationError(f"Atwood number must lie in (0, 1), got {self.atwood}")
        if self.t_final < 0:
            raise ConfigurationError("t_final must be non-negative")
        if self.cfl <= 0:
            raise ConfigurationError("cfl must be positive")
        if self.viscosity not in VISCOSITY_MODELS:
            raise ConfigurationError(f"viscosity must be one of {VISCOSITY_MODELS}")

    @classmethod
    def from_density_ratio(cls, R, **kwargs):
        if R <= 1.0:
            raise ConfigurationError(f"density ratio must exceed 1, got {R}")
        return cls(atwood=atwood_from_ratio(R), **kwargs)

    @property
    def density_ratio(self):
        return ratio_from_atwood(self.atwood)


@dataclass(frozen=True, eq=False)
class State:
    """FE coefficient vectors at one time instant: y = (v; e; x)."""

    v: np.ndarray
    e: np.ndarray
    x: np.ndarray
    t: float = 0.0

    def as_vector(self):
        return np.concatenate([self.v, self.e, self.x])

    def copy(self):
        return State(self.v.copy(), self.e.copy(), self.x.copy(), self.t)


def eos_pressure(rho, e, gamma):
    """Ideal-gas pressure p = (gamma - 1) rho e."""
    return (gamma - 1.0) * rho * e


@numba.njit(cache=True)
def _force_kernel(x, v, e, conn, tconn, dN, N, phi, qw, rho_detJ0,
                  gamma, q1, q2, order, cfl, eigen, visc_dt, K):
    """Fill the element force matrices ``K[e, t, a, i]``; return the dt estimate.

    ``x``, ``v`` are compact flat vectors (x-components then y-components).
    Returns -1 when an inverted quadrature point is met.
    """
    ne, nk = conn.shape
    nq = qw.shape[0]
    nt = phi.shape[1]
    nc = x.shape[0] // 2
    dt_min = np.inf
    for el in range(ne):
        for t in range(nt):
            for a in range(nk):
                K[el, t, a, 0] = 0.0
                K[el, t, a, 1] = 0.0
        for q in range(nq):
            J00 = J01 = J10 = J11 = 0.0
            L00 = L01 = L10 = L11 = 0.0
            vx = vy = 0.0
            for a in range(nk):
                c = conn[el, a]
                gx = dN[q, a, 0]
                gy = dN[q, a, 1]
                x0 = x[c]
                x1 = x[nc + c]
                v0 = v[c]
                v1 = v[nc + c]
                J00 += x0 * gx
                J01 += x0 * gy
                J10 += x1 * gx
                J11 += x1 * gy
                L00 += v0 * gx
                L01 += v0 * gy
                L10 += v1 * gx
                L11 += v1 * gy
                vx += N[q, a] * v0
                vy += N[q, a] * v1
            det = J00 * J11 - J01 * J10
            if not det > 0.0:
                return -1.0
            I00 = J11 / det
            I01 = -J01 / det
            I10 = -J10 / det
            I11 = J00 / det
            g00 = L00 * I00 + L01 * I10
            g01 = L00 * I01 + L01 * I11
            g10 = L10 * I00 + L11 * I10
            g11 = L10 * I01 + L11 * I11
            eq = 0.0
            for t in range(nt):
                eq += phi[q, t] * e[tconn[el, t]]
            rho = rho_detJ0[el] / det
            p = (gamma - 1.0) * rho * eq
            cs = np.sqrt(gamma * (gamma - 1.0) * max(eq, 0.0))
            # largest singular value of J in closed form (no cancellation)
            smax = 0.5 * (np.sqrt((J00 + J11) ** 2 + (J10 - J01) ** 2)
                          + np.sqrt((J00 - J11) ** 2 + (J01 + J10) ** 2))
            ell = det / smax / order
            mu = 0.0
            if eigen:
                # smallest eigenvalue of the symmetrized velocity gradient
                hs = 0.5 * (g00 - g11)
                sh = 0.5 * (g01 + g10)
                lam = 0.5 * (g00 + g11) - np.sqrt(hs * hs + sh * sh)
                mu = q2 * rho * ell * ell * abs(lam)
                if lam < 0.0:
                    mu += q1 * rho * ell * cs
            else:
                div = g00 + g11
                if div < 0.0:
                    mu = rho * ell * (q1 * cs + q2 * ell * (-div))
            wq = det * qw[q]
            S00 = (mu * g00 - p) * wq
            S11 = (mu * g11 - p) * wq
            S01 = 0.5 * mu * (g01 + g10) * wq
            T00 = S00 * I00 + S01 * I01
            T01 = S00 * I10 + S01 * I11
            T10 = S01 * I00 + S11 * I01
            T11 = S01 * I10 + S11 * I11
            for a in range(nk):
                b0 = dN[q, a, 0]
                b1 = dN[q, a, 1]
                f0 = T00 * b0 + T01 * b1
                f1 = T10 * b0 + T11 * b1
                for t in range(nt):
                    K[el, t, a, 0] += phi[q, t] * f0
                    K[el, t, a, 1] += phi[q, t] * f1
            speed = cs + np.sqrt(vx * vx + vy * vy) + visc_dt * mu / (rho * ell)
            dt_q = cfl * ell / speed
            if dt_q < dt_min:
                dt_min = dt_q
    return dt_min


@numba.njit(cache=True)
def _assemble_f_one(K, conn, nc, out):
    ne, nt, nk, _ = K.shape
    out[:] = 0.0
    for el in range(ne):
        for a in range(nk):
            s0 = 0.0
            s1 = 0.0
            for t in range(nt):
                s0 += K[el, t, a, 0]
                s1 += K[el, t, a, 1]
            out[conn[el, a]] += s0
            out[nc + conn[el, a]] += s1
    return out


@numba.njit(cache=True)
def _contract_f_tv(K, conn, tconn, w, nc, out):
    ne, nt, nk, _ = K.shape
    for el in range(ne):
        for t in range(nt):
            s = 0.0
            for a in range(nk):
                c = conn[el, a]
                s += K[el, t, a, 0] * w[c] + K[el, t, a, 1] * w[nc + c]
            out[tconn[el, t]] = s
    return out


class ElementKernel:
    """Force and time-step evaluation on a fixed subset of elements.

    Kinematic vectors are passed in a compact numbering: ``nodes`` lists the
    global scalar node ids touched by the elements and a compact vector holds
    their x-components followed by their y-components.  ``conn`` maps each
    element's local nodes into ``nodes``.  ``tdofs`` lists the thermodynamic
    dofs of the elements, in compact order.
    """

    def __init__(self, spaces, rho_elem, elements, gamma, q1, q2, cfl, viscosity="eigen",
                 visc_dt=4.0):
        self.spaces = spaces
        self.elements = np.asarray(elements, dtype=np.int64)
        gconn = spaces.kin_connectivity[self.elements]
        self.nodes, inv = np.unique(gconn, return_inverse=True)
        self.conn = np.ascontiguousarray(inv.reshape(gconn.shape), dtype=np.int64)
        gt = spaces.thermo_dofs[self.elements]
        self.tdofs = gt.ravel()
        self.tconn = np.arange(gt.size, dtype=np.int64).reshape(gt.shape)
        _, self.qw = spaces.quadrature
        self.N, self.dN = spaces.kin_basis
        self.N = np.ascontiguousarray(self.N)
        self.dN = np.ascontiguousarray(self.dN)
        self.phi = np.ascontiguousarray(spaces.thermo_basis)
        # rho * detJ is invariant along particle paths
        self.rho_detJ0 = rho_elem[self.elements] * spaces.mesh.h**2
        self.gamma, self.q1, self.q2, self.cfl = float(gamma), float(q1), float(q2), float(cfl)
        self.eigen = viscosity == "eigen"
        self.visc_dt = float(visc_dt)
        self.order = float(spaces.kinematic_degree)
        self.n_compact = len(self.nodes)
        n = spaces.n_nodes
        self.kin_rows = np.concatenate([self.nodes, n + self.nodes])

    def compact(self, vec):
        """Restrict a global kinematic vector to the compact numbering."""
        return vec[self.kin_rows]

    def evaluate(self, x, v, e):
        """Evaluate element force matrices from compact ``x``, ``v``, ``e``."""
        K = np.empty((len(self.elements), self.phi.shape[1], self.N.shape[1], 2))
        dt = _force_kernel(x, v, e, self.conn, self.tconn, self.dN, self.N, self.phi,
                           self.qw, self.rho_detJ0, self.gamma, self.q1, self.q2,
                           self.order, self.cfl, self.eigen, self.visc_dt, K)
        if dt < 0.0:
            raise StepFailure("inverted element")
        if not np.isfinite(dt):
            raise StepFailure("non-finite time step estimate")
        return ForceEvaluation(self, K, float(dt))


@dataclass(eq=False)
class ForceEvaluation:
    """Element force matrices ``K[e, t, a, i]`` from one consistent state.

    ``F_one`` is F . 1 in the kernel's compact kinematic numbering; ``F_tv(w)``
    contracts F^T with a compact kinematic vector and returns the vector over
    the kernel's thermodynamic dofs.
    """

    kernel: ElementKernel
    K: np.ndarray
    dt_est: float

    @cached_property
    def F_one(self):
        k = self.kernel
        out = _assemble_f_one(self.K, k.conn, k.n_compact, np.empty(2 * k.n_compact))
        if not np.all(np.isfinite(out)):
            raise StepFailure("non-finite force")
        return out

    def F_tv(self, w):
        k = self.kernel
        return _contract_f_tv(self.K, k.conn, k.tconn, w, k.n_compact, np.empty(len(k.tdofs)))


def _first_element_state(hydro):
    xy = hydro.spaces.node_coordinates
    nodes = hydro.spaces.kin_connectivity[0]
    x = np.concatenate([xy[np.sort(nodes), 0], xy[np.sort(nodes), 1]])
    nt = hydro.spaces.n_thermo_local
    return x, np.zeros_like(x), np.ones(nt)


class LagrangianHydro:
    """Discretized Rayleigh-Taylor problem: mesh, spaces, mass matrices, solver.

    Parameters
    ----------
    config : FomConfig
    """

    def __init__(self, config):
        self.config = config
        self.mesh = build_mesh(config.refinement_level)
        self.spaces = build_spaces(self.mesh, config.kin_degree, config.thermo_degree)
        R = config.density_ratio
        self.rho_elem = np.where(
            self.mesh.element_origin()[:, 1] + 0.5 * self.mesh.h >= 0.0, R, 1.0
        )
        self.mass = assemble_mass(self.mesh, self.spaces, self.rho_elem)
        self.n_nodes = self.spaces.n_nodes
        self.n_kin = self.spaces.n_kin
        self.n_thermo = self.spaces.n_thermo
        if config.wall_bc:
            self.free = self.spaces.free_dofs()
        else:
            self.free = np.arange(self.n_kin)
        self.constrained = np.setdiff1d(np.arange(self.n_kin), self.free)
        n = self.n_nodes
        self._free_x = self.free[self.free < n]
        self._free_y = self.free[self.free >= n] - n
        Ms = self.mass.M_scalar.tocsc()
        self._solve_x = factorized(Ms[self._free_x][:, self._free_x].tocsc())
        self._solve_y = factorized(Ms[self._free_y][:, self._free_y].tocsc())
        self.kernel = self.make_kernel(np.arange(self.mesh.element_count))
        gvec = np.concatenate(
            [np.full(n, config.gravity[0]), np.full(n, config.gravity[1])]
        )
        self.gravity_vector = self.solve_M_v(self.mass.apply_M_v(gvec))
        # load the compiled kernels now so timed loops do not pay for it
        ev = self.make_kernel(np.arange(1)).evaluate(*_first_element_state(self))
        ev.F_tv(np.zeros(2 * ev.kernel.n_compact))
        ev.F_one

    def make_kernel(self, elements):
        c = self.config
        return ElementKernel(self.spaces, self.rho_elem, elements, c.gamma, c.q1, c.q2, c.cfl,
                             c.viscosity, c.visc_dt)

    # ---- linear algebra -------------------------------------------------
    def solve_M_v(self, rhs):
        """Solve M_v a = rhs on free dofs; constrained entries of ``a`` are zero."""
        n = self.n_nodes
        out = np.zeros(self.n_kin)
        out[self._free_x] = self._solve_x(rhs[self._free_x])
        out[n + self._free_y] = self._solve_y(rhs[n + self._free_y])
        return out

    def acceleration(self, F_one):
        return self.solve_M_v(-F_one) + self.gravity_vector

    def total_energy(self, state):
        """Kinetic plus internal energy 1/2 v^T M_v v + 1^T M_e e."""
        kin = 0.5 * state.v @ self.mass.apply_M_v(state.v)
        return kin + np.sum(self.mass.apply_M_e(state.e))

    # ---- state ----------------------------------------------------------
    def initial_state(self):
        """Velocity, energy and position interpolated from the initial condition."""
        cfg = self.config
        xy = self.spaces.node_coordinates
        n = self.n_nodes
        vy = cfg.perturbation * np.cos(2 * np.pi * xy[:, 0]) * np.exp(-2 * np.pi * xy[:, 1] ** 2)
        v = np.concatenate([np.zeros(n), vy])
        v[self.constrained] = 0.0
        txy = self.spaces.thermo_node_coordinates
        rho = np.repeat(self.rho_elem, self.spaces.n_thermo_local)
        R = cfg.density_ratio
        e = (4.0 + R - rho * txy[:, 1]) / ((cfg.gamma - 1.0) * rho)
        x = np.concatenate([xy[:, 0], xy[:, 1]])
        return State(v, e, x, 0.0)

    # ---- force and dt ---------------------------------------------------
    def evaluate_force(self, state):
        return self.kernel.evaluate(state.x, state.v, state.e)

    def F_tv(self, ev, w):
        return ev.F_tv(w)

    def estimate_dt(self, state):
        return self.evaluate_force(state).dt_est

    def rk2_average_step(self, state, dt, ev=None):
        """One RK2-average step.

        Returns ``(mid_state, new_state, force_at_new_state)``; the force at the
        new state doubles as the inversion check and seeds the next step.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        if ev is None:
            ev = self.evaluate_force(state)
        v, e, x = state.v, state.e, state.x
        v_half = v + 0.5 * dt * self.acceleration(ev.F_one)
        e_half = e + 0.5 * dt * self.mass.solve_M_e(self.F_tv(ev, v_half))
        x_half = x + 0.5 * dt * v_half
        mid = State(v_half, e_half, x_half, state.t + 0.5 * dt)
        ev_half = self.evaluate_force(mid)
        v_new = v + dt * self.acceleration(ev_half.F_one)
        v_bar = 0.5 * (v + v_new)
        e_new = e + dt * self.mass.solve_M_e(self.F_tv(ev_half, v_bar))
        x_new = x + dt * v_bar
        new = State(v_new, e_new, x_new, state.t + dt)
        return mid, new, self.evaluate_force(new)

    def run(self, hook=None, dt_schedule=None, t_final=None):
        """Integrate from the initial state to ``t_final``.

        ``hook(state, stage, step)`` is called for the initial state (stage 0)
        and for every accepted midpoint (stage 1) and endpoint (stage 2).
        Returns ``(final_state, FomRun)``.
        """
        t0 = time.perf_counter()
        state = self.initial_state()
        ev = self.evaluate_force(state)
        setup = time.perf_counter() - t0
        return self.integrate(state, ev, hook=hook, dt_schedule=dt_schedule,
                              t_final=t_final, setup_seconds=setup)

    def integrate(self, state, ev, hook=None, dt_schedule=None, t_final=None,
                  setup_seconds=0.0):
        cfg = self.config
        t_final = cfg.t_final if t_final is None else t_final
        if hook is not None:
            hook(state, 0, 0)
        dts = []
        dt_prev = None
        n = 0
        hook_seconds = 0.0
        start = time.perf_counter()
        while state.t < t_final * (1.0 - 1e-14):
            if dt_schedule is not None:
                dt = dt_schedule[n]
            else:
                dt = ev.dt_est if dt_prev is None else min(ev.dt_est, cfg.dt_growth * dt_prev)
                dt = min(dt, t_final - state.t)
            while True:
                try:
                    mid, new, ev_new = self.rk2_average_step(state, dt, ev)
                    break
                except StepFailure as exc:
                    if dt_schedule is not None:
                        raise SimulationError(f"step {n} failed with forced dt: {exc}") from exc
                    dt *= 0.5
                    LGR.debug("step %d rejected (%s); retrying with dt=%.3e", n, exc, dt)
                    if dt < cfg.dt_min:
                        raise SimulationError(
                            f"time step fell below {cfg.dt_min:g} at t={state.t:.6g}"
                        ) from exc
            n += 1
            if hook is not None:
                th = time.perf_counter()
                hook(mid, 1, n)
                hook(new, 2, n)
                hook_seconds += time.perf_counter() - th
            state, ev = new, ev_new
            dts.append(dt)
            dt_prev = dt
        loop = time.perf_counter() - start - hook_seconds
        return state, FomRun(n, np.array(dts), setup_seconds, loop)


@dataclass
class FomRun:
    steps: int
    dts: np.ndarray = field(repr=False)
    setup_seconds: float = 0.0
    loop_seconds: float = 0.0


def initial_state(config):
    return LagrangianHydro(config).initial_state()


def run_fom(config, hook=None, dt_schedule=None):
    """Run the full-order model; returns ``(final_state, FomRun, hydro)``."""
    hydro = LagrangianHydro(config)
    state, run = hydro.run(hook=hook, dt_schedule=dt_schedule)
    return state, run, hydro


def with_config(config, **changes):
    return replace(config, **changes)
