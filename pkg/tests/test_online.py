import time

import numpy as np
import pytest

from rtrom.hydro import FomConfig, LagrangianHydro, State
from rtrom.online import IndicatorRangeExhausted, ReducedState, WindowRom, build_window_roms
from rtrom.rom import WindowedROM
from rtrom.windows import WindowBasis, WindowFormatError, load_window, save_window


def _identity_window(h, index=0, lo=0.0, hi=np.inf):
    I = np.eye(h.n_kin)
    return WindowBasis(index, lo, hi, {"v": I[:, h.free], "e": np.eye(h.n_thermo), "x": I})


def _random_window(h, sizes, seed, index=0, lo=0.0, hi=np.inf):
    rng = np.random.default_rng(seed)
    phi = {}
    for var, n, k in (("v", h.n_kin, sizes[0]), ("e", h.n_thermo, sizes[1]),
                      ("x", h.n_kin, sizes[2])):
        A = rng.standard_normal((n, k))
        if var == "v":
            A[h.constrained] = 0.0
        phi[var] = np.linalg.qr(A)[0]
    return WindowBasis(index, lo, hi, phi)


def test_identity_reduced_step_equals_fom_step(hydro_l1):
    w = build_window_roms([_identity_window(hydro_l1)], hydro_l1, 1.0, 1.0)[0]
    assert len(w.sample_elements) == hydro_l1.mesh.element_count
    s = hydro_l1.initial_state()
    _, new, _ = hydro_l1.rk2_average_step(s, 2e-3)
    r, _ = w.step(w.project(s), 2e-3)
    lifted = w.lift(r)
    for var in ("v", "e", "x"):
        a, b = getattr(lifted, var), getattr(new, var)
        assert np.linalg.norm(a - b) <= 1e-13 * np.linalg.norm(b)


def test_equilibrium_offsets_give_zero_rate(hydro_l1):
    s = hydro_l1.initial_state()
    rest = State(np.zeros(hydro_l1.n_kin), s.e, s.x)
    offsets = {"v": rest.v, "e": rest.e, "x": rest.x}
    w = WindowRom(_random_window(hydro_l1, (4, 4, 4), 0), hydro_l1, offsets, 3.0, 3.0)
    ev = w.evaluate(np.zeros(4), np.zeros(4), np.zeros(4))
    assert np.max(np.abs(w.velocity_rate(ev))) < 1e-12
    assert np.max(np.abs(w.energy_rate(ev, np.zeros(4)))) < 1e-12


def test_zero_force_free_streaming_in_reduced_space():
    h = LagrangianHydro(FomConfig(refinement_level=1, gravity=(0.0, 0.0), wall_bc=False))
    n = h.n_nodes
    v = np.concatenate([np.full(n, 0.3), np.full(n, -0.2)])
    s = h.initial_state()
    offsets = {"v": v, "e": np.zeros(h.n_thermo), "x": s.x}
    w = WindowRom(_random_window(h, (3, 3, 3), 1), h, offsets, 2.0, 2.0)
    # zero pressure and a uniform translation exert no force
    r = ReducedState(np.zeros(3), np.zeros(3), np.zeros(3), 0.0)
    new, _ = w.step(r, 0.01)
    assert np.allclose(new.v, 0.0, rtol=0, atol=1e-15)
    assert np.allclose(new.x, 0.01 * w.basis.phi["x"].T @ v, rtol=0, atol=1e-15)


def test_transfer_identity_and_inclusion(hydro_l1):
    b0 = _random_window(hydro_l1, (4, 4, 4), 2, 0, 0.0, 0.1)
    rng = np.random.default_rng(9)
    # the next window's bases contain the previous ones
    phi = {}
    for var, n in (("v", hydro_l1.n_kin), ("e", hydro_l1.n_thermo), ("x", hydro_l1.n_kin)):
        extra = rng.standard_normal((n, 3))
        if var == "v":
            extra[hydro_l1.constrained] = 0.0
        phi[var] = np.linalg.qr(np.hstack([b0.phi[var], extra]))[0]
    b1 = WindowBasis(1, 0.1, 0.2, phi,
                     transfer={var: phi[var].T @ b0.phi[var] for var in phi})
    b_same = WindowBasis(1, 0.1, 0.2, b0.phi,
                         transfer={var: np.eye(4) for var in b0.phi})
    w0, w1 = build_window_roms([b0, b1], hydro_l1, 2.0, 2.0)
    r = ReducedState(rng.standard_normal(4) * 1e-3, rng.standard_normal(4) * 1e-3,
                     rng.standard_normal(4) * 1e-3, 0.1)
    before, after = w0.lift(r), w1.lift(w1.transfer(r, w0))
    for var in ("v", "e", "x"):
        a, b = getattr(after, var), getattr(before, var)
        assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)
    ws = build_window_roms([b0, b_same], hydro_l1, 2.0, 2.0)
    same = ws[1].transfer(r, ws[0])
    assert np.allclose(same.v, r.v, atol=1e-15) and np.allclose(same.x, r.x, atol=1e-15)


def test_window_file_round_trip(tmp_path, reproductive_l2):
    rom, _ = reproductive_l2["time"]
    windows = rom.last_windows_
    f = tmp_path / "w.lrombas"
    save_window(f, rom.bases_[1], windows[1].hyper_data())
    b, hyper = load_window(f)
    for var in ("v", "e", "x"):
        assert np.array_equal(b.phi[var], rom.bases_[1].phi[var])
        assert np.array_equal(b.transfer[var], rom.bases_[1].transfer[var])
    assert np.array_equal(hyper["s_F1"], windows[1].s_F1)
    assert np.array_equal(hyper["pinv_Ftv"], windows[1].pinv_Ftv)
    assert (b.psi_lo, b.psi_hi) == (rom.bases_[1].psi_lo, rom.bases_[1].psi_hi)
    raw = f.read_bytes()
    f.write_bytes(b"LROMBAZ\0" + raw[8:])
    with pytest.raises(WindowFormatError):
        load_window(f)
    f.write_bytes(raw[:-4])
    with pytest.raises(WindowFormatError):
        load_window(f)


def test_single_window_contains_every_snapshot(hydro_l1, training_l1):
    snaps, _, _ = training_l1
    rom = WindowedROM(n_sample=10**6, delta_sigma=0.0).fit(snaps)
    assert rom.n_windows_ == 1
    for var in ("v", "e", "x"):
        S = snaps.matrix(var)
        P = rom.bases_[0].phi[var]
        resid = np.linalg.norm(S - P @ (P.T @ S), axis=0)
        assert np.all(resid <= 1e-10 * max(1.0, np.abs(S).max()))


def test_sampled_dt_close_to_fom(reproductive_l2, hydro_l2, training_l2):
    rom, res = reproductive_l2["time"]
    _, final, _ = training_l2
    w = rom.last_windows_[-1]
    r = w.project(final)
    ev = w.evaluate(r.v, r.e, r.x)
    fom_dt = hydro_l2.estimate_dt(final)
    assert 0.5 * fom_dt <= ev.dt_est <= 2.0 * fom_dt


def test_sampled_rate_matches_dense_fit(reproductive_l2, hydro_l2):
    rom, _ = reproductive_l2["time"]
    w = rom.last_windows_[0]
    r = ReducedState(np.zeros(w.n_v), np.zeros(w.n_e), np.zeros(w.n_x), 0.0)
    ev = w.evaluate(r.v, r.e, r.x)
    sampled = w.velocity_rate(ev)
    s = w.lift(r)
    full = hydro_l2.evaluate_force(s).F_one
    B = hydro_l2.mass.M_v @ w.basis.phi["v"]
    free = hydro_l2.free
    rhs = hydro_l2.mass.apply_M_v(hydro_l2.gravity_vector) - full
    dense = np.linalg.lstsq(B[free], rhs[free], rcond=None)[0]
    # the force is close to, not inside, the basis span
    assert np.linalg.norm(sampled - dense) <= 1e-2 * np.linalg.norm(dense)


def test_time_windows_switch_at_offline_endpoints(reproductive_l2):
    rom, res = reproductive_l2["time"]
    ends = rom.partition_.endpoints[1:res.windows_used]
    assert np.array_equal(np.array(res.trace.transition_times), ends)
    assert np.all(np.diff(res.trace.window) >= 0)


def test_distance_transitions_bracket_endpoints(reproductive_l2):
    rom, res = reproductive_l2["distance"]
    tr = res.trace
    psi = np.array(tr.psi)
    win = np.array(tr.window)
    assert np.all(np.diff(win) >= 0)
    # the step that leaves window j is the first to reach its endpoint
    for i in np.flatnonzero(np.diff(win) > 0):
        hi = rom.bases_[win[i]].psi_hi
        assert psi[i] >= hi
        if i > 0 and win[i - 1] == win[i]:
            assert psi[i - 1] < hi


def test_faster_parameter_traverses_more_distance_windows(training_l2):
    snaps, _, _ = training_l2
    rom = WindowedROM(indicator="distance").fit(snaps)
    fast = rom.simulate(0.36, 1.2).windows_used
    slow = rom.simulate(0.30, 1.2).windows_used
    assert fast >= slow


def test_zero_final_time(reproductive_l2, hydro_l2):
    rom, _ = reproductive_l2["time"]
    res = rom.simulate(1 / 3, 0.0)
    assert res.steps == 0 and res.windows_used == 1
    assert np.array_equal(res.state.v, hydro_l2.initial_state().v)


def test_strict_mode_stops_past_last_window(training_l1):
    snaps, _, _ = training_l1
    rom = WindowedROM(indicator="distance", n_sample=5, strict=True).fit(snaps)
    with pytest.raises(IndicatorRangeExhausted, match="exhausted"):
        rom.simulate(1 / 3, 0.8)
    rom.set_params(strict=False)
    assert rom.simulate(1 / 3, 0.8).state.t == pytest.approx(0.8)


def test_online_cost_independent_of_full_size():
    per_step = []
    for level in (2, 3):
        h = LagrangianHydro(FomConfig(refinement_level=level))
        w = WindowRom(_random_window(h, (6, 6, 6), level), h,
                      {k: getattr(h.initial_state(), k) for k in ("v", "e", "x")}, 2.0, 2.0)
        r = ReducedState(np.zeros(6), np.zeros(6), np.zeros(6), 0.0)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            for _ in range(200):
                w.step(r, 1e-4)
            best = min(best, (time.perf_counter() - t0) / 200)
        per_step.append((best, len(w.sample_elements)))
    (t2, n2), (t3, n3) = per_step
    # equal work up to the sample-mesh size
    assert t3 / t2 < 1.5 * max(1.0, n3 / n2)
