import numpy as np
import pytest

from rtrom import snapshots as snapio
from rtrom.hydro import FomConfig, LagrangianHydro
from rtrom.reduction import pod


def test_column_count_and_zero_first_column(training_l2):
    snaps, _, run = training_l2
    p = snaps.parameters[0]
    assert p.n_columns == 1 + 2 * run.steps
    for var in ("v", "e", "x"):
        assert p.data[var].shape[1] == p.n_columns
        assert np.all(p.data[var][:, 0] == 0.0)
    assert list(p.stages[:5]) == [0, 1, 2, 1, 2]
    assert np.all(np.diff(p.times) > 0)


def test_recorder_rejects_out_of_order(hydro_l1):
    rec = snapio.SnapshotRecorder(0.3)
    s = hydro_l1.initial_state()
    with pytest.raises(snapio.SnapshotOrderError):
        rec(s, 1, 1)
    rec(s, 0, 0)
    rec(s, 1, 1)
    with pytest.raises(snapio.SnapshotOrderError):
        rec(s, 1, 1)
    with pytest.raises(snapio.SnapshotOrderError):
        rec.result()


def test_round_trip_bit_exact(tmp_path, training_l1):
    snaps, _, _ = training_l1
    f = tmp_path / "s.lsnap"
    snapio.save(snaps, f)
    back = snapio.load(f)
    assert back.checksum() == snaps.checksum()
    assert back.discretization() == snaps.discretization()
    for var in ("v", "e", "x"):
        assert np.array_equal(back.matrix(var), snaps.matrix(var))
    # reload-then-POD equals in-memory POD
    s1 = pod(snaps.matrix("v")).singular_values
    s2 = pod(back.matrix("v")).singular_values
    assert np.max(np.abs(s1 - s2)) <= 1e-13 * s1[0]


def test_bad_files(tmp_path, training_l1):
    snaps, _, _ = training_l1
    f = tmp_path / "s.lsnap"
    snapio.save(snaps, f)
    raw = f.read_bytes()
    bad = tmp_path / "bad.lsnap"
    bad.write_bytes(b"NOTASNAP" + raw[8:])
    with pytest.raises(snapio.SnapshotFormatError, match="magic"):
        snapio.load(bad)
    bad.write_bytes(raw[:-9])
    with pytest.raises(snapio.SnapshotFormatError, match="truncated"):
        snapio.load(bad)
    bad.write_bytes(raw + b"\0")
    with pytest.raises(snapio.SnapshotFormatError, match="trailing"):
        snapio.load(bad)


@pytest.fixture(scope="module")
def two_params(tmp_path_factory):
    d = tmp_path_factory.mktemp("snaps")
    paths = []
    for a in (1 / 3, 0.3):
        snaps, _, _ = snapio.collect_snapshots(
            LagrangianHydro(FomConfig(atwood=a, refinement_level=1, t_final=0.2)))
        paths.append(d / f"a{a:.3f}.lsnap")
        snapio.save(snaps, paths[-1])
    return paths


def test_merge(two_params):
    a, b = (snapio.load(p) for p in two_params)
    m = snapio.merge(two_params)
    assert m.n_mu == 2
    assert m.atwoods == [a.atwoods[0], b.atwoods[0]]
    assert np.array_equal(m.matrix("e"), np.hstack([a.matrix("e"), b.matrix("e")]))
    assert m.column_counts == [a.n_columns, b.n_columns]
    assert snapio.merge(two_params[:1]).checksum() == a.checksum()
    for var in ("v", "e", "x"):
        assert np.array_equal(m.parameters[1].offsets[var], b.parameters[0].offsets[var])


def test_merge_incompatible(two_params, training_l2):
    with pytest.raises(snapio.IncompatibleSnapshotsError):
        snapio.merge([two_params[0], training_l2[0]])


def test_state_file_round_trip(tmp_path, hydro_l1, training_l1):
    _, final, _ = training_l1
    f = tmp_path / "final.lsnap"
    snapio.save_state(f, final, hydro_l1.spaces, 1 / 3)
    st, atwood, _ = snapio.load_state(f)
    assert atwood == 1 / 3 and st.t == final.t
    for var in ("v", "e", "x"):
        assert np.array_equal(getattr(st, var), getattr(final, var))
