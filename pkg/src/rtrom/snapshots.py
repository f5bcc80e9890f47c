"""Stage-state snapshot collection and the ``.lsnap`` binary format.

Layout (little-endian)::

    b"LROMSNAP"  u32 version
    u64 n_kin, u64 n_thermo, u64 n_mu, u32 refinement, u32 kin_degree, u32 thermo_degree
    n_mu x (f64 atwood, u64 column_count)
    n_mu x (v_offset, e_offset, x_offset)                  f64
    n_mu x (times f64[c], steps u64[c], stages u8[c])
    v section: all columns, column-major                   f64
    e section, x section                                   f64

Columns are stored offset-subtracted; parameter blocks are contiguous.
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

LGR = logging.getLogger(__name__)

MAGIC = b"LROMSNAP"
VERSION = 1
VARIABLES = ("v", "e", "x")
_HEAD = struct.Struct("<8sIQQQIII")
_PARAM = struct.Struct("<dQ")


class SnapshotFormatError(ValueError):
    """Bad magic, unsupported version or truncated snapshot file."""


class IncompatibleSnapshotsError(ValueError):
    """Snapshot collections built on different discretizations."""


class SnapshotOrderError(RuntimeError):
    """Stage states recorded out of order."""


@dataclass
class ParameterSnapshots:
    """Offset-subtracted stage states of one training parameter.

    ``data[var]`` has shape (n_dofs, n_columns); column 0 is the initial
    state, then midpoint and endpoint states alternate for every step.
    """

    atwood: float
    offsets: dict
    times: np.ndarray
    steps: np.ndarray
    stages: np.ndarray
    data: dict

    @property
    def n_columns(self):
        return len(self.times)

    @property
    def n_steps(self):
        return int(self.steps[-1]) if len(self.steps) else 0

    def state_columns(self, var):
        """Snapshots of ``var`` with the offset added back."""
        return self.data[var] + self.offsets[var][:, None]


@dataclass
class SnapshotSet:
    """Snapshots of several training parameters on one discretization."""

    n_kin: int
    n_thermo: int
    refinement_level: int
    kin_degree: int = 2
    thermo_degree: int = 1
    parameters: list = field(default_factory=list)

    @property
    def n_mu(self):
        return len(self.parameters)

    @property
    def atwoods(self):
        return [p.atwood for p in self.parameters]

    @property
    def column_counts(self):
        return [p.n_columns for p in self.parameters]

    @property
    def n_columns(self):
        return sum(self.column_counts)

    def discretization(self):
        return (self.n_kin, self.n_thermo, self.refinement_level,
                self.kin_degree, self.thermo_degree)

    def matrix(self, var):
        """All offset-subtracted columns of ``var``, grouped by parameter."""
        return np.hstack([p.data[var] for p in self.parameters])

    def checksum(self):
        h = hashlib.sha256()
        h.update(repr(self.discretization()).encode())
        for p in self.parameters:
            h.update(np.float64(p.atwood).tobytes())
            for var in VARIABLES:
                h.update(np.ascontiguousarray(p.offsets[var]).tobytes())
                h.update(np.asfortranarray(p.data[var]).tobytes(order="F"))
            h.update(p.times.tobytes())
        return h.hexdigest()

    def add(self, param):
        if any(np.float64(param.atwood) == np.float64(a) for a in self.atwoods):
            LGR.warning("parameter %.6g appears more than once", param.atwood)
        self.parameters.append(param)


class SnapshotRecorder:
    """Time-loop hook storing every accepted stage state minus the initial state.

    Use as ``hydro.run(hook=recorder)``; ``recorder.result()`` returns the
    :class:`ParameterSnapshots`.
    """

    def __init__(self, atwood):
        self.atwood = float(atwood)
        self.offsets = None
        self._cols = {var: [] for var in VARIABLES}
        self._times, self._steps, self._stages = [], [], []

    def __call__(self, state, stage, step):
        self.record(state, step, stage)

    def record(self, state, time_index, stage):
        if self.offsets is None:
            if stage != 0 or time_index != 0:
                raise SnapshotOrderError("first recorded state must be the initial state")
            self.offsets = {var: getattr(state, var).copy() for var in VARIABLES}
        else:
            last_step, last_stage = self._steps[-1], self._stages[-1]
            expected = (last_step, 2) if last_stage == 1 else (last_step + 1, 1)
            if (time_index, stage) != expected:
                raise SnapshotOrderError(
                    f"got (step {time_index}, stage {stage}), expected {expected}"
                )
        for var in VARIABLES:
            self._cols[var].append(getattr(state, var) - self.offsets[var])
        self._times.append(state.t)
        self._steps.append(time_index)
        self._stages.append(stage)

    def result(self):
        if self.offsets is None:
            raise SnapshotOrderError("nothing recorded")
        if self._stages[-1] == 1:
            raise SnapshotOrderError("last step has a midpoint but no endpoint")
        return ParameterSnapshots(
            atwood=self.atwood,
            offsets=self.offsets,
            times=np.array(self._times, dtype=np.float64),
            steps=np.array(self._steps, dtype=np.uint64),
            stages=np.array(self._stages, dtype=np.uint8),
            data={var: np.column_stack(self._cols[var]) for var in VARIABLES},
        )


def collect_snapshots(hydro, dt_schedule=None):
    """Run ``hydro`` while recording; return ``(SnapshotSet, final_state, FomRun)``."""
    rec = SnapshotRecorder(hydro.config.atwood)
    state, run = hydro.run(hook=rec, dt_schedule=dt_schedule)
    sp = hydro.spaces
    snaps = SnapshotSet(sp.n_kin, sp.n_thermo, sp.mesh.refinement_level,
                        sp.kinematic_degree, sp.thermodynamic_degree)
    snaps.add(rec.result())
    return snaps, state, run


# ---- binary I/O -------------------------------------------------------------
def save(snapshots, path):
    s = snapshots
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, s.n_kin, s.n_thermo, s.n_mu,
                            s.refinement_level, s.kin_degree, s.thermo_degree))
        for p in s.parameters:
            fh.write(_PARAM.pack(p.atwood, p.n_columns))
        for p in s.parameters:
            for var in VARIABLES:
                fh.write(np.asarray(p.offsets[var], dtype="<f8").tobytes())
        for p in s.parameters:
            fh.write(np.asarray(p.times, dtype="<f8").tobytes())
            fh.write(np.asarray(p.steps, dtype="<u8").tobytes())
            fh.write(np.asarray(p.stages, dtype="u1").tobytes())
        for var in VARIABLES:
            for p in s.parameters:
                fh.write(np.asarray(p.data[var], dtype="<f8").tobytes(order="F"))


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, nbytes):
        if self.pos + nbytes > len(self.buf):
            raise SnapshotFormatError(f"{self.path}: truncated file")
        out = self.buf[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return out

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))


def load(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf, path)
    magic, version, n_kin, n_thermo, n_mu, ref, kd, td = _HEAD.unpack(r.take(_HEAD.size))
    if magic != MAGIC:
        raise SnapshotFormatError(f"{path}: not a snapshot file (magic {magic!r})")
    if version != VERSION:
        raise SnapshotFormatError(f"{path}: unsupported version {version}")
    heads = [_PARAM.unpack(r.take(_PARAM.size)) for _ in range(n_mu)]
    sizes = {"v": n_kin, "e": n_thermo, "x": n_kin}
    offsets = [{var: r.array("<f8", sizes[var]) for var in VARIABLES} for _ in heads]
    meta = []
    for _, c in heads:
        meta.append((r.array("<f8", c), r.array("<u8", c), r.array("u1", c)))
    data = [{} for _ in heads]
    for var in VARIABLES:
        for k, (_, c) in enumerate(heads):
            data[k][var] = r.array("<f8", sizes[var] * c).reshape((sizes[var], c), order="F")
    if r.pos != len(buf):
        raise SnapshotFormatError(f"{path}: {len(buf) - r.pos} trailing bytes")
    s = SnapshotSet(n_kin, n_thermo, ref, kd, td)
    for k, (atwood, _) in enumerate(heads):
        t, st, sg = meta[k]
        s.parameters.append(ParameterSnapshots(atwood, offsets[k], t, st, sg, data[k]))
    return s


def merge(paths_or_sets):
    """Union of snapshot collections over their parameters."""
    sets = [load(p) if not isinstance(p, SnapshotSet) else p for p in paths_or_sets]
    if not sets:
        raise ValueError("nothing to merge")
    ref = sets[0].discretization()
    out = SnapshotSet(*ref)
    for s in sets:
        if s.discretization() != ref:
            raise IncompatibleSnapshotsError(
                f"discretization {s.discretization()} differs from {ref}"
            )
        for p in s.parameters:
            out.add(p)
    return out


def save_state(path, state, spaces, atwood):
    """Write one state as a single zero-offset column."""
    p = ParameterSnapshots(
        atwood=float(atwood),
        offsets={"v": np.zeros(spaces.n_kin), "e": np.zeros(spaces.n_thermo),
                 "x": np.zeros(spaces.n_kin)},
        times=np.array([state.t]),
        steps=np.zeros(1, dtype=np.uint64),
        stages=np.array([2], dtype=np.uint8),
        data={var: getattr(state, var)[:, None] for var in VARIABLES},
    )
    s = SnapshotSet(spaces.n_kin, spaces.n_thermo, spaces.mesh.refinement_level,
                    spaces.kinematic_degree, spaces.thermodynamic_degree, [p])
    save(s, path)


def load_state(path):
    """Read a state written by :func:`save_state`; returns ``(State, atwood, SnapshotSet)``."""
    from .hydro import State

    s = load(path)
    if s.n_mu != 1 or s.parameters[0].n_columns != 1:
        raise SnapshotFormatError(f"{path}: expected a single-state file")
    p = s.parameters[0]
    cols = {var: p.state_columns(var)[:, 0] for var in VARIABLES}
    return State(cols["v"], cols["e"], cols["x"], float(p.times[0])), p.atwood, s
