"""Indicators and the adaptive partition of the indicator range into windows."""
import logging
from dataclasses import dataclass

import numpy as np

LGR = logging.getLogger(__name__)

INDICATOR_KINDS = ("time", "distance")


class IndicatorError(ValueError):
    """Indicator sequence violates the monotonicity the partition relies on."""


class Indicator:
    """Scalar progress measure Psi(state, t, mu) of a trajectory."""

    kind = None

    def value(self, state, t=None, mu=None):
        raise NotImplementedError

    def trajectory(self, x_columns, times):
        """Running-maximum indicator values along a stored trajectory."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class TimeIndicator(Indicator):
    """Psi = t."""

    kind = "time"

    def value(self, state, t=None, mu=None):
        return float(state.t if t is None else t)

    def trajectory(self, x_columns, times):
        return np.maximum.accumulate(np.asarray(times, dtype=float))


class PenetrationIndicator(Indicator):
    """Largest downward displacement of the material interface, clamped at 0.

    ``interface_dofs`` are the y-position dofs of nodes initially on y = 0.
    """

    kind = "distance"

    def __init__(self, interface_dofs):
        self.interface_dofs = np.asarray(interface_dofs, dtype=np.int64)
        if self.interface_dofs.size == 0:
            raise ValueError("penetration indicator needs at least one interface dof")

    def from_heights(self, y):
        return max(0.0, float(-np.min(y)))

    def value(self, state, t=None, mu=None):
        return self.from_heights(state.x[self.interface_dofs])

    def trajectory(self, x_columns, times):
        y = x_columns[self.interface_dofs]
        raw = np.maximum(0.0, -y.min(axis=0))
        return np.maximum.accumulate(raw)


def make_indicator(kind, spaces=None):
    if kind == "time":
        return TimeIndicator()
    if kind == "distance":
        if spaces is None:
            raise ValueError("the distance indicator needs the FE spaces")
        return PenetrationIndicator(spaces.interface_dofs())
    raise ValueError(f"unknown indicator {kind!r}; expected one of {INDICATOR_KINDS}")


@dataclass(frozen=True)
class SnapshotGroup:
    """Snapshots assigned to one window.

    ``ranges`` holds ``(parameter_index, first, last)`` with inclusive bounds.
    """

    index: int
    psi_lo: float
    psi_hi: float
    ranges: tuple

    @property
    def n_columns(self):
        return sum(last - first + 1 for _, first, last in self.ranges)

    def pairs(self):
        return [(n, k) for k, a, b in self.ranges for n in range(a, b + 1)]


@dataclass(frozen=True)
class IndicatorPartition:
    """Endpoints Psi_0 < ... < Psi_Nw and their snapshot groups."""

    endpoints: np.ndarray
    groups: tuple
    n_sample: int
    kind: str = "time"

    @property
    def n_windows(self):
        return len(self.groups)

    def window_of(self, psi):
        """Index of the first window whose upper endpoint exceeds ``psi``."""
        j = int(np.searchsorted(self.endpoints[1:], psi, side="right"))
        return min(j, self.n_windows - 1)


def partition_sequences(psi, n_sample, kind="time"):
    """Adaptive partition of indicator sequences, one per training parameter.

    Each window advances every active parameter by at most ``n_sample + 1``
    indices; the window endpoint is the smallest indicator value reached.
    Consecutive groups of one parameter share their boundary index.
    """
    if n_sample < 1:
        raise ValueError("n_sample must be at least 1")
    psi = [np.asarray(p, dtype=float) for p in psi]
    if not psi or any(p.size == 0 for p in psi):
        raise ValueError("empty indicator sequence")
    for k, p in enumerate(psi):
        bad = np.flatnonzero(np.diff(p) < 0)
        if bad.size:
            i = int(bad[0])
            raise IndicatorError(
                f"indicator decreases for parameter {k} at index {i + 1}: "
                f"{p[i]:.17g} -> {p[i + 1]:.17g}"
            )
    last = [len(p) - 1 for p in psi]
    prev = [0] * len(psi)
    active = [k for k in range(len(psi)) if last[k] > 0]
    endpoints = [min(p[0] for p in psi)]
    groups = []
    if not active:
        groups.append(SnapshotGroup(0, endpoints[0], endpoints[0],
                                    tuple((k, 0, 0) for k in range(len(psi)))))
        return IndicatorPartition(np.array(endpoints * 2), tuple(groups), n_sample, kind)
    while active:
        cand = {k: min(prev[k] + n_sample + 1, last[k]) for k in active}
        psi_j = min(psi[k][cand[k]] for k in active)
        ranges = []
        for k in list(active):
            idx = int(np.searchsorted(psi[k], psi_j, side="right")) - 1
            ranges.append((k, prev[k], idx))
            prev[k] = idx
            if idx == last[k]:
                active.remove(k)
        groups.append(SnapshotGroup(len(groups), endpoints[-1], psi_j, tuple(ranges)))
        endpoints.append(psi_j)
    psi_max = max(float(p[-1]) for p in psi)
    if endpoints[-1] > psi_max:
        raise IndicatorError("last endpoint exceeds the indicator range")
    return IndicatorPartition(np.array(endpoints), tuple(groups), n_sample, kind)


def indicator_sequences(snapshots, indicator):
    return [indicator.trajectory(p.state_columns("x"), p.times) for p in snapshots.parameters]


def partition(snapshots, n_sample, indicator):
    """Partition a :class:`SnapshotSet`'s indicator range."""
    return partition_sequences(indicator_sequences(snapshots, indicator), n_sample,
                               indicator.kind)


def assemble_group_matrix(snapshots, group, var):
    """Offset-subtracted snapshots of ``var`` for every pair in ``group``."""
    blocks = [snapshots.parameters[k].data[var][:, a:b + 1] for k, a, b in group.ranges]
    if not blocks or sum(b.shape[1] for b in blocks) == 0:
        raise ValueError(f"group {group.index} is empty")
    return np.hstack(blocks)


def write_partition(path, part):
    """Text sidecar: a header, the endpoints, then one line per group."""
    with open(path, "w") as fh:
        fh.write(f"# indicator {part.kind} n_sample {part.n_sample} windows {part.n_windows}\n")
        fh.write("endpoints " + " ".join(repr(float(p)) for p in part.endpoints) + "\n")
        for g in part.groups:
            rng = " ".join(f"{k}:{a}-{b}" for k, a, b in g.ranges)
            fh.write(f"group {g.index} {float(g.psi_lo)!r} {float(g.psi_hi)!r} {rng}\n")


def read_partition(path):
    kind, n_sample = "time", 1
    endpoints, groups = None, []
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "#":
                kind, n_sample = tok[2], int(tok[4])
            elif tok[0] == "endpoints":
                endpoints = np.array([float(t) for t in tok[1:]])
            elif tok[0] == "group":
                ranges = []
                for r in tok[4:]:
                    k, span = r.split(":")
                    a, b = span.split("-")
                    ranges.append((int(k), int(a), int(b)))
                groups.append(SnapshotGroup(int(tok[1]), float(tok[2]), float(tok[3]),
                                            tuple(ranges)))
    if endpoints is None:
        raise ValueError(f"{path}: no endpoints line")
    return IndicatorPartition(endpoints, tuple(groups), n_sample, kind)
