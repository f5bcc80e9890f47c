"""Per-window reduced bases built offline, and the ``LROMBAS`` file format.

Window file layout (little-endian)::

    b"LROMBAS\\0" u32 version u32 window f64 psi_lo f64 psi_hi
    u64 n_kin, n_thermo, n_v, n_e, n_x, prev_n_v, prev_n_e, prev_n_x,
        m_F1, m_Ftv, len(sigma_v), len(sigma_e), len(sigma_x)
    f64 column-major blocks: Phi_v, Phi_e, Phi_x, pinv_F1, pinv_Ftv,
        T_v, T_e, T_x (Phi_j^T Phi_{j-1})
    u64 index lists: s_F1, s_Ftv
    f64 singular values: sigma_v, sigma_e, sigma_x
"""
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .decomposition import assemble_group_matrix
from .reduction import pod

LGR = logging.getLogger(__name__)

MAGIC = b"LROMBAS\x00"
VERSION = 1
VARIABLES = ("v", "e", "x")
_HEAD = struct.Struct("<8sIIdd13Q")


class WindowFormatError(ValueError):
    """Bad magic, unsupported version or truncated window file."""


@dataclass
class WindowBasis:
    """Parameter-independent data of one window.

    ``transfer[var]`` is ``Phi_j^T Phi_{j-1}`` (``None`` for the first window).
    """

    index: int
    psi_lo: float
    psi_hi: float
    phi: dict
    sigma: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    n_snapshots: int = 0

    @property
    def sizes(self):
        return tuple(self.phi[var].shape[1] for var in VARIABLES)


def build_window_bases(snapshots, part, delta_sigma=1e-4, constrained=None):
    """POD bases for every group of a partition, plus transfer operators.

    Rows listed in ``constrained`` are zeroed in the velocity bases, which
    keeps them inside the admissible velocity space exactly.
    """
    out = []
    for g in part.groups:
        phi, sigma = {}, {}
        for var in VARIABLES:
            b = pod(assemble_group_matrix(snapshots, g, var), delta_sigma)
            phi[var], sigma[var] = b.vectors, b.singular_values
        if constrained is not None and len(constrained):
            phi["v"] = phi["v"].copy()
            phi["v"][constrained] = 0.0
        w = WindowBasis(g.index, g.psi_lo, g.psi_hi, phi, sigma, n_snapshots=g.n_columns)
        if out:
            w.transfer = {var: phi[var].T @ out[-1].phi[var] for var in VARIABLES}
        out.append(w)
        LGR.debug("window %d: sizes %s from %d snapshots", g.index, w.sizes, g.n_columns)
    return out


def _block(a):
    return np.asarray(a, dtype="<f8").tobytes(order="F")


def save_window(path, basis, hyper=None):
    """Write a window; ``hyper`` optionally carries ``s_F1``, ``s_Ftv``,
    ``pinv_F1`` and ``pinv_Ftv``."""
    n_kin, n_v = basis.phi["v"].shape
    n_thermo, n_e = basis.phi["e"].shape
    n_x = basis.phi["x"].shape[1]
    prev = [basis.transfer[var].shape[1] if basis.transfer else 0 for var in VARIABLES]
    hyper = hyper or {}
    s_F1 = np.asarray(hyper.get("s_F1", np.zeros(0)), dtype="<u8")
    s_Ftv = np.asarray(hyper.get("s_Ftv", np.zeros(0)), dtype="<u8")
    pinv_F1 = hyper.get("pinv_F1", np.zeros((n_v, 0)))
    pinv_Ftv = hyper.get("pinv_Ftv", np.zeros((n_e, 0)))
    sig = [np.asarray(basis.sigma.get(var, np.zeros(0))) for var in VARIABLES]
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, basis.index, basis.psi_lo, basis.psi_hi,
                            n_kin, n_thermo, n_v, n_e, n_x, *prev,
                            len(s_F1), len(s_Ftv), *[len(s) for s in sig]))
        for var in VARIABLES:
            fh.write(_block(basis.phi[var]))
        fh.write(_block(pinv_F1))
        fh.write(_block(pinv_Ftv))
        if basis.transfer:
            for var in VARIABLES:
                fh.write(_block(basis.transfer[var]))
        fh.write(s_F1.tobytes())
        fh.write(s_Ftv.tobytes())
        for s in sig:
            fh.write(_block(s))


def load_window(path):
    """Read a window file; returns ``(WindowBasis, hyper dict or None)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEAD.size:
        raise WindowFormatError(f"{path}: truncated header")
    head = _HEAD.unpack_from(buf)
    magic, version, index, lo, hi = head[:5]
    if magic != MAGIC:
        raise WindowFormatError(f"{path}: not a window file (magic {magic!r})")
    if version != VERSION:
        raise WindowFormatError(f"{path}: unsupported version {version}")
    n_kin, n_thermo, n_v, n_e, n_x, pv, pe, px, m1, m2, lv, le, lx = head[5:]
    pos = _HEAD.size

    def take(shape, dtype="<f8"):
        nonlocal pos
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        end = pos + count * dt.itemsize
        if end > len(buf):
            raise WindowFormatError(f"{path}: truncated data")
        a = np.frombuffer(buf[pos:end], dtype=dt).astype(dt.newbyteorder("="))
        pos = end
        return a.reshape(shape, order="F")

    phi = {"v": take((n_kin, n_v)), "e": take((n_thermo, n_e)), "x": take((n_kin, n_x))}
    pinv_F1 = take((n_v, m1))
    pinv_Ftv = take((n_e, m2))
    transfer = {}
    if index > 0 and (pv or pe or px or n_v or n_e or n_x):
        transfer = {"v": take((n_v, pv)), "e": take((n_e, pe)), "x": take((n_x, px))}
    s_F1 = take((m1,), "<u8").astype(np.int64)
    s_Ftv = take((m2,), "<u8").astype(np.int64)
    sigma = {"v": take((lv,)), "e": take((le,)), "x": take((lx,))}
    if pos != len(buf):
        raise WindowFormatError(f"{path}: {len(buf) - pos} trailing bytes")
    basis = WindowBasis(index, lo, hi, phi, sigma, transfer)
    hyper = None
    if m1 or m2:
        hyper = {"s_F1": s_F1, "s_Ftv": s_Ftv, "pinv_F1": pinv_F1, "pinv_Ftv": pinv_Ftv}
    return basis, hyper
