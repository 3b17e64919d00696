"""Stray field by FFT convolution with the cell-averaged prism demag tensor.

The tensor between two equal rectangular cells separated by ``(X, Y, Z)`` is
given by Newell's closed forms: a sixth mixed difference of the auxiliary
functions ``f`` (diagonal entries) and ``g`` (off-diagonal entries).  The
convention is ``h_s = -N * m`` with ``N_xx + N_yy + N_zz = 1`` for the self
term, so fields are in units of ``Ms``.

The tensor is evaluated on the lattice of cell offsets in extended precision
(the mixed difference cancels about ``R**6`` worth of digits at distance
``R``), placed into a zero-padded array of at least ``2n - 1`` points per axis
and transformed once.
"""

from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .grid import GridSpec, VectorField

COMPONENTS = ("xx", "yy", "zz", "xy", "xz", "yz")
# (function, argument permutation) for each component
_RECIPES = {
    "xx": ("f", (0, 1, 2)),
    "yy": ("f", (1, 2, 0)),
    "zz": ("f", (2, 0, 1)),
    "xy": ("g", (0, 1, 2)),
    "xz": ("g", (0, 2, 1)),
    "yz": ("g", (1, 2, 0)),
}
_PAIRS = {"xx": (0, 0), "yy": (1, 1), "zz": (2, 2), "xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}


def _safe_div(a, b):
    out = np.zeros(np.broadcast(a, b).shape, dtype=np.result_type(a, b))
    np.divide(a, b, out=out, where=(b != 0))
    return out


def newell_f(x, y, z):
    """Newell's auxiliary function for the diagonal tensor entries."""
    x2, y2, z2 = x * x, y * y, z * z
    r = np.sqrt(x2 + y2 + z2)
    ay, az, ax = np.abs(y), np.abs(z), np.abs(x)
    out = 0.5 * ay * (z2 - x2) * np.arcsinh(_safe_div(ay, np.sqrt(x2 + z2)))
    out = out + 0.5 * az * (y2 - x2) * np.arcsinh(_safe_div(az, np.sqrt(x2 + y2)))
    out = out - ax * ay * az * np.arctan(_safe_div(ay * az, ax * r))
    return out + (2 * x2 - y2 - z2) * r / 6


def newell_g(x, y, z):
    """Newell's auxiliary function for the off-diagonal tensor entries."""
    x2, y2, z2 = x * x, y * y, z * z
    r = np.sqrt(x2 + y2 + z2)
    out = x * y * z * np.arcsinh(_safe_div(z, np.sqrt(x2 + y2)))
    out = out + y / 6 * (3 * z2 - y2) * np.arcsinh(_safe_div(x, np.sqrt(y2 + z2)))
    out = out + x / 6 * (3 * z2 - x2) * np.arcsinh(_safe_div(y, np.sqrt(x2 + z2)))
    out = out - z**3 / 6 * np.arctan(_safe_div(x * y, z * r))
    out = out - z * y2 / 2 * np.arctan(_safe_div(x * z, y * r))
    out = out - z * x2 / 2 * np.arctan(_safe_div(y * z, x * r))
    return out - x * y * r / 3


_FUNCS = {"f": newell_f, "g": newell_g}


def tensor_entries(component: str, offsets, cell) -> np.ndarray:
    """Tensor entries for an array of offsets ``(..., 3)`` by the direct 64-term sum.

    Independent of the lattice path used by :func:`build_operator`; this is
    the reference for direct-summation checks.
    """
    fn, perm = _RECIPES[component]
    fn = _FUNCS[fn]
    dx = np.asarray(cell, dtype=np.longdouble)
    base = np.asarray(offsets, dtype=np.longdouble)
    total = np.zeros(base.shape[:-1], dtype=np.longdouble)
    for bits in itertools.product((0, 1), repeat=6):
        p = base + (np.array(bits[:3]) - np.array(bits[3:])) * dx
        sign = -1 if sum(bits) % 2 else 1
        total += sign * fn(p[..., perm[0]], p[..., perm[1]], p[..., perm[2]])
    return (total / (4 * np.pi * np.prod(dx))).astype(float)


def tensor_entry(component: str, offset, cell) -> float:
    """One tensor entry for a single cell offset."""
    return float(tensor_entries(component, np.asarray(offset, dtype=float)[None, :], cell)[0])


def _second_difference(arr: np.ndarray, axis: int) -> np.ndarray:
    """``-a[i-1] + 2 a[i] - a[i+1]`` along ``axis`` (length shrinks by 2)."""
    n = arr.shape[axis]
    lo = np.take(arr, range(0, n - 2), axis=axis)
    mid = np.take(arr, range(1, n - 1), axis=axis)
    hi = np.take(arr, range(2, n), axis=axis)
    return 2 * mid - lo - hi


def newell_tensor(shape, cell) -> dict[str, np.ndarray]:
    """All six components on offsets ``-(n-1)..(n-1)`` per axis (float64)."""
    cell = np.asarray(cell, dtype=np.longdouble)
    axes = [np.arange(-n, n + 1, dtype=np.longdouble) * d for n, d in zip(shape, cell)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    coords = (X, Y, Z)
    out = {}
    for comp, (fname, perm) in _RECIPES.items():
        vals = _FUNCS[fname](coords[perm[0]], coords[perm[1]], coords[perm[2]])
        for axis in range(3):
            vals = _second_difference(vals, axis)
        out[comp] = (vals / (4 * np.pi * np.prod(cell))).astype(float)
    return out


def dipole_tensor(shape, cell) -> dict[str, np.ndarray]:
    """Point-dipole approximation; the self term is the cube value 1/3 per axis."""
    axes = [np.arange(-(n - 1), n, dtype=float) * d for n, d in zip(shape, cell)]
    R = np.meshgrid(*axes, indexing="ij")
    r2 = R[0] ** 2 + R[1] ** 2 + R[2] ** 2
    r = np.sqrt(r2)
    vol = float(np.prod(cell))
    with np.errstate(divide="ignore", invalid="ignore"):
        pref = vol / (4 * np.pi * r**5)
        out = {}
        for comp, (a, b) in _PAIRS.items():
            t = -pref * (3 * R[a] * R[b] - (r2 if a == b else 0.0))
            centre = tuple(n - 1 for n in shape)
            t[centre] = 1.0 / 3.0 if a == b else 0.0
            out[comp] = t
    return out


@dataclass
class DemagOperator:
    """Precomputed spectral demag kernel for one grid; immutable after build."""

    grid: GridSpec
    cell: tuple[float, float, float]
    fft_shape: tuple[int, int, int]
    spectral_kernel: dict[str, np.ndarray] = field(repr=False)
    real_kernel: dict[str, np.ndarray] = field(repr=False)
    kernel: str = "newell"

    def __call__(self, m) -> np.ndarray:
        return stray_field_array(self, m.interior if isinstance(m, VectorField) else m)

    def matrix_entry(self, comp: str, offset) -> float:
        n = self.grid.shape
        idx = tuple(o + ni - 1 for o, ni in zip(offset, n))
        return float(self.real_kernel[comp][idx])


def _fft_shape(shape) -> tuple[int, int, int]:
    return tuple(1 if n == 1 else sfft.next_fast_len(2 * n - 1, real=True) for n in shape)


def build_operator(grid: GridSpec, cell_dims=None, kernel: str = "newell") -> DemagOperator:
    """Precompute the spectral demag kernel for ``grid``.

    ``cell_dims`` are the physical cell sizes; only their ratios matter, so
    the dimensionless grid spacing is used when omitted.
    """
    cell = tuple(float(c) for c in (cell_dims if cell_dims is not None else grid.spacing))
    if len(cell) != 3 or min(cell) <= 0 or not np.all(np.isfinite(cell)):
        raise ValueError(f"degenerate cell dimensions {cell}")
    shape = grid.shape
    if kernel == "newell":
        tensor = newell_tensor(shape, cell)
    elif kernel == "dipole":
        tensor = dipole_tensor(shape, cell)
    else:
        raise ValueError(f"unknown demag kernel {kernel!r}")
    fshape, spectral = _spectral(tensor, shape)
    return DemagOperator(grid, cell, fshape, spectral, tensor, kernel)


def _spectral(tensor, shape):
    fshape = _fft_shape(shape)
    # offsets -(n-1)..(n-1) stored with wrap-around
    idx = np.ix_(*[np.arange(-(n - 1), n) % p for n, p in zip(shape, fshape)])
    spectral = {}
    for comp, t in tensor.items():
        padded = np.zeros(fshape)
        padded[idx] = t
        spectral[comp] = sfft.rfftn(padded, s=fshape)
    return fshape, spectral


def stray_field_array(op: DemagOperator, m: np.ndarray) -> np.ndarray:
    """``-N * m`` on the interior array ``m`` of shape ``(3,) + grid.shape``."""
    if m.shape != (3,) + op.grid.shape:
        raise ValueError("stray_field: grid mismatch")
    fs = op.fft_shape
    mk = [sfft.rfftn(m[c], s=fs) for c in range(3)]
    K = op.spectral_kernel
    hk = (
        K["xx"] * mk[0] + K["xy"] * mk[1] + K["xz"] * mk[2],
        K["xy"] * mk[0] + K["yy"] * mk[1] + K["yz"] * mk[2],
        K["xz"] * mk[0] + K["yz"] * mk[1] + K["zz"] * mk[2],
    )
    nx, ny, nz = op.grid.shape
    return np.stack([-sfft.irfftn(h, s=fs)[:nx, :ny, :nz] for h in hk])


def stray_field(op: DemagOperator, m: VectorField) -> VectorField:
    if m.grid != op.grid:
        raise ValueError("stray_field: grid mismatch")
    return VectorField.from_interior(m.grid, stray_field_array(op, m.interior))


def direct_stray_field(grid: GridSpec, m: np.ndarray, cell=None) -> np.ndarray:
    """Dense ``O(N^2)`` summation with entries from :func:`tensor_entry`; tests only."""
    cell = tuple(cell if cell is not None else grid.spacing)
    shape = grid.shape
    # each distinct offset is evaluated once, then gathered into dense matrices
    grids = np.meshgrid(*(np.arange(-(n - 1), n) * c for n, c in zip(shape, cell)), indexing="ij")
    offsets = np.stack(grids, axis=-1)
    table = {c: tensor_entries(c, offsets, cell) for c in COMPONENTS}
    pts = np.array(list(itertools.product(*(range(n) for n in shape))))
    d = pts[:, None, :] - pts[None, :, :] + np.array(shape) - 1
    N = {c: table[c][d[..., 0], d[..., 1], d[..., 2]] for c in COMPONENTS}
    mf = m.reshape(3, -1)
    h = np.stack([
        N["xx"] @ mf[0] + N["xy"] @ mf[1] + N["xz"] @ mf[2],
        N["xy"] @ mf[0] + N["yy"] @ mf[1] + N["yz"] @ mf[2],
        N["xz"] @ mf[0] + N["yz"] @ mf[1] + N["zz"] @ mf[2],
    ])
    return -h.reshape(m.shape)


# ---------------------------------------------------------------------------
# kernel cache: header (magic, dims, cell sizes, sha256 of payload) + payload

_MAGIC = b"LLGDEMAG1"
_HEADER = struct.Struct("<9s3q3d32s")


def save_kernel(op: DemagOperator, path) -> None:
    payload = np.stack([op.real_kernel[c] for c in COMPONENTS]).astype("<f8").tobytes()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, *op.grid.shape, *op.cell, digest))
        fh.write(payload)


def load_kernel(grid: GridSpec, path, cell_dims=None) -> DemagOperator:
    """Rebuild an operator from a cached real-space kernel; validates the header."""
    raw = Path(path).read_bytes()
    magic, nx, ny, nz, cx, cy, cz, digest = _HEADER.unpack_from(raw)
    cell = tuple(cell_dims if cell_dims is not None else grid.spacing)
    if magic != _MAGIC:
        raise ValueError("not a demag kernel cache file")
    if (nx, ny, nz) != grid.shape or not np.allclose((cx, cy, cz), cell, rtol=1e-12):
        raise ValueError("demag cache does not match the grid signature")
    payload = raw[_HEADER.size:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError("demag cache checksum mismatch")
    shape = tuple(2 * n - 1 for n in grid.shape)
    data = np.frombuffer(payload, dtype="<f8").reshape((6,) + shape)
    tensor = {c: data[i].copy() for i, c in enumerate(COMPONENTS)}
    fshape, spectral = _spectral(tensor, grid.shape)
    return DemagOperator(grid, (cx, cy, cz), fshape, spectral, tensor, "newell")
