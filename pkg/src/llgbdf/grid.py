"""Cell-centered Cartesian grids, ghost layers and long-stencil differences.

Fields are stored with two ghost layers on every *active* axis (an axis
with more than one cell).  Inactive axes carry no ghosts and are skipped by
all stencils and norms, so 1D and thin-film problems share the 3D code path.

Ghost layers enforce the homogeneous Neumann condition by even reflection
about the boundary face::

    g[-1] = f[0],  g[-2] = f[1],  g[N] = f[N-1],  g[N+1] = f[N-2]

(0-based interior indices).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

GHOST = 2
MIN_CELLS = 2  # even reflection needs two interior layers per side

# stencil weights (offsets -2..2), without the 1/h or 1/h^2 factor
_D1 = {2: (0.0, -0.5, 0.0, 0.5, 0.0), 4: (1 / 12, -8 / 12, 0.0, 8 / 12, -1 / 12)}
_D2 = {2: (0.0, 1.0, -2.0, 1.0, 0.0), 4: (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12)}
# _apply relies on the second-difference weights summing to zero
assert all(abs(w[2] + 2 * (w[0] + w[1])) < 1e-15 for w in _D2.values())


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on ``[0, nx*hx] x [0, ny*hy] x [0, nz*hz]``.

    Mesh sizes are dimensionless (physical size over the characteristic
    length).  Cell ``i`` along an axis has its center at ``(i + 1/2) h``.
    """

    nx: int
    ny: int = 1
    nz: int = 1
    hx: float = 1.0
    hy: float = 1.0
    hz: float = 1.0

    def __post_init__(self):
        for n in self.shape:
            if int(n) != n or n < 1:
                raise ValueError(f"cell counts must be positive integers, got {self.shape}")
            if 1 < n < MIN_CELLS:
                raise ValueError(f"active axes need at least {MIN_CELLS} cells")
        if min(self.spacing) <= 0 or not np.all(np.isfinite(self.spacing)):
            raise ValueError(f"mesh sizes must be positive, got {self.spacing}")

    @classmethod
    def interval(cls, n: int, length: float = 1.0) -> GridSpec:
        return cls(n, 1, 1, length / n, 1.0, 1.0)

    @classmethod
    def cube(cls, n: int, length: float = 1.0) -> GridSpec:
        h = length / n
        return cls(n, n, n, h, h, h)

    @classmethod
    def box(cls, counts, extents, length: float) -> GridSpec:
        """Grid with ``counts`` cells over physical ``extents`` scaled by ``length``."""
        (nx, ny, nz), (lx, ly, lz) = counts, extents
        return cls(nx, ny, nz, lx / nx / length, ly / ny / length, lz / nz / length)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.hx, self.hy, self.hz)

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    @property
    def active_axes(self) -> tuple[int, ...]:
        return tuple(a for a, n in enumerate(self.shape) if n > 1)

    @property
    def dim(self) -> int:
        return 1 if self.active_axes in ((), (0,)) else 3

    @property
    def ncells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy * self.hz

    @property
    def pad(self) -> tuple[int, int, int]:
        return tuple(GHOST if n > 1 else 0 for n in self.shape)

    @property
    def padded_shape(self) -> tuple[int, int, int]:
        return tuple(n + 2 * p for n, p in zip(self.shape, self.pad))

    @property
    def interior(self) -> tuple[slice, slice, slice]:
        return tuple(slice(p, p + n) for n, p in zip(self.shape, self.pad))

    def centers(self, axis: int) -> np.ndarray:
        n, h = self.shape[axis], self.spacing[axis]
        return (np.arange(n) + 0.5) * h

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell-center coordinates broadcast to the interior shape."""
        return np.meshgrid(self.centers(0), self.centers(1), self.centers(2), indexing="ij")

    def check_axis(self, axis: int) -> None:
        if axis not in self.active_axes:
            raise ValueError(f"axis {axis} is inactive on grid with shape {self.shape}")


@dataclass
class ScalarField:
    grid: GridSpec
    data: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, grid: GridSpec) -> ScalarField:
        return cls(grid, np.zeros(grid.padded_shape))

    @classmethod
    def from_interior(cls, grid: GridSpec, values) -> ScalarField:
        f = cls.zeros(grid)
        f.interior[...] = values
        return fill_ghosts(f)

    @property
    def interior(self) -> np.ndarray:
        return self.data[self.grid.interior]


@dataclass
class VectorField:
    """Three components per cell, stored as ``data[c, i, j, k]`` with ghosts."""

    grid: GridSpec
    data: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, grid: GridSpec) -> VectorField:
        return cls(grid, np.zeros((3,) + grid.padded_shape))

    @classmethod
    def from_interior(cls, grid: GridSpec, values) -> VectorField:
        f = cls.zeros(grid)
        f.interior[...] = values
        return fill_ghosts(f)

    @classmethod
    def uniform(cls, grid: GridSpec, vector) -> VectorField:
        v = np.asarray(vector, dtype=float).reshape(3, 1, 1, 1)
        return cls(grid, np.broadcast_to(v, (3,) + grid.padded_shape).copy())

    @property
    def interior(self) -> np.ndarray:
        return self.data[(slice(None),) + self.grid.interior]

    def copy(self) -> VectorField:
        return VectorField(self.grid, self.data.copy())


class NormTriple(NamedTuple):
    linf: float
    l2: float
    h1: float


# ---------------------------------------------------------------------------
# array-level kernels (padded arrays; a leading component axis is allowed)


def fill_ghost_array(data: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Reflect interior layers into the ghost layers of ``data`` in place."""
    lead = data.ndim - 3
    for axis in grid.active_axes:
        n = grid.shape[axis]
        ax = lead + axis

        def idx(i):
            s = [slice(None)] * data.ndim
            s[ax] = i
            return tuple(s)

        # interior index j lives at padded index j + GHOST
        data[idx(1)] = data[idx(GHOST)]
        data[idx(0)] = data[idx(GHOST + 1)]
        data[idx(n + GHOST)] = data[idx(n + GHOST - 1)]
        data[idx(n + GHOST + 1)] = data[idx(n + GHOST - 2)]
    return data


def _shifted(data: np.ndarray, grid: GridSpec, axis: int, offset: int) -> np.ndarray:
    """Interior-sized view of ``data`` shifted by ``offset`` cells along ``axis``."""
    sl = list(grid.interior)
    p, n = grid.pad[axis], grid.shape[axis]
    sl[axis] = slice(p + offset, p + offset + n)
    return data[(Ellipsis,) + tuple(sl)]


def _apply(data, grid, axis, weights, scale):
    # the stencils are symmetric or antisymmetric, so pair offsets +-o first;
    # symmetric ones sum to zero and are applied as second differences
    # (left + right - 2 centre) so constants cancel exactly
    centre = _shifted(data, grid, axis, 0) if weights[2] != 0.0 else None
    out = None
    tmp = None
    for o in (1, 2):
        wl, wr = weights[2 - o], weights[2 + o]
        if wl == 0.0 and wr == 0.0:
            continue
        left, right = _shifted(data, grid, axis, -o), _shifted(data, grid, axis, o)
        if tmp is None:
            tmp = np.empty(right.shape)
        if wl == wr:
            np.add(left, right, out=tmp)
            if centre is not None:
                tmp -= centre
                tmp -= centre
        elif wl == -wr:
            np.subtract(right, left, out=tmp)
        else:
            raise ValueError("stencil weights must be symmetric or antisymmetric")
        tmp *= wr * scale
        if out is None:
            out, tmp = tmp, None
        else:
            out += tmp
    return out


def d1_array(data: np.ndarray, grid: GridSpec, axis: int, order: int = 4) -> np.ndarray:
    grid.check_axis(axis)
    return _apply(data, grid, axis, _D1[order], 1.0 / grid.spacing[axis])


def d2_array(data: np.ndarray, grid: GridSpec, axis: int, order: int = 4) -> np.ndarray:
    grid.check_axis(axis)
    return _apply(data, grid, axis, _D2[order], 1.0 / grid.spacing[axis] ** 2)


def laplacian_array(data: np.ndarray, grid: GridSpec, order: int = 4) -> np.ndarray:
    out = np.zeros(data.shape[: data.ndim - 3] + grid.shape)
    for axis in grid.active_axes:
        out += d2_array(data, grid, axis, order)
    return out


def grad_sq_array(data: np.ndarray, grid: GridSpec, order: int = 4) -> np.ndarray:
    """Pointwise sum over axes and components of squared first differences."""
    out = np.zeros(grid.shape)
    for axis in grid.active_axes:
        d = d1_array(data, grid, axis, order)
        out += np.sum(d * d, axis=0) if d.ndim == 4 else d * d
    return out


def stencil_symbol(grid: GridSpec, order: int = 4) -> np.ndarray:
    """Eigenvalues of the discrete Laplacian in the DCT-II basis.

    With even-reflection ghosts the 1D second-difference matrix is exactly
    diagonalised by the orthonormal DCT-II, so these are the exact
    eigenvalues on the interior shape (broadcastable).
    """
    lam = np.zeros(grid.shape)
    for axis in grid.active_axes:
        n, h = grid.shape[axis], grid.spacing[axis]
        theta = np.pi * np.arange(n) / n
        if order == 4:
            sym = (-2 * np.cos(2 * theta) + 32 * np.cos(theta) - 30) / (12 * h * h)
        else:
            sym = (2 * np.cos(theta) - 2) / (h * h)
        shape = [1, 1, 1]
        shape[axis] = n
        lam = lam + sym.reshape(shape)
    return lam


# ---------------------------------------------------------------------------
# field-level operations


def fill_ghosts(f):
    """Fill the ghost layers of a field (or padded array) by even reflection."""
    if isinstance(f, (ScalarField, VectorField)):
        fill_ghost_array(f.data, f.grid)
        return f
    raise TypeError("fill_ghosts expects a ScalarField or VectorField")


def _wrap_scalar(grid, values):
    out = ScalarField.zeros(grid)
    out.interior[...] = values
    return out


def _wrap_vector(grid, values):
    out = VectorField.zeros(grid)
    out.interior[...] = values
    return out


def d1_4th(f: ScalarField, axis: int) -> ScalarField:
    """Fourth-order central first difference.  Ghosts of the result are zero."""
    return _wrap_scalar(f.grid, d1_array(f.data, f.grid, axis, 4))


def d2_4th(f: ScalarField, axis: int) -> ScalarField:
    """Fourth-order central second difference.  Ghosts of the result are zero."""
    return _wrap_scalar(f.grid, d2_array(f.data, f.grid, axis, 4))


def laplacian(m: VectorField, order: int = 4) -> VectorField:
    return _wrap_vector(m.grid, laplacian_array(m.data, m.grid, order))


def laplacian_4th(m: VectorField) -> VectorField:
    return laplacian(m, 4)


def grad_sq(m: VectorField, order: int = 4) -> ScalarField:
    return _wrap_scalar(m.grid, grad_sq_array(m.data, m.grid, order))


def grad_sq_4th(m: VectorField) -> ScalarField:
    return grad_sq(m, 4)


def error_norms(num: VectorField, exact: VectorField, order: int = 4) -> NormTriple:
    """Max, discrete L2 and discrete H1 norms of ``num - exact``.

    L2 is the midpoint rule with weight ``hx*hy*hz`` per interior cell;
    H1 adds the L2 norm of the difference gradient, computed from the
    reflected error field.
    """
    if num.grid != exact.grid:
        raise ValueError("error_norms: grid mismatch")
    grid = num.grid
    err = VectorField.from_interior(grid, num.interior - exact.interior)
    e = err.interior
    w = grid.cell_volume
    l2sq = w * float(np.sum(e * e))
    gsq = w * float(np.sum(grad_sq_array(err.data, grid, order)))
    return NormTriple(float(np.max(np.abs(e))), np.sqrt(l2sq), np.sqrt(l2sq + gsq))
