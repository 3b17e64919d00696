"""Nondimensional LLG model: parameters, composite source, right-hand side, energy.

The dimensionless equation is

    m_t = alpha (eps Lap m + f) + alpha (eps |grad m|^2 - m.f) m - m x (eps Lap m + f)

with composite source ``f = -q (m2 e2 + m3 e3) + h_s + h_e``.  The minus sign
on ``m.f`` is the one obtained from the triple-product expansion of
``-m x h - alpha m x (m x h)`` and is used everywhere in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import VectorField, grad_sq_array, laplacian_array

MU0 = 4e-7 * np.pi
GAMMA = 1.76086e11  # 1/(T s)

# Permalloy
PY_CEX = 1.3e-11
PY_KU = 100.0
PY_MS = 8.0e5

E2 = np.array([0.0, 1.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class MaterialParams:
    epsilon: float = 1.0
    q: float = 0.0
    alpha: float = 0.1
    mu0: float = MU0
    Ms: float = PY_MS
    Cex: float = PY_CEX
    Ku: float = PY_KU
    L: float = 1.0
    gamma: float = GAMMA

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("damping must be non-negative")
        if self.epsilon < 0 or self.q < 0:
            raise ValueError("epsilon and q must be non-negative")

    @classmethod
    def from_physical(cls, Cex=PY_CEX, Ku=PY_KU, Ms=PY_MS, L=1e-6, alpha=0.1,
                      mu0=MU0, gamma=GAMMA) -> MaterialParams:
        """Dimensionless coefficients from SI constants and a length scale ``L`` (m)."""
        scale = mu0 * Ms * Ms
        return cls(epsilon=Cex / (scale * L * L), q=Ku / scale, alpha=alpha, mu0=mu0,
                   Ms=Ms, Cex=Cex, Ku=Ku, L=L, gamma=gamma)

    def with_alpha(self, alpha: float) -> MaterialParams:
        return replace(self, alpha=alpha)

    @property
    def t_unit(self) -> float:
        """Seconds per dimensionless time unit."""
        return 1.0 / (self.mu0 * self.gamma * self.Ms)

    @property
    def energy_scale(self) -> float:
        """Joules per unit of the dimensionless energy sum."""
        return 0.5 * self.mu0 * self.Ms**2 * self.L**3

    def field_from_tesla(self, b) -> np.ndarray:
        return np.asarray(b, dtype=float) / (self.mu0 * self.Ms)

    def field_from_mT(self, b_mT) -> np.ndarray:
        return self.field_from_tesla(np.asarray(b_mT, dtype=float) * 1e-3)

    def time_from_ps(self, t_ps: float) -> float:
        return t_ps * 1e-12 / self.t_unit

    def time_to_ns(self, t: float) -> float:
        return t * self.t_unit * 1e9


def _interior(x):
    return x.interior if isinstance(x, VectorField) else np.asarray(x)


def _as_field_values(he, shape):
    """Broadcast an external field (3-vector or per-cell array) to ``shape``."""
    he = np.asarray(he, dtype=float)
    if he.shape == (3,):
        return he.reshape(3, 1, 1, 1) * np.ones((1,) + shape[1:])
    return np.broadcast_to(he, shape)


def source_array(m, hs, he, q: float) -> np.ndarray:
    """Interior array of ``-q (m2 e2 + m3 e3) + hs + he``."""
    m = _interior(m)
    f = _as_field_values(he, m.shape).copy()
    if hs is not None:
        f += _interior(hs)
    f[1] -= q * m[1]
    f[2] -= q * m[2]
    return f


def compose_source(m: VectorField, hs: VectorField | None, he, p: MaterialParams) -> VectorField:
    if hs is not None and hs.grid != m.grid:
        raise ValueError("compose_source: grid mismatch")
    return VectorField.from_interior(m.grid, source_array(m, hs, he, p.q))


def effective_field(m: VectorField, f, p: MaterialParams, order: int = 4) -> VectorField:
    """``eps * Lap_h m + f``; ``m`` must have its ghosts filled."""
    h = p.epsilon * laplacian_array(m.data, m.grid, order) + _interior(f)
    return VectorField.from_interior(m.grid, h)


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the leading component axis."""
    return np.stack((a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]))


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def llg_rhs_array(m: VectorField, f, p: MaterialParams, order: int = 4) -> np.ndarray:
    mi = m.interior
    f = _interior(f)
    h = p.epsilon * laplacian_array(m.data, m.grid, order) + f
    gsq = grad_sq_array(m.data, m.grid, order)
    scal = p.epsilon * gsq - dot(mi, f)
    return p.alpha * h + p.alpha * scal * mi - cross(mi, h)


def llg_rhs(m: VectorField, f, p: MaterialParams, order: int = 4) -> VectorField:
    """Fully explicit right-hand side of the reformulated LLG equation."""
    return VectorField.from_interior(m.grid, llg_rhs_array(m, f, p, order))


def energy_density_sum(m: VectorField, hs, he, p: MaterialParams, order: int = 4) -> float:
    """Dimensionless energy ``sum (eps|grad m|^2 + q(m2^2+m3^2) - 2 he.m - hs.m) dV``."""
    mi = m.interior
    dens = p.epsilon * grad_sq_array(m.data, m.grid, order)
    dens = dens + p.q * (mi[1] ** 2 + mi[2] ** 2)
    dens = dens - 2.0 * dot(_as_field_values(he, mi.shape), mi)
    if hs is not None:
        dens = dens - dot(_interior(hs), mi)
    return float(np.sum(dens)) * m.grid.cell_volume


def energy(m: VectorField, hs, he, p: MaterialParams, order: int = 4) -> float:
    """Free energy in joules (dimensionless sum times ``mu0 Ms^2 L^3 / 2``)."""
    return p.energy_scale * energy_density_sum(m, hs, he, p, order)
