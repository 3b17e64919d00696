"""Semi-implicit projection integrators of BDF type (orders 1, 2, 3).

One step of order ``s`` solves, for the intermediate field ``mt``,

    (c0 mt - sum_j a_j m^j) / k + m_hat x (eps Lap mt) - alpha eps Lap mt
        = alpha f_hat + alpha (eps |grad m_hat|^2 - m_hat.f_hat) m_hat - m_hat x f_hat

and then projects ``m = mt / |mt|``.  ``m_hat`` and ``f_hat`` are the
order-``s`` polynomial extrapolations of the stored magnetization and
source levels.  Fields in the history are interior arrays of shape
``(3, nx, ny, nz)``, oldest first.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .demag import DemagOperator, stray_field_array
from .grid import GridSpec, fill_ghost_array, grad_sq_array, laplacian_array
from .krylov import KrylovConfig, SolveStats, gmres
from .physics import MaterialParams, cross, dot, source_array
from .precond import make_preconditioner


class Scheme(enum.IntEnum):
    BDF1 = 1
    BDF2 = 2
    BDF3 = 3

    @classmethod
    def parse(cls, value) -> Scheme:
        if isinstance(value, Scheme):
            return value
        if isinstance(value, int):
            return cls(value)
        return cls[str(value).upper()]

    @property
    def c0(self) -> float:
        return {1: 1.0, 2: 1.5, 3: 11.0 / 6.0}[self.value]

    @property
    def history_weights(self) -> tuple[float, ...]:
        """Weights of the stored levels (oldest first) on the right-hand side."""
        return {1: (1.0,), 2: (-0.5, 2.0), 3: (1.0 / 3.0, -1.5, 3.0)}[self.value]

    @property
    def default_stencil(self) -> int:
        # the first- and second-order baselines use 3-point stencils
        return 4 if self is Scheme.BDF3 else 2


_EXTRAP = {1: (1.0,), 2: (-1.0, 2.0), 3: (1.0, -3.0, 3.0)}


class ProjectionSingularity(ArithmeticError):
    pass


class StepRejected(RuntimeError):
    def __init__(self, message: str, stats: SolveStats | None = None, t_index: int = -1):
        super().__init__(message)
        self.stats = stats
        self.t_index = t_index


@dataclass
class StepperState:
    k: float
    t_index: int
    history_m: list[np.ndarray]
    history_f: list[np.ndarray]
    scheme: Scheme
    gmres_iters: int = 0

    @property
    def m(self) -> np.ndarray:
        return self.history_m[-1]

    @property
    def t(self) -> float:
        return self.t_index * self.k


def extrapolate(history: Sequence[np.ndarray], order: int) -> np.ndarray:
    """Polynomial extrapolation to the next level from the newest ``order`` levels."""
    if order not in _EXTRAP:
        raise ValueError(f"unsupported extrapolation order {order}")
    if len(history) < order:
        raise ValueError(f"extrapolation of order {order} needs {order} levels, got {len(history)}")
    levels = history[len(history) - order:]
    out = _EXTRAP[order][0] * levels[0]
    for w, lev in zip(_EXTRAP[order][1:], levels[1:]):
        out = out + w * lev
    return out


def project(m_tilde: np.ndarray) -> np.ndarray:
    """Pointwise normalisation onto the unit sphere."""
    norm = np.sqrt(np.sum(m_tilde * m_tilde, axis=0))
    if not np.all(norm > 0.0) or not np.all(np.isfinite(norm)):
        raise ProjectionSingularity("projection singularity: |m~| = 0 or non-finite at some cell")
    return m_tilde / norm


@dataclass
class Problem:
    """Everything a step needs besides the state: grid, material, fields, forcing."""

    grid: GridSpec
    params: MaterialParams
    he: np.ndarray = field(default_factory=lambda: np.zeros(3))
    demag: DemagOperator | None = None
    forcing: Callable[[float], np.ndarray] | None = None

    def stray(self, m: np.ndarray) -> np.ndarray | None:
        return None if self.demag is None else stray_field_array(self.demag, m)

    def source(self, m: np.ndarray) -> np.ndarray:
        return source_array(m, self.stray(m), self.he, self.params.q)


def _padded(grid: GridSpec, interior: np.ndarray, buf: np.ndarray | None = None) -> np.ndarray:
    if buf is None:
        buf = np.zeros((3,) + grid.padded_shape)
    buf[(slice(None),) + grid.interior] = interior
    return fill_ghost_array(buf, grid)


def implicit_operator(scheme, k: float, eps: float, alpha: float, m_hat: np.ndarray,
                      grid: GridSpec, order: int | None = None):
    """Matrix-free callback ``y -> (c0/k) y - alpha eps Lap y + m_hat x (eps Lap y)``.

    ``y`` is a flat vector of the ``3 * ncells`` interior values; ghost layers
    are refilled by reflection before the stencil is applied.
    """
    scheme = Scheme.parse(scheme)
    order = order or scheme.default_stencil
    c = scheme.c0 / k
    shape = (3,) + grid.shape
    buf = np.zeros((3,) + grid.padded_shape)

    def apply(y: np.ndarray) -> np.ndarray:
        yi = y.reshape(shape)
        lap = eps * laplacian_array(_padded(grid, yi, buf), grid, order)
        return (c * yi - alpha * lap + cross(m_hat, lap)).reshape(-1)

    return apply


@dataclass
class Stepper:
    problem: Problem
    scheme: Scheme
    k: float
    krylov: KrylovConfig = field(default_factory=KrylovConfig)
    preconditioner: str | None = "frame"
    stencil_order: int | None = None

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if self.k <= 0:
            raise ValueError("time step must be positive")
        if self.stencil_order is None:
            self.stencil_order = self.scheme.default_stencil

    # -- one step -----------------------------------------------------------

    def step(self, state: StepperState) -> StepperState:
        s = int(self.scheme)
        if len(state.history_m) < s:
            raise ValueError(f"{self.scheme.name} needs {s} history levels; bootstrap first")
        grid, p, order = self.problem.grid, self.problem.params, self.stencil_order
        k = state.k
        hm, hf = state.history_m[-s:], state.history_f[-s:]
        m_hat = extrapolate(hm, s)
        f_hat = extrapolate(hf, s)

        gsq = grad_sq_array(_padded(grid, m_hat), grid, order)
        comb = sum(w * lev for w, lev in zip(self.scheme.history_weights, hm))
        rhs = comb / k + p.alpha * f_hat
        rhs += p.alpha * (p.epsilon * gsq - dot(m_hat, f_hat)) * m_hat
        rhs -= cross(m_hat, f_hat)
        t_new = (state.t_index + 1) * k
        if self.problem.forcing is not None:
            rhs += self.problem.forcing(t_new)

        apply = implicit_operator(self.scheme, k, p.epsilon, p.alpha, m_hat, grid, order)
        pc = make_preconditioner(self.preconditioner, grid, m_hat, self.scheme.c0 / k,
                                 p.epsilon, p.alpha, order)
        x, stats = gmres(apply, rhs.reshape(-1), hm[-1].reshape(-1), self.krylov, pc)
        if not stats.converged or not np.all(np.isfinite(x)):
            raise StepRejected(
                f"GMRES did not converge at step {state.t_index + 1}: "
                f"residual {stats.final_residual:.3e} after {stats.iterations} iterations",
                stats, state.t_index + 1)
        m_new = project(x.reshape((3,) + grid.shape))
        f_new = self.problem.source(m_new)
        keep = max(s, 3) - 1
        return replace(
            state,
            t_index=state.t_index + 1,
            history_m=state.history_m[-keep:] + [m_new],
            history_f=state.history_f[-keep:] + [f_new],
            gmres_iters=state.gmres_iters + stats.iterations,
        )

    def run(self, state: StepperState, nsteps: int, callback=None) -> StepperState:
        for _ in range(nsteps):
            state = self.step(state)
            if callback is not None:
                callback(state)
        return state

    # -- start-up -----------------------------------------------------------

    def initial_state(self, m0: np.ndarray) -> StepperState:
        m0 = np.asarray(m0, dtype=float)
        return StepperState(self.k, 0, [m0], [self.problem.source(m0)], self.scheme)

    def bootstrap(self, m0: np.ndarray, mode: str = "substep", exact=None,
                  n_sub: int = 100) -> StepperState:
        """Initial history for the scheme.

        ``mode="exact"`` samples ``exact(t)`` at ``t = k, 2k``; ``mode="substep"``
        advances with BDF1 using ``n_sub`` substeps per coarse step.
        """
        state = self.initial_state(m0)
        s = int(self.scheme)
        if s == 1:
            return state
        if mode == "exact":
            if exact is None:
                raise ValueError("exact bootstrap needs an exact-solution callable")
            for j in range(1, s):
                m = np.asarray(exact(j * self.k), dtype=float)
                state.history_m.append(m)
                state.history_f.append(self.problem.source(m))
            state.t_index = s - 1
            return state
        if mode != "substep":
            raise ValueError(f"unknown bootstrap mode {mode!r}")
        sub = Stepper(self.problem, Scheme.BDF1, self.k / n_sub, self.krylov,
                      self.preconditioner, self.stencil_order)
        sub_state = sub.initial_state(m0)
        for j in range(1, s):
            sub_state = sub.run(sub_state, n_sub)
            state.history_m.append(sub_state.m)
            state.history_f.append(sub_state.history_f[-1])
            state.gmres_iters += sub_state.gmres_iters
            sub_state = replace(sub_state, gmres_iters=0)
        state.t_index = s - 1
        return state


def step(state: StepperState, problem: Problem, **kwargs) -> StepperState:
    """Advance ``state`` by one step of its own scheme."""
    return Stepper(problem, state.scheme, state.k, **kwargs).step(state)


def bootstrap(state: StepperState, problem: Problem, mode: str = "substep", exact=None,
              n_sub: int = 100, **kwargs) -> StepperState:
    return Stepper(problem, state.scheme, state.k, **kwargs).bootstrap(
        state.history_m[0], mode=mode, exact=exact, n_sub=n_sub)


def run_to(stepper: Stepper, state: StepperState, t_end: float, callback=None) -> StepperState:
    """March until ``t_index * k`` reaches ``t_end`` (rounded to whole steps)."""
    nsteps = int(round(t_end / stepper.k)) - state.t_index
    return stepper.run(state, max(nsteps, 0), callback)


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
