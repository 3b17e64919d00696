"""Manufactured-solution verification: exact solution, forcing, convergence studies.

The exact magnetization is

    m_e = (cos(phi) sin t, sin(phi) sin t, cos t)

with ``phi = cos(pi x)`` in 1D and ``phi = cos(pi x) cos(pi y) cos(pi z)`` in
3D, on the unit interval / cube.  Both satisfy the homogeneous Neumann
condition.  The forcing ``g`` is chosen so that ``m_e`` solves

    m_t = alpha Lap m + alpha |grad m|^2 m - m x Lap m + g

(``eps = 1``, no other fields).  Writing ``u = (cos phi, sin phi, 0)`` and
``u' = (-sin phi, cos phi, 0)``, differentiating by hand gives

    g = cos t u - sin t e3
        - alpha sin t (Lap(phi) u' - |grad phi|^2 u)
        - alpha sin^2 t |grad phi|^2 (sin t u + cos t e3)
        + sin^2 t Lap(phi) e3 - sin t cos t (Lap(phi) u + |grad phi|^2 u')
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .grid import GridSpec, NormTriple, VectorField, error_norms
from .krylov import KrylovConfig
from .physics import MaterialParams
from .stepper import Problem, Scheme, Stepper

T_FINAL = 0.1
ALPHA = 0.01

# denominators N0 of k = T/N0 (1D, fixed h = 1e-4)
TIME_SCHEDULE_1D = {
    Scheme.BDF1: (8, 12, 16, 24, 32),
    Scheme.BDF2: (8, 12, 16, 24, 32),
    Scheme.BDF3: (12, 16, 24, 32, 36),
}
# 3D coordinated refinement: k = T/N0 with h tied to k per scheme
TIME_SCHEDULE_3D = {
    Scheme.BDF1: (40, 57, 78, 102, 129),  # k ~ h^2
    Scheme.BDF2: (2, 3, 4, 5, 6),  # k ~ h
    Scheme.BDF3: (6, 7, 8, 9, 11),  # k ~ h^(4/3)
}
SPACE_SCHEDULE_1D = (16, 32, 64, 128, 256)
SPATIAL_K = 1e-5
FINE_1D_CELLS = 10000


@dataclass(frozen=True)
class ManufacturedCase:
    dim: int = 1
    alpha: float = ALPHA
    T: float = T_FINAL

    def __post_init__(self):
        if self.dim not in (1, 3):
            raise ValueError("manufactured case is defined for dim 1 or 3")
        if self.T <= 0:
            raise ValueError("final time must be positive")

    @property
    def params(self) -> MaterialParams:
        return MaterialParams(epsilon=1.0, q=0.0, alpha=self.alpha)


def _coords(case: ManufacturedCase, x):
    if case.dim == 1:
        return (np.asarray(x, dtype=float),)
    x = tuple(np.asarray(c, dtype=float) for c in x)
    if len(x) != 3:
        raise ValueError("3D case needs (x, y, z) coordinates")
    return x


def _phi_terms(case: ManufacturedCase, x):
    """``phi``, ``Lap(phi)`` and ``|grad phi|^2`` at the given coordinates."""
    pi = np.pi
    c = _coords(case, x)
    if case.dim == 1:
        cx, sx = np.cos(pi * c[0]), np.sin(pi * c[0])
        return cx, -pi**2 * cx, pi**2 * sx**2
    cs = [np.cos(pi * xi) for xi in c]
    sn = [np.sin(pi * xi) for xi in c]
    phi = cs[0] * cs[1] * cs[2]
    grad_sq = pi**2 * ((sn[0] * cs[1] * cs[2]) ** 2 + (cs[0] * sn[1] * cs[2]) ** 2
                       + (cs[0] * cs[1] * sn[2]) ** 2)
    return phi, -3.0 * pi**2 * phi, grad_sq


def exact_solution(case: ManufacturedCase, x, t: float) -> np.ndarray:
    """``m_e(x, t)``; ``x`` is an array (1D) or an ``(x, y, z)`` tuple (3D).

    Returns an array with the three components stacked on the leading axis.
    """
    phi, _, _ = _phi_terms(case, x)
    st = np.sin(t)
    return np.stack((np.cos(phi) * st, np.sin(phi) * st, np.full_like(phi, np.cos(t))))


def forcing(case: ManufacturedCase, x, t: float) -> np.ndarray:
    phi, lap, gsq = _phi_terms(case, x)
    a = case.alpha
    st, ct = np.sin(t), np.cos(t)
    u = np.stack((np.cos(phi), np.sin(phi), np.zeros_like(phi)))
    up = np.stack((-np.sin(phi), np.cos(phi), np.zeros_like(phi)))
    e3 = np.stack((np.zeros_like(phi), np.zeros_like(phi), np.ones_like(phi)))
    g = ct * u - st * e3
    g = g - a * st * (lap * up - gsq * u)
    g = g - a * st**2 * gsq * (st * u + ct * e3)
    g = g + st**2 * lap * e3 - st * ct * (lap * u + gsq * up)
    return g


def _grid_coords(case: ManufacturedCase, grid: GridSpec):
    X, Y, Z = grid.mesh()
    return X if case.dim == 1 else (X, Y, Z)


def sample_exact(case: ManufacturedCase, grid: GridSpec, t: float) -> np.ndarray:
    """Interior array ``(3, nx, ny, nz)`` of the exact solution at cell centers."""
    return exact_solution(case, _grid_coords(case, grid), t)


class _ForcingSampler:
    """Cell-center forcing with the time-independent parts cached."""

    def __init__(self, case: ManufacturedCase, grid: GridSpec):
        phi, lap, gsq = _phi_terms(case, _grid_coords(case, grid))
        self.alpha = case.alpha
        self.lap, self.gsq = lap, gsq
        z = np.zeros_like(phi)
        self.u = np.stack((np.cos(phi), np.sin(phi), z))
        self.up = np.stack((-np.sin(phi), np.cos(phi), z))

    def __call__(self, t: float) -> np.ndarray:
        a, lap, gsq, u, up = self.alpha, self.lap, self.gsq, self.u, self.up
        st, ct = np.sin(t), np.cos(t)
        g = (ct + a * st * gsq - a * st**3 * gsq - st * ct * lap) * u
        g -= (a * st * lap + st * ct * gsq) * up
        g[2] += -st - a * st**2 * ct * gsq + st**2 * lap
        return g


def manufactured_problem(case: ManufacturedCase, grid: GridSpec) -> Problem:
    return Problem(grid, case.params, forcing=_ForcingSampler(case, grid))


def grid_for(case: ManufacturedCase, n: int) -> GridSpec:
    return GridSpec.interval(n) if case.dim == 1 else GridSpec.cube(n)


def cells_for_3d(scheme, n0: int, T: float = T_FINAL) -> int:
    """Cells per axis tied to ``k = T/n0`` by the coordinated refinement rule."""
    scheme = Scheme.parse(scheme)
    inv_k = n0 / T
    if scheme is Scheme.BDF1:
        return int(round(inv_k ** 0.5))
    if scheme is Scheme.BDF2:
        return int(round(inv_k))
    return int(round(inv_k ** 0.75))


class RunResult(NamedTuple):
    norms: NormTriple
    seconds: float
    gmres_iters: int
    max_unit_defect: float


def run_manufactured(scheme, case: ManufacturedCase, grid: GridSpec, nsteps: int,
                     bootstrap: str = "exact", krylov: KrylovConfig | None = None,
                     preconditioner: str | None = "frame", stencil_order: int | None = None,
                     n_sub: int = 100) -> RunResult:
    """March the manufactured problem to ``case.T`` in ``nsteps`` steps and measure the error."""
    scheme = Scheme.parse(scheme)
    k = case.T / nsteps
    krylov = krylov or KrylovConfig(rel_tol=1e-12, abs_tol=1e-15, restart=40, max_iters=2000)
    stepper = Stepper(manufactured_problem(case, grid), scheme, k, krylov, preconditioner,
                      stencil_order)
    m0 = sample_exact(case, grid, 0.0)
    state = stepper.bootstrap(m0, mode=bootstrap, exact=lambda t: sample_exact(case, grid, t),
                              n_sub=n_sub)
    defect = [0.0]

    def watch(s):
        defect[0] = max(defect[0], float(np.max(np.abs(np.sqrt(np.sum(s.m**2, axis=0)) - 1.0))))

    t0 = time.perf_counter()
    state = stepper.run(state, nsteps - state.t_index, watch)
    seconds = time.perf_counter() - t0
    num = VectorField.from_interior(grid, state.m)
    exact = VectorField.from_interior(grid, sample_exact(case, grid, state.t))
    return RunResult(error_norms(num, exact), seconds, state.gmres_iters, defect[0])


# -- reports ------------------------------------------------------------------


@dataclass
class StudyRow:
    scheme: str
    dim: int
    k: float
    h: float
    norms: NormTriple
    seconds: float
    gmres_iters: int


def fit_order(x: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of ``log err`` against ``log x``."""
    x, err = np.asarray(x, dtype=float), np.asarray(err, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two levels to fit an order")
    return float(np.polyfit(np.log(x), np.log(err), 1)[0])


@dataclass
class ConvergenceReport:
    scheme: str
    dim: int
    variable: str  # "k" or "h"
    rows: list[StudyRow] = field(default_factory=list)

    @property
    def steps(self) -> np.ndarray:
        return np.array([getattr(r, self.variable) for r in self.rows])

    def errors(self, norm: str) -> np.ndarray:
        return np.array([getattr(r.norms, norm) for r in self.rows])

    @property
    def orders(self) -> NormTriple:
        if len(self.rows) < 3:
            raise ValueError("an order fit needs at least 3 levels")
        return NormTriple(*(fit_order(self.steps, self.errors(n)) for n in NormTriple._fields))

    def drop_coarsest(self) -> ConvergenceReport:
        coarse = int(np.argmax(self.steps))
        rows = [r for i, r in enumerate(self.rows) if i != coarse]
        return ConvergenceReport(self.scheme, self.dim, self.variable, rows)


CSV_COLUMNS = ("scheme", "dim", "k", "h", "err_inf", "err_l2", "err_h1", "seconds",
               "gmres_iters_total")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


def write_csv(rows: Iterable[StudyRow], path, seconds: bool = True) -> None:
    """Write study rows; ``seconds=False`` drops the wall-time column so the file is deterministic."""
    cols = [c for c in CSV_COLUMNS if seconds or c != "seconds"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            vals = {"scheme": r.scheme, "dim": r.dim, "k": float(r.k), "h": float(r.h),
                    "err_inf": float(r.norms.linf), "err_l2": float(r.norms.l2),
                    "err_h1": float(r.norms.h1), "seconds": float(r.seconds),
                    "gmres_iters_total": int(r.gmres_iters)}
            w.writerow([_fmt(vals[c]) for c in cols])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- studies ------------------------------------------------------------------


def temporal_study(scheme, case: ManufacturedCase, schedule: Sequence[int] | None = None,
                   n_cells: int | None = None, **run_kw) -> ConvergenceReport:
    """Error at ``T`` for ``k = T/N0`` over the schedule.

    In 1D the grid is fixed (``n_cells``, default 10000).  In 3D each level
    uses the coordinated grid from :func:`cells_for_3d` unless ``n_cells`` is given.
    """
    scheme = Scheme.parse(scheme)
    if schedule is None:
        schedule = (TIME_SCHEDULE_1D if case.dim == 1 else TIME_SCHEDULE_3D)[scheme]
    if len(schedule) < 1:
        raise ValueError("empty schedule")
    report = ConvergenceReport(scheme.name, case.dim, "k")
    for n0 in schedule:
        if case.dim == 1:
            n = n_cells or FINE_1D_CELLS
        else:
            n = n_cells or cells_for_3d(scheme, n0, case.T)
        grid = grid_for(case, n)
        res = run_manufactured(scheme, case, grid, n0, **run_kw)
        report.rows.append(StudyRow(scheme.name, case.dim, case.T / n0, grid.hx, res.norms,
                                    res.seconds, res.gmres_iters))
    return report


def spatial_study(scheme, case: ManufacturedCase, cells: Sequence[int] = SPACE_SCHEDULE_1D,
                  k: float = SPATIAL_K, **run_kw) -> ConvergenceReport:
    """Error at ``T`` on grids with ``cells`` per axis and a fixed small ``k``."""
    scheme = Scheme.parse(scheme)
    nsteps = int(round(case.T / k))
    report = ConvergenceReport(scheme.name, case.dim, "h")
    for n in cells:
        grid = grid_for(case, n)
        res = run_manufactured(scheme, case, grid, nsteps, **run_kw)
        report.rows.append(StudyRow(scheme.name, case.dim, case.T / nsteps, grid.hx,
                                    res.norms, res.seconds, res.gmres_iters))
    return report


EFFICIENCY_SWEEP_K = {
    Scheme.BDF1: (8, 16, 32, 64, 128, 256),
    Scheme.BDF2: (8, 16, 32, 64, 128),
    Scheme.BDF3: (4, 6, 8, 12, 16, 24, 32),
}


def efficiency_study(schemes=(Scheme.BDF1, Scheme.BDF2, Scheme.BDF3),
                     case: ManufacturedCase = ManufacturedCase(1), sweep: str = "k",
                     levels: dict | None = None, n_cells: int = FINE_1D_CELLS,
                     k: float = SPATIAL_K, repeats: int = 3, **run_kw) -> list[StudyRow]:
    """Wall time versus error.

    ``sweep="k"`` varies the step at fixed ``n_cells``; ``sweep="h"`` varies
    the grid at fixed ``k``.  Each cell reports the median time of ``repeats``.
    """
    if sweep not in ("k", "h"):
        raise ValueError("sweep must be 'k' or 'h'")
    rows = []
    for scheme in schemes:
        scheme = Scheme.parse(scheme)
        if sweep == "k":
            lv = (levels or EFFICIENCY_SWEEP_K)[scheme]
        else:
            lv = (levels or {s: SPACE_SCHEDULE_1D for s in Scheme})[scheme]
        for level in lv:
            if sweep == "k":
                grid, nsteps = grid_for(case, n_cells), int(level)
            else:
                grid, nsteps = grid_for(case, int(level)), int(round(case.T / k))
            runs = [run_manufactured(scheme, case, grid, nsteps, **run_kw)
                    for _ in range(max(1, repeats))]
            res = runs[0]
            secs = statistics.median(r.seconds for r in runs)
            rows.append(StudyRow(scheme.name, case.dim, case.T / nsteps, grid.hx, res.norms,
                                 secs, res.gmres_iters))
    return rows


def time_at_error(rows: Sequence[StudyRow], scheme: str, target: float,
                  norm: str = "linf") -> float:
    """Wall time a scheme needs for ``target`` error, from a log-log fit of its rows."""
    sel = [r for r in rows if r.scheme == scheme]
    if len(sel) < 2:
        raise ValueError(f"need at least two rows for {scheme}")
    e = np.log([getattr(r.norms, norm) for r in sel])
    s = np.log([r.seconds for r in sel])
    slope, icpt = np.polyfit(e, s, 1)
    return float(np.exp(icpt + slope * np.log(target)))


def matched_error_targets(rows: Sequence[StudyRow], reference: str = "BDF2", n: int = 3,
                          norm: str = "linf") -> np.ndarray:
    """Error levels spaced geometrically inside the ``reference`` scheme's measured range.

    The schemes' ranges rarely overlap (the third-order scheme reaches far
    smaller errors for the same steps), so other schemes are compared through
    their fitted time-error lines, see :func:`time_at_error`.
    """
    e = [getattr(r.norms, norm) for r in rows if r.scheme == reference]
    if len(e) < 2:
        raise ValueError(f"need at least two rows for {reference}")
    return np.geomspace(min(e), max(e), n + 2)[1:-1]


def efficiency_ordering(rows: Sequence[StudyRow], schemes: Sequence[str] = ("BDF3", "BDF2", "BDF1"),
                        reference: str = "BDF2", n: int = 3, norm: str = "linf"):
    """Fitted wall time of each scheme at matched error targets.

    Returns ``(targets, times)`` with ``times[i, j]`` the time of ``schemes[j]``
    at ``targets[i]``.
    """
    targets = matched_error_targets(rows, reference, n, norm)
    times = np.array([[time_at_error(rows, s, t, norm) for s in schemes] for t in targets])
    return targets, times
