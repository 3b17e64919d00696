"""Device-scale runs: thin-film stability and energy decay, Neel-wall motion.

Physical inputs (nm, ps, mT) are converted once into the dimensionless
model.  The length unit ``L`` is the largest extent of the sample, so the
grid spacing, ``eps`` and the wall width are all measured in units of ``L``.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .demag import DemagOperator, build_operator
from .grid import GridSpec, VectorField
from .krylov import KrylovConfig
from .physics import MaterialParams, energy_density_sum
from .stepper import ProjectionSingularity, Problem, Scheme, Stepper, StepRejected

NM = 1e-9


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class FilmConfig:
    extents_nm: tuple[float, float, float] = (480.0, 480.0, 20.0)
    cells: tuple[int, int, int] = (100, 100, 4)
    k_ps: float = 1.0
    alphas: tuple[float, ...] = (0.0, 0.01, 0.1, 1.0, 5.0, 10.0, 40.0, 100.0)
    he_mT: tuple[float, float, float] = (0.0, 0.0, 0.0)
    t_end_ns: float = 2.0
    sample_every: int = 1
    demag: bool = True
    n_sub: int = 100
    energy_blowup: float = 10.0

    def __post_init__(self):
        _check_geometry(self.extents_nm, self.cells)
        if self.k_ps <= 0 or self.t_end_ns <= 0 or self.sample_every < 1:
            raise ValueError("time step, end time and sampling interval must be positive")

    @classmethod
    def downscaled(cls, **kw) -> FilmConfig:
        base = dict(extents_nm=(240.0, 240.0, 20.0), cells=(50, 50, 2), t_end_ns=0.5)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class StripConfig:
    extents_nm: tuple[float, float, float] = (800.0, 100.0, 4.0)
    cells: tuple[int, int, int] = (128, 64, 4)
    fields_mT: tuple[float, ...] = (5.0, 6.0, 7.0, 8.0, 9.0)
    alphas: tuple[float, ...] = (0.1, 0.4, 0.8, 1.0, 2.0, 3.0, 5.0)
    k_ps: float = 1.0
    t_end_ns: float = 1.6
    relax_ns: float = 0.1
    relax_alpha: float = 1.0
    wall_width_nm: float | None = None
    sample_ps: float = 10.0
    edge_margin_nm: float = 200.0
    window: tuple[float, float] = (0.5, 1.0)
    demag: bool = True
    n_sub: int = 100

    def __post_init__(self):
        _check_geometry(self.extents_nm, self.cells)
        if self.k_ps <= 0 or self.t_end_ns <= 0 or self.sample_ps <= 0:
            raise ValueError("time step, end time and sampling interval must be positive")
        if not 0.0 <= self.window[0] < self.window[1] <= 1.0:
            raise ValueError("velocity window must satisfy 0 <= start < end <= 1")

    @classmethod
    def reduced(cls, **kw) -> StripConfig:
        base = dict(cells=(64, 32, 2))
        base.update(kw)
        return cls(**base)


def _check_geometry(extents, cells):
    if len(extents) != 3 or len(cells) != 3:
        raise ValueError("extents and cells need three entries")
    if min(extents) <= 0:
        raise ValueError(f"extents must be positive, got {extents}")
    if min(cells) < 1 or any(int(c) != c for c in cells):
        raise ValueError(f"cell counts must be positive integers, got {cells}")


@dataclass
class Device:
    """Grid, material and demag operator of a rectangular sample."""

    grid: GridSpec
    params: MaterialParams
    extents_nm: tuple[float, float, float]
    demag: DemagOperator | None

    @classmethod
    def build(cls, extents_nm, cells, alpha: float = 0.1, demag: bool = True) -> Device:
        L = max(extents_nm) * NM
        grid = GridSpec.box(cells, [e * NM for e in extents_nm], L)
        params = MaterialParams.from_physical(L=L, alpha=alpha)
        cell_nm = tuple(e / n for e, n in zip(extents_nm, cells))
        op = build_operator(grid, cell_nm) if demag else None
        return cls(grid, params, tuple(extents_nm), op)

    @property
    def nm_per_unit(self) -> float:
        return self.params.L / NM

    def problem(self, alpha: float, he_mT=(0.0, 0.0, 0.0)) -> Problem:
        p = self.params.with_alpha(alpha)
        return Problem(self.grid, p, p.field_from_mT(np.asarray(he_mT, dtype=float)), self.demag)

    def energy(self, problem: Problem, m: np.ndarray, f: np.ndarray | None = None) -> float:
        """Dimensionless free energy; reuses the source ``f`` to avoid another demag pass."""
        if f is None:
            hs = problem.stray(m)
        else:
            # f = -q (m2 e2 + m3 e3) + hs + he
            hs = f - problem.he.reshape(3, 1, 1, 1) if problem.he.ndim == 1 else f - problem.he
            hs = hs.copy()
            hs[1] += problem.params.q * m[1]
            hs[2] += problem.params.q * m[2]
        return energy_density_sum(VectorField.from_interior(self.grid, m), hs, problem.he,
                                  problem.params)


def uniform_state(grid: GridSpec, direction=(1.0, 0.0, 0.0)) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return d.reshape(3, 1, 1, 1) * np.ones((1,) + grid.shape)


def unit_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.sqrt(np.sum(m * m, axis=0)) - 1.0)))


# -- film stability and energy ---------------------------------------------


@dataclass
class StabilityResult:
    scheme: str
    alpha: float
    k_ps: float
    stable: bool
    steps: int
    final_energy: float
    reason: str = ""
    t_ns: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    angle_map: np.ndarray | None = field(default=None, repr=False)
    max_unit_defect: float = 0.0


def stability_run(cfg: FilmConfig, scheme, alpha: float, device: Device | None = None,
                  krylov: KrylovConfig | None = None, preconditioner: str | None = "frame",
                  initial: np.ndarray | None = None) -> StabilityResult:
    """Relax a film from a uniform state and classify the run as stable or not.

    A run is unstable if a step is rejected, the field stops being finite, or
    the energy exceeds ``cfg.energy_blowup`` times its initial magnitude.
    """
    scheme = Scheme.parse(scheme)
    device = device or Device.build(cfg.extents_nm, cfg.cells, alpha, cfg.demag)
    problem = device.problem(alpha, cfg.he_mT)
    k = device.params.time_from_ps(cfg.k_ps)
    nsteps = int(round(cfg.t_end_ns * 1e3 / cfg.k_ps))
    stepper = Stepper(problem, scheme, k, krylov or KrylovConfig(), preconditioner)
    m0 = uniform_state(device.grid) if initial is None else initial
    to_ns = device.params.time_to_ns
    times, energies = [], []
    defect = 0.0
    reason = ""
    state = None
    try:
        state = stepper.bootstrap(m0, mode="substep", n_sub=cfg.n_sub)
        e0 = device.energy(problem, m0)
        for j, (m, f) in enumerate(zip(state.history_m, state.history_f)):
            times.append(to_ns(j * k))
            energies.append(e0 if j == 0 else device.energy(problem, m, f))
        limit = cfg.energy_blowup * abs(e0) if e0 != 0.0 else 1e-8
        while state.t_index < nsteps:
            state = stepper.step(state)
            defect = max(defect, unit_defect(state.m))
            if state.t_index % cfg.sample_every == 0 or state.t_index == nsteps:
                e = device.energy(problem, state.m, state.history_f[-1])
                times.append(to_ns(state.t))
                energies.append(e)
                if not np.isfinite(e):
                    reason = "non-finite energy"
                    break
                if e > limit:
                    reason = "energy blow-up"
                    break
    except (StepRejected, ProjectionSingularity, FloatingPointError) as exc:
        reason = f"{type(exc).__name__}: {exc}"
    steps = 0 if state is None else state.t_index
    stable = not reason and state is not None and bool(np.all(np.isfinite(state.m)))
    angle = None if state is None else np.arctan2(state.m[1], state.m[0])
    return StabilityResult(scheme.name, alpha, cfg.k_ps, stable, steps,
                           energies[-1] if energies else float("nan"), reason,
                           np.array(times), np.array(energies), angle, defect)


def stability_sweep(cfg: FilmConfig, schemes=(Scheme.BDF1, Scheme.BDF2, Scheme.BDF3),
                    alphas: Sequence[float] | None = None, **kw) -> list[StabilityResult]:
    device = Device.build(cfg.extents_nm, cfg.cells, 0.1, cfg.demag)
    out = []
    for scheme in schemes:
        for a in (cfg.alphas if alphas is None else alphas):
            out.append(stability_run(cfg, scheme, a, device=device, **kw))
    return out


def energy_trace(run: StabilityResult) -> tuple[np.ndarray, np.ndarray]:
    """``(t_ns, F)`` samples of a film run."""
    return run.t_ns, run.energy


def dissipation_time(t: np.ndarray, energy: np.ndarray, fraction: float = 0.9) -> float:
    """First time at which ``fraction`` of the initial excess energy is gone.

    The excess is measured against the last sample, taken as the steady state.
    Crossings between samples are interpolated linearly.
    """
    t, energy = np.asarray(t, dtype=float), np.asarray(energy, dtype=float)
    excess = energy - energy[-1]
    if excess[0] <= 0:
        return 0.0
    target = (1.0 - fraction) * excess[0]
    idx = np.nonzero(excess <= target)[0]
    i = int(idx[0])
    if i == 0:
        return float(t[0])
    e0, e1 = excess[i - 1], excess[i]
    return float(t[i - 1] + (t[i] - t[i - 1]) * (e0 - target) / (e0 - e1))


def angle_histogram(angle: np.ndarray, bins: int = 36) -> np.ndarray:
    hist, _ = np.histogram(np.mod(angle, 2 * np.pi), bins=bins, range=(0.0, 2 * np.pi))
    return hist / max(hist.sum(), 1)


# -- Neel wall --------------------------------------------------------------


def default_wall_width(device: Device) -> float:
    """Wall width (dimensionless) from exchange against anisotropy plus shape anisotropy.

    The in-plane rotation through the strip width costs the transverse
    demagnetizing factor, approximated by ``t / (t + w)`` for a flat strip.
    """
    _, w, t = device.extents_nm
    q_eff = device.params.q + (t / (t + w) if device.demag is not None else 0.0)
    return float(np.sqrt(device.params.epsilon / q_eff))


def init_neel_wall(grid: GridSpec, width: float, center: float | None = None) -> np.ndarray:
    """In-plane 180 degree wall along x: ``m1 = -tanh(s)``, ``m2 = sech(s)``.

    ``width`` and ``center`` are dimensionless; the center defaults to mid-strip.
    """
    if width <= 0:
        raise ValueError("wall width must be positive")
    x = grid.centers(0)
    c = grid.extents[0] / 2 if center is None else center
    s = (x - c) / width
    m = np.zeros((3,) + grid.shape)
    m[0] = -np.tanh(s)[:, None, None]
    m[1] = (1.0 / np.cosh(s))[:, None, None]
    return m / np.sqrt(np.sum(m * m, axis=0))


class WallLost(ValueError):
    pass


def _mid(n: int) -> slice:
    return slice(n // 2 - 1, n // 2 + 1) if n % 2 == 0 and n > 1 else slice(n // 2, n // 2 + 1)


def wall_profile(m: np.ndarray, average: str = "centerline") -> np.ndarray:
    if average == "width":
        return m[0].mean(axis=(1, 2))
    if average == "centerline":
        ny, nz = m.shape[2], m.shape[3]
        return m[0][:, _mid(ny), _mid(nz)].mean(axis=(1, 2))
    raise ValueError("average must be 'centerline' or 'width'")


def wall_position(m: np.ndarray, grid: GridSpec, nm_per_unit: float, average: str = "centerline",
                  near: float | None = None) -> float:
    """Zero crossing of ``m1`` along the strip, in nm from the left end.

    Raises :class:`WallLost` if ``m1`` has no sign change.  With several
    crossings, the one closest to ``near`` (nm, default mid-strip) is returned.
    """
    prof = wall_profile(np.asarray(m), average)
    x = grid.centers(0) * nm_per_unit
    idx = np.nonzero(np.signbit(prof[:-1]) != np.signbit(prof[1:]))[0]
    if idx.size == 0:
        raise WallLost("wall lost: m1 has no zero crossing along the strip")
    a, b = prof[idx], prof[idx + 1]
    xs = x[idx] + (x[idx + 1] - x[idx]) * a / (a - b)
    ref = grid.extents[0] * nm_per_unit / 2 if near is None else near
    return float(xs[np.argmin(np.abs(xs - ref))])


@dataclass
class WallTrace:
    alpha: float = 0.0
    he_mT: float = 0.0
    t_ns: list[float] = field(default_factory=list)
    x_nm: list[float] = field(default_factory=list)
    stopped: str = ""

    def add(self, t_ns: float, x_nm: float) -> None:
        if self.t_ns and t_ns <= self.t_ns[-1]:
            raise ValueError("wall samples must be time-ordered")
        self.t_ns.append(float(t_ns))
        self.x_nm.append(float(x_nm))


@dataclass(frozen=True)
class Velocity:
    value: float  # m/s
    r2: float
    samples: int
    steady: bool

    @property
    def flag(self) -> str:
        return "" if self.steady else "non-steady motion"


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares line; returns ``(slope, intercept, r2)``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def wall_velocity(trace: WallTrace, window: tuple[float, float] = (0.5, 1.0),
                  min_samples: int = 10) -> Velocity:
    """Slope of ``x_w(t)`` over a fraction of the traced interval, in m/s (nm/ns)."""
    t, x = np.asarray(trace.t_ns), np.asarray(trace.x_nm)
    if t.size == 0:
        raise ValueError("empty wall trace")
    t0, t1 = t[0] + window[0] * (t[-1] - t[0]), t[0] + window[1] * (t[-1] - t[0])
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if int(sel.sum()) < min_samples:
        raise ValueError(f"velocity window holds {int(sel.sum())} samples, need {min_samples}")
    slope, _, r2 = linear_fit(t[sel], x[sel])
    return Velocity(slope, r2, int(sel.sum()), r2 >= 0.9)


def relax_wall(cfg: StripConfig, scheme, device: Device, krylov: KrylovConfig | None = None,
               preconditioner: str | None = "frame") -> np.ndarray:
    """Initial wall relaxed at zero field for ``cfg.relax_ns``."""
    width = (cfg.wall_width_nm / device.nm_per_unit if cfg.wall_width_nm
             else default_wall_width(device))
    m = init_neel_wall(device.grid, width)
    if cfg.relax_ns <= 0:
        return m
    problem = device.problem(cfg.relax_alpha)
    stepper = Stepper(problem, scheme, device.params.time_from_ps(cfg.k_ps),
                      krylov or KrylovConfig(), preconditioner)
    state = stepper.bootstrap(m, mode="substep", n_sub=cfg.n_sub)
    nsteps = int(round(cfg.relax_ns * 1e3 / cfg.k_ps))
    return stepper.run(state, max(nsteps - state.t_index, 0)).m


def domain_wall_run(cfg: StripConfig, scheme, alpha: float, he_mT: float, device: Device,
                    initial: np.ndarray, krylov: KrylovConfig | None = None,
                    preconditioner: str | None = "frame", average: str = "centerline") -> WallTrace:
    """Drive the wall with a field along +x and record its position.

    Tracking stops early when the wall comes within ``cfg.edge_margin_nm`` of
    either end of the strip.
    """
    scheme = Scheme.parse(scheme)
    problem = device.problem(alpha, (he_mT, 0.0, 0.0))
    k = device.params.time_from_ps(cfg.k_ps)
    stepper = Stepper(problem, scheme, k, krylov or KrylovConfig(), preconditioner)
    nsteps = int(round(cfg.t_end_ns * 1e3 / cfg.k_ps))
    every = max(1, int(round(cfg.sample_ps / cfg.k_ps)))
    nm = device.nm_per_unit
    lx = device.extents_nm[0]
    trace = WallTrace(alpha, he_mT)
    x = wall_position(initial, device.grid, nm, average)
    trace.add(0.0, x)
    state = stepper.bootstrap(initial, mode="substep", n_sub=cfg.n_sub)
    while state.t_index < nsteps:
        state = stepper.step(state)
        if state.t_index % every == 0 or state.t_index == nsteps:
            x = wall_position(state.m, device.grid, nm, average, near=x)
            trace.add(device.params.time_to_ns(state.t), x)
            if min(x, lx - x) < cfg.edge_margin_nm:
                trace.stopped = "wall reached strip end"
                break
    return trace


@dataclass
class SweepResult:
    alphas: tuple[float, ...]
    fields_mT: tuple[float, ...]
    velocity: np.ndarray  # (alpha, field), m/s
    r2_wall: np.ndarray
    traces: list[WallTrace] = field(default_factory=list, repr=False)

    def field_fit(self, i: int) -> tuple[float, float, float]:
        """Linear fit of V against field for ``alphas[i]``: ``(slope m/s/mT, intercept, r2)``."""
        return linear_fit(self.fields_mT, self.velocity[i])

    def alpha_fit(self, j: int) -> np.ndarray:
        """Quadratic coefficients (highest first) of V against alpha at ``fields_mT[j]``."""
        return np.polyfit(self.alphas, self.velocity[:, j], 2)


def field_sweep(cfg: StripConfig, scheme=Scheme.BDF3, alphas: Sequence[float] | None = None,
                fields_mT: Sequence[float] | None = None, device: Device | None = None,
                initial: np.ndarray | None = None, progress=None, **kw) -> SweepResult:
    alphas = tuple(cfg.alphas if alphas is None else alphas)
    fields = tuple(cfg.fields_mT if fields_mT is None else fields_mT)
    device = device or Device.build(cfg.extents_nm, cfg.cells, alphas[0], cfg.demag)
    if initial is None:
        initial = relax_wall(cfg, scheme, device)
    v = np.zeros((len(alphas), len(fields)))
    r2 = np.zeros_like(v)
    traces = []
    for i, a in enumerate(alphas):
        for j, b in enumerate(fields):
            tr = domain_wall_run(cfg, scheme, a, b, device, initial, **kw)
            vel = wall_velocity(tr, cfg.window)
            v[i, j], r2[i, j] = vel.value, vel.r2
            traces.append(tr)
            if progress is not None:
                progress(a, b, vel, tr)
    return SweepResult(alphas, fields, v, r2, traces)


# -- output formats -----------------------------------------------------------

SNAPSHOT_MAGIC = b"LLGSNAP1"
_SNAP_HEADER = struct.Struct("<8s3q3d")


def write_snapshot(path, m: np.ndarray, cell_nm) -> None:
    """Binary dump: magic, dims (3 x int64), cell sizes in nm (3 x float64),
    then the three components as little-endian float64, each in C order over (x, y, z)."""
    m = np.ascontiguousarray(m, dtype="<f8")
    if m.ndim != 4 or m.shape[0] != 3:
        raise ValueError("snapshot expects an array of shape (3, nx, ny, nz)")
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, *m.shape[1:], *map(float, cell_nm)))
        fh.write(m.tobytes())


def read_snapshot(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    with open(path, "rb") as fh:
        head = fh.read(_SNAP_HEADER.size)
        if len(head) != _SNAP_HEADER.size:
            raise ValueError("truncated snapshot header")
        magic, nx, ny, nz, cx, cy, cz = _SNAP_HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError("not a snapshot file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 3 * nx * ny * nz:
        raise ValueError("snapshot payload size does not match its header")
    return data.reshape(3, nx, ny, nz).copy(), (cx, cy, cz)


def write_vtk(path, m: np.ndarray, cell_nm, title: str = "magnetization") -> None:
    """Legacy ASCII VTK structured-points file with a point vector ``m`` at cell centers."""
    _, nx, ny, nz = m.shape
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx} {ny} {nz}",
             "ORIGIN {} {} {}".format(*(0.5 * c for c in cell_nm)),
             "SPACING {} {} {}".format(*cell_nm),
             f"POINT_DATA {nx * ny * nz}", "VECTORS m double"]
    # VTK runs x fastest
    vec = np.transpose(m, (3, 2, 1, 0)).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        np.savetxt(fh, vec, fmt="%.17g")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_stability_csv(path, results: Sequence[StabilityResult]) -> None:
    write_rows(path, ("scheme", "alpha", "k_ps", "stable", "steps", "final_energy", "reason"),
               [(r.scheme, float(r.alpha), float(r.k_ps), r.stable, r.steps,
                 float(r.final_energy), r.reason) for r in results])


def write_energy_csv(path, run: StabilityResult) -> None:
    write_rows(path, ("t_ns", "F_dimensionless"), zip(map(float, run.t_ns), map(float, run.energy)))


def write_wall_csv(path, trace: WallTrace) -> None:
    write_rows(path, ("t_ns", "x_w_nm"), zip(trace.t_ns, trace.x_nm))


def write_velocity_csv(path, sweep: SweepResult) -> None:
    """Velocity table: one row per damping value, one column per field, then the fitted slope."""
    header = ["alpha"] + [f"V_{b:g}mT" for b in sweep.fields_mT] + ["slope_mps_per_mT", "r2"]
    rows = []
    for i, a in enumerate(sweep.alphas):
        slope, _, r2 = sweep.field_fit(i) if len(sweep.fields_mT) > 1 else (float("nan"),) * 3
        rows.append([float(a)] + [float(v) for v in sweep.velocity[i]] + [slope, r2])
    write_rows(path, header, rows)
