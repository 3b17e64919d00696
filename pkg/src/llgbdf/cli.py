"""Command-line front end.

Every subcommand reads an optional YAML file of flat dotted keys, applies
``--set key=value`` overrides and a few shortcut flags, validates the result
into a :class:`RunConfig`, runs, and writes CSV files plus ``metadata.json``
into the output directory.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
The thread count can be overridden with the ``LLGBDF_THREADS`` variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

log = logging.getLogger("llgbdf")

THREADS_ENV = "LLGBDF_THREADS"
COMMANDS = ("converge-time", "converge-space", "efficiency", "stability", "energy",
            "domain-wall", "demag-check")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# -- schema -------------------------------------------------------------------
# Each key maps to (kind, default).  Kinds: "float", "int", "str", "bool",
# "floats", "ints" (lists), "float3" (three floats), "int3" (three ints).

_COMMON = {
    "scheme": ("str", "bdf3"),
    "output_dir": ("str", "out"),
    "seed": ("int", 0),
    "threads": ("int", 1),
    "preconditioner": ("str", "frame"),
}
_KRYLOV_TIGHT = {
    "krylov.rel_tol": ("float", 1e-12),
    "krylov.abs_tol": ("float", 1e-15),
    "krylov.restart": ("int", 40),
    "krylov.max_iters": ("int", 2000),
}
_KRYLOV_DEVICE = {
    "krylov.rel_tol": ("float", 1e-9),
    "krylov.abs_tol": ("float", 1e-13),
    "krylov.restart": ("int", 40),
    "krylov.max_iters": ("int", 2000),
}
_CASE = {
    "case.dim": ("int", 1),
    "case.alpha": ("float", 0.01),
    "case.t_final": ("float", 0.1),
    "case.bootstrap": ("str", "exact"),
}
_FILM = {
    "film.preset": ("str", "downscaled"),
    "film.extents_nm": ("float3", None),
    "film.cells": ("int3", None),
    "film.k_ps": ("float", None),
    "film.alphas": ("floats", None),
    "film.he_mT": ("float3", None),
    "film.t_end_ns": ("float", None),
    "film.sample_every": ("int", None),
    "film.demag": ("bool", None),
    "film.n_sub": ("int", None),
    "film.energy_blowup": ("float", None),
}
_STRIP = {
    "strip.preset": ("str", "full"),
    "strip.extents_nm": ("float3", None),
    "strip.cells": ("int3", None),
    "strip.fields_mT": ("floats", None),
    "strip.alphas": ("floats", None),
    "strip.k_ps": ("float", None),
    "strip.t_end_ns": ("float", None),
    "strip.relax_ns": ("float", None),
    "strip.relax_alpha": ("float", None),
    "strip.wall_width_nm": ("float", None),
    "strip.sample_ps": ("float", None),
    "strip.edge_margin_nm": ("float", None),
    "strip.window": ("floats", None),
    "strip.demag": ("bool", None),
    "strip.n_sub": ("int", None),
}

SCHEMA = {
    "converge-time": {**_COMMON, **_KRYLOV_TIGHT, **_CASE,
                      "case.schedule": ("ints", []), "case.cells": ("int", 0)},
    "converge-space": {**_COMMON, **_KRYLOV_TIGHT, **_CASE,
                       "case.cells_list": ("ints", [16, 32, 64, 128, 256]),
                       "case.k": ("float", 1e-5)},
    "efficiency": {**_COMMON, **_KRYLOV_TIGHT, **_CASE, "scheme": ("str", "all"),
                   "efficiency.sweep": ("str", "k"), "efficiency.repeats": ("int", 3),
                   "efficiency.cells": ("int", 10000), "efficiency.k": ("float", 1e-5),
                   "efficiency.targets": ("int", 3)},
    "stability": {**_COMMON, **_KRYLOV_DEVICE, **_FILM, "scheme": ("str", "all")},
    "energy": {**_COMMON, **_KRYLOV_DEVICE, **_FILM, "scheme": ("str", "all"),
               "energy.fraction": ("float", 0.9), "energy.vtk": ("bool", False)},
    "domain-wall": {**_COMMON, **_KRYLOV_DEVICE, **_STRIP,
                    "wall.average": ("str", "centerline"), "wall.traces": ("bool", True)},
    "demag-check": {**_COMMON, "demag.grid": ("int", 16), "demag.kernel": ("str", "newell"),
                    "demag.direct_max": ("int", 8)},
}


def _coerce(key: str, kind: str, value):
    def bad(why=""):
        return ConfigError(f"{key}: expected {kind}, got {value!r}{why}")

    if value is None:
        return None
    try:
        if kind == "float":
            if isinstance(value, bool):
                raise bad()
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise bad()
            return int(value)
        if kind == "str":
            if not isinstance(value, str):
                raise bad()
            return value
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            raise bad()
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        if not isinstance(value, (list, tuple)):
            raise bad()
        elem = "float" if kind in ("floats", "float3") else "int"
        out = [_coerce(key, elem, v) for v in value]
        if kind.endswith("3") and len(out) != 3:
            raise bad(" (need three entries)")
        return out
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise bad() from None


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one CLI invocation; ``values`` holds every schema key."""

    command: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def section(self, prefix: str) -> dict:
        """Keys under ``prefix.`` with the prefix stripped, skipping unset ones."""
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items()
                if k.startswith(prefix + ".") and v is not None}

    def echo(self) -> dict:
        return {"command": self.command, **self.values}

    @classmethod
    def from_echo(cls, data: dict) -> RunConfig:
        data = dict(data)
        command = data.pop("command", None)
        return validate(command, data)


def validate(command: str, raw: dict) -> RunConfig:
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMA[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    values = {k: _coerce(k, kind, raw.get(k, default)) for k, (kind, default) in schema.items()}
    _schemes(values["scheme"])
    if values["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if values["preconditioner"] not in ("frame", "diagonal", "none"):
        raise ConfigError("preconditioner must be frame, diagonal or none")
    if "case.dim" in values and values["case.dim"] not in (1, 3):
        raise ConfigError("case.dim must be 1 or 3")
    if "case.bootstrap" in values and values["case.bootstrap"] not in ("exact", "substep"):
        raise ConfigError("case.bootstrap must be exact or substep")
    if values.get("efficiency.sweep", "k") not in ("k", "h"):
        raise ConfigError("efficiency.sweep must be k or h")
    if values.get("film.preset", "full") not in ("full", "downscaled"):
        raise ConfigError("film.preset must be full or downscaled")
    if values.get("strip.preset", "full") not in ("full", "reduced"):
        raise ConfigError("strip.preset must be full or reduced")
    if values.get("wall.average", "width") not in ("width", "centerline"):
        raise ConfigError("wall.average must be width or centerline")
    if values.get("demag.grid", 2) < 2:
        raise ConfigError("demag.grid must be at least 2")
    cfg = RunConfig(command, values)
    # the experiment dataclasses do their own range checks; their resolved
    # values are written back so the echo is complete
    try:
        if command in ("stability", "energy"):
            _fill(values, "film", film_config(cfg))
        elif command == "domain-wall":
            _fill(values, "strip", strip_config(cfg))
        elif "case.dim" in values:
            from .verify import ManufacturedCase
            ManufacturedCase(values["case.dim"], values["case.alpha"], values["case.t_final"]).params
            from .krylov import KrylovConfig
            KrylovConfig(**cfg.section("krylov"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _fill(values: dict, prefix: str, obj) -> None:
    for name, v in dataclasses.asdict(obj).items():
        values[f"{prefix}.{name}"] = list(v) if isinstance(v, tuple) else v


def _schemes(spec: str):
    from .stepper import Scheme

    if spec.lower() == "all":
        return [Scheme.BDF1, Scheme.BDF2, Scheme.BDF3]
    try:
        return [Scheme.parse(s.strip()) for s in spec.split(",") if s.strip()]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown scheme in {spec!r}; use bdf1, bdf2, bdf3 or all") from None


def film_config(cfg: RunConfig):
    from .experiments import FilmConfig

    kw = cfg.section("film")
    preset = kw.pop("preset")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()}
    return FilmConfig.downscaled(**kw) if preset == "downscaled" else FilmConfig(**kw)


def strip_config(cfg: RunConfig):
    from .experiments import StripConfig

    kw = cfg.section("strip")
    preset = kw.pop("preset")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()}
    return StripConfig.reduced(**kw) if preset == "reduced" else StripConfig(**kw)


def krylov_config(cfg: RunConfig):
    from .krylov import KrylovConfig

    return KrylovConfig(**cfg.section("krylov"))


def _precond(cfg: RunConfig):
    p = cfg["preconditioner"]
    return None if p == "none" else p


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: expected a flat mapping of dotted keys")
    return data


# -- commands -----------------------------------------------------------------


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg["output_dir"]) / name


def _case(cfg: RunConfig):
    from .verify import ManufacturedCase

    return ManufacturedCase(cfg["case.dim"], cfg["case.alpha"], cfg["case.t_final"])


def _write_orders(path, reports):
    from .experiments import write_rows

    rows = []
    for rep in reports:
        o = rep.orders
        rows.append((rep.scheme, rep.dim, rep.variable, o.linf, o.l2, o.h1))
    write_rows(path, ("scheme", "dim", "variable", "order_inf", "order_l2", "order_h1"), rows)


def _write_timings(path, rows):
    from .experiments import write_rows

    write_rows(path, ("scheme", "k", "h", "seconds"),
               [(r.scheme, float(r.k), float(r.h), float(r.seconds)) for r in rows])


def cmd_converge_time(cfg: RunConfig) -> dict:
    from .verify import temporal_study, write_csv

    case = _case(cfg)
    reports = []
    for s in _schemes(cfg["scheme"]):
        rep = temporal_study(s, case, cfg["case.schedule"] or None, cfg["case.cells"] or None,
                             bootstrap=cfg["case.bootstrap"], krylov=krylov_config(cfg),
                             preconditioner=_precond(cfg))
        log.info("%s orders %s", s.name, tuple(round(v, 3) for v in rep.orders))
        reports.append(rep)
    rows = [r for rep in reports for r in rep.rows]
    write_csv(rows, _out(cfg, "convergence.csv"), seconds=False)
    _write_timings(_out(cfg, "timings.csv"), rows)
    _write_orders(_out(cfg, "orders.csv"), reports)
    return {"orders": {rep.scheme: list(rep.orders) for rep in reports}}


def cmd_converge_space(cfg: RunConfig) -> dict:
    from .verify import spatial_study, write_csv

    case = _case(cfg)
    reports = []
    for s in _schemes(cfg["scheme"]):
        rep = spatial_study(s, case, cfg["case.cells_list"], cfg["case.k"],
                            bootstrap=cfg["case.bootstrap"], krylov=krylov_config(cfg),
                            preconditioner=_precond(cfg))
        log.info("%s orders %s", s.name, tuple(round(v, 3) for v in rep.orders))
        reports.append(rep)
    rows = [r for rep in reports for r in rep.rows]
    write_csv(rows, _out(cfg, "convergence.csv"), seconds=False)
    _write_timings(_out(cfg, "timings.csv"), rows)
    _write_orders(_out(cfg, "orders.csv"), reports)
    return {"orders": {rep.scheme: list(rep.orders) for rep in reports}}


def cmd_efficiency(cfg: RunConfig) -> dict:
    from .experiments import write_rows
    from .verify import efficiency_ordering, efficiency_study, write_csv

    schemes = _schemes(cfg["scheme"])
    rows = efficiency_study(schemes, _case(cfg), cfg["efficiency.sweep"],
                            n_cells=cfg["efficiency.cells"], k=cfg["efficiency.k"],
                            repeats=cfg["efficiency.repeats"], bootstrap=cfg["case.bootstrap"],
                            krylov=krylov_config(cfg), preconditioner=_precond(cfg))
    write_csv(rows, _out(cfg, "efficiency.csv"), seconds=True)
    out = {}
    names = [s.name for s in sorted(schemes, reverse=True)]
    if len(names) > 1:
        ref = "BDF2" if "BDF2" in names else names[0]
        targets, times = efficiency_ordering(rows, names, ref, cfg["efficiency.targets"])
        write_rows(_out(cfg, "matched_times.csv"), ["target_err_inf"] + [f"seconds_{n}" for n in names],
                   [[float(t)] + [float(v) for v in row] for t, row in zip(targets, times)])
        out["ordering_holds"] = bool(all(list(row) == sorted(row) for row in times))
    return out


def _film_runs(cfg: RunConfig):
    from .experiments import Device, stability_run

    fc = film_config(cfg)
    device = Device.build(fc.extents_nm, fc.cells, 0.1, fc.demag)
    results = []
    for s in _schemes(cfg["scheme"]):
        for a in fc.alphas:
            r = stability_run(fc, s, a, device=device, krylov=krylov_config(cfg),
                              preconditioner=_precond(cfg))
            log.info("%s alpha=%g %s %s", s.name, a, "stable" if r.stable else "unstable", r.reason)
            results.append(r)
    return fc, device, results


def cmd_stability(cfg: RunConfig) -> dict:
    from .experiments import write_stability_csv

    fc, device, results = _film_runs(cfg)
    write_stability_csv(_out(cfg, "stability.csv"), results)
    return {"t_unit_s": device.params.t_unit,
            "verdicts": {f"{r.scheme}@{r.alpha:g}": r.stable for r in results}}


def cmd_energy(cfg: RunConfig) -> dict:
    from .experiments import (angle_histogram, dissipation_time, write_energy_csv, write_rows,
                              write_vtk)

    fc, device, results = _film_runs(cfg)
    summary = []
    cell_nm = [e / n for e, n in zip(fc.extents_nm, fc.cells)]
    for r in results:
        tag = f"{r.scheme.lower()}_alpha{r.alpha:g}"
        write_energy_csv(_out(cfg, f"energy_{tag}.csv"), r)
        t90 = dissipation_time(r.t_ns, r.energy, cfg["energy.fraction"]) if r.stable else float("nan")
        summary.append((r.scheme, float(r.alpha), r.stable, t90, float(r.final_energy)))
        if r.angle_map is not None:
            hist = angle_histogram(r.angle_map)
            write_rows(_out(cfg, f"angles_{tag}.csv"), ("bin", "fraction"), enumerate(map(float, hist)))
        if cfg["energy.vtk"] and r.angle_map is not None:
            import numpy as np
            ang = r.angle_map
            m = np.stack((np.cos(ang), np.sin(ang), np.zeros_like(ang)))
            write_vtk(_out(cfg, f"inplane_{tag}.vtk"), m, cell_nm)
    write_rows(_out(cfg, "energy_summary.csv"),
               ("scheme", "alpha", "stable", "t_dissipate_ns", "final_energy"), summary)
    return {"t_unit_s": device.params.t_unit}


def cmd_domain_wall(cfg: RunConfig) -> dict:
    from .experiments import Device, field_sweep, write_velocity_csv, write_wall_csv

    sc = strip_config(cfg)
    schemes = _schemes(cfg["scheme"])
    if len(schemes) != 1:
        raise ConfigError("domain-wall runs one scheme at a time")
    device = Device.build(sc.extents_nm, sc.cells, sc.alphas[0], sc.demag)

    def progress(a, b, vel, tr):
        log.info("alpha=%g he=%g mT  V=%.2f m/s  r2=%.4f %s", a, b, vel.value, vel.r2, tr.stopped)

    sweep = field_sweep(sc, schemes[0], device=device, progress=progress,
                        krylov=krylov_config(cfg), preconditioner=_precond(cfg),
                        average=cfg["wall.average"])
    write_velocity_csv(_out(cfg, "velocity.csv"), sweep)
    if cfg["wall.traces"]:
        for tr in sweep.traces:
            write_wall_csv(_out(cfg, f"wall_alpha{tr.alpha:g}_he{tr.he_mT:g}mT.csv"), tr)
    return {"t_unit_s": device.params.t_unit, "nm_per_unit": device.nm_per_unit}


def cmd_demag_check(cfg: RunConfig) -> dict:
    import numpy as np

    from .demag import build_operator, direct_stray_field, stray_field_array
    from .experiments import write_rows
    from .grid import GridSpec

    n = cfg["demag.grid"]
    grid = GridSpec.cube(n)
    op = build_operator(grid, kernel=cfg["demag.kernel"])
    rows = []
    for c in range(3):
        m = np.zeros((3,) + grid.shape)
        m[c] = 1.0
        h = stray_field_array(op, m)
        rows.append((f"e{c + 1}", float(h[0].mean()), float(h[1].mean()), float(h[2].mean())))
    write_rows(_out(cfg, "demag_mean.csv"), ("m", "mean_h1", "mean_h2", "mean_h3"), rows)
    diag = [rows[c][1 + c] for c in range(3)]
    print(f"mean uniform-cube field: {' '.join(f'{d:.6f}' for d in diag)} (cube value -1/3)")
    out = {"mean_diagonal": diag}
    if n <= cfg["demag.direct_max"]:
        rng = np.random.default_rng(cfg["seed"])
        m = rng.normal(size=(3,) + grid.shape)
        m /= np.linalg.norm(m, axis=0)
        fft = stray_field_array(op, m)
        direct = direct_stray_field(grid, m)
        out["fft_vs_direct_max_abs"] = float(np.max(np.abs(fft - direct)))
        print(f"FFT vs direct summation: max abs difference {out['fft_vs_direct_max_abs']:.3e}")
    return out


HANDLERS = {
    "converge-time": cmd_converge_time,
    "converge-space": cmd_converge_space,
    "efficiency": cmd_efficiency,
    "stability": cmd_stability,
    "energy": cmd_energy,
    "domain-wall": cmd_domain_wall,
    "demag-check": cmd_demag_check,
}


# -- entry point --------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="llgbdf", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file of flat dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one key (repeatable)")
        p.add_argument("--output", "-o", dest="output_dir")
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        if name != "demag-check":
            p.add_argument("--scheme")
        if name.startswith("converge") or name == "efficiency":
            p.add_argument("--dim", type=int)
        if name == "demag-check":
            p.add_argument("--grid", type=int)
        if name in ("stability", "energy"):
            p.add_argument("--preset", choices=("full", "downscaled"))
        if name == "domain-wall":
            p.add_argument("--preset", choices=("full", "reduced"))
    return ap


def _raw_config(args) -> dict:
    raw = load_config_file(args.config) if args.config else {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        raw[key.strip()] = yaml.safe_load(val)
    shortcuts = {"output_dir": args.output_dir, "threads": args.threads, "seed": args.seed,
                 "scheme": getattr(args, "scheme", None), "case.dim": getattr(args, "dim", None),
                 "demag.grid": getattr(args, "grid", None)}
    preset = getattr(args, "preset", None)
    if preset:
        shortcuts["strip.preset" if args.command == "domain-wall" else "film.preset"] = preset
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            shortcuts["threads"] = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    raw.update({k: v for k, v in shortcuts.items() if v is not None})
    return raw


def _version() -> str:
    from importlib import metadata

    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


def _limit_threads(n: int) -> None:
    # only effective for libraries that have not started their pools yet
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = validate(args.command, _raw_config(args))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _limit_threads(cfg["threads"])

    import scipy.fft

    from .experiments import WallLost
    from .physics import MaterialParams
    from .stepper import ProjectionSingularity, StepRejected

    Path(cfg["output_dir"]).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        with scipy.fft.set_workers(cfg["threads"]):
            summary = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepRejected, ProjectionSingularity, FloatingPointError, WallLost) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    meta = {
        "config": cfg.echo(),
        "version": _version(),
        "wall_time_s": time.perf_counter() - t0,
        "summary": summary,
        # manufactured runs are dimensionless; the material time unit is echoed regardless
        "t_unit_s": summary.get("t_unit_s", MaterialParams.from_physical().t_unit),
    }
    with open(_out(cfg, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
