"""Acceptance criteria, each at its stated tolerance; one pass/fail line per criterion.

Slow: the whole module runs for roughly forty minutes on one core.
"""

import numpy as np
import pytest

from llgbdf.cli import main
from llgbdf.demag import build_operator, direct_stray_field, stray_field_array
from llgbdf.experiments import (Device, FilmConfig, StripConfig, dissipation_time,
                                domain_wall_run, field_sweep, relax_wall, stability_run,
                                wall_velocity)
from llgbdf.grid import GridSpec
from llgbdf.krylov import KrylovConfig, gmres
from llgbdf.physics import MaterialParams
from llgbdf.stepper import Problem, Scheme, Stepper, implicit_operator
from llgbdf.verify import (ManufacturedCase, efficiency_ordering, efficiency_study, grid_for,
                           manufactured_problem, read_csv, sample_exact, spatial_study,
                           temporal_study)

SCHEMES = (Scheme.BDF1, Scheme.BDF2, Scheme.BDF3)
NORMS = ("linf", "l2", "h1")
CASE_1D = ManufacturedCase(1)
CASE_3D = ManufacturedCase(3)


def fmt(v):
    return "(" + ", ".join(f"{x:.3f}" for x in v) + ")"


# -- 1, 2, 12: 1D temporal study through the command line ----------------------


@pytest.fixture(scope="module")
def temporal_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("temporal")
    outs = []
    for tag in ("a", "b"):
        out = base / tag
        assert main(["converge-time", "--scheme", "all", "--dim", "1", "--threads", "1",
                     "-o", str(out)]) == 0
        outs.append(out)
    return outs


def test_criterion_01_temporal_orders_1d(temporal_runs, criterion):
    rows = {r["scheme"]: r for r in read_csv(temporal_runs[0] / "orders.csv")}
    bands = {"BDF1": (0.85, 1.15), "BDF2": (1.8, 2.2), "BDF3": (2.6, 3.3)}
    ok, parts = True, []
    for name, (lo, hi) in bands.items():
        o = [float(rows[name][f"order_{n}"]) for n in ("inf", "l2", "h1")]
        ok &= all(lo <= v <= hi for v in o)
        parts.append(f"{name} {fmt(o)} in [{lo}, {hi}]")
    assert criterion(1, ok, "; ".join(parts))


def test_criterion_02_absolute_errors(temporal_runs, criterion):
    rows = read_csv(temporal_runs[0] / "convergence.csv")

    def err(scheme, n0):
        k = 0.1 / n0
        return next(float(r["err_inf"]) for r in rows
                    if r["scheme"] == scheme and abs(float(r["k"]) - k) < 1e-12)

    checks = [("BDF3", 12, 1.154e-9), ("BDF1", 8, 2.572e-5), ("BDF2", 8, 7.965e-6)]
    ok, parts = True, []
    for s, n0, ref in checks:
        e = err(s, n0)
        ok &= ref / 3 <= e <= 3 * ref
        parts.append(f"{s} k=T/{n0} {e:.4e} vs {ref:.3e}")
    assert criterion(2, ok, "; ".join(parts))


def test_criterion_12_determinism(temporal_runs, criterion):
    a, b = ((d / "convergence.csv").read_bytes() for d in temporal_runs)
    ok = a == b and len(a) > 0
    assert criterion(12, ok, f"two single-threaded runs, convergence CSVs identical: {a == b}")


# -- 3: 1D spatial study --------------------------------------------------------


def test_criterion_03_spatial_orders_1d(criterion):
    bands = {Scheme.BDF1: (1.9, 2.1), Scheme.BDF2: (1.9, 2.1), Scheme.BDF3: (3.7, 4.2)}
    ok, parts = True, []
    bdf3_64 = None
    for s, (lo, hi) in bands.items():
        rep = spatial_study(s, CASE_1D)
        o = rep.orders
        good = all(lo <= v <= hi for v in o)
        ok &= good
        parts.append(f"{s.name} {fmt(o)} in [{lo}, {hi}]")
        if s is Scheme.BDF3:
            bdf3_64 = next(r.norms.linf for r in rep.rows if abs(r.h - 1 / 64) < 1e-12)
            errs = ", ".join(f"{r.norms.linf:.2e}" for r in rep.rows)
            parts.append(f"BDF3 errors by h {errs}")
    spot = 3.647e-8 / 3 <= bdf3_64 <= 3 * 3.647e-8
    ok &= spot
    parts.append(f"BDF3 h=1/64 {bdf3_64:.4e} vs 3.647e-08")
    assert criterion(3, ok, "; ".join(parts))


# -- 4: 3D coordinated refinement -----------------------------------------------


def test_criterion_04_orders_3d(criterion):
    bands = {Scheme.BDF1: (0.85, 1.15), Scheme.BDF2: (1.5, 2.2), Scheme.BDF3: (2.7, 3.4)}
    ok, parts = True, []
    for s, (lo, hi) in bands.items():
        rep = temporal_study(s, CASE_3D)
        o = rep.orders.l2
        slowest = max(r.seconds for r in rep.rows)
        ok &= lo <= o <= hi and slowest < 600
        parts.append(f"{s.name} L2 {o:.3f} in [{lo}, {hi}] (slowest run {slowest:.1f} s)")
    assert criterion(4, ok, "; ".join(parts))


# -- 5: efficiency ordering -----------------------------------------------------


def test_criterion_05_efficiency_ordering(criterion):
    rows = efficiency_study(SCHEMES, CASE_1D, sweep="k", repeats=3)
    targets, times = efficiency_ordering(rows, ("BDF3", "BDF2", "BDF1"))
    ok = bool(np.all(times[:, 0] < times[:, 1]) and np.all(times[:, 1] < times[:, 2]))
    parts = [f"err {t:.1e}: BDF3 {a:.3f} s, BDF2 {b:.3f} s, BDF1 {c:.3f} s"
             for t, (a, b, c) in zip(targets, times)]
    assert criterion(5, ok, "; ".join(parts))


# -- 6: demag -------------------------------------------------------------------


def test_criterion_06_demag(criterion):
    rng = np.random.default_rng(6)
    g16 = GridSpec.cube(16)
    op16 = build_operator(g16)
    means = []
    for c in range(3):
        m = np.zeros((3,) + g16.shape)
        m[c] = 1.0
        means.append(stray_field_array(op16, m)[c].mean())
    g8 = GridSpec.cube(8)
    op8 = build_operator(g8)
    m = rng.normal(size=(3,) + g8.shape)
    fft, direct = stray_field_array(op8, m), direct_stray_field(g8, m)
    diff = np.max(np.abs(fft - direct)) / np.max(np.abs(direct))
    m1, m2 = rng.normal(size=(2, 3) + g8.shape)
    a, b = np.sum(m1 * stray_field_array(op8, m2)), np.sum(m2 * stray_field_array(op8, m1))
    recip = abs(a - b) / max(abs(a), abs(b))
    ok = all(abs(v + 1 / 3) <= 1e-2 for v in means) and diff <= 1e-10 and recip <= 1e-10
    assert criterion(6, ok, f"cube means {fmt(means)}; FFT vs direct {diff:.1e}; "
                            f"reciprocity {recip:.1e}")


# -- 7: solver oracle -----------------------------------------------------------


def test_criterion_07_gmres_vs_dense(criterion):
    rng = np.random.default_rng(7)
    g = GridSpec.cube(8)
    m_hat = rng.normal(size=(3,) + g.shape)
    m_hat /= np.linalg.norm(m_hat, axis=0)
    apply = implicit_operator(Scheme.BDF3, 0.01, 0.05, 0.3, m_hat, g)
    n = 3 * g.ncells
    A = np.column_stack([apply(e) for e in np.eye(n)])
    b = rng.normal(size=n)
    ref = np.linalg.solve(A, b)
    x, st = gmres(apply, b, cfg=KrylovConfig(rel_tol=1e-12, abs_tol=1e-15))
    rel = np.linalg.norm(x - ref) / np.linalg.norm(ref)
    assert criterion(7, rel <= 1e-8, f"relative difference {rel:.2e} after {st.iterations} iterations")


# -- 8: unit norm ---------------------------------------------------------------


def test_criterion_08_unit_norm(criterion):
    worst = {}
    for s in SCHEMES:
        defect = [0.0]

        def watch(state):
            defect[0] = max(defect[0], float(np.max(np.abs(np.linalg.norm(state.m, axis=0) - 1))))

        # manufactured problem
        g = grid_for(CASE_1D, 2000)
        st = Stepper(manufactured_problem(CASE_1D, g), s, 0.1 / 16)
        st.run(st.bootstrap(sample_exact(CASE_1D, g, 0.0), "exact",
                            lambda t: sample_exact(CASE_1D, g, t)), 13, watch)
        # device problem with demag, anisotropy and an applied field
        dev = Device.build((240.0, 240.0, 20.0), (24, 24, 2))
        st = Stepper(dev.problem(0.5, (2.0, 5.0, 0.0)), s, dev.params.time_from_ps(1.0))
        X, Y, _ = dev.grid.mesh()
        m0 = np.stack((np.cos(3 * X), np.sin(3 * X) * np.cos(Y), 0.2 + 0 * X))
        m0 /= np.linalg.norm(m0, axis=0)
        st.run(st.bootstrap(m0, n_sub=10), 50, watch)
        worst[s.name] = defect[0]
    ok = max(worst.values()) <= 1e-14
    assert criterion(8, ok, "max ||m|-1| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


# -- 9, 10: thin-film stability and energy ----------------------------------------


@pytest.fixture(scope="module")
def film_runs():
    cfg = FilmConfig.downscaled()
    dev = Device.build(cfg.extents_nm, cfg.cells, 0.1, cfg.demag)
    return {(s.name, a): stability_run(cfg, s, a, device=dev) for s in SCHEMES for a in cfg.alphas}


def test_criterion_09_stability_sweep(film_runs, criterion):
    required = (0.1, 1.0, 5.0, 10.0)
    ok = all(film_runs[(s.name, a)].stable for s in SCHEMES for a in required)
    alphas = sorted({a for _, a in film_runs})
    grid = []
    for s in SCHEMES:
        cells = []
        for a in alphas:
            r = film_runs[(s.name, a)]
            mark = "S" if r.stable else "U"
            rises = int(np.sum(np.diff(r.energy) > 1e-8 * abs(r.energy[0]))) if r.stable else 0
            cells.append(f"{a:g}:{mark}" + (f"(+{rises})" if rises else ""))
        grid.append(f"{s.name} " + " ".join(cells))
    assert criterion(9, ok, "required alphas stable; verdicts (S stable, U unstable, "
                            "+n energy upticks) " + " | ".join(grid))


def test_criterion_10_energy_decay(film_runs, criterion):
    alphas = (0.1, 1.0, 5.0, 10.0)
    ok, parts = True, []
    for s in SCHEMES:
        t90 = [dissipation_time(film_runs[(s.name, a)].t_ns, film_runs[(s.name, a)].energy)
               for a in alphas]
        dec = all(x > y for x, y in zip(t90, t90[1:]))
        ok &= dec
        parts.append(f"{s.name} t90 {fmt(t90)} ns decreasing={dec}")
    order_ok = True
    for a in alphas:
        e = {s.name: film_runs[(s.name, a)].final_energy for s in SCHEMES}
        good = e["BDF1"] >= e["BDF2"] and e["BDF1"] >= e["BDF3"]
        order_ok &= good
        parts.append(f"alpha {a:g} final F BDF1 {e['BDF1']:.6e} BDF2 {e['BDF2']:.6e} "
                     f"BDF3 {e['BDF3']:.6e} ordered={good}")
    ok &= order_ok
    assert criterion(10, ok, "; ".join(parts))


# -- 11: domain wall ------------------------------------------------------------


def test_criterion_11_domain_wall(criterion):
    cfg = StripConfig.reduced()
    sweep = field_sweep(cfg, Scheme.BDF3)
    fits = [sweep.field_fit(i) for i in range(len(sweep.alphas))]
    r2_ok = all(f[2] >= 0.99 for f in fits)
    v5 = sweep.velocity[:, 0]
    amin = sweep.alphas[int(np.argmin(v5))]
    # magnitude on the full grid, one run
    full = StripConfig()
    dev = Device.build(full.extents_nm, full.cells, 0.1, full.demag)
    wall = relax_wall(full, Scheme.BDF3, dev)
    v_full = wall_velocity(domain_wall_run(full, Scheme.BDF3, 0.1, 5.0, dev, wall), full.window)
    mag_ok = 227 / 2 <= v_full.value <= 227 * 2
    ok = r2_ok and amin == 1.0 and mag_ok
    detail = ("(a) R2 by alpha " + ", ".join(f"{a:g}:{f[2]:.4f}" for a, f in zip(sweep.alphas, fits))
              + f"; (b) V(alpha) at 5 mT {fmt(v5)} m/s, minimum at alpha={amin:g}"
              + f"; (c) full grid V(0.1, 5 mT) = {v_full.value:.1f} m/s vs 227")
    assert criterion(11, ok, detail)
