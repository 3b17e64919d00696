"""Property-based checks of the invariants each module promises."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from llgbdf.cli import RunConfig, validate
from llgbdf.demag import build_operator, stray_field_array
from llgbdf.experiments import Device, init_neel_wall, wall_position
from llgbdf.grid import (GridSpec, ScalarField, VectorField, d1_4th, d2_4th, error_norms,
                         fill_ghosts, laplacian_4th)
from llgbdf.krylov import KrylovConfig, gmres
from llgbdf.physics import MaterialParams
from llgbdf.stepper import Problem, Scheme, Stepper, extrapolate, project

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
shapes = st.tuples(st.integers(2, 6), st.integers(1, 5), st.integers(1, 4))
SETTINGS = settings(max_examples=30, deadline=None)


def grid_of(shape):
    return GridSpec(*shape, 0.3, 0.2, 0.1)


@st.composite
def vector_fields(draw, shape=None):
    shape = shape or draw(shapes)
    g = grid_of(shape)
    vals = draw(arrays(float, (3,) + g.shape, elements=finite))
    return VectorField.from_interior(g, vals)


@SETTINGS
@given(vector_fields())
def test_reflection_is_idempotent(m):
    once = fill_ghosts(m.copy()).data.copy()
    twice = fill_ghosts(fill_ghosts(m.copy())).data
    np.testing.assert_array_equal(once, twice)


@SETTINGS
@given(shapes.flatmap(lambda s: st.tuples(vector_fields(s), vector_fields(s))), finite, finite)
def test_difference_operators_are_linear(pair, a, b):
    u, v = pair
    g = u.grid
    w = VectorField.from_interior(g, a * u.interior + b * v.interior)
    lu, lv, lw = (laplacian_4th(fill_ghosts(f)).interior for f in (u, v, w))
    scale = 1 + np.max(np.abs(lu)) * (abs(a) + abs(b)) + np.max(np.abs(lv)) * (abs(a) + abs(b))
    assert np.max(np.abs(lw - (a * lu + b * lv))) <= 1e-12 * scale
    su = ScalarField.from_interior(g, u.interior[0])
    sv = ScalarField.from_interior(g, v.interior[0])
    sw = ScalarField.from_interior(g, a * u.interior[0] + b * v.interior[0])
    for op in (d1_4th, d2_4th):
        ru, rv, rw = (op(fill_ghosts(f), 0).interior for f in (su, sv, sw))
        assert np.allclose(rw, a * ru + b * rv, atol=1e-9 * (1 + np.max(np.abs(ru)) + np.max(np.abs(rv))))


@SETTINGS
@given(shapes, arrays(float, 3, elements=finite))
def test_laplacian_of_constant_vanishes(shape, c):
    g = grid_of(shape)
    assert np.all(laplacian_4th(fill_ghosts(VectorField.uniform(g, c))).interior == 0.0)


@SETTINGS
@given(vector_fields(), vector_fields())
def test_error_norms_nonnegative_and_symmetric(a, b):
    if a.grid != b.grid:
        return
    n1, n2 = error_norms(a, b), error_norms(b, a)
    assert min(n1) >= 0 and np.allclose(n1, n2)
    assert n1.h1 >= n1.l2


nonzero_vectors = arrays(float, (3, 4, 3, 2), elements=st.floats(-5, 5, allow_nan=False)).filter(
    lambda v: np.all(np.linalg.norm(v, axis=0) > 1e-3))


@SETTINGS
@given(nonzero_vectors)
def test_projection_is_unit_and_idempotent(v):
    p = project(v)
    assert np.max(np.abs(np.linalg.norm(p, axis=0) - 1)) <= 1e-15
    np.testing.assert_allclose(project(p), p, atol=1e-15)


@SETTINGS
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 3, elements=finite), st.integers(0, 50))
def test_extrapolation_exact_on_quadratics(a, b, c, n):
    lev = [a + b * j + c * j * j for j in (n, n + 1, n + 2)]
    j = n + 3
    np.testing.assert_allclose(extrapolate(lev, 3), a + b * j + c * j * j,
                               atol=1e-9 * (1 + j * j) * (1 + np.max(np.abs(c)) + np.max(np.abs(b))))


_DEMAG = {s: build_operator(grid_of(s)) for s in [(4, 3, 2), (5, 1, 1), (3, 3, 3)]}


@SETTINGS
@given(st.sampled_from(sorted(_DEMAG)), st.data())
def test_demag_linear_reciprocal_and_dissipative(shape, data):
    op = _DEMAG[shape]
    m1, m2 = (data.draw(arrays(float, (3,) + shape, elements=finite)) for _ in range(2))
    a, b = data.draw(finite), data.draw(finite)
    h1, h2 = stray_field_array(op, m1), stray_field_array(op, m2)
    h12 = stray_field_array(op, a * m1 + b * m2)
    scale = 1 + (abs(a) + abs(b)) * (np.max(np.abs(h1)) + np.max(np.abs(h2)))
    assert np.max(np.abs(h12 - a * h1 - b * h2)) <= 1e-12 * scale
    x, y = np.sum(m1 * h2), np.sum(m2 * h1)
    assert abs(x - y) <= 1e-10 * (1 + abs(x) + abs(y))
    assert -np.sum(m1 * h1) >= -1e-10 * (1 + np.sum(m1 * m1))


@SETTINGS
@given(st.integers(2, 12), st.floats(0.1, 100), st.integers(0, 10**6))
def test_gmres_solution_scales_with_rhs(n, c, seed):
    rng = np.random.default_rng(seed)
    A = np.eye(n) * 4 + rng.normal(size=(n, n))
    b = rng.normal(size=n)
    cfg = KrylovConfig(rel_tol=1e-12, abs_tol=1e-300)
    x1, s1 = gmres(lambda v: A @ v, b, cfg=cfg)
    x2, s2 = gmres(lambda v: A @ v, c * b, cfg=cfg)
    assert s1.converged and s2.converged
    np.testing.assert_allclose(x2, c * x1, rtol=1e-8, atol=1e-10 * c * np.max(np.abs(x1)))


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(list(Scheme)), st.floats(0.0, 2.0), st.floats(1e-3, 0.05),
       st.integers(0, 10**6))
def test_steps_keep_unit_length(scheme, alpha, k, seed):
    rng = np.random.default_rng(seed)
    g = GridSpec.cube(5)
    m = rng.normal(size=(3,) + g.shape)
    m /= np.linalg.norm(m, axis=0)
    prob = Problem(g, MaterialParams(epsilon=0.02, q=0.3, alpha=alpha), rng.normal(size=3))
    stp = Stepper(prob, scheme, k)
    s = stp.bootstrap(m, n_sub=4)
    for _ in range(4):
        s = stp.step(s)
        assert np.max(np.abs(np.linalg.norm(s.m, axis=0) - 1)) <= 1e-14


_STRIP = Device.build((800.0, 100.0, 4.0), (64, 8, 1), demag=False)


@SETTINGS
@given(st.floats(-150.0, 150.0), st.floats(10.0, 40.0))
def test_wall_position_is_translation_equivariant(shift, width_nm):
    nm = _STRIP.nm_per_unit
    w = width_nm / nm
    x0 = wall_position(init_neel_wall(_STRIP.grid, w), _STRIP.grid, nm)
    x1 = wall_position(init_neel_wall(_STRIP.grid, w, 0.5 + shift / nm), _STRIP.grid, nm,
                       near=400.0 + shift)
    # linear interpolation of a tanh profile is accurate to a fraction of a cell
    assert abs((x1 - x0) - shift) <= 12.5 / 2


@SETTINGS
@given(st.sampled_from(["bdf1", "bdf2", "bdf3", "all"]), st.floats(1e-14, 1e-6),
       st.integers(2, 100), st.lists(st.integers(2, 64), min_size=1, max_size=5))
def test_config_echo_round_trip(scheme, tol, restart, schedule):
    cfg = validate("converge-time", {"scheme": scheme, "krylov.rel_tol": tol,
                                     "krylov.restart": restart, "case.schedule": schedule})
    assert RunConfig.from_echo(cfg.echo()) == cfg
