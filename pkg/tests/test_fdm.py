import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmdpinn.fdm import (
    InstabilityError,
    StructuredGrid,
    TemperatureField,
    energy_residuals,
    graded_nodes,
    mirror_grid,
    probe,
    run,
    stable_dt,
    step,
)
from lmdpinn.physics import DomainSpec, MaterialProperties, ProcessParameters

M = MaterialProperties()
DESK = DomainSpec(10e-3, 4e-3, 2e-3)
DESK_P = ProcessParameters(laser_start=(2.5e-3, 0.0), t_end=1.0)


@pytest.fixture(scope="module")
def desk_field():
    return run(StructuredGrid.uniform(DESK, 41, 17, 9), M, DESK_P)


def test_stable_dt_examples():
    assert M.diffusivity == pytest.approx(35 / (4122 * 831), rel=1e-15)
    g = StructuredGrid.uniform(DomainSpec(25e-3, 6e-3, 4e-3), 101, 25, 17)  # 0.25 mm spacing
    assert stable_dt(g, M) == pytest.approx(0.8 / (2 * M.diffusivity * 3 / 0.25e-3**2), rel=1e-12)
    assert stable_dt(g, M) == pytest.approx(8.15e-4, rel=2e-3)


def test_halving_dx_quarters_its_term():
    a = StructuredGrid.uniform(DESK, 11, 11, 11)
    b = StructuredGrid.uniform(DESK, 21, 11, 11)
    inv = lambda g: 0.8 / (2 * M.diffusivity * stable_dt(g, M))
    dx = a.spacings[0][0]
    assert inv(b) - inv(a) == pytest.approx(4 / dx**2 - 1 / dx**2, rel=1e-12)


@given(st.integers(3, 60), st.floats(0.8, 1.0))
def test_graded_spacing_sums_to_length(n, ratio):
    z = graded_nodes(4e-3, n, ratio)
    assert z[0] == 0.0 and abs(z[-1] - 4e-3) <= 1e-12 * 4e-3
    d = np.diff(z)
    assert np.all(d > 0)
    assert np.all(d[1:] <= d[:-1] * (1 + 1e-9))  # finer toward the top


def test_grid_validation():
    with pytest.raises(ValueError):
        StructuredGrid(np.linspace(0, 1, 2), np.linspace(0, 1, 3), np.linspace(0, 1, 3))
    with pytest.raises(ValueError):
        StructuredGrid(np.array([0.0, 0.5, 0.4]), np.linspace(0, 1, 3), np.linspace(0, 1, 3))


def test_ambient_is_steady():
    g = StructuredGrid.uniform(DESK, 11, 5, 5)
    T = np.full(g.shape, 298.0)
    out = step(T, g, M, DESK_P, 0.0, stable_dt(g, M), laser=False)
    np.testing.assert_allclose(out, T, atol=1e-12, rtol=0)


def test_step_rejects_unstable_dt():
    g = StructuredGrid.uniform(DESK, 11, 5, 5)
    with pytest.raises(ValueError, match="stability"):
        step(np.full(g.shape, 298.0), g, M, DESK_P, 0.0, 2 * stable_dt(g, M))


def test_blow_up_is_detected():
    g = StructuredGrid.uniform(DESK, 11, 5, 5)
    T = np.full(g.shape, 298.0)
    T[5, 2, 2] = 2000.0
    with pytest.raises(InstabilityError, match="unstable|exceeded"):
        run(g, M, DESK_P, t_end=0.5, initial=T, dt=5 * stable_dt(g, M), laser=False)


def test_hot_slab_cools_monotonically():
    # only the clamped bottom: losses and laser off
    g = StructuredGrid.uniform(DESK, 5, 5, 11)
    init = np.full(g.shape, 800.0)
    f = run(g, M, DESK_P, t_end=1.0, output_hz=20, initial=init, laser=False, losses=False)
    inner = f.temps[:, :, :, 1:]
    assert np.all(np.diff(inner, axis=0) <= 1e-12)
    assert np.all(f.temps >= 298.0 - 1e-9)


def test_maximum_principle_without_laser():
    rng = np.random.default_rng(0)
    g = StructuredGrid.uniform(DESK, 9, 7, 7)
    init = 298.0 + 500.0 * rng.random(g.shape)
    f = run(g, M, DESK_P, t_end=0.5, initial=init, laser=False)
    bound = max(init[:, :, 1:].max(), 298.0)
    assert f.temps.max() <= bound + 1e-9


def test_frame_count_and_times():
    g = StructuredGrid.uniform(DomainSpec(), 26, 7, 5)
    f = run(g, M, ProcessParameters())
    assert f.times.size == 31
    np.testing.assert_allclose(f.times, np.arange(31) / 10, rtol=0, atol=1e-12)


def test_run_is_deterministic():
    g = StructuredGrid.uniform(DESK, 21, 9, 5)
    a = run(g, M, DESK_P)
    b = run(g, M, DESK_P)
    assert np.array_equal(a.temps, b.temps)


def test_energy_audit(desk_field):
    assert np.all(energy_residuals(desk_field) < 1e-2)
    assert np.all(energy_residuals(desk_field) < 1e-9)  # conservative scheme: round-off only


def test_laser_input_matches_half_gaussian(desk_field):
    # eta P / 2 enters the half domain while the beam is away from the edges
    power = desk_field.energy["laser_in"][1:] / 0.1
    np.testing.assert_allclose(power, DESK_P.eta * DESK_P.power / 2, rtol=1e-2)


def test_no_undershoot(desk_field):
    assert np.all(np.isfinite(desk_field.temps))
    assert desk_field.temps.min() >= 298.0 - 1e-6


def test_mirrored_full_domain_matches_half_domain():
    g = StructuredGrid.uniform(DESK, 21, 9, 5)
    half = run(g, M, DESK_P)
    full = run(mirror_grid(g), M, DESK_P, mirrored=True)
    restricted = full.temps[:, :, g.y.size - 1 :, :]
    rel = np.abs(restricted - half.temps) / half.temps
    assert rel.max() <= 1e-3


def test_manufactured_solution_order():
    # T = T0 + A sin(pi z / 2Lz) cos(pi x / Lx) exp(-alpha lam t) with the surface terms switched off
    dom = DomainSpec(4e-3, 1e-3, 2e-3)
    proc = ProcessParameters(t_end=0.05)
    lam = (np.pi / (2 * dom.Lz)) ** 2 + (np.pi / dom.Lx) ** 2
    errs = []
    for n in (9, 17, 33):
        g = StructuredGrid.uniform(dom, 2 * n - 1, 3, n)
        X, _, Z = np.meshgrid(g.x, g.y, g.z, indexing="ij")

        def exact(t):
            return 298.0 + 100.0 * np.sin(np.pi * Z / (2 * dom.Lz)) * np.cos(np.pi * X / dom.Lx) * np.exp(-M.diffusivity * lam * t)

        f = run(g, M, proc, output_hz=20, initial=exact(0.0), laser=False, losses=False)
        errs.append(np.abs(f.temps[-1] - exact(0.05)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders[-1] >= 1.8


def test_probe_at_node_is_exact(desk_field):
    g = desk_field.grid
    i, j, k = 7, 3, 8
    np.testing.assert_array_equal(probe(desk_field, (g.x[i], g.y[j], g.z[k])), desk_field.temps[:, i, j, k])


def test_probe_is_trilinear():
    g = StructuredGrid(np.array([0.0, 1.0, 3.0]), np.array([0.0, 2.0, 2.5]), np.array([0.0, 0.5, 1.0]))
    X, Y, Z = np.meshgrid(g.x, g.y, g.z, indexing="ij")
    lin = 1.0 + 2 * X - 3 * Y + 0.5 * Z
    f = TemperatureField(g, np.array([0.0]), lin[None])
    centre = (2.0, 2.25, 0.25)
    assert probe(f, centre)[0] == pytest.approx(1.0 + 4.0 - 6.75 + 0.125, rel=1e-14)
    cell = lin[1:3, 1:3, 0:2].mean()
    assert probe(f, centre)[0] == pytest.approx(cell, rel=1e-14)


def test_probe_outside_domain(desk_field):
    with pytest.raises(ValueError, match="outside"):
        probe(desk_field, (0.02, 0.0, 0.0))


def test_track_point_heats_then_cools():
    f = run(StructuredGrid.uniform(DomainSpec(), 51, 13, 9), M, ProcessParameters())
    series = probe(f, (10e-3, 0.0, 4e-3))  # beam passes at t = 1 s
    peak = int(np.argmax(series))
    assert 0.8 <= f.times[peak] <= 1.3
    assert np.all(np.diff(series[: peak + 1]) >= 0)
    assert np.all(np.diff(series[peak:]) <= 0)


def test_field_rejects_bad_shapes():
    g = StructuredGrid.uniform(DESK, 3, 3, 3)
    with pytest.raises(ValueError):
        TemperatureField(g, np.array([0.0, 0.1]), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        TemperatureField(g, np.array([0.1, 0.1]), np.zeros((2, 3, 3, 3)))
