import time

import numpy as np
import pytest

from xtherm import geometry
from xtherm.geometry import MaterialProps, VoxelGrid
from xtherm.heatsolve import SolverConfig, SolverError, energy_balance, steady_state, step_response

SI = MaterialProps("si", 148.0, 714.0, 2329.0)


def block_grid(shape, h, heater_slices, material=SI):
    """Homogeneous block with one heater region ``h`` (nm voxels)."""
    mask = np.zeros(shape, dtype=bool)
    mask[heater_slices] = True
    return VoxelGrid(
        shape=shape,
        voxel_size=(h, h, h),
        origin=(0.0, 0.0, 0.0),
        region_id=np.zeros(shape, dtype=np.int16),
        material_names=[material.name],
        materials={material.name: material},
        heater_mask={"h": mask},
        monitor_mask={"h": mask.copy()},
    )


def test_uniform_slab_matches_parabola():
    n, h = 50, 2.0
    grid = block_grid((1, 1, n), h, np.s_[:, :, :])
    power = 1e-6
    t0 = time.perf_counter()
    res = steady_state(grid, "h", power)
    assert time.perf_counter() - t0 < 10.0
    length = n * h * 1e-9
    area = (h * 1e-9) ** 2
    q = power / (length * area)
    expected = q * length**2 / (8 * SI.k300)
    assert res.dt_max == pytest.approx(expected, rel=0.02)
    assert abs(energy_balance(res)) < 0.005


def test_zero_power_gives_zero_field():
    grid = block_grid((4, 4, 4), 1.0, np.s_[1:3, 1:3, 1:3])
    res = steady_state(grid, "h", 0.0)
    assert res.dt_max == 0.0 and not res.rise.any()
    assert energy_balance(res) == 0.0
    resp = step_response(grid, "h", 0.0, SolverConfig(t_end=1e-9))
    assert not resp["h"].zth.any()


def test_negative_power_and_unknown_heater_rejected():
    grid = block_grid((4, 4, 4), 1.0, np.s_[1:3, 1:3, 1:3])
    with pytest.raises(SolverError):
        steady_state(grid, "h", -1.0)
    with pytest.raises(SolverError):
        steady_state(grid, "missing", 1.0)


def test_solver_config_validation():
    with pytest.raises(SolverError):
        SolverConfig(t_start=1e-6, t_end=1e-9)
    with pytest.raises(SolverError):
        SolverConfig(steps_per_decade=4)


def test_cube_step_response_reaches_steady_value():
    grid = block_grid((8, 8, 8), 2.0, np.s_[3:5, 3:5, 3:5])
    power = 1e-6
    steady = steady_state(grid, "h", power).dt_monitor["h"] / power
    resp = step_response(grid, "h", power, SolverConfig(t_start=1e-17, t_end=1e-9))["h"]
    assert resp.zth[-1] == pytest.approx(steady, rel=0.02)
    assert np.all(np.diff(resp.zth) >= -1e-12 * steady)
    assert resp.zth[0] < 0.01 * steady


def test_truncated_solve_fails_energy_balance(fem_grid):
    res = steady_state(fem_grid["nsfet"], "n", 5.6e-5, maxiter=1, strict=False)
    assert abs(energy_balance(res)) > 0.005


def test_nonlinear_conductivity_heats_more():
    hot = MaterialProps("si", 148.0, 714.0, 2329.0, k_exponent=1.3)
    shape, sl = (1, 1, 40), np.s_[:, :, :]
    lin = steady_state(block_grid(shape, 2.0, sl), "h", 2e-5)
    non = steady_state(block_grid(shape, 2.0, sl, hot), "h", 2e-5)
    assert lin.dt_max > 1.0
    assert non.dt_max > lin.dt_max


@pytest.mark.parametrize("flavor", ["nsfet", "cfet"])
def test_fem_pair_steady_properties(flavor, fem_grid):
    grid = fem_grid[flavor]
    cfg = SolverConfig()
    a = steady_state(grid, "n", 1e-5, cfg)
    b = steady_state(grid, "p", 1e-5, cfg)
    for res in (a, b):
        assert abs(energy_balance(res)) < 0.005
        assert res.rise.min() >= -1e-9  # maximum principle
    # reciprocity of the symmetric conduction operator
    assert a.dt_monitor["p"] == pytest.approx(b.dt_monitor["n"], rel=2 * cfg.linear_tol)
    assert a.dt_monitor["p"] < a.dt_monitor["n"]


def test_nsfet_nfet_rise_near_reported_hot_spot(fem_grid):
    res = steady_state(fem_grid["nsfet"], "n", 56e-6)
    assert res.dt_monitor["n"] == pytest.approx(433 - 300, rel=0.40)


def test_grid_refinement_changes_peak_by_under_5pct(project_cfg):
    geom, mats, voxel = geometry.config_from_dict(project_cfg["nsfet"])
    scene = geometry.build_pair(geom, mats)
    coarse = steady_state(geometry.voxelize(scene, voxel), "n", 56e-6).dt_max
    fine = steady_state(geometry.voxelize(scene, voxel / 2), "n", 56e-6).dt_max
    assert abs(fine / coarse - 1) < 0.05


@pytest.mark.parametrize("flavor", ["nsfet", "cfet"])
def test_fem_step_responses(flavor, fem_responses):
    resp = fem_responses[flavor]
    assert set(resp) == {"nn", "np", "pn", "pp"}
    for r in resp.values():
        assert np.all(np.diff(r.zth) >= -1e-9 * r.zth.max())
        assert r.zth[0] < 0.01 * r.zth[-1]
        assert np.all(np.diff(r.times) > 0)
    assert resp["np"].rth < resp["nn"].rth
    assert resp["pn"].rth < resp["pp"].rth
    assert resp["np"].rth == pytest.approx(resp["pn"].rth, rel=0.05)


def test_stacking_raises_cross_to_self_ratio(fem_responses):
    ratio = {f: r["np"].rth / r["nn"].rth for f, r in fem_responses.items()}
    assert ratio["cfet"] > ratio["nsfet"]
