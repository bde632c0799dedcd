import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xtherm.geometry import (
    DEFAULT_MATERIALS,
    Arrangement,
    Box,
    DeviceGeometry,
    GeometryError,
    MaterialProps,
    Scene,
    build_pair,
    check_overlaps,
    config_from_dict,
    voxelize,
)

STACK_ROLES = ("channel", "gate_oxide", "high_k", "sd", "contact")


def test_table_defaults_per_arrangement():
    ns, cf = DeviceGeometry.nsfet(), DeviceGeometry.cfet()
    assert (ns.gate_length, ns.ns_width, ns.ns_thickness, ns.sd_length) == (12, 12, 5, 10)
    assert ns.arrangement is Arrangement.SIDE_BY_SIDE
    assert cf.ns_width == 25 and cf.arrangement is Arrangement.STACKED


def test_nsfet_has_two_devices_side_by_side():
    scene = build_pair(DeviceGeometry.nsfet())
    assert scene.devices() == ["n", "p"]
    n = scene.select("n", "channel")
    p = scene.select("p", "channel")
    # same vertical band, disjoint lateral footprints
    assert min(b.lo[2] for b in n) == min(b.lo[2] for b in p)
    assert max(b.hi[1] for b in n) < min(b.lo[1] for b in p)


def test_cfet_pfet_below_nfet():
    scene = build_pair(DeviceGeometry.cfet())
    for role in STACK_ROLES:
        top_p = max(b.hi[2] for b in scene.select("p", role))
        bottom_n = min(b.lo[2] for b in scene.select("n", role))
        assert top_p < bottom_n, role


@pytest.mark.parametrize("factory", [DeviceGeometry.nsfet, DeviceGeometry.cfet])
def test_single_sheet_gives_one_channel_per_device(factory):
    scene = build_pair(factory(sheet_count=1))
    for dev in ("n", "p"):
        assert len(scene.select(dev, "channel")) == 1


@pytest.mark.parametrize("factory", [DeviceGeometry.nsfet, DeviceGeometry.cfet])
def test_scene_has_no_conflicting_overlaps(factory):
    check_overlaps(build_pair(factory()).boxes)


def test_overlap_of_different_materials_names_both_boxes():
    a = Box("alpha", "si", (0, 0, 0), (2, 2, 2))
    b = Box("beta", "cu", (1, 1, 1), (3, 3, 3))
    with pytest.raises(GeometryError, match="alpha.*beta"):
        check_overlaps([a, b])


def test_invalid_geometry_rejected():
    with pytest.raises(GeometryError):
        DeviceGeometry(gate_length=0.0)
    with pytest.raises(GeometryError):
        DeviceGeometry(sheet_count=0)
    with pytest.raises(GeometryError):
        DeviceGeometry.from_dict({"gate_lenght": 12})
    with pytest.raises(GeometryError):
        MaterialProps("bad", -1.0, 1.0, 1.0)


def test_material_table_values():
    k = {m: DEFAULT_MATERIALS[m].k300 for m in DEFAULT_MATERIALS}
    assert k["channel"] == 10 and k["sd_n"] == 2.2 and k["sd_p"] == 0.67
    assert k["sio2"] == 1.4 and k["tin"] == 19.2 and k["si"] == 148
    assert k["ru"] == 115 and k["cu"] == 400 and k["w"] == 175


def test_power_law_conductivity():
    m = MaterialProps("x", 10.0, 1.0, 1.0, k_exponent=1.3)
    assert m.conductivity(300.0) == pytest.approx(10.0)
    assert m.conductivity(600.0) == pytest.approx(10.0 * 2**-1.3)


def test_single_box_exact_fill():
    scene = Scene([Box("cube", "si", (0, 0, 0), (10, 10, 10))], dict(DEFAULT_MATERIALS))
    grid = voxelize(scene, 1.0)
    assert grid.shape == (10, 10, 10)
    assert grid.count("si") == 1000


def test_empty_scene_rejected():
    with pytest.raises(GeometryError):
        voxelize(Scene([], dict(DEFAULT_MATERIALS)), 1.0)


def test_channel_voxels_match_sheet_volume_at_1nm():
    g = DeviceGeometry.nsfet()
    grid = voxelize(build_pair(g), 1.0)
    expected = g.sheet_count * g.gate_length * g.ns_width * g.ns_thickness
    for dev in ("n", "p"):
        assert grid.heater_mask[dev].sum() == expected


@pytest.mark.parametrize("factory", [DeviceGeometry.nsfet, DeviceGeometry.cfet])
def test_grid_invariants(factory):
    g = factory()
    grid = voxelize(build_pair(g), 2.0)
    ch = grid.material_names.index("channel")
    for dev in ("n", "p"):
        assert grid.heater_mask[dev].any() and grid.monitor_mask[dev].any()
        assert np.all(grid.region_id[grid.heater_mask[dev]] == ch)
    assert not (grid.heater_mask["n"] & grid.heater_mask["p"]).any()
    # channel volume within one voxel layer of the analytic sheet volume
    h = 2.0
    analytic = g.sheet_count * g.gate_length * g.ns_width * g.ns_thickness
    layer = g.sheet_count * 2 * (g.gate_length * g.ns_width + g.gate_length * g.ns_thickness
                                 + g.ns_width * g.ns_thickness) * h
    got = grid.heater_mask["n"].sum() * h**3
    assert abs(got - analytic) <= layer


def test_stacked_channel_voxels_separated_in_z():
    grid = voxelize(build_pair(DeviceGeometry.cfet()), 2.0)
    zn = np.nonzero(grid.heater_mask["n"])[2]
    zp = np.nonzero(grid.heater_mask["p"])[2]
    assert zn.min() > zp.max()


def test_voxel_size_bounds():
    scene = build_pair(DeviceGeometry.nsfet())
    with pytest.raises(GeometryError):
        voxelize(scene, 6.0)  # coarser than the 5 nm sheet
    with pytest.raises(GeometryError):
        voxelize(scene, 0.0)


def test_config_round_trip_and_custom_material():
    cfg = {
        "geometry": DeviceGeometry.cfet().to_dict(),
        "materials": [{"name": "sio2", "k300": 1.0, "cp": 700.0, "density": 2200.0}],
        "voxel_size_nm": 2.5,
    }
    geom, mats, voxel = config_from_dict(json.loads(json.dumps(cfg)))
    assert geom == DeviceGeometry.cfet()
    assert mats["sio2"].k300 == 1.0 and voxel == 2.5
    with pytest.raises(GeometryError):
        config_from_dict({"voxel_size_nm": 2.0})


@settings(max_examples=8, deadline=None)
@given(
    sheets=st.integers(1, 4),
    width=st.sampled_from([10.0, 12.0, 16.0]),
    spacing=st.sampled_from([30.0, 45.0, 60.0]),
    stacked=st.booleans(),
)
def test_voxelize_is_deterministic(sheets, width, spacing, stacked):
    factory = DeviceGeometry.cfet if stacked else DeviceGeometry.nsfet
    g = factory(sheet_count=sheets, ns_width=width, np_spacing=spacing)
    a = voxelize(build_pair(g), 2.0)
    b = voxelize(build_pair(g), 2.0)
    assert np.array_equal(a.region_id, b.region_id)
    assert build_pair(g).to_json() == build_pair(g).to_json()
    for dev in ("n", "p"):
        assert a.heater_mask[dev].any()
