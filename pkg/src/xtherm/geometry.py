"""Box-model geometries of an N/P nanosheet device pair and their voxelization.

All lengths are in nanometres.  The scene is a flat list of non-overlapping,
axis-aligned boxes, each tagged with a material name and (for device parts)
the owning device id ``"n"`` or ``"p"``.  Coordinates: ``x`` runs along the
channel (source -> gate -> drain), ``y`` across the sheet width and ``z`` is
vertical with the substrate bottom at ``z = 0``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GeometryError(ValueError):
    """Invalid geometry, scene construction failure or bad voxelization."""


class Arrangement(str, Enum):
    SIDE_BY_SIDE = "SideBySide"
    STACKED = "Stacked"


@dataclass(frozen=True)
class MaterialProps:
    name: str
    k300: float  # W/(K m)
    cp: float  # J/(kg K)
    density: float  # kg/m^3
    k_exponent: float = 0.0  # k(T) = k300 * (T/300)**(-k_exponent)

    def __post_init__(self):
        if self.k300 <= 0 or self.cp <= 0 or self.density <= 0:
            raise GeometryError(f"material {self.name!r}: k300, cp and density must be > 0")

    def conductivity(self, temp):
        if self.k_exponent == 0.0:
            return self.k300 * np.ones_like(np.asarray(temp, dtype=float))
        return self.k300 * (np.asarray(temp, dtype=float) / 300.0) ** (-self.k_exponent)

    @property
    def volumetric_heat_capacity(self) -> float:
        return self.cp * self.density


# Conductivity and heat capacity at 300 K per the published material table.
# Densities are handbook values; HfO2 is absent from that table and uses a
# thin-film conductivity.
DEFAULT_MATERIALS: dict[str, MaterialProps] = {
    m.name: m
    for m in (
        MaterialProps("channel", 10.0, 714.0, 2329.0),
        MaterialProps("sd_n", 2.2, 714.0, 2329.0),
        MaterialProps("sd_p", 0.67, 642.0, 3500.0),
        MaterialProps("sio2", 1.4, 301.0, 2200.0),
        MaterialProps("hfo2", 1.4, 140.0, 9680.0),
        MaterialProps("tin", 19.2, 224.0, 5220.0),
        MaterialProps("si", 148.0, 714.0, 2329.0),
        MaterialProps("ru", 115.0, 238.0, 12370.0),
        MaterialProps("cu", 400.0, 383.0, 8960.0),
        MaterialProps("w", 175.0, 132.0, 19300.0),
    )
}


@dataclass(frozen=True)
class DeviceGeometry:
    """Structural parameters of one N/P device pair (nm).

    The first seven fields carry the published structural table; the rest
    are layout choices that the table leaves open.
    """

    gate_length: float = 12.0
    ns_width: float = 12.0
    ns_thickness: float = 5.0
    sd_length: float = 10.0
    bpr_height: float = 70.0
    gate_oxide: float = 0.5
    high_k: float = 1.5
    sheet_count: int = 3
    sheet_pitch: float = 16.0
    arrangement: Arrangement = Arrangement.SIDE_BY_SIDE
    np_spacing: float = 45.0
    substrate_thickness: float = 100.0
    beol_thickness: float = 20.0
    isolation_thickness: float = 5.0
    bpr_width: float = 10.0
    bpr_liner: float = 2.0
    rail_gap: float = 3.0
    gate_extension: float = 3.0
    gate_cap: float = 3.0
    sd_overgrowth: float = 2.0
    contact_thickness: float = 2.0
    margin: float = 6.0
    doping: dict = field(
        default_factory=lambda: {
            "N_ch_N": 1e16,
            "N_ch_P": 1e16,
            "N_SD_N": 5e20,
            "N_SD_P": 5e20,
        }
    )

    def __post_init__(self):
        object.__setattr__(self, "arrangement", Arrangement(self.arrangement))
        lengths = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("sheet_count", "arrangement", "doping")
        }
        for name, value in lengths.items():
            if not value > 0:
                raise GeometryError(f"{name} must be > 0, got {value}")
        if int(self.sheet_count) != self.sheet_count or self.sheet_count < 1:
            raise GeometryError(f"sheet_count must be an integer >= 1, got {self.sheet_count}")
        gap = self.sheet_pitch - self.ns_thickness - 2 * self.dielectric
        if self.sheet_count > 1 and gap <= 0:
            raise GeometryError("sheet_pitch leaves no room for the gate stack between sheets")

    @property
    def dielectric(self) -> float:
        return self.gate_oxide + self.high_k

    @classmethod
    def nsfet(cls, **overrides) -> "DeviceGeometry":
        kw = dict(ns_width=12.0, arrangement=Arrangement.SIDE_BY_SIDE, np_spacing=45.0)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def cfet(cls, **overrides) -> "DeviceGeometry":
        kw = dict(ns_width=25.0, arrangement=Arrangement.STACKED, np_spacing=25.0)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arrangement"] = self.arrangement.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceGeometry":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GeometryError(f"unknown geometry keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Box:
    name: str
    material: str
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    device: str | None = None
    role: str = ""

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def overlaps(self, other: "Box", eps: float = 1e-9) -> bool:
        return all(
            min(self.hi[a], other.hi[a]) - max(self.lo[a], other.lo[a]) > eps for a in range(3)
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "material": self.material,
            "lo": list(self.lo),
            "hi": list(self.hi),
            "device": self.device,
            "role": self.role,
        }


@dataclass
class Scene:
    boxes: list[Box]
    materials: dict[str, MaterialProps]
    geometry: DeviceGeometry | None = None

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return lo, hi

    def devices(self) -> list[str]:
        return sorted({b.device for b in self.boxes if b.device})

    def select(self, device: str | None = None, role: str | None = None) -> list[Box]:
        return [
            b
            for b in self.boxes
            if (device is None or b.device == device) and (role is None or b.role == role)
        ]

    def to_json(self) -> str:
        payload = {
            "geometry": self.geometry.to_dict() if self.geometry else None,
            "boxes": [b.to_dict() for b in self.boxes],
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def _subtract(box: tuple, hole: tuple) -> list[tuple]:
    """Split ``box - hole`` (both ``(lo, hi)`` tuples) into disjoint boxes."""
    lo, hi = list(box[0]), list(box[1])
    hlo, hhi = hole
    if any(min(hi[a], hhi[a]) - max(lo[a], hlo[a]) <= 1e-9 for a in range(3)):
        return [box]
    pieces = []
    for a in range(3):
        if hlo[a] > lo[a]:
            plo, phi = lo.copy(), hi.copy()
            phi[a] = hlo[a]
            pieces.append((tuple(plo), tuple(phi)))
            lo[a] = hlo[a]
        if hhi[a] < hi[a]:
            plo, phi = lo.copy(), hi.copy()
            plo[a] = hhi[a]
            pieces.append((tuple(plo), tuple(phi)))
            hi[a] = hhi[a]
    return pieces


def carve(lo, hi, holes: Iterable[tuple]) -> list[tuple]:
    pieces = [(tuple(map(float, lo)), tuple(map(float, hi)))]
    for hole in holes:
        pieces = [p for piece in pieces for p in _subtract(piece, hole)]
    return pieces


class _SceneBuilder:
    def __init__(self):
        self.boxes: list[Box] = []

    def add(self, name, material, lo, hi, device=None, role=""):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if any(h - l <= 1e-9 for l, h in zip(lo, hi)):
            return
        self.boxes.append(Box(name, material, lo, hi, device, role))

    def add_carved(self, name, material, lo, hi, holes, device=None, role=""):
        for i, (plo, phi) in enumerate(carve(lo, hi, holes)):
            self.add(f"{name}.{i}", material, plo, phi, device, role)


def _expand(lo, hi, dy=0.0, dz=0.0, dx=0.0):
    return (
        (lo[0] - dx, lo[1] - dy, lo[2] - dz),
        (hi[0] + dx, hi[1] + dy, hi[2] + dz),
    )


def build_pair(geom: DeviceGeometry, materials: dict[str, MaterialProps] | None = None) -> Scene:
    """Lay out the N/P pair as a deterministic list of labelled boxes.

    Side-by-side places the NFET at low ``y`` and the PFET at high ``y``
    sharing one gate line.  Stacked places the PFET at the bottom and the
    NFET on top, sharing a common gate.  Each device's source contact drops
    to its own buried power rail (NFET rail at low ``y``, PFET at high ``y``).
    """
    materials = dict(DEFAULT_MATERIALS if materials is None else materials)
    for needed in ("channel", "sd_n", "sd_p", "sio2", "hfo2", "tin", "si", "ru", "w"):
        if needed not in materials:
            raise GeometryError(f"material table lacks {needed!r}")
    g = geom
    stacked = g.arrangement is Arrangement.STACKED
    td = g.dielectric
    ext = td + g.gate_extension  # gate-metal overhang past the sheet edge in y
    rail_w = g.bpr_width + 2 * g.bpr_liner

    x_src = (0.0, g.sd_length)
    x_gate = (g.sd_length, g.sd_length + g.gate_length)
    x_drn = (x_gate[1], x_gate[1] + g.sd_length)
    x_lo, x_hi = -g.margin, x_drn[1] + g.margin

    # y placement
    y_rail_l = g.margin
    y_dev0 = y_rail_l + rail_w + g.rail_gap + ext
    if stacked:
        sheet_y = {"p": y_dev0, "n": y_dev0}
        y_dev_hi = y_dev0 + g.ns_width
    else:
        sheet_y = {"n": y_dev0, "p": y_dev0 + g.ns_width + g.np_spacing}
        y_dev_hi = sheet_y["p"] + g.ns_width
    y_rail_r = y_dev_hi + ext + g.rail_gap
    y_hi = y_rail_r + rail_w + g.margin
    y_lo = 0.0

    # z placement
    z_sub = g.substrate_thickness
    z_dev = z_sub + g.isolation_thickness
    stack_h = (
        td + g.gate_extension + (g.sheet_count - 1) * g.sheet_pitch + g.ns_thickness + td + g.gate_cap
    )
    if stacked:
        dev_z0 = {"p": z_dev, "n": z_dev + stack_h + g.np_spacing}
        z_top = dev_z0["n"] + stack_h
    else:
        dev_z0 = {"n": z_dev, "p": z_dev}
        z_top = z_dev + stack_h
    z_beol = z_top + g.beol_thickness

    sb = _SceneBuilder()
    holes_dev: list[tuple] = []
    holes_sub: list[tuple] = []

    # buried power rails (run along x across the whole domain)
    rails = {}
    for dev, y0 in (("n", y_rail_l), ("p", y_rail_r)):
        ru_lo = (x_lo, y0 + g.bpr_liner, z_sub - g.bpr_height)
        ru_hi = (x_hi, y0 + g.bpr_liner + g.bpr_width, z_sub)
        liner_lo = (x_lo, y0, z_sub - g.bpr_height - g.bpr_liner)
        liner_hi = (x_hi, y0 + rail_w, z_sub)
        sb.add(f"bpr_{dev}", "ru", ru_lo, ru_hi, role="bpr")
        sb.add_carved(f"bpr_liner_{dev}", "sio2", liner_lo, liner_hi, [(ru_lo, ru_hi)], role="bpr_liner")
        holes_sub.append((liner_lo, liner_hi))
        rails[dev] = (ru_lo, ru_hi)

    # devices
    gate_holes = []
    sd_mat = {"n": "sd_n", "p": "sd_p"}
    contact_tops = {}
    for dev in ("p", "n") if stacked else ("n", "p"):
        y0 = sheet_y[dev]
        z0 = dev_z0[dev]
        for s in range(g.sheet_count):
            zs = z0 + td + g.gate_extension + s * g.sheet_pitch
            ch_lo = (x_gate[0], y0, zs)
            ch_hi = (x_gate[1], y0 + g.ns_width, zs + g.ns_thickness)
            sb.add(f"{dev}_channel{s}", "channel", ch_lo, ch_hi, dev, "channel")
            ox_lo, ox_hi = _expand(ch_lo, ch_hi, dy=g.gate_oxide, dz=g.gate_oxide)
            sb.add_carved(f"{dev}_oxide{s}", "sio2", ox_lo, ox_hi, [(ch_lo, ch_hi)], dev, "gate_oxide")
            hk_lo, hk_hi = _expand(ch_lo, ch_hi, dy=td, dz=td)
            sb.add_carved(f"{dev}_highk{s}", "hfo2", hk_lo, hk_hi, [(ox_lo, ox_hi)], dev, "high_k")
            gate_holes.append((hk_lo, hk_hi))
            holes_dev.append((hk_lo, hk_hi))

        top_sheet_top = z0 + td + g.gate_extension + (g.sheet_count - 1) * g.sheet_pitch + g.ns_thickness
        sd_zlo = z0
        sd_zhi = top_sheet_top + g.sd_overgrowth
        sd_ylo = y0 - g.sd_overgrowth
        sd_yhi = y0 + g.ns_width + g.sd_overgrowth
        tc = g.contact_thickness
        dev_top = z0 + stack_h
        for tag, xr in (("src", x_src), ("drn", x_drn)):
            sd_lo = (xr[0], sd_ylo, sd_zlo)
            sd_hi = (xr[1], sd_yhi, sd_zhi)
            sb.add(f"{dev}_sd_{tag}", sd_mat[dev], sd_lo, sd_hi, dev, "sd")
            holes_dev.append((sd_lo, sd_hi))
            # wrap-around contact: cap plus both side walls
            c_lo = (xr[0], sd_ylo - tc, sd_zlo + (sd_zhi - sd_zlo) / 2)
            c_hi = (xr[1], sd_yhi + tc, dev_top)
            sb.add_carved(f"{dev}_wac_{tag}", "w", c_lo, c_hi, [(sd_lo, sd_hi)], dev, "contact")
            holes_dev.append((c_lo, c_hi))
            contact_tops[(dev, tag)] = (c_lo, c_hi)

    # source contacts strap over to their rail and drop through a via
    for dev in ("n", "p"):
        c_lo, c_hi = contact_tops[(dev, "src")]
        ru_lo, ru_hi = rails[dev]
        strap_z = (c_hi[2] - g.contact_thickness, c_hi[2])
        if dev == "n":
            strap_y = (ru_lo[1], c_lo[1])
        else:
            strap_y = (c_hi[1], ru_hi[1])
        strap_lo = (c_lo[0], strap_y[0], strap_z[0])
        strap_hi = (c_hi[0], strap_y[1], strap_z[1])
        # stacked: the lower device's strap must clear the other device's stack
        via_lo = (c_lo[0], ru_lo[1], z_sub)
        via_hi = (c_hi[0], ru_hi[1], strap_z[0])
        strap_lo, strap_hi = _clip_against(strap_lo, strap_hi, holes_dev)
        sb.add(f"{dev}_strap", "w", strap_lo, strap_hi, dev, "contact")
        holes_dev.append((strap_lo, strap_hi))
        sb.add(f"{dev}_vbpr", "ru", via_lo, via_hi, dev, "vbpr")
        holes_dev.append((via_lo, via_hi))

    # shared gate metal
    gate_lo = (x_gate[0], y_dev0 - ext, z_dev)
    gate_hi = (x_gate[1], y_dev_hi + ext, z_top)
    sb.add_carved("gate_metal", "tin", gate_lo, gate_hi, gate_holes, None, "gate")
    holes_dev.append((gate_lo, gate_hi))

    # fills: substrate, bottom isolation, inter-level dielectric, BEOL oxide
    sb.add_carved("substrate", "si", (x_lo, y_lo, 0.0), (x_hi, y_hi, z_sub), holes_sub, role="substrate")
    sb.add_carved(
        "isolation", "sio2", (x_lo, y_lo, z_sub), (x_hi, y_hi, z_dev), holes_dev, role="isolation"
    )
    sb.add_carved("ild", "sio2", (x_lo, y_lo, z_dev), (x_hi, y_hi, z_top), holes_dev, role="ild")
    sb.add("beol", "sio2", (x_lo, y_lo, z_top), (x_hi, y_hi, z_beol), role="beol")

    scene = Scene(sb.boxes, materials, geom)
    check_overlaps(scene.boxes)
    return scene


def _clip_against(lo, hi, holes):
    """Shrink a strap box in ``y`` until it no longer overlaps earlier features.

    Only needed in the stacked arrangement, where the strap of one device can
    run into the contact of the other; the strap keeps its rail-side end.
    """
    lo, hi = list(lo), list(hi)
    for hlo, hhi in holes:
        probe = Box("", "", tuple(lo), tuple(hi))
        if probe.overlaps(Box("", "", hlo, hhi)):
            # keep the part farther from the device (rail side)
            if hlo[1] <= lo[1] + 1e-9:
                lo[1] = max(lo[1], hhi[1])
            else:
                hi[1] = min(hi[1], hlo[1])
    return tuple(lo), tuple(hi)


def check_overlaps(boxes: Sequence[Box]) -> None:
    if not boxes:
        return
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    for i in range(len(boxes)):
        inter = np.minimum(hi[i], hi[i + 1 :]) - np.maximum(lo[i], lo[i + 1 :])
        hit = np.nonzero(np.all(inter > 1e-9, axis=1))[0]
        for j in hit + i + 1:
            if boxes[i].material != boxes[j].material:
                raise GeometryError(
                    f"boxes {boxes[i].name!r} ({boxes[i].material}) and "
                    f"{boxes[j].name!r} ({boxes[j].material}) overlap"
                )


@dataclass
class VoxelGrid:
    """Uniform voxelization of a scene.

    ``region_id`` holds an index into ``material_names`` for every voxel.
    Heater and monitor masks are boolean arrays of the grid shape keyed by
    device id.
    """

    shape: tuple[int, int, int]
    voxel_size: tuple[float, float, float]  # nm
    origin: tuple[float, float, float]  # nm
    region_id: np.ndarray
    material_names: list[str]
    materials: dict[str, MaterialProps]
    heater_mask: dict[str, np.ndarray]
    monitor_mask: dict[str, np.ndarray]

    @property
    def devices(self) -> list[str]:
        return sorted(self.heater_mask)

    def material_array(self, attr: str) -> np.ndarray:
        table = np.array([getattr(self.materials[m], attr) for m in self.material_names])
        return table[self.region_id]

    def count(self, material: str) -> int:
        return int(np.count_nonzero(self.region_id == self.material_names.index(material)))

    def summary(self) -> dict:
        return {
            "shape": list(self.shape),
            "voxel_size_nm": list(self.voxel_size),
            "origin_nm": list(self.origin),
            "material_counts": {m: self.count(m) for m in self.material_names},
            "heater_voxels": {d: int(m.sum()) for d, m in self.heater_mask.items()},
        }


def _axis_overlap(edges: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)


def voxelize(scene: Scene, voxel_size) -> VoxelGrid:
    """Assign every voxel the material with the largest overlap volume.

    Ties go to the material of the earliest box in scene order.  Heater and
    monitor masks are the channel voxels of each device.
    """
    if not scene.boxes:
        raise GeometryError("cannot voxelize an empty scene")
    h = np.broadcast_to(np.asarray(voxel_size, dtype=float), (3,)).copy()
    if np.any(h <= 0):
        raise GeometryError(f"voxel size must be positive, got {voxel_size}")
    if scene.geometry is not None:
        thinnest = scene.geometry.ns_thickness
        if h.max() > thinnest + 1e-12:
            raise GeometryError(
                f"voxel size {h.max()} nm exceeds the thinnest feature ({thinnest} nm)"
            )
        if scene.geometry.margin < 2 * max(h[0], h[1]) - 1e-12:
            raise GeometryError("lateral margin is thinner than two voxels")
    lo, hi = scene.bounds
    n = np.maximum(1, np.ceil((hi - lo) / h - 1e-6)).astype(int)
    edges = [lo[a] + h[a] * np.arange(n[a] + 1) for a in range(3)]

    names: list[str] = []
    for b in scene.boxes:
        if b.material not in names:
            names.append(b.material)
    missing = [m for m in names if m not in scene.materials]
    if missing:
        raise GeometryError(f"scene uses materials absent from the table: {missing}")
    fill = np.zeros((len(names), *n))
    first_seen = {}
    for order, b in enumerate(scene.boxes):
        first_seen.setdefault(b.material, order)
        ox = _axis_overlap(edges[0], b.lo[0], b.hi[0])
        oy = _axis_overlap(edges[1], b.lo[1], b.hi[1])
        oz = _axis_overlap(edges[2], b.lo[2], b.hi[2])
        ix, iy, iz = (np.nonzero(o)[0] for o in (ox, oy, oz))
        if not (ix.size and iy.size and iz.size):
            continue
        sl = (
            names.index(b.material),
            slice(ix[0], ix[-1] + 1),
            slice(iy[0], iy[-1] + 1),
            slice(iz[0], iz[-1] + 1),
        )
        fill[sl] += (
            ox[sl[1], None, None] * oy[None, sl[2], None] * oz[None, None, sl[3]]
        )
    # names are already in first-seen order, so argmax ties resolve to the earliest box
    region_id = np.argmax(fill, axis=0).astype(np.int16)
    covered = fill.sum(axis=0)
    if np.any(covered <= 0):
        raise GeometryError("scene leaves voxels with no material")

    heater, monitor = {}, {}
    ch_idx = names.index("channel") if "channel" in names else -1
    devices = scene.devices()
    owner = np.zeros((len(devices), *n))
    for d, dev in enumerate(devices):
        for b in scene.select(device=dev, role="channel"):
            ox, oy, oz = (_axis_overlap(edges[a], b.lo[a], b.hi[a]) for a in range(3))
            owner[d] += ox[:, None, None] * oy[None, :, None] * oz[None, None, :]
    for d, dev in enumerate(devices):
        mask = (region_id == ch_idx) & (owner[d] > 0) & (owner[d] >= owner.max(axis=0))
        if not mask.any():
            raise GeometryError(f"device {dev!r} has no channel voxels at this resolution")
        heater[dev] = mask
        monitor[dev] = mask.copy()

    return VoxelGrid(
        shape=tuple(int(v) for v in n),
        voxel_size=tuple(float(v) for v in h),
        origin=tuple(float(v) for v in lo),
        region_id=region_id,
        material_names=names,
        materials={m: scene.materials[m] for m in names},
        heater_mask=heater,
        monitor_mask=monitor,
    )


def load_config(path: str | Path) -> tuple[DeviceGeometry, dict[str, MaterialProps], float]:
    """Read ``{geometry, materials, voxel_size_nm}`` from a JSON file."""
    with open(path) as fh:
        cfg = json.load(fh)
    return config_from_dict(cfg)


def config_from_dict(cfg: dict) -> tuple[DeviceGeometry, dict[str, MaterialProps], float]:
    try:
        geom = DeviceGeometry.from_dict(cfg["geometry"])
        voxel = cfg.get("voxel_size_nm", 2.0)
    except KeyError as exc:
        raise GeometryError(f"config missing key {exc}") from None
    materials = dict(DEFAULT_MATERIALS)
    for m in cfg.get("materials", []):
        materials[m["name"]] = MaterialProps(
            m["name"], m["k300"], m["cp"], m["density"], m.get("k_exponent", 0.0)
        )
    return geom, materials, voxel
