"""Voxel solid construction of the 3D wheel.

The four build steps mirror a CAD recipe: revolve the spoke cross-section
into a disc body, extrude-cut the void regions of the 2D design through it,
drill the lug holes on a 72-degree circle, and revolve + join the rim body.
All booleans run on a boolean occupancy grid whose frame is fixed by the
build spec (x, y across the wheel, z along the axle).

Units are mm; density is tonne/mm^3 (mm-tonne-s system), masses reported
in kg.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage

from .contour import ContourSet
from .designspace import ValidationError


@dataclass
class CrossSection:
    """Closed (r, z) profile polyline in mm."""

    points: np.ndarray
    kind: str = "spoke"                # spoke | rim

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(pts) and not np.array_equal(pts[0], pts[-1]):
            pts = np.vstack([pts, pts[0]])
        if len(pts) and pts[:, 0].min() < 0:
            raise ValidationError("profile radii must be >= 0")
        if len(pts) >= 4 and _self_intersects(pts):
            raise ValidationError("profile polygon is self-intersecting")
        self.points = pts

    @property
    def is_empty(self) -> bool:
        return len(self.points) < 4       # fewer than 3 distinct points


def _self_intersects(pts: np.ndarray) -> bool:
    """Check non-adjacent segment pairs of a closed polyline for crossings."""
    seg = list(zip(pts[:-1], pts[1:]))
    n = len(seg)
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(*seg[i], *seg[j]):
                return True
    return False


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    return (orient(p1, p2, q1) * orient(p1, p2, q2) < 0
            and orient(q1, q2, p1) * orient(q1, q2, p2) < 0)


@dataclass(frozen=True)
class WheelBuildSpec:
    """Dimensions of the build frame and drilled features."""

    rim_diameter: float = 457.2        # 18 in
    rim_width: float = 190.5           # 7.5j
    rim_width_code: str = "7.5j"
    lug_circle_radius: float = 57.0
    lug_hole_radius: float = 7.5
    n_lugs: int = 5
    voxel_pitch: float = 4.0
    bore_radius: float = 33.0
    hub_radius: float = 75.0

    def __post_init__(self):
        if self.voxel_pitch > 6.0:
            raise ValidationError("voxel pitch must be <= 6 mm (CAE mesh bound)")
        if self.voxel_pitch <= 0:
            raise ValidationError("voxel pitch must be positive")
        if self.lug_circle_radius + self.lug_hole_radius >= self.hub_radius:
            raise ValidationError("lug holes must fit inside the hub radius")

    def scaled(self, factor: float) -> "WheelBuildSpec":
        return WheelBuildSpec(
            rim_diameter=self.rim_diameter * factor,
            rim_width=self.rim_width * factor,
            rim_width_code=self.rim_width_code,
            lug_circle_radius=self.lug_circle_radius * factor,
            lug_hole_radius=self.lug_hole_radius * factor,
            n_lugs=self.n_lugs,
            voxel_pitch=self.voxel_pitch,
            bore_radius=self.bore_radius * factor,
            hub_radius=self.hub_radius * factor,
        )


DESK_BUILD = WheelBuildSpec(rim_diameter=180.0, rim_width=72.0,
                            rim_width_code="desk", lug_circle_radius=22.0,
                            lug_hole_radius=3.5, voxel_pitch=4.0,
                            bore_radius=13.0, hub_radius=30.0)


@dataclass
class VoxelSolid:
    occupancy: np.ndarray              # bool grid indexed [ix, iy, iz]
    pitch: float
    origin: np.ndarray                 # mm position of the (0,0,0) voxel corner

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=np.float64)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    @property
    def volume(self) -> float:
        return self.count * self.pitch**3

    def centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny, nz = self.occupancy.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.pitch
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.pitch
        zs = self.origin[2] + (np.arange(nz) + 0.5) * self.pitch
        return xs, ys, zs

    def component_count(self) -> int:
        _, n = ndimage.label(self.occupancy)
        return int(n)

    def copy(self) -> "VoxelSolid":
        return VoxelSolid(self.occupancy.copy(), self.pitch, self.origin.copy())


def empty_grid(spec: WheelBuildSpec) -> VoxelSolid:
    """Build frame: x, y span the wheel diameter (plus one voxel margin),
    z spans the rim width."""
    p = spec.voxel_pitch
    r = spec.rim_diameter / 2.0 + p
    nx = ny = int(np.ceil(2 * r / p))
    nz = int(np.ceil(spec.rim_width / p))
    origin = np.array([-nx * p / 2.0, -ny * p / 2.0, 0.0])
    return VoxelSolid(np.zeros((nx, ny, nz), dtype=bool), p, origin)


# ---------------------------------------------------------------------------
# default parametric cross-sections (stand-ins for proprietary profiles)

def default_spoke_profile(spec: WheelBuildSpec) -> CrossSection:
    """Tapered disc slab from the center bore out to under the rim, thicker
    at the hub, positioned against the outboard face."""
    w = spec.rim_width
    r0 = spec.bore_radius
    r1 = spec.rim_diameter / 2.0 * 0.94
    t_hub = 0.22 * w
    t_out = 0.12 * w
    z_face = 0.92 * w
    return CrossSection(points=np.array([
        [r0, z_face - t_hub],
        [r1, z_face - t_out],
        [r1, z_face],
        [r0, z_face],
    ]), kind="spoke")


def default_rim_profile(spec: WheelBuildSpec) -> CrossSection:
    """Rectilinear approximation of a J-profile: thin outer barrel with a
    bead flange at each edge."""
    r_out = spec.rim_diameter / 2.0
    t = max(0.035 * r_out, spec.voxel_pitch)
    flange = 2.2 * t
    w = spec.rim_width
    return CrossSection(points=np.array([
        [r_out - t, 0.0],
        [r_out, 0.0],
        [r_out, w],
        [r_out - t, w],
        [r_out - t, w - flange * 0.6],
        [r_out - flange, w - flange * 0.6],
        [r_out - flange, w - flange],
        [r_out - t, w - flange],
        [r_out - t, flange],
        [r_out - flange, flange],
        [r_out - flange, flange * 0.4],
        [r_out - t, flange * 0.4],
    ]), kind="rim")


def save_profile_csv(cs: CrossSection, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["r_mm,z_mm"] + [f"{r:.6f},{z:.6f}" for r, z in cs.points]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_profile_csv(path: str | Path, kind: str = "spoke") -> CrossSection:
    rows = Path(path).read_text().strip().splitlines()[1:]
    pts = np.array([[float(v) for v in row.split(",")] for row in rows])
    return CrossSection(points=pts, kind=kind)


# ---------------------------------------------------------------------------
# CSG operations

def revolve_profile(cs: CrossSection, spec: WheelBuildSpec) -> VoxelSolid:
    """Occupy every voxel whose center's (radius, z) lies inside the closed
    profile polygon."""
    solid = empty_grid(spec)
    if cs.is_empty:
        return solid
    xs, ys, zs = solid.centers()
    rr = np.hypot(xs[:, None], ys[None, :])          # (nx, ny)
    path = MplPath(cs.points)
    pts = np.column_stack([np.repeat(rr.ravel(), len(zs)),
                           np.tile(zs, rr.size)])
    inside = path.contains_points(pts).reshape(rr.shape + (len(zs),))
    solid.occupancy = inside
    return solid


def catmull_rom_closed(points: np.ndarray, samples_per_seg: int = 4) -> np.ndarray:
    """Centripetal-free (uniform) Catmull-Rom resampling of a closed loop."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    n = len(pts)
    if n < 3:
        return pts
    out = []
    ts = np.arange(samples_per_seg) / samples_per_seg
    for i in range(n):
        p0, p1, p2, p3 = pts[(i - 1) % n], pts[i], pts[(i + 1) % n], pts[(i + 2) % n]
        for t in ts:
            t2, t3 = t * t, t * t * t
            out.append(0.5 * ((2 * p1) + (-p0 + p2) * t
                              + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                              + (-p0 + 3 * p1 - 3 * p2 + p3) * t3))
    out.append(out[0])
    return np.array(out)


def extrude_cut(solid: VoxelSolid, sketch: ContourSet,
                smooth: bool = True) -> VoxelSolid:
    """Clear voxels whose (x, y) center falls inside any closed sketch curve
    (the void regions of the 2D design), at all z."""
    out = solid.copy()
    closed = [g for g in sketch.groups if len(g) >= 3]
    if not closed:
        return out
    xs, ys, _ = out.centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    cut2d = np.zeros(len(pts), dtype=bool)
    for g in closed:
        poly = catmull_rom_closed(g.points, 4) if smooth else g.points
        if len(poly) < 3:
            continue
        path = MplPath(poly)
        bbox = path.get_extents()
        sel = ((pts[:, 0] >= bbox.x0) & (pts[:, 0] <= bbox.x1)
               & (pts[:, 1] >= bbox.y0) & (pts[:, 1] <= bbox.y1))
        if sel.any():
            cut2d[sel] |= path.contains_points(pts[sel])
    out.occupancy[cut2d.reshape(gx.shape), :] = False
    return out


def drill_lug_holes(solid: VoxelSolid, spec: WheelBuildSpec) -> VoxelSolid:
    """Five axial cylinders at 72-degree intervals on the lug circle."""
    out = solid.copy()
    if spec.lug_hole_radius <= 0:
        return out
    xs, ys, _ = out.centers()
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cut2d = np.zeros(gx.shape, dtype=bool)
    for k in range(spec.n_lugs):
        ang = 2.0 * np.pi * k / spec.n_lugs + np.pi / 2.0
        cx = spec.lug_circle_radius * np.cos(ang)
        cy = spec.lug_circle_radius * np.sin(ang)
        cut2d |= np.hypot(gx - cx, gy - cy) <= spec.lug_hole_radius
    out.occupancy[cut2d, :] = False
    return out


def add_rim(solid: VoxelSolid, rim_cs: CrossSection,
            spec: WheelBuildSpec) -> tuple[VoxelSolid, int]:
    """Union with the revolved rim body; returns (solid, component count)."""
    rim = revolve_profile(rim_cs, spec)
    if rim.occupancy.shape != solid.occupancy.shape:
        raise ValidationError("rim grid frame does not match the solid")
    out = solid.copy()
    out.occupancy |= rim.occupancy
    return out, out.component_count()


def mass(solid: VoxelSolid, density: float) -> float:
    """Mass in kg for a density given in tonne/mm^3."""
    if density <= 0:
        raise ValidationError("density must be positive")
    return solid.volume * density * 1000.0


# ---------------------------------------------------------------------------
# surface mesh + STL

@dataclass
class TriMesh:
    vertices: np.ndarray               # (V, 3) mm
    triangles: np.ndarray              # (T, 3) vertex indices, outward CCW
    watertight: bool = True


_FACE_DIRS = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
# corner offsets of each face, ordered so the right-hand normal points outward
_FACE_CORNERS = {
    (-1, 0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (1, 0, 0): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (0, -1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (0, 1, 0): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (0, 0, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    (0, 0, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
}


def export_mesh(solid: VoxelSolid) -> TriMesh:
    """Triangulate the boundary faces of the occupancy grid (two triangles per
    exposed face), with deduplicated vertices and outward orientation."""
    occ = solid.occupancy
    if not occ.any():
        raise ValidationError("cannot mesh an empty solid")
    padded = np.pad(occ, 1, mode="constant")
    corner_ids: dict[tuple[int, int, int], int] = {}
    corners: list[tuple[int, int, int]] = []
    tris: list[tuple[int, int, int]] = []

    def corner_id(c):
        if c not in corner_ids:
            corner_ids[c] = len(corners)
            corners.append(c)
        return corner_ids[c]

    nx, ny, nz = occ.shape
    for d in _FACE_DIRS:
        nb = padded[1 + d[0]:1 + d[0] + nx, 1 + d[1]:1 + d[1] + ny,
                    1 + d[2]:1 + d[2] + nz]
        exposed = occ & ~nb
        for ix, iy, iz in np.argwhere(exposed):
            cs = [corner_id((ix + o[0], iy + o[1], iz + o[2]))
                  for o in _FACE_CORNERS[d]]
            tris.append((cs[0], cs[1], cs[2]))
            tris.append((cs[0], cs[2], cs[3]))
    verts = solid.origin[None, :] + np.array(corners, dtype=np.float64) * solid.pitch
    return TriMesh(vertices=verts, triangles=np.array(tris, dtype=np.int64),
                   watertight=True)


def write_stl(mesh: TriMesh, path: str | Path) -> Path:
    """Binary STL, units mm, deterministic bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tris = mesh.triangles
    v = mesh.vertices
    with open(path, "wb") as fh:
        fh.write(b"wheelforge voxel surface".ljust(80, b"\0"))
        fh.write(struct.pack("<I", len(tris)))
        for a, b, c in tris:
            p0, p1, p2 = v[a], v[b], v[c]
            n = np.cross(p1 - p0, p2 - p0)
            norm = np.linalg.norm(n)
            n = n / norm if norm > 0 else n
            fh.write(struct.pack("<3f", *n))
            fh.write(struct.pack("<3f", *p0))
            fh.write(struct.pack("<3f", *p1))
            fh.write(struct.pack("<3f", *p2))
            fh.write(struct.pack("<H", 0))
    return path


# ---------------------------------------------------------------------------
# full build

@dataclass
class BuildResult:
    solid: VoxelSolid
    mass_kg: float
    manifest: dict = field(default_factory=dict)


def build_wheel(sketch: ContourSet, spec: WheelBuildSpec,
                density: float = 2.692e-9,
                spoke_cs: CrossSection | None = None,
                rim_cs: CrossSection | None = None) -> BuildResult:
    """Four-step construction: revolve spoke disc, extrude-cut the design's
    void curves, drill lug holes, revolve + join the rim."""
    spoke_cs = spoke_cs or default_spoke_profile(spec)
    rim_cs = rim_cs or default_rim_profile(spec)
    steps = {}
    solid = revolve_profile(spoke_cs, spec)
    steps["revolve_spoke_mm3"] = solid.volume
    solid = extrude_cut(solid, sketch)
    steps["extrude_cut_mm3"] = solid.volume
    solid = drill_lug_holes(solid, spec)
    steps["drill_lugs_mm3"] = solid.volume
    solid, n_comp = add_rim(solid, rim_cs, spec)
    steps["join_rim_mm3"] = solid.volume
    m = mass(solid, density)
    manifest = {"pitch_mm": spec.voxel_pitch, "steps": steps,
                "mass_kg": m, "components": n_comp,
                "connected": n_comp == 1}
    if n_comp != 1:
        manifest["warning"] = f"solid has {n_comp} connected components"
    return BuildResult(solid=solid, mass_kg=m, manifest=manifest)
