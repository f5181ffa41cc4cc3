"""Stage-4 image and data processing: from a raster design to closed curves.

The chain is: crop margins, anti-alias by a pixel-to-vector-to-pixel round
trip (marching squares + supersampled polygon rasterization), detect edges
from the brightness gradient, drop rim/hub edges, chain the remaining points
into groups by nearest-neighbor walking, thin each group, center and scale,
and close the curves. Functions operate on plain float grids in [0, 1];
points are (x, y) with x along columns and y along rows.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from skimage import measure

from .designspace import DesignImage, ValidationError


@dataclass
class EdgeMap:
    values: np.ndarray                 # binary grid, same shape as the source
    threshold: float

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.isin(v, (0, 1)).all():
            raise ValidationError("edge map must be binary")
        self.values = v.astype(np.uint8)

    def points(self) -> np.ndarray:
        """Edge pixels as (x, y) in row-major scan order."""
        rc = np.argwhere(self.values > 0)
        return rc[:, ::-1].astype(np.float64)


@dataclass
class PointGroup:
    points: np.ndarray                 # ordered (N, 2) array of (x, y)
    closed: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ContourSet:
    groups: list[PointGroup]
    provenance: str = ""
    units: str = "px"

    def __iter__(self):
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def all_points(self) -> np.ndarray:
        if not self.groups:
            return np.zeros((0, 2))
        return np.concatenate([g.points for g in self.groups], axis=0)


def _as_array(image) -> np.ndarray:
    if isinstance(image, DesignImage):
        return image.pixels
    return np.asarray(image, dtype=np.float64)


# ---------------------------------------------------------------------------
# image processing

def crop_to_content(image, threshold: float | None = None) -> np.ndarray:
    """Tight bounding box of the detected edges, re-padded to a square."""
    px = _as_array(image)
    edges = gradient_magnitude(px, kernel="forward_diff", threshold=threshold)
    rc = np.argwhere(edges.values > 0)
    if len(rc) == 0:
        raise ValidationError("blank image: nothing to crop to")
    r0, c0 = rc.min(axis=0)
    r1, c1 = rc.max(axis=0)
    tight = px[r0:r1 + 1, c0:c1 + 1]
    h, w = tight.shape
    side = max(h, w)
    out = np.zeros((side, side))
    ro, co = (side - h) // 2, (side - w) // 2
    out[ro:ro + h, co:co + w] = tight
    return out


def _restore_right_corners(contour: np.ndarray) -> np.ndarray:
    """Replace the half-pixel diagonal chamfer that marching squares leaves at
    right-angle corners of binary regions with the sharp corner point. Only
    chamfers joining an axis-aligned horizontal and vertical segment (each at
    least one pixel long) are touched, so smoothed staircases stay smooth."""
    pts = contour
    closed = np.array_equal(pts[0], pts[-1])
    if closed:
        pts = pts[:-1]
    n = len(pts)
    if n < 4:
        return contour
    out = []
    skip = np.zeros(n, dtype=bool)
    for i in range(n):
        j = (i + 1) % n
        d = pts[j] - pts[i]
        if not (abs(abs(d[0]) - 0.5) < 1e-9 and abs(abs(d[1]) - 0.5) < 1e-9):
            continue
        prev = pts[i] - pts[i - 1]
        nxt = pts[(j + 1) % n] - pts[j]
        ph = abs(prev[0]) < 1e-9 and abs(prev[1]) >= 0.99
        pv = abs(prev[1]) < 1e-9 and abs(prev[0]) >= 0.99
        nh = abs(nxt[0]) < 1e-9 and abs(nxt[1]) >= 0.99
        nv = abs(nxt[1]) < 1e-9 and abs(nxt[0]) >= 0.99
        if (ph and nv) or (pv and nh):
            corner = np.array([pts[i][0] if ph else pts[j][0],
                               pts[j][1] if ph else pts[i][1]])
            skip[j] = True
            pts = pts.copy()
            pts[i] = corner
    for i in range(n):
        if not skip[i]:
            out.append(pts[i])
    out = np.array(out)
    if closed:
        out = np.vstack([out, out[0]])
    return out


def antialias_upsample(image, factor: int, subsamples: int = 4) -> np.ndarray:
    """Pixel -> vector -> pixel round trip: extract iso-0.5 contours by
    marching squares, then rasterize the filled polygons (even-odd rule) at
    `factor` x resolution with supersampled coverage.

    Borders are edge-replicated before contouring, so designs are expected to
    keep a margin inside the canvas (regions touching the border continue
    past it, as a vector tracer would treat them).
    """
    if factor not in (2, 4, 8):
        raise ValidationError("factor must be one of 2, 4, 8")
    px = _as_array(image)
    h, w = px.shape
    padded = np.pad(px, 1, mode="edge")
    contours = measure.find_contours(padded, 0.5)
    oh, ow = h * factor, w * factor
    if not contours:
        fill = 1.0 if px.mean() >= 0.5 else 0.0
        return np.full((oh, ow), fill)

    # output pixel j covers input coordinate range; x_out = f*x_in + (f-1)/2
    paths = []
    for c in contours:
        c = _restore_right_corners(c)
        pts = (c - 1.0) * factor + (factor - 1) / 2.0   # unpad, then scale
        paths.append(MplPath(pts[:, ::-1]))             # (x, y) order

    sub = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    cover = np.zeros((oh, ow))
    xs = np.arange(ow, dtype=np.float64)
    ys = np.arange(oh, dtype=np.float64)
    for dy in sub:
        for dx in sub:
            gx, gy = np.meshgrid(xs + dx, ys + dy)
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            count = np.zeros(len(pts), dtype=np.int64)
            for p in paths:
                bbox = p.get_extents()
                sel = ((pts[:, 0] >= bbox.x0 - 1) & (pts[:, 0] <= bbox.x1 + 1)
                       & (pts[:, 1] >= bbox.y0 - 1) & (pts[:, 1] <= bbox.y1 + 1))
                if sel.any():
                    count[sel] += p.contains_points(pts[sel])
            cover += (count % 2 == 1).reshape(oh, ow)
    return cover / subsamples**2


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def gradient_magnitude(image, kernel: str = "forward_diff",
                       threshold: float | None = None) -> EdgeMap:
    """Brightness gradient magnitude sqrt(Gx^2 + Gy^2), thresholded to edges.

    forward_diff: Gx = f(x+1, y) - f(x, y), Gy = f(x, y+1) - f(x, y) with
    replicated borders. sobel: 3x3 Sobel kernels (better on diagonals).
    Default threshold is half the per-image gradient maximum.
    """
    px = _as_array(image)
    if kernel == "forward_diff":
        gx = np.zeros_like(px)
        gy = np.zeros_like(px)
        gx[:, :-1] = px[:, 1:] - px[:, :-1]
        gy[:-1, :] = px[1:, :] - px[:-1, :]
    elif kernel == "sobel":
        pad = np.pad(px, 1, mode="edge")
        gx = np.zeros_like(px)
        gy = np.zeros_like(px)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                wx = SOBEL_X[dr + 1, dc + 1]
                wy = SOBEL_X[dc + 1, dr + 1]
                block = pad[1 + dr:1 + dr + px.shape[0], 1 + dc:1 + dc + px.shape[1]]
                gx += wx * block
                gy += wy * block
    else:
        raise ValidationError(f"unknown kernel {kernel!r}")
    mag = np.hypot(gx, gy)
    if threshold is None:
        threshold = 0.5 * mag.max()
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    return EdgeMap(values=(mag > threshold).astype(np.uint8), threshold=float(threshold))


def remove_rim_hub_edges(edges: EdgeMap, r_hub: float, r_rim: float) -> EdgeMap:
    """Clear edge pixels at radius <= r_hub or >= r_rim from the image center,
    keeping only the spoke-region edges."""
    if not r_hub < r_rim:
        raise ValidationError("need r_hub < r_rim")
    v = edges.values.copy()
    h, w = v.shape
    x = np.arange(w) + 0.5 - w / 2.0
    y = np.arange(h) + 0.5 - h / 2.0
    xx, yy = np.meshgrid(x, y)
    r = np.hypot(xx, yy)
    v[(r <= r_hub) | (r >= r_rim)] = 0
    return EdgeMap(values=v, threshold=edges.threshold)


# ---------------------------------------------------------------------------
# data processing

def sort_and_group(points: np.ndarray, threshold: float = 5.0) -> ContourSet:
    """Chain points by repeated nearest-neighbor moves, starting a new group
    whenever the jump reaches the threshold.

    Starting from the first stored point, the Euclidean-nearest remaining
    point is taken and deleted from the pool; ties break to the lowest pool
    index. Every input point lands in exactly one group.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return ContourSet(groups=[])
    remaining = np.ones(len(pts), dtype=bool)
    order = np.arange(len(pts))
    groups: list[list[int]] = [[0]]
    remaining[0] = False
    current = 0
    while remaining.any():
        idx = order[remaining]
        d = np.linalg.norm(pts[idx] - pts[current], axis=1)
        j = idx[np.argmin(d)]
        dist = np.linalg.norm(pts[j] - pts[current])
        remaining[j] = False
        if dist >= threshold:
            groups.append([j])
        else:
            groups[-1].append(j)
        current = j
    return ContourSet(groups=[PointGroup(points=pts[g]) for g in groups])


def decimate(group: PointGroup) -> PointGroup:
    """Thin an ordered group by the size-dependent rule: <= 3 points is noise
    (deleted), < 20 kept as-is, < 100 every 6th point, otherwise every 12th.
    The first point is always kept."""
    n = len(group)
    if n <= 3:
        return PointGroup(points=np.zeros((0, 2)), closed=group.closed)
    if n < 20:
        return PointGroup(points=group.points.copy(), closed=group.closed)
    step = 6 if n < 100 else 12
    return PointGroup(points=group.points[::step].copy(), closed=group.closed)


def center_and_scale(contours: ContourSet, scale: float = 0.97,
                     mm_per_pixel: float = 1.0) -> ContourSet:
    """Subtract the centroid of all points, then scale (0.97 shrink to fit
    the target wheel) and convert pixel units to mm."""
    pts = contours.all_points()
    if len(pts) == 0:
        raise ValidationError("empty contour set")
    centroid = pts.mean(axis=0)
    groups = [PointGroup(points=(g.points - centroid) * scale * mm_per_pixel,
                         closed=g.closed) for g in contours.groups]
    return ContourSet(groups=groups, provenance=contours.provenance, units="mm")


def close_curves(contours: ContourSet) -> ContourSet:
    """Append each group's first point at its end; groups with fewer than
    three distinct points are dropped."""
    groups = []
    for g in contours.groups:
        pts = g.points
        if len(pts) and np.array_equal(pts[0], pts[-1]):
            groups.append(PointGroup(points=pts.copy(), closed=True))
            continue
        distinct = np.unique(pts, axis=0)
        if len(distinct) < 3:
            continue
        groups.append(PointGroup(points=np.vstack([pts, pts[0]]), closed=True))
    return ContourSet(groups=groups, provenance=contours.provenance,
                      units=contours.units)


# ---------------------------------------------------------------------------
# persistence + chain

def contours_to_csv(contours: ContourSet) -> str:
    buf = io.StringIO()
    buf.write(f"# units: {contours.units}\n")
    writer = csv.writer(buf)
    writer.writerow(["group_id", "seq", "x", "y"])
    for gid, g in enumerate(contours.groups):
        for seq, (x, y) in enumerate(g.points):
            writer.writerow([gid, seq, f"{x:.6f}", f"{y:.6f}"])
    return buf.getvalue()


def save_contours(contours: ContourSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(contours_to_csv(contours))
    return path


def load_contours(path: str | Path) -> ContourSet:
    text = Path(path).read_text().splitlines()
    units = "px"
    if text and text[0].startswith("#"):
        units = text[0].split(":", 1)[1].strip()
        text = text[1:]
    rows = list(csv.DictReader(io.StringIO("\n".join(text))))
    by_group: dict[int, list[tuple[float, float]]] = {}
    for row in rows:
        by_group.setdefault(int(row["group_id"]), []).append(
            (float(row["x"]), float(row["y"])))
    groups = [PointGroup(points=np.array(by_group[g]),
                         closed=len(by_group[g]) > 1
                         and by_group[g][0] == by_group[g][-1])
              for g in sorted(by_group)]
    return ContourSet(groups=groups, units=units)


@dataclass
class ContourConfig:
    upsample: int = 4
    # forward differences give single-pixel edge chains, which the
    # nearest-neighbor grouping needs; sobel marks a two-pixel band on
    # antialiased ramps and remains available via gradient_magnitude
    edge_kernel: str = "forward_diff"
    edge_threshold: float | None = None    # None: half the gradient max
    hub_radius_frac: float = 0.26          # of the upsampled image half-width
    rim_radius_frac: float = 0.80
    group_threshold: float = 5.0
    shrink: float = 0.97
    mm_per_pixel: float = 1.0


def design_to_contours(image, config: ContourConfig | None = None,
                       provenance: str = "") -> ContourSet:
    """Full deterministic Stage-4 chain from a design grid to closed spoke
    curves in mm."""
    cfg = config or ContourConfig()
    px = antialias_upsample(_as_array(image), cfg.upsample)
    edges = gradient_magnitude(px, kernel=cfg.edge_kernel,
                               threshold=cfg.edge_threshold)
    half = px.shape[0] / 2.0
    edges = remove_rim_hub_edges(edges, cfg.hub_radius_frac * half,
                                 cfg.rim_radius_frac * half)
    grouped = sort_and_group(edges.points(), cfg.group_threshold)
    thinned = ContourSet(groups=[decimate(g) for g in grouped.groups],
                         provenance=provenance)
    thinned.groups = [g for g in thinned.groups if len(g) > 0]
    if not thinned.groups:
        return ContourSet(groups=[], provenance=provenance, units="mm")
    scaled = center_and_scale(thinned, cfg.shrink, cfg.mm_per_pixel)
    return close_curves(scaled)
