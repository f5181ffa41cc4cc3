"""Canonical 2D design representations and transforms.

A design is a square grayscale grid with values in [0, 1]. This module
provides the geometric transforms used for augmentation, the pixelwise L1
metric with greedy deduplication, and a parametric generator of synthetic
reference wheels (rim + hub + spiral spokes).

Pixel (r, c) is placed at physical coordinates
``(x, y) = (c + 0.5 - W/2, r + 0.5 - H/2)`` so that index reversal along an
axis is an exact mirror symmetry for any resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

VALID_PROVENANCE = ("reference", "topopt", "decoded", "test")


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class DesignImage:
    """Square grayscale design, values in [0, 1]."""

    pixels: np.ndarray
    id: str
    provenance: str = "test"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        object.__setattr__(self, "pixels", px)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValidationError(f"design must be square, got shape {px.shape}")
        n = px.shape[0]
        if n < 32 or (n & (n - 1)) != 0:
            raise ValidationError(f"resolution must be a power of two >= 32, got {n}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("pixel values must be finite and in [0, 1]")
        if self.provenance not in VALID_PROVENANCE:
            raise ValidationError(f"unknown provenance {self.provenance!r}")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray, id: str | None = None,
                    provenance: str | None = None) -> "DesignImage":
        return DesignImage(pixels=pixels, id=id or self.id,
                           provenance=provenance or self.provenance)


@dataclass
class DesignSet:
    """Ordered collection of designs plus a per-item metadata manifest."""

    items: list[DesignImage]
    manifest: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        ids = [im.id for im in self.items]
        if len(set(ids)) != len(ids):
            raise ValidationError("design ids must be unique")
        for im in self.items:
            self.manifest.setdefault(im.id, {})

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def get(self, design_id: str) -> DesignImage:
        for im in self.items:
            if im.id == design_id:
                return im
        raise KeyError(design_id)


@dataclass(frozen=True)
class ReferenceParams:
    """Parameters of a synthetic reference wheel silhouette."""

    n_spokes: int
    spoke_width: float        # full arc width as a fraction of the outer radius
    spiral_angle: float       # total sweep from hub to rim, degrees
    hub_radius_frac: float = 0.24
    rim_inner_radius_frac: float = 0.82
    bore_radius_frac: float = 0.10

    def __post_init__(self):
        if self.n_spokes < 1:
            raise ValidationError("n_spokes must be >= 1")
        if not (0.0 < self.spoke_width <= 0.5):
            raise ValidationError("spoke_width must lie in (0, 0.5]")
        if not (0.0 < self.hub_radius_frac < self.rim_inner_radius_frac < 1.0):
            raise ValidationError("need 0 < hub_radius_frac < rim_inner_radius_frac < 1")
        if not (0.0 <= self.bore_radius_frac < self.hub_radius_frac):
            raise ValidationError("bore_radius_frac must lie in [0, hub_radius_frac)")


def pixel_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Physical (x, y) coordinates of pixel centers for an n x n grid."""
    c = np.arange(n) + 0.5 - n / 2.0
    x, y = np.meshgrid(c, c)          # x varies along columns, y along rows
    return x, y


# ---------------------------------------------------------------------------
# transforms

def rotate(image: DesignImage, angle: float) -> DesignImage:
    """Rotate about the image center by `angle` degrees (counterclockwise).

    Multiples of 90 degrees are exact index permutations. Other angles use
    bilinear resampling with zero fill outside the source domain; the result
    is clamped back to [0, 1].
    """
    a = float(angle) % 360.0
    px = image.pixels
    if a == 0.0:
        out = px.copy()
    elif a % 90.0 == 0.0:
        out = np.rot90(px, k=int(a // 90)).copy()
    else:
        out = _rotate_bilinear(px, a)
    return image.with_pixels(np.clip(out, 0.0, 1.0))


def _rotate_bilinear(px: np.ndarray, angle_deg: float) -> np.ndarray:
    n = px.shape[0]
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    x, y = pixel_coords(n)
    # inverse map: output pixel samples the source at the backward-rotated point
    xs = cos * x + sin * y
    ys = -sin * x + cos * y
    return _bilinear_sample(px, xs, ys)


def _bilinear_sample(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample `px` at physical coordinates (xs, ys), zero outside the grid."""
    n = px.shape[0]
    ci = xs + n / 2.0 - 0.5           # fractional column index
    ri = ys + n / 2.0 - 0.5
    c0 = np.floor(ci).astype(int)
    r0 = np.floor(ri).astype(int)
    fc = ci - c0
    fr = ri - r0
    out = np.zeros_like(px)
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        w = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
        rr, cc = r0 + dr, c0 + dc
        inside = (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n)
        vals = np.where(inside, px[np.clip(rr, 0, n - 1), np.clip(cc, 0, n - 1)], 0.0)
        out += w * vals
    return out


def flip_horizontal(image: DesignImage) -> DesignImage:
    """Exact left-right mirror (column reversal)."""
    return image.with_pixels(image.pixels[:, ::-1].copy())


def l1_distance(a: DesignImage | np.ndarray, b: DesignImage | np.ndarray) -> float:
    """Sum over pixels of |a - b|. Requires equal resolutions."""
    pa = a.pixels if isinstance(a, DesignImage) else np.asarray(a)
    pb = b.pixels if isinstance(b, DesignImage) else np.asarray(b)
    if pa.shape != pb.shape:
        raise ValidationError(f"resolution mismatch: {pa.shape} vs {pb.shape}")
    return float(np.abs(pa - pb).sum())


def deduplicate(designs: DesignSet, threshold: float) -> DesignSet:
    """Greedy scan in manifest order; keep an item iff its L1 distance to every
    previously kept item is >= threshold."""
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    kept: list[DesignImage] = []
    kept_px: list[np.ndarray] = []
    for im in designs.items:
        flat = im.pixels.ravel()
        if kept_px:
            d = np.abs(np.stack(kept_px) - flat).sum(axis=1)
            if d.min() < threshold:
                continue
        kept.append(im)
        kept_px.append(flat)
    manifest = {im.id: dict(designs.manifest.get(im.id, {})) for im in kept}
    return DesignSet(items=kept, manifest=manifest)


# ---------------------------------------------------------------------------
# synthetic references

def synth_reference(params: ReferenceParams, resolution: int = 64,
                    id: str | None = None) -> DesignImage:
    """Binary wheel silhouette: rim annulus, hub disc with center bore, and
    `n_spokes` spokes swept by `spiral_angle` between hub and rim.

    A pixel belongs to a spoke when its arc distance to the nearest spoke
    centerline (at the pixel's radius) is at most half the spoke width, so
    each spoke contributes an area of exactly width x radial span regardless
    of the sweep.
    """
    n = int(resolution)
    x, y = pixel_coords(n)
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)

    r_out = 0.48 * n
    r_rim = params.rim_inner_radius_frac * r_out
    r_hub = params.hub_radius_frac * r_out
    r_bore = params.bore_radius_frac * r_out
    half_w = 0.5 * params.spoke_width * r_out
    sweep = np.deg2rad(params.spiral_angle)

    rim = (r >= r_rim) & (r <= r_out)
    hub = (r <= r_hub) & (r > r_bore)

    gap = (r > r_hub) & (r < r_rim)
    t = np.zeros_like(r)
    span = max(r_rim - r_hub, 1e-12)
    t[gap] = (r[gap] - r_hub) / span
    pitch = 2.0 * np.pi / params.n_spokes
    # angular offset to the nearest spoke centerline, wrapped to [-pitch/2, pitch/2]
    rel = theta - sweep * t
    off = rel - pitch * np.round(rel / pitch)
    spokes = gap & (np.abs(off) * np.maximum(r, 1e-9) <= half_w)

    px = (rim | hub | spokes).astype(np.float64)
    name = id or (f"ref-s{params.n_spokes}-w{params.spoke_width:.3f}"
                  f"-a{params.spiral_angle:+.1f}")
    return DesignImage(pixels=px, id=name, provenance="reference")


def reference_grid(count: int, resolution: int = 64, seed: int = 0) -> DesignSet:
    """Deterministic family of `count` synthetic references with jittered
    spoke count, width, sweep, and radii. Stand-in for a crawled corpus."""
    rng = np.random.default_rng(seed)
    items, manifest = [], {}
    for i in range(count):
        params = ReferenceParams(
            n_spokes=int(rng.integers(3, 11)),
            spoke_width=float(rng.uniform(0.05, 0.18)),
            spiral_angle=float(rng.uniform(-45.0, 45.0)),
            hub_radius_frac=float(rng.uniform(0.20, 0.28)),
            rim_inner_radius_frac=float(rng.uniform(0.78, 0.86)),
            bore_radius_frac=float(rng.uniform(0.07, 0.11)),
        )
        im = synth_reference(params, resolution, id=f"ref-{i:04d}")
        items.append(im)
        manifest[im.id] = {
            "provenance": "reference",
            "params": {
                "n_spokes": params.n_spokes,
                "spoke_width": params.spoke_width,
                "spiral_angle": params.spiral_angle,
                "hub_radius_frac": params.hub_radius_frac,
                "rim_inner_radius_frac": params.rim_inner_radius_frac,
                "bore_radius_frac": params.bore_radius_frac,
            },
        }
    return DesignSet(items=items, manifest=manifest)


def augment_rotations(designs: DesignSet, copies: int, seed: int = 0) -> DesignSet:
    """Each design contributes `copies` randomly rotated variants (seeded).

    The manifest records the source id and angle of every variant.
    """
    if copies < 1:
        raise ValidationError("copies must be >= 1")
    rng = np.random.default_rng(seed)
    items, manifest = [], {}
    for im in designs.items:
        angles = rng.uniform(0.0, 360.0, size=copies)
        for j, ang in enumerate(angles):
            rot = rotate(im, float(ang))
            rid = f"{im.id}/rot{j:02d}"
            items.append(DesignImage(pixels=rot.pixels, id=rid, provenance=im.provenance))
            manifest[rid] = {"source": im.id, "angle": float(ang)}
    return DesignSet(items=items, manifest=manifest)


# ---------------------------------------------------------------------------
# persistence

def save_png(image: DesignImage, path: str | Path) -> Path:
    """Write as 8-bit grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
    return path


def load_png(path: str | Path, id: str | None = None,
             provenance: str = "test") -> DesignImage:
    path = Path(path)
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0
    return DesignImage(pixels=arr, id=id or path.stem, provenance=provenance)


def save_set(designs: DesignSet, directory: str | Path) -> Path:
    """Write every design as PNG plus a JSON manifest with ids and metadata."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for im in designs.items:
        fname = im.id.replace("/", "__") + ".png"
        save_png(im, directory / fname)
        rows.append({"id": im.id, "file": fname, "provenance": im.provenance,
                     "meta": designs.manifest.get(im.id, {})})
    with open(directory / "manifest.json", "w") as fh:
        json.dump({"items": rows}, fh, indent=1, sort_keys=True)
    return directory


def load_set(directory: str | Path) -> DesignSet:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        data = json.load(fh)
    items, manifest = [], {}
    for row in data["items"]:
        im = load_png(directory / row["file"], id=row["id"],
                      provenance=row.get("provenance", "test"))
        items.append(im)
        manifest[row["id"]] = row.get("meta", {})
    return DesignSet(items=items, manifest=manifest)
