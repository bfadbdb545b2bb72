"""Synthetic tactile-image generator.

A phantom is a jittered lattice of pits pressed into an elastic layer; the
four Kudo-style classes differ in pit shape: R round, A star-shaped
(asteroid), O elongated ovals, G a labyrinth of gyrus ridges. Heights are
in micrometres, 0 at the undeformed surface and negative inside pits, with
a cosine ramp over the pit walls. Softer sensor materials imprint a scaled
fraction of the full depth; a partial-contact orientation attenuates the
imprint across a half-plane ramp. Rendering is Lambertian under three
colored lights 120 degrees apart, one per RGB channel, which turns surface
slope into channel-coded shading.

Everything is deterministic in the seeds: the same spec and seed give a
bit-identical heightmap, and `generate_dataset` writes byte-identical PNG
trees for the same master seed.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image
from scipy.ndimage import distance_transform_edt

from .errors import ConfigError, DataError

KUDO_CLASSES = ("A", "G", "O", "R")

# Salts keep the independent random streams (geometry, contact angle) from
# colliding when they share one variation seed.
_SALT_HEIGHT = 101
_SALT_CONTACT = 202


@dataclass(frozen=True)
class MaterialProfile:
    name: str
    shore_hardness: str
    imprint_scale: float


MATERIALS = {
    "DM400": MaterialProfile("DM400", "A 1-2", 0.55),
    "DM600": MaterialProfile("DM600", "A 30-40", 0.75),
    "A40": MaterialProfile("A40", "A 40", 0.85),
    "A70": MaterialProfile("A70", "A 70", 1.00),
}
MATERIAL_ORDER = ("DM400", "DM600", "A40", "A70")

# (major, minor) feature axes per class, micrometres. For G the value is
# the ridge width; the ridge field wavelength is the lattice spacing.
DEFAULT_CLASS_AXES_UM = {
    "A": (450.0, 450.0),
    "G": (300.0, 300.0),
    "O": (560.0, 280.0),
    "R": (400.0, 400.0),
}

STAR_INNER_RATIO = 0.45


@dataclass
class PhantomSpec:
    kudo_class: str
    variation_seed: int
    material: str = "A70"
    orientation: str = "full"
    spacing_um: float = 600.0
    pit_depth_um: float = 500.0
    axis_jitter_um: tuple = (100.0, 150.0)
    spacing_jitter_um: tuple = (20.0, 30.0)
    wall_um: float = 100.0
    axes_um: tuple = None  # defaults to the class entry

    def __post_init__(self):
        if self.kudo_class not in KUDO_CLASSES:
            raise ConfigError(f"kudo_class must be one of {KUDO_CLASSES}")
        if self.material not in MATERIALS:
            raise ConfigError(f"unknown material {self.material!r}")
        if self.orientation not in ("full", "partial"):
            raise ConfigError("orientation must be 'full' or 'partial'")
        if self.axes_um is None:
            self.axes_um = DEFAULT_CLASS_AXES_UM[self.kudo_class]
        major = max(self.axes_um)
        if self.spacing_um <= major:
            raise ConfigError(
                f"spacing {self.spacing_um} must exceed major axis {major}")
        if self.pit_depth_um <= 0 or self.wall_um <= 0:
            raise ConfigError("pit_depth_um and wall_um must be positive")
        for lo, hi in (self.axis_jitter_um, self.spacing_jitter_um):
            if not (0 <= lo <= hi):
                raise ConfigError("jitter ranges must satisfy 0 <= lo <= hi")


@dataclass
class RenderConfig:
    azimuths_deg: tuple = (0.0, 120.0, 240.0)
    elevation_deg: float = 50.0
    ambient: tuple = (0.10, 0.10, 0.10)
    diffuse_gain: float = 0.8

    def __post_init__(self):
        if len(self.azimuths_deg) != 3 or len(set(self.azimuths_deg)) != 3:
            raise ConfigError("exactly three distinct light azimuths required")
        if len(self.ambient) != 3 or any(not 0 <= a < 1 for a in self.ambient):
            raise ConfigError("ambient must be three values in [0, 1)")
        if self.diffuse_gain <= 0 or not 0 < self.elevation_deg < 90:
            raise ConfigError("need diffuse_gain > 0 and elevation in (0, 90)")


def _signed_uniform(rng, lo: float, hi: float) -> float:
    """Uniform magnitude in [lo, hi] with a random sign."""
    mag = rng.uniform(lo, hi)
    return mag if rng.random() < 0.5 else -mag


def _pit_mask(spec: PhantomSpec, shape, pitch: float, rng) -> np.ndarray:
    """Rasterize the jittered pit lattice for the discrete-pit classes."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    spacing = spec.spacing_um
    major, minor = spec.axes_um
    ny = int(math.ceil(h * pitch / spacing)) + 2
    nx = int(math.ceil(w * pitch / spacing)) + 2
    yy, xx = np.mgrid[0:h, 0:w]
    for iy in range(-1, ny):
        for ix in range(-1, nx):
            cy = (iy + 0.5) * spacing + _signed_uniform(rng, *spec.spacing_jitter_um)
            cx = (ix + 0.5) * spacing + _signed_uniform(rng, *spec.spacing_jitter_um)
            # One size deviation per pit, applied proportionally to both
            # axes so each pit keeps the class aspect.
            dev = _signed_uniform(rng, *spec.axis_jitter_um)
            scale = (major + dev) / major
            a = 0.5 * (major + dev)
            b = 0.5 * minor * scale
            if spec.kudo_class == "A":
                points = int(rng.integers(5, 7))
                phase = rng.uniform(0.0, 2.0 * math.pi)
            elif spec.kudo_class == "O":
                theta = rng.uniform(0.0, math.pi)
            else:
                theta = 0.0
            # Bounding box in pixels, clipped to the frame.
            r_px = a / pitch + 1.0
            y0 = max(0, int(cy / pitch - r_px))
            y1 = min(h, int(cy / pitch + r_px) + 2)
            x0 = max(0, int(cx / pitch - r_px))
            x1 = min(w, int(cx / pitch + r_px) + 2)
            if y0 >= y1 or x0 >= x1:
                continue
            dy = (yy[y0:y1, x0:x1] + 0.5) * pitch - cy
            dx = (xx[y0:y1, x0:x1] + 0.5) * pitch - cx
            if spec.kudo_class == "A":
                r = np.hypot(dx, dy)
                ang = np.arctan2(dy, dx) - phase
                u = (ang * points / (2.0 * math.pi)) % 1.0
                tri = 2.0 * np.abs(u - 0.5)  # 1 at a point, 0 in a valley
                r_in = STAR_INNER_RATIO * a
                mask[y0:y1, x0:x1] |= r <= r_in + (a - r_in) * tri
            else:
                ct, st = math.cos(theta), math.sin(theta)
                u = ct * dx + st * dy
                v = -st * dx + ct * dy
                mask[y0:y1, x0:x1] |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask


def _gyrus_mask(spec: PhantomSpec, shape, pitch: float, rng) -> np.ndarray:
    """Labyrinth valleys: band-pass filtered noise below its median."""
    h, w = shape
    noise = rng.standard_normal((h, w))
    spectrum = np.fft.rfft2(noise)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    freq = np.hypot(fy, fx)
    f0 = pitch / spec.spacing_um  # one lattice spacing per ridge period
    band = np.exp(-0.5 * ((freq - f0) / (0.3 * f0)) ** 2)
    band[0, 0] = 0.0
    filtered = np.fft.irfft2(spectrum * band, s=(h, w))
    return filtered < np.median(filtered)


def synthesize_heightmap(spec: PhantomSpec, resolution=(256, 256),
                         pixel_pitch_um: float = 25.0) -> np.ndarray:
    """Full-contact heightmap in micrometres (float64, 0 = surface)."""
    h, w = resolution
    if pixel_pitch_um > 100.0:
        raise DataError(
            f"pixel pitch {pixel_pitch_um} um undersamples the pit walls")
    if min(h, w) * pixel_pitch_um < 5.0 * spec.spacing_um:
        raise DataError(
            f"frame {h}x{w} at {pixel_pitch_um} um/px covers fewer than "
            f"5x5 lattice spacings")
    rng = np.random.default_rng(
        np.random.SeedSequence([_SALT_HEIGHT, spec.variation_seed]))
    if spec.kudo_class == "G":
        mask = _gyrus_mask(spec, (h, w), pixel_pitch_um, rng)
    else:
        mask = _pit_mask(spec, (h, w), pixel_pitch_um, rng)
    # Cosine ramp from the rim down to the floor across wall_um.
    inside_um = distance_transform_edt(mask) * pixel_pitch_um
    t = np.minimum(inside_um / spec.wall_um, 1.0)
    height = -spec.pit_depth_um * 0.5 * (1.0 - np.cos(math.pi * t))
    height[t >= 1.0] = -spec.pit_depth_um  # floors hit the depth exactly
    return height


def apply_contact(heightmap: np.ndarray, spec: PhantomSpec,
                  pixel_pitch_um: float = 25.0) -> np.ndarray:
    """Scale by the material imprint and, for partial orientation, fade the
    imprint to zero across a band 20% of the frame wide at a seeded angle."""
    out = heightmap * MATERIALS[spec.material].imprint_scale
    if spec.orientation == "partial":
        h, w = heightmap.shape
        rng = np.random.default_rng(
            np.random.SeedSequence([_SALT_CONTACT, spec.variation_seed]))
        ang = rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        s = (xx - 0.5 * (w - 1)) * math.cos(ang) + (yy - 0.5 * (h - 1)) * math.sin(ang)
        band = 0.2 * w
        t = np.clip((s + 0.5 * band) / band, 0.0, 1.0)
        out = out * (0.5 * (1.0 + np.cos(math.pi * t)))
    return out


def render_tactile_image(heightmap: np.ndarray, config: RenderConfig = None,
                         pixel_pitch_um: float = 25.0) -> np.ndarray:
    """Lambertian render to an (h, w, 3) uint8 image, one light per channel."""
    config = config or RenderConfig()
    gy, gx = np.gradient(heightmap, pixel_pitch_um)
    inv_norm = 1.0 / np.sqrt(gx * gx + gy * gy + 1.0)
    nx, ny, nz = -gx * inv_norm, -gy * inv_norm, inv_norm
    el = math.radians(config.elevation_deg)
    img = np.empty(heightmap.shape + (3,), dtype=np.uint8)
    for c, az_deg in enumerate(config.azimuths_deg):
        az = math.radians(az_deg)
        lx, ly, lz = math.cos(az) * math.cos(el), math.sin(az) * math.cos(el), math.sin(el)
        diffuse = np.maximum(0.0, nx * lx + ny * ly + nz * lz)
        value = np.clip(config.ambient[c] + config.diffuse_gain * diffuse, 0.0, 1.0)
        img[..., c] = np.rint(value * 255.0).astype(np.uint8)
    return img


@dataclass
class GenConfig:
    per_class: tuple = (57, 57, 55, 60)  # A, G, O, R
    out_size: int = 224
    margin_px: int = 16
    pixel_pitch_um: float = 0.0  # 0 = derive from frame size
    partial_fraction: float = 80.0 / 229.0
    materials: tuple = MATERIAL_ORDER
    render: RenderConfig = field(default_factory=RenderConfig)
    phantom: PhantomSpec = None  # template; class/seed/material/orientation overridden

    def __post_init__(self):
        if isinstance(self.per_class, int):
            self.per_class = (self.per_class,) * 4
        if len(self.per_class) != 4 or any(c < 0 for c in self.per_class):
            raise ConfigError("per_class needs one non-negative count per class")
        if self.out_size < 8 or self.margin_px < 0:
            raise ConfigError("bad frame geometry")
        if not 0 <= self.partial_fraction <= 1:
            raise ConfigError("partial_fraction must lie in [0, 1]")
        for m in self.materials:
            if m not in MATERIALS:
                raise ConfigError(f"unknown material {m!r}")

    def pitch(self) -> float:
        if self.pixel_pitch_um > 0:
            return self.pixel_pitch_um
        extent = self.out_size + 2 * self.margin_px
        spacing = (self.phantom.spacing_um if self.phantom is not None
                   else PhantomSpec("R", 0).spacing_um)
        return max(25.0, 5.2 * spacing / extent)


def _derive_seed(master_seed: int, class_idx: int, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, class_idx, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(out_dir: str, config: GenConfig = None,
                     master_seed: int = 0) -> str:
    """Write PNGs plus a manifest CSV; returns the manifest path.

    Samples cycle through the material list; partial orientation is spread
    evenly through each class at the configured fraction.
    """
    config = config or GenConfig()
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    pitch = config.pitch()
    extent = config.out_size + 2 * config.margin_px
    m = config.margin_px
    rows = []
    for class_idx, cls in enumerate(KUDO_CLASSES):
        count = config.per_class[class_idx]
        n_partial = round(count * config.partial_fraction)
        for i in range(count):
            seed = _derive_seed(master_seed, class_idx, i)
            partial = (i + 1) * n_partial // count > i * n_partial // count
            template = config.phantom
            if template is None:
                spec = PhantomSpec(cls, seed)
            else:
                spec = replace(template, kudo_class=cls, variation_seed=seed,
                               axes_um=None)
            spec.material = config.materials[i % len(config.materials)]
            spec.orientation = "partial" if partial else "full"
            hmap = synthesize_heightmap(spec, (extent, extent), pitch)
            hmap = apply_contact(hmap, spec, pitch)
            img = render_tactile_image(hmap, config.render, pitch)
            if m:
                img = img[m:m + config.out_size, m:m + config.out_size]
            rel = os.path.join("images", f"{cls}_{i:04d}.png")
            Image.fromarray(img).save(os.path.join(out_dir, rel))
            rows.append((rel, cls, spec.material, spec.orientation, seed))
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class", "material", "orientation", "seed"])
        writer.writerows(rows)
    return manifest
