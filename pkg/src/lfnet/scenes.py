"""Procedural multi-view scenes, an analytic ray tracer and dataset files.

Scenes are flat-shaded spheres and axis-aligned boxes inside the cube
``[-0.5, 0.5]^3``. World axes: +y up.

Dataset layout: one directory per scene holding ``manifest.json`` and 8-bit
RGB PNGs. Manifest schema::

    {"scene_id": str, "height": int, "width": int,
     "views": [{"image": relative path, "K": 9 floats, "R": 9 floats,
                "T": 3 floats, "z_near": float, "z_far": float,
                "split": "train" | "test"}]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera, InvalidCamera, ray_grid

BOUNDS = 0.5
MIN_SIZE = 0.05


class DatasetError(IOError):
    pass


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" | "box"
    center: tuple
    size: tuple  # (radius,) for spheres, half-extents (x, y, z) for boxes
    albedo: tuple

    def extent(self):
        """Half-extent along each axis."""
        s = np.asarray(self.size, dtype=np.float64)
        return np.repeat(s, 3) if self.kind == "sphere" else s


@dataclass(frozen=True)
class Scene:
    primitives: tuple = ()
    background: tuple = (1.0, 1.0, 1.0)

    def to_json(self):
        return {
            "primitives": [
                {"kind": p.kind, "center": list(p.center), "size": list(p.size), "albedo": list(p.albedo)}
                for p in self.primitives
            ],
            "background": list(self.background),
        }

    @classmethod
    def from_json(cls, obj):
        prims = tuple(
            Primitive(p["kind"], tuple(p["center"]), tuple(p["size"]), tuple(p["albedo"]))
            for p in obj["primitives"]
        )
        return cls(prims, tuple(obj["background"]))


def scene_hash(scene):
    blob = json.dumps(scene.to_json(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def generate_scene(seed, max_primitives=8):
    """Deterministic random scene of 1..``max_primitives`` coloured primitives."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_primitives + 1))
    prims = []
    for _ in range(n):
        kind = "sphere" if rng.random() < 0.5 else "box"
        if kind == "sphere":
            size = (float(rng.uniform(0.08, 0.25)),)
        else:
            size = tuple(float(s) for s in rng.uniform(MIN_SIZE, 0.2, size=3))
        ext = np.repeat(size, 3) if kind == "sphere" else np.asarray(size)
        center = tuple(float(c) for c in rng.uniform(-BOUNDS + ext, BOUNDS - ext))
        albedo = tuple(float(a) for a in rng.random(3))
        prims.append(Primitive(kind, center, size, albedo))
    background = tuple(float(b) for b in rng.random(3))
    return Scene(tuple(prims), background)


def _hit_sphere(o, d, center, radius):
    oc = o - center
    b = np.einsum("ij,ij->i", oc, d)
    c = np.einsum("ij,ij->i", oc, oc) - radius**2
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 0, t0, t1)
    return np.where(hit & (t > 0), t, np.inf)


def _hit_box(o, d, center, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (center - half - o) * inv
        tb = (center + half - o) * inv
    tmin = np.nanmax(np.minimum(ta, tb), axis=1)
    tmax = np.nanmin(np.maximum(ta, tb), axis=1)
    t = np.where(tmin > 0, tmin, tmax)
    return np.where((tmax >= tmin) & (t > 0), t, np.inf)


def raytrace_gt(scene, cam, supersample=1):
    """Flat-shaded render (H, W, 3): nearest hit's albedo, else the background.

    ``supersample`` > 1 traces an s x s grid per pixel and box-averages it.
    """
    if supersample > 1:
        K = cam.K.copy()
        K[:2] *= supersample
        big = Camera(K, cam.R, cam.T, cam.z_near, cam.z_far,
                     cam.height * supersample, cam.width * supersample)
        img = raytrace_gt(scene, big)
        s = supersample
        return img.reshape(cam.height, s, cam.width, s, 3).mean(axis=(1, 3))
    origins, dirs = ray_grid(cam)
    o = origins.reshape(-1, 3)
    d = dirs.reshape(-1, 3)
    best = np.full(o.shape[0], np.inf)
    color = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), o.shape).copy()
    for prim in scene.primitives:
        center = np.asarray(prim.center, dtype=np.float64)
        if prim.kind == "sphere":
            t = _hit_sphere(o, d, center, prim.size[0])
        elif prim.kind == "box":
            t = _hit_box(o, d, center, np.asarray(prim.size, dtype=np.float64))
        else:
            raise ValueError(f"unknown primitive kind {prim.kind!r}")
        closer = t < best
        best = np.where(closer, t, best)
        color[closer] = prim.albedo
    return color.reshape(cam.height, cam.width, 3)


def look_at_rotation(position, target, up=(0.0, 1.0, 0.0)):
    """World-from-camera rotation whose +z axis points from ``position`` to ``target``."""
    forward = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    forward /= np.linalg.norm(forward)
    down = -np.asarray(up, dtype=np.float64)
    right = np.cross(down, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def intrinsics(size, fov_deg):
    f = 0.5 * size / np.tan(np.radians(fov_deg) / 2)
    return np.array([[f, 0.0, size / 2], [0.0, f, size / 2], [0.0, 0.0, 1.0]])


def camera_ring(n_views, radius=2.0, elevation=0.0, look_at=(0.0, 0.0, 0.0), size=64,
                fov_deg=40.0, margin=0.9, azimuth_offset=0.0):
    """``n_views`` cameras evenly spaced in azimuth (degrees measured from -z), all aimed at ``look_at``.

    Depth bounds are ``radius -/+ margin``; elevation is in degrees.
    """
    if n_views < 1:
        raise ValueError("need at least one view")
    el = np.radians(elevation)
    center = np.asarray(look_at, dtype=np.float64)
    K = intrinsics(size, fov_deg)
    cams = []
    for k in range(n_views):
        az = np.radians(azimuth_offset + 360.0 * k / n_views)
        pos = center + radius * np.array([np.sin(az) * np.cos(el), np.sin(el), -np.cos(az) * np.cos(el)])
        R = look_at_rotation(pos, center)
        cams.append(Camera(K, R, pos, radius - margin, radius + margin, size, size))
    return cams


def azimuth_of(cam, look_at=(0.0, 0.0, 0.0)):
    """Azimuth in degrees of a camera position about ``look_at`` (0 at -z, increasing toward +x)."""
    p = cam.T - np.asarray(look_at)
    return float(np.degrees(np.arctan2(p[0], -p[2])) % 360.0)


# -- dataset files --------------------------------------------------------------

@dataclass
class ViewRecord:
    image: str
    camera: Camera
    split: str
    pixels: np.ndarray = field(default=None, repr=False)  # uint8 (H, W, 3)

    @property
    def image_float(self):
        return self.pixels.astype(np.float64) / 255.0


@dataclass
class DatasetManifest:
    scene_id: str
    height: int
    width: int
    views: list
    root: Path = None

    def split(self, name):
        return [v for v in self.views if v.split == name]

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return manifest_json(self) == manifest_json(other)


def to_uint8(image):
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def manifest_json(manifest):
    return {
        "scene_id": manifest.scene_id,
        "height": int(manifest.height),
        "width": int(manifest.width),
        "views": [
            {
                "image": v.image,
                "K": [float(x) for x in v.camera.K.reshape(-1)],
                "R": [float(x) for x in v.camera.R.reshape(-1)],
                "T": [float(x) for x in v.camera.T],
                "z_near": float(v.camera.z_near),
                "z_far": float(v.camera.z_far),
                "split": v.split,
            }
            for v in manifest.views
        ],
    }


def export_dataset(manifest, out_dir):
    """Write PNGs and ``manifest.json`` under ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v in manifest.views:
        if v.pixels is None:
            raise DatasetError(f"view {v.image} has no pixels to export")
        path = out_dir / v.image
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(v.pixels, mode="RGB").save(path, format="PNG")
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest_json(manifest), indent=1), encoding="utf-8")
    return path


def _load_png(path, height, width):
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DatasetError(f"missing image file: {path}") from None
    except OSError as exc:
        raise DatasetError(f"cannot decode image file {path}: {exc}") from None
    if arr.shape != (height, width, 3):
        raise DatasetError(f"image {path} has shape {arr.shape}, expected {(height, width, 3)}")
    return arr


def import_dataset(manifest_path):
    """Load and validate a manifest and all its images."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        obj = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"missing manifest: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from None
    root = manifest_path.parent
    h, w = int(obj["height"]), int(obj["width"])
    views = []
    for i, v in enumerate(obj["views"]):
        if v.get("split") not in ("train", "test"):
            raise DatasetError(f"view {i} in {manifest_path}: split must be 'train' or 'test'")
        try:
            cam = Camera(np.array(v["K"]).reshape(3, 3), np.array(v["R"]).reshape(3, 3),
                         np.array(v["T"]), v["z_near"], v["z_far"], h, w)
        except (InvalidCamera, ValueError) as exc:
            raise DatasetError(f"view {i} ({v.get('image')}) in {manifest_path}: {exc}") from None
        pixels = _load_png(root / v["image"], h, w)
        views.append(ViewRecord(v["image"], cam, v["split"], pixels))
    return DatasetManifest(obj["scene_id"], h, w, views, root)


def make_scene_dataset(scene_id, scene, cameras, test_views=(), supersample=1):
    """Render ``scene`` from ``cameras`` into an in-memory manifest."""
    views = []
    for i, cam in enumerate(cameras):
        img = raytrace_gt(scene, cam, supersample=supersample)
        split = "test" if i in set(test_views) else "train"
        views.append(ViewRecord(f"view_{i:03d}.png", cam, split, to_uint8(img)))
    return DatasetManifest(scene_id, cameras[0].height, cameras[0].width, views)


def generate_dataset(out_dir, seed, n_scenes, n_views, size, input_views=None, first_index=0, **ring):
    """Render ``n_scenes`` procedural scenes to ``out_dir/scene_XXXX``; returns manifest paths.

    With ``input_views`` given, every other view is tagged ``test``.
    """
    paths = []
    cams = camera_ring(n_views, size=size, **ring)
    for s in range(first_index, first_index + n_scenes):
        scene = generate_scene(seed * 100003 + s)
        tests = () if input_views is None else [i for i in range(n_views) if i not in set(input_views)]
        manifest = make_scene_dataset(f"scene_{s:04d}", scene, cams, tests)
        path = export_dataset(manifest, Path(out_dir) / manifest.scene_id)
        (path.parent / "scene.json").write_text(json.dumps(scene.to_json(), indent=1), encoding="utf-8")
        paths.append(path)
    return paths
