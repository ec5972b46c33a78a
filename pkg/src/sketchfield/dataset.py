"""Multi-view sketch datasets and the synthetic oracle scene.

A dataset is a directory holding binary sketch PNGs plus a ``manifest.json``
mapping each sketch to a camera (4x4 camera-to-world transform, row-major,
plus pinhole intrinsics) and carrying the text prompt.  The oracle scene is
a small collection of analytic solids rendered exactly by ray intersection;
it backs the mock guidance provider and the synthetic test datasets.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from . import metrics as metrics_mod
from .renderer import CameraPose, generate_rays, look_at_pose, look_at_rotation


class DatasetError(ValueError):
    """Malformed dataset directory or manifest."""


@dataclass
class SketchView:
    sketch: np.ndarray        # (h, w) uint8 in {0, 1}, 1 = stroke
    pose: CameraPose
    view_id: str


@dataclass
class SketchDataset:
    views: list
    prompt: str
    scene_bounds: np.ndarray = dc_field(
        default_factory=lambda: np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))

    def __post_init__(self):
        if len(self.views) < 1:
            raise DatasetError("dataset needs at least one view")
        shapes = {v.sketch.shape for v in self.views}
        if len(shapes) > 1:
            raise DatasetError(f"inconsistent sketch resolutions: {shapes}")

    @property
    def resolution(self):
        return self.views[0].sketch.shape


# ---------------------------------------------------------------------------
# Oracle scene: analytic solids, exact ray intersections


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    color: tuple
    density: float = 1e4


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple
    color: tuple
    density: float = 1e4


@dataclass
class OracleScene:
    primitives: list
    background: tuple = (1.0, 1.0, 1.0)
    prompt: str = "an arrangement of simple solids"

    def __post_init__(self):
        for p in self.primitives:
            c = np.asarray(p.center, dtype=np.float64)
            reach = (p.radius if isinstance(p, Sphere)
                     else float(np.max(np.asarray(p.half_extents))))
            if np.any(np.abs(c) + reach > 1.0 + 1e-9):
                raise DatasetError(
                    f"primitive at {tuple(c)} extends outside the unit box")

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            d = dataclasses.asdict(p)
            d["kind"] = "sphere" if isinstance(p, Sphere) else "box"
            prims.append(d)
        return {"primitives": prims, "background": list(self.background),
                "prompt": self.prompt}

    @classmethod
    def from_dict(cls, data: dict) -> "OracleScene":
        prims = []
        for d in data["primitives"]:
            d = dict(d)
            kind = d.pop("kind")
            if kind == "sphere":
                prims.append(Sphere(**d))
            elif kind == "box":
                prims.append(Box(**d))
            else:
                raise DatasetError(f"unknown primitive kind {kind!r}")
        return cls(primitives=prims,
                   background=tuple(data.get("background", (1.0, 1.0, 1.0))),
                   prompt=data.get("prompt", "an arrangement of simple solids"))


def primitive_intervals(prim, origins: np.ndarray, dirs: np.ndarray):
    """Entry and exit ray parameters for one primitive, +inf where missed."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    if isinstance(prim, Sphere):
        oc = o - np.asarray(prim.center)
        b = np.einsum("ij,ij->i", d, oc)
        c = np.einsum("ij,ij->i", oc, oc) - prim.radius**2
        disc = b * b - c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_in = np.where(hit, -b - sq, np.inf)
        t_out = np.where(hit, -b + sq, np.inf)
    elif isinstance(prim, Box):
        center = np.asarray(prim.center)
        half = np.asarray(prim.half_extents)
        safe_d = np.where(np.abs(d) < 1e-12, 1e-12, d)
        inv = 1.0 / safe_d
        t1 = (center - half - o) * inv
        t2 = (center + half - o) * inv
        t_in = np.max(np.minimum(t1, t2), axis=1)
        t_out = np.min(np.maximum(t1, t2), axis=1)
        miss = t_in > t_out
        t_in = np.where(miss, np.inf, t_in)
        t_out = np.where(miss, np.inf, t_out)
    else:
        raise DatasetError(f"unsupported primitive {type(prim).__name__}")
    # Behind-the-camera exits count as misses.
    behind = t_out <= 1e-9
    return np.where(behind, np.inf, t_in), np.where(behind, np.inf, t_out)


def oracle_render(scene: OracleScene, pose: CameraPose,
                  background=None) -> np.ndarray:
    """Exact opaque surface render: nearest primitive hit wins, everything
    else shows the background color.  Returns (h, w, 3) floats in [0, 1]."""
    if not scene.primitives:
        raise DatasetError("oracle scene has no primitives")
    rays = generate_rays(pose)
    n = rays.origins.shape[0]
    t_hits = np.full((len(scene.primitives), n), np.inf)
    for k, prim in enumerate(scene.primitives):
        t_in, _ = primitive_intervals(prim, rays.origins, rays.directions)
        # A camera inside the primitive sees its interior from t=0.
        t_hits[k] = np.maximum(t_in, 0.0)
    nearest = np.argmin(t_hits, axis=0)
    any_hit = np.isfinite(np.min(t_hits, axis=0))
    bg = np.asarray(background if background is not None else scene.background,
                    dtype=np.float64)
    colors = np.asarray([p.color for p in scene.primitives], dtype=np.float64)
    img = np.where(any_hit[:, None], colors[nearest], bg)
    return img.reshape(pose.height, pose.width, 3)


# ---------------------------------------------------------------------------
# Directory format


def _pose_from_manifest_entry(entry: dict, view_name: str) -> CameraPose:
    if "transform" not in entry:
        raise DatasetError(f"view {view_name!r} has no pose (missing 'transform')")
    t = np.asarray(entry["transform"], dtype=np.float64)
    if t.size != 16:
        raise DatasetError(
            f"view {view_name!r} transform must hold 16 values, got {t.size}")
    m = t.reshape(4, 4)
    r = m[:3, :3]
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-3:
        raise DatasetError(f"view {view_name!r} rotation is not orthonormal")
    # Snap to the nearest orthonormal matrix so serialization noise cannot
    # accumulate through perturb/save cycles.
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    width = int(entry["width"])
    height = int(entry["height"])
    pp = entry.get("principal_point", (width / 2.0, height / 2.0))
    return CameraPose(rotation=r, translation=m[:3, 3],
                      focal=float(entry["focal"]),
                      principal_point=np.asarray(pp, dtype=np.float64),
                      width=width, height=height)


def load_sketch_image(path) -> np.ndarray:
    """Load a sketch PNG and binarize at 0.5 (1 = stroke)."""
    img = Image.open(path).convert("L")
    return (np.asarray(img, dtype=np.float64) / 255.0 >= 0.5).astype(np.uint8)


def load_dataset(directory) -> SketchDataset:
    """Read a dataset directory: manifest.json plus one sketch image per view."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    views = []
    for i, entry in enumerate(manifest.get("views", [])):
        name = entry.get("file", f"<view {i}>")
        pose = _pose_from_manifest_entry(entry, name)
        img_path = directory / name
        if not img_path.exists():
            raise DatasetError(f"sketch image {img_path} is missing")
        sketch = load_sketch_image(img_path)
        if sketch.shape != (pose.height, pose.width):
            raise DatasetError(
                f"view {name!r}: image is {sketch.shape}, manifest says "
                f"{(pose.height, pose.width)}")
        views.append(SketchView(sketch=sketch, pose=pose,
                                view_id=entry.get("view_id", Path(name).stem)))
    bounds = manifest.get("scene_bounds")
    kwargs = {}
    if bounds is not None:
        kwargs["scene_bounds"] = np.asarray(bounds, dtype=np.float64)
    return SketchDataset(views=views, prompt=manifest.get("prompt", ""), **kwargs)


def save_dataset(dataset: SketchDataset, directory) -> None:
    """Write manifest.json and the sketch PNGs ({0,1} stored as {0,255})."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for view in dataset.views:
        name = f"{view.view_id}.png"
        Image.fromarray((view.sketch * 255).astype(np.uint8), mode="L").save(
            directory / name)
        entries.append({
            "file": name,
            "view_id": view.view_id,
            "transform": [float(x) for x in view.pose.to_matrix().reshape(-1)],
            "focal": float(view.pose.focal),
            "principal_point": [float(x) for x in view.pose.principal_point],
            "width": view.pose.width,
            "height": view.pose.height,
        })
    manifest = {
        "prompt": dataset.prompt,
        "scene_bounds": np.asarray(dataset.scene_bounds).tolist(),
        "views": entries,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def perturb_poses(dataset: SketchDataset, intensity: float,
                  seed: int = 0) -> SketchDataset:
    """Jitter camera positions with zero-mean Gaussian noise of the given
    standard deviation (scene units), then re-aim each camera at the origin.

    Intensity 0 returns an identical copy.
    """
    if intensity < 0:
        raise DatasetError(f"intensity must be >= 0, got {intensity}")
    if intensity == 0:
        return SketchDataset(
            views=[SketchView(v.sketch.copy(), v.pose, v.view_id)
                   for v in dataset.views],
            prompt=dataset.prompt,
            scene_bounds=np.asarray(dataset.scene_bounds).copy())
    rng = np.random.default_rng(seed)
    views = []
    for v in dataset.views:
        pos = v.pose.translation + rng.normal(0.0, intensity, size=3)
        pose = CameraPose(rotation=look_at_rotation(pos, (0.0, 0.0, 0.0)),
                          translation=pos, focal=v.pose.focal,
                          principal_point=v.pose.principal_point,
                          width=v.pose.width, height=v.pose.height)
        views.append(SketchView(v.sketch.copy(), pose, v.view_id))
    return SketchDataset(views=views, prompt=dataset.prompt,
                         scene_bounds=np.asarray(dataset.scene_bounds).copy())


def hemisphere_ring_poses(num_views: int, *, radius: float = 2.5,
                          elevation_deg: float = 30.0, resolution: int = 64,
                          focal: float = None) -> list:
    """Cameras evenly spaced in azimuth on an upper-hemisphere ring, all
    looking at the origin."""
    if focal is None:
        focal = 1.2 * resolution
    poses = []
    elev = np.deg2rad(elevation_deg)
    for k in range(num_views):
        az = 2.0 * np.pi * k / num_views
        eye = radius * np.array([np.cos(elev) * np.cos(az),
                                 np.cos(elev) * np.sin(az),
                                 np.sin(elev)])
        poses.append(look_at_pose(eye, focal=focal, width=resolution,
                                  height=resolution))
    return poses


def synth_scene_dataset(scene: OracleScene, num_views: int,
                        resolution: int = 64, *, radius: float = 2.5,
                        elevation_deg: float = 30.0):
    """Build a synthetic dataset: ring cameras, exact renders, edge-extracted
    sketches.  Returns (dataset, oracle_images) with one ground-truth RGB
    image per view for the mock guidance provider."""
    if num_views < 1:
        raise DatasetError("num_views must be >= 1")
    if not scene.primitives:
        raise DatasetError("oracle scene has no primitives")
    poses = hemisphere_ring_poses(num_views, radius=radius,
                                  elevation_deg=elevation_deg,
                                  resolution=resolution)
    views = []
    oracle_images = []
    for k, pose in enumerate(poses):
        img = oracle_render(scene, pose)
        sketch, _ = metrics_mod.extract_edges(img)
        views.append(SketchView(sketch=sketch, pose=pose, view_id=f"view{k:02d}"))
        oracle_images.append(img)
    return SketchDataset(views=views, prompt=scene.prompt), oracle_images
