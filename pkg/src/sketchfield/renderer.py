"""Differentiable volume renderer.

Pinhole ray generation, stratified depth sampling, emission-absorption
compositing, and reverse-mode differentiation of rendered pixels with
respect to the field parameters.  The camera convention is computer-vision
style: rotation columns are the camera right, down, and forward axes
expressed in world coordinates, so ``world = R @ dir_camera + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field as field_mod
from .field import FieldParams


class RenderError(ValueError):
    """Invalid camera, options, or gradient shapes."""


@dataclass(frozen=True)
class CameraPose:
    """Extrinsics plus pinhole intrinsics.

    rotation: 3x3 orthonormal, world-from-camera; translation: camera center
    in world units; focal in pixels; principal_point as (cx, cy) in pixels.
    """

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    principal_point: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise RenderError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise RenderError("rotation is not orthonormal within 1e-6")
        if not self.focal > 0:
            raise RenderError(f"focal must be positive, got {self.focal}")
        if self.width < 1 or self.height < 1:
            raise RenderError("image dimensions must be >= 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "principal_point",
                           np.asarray(self.principal_point, dtype=np.float64).reshape(2))

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def to_matrix(self) -> np.ndarray:
        """4x4 camera-to-world transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def look_at_rotation(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-from-camera rotation for a camera at eye looking at target.

    Camera z points at the target, y points screen-down.  Falls back to an
    alternate up axis when the view direction is parallel to up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise RenderError("eye and target coincide")
    z = fwd / n
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(x) < 1e-8:
            x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def look_at_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0), *,
                 focal: float, width: int, height: int,
                 principal_point=None) -> CameraPose:
    if principal_point is None:
        principal_point = (width / 2.0, height / 2.0)
    return CameraPose(
        rotation=look_at_rotation(eye, target, up),
        translation=np.asarray(eye, dtype=np.float64),
        focal=float(focal),
        principal_point=np.asarray(principal_point, dtype=np.float64),
        width=int(width),
        height=int(height),
    )


@dataclass
class RayBatch:
    origins: np.ndarray      # (n, 3)
    directions: np.ndarray   # (n, 3) unit


@dataclass
class RaySegmentBatch:
    origins: np.ndarray      # (n, 3)
    directions: np.ndarray   # (n, 3)
    t_values: np.ndarray     # (n, s) ascending
    deltas: np.ndarray       # (n, s) positive


@dataclass
class RenderOutput:
    color: np.ndarray        # (h, w, 3) in [0,1]
    opacity: np.ndarray      # (h, w) in [0,1]
    depth: np.ndarray        # (h, w)
    normal: np.ndarray = None  # (h, w, 3) where opacity above threshold


@dataclass(frozen=True)
class RenderOptions:
    near: float = 1.2
    far: float = 3.8
    samples_per_ray: int = 64
    stratified: bool = False
    seed: int = 0
    background: tuple = (1.0, 1.0, 1.0)
    compute_normals: bool = False
    normal_opacity_threshold: float = 0.5

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise RenderError(f"need 0 < near < far, got {self.near}, {self.far}")


def generate_rays(pose: CameraPose) -> RayBatch:
    """One ray per pixel through the pixel center (offset +0.5)."""
    cx, cy = pose.principal_point
    cols = np.arange(pose.width, dtype=np.float64) + 0.5
    rows = np.arange(pose.height, dtype=np.float64) + 0.5
    u, v = np.meshgrid(cols, rows)
    dirs_cam = np.stack(
        [(u - cx) / pose.focal, (v - cy) / pose.focal, np.ones_like(u)], axis=-1
    ).reshape(-1, 3)
    dirs_world = dirs_cam @ pose.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs_world.shape).copy()
    return RayBatch(origins=origins, directions=dirs_world)


def sample_segments(rays: RayBatch, near: float, far: float,
                    samples_per_ray: int, stratified: bool = False,
                    seed: int = 0) -> RaySegmentBatch:
    """Partition [near, far] into equal bins and place one sample per bin.

    Non-stratified sampling takes bin midpoints; stratified sampling draws
    one uniform offset per bin per ray, reproducible for a fixed seed.
    """
    if not (0 < near < far):
        raise RenderError(f"need 0 < near < far, got {near}, {far}")
    if samples_per_ray < 2:
        raise RenderError(f"samples_per_ray must be >= 2, got {samples_per_ray}")
    n = rays.origins.shape[0]
    s = samples_per_ray
    binw = (far - near) / s
    edges = near + binw * np.arange(s)
    if stratified:
        rng = np.random.default_rng(seed)
        offsets = rng.uniform(0.0, 1.0, size=(n, s))
    else:
        offsets = np.full((n, s), 0.5)
    t = edges[None, :] + offsets * binw
    # Interior deltas are consecutive differences; the last sample's interval
    # runs to the far plane so every sample absorbs over positive length.
    deltas = np.empty_like(t)
    deltas[:, :-1] = np.diff(t, axis=1)
    deltas[:, -1] = far - t[:, -1]
    return RaySegmentBatch(origins=rays.origins, directions=rays.directions,
                           t_values=t, deltas=deltas)


def composite(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              t_values: np.ndarray = None):
    """Emission-absorption compositing along each ray.

    w_i = T_i (1 - exp(-sigma_i delta_i)) with T_i the transmittance past the
    first i-1 samples.  Computed in telescoping form w_i = e_{i-1} - e_i with
    e_i = exp(-cumsum(sigma delta)), which keeps opacity = 1 - e_last inside
    [0, 1] regardless of rounding.  Returns (color, opacity, depth) per ray;
    depth is the opacity-normalized expected termination.
    """
    single = np.asarray(sigmas).ndim == 1
    sig = np.atleast_2d(np.asarray(sigmas))
    dlt = np.atleast_2d(np.asarray(deltas))
    col = np.asarray(colors)
    if col.ndim == 2:
        col = col[None, :, :]
    if np.any(sig < 0):
        raise RenderError("densities must be non-negative")
    if np.any(dlt <= 0):
        raise RenderError("deltas must be positive")
    e = np.exp(-np.cumsum(sig * dlt, axis=1))
    w = np.empty_like(e)
    w[:, 0] = 1.0 - e[:, 0]
    w[:, 1:] = e[:, :-1] - e[:, 1:]
    opacity = 1.0 - e[:, -1]
    color = np.einsum("rs,rsc->rc", w, col)
    if t_values is None:
        t_mid = np.cumsum(dlt, axis=1) - 0.5 * dlt
    else:
        t_mid = np.atleast_2d(np.asarray(t_values))
    depth = np.einsum("rs,rs->r", w, t_mid) / np.maximum(opacity, 1e-10)
    if single:
        return color[0], float(opacity[0]), float(depth[0])
    return color, opacity, depth


class RenderContext:
    """Everything the backward pass needs from a forward render."""

    __slots__ = ("segments", "field_ctx", "e", "w", "opacity", "options", "pose")

    def __init__(self, segments, field_ctx, e, w, opacity, options, pose):
        self.segments = segments
        self.field_ctx = field_ctx
        self.e = e
        self.w = w
        self.opacity = opacity
        self.options = options
        self.pose = pose


def render_with_context(params: FieldParams, pose: CameraPose,
                        options: RenderOptions):
    """Forward render keeping activations for a later backward pass."""
    params.validate_finite()
    dtype = params.dtype
    rays = generate_rays(pose)
    seg = sample_segments(rays, options.near, options.far,
                          options.samples_per_ray, options.stratified,
                          options.seed)
    n, s = seg.t_values.shape
    pts = (seg.origins[:, None, :]
           + seg.t_values[:, :, None] * seg.directions[:, None, :])
    pts = np.ascontiguousarray(pts.reshape(-1, 3), dtype=dtype)
    sh_ray = field_mod.sh_basis(seg.directions,
                                params.config.direction_encoding_degree)
    sh = np.repeat(sh_ray.astype(dtype), s, axis=0)
    fctx = field_mod.field_forward(params, pts, sh)

    sig = fctx.sigma.reshape(n, s).astype(np.float64)
    dlt = seg.deltas
    e = np.exp(-np.cumsum(sig * dlt, axis=1))
    w = np.empty_like(e)
    w[:, 0] = 1.0 - e[:, 0]
    w[:, 1:] = e[:, :-1] - e[:, 1:]
    opacity = 1.0 - e[:, -1]

    col = fctx.color.reshape(n, s, 3)
    color = np.einsum("rs,rsc->rc", w, col)
    depth = np.einsum("rs,rs->r", w, seg.t_values) / np.maximum(opacity, 1e-10)
    depth[opacity < 1e-4] = options.far

    bg = np.asarray(options.background, dtype=np.float64)
    color_final = color + (1.0 - opacity)[:, None] * bg

    h, wd = pose.height, pose.width
    out = RenderOutput(
        color=color_final.reshape(h, wd, 3),
        opacity=opacity.reshape(h, wd),
        depth=depth.reshape(h, wd),
    )
    ctx = RenderContext(seg, fctx, e, w, opacity, options, pose)
    if options.compute_normals:
        out.normal = _normal_buffer(params, ctx, out)
    return out, ctx


def _normal_buffer(params, ctx, out):
    """Per-pixel surface normals at the expected termination depth."""
    pose = ctx.pose
    h, wd = pose.height, pose.width
    opacity = out.opacity.reshape(-1)
    depth = out.depth.reshape(-1)
    normals = np.zeros((h * wd, 3))
    mask = opacity > ctx.options.normal_opacity_threshold
    if np.any(mask):
        pts = (ctx.segments.origins[mask]
               + depth[mask, None] * ctx.segments.directions[mask])
        nrm, degen = field_mod.field_normal(pts.astype(params.dtype), params)
        nrm = np.atleast_2d(nrm)
        nrm[np.atleast_1d(degen)] = (0.0, 0.0, 1.0)
        normals[mask] = nrm
    return normals.reshape(h, wd, 3)


def render(params: FieldParams, pose: CameraPose,
           options: RenderOptions = None) -> RenderOutput:
    """Render the field from a camera: color over background, opacity,
    expected depth, and optionally normals."""
    out, _ = render_with_context(params, pose, options or RenderOptions())
    return out


def backward_from_context(params: FieldParams, ctx: RenderContext,
                          pixel_gradient: np.ndarray,
                          opacity_gradient: np.ndarray = None) -> dict:
    """Parameter gradients of sum(pixel_gradient * final color), plus an
    optional sum(opacity_gradient * opacity) term, from saved activations.

    The compositing derivative w.r.t. x_i = sigma_i delta_i is
    A_i e_i - sum_{j>i} A_j w_j plus constant background and opacity terms,
    where A_i is the upstream dot product with the sample color.
    """
    seg = ctx.segments
    n, s = seg.t_values.shape
    g = np.asarray(pixel_gradient, dtype=np.float64).reshape(-1, 3)
    if g.shape[0] != n:
        raise RenderError(
            f"pixel_gradient has {g.shape[0]} pixels, render had {n}")
    if not np.all(np.isfinite(g)):
        raise RenderError("pixel_gradient must be finite")
    col = ctx.field_ctx.color.reshape(n, s, 3)
    a = np.einsum("rc,rsc->rs", g, col)
    aw = a * ctx.w
    # suffix sum over j > i
    tail = np.cumsum(aw[:, ::-1], axis=1)[:, ::-1]
    tail_after = np.empty_like(tail)
    tail_after[:, :-1] = tail[:, 1:]
    tail_after[:, -1] = 0.0
    bg = np.asarray(ctx.options.background, dtype=np.float64)
    const = -(g @ bg)
    if opacity_gradient is not None:
        g_op = np.asarray(opacity_gradient, dtype=np.float64).reshape(-1)
        if g_op.shape[0] != n:
            raise RenderError("opacity_gradient resolution mismatch")
        const = const + g_op
    d_x = a * ctx.e - tail_after + const[:, None] * ctx.e[:, -1:]
    d_sigma = (d_x * seg.deltas).reshape(-1).astype(params.dtype)
    d_color = (ctx.w[:, :, None] * g[:, None, :]).reshape(-1, 3).astype(params.dtype)
    return field_mod.field_backward(params, ctx.field_ctx, d_sigma, d_color)


def render_backward(params: FieldParams, pose: CameraPose,
                    options: RenderOptions, pixel_gradient: np.ndarray,
                    opacity_gradient: np.ndarray = None) -> dict:
    """Reverse-mode gradient of a render: re-runs the forward pass with the
    same sampling seed, then backpropagates the pixel gradient through
    compositing, the network, and the hash interpolation."""
    pg = np.asarray(pixel_gradient)
    if pg.shape != (pose.height, pose.width, 3):
        raise RenderError(
            f"pixel_gradient shape {pg.shape} does not match "
            f"{(pose.height, pose.width, 3)}")
    _, ctx = render_with_context(params, pose, options)
    return backward_from_context(params, ctx, pg, opacity_gradient)
