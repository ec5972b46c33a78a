"""Multiresolution hash-grid radiance field.

The field maps a 3D position and a unit view direction to a volume density
and an RGB color.  Positions are encoded by trilinear interpolation into
per-level hashed feature tables, directions by a spherical-harmonics basis,
and a small fully-connected network produces the outputs.  All gradient
machinery (reverse mode through the network and the interpolation, plus the
analytic density gradient used for normals) lives here.
"""

from __future__ import annotations

import dataclasses
import json
import zipfile
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

# Spatial hash primes (Teschner et al. style XOR hash).
_HASH_PRIMES = (73856093, 19349663, 83492791)

# Raw density bias at init: softplus(-3) ~= 0.049, so a fresh field renders
# nearly transparent instead of as uniform fog.
DENSITY_RAW_BIAS = -3.0


class FieldError(ValueError):
    """Invalid field configuration or parameters."""


@dataclass(frozen=True)
class HashGridConfig:
    num_levels: int = 8
    features_per_level: int = 2
    table_size_log2: int = 15
    base_resolution: int = 16
    growth_factor: float = 1.5
    mlp_hidden_width: int = 64
    mlp_hidden_layers: int = 2
    direction_encoding_degree: int = 3

    def __post_init__(self):
        if self.num_levels < 1:
            raise FieldError(f"num_levels must be >= 1, got {self.num_levels}")
        if self.features_per_level < 1:
            raise FieldError("features_per_level must be >= 1")
        if not (10 <= self.table_size_log2 <= 24):
            raise FieldError(
                f"table_size_log2 must be in [10, 24], got {self.table_size_log2}"
            )
        if self.base_resolution < 2:
            raise FieldError(f"base_resolution must be >= 2, got {self.base_resolution}")
        if self.growth_factor <= 1.0:
            raise FieldError(f"growth_factor must be > 1, got {self.growth_factor}")
        if self.mlp_hidden_width < 1 or self.mlp_hidden_layers < 1:
            raise FieldError("MLP must have at least one hidden layer of width >= 1")
        if not (0 <= self.direction_encoding_degree <= 3):
            raise FieldError("direction_encoding_degree must be in [0, 3]")

    @property
    def table_size(self) -> int:
        return 1 << self.table_size_log2

    @property
    def encoding_dim(self) -> int:
        return self.num_levels * self.features_per_level

    @property
    def sh_dim(self) -> int:
        return (self.direction_encoding_degree + 1) ** 2

    def level_resolutions(self) -> np.ndarray:
        """Per-level grid resolution, geometric growth from the base."""
        return np.array(
            [int(np.floor(self.base_resolution * self.growth_factor**l))
             for l in range(self.num_levels)],
            dtype=np.int64,
        )


@dataclass
class FieldParams:
    """All learnable parameters: hash tables plus MLP weights."""

    config: HashGridConfig
    tables: np.ndarray                      # (levels, table_size, features)
    trunk_ws: list = dc_field(default_factory=list)   # [(d_in, width), ...]
    trunk_bs: list = dc_field(default_factory=list)   # [(width,), ...]
    sigma_w: np.ndarray = None              # (width,)
    sigma_b: np.ndarray = None              # (1,)
    color_w: np.ndarray = None              # (width + sh_dim, 3)
    color_b: np.ndarray = None              # (3,)

    def tensors(self):
        """Named parameter tensors in a fixed, stable order."""
        out = [("tables", self.tables)]
        for i, (w, b) in enumerate(zip(self.trunk_ws, self.trunk_bs)):
            out.append((f"trunk_w{i}", w))
            out.append((f"trunk_b{i}", b))
        out += [
            ("sigma_w", self.sigma_w),
            ("sigma_b", self.sigma_b),
            ("color_w", self.color_w),
            ("color_b", self.color_b),
        ]
        return out

    @property
    def dtype(self):
        return self.tables.dtype

    def astype(self, dtype) -> "FieldParams":
        return FieldParams(
            config=self.config,
            tables=self.tables.astype(dtype),
            trunk_ws=[w.astype(dtype) for w in self.trunk_ws],
            trunk_bs=[b.astype(dtype) for b in self.trunk_bs],
            sigma_w=self.sigma_w.astype(dtype),
            sigma_b=self.sigma_b.astype(dtype),
            color_w=self.color_w.astype(dtype),
            color_b=self.color_b.astype(dtype),
        )

    def copy(self) -> "FieldParams":
        return self.astype(self.dtype)

    def validate_finite(self):
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise FieldError(f"non-finite values in parameter tensor '{name}'")


def zero_grads(params: FieldParams) -> dict:
    """Gradient accumulator matching the parameter tensors, all zeros."""
    return {name: np.zeros_like(t) for name, t in params.tensors()}


def add_grads(acc: dict, other: dict, scale: float = 1.0) -> dict:
    for k in acc:
        acc[k] += scale * other[k]
    return acc


def init_params(config: HashGridConfig, seed: int, dtype=np.float32) -> FieldParams:
    """Initialize a field: tiny uniform hash features, fan-in-scaled MLP weights.

    Deterministic for a fixed seed.  The density head bias starts negative so
    the untrained field is close to empty space.
    """
    if not isinstance(config, HashGridConfig):
        raise FieldError("config must be a HashGridConfig")
    rng = np.random.default_rng(seed)
    tables = rng.uniform(
        -1e-4, 1e-4, size=(config.num_levels, config.table_size, config.features_per_level)
    ).astype(dtype)

    def fan_in_uniform(d_in, d_out):
        bound = 1.0 / np.sqrt(d_in)
        return rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)

    width = config.mlp_hidden_width
    trunk_ws, trunk_bs = [], []
    d_in = config.encoding_dim
    for _ in range(config.mlp_hidden_layers):
        trunk_ws.append(fan_in_uniform(d_in, width))
        trunk_bs.append(np.zeros(width, dtype=dtype))
        d_in = width
    sigma_w = fan_in_uniform(width, 1)[:, 0]
    sigma_b = np.full(1, DENSITY_RAW_BIAS, dtype=dtype)
    color_w = fan_in_uniform(width + config.sh_dim, 3)
    color_b = np.zeros(3, dtype=dtype)
    return FieldParams(
        config=config,
        tables=tables,
        trunk_ws=trunk_ws,
        trunk_bs=trunk_bs,
        sigma_w=sigma_w,
        sigma_b=sigma_b,
        color_w=color_w,
        color_b=color_b,
    )


# ---------------------------------------------------------------------------
# Stable activations


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Spherical-harmonics direction encoding (real basis, degrees 0..3)

_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)
_SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658, 0.3731763325901154,
          1.445305721320277)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis for unit directions, shape (n, (degree+1)^2)."""
    d = np.atleast_2d(np.asarray(dirs))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    n = d.shape[0]
    out = np.empty((n, (degree + 1) ** 2), dtype=d.dtype)
    out[:, 0] = _SH_C0
    if degree >= 1:
        out[:, 1] = -_SH_C1 * y
        out[:, 2] = _SH_C1 * z
        out[:, 3] = -_SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[:, 4] = _SH_C2[0] * x * y
        out[:, 5] = -_SH_C2[0] * y * z
        out[:, 6] = _SH_C2[1] * (3.0 * zz - 1.0)
        out[:, 7] = -_SH_C2[0] * x * z
        out[:, 8] = _SH_C2[2] * (xx - yy)
    if degree >= 3:
        out[:, 9] = -_SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = _SH_C3[1] * x * y * z
        out[:, 11] = -_SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = _SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = -_SH_C3[2] * x * (4.0 * zz - xx - yy)
        out[:, 14] = _SH_C3[4] * z * (xx - yy)
        out[:, 15] = -_SH_C3[0] * x * (xx - 3.0 * yy)
    return out


# ---------------------------------------------------------------------------
# Hash encoding kernels.  Positions live in [-1,1]^3 (clamped); each level
# scales to its grid resolution and trilinearly blends the 8 hashed corners.


@njit(cache=True)
def _encode_forward(x, tables, res, out):
    n = x.shape[0]
    nlev = res.shape[0]
    nfeat = tables.shape[2]
    mask = tables.shape[1] - 1
    for i in range(n):
        px = (min(max(x[i, 0], -1.0), 1.0) + 1.0) * 0.5
        py = (min(max(x[i, 1], -1.0), 1.0) + 1.0) * 0.5
        pz = (min(max(x[i, 2], -1.0), 1.0) + 1.0) * 0.5
        for l in range(nlev):
            r = res[l]
            sx = px * r
            sy = py * r
            sz = pz * r
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            iz = int(np.floor(sz))
            fx = sx - ix
            fy = sy - iy
            fz = sz - iz
            base = l * nfeat
            for f in range(nfeat):
                out[i, base + f] = 0.0
            for c in range(8):
                bx = c & 1
                by = (c >> 1) & 1
                bz = (c >> 2) & 1
                w = (fx if bx else 1.0 - fx) * (fy if by else 1.0 - fy) * (fz if bz else 1.0 - fz)
                h = (((ix + bx) * 73856093) ^ ((iy + by) * 19349663) ^ ((iz + bz) * 83492791)) & mask
                for f in range(nfeat):
                    out[i, base + f] += w * tables[l, h, f]


@njit(cache=True)
def _encode_backward(x, d_out, res, table_size, d_tables):
    n = x.shape[0]
    nlev = res.shape[0]
    nfeat = d_tables.shape[2]
    mask = table_size - 1
    for i in range(n):
        px = (min(max(x[i, 0], -1.0), 1.0) + 1.0) * 0.5
        py = (min(max(x[i, 1], -1.0), 1.0) + 1.0) * 0.5
        pz = (min(max(x[i, 2], -1.0), 1.0) + 1.0) * 0.5
        for l in range(nlev):
            r = res[l]
            sx = px * r
            sy = py * r
            sz = pz * r
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            iz = int(np.floor(sz))
            fx = sx - ix
            fy = sy - iy
            fz = sz - iz
            base = l * nfeat
            for c in range(8):
                bx = c & 1
                by = (c >> 1) & 1
                bz = (c >> 2) & 1
                w = (fx if bx else 1.0 - fx) * (fy if by else 1.0 - fy) * (fz if bz else 1.0 - fz)
                h = (((ix + bx) * 73856093) ^ ((iy + by) * 19349663) ^ ((iz + bz) * 83492791)) & mask
                for f in range(nfeat):
                    d_tables[l, h, f] += w * d_out[i, base + f]


@njit(cache=True)
def _encode_position_grad(x, d_out, tables, res, d_x):
    """Chain d(encoding)/d(position) against an upstream encoding gradient."""
    n = x.shape[0]
    nlev = res.shape[0]
    nfeat = tables.shape[2]
    mask = tables.shape[1] - 1
    for i in range(n):
        px = (min(max(x[i, 0], -1.0), 1.0) + 1.0) * 0.5
        py = (min(max(x[i, 1], -1.0), 1.0) + 1.0) * 0.5
        pz = (min(max(x[i, 2], -1.0), 1.0) + 1.0) * 0.5
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for l in range(nlev):
            r = res[l]
            sx = px * r
            sy = py * r
            sz = pz * r
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            iz = int(np.floor(sz))
            fx = sx - ix
            fy = sy - iy
            fz = sz - iz
            base = l * nfeat
            # d(scaled coord)/d(position) = r/2 from the [-1,1] -> [0,r] map
            scale = 0.5 * r
            for c in range(8):
                bx = c & 1
                by = (c >> 1) & 1
                bz = (c >> 2) & 1
                wx = fx if bx else 1.0 - fx
                wy = fy if by else 1.0 - fy
                wz = fz if bz else 1.0 - fz
                dwx = 1.0 if bx else -1.0
                dwy = 1.0 if by else -1.0
                dwz = 1.0 if bz else -1.0
                h = (((ix + bx) * 73856093) ^ ((iy + by) * 19349663) ^ ((iz + bz) * 83492791)) & mask
                g = 0.0
                for f in range(nfeat):
                    g += d_out[i, base + f] * tables[l, h, f]
                gx += g * dwx * wy * wz * scale
                gy += g * wx * dwy * wz * scale
                gz += g * wx * wy * dwz * scale
        d_x[i, 0] = gx
        d_x[i, 1] = gy
        d_x[i, 2] = gz


def hash_encode(x: np.ndarray, params: FieldParams) -> np.ndarray:
    """Encode positions into concatenated per-level interpolated features.

    Positions outside [-1,1]^3 are clamped to the boundary.
    """
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    out = np.empty((pts.shape[0], params.config.encoding_dim), dtype=params.dtype)
    _encode_forward(pts, params.tables, params.config.level_resolutions(), out)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Network forward / backward


class FieldContext:
    """Activations stashed by a forward pass for the matching backward pass."""

    __slots__ = ("x", "sh", "enc", "hs", "raw_sigma", "raw_color", "sigma", "color")

    def __init__(self, x, sh, enc, hs, raw_sigma, raw_color, sigma, color):
        self.x = x
        self.sh = sh
        self.enc = enc
        self.hs = hs
        self.raw_sigma = raw_sigma
        self.raw_color = raw_color
        self.sigma = sigma
        self.color = color


def field_forward(params: FieldParams, x: np.ndarray, sh: np.ndarray) -> FieldContext:
    """Evaluate density and color for a batch of points with precomputed SH.

    x: (n, 3) positions; sh: (n, sh_dim) direction encoding.
    """
    enc = np.empty((x.shape[0], params.config.encoding_dim), dtype=params.dtype)
    _encode_forward(x, params.tables, params.config.level_resolutions(), enc)
    h = enc
    hs = []
    for w, b in zip(params.trunk_ws, params.trunk_bs):
        h = h @ w + b
        np.maximum(h, 0.0, out=h)
        hs.append(h)
    raw_sigma = hs[-1] @ params.sigma_w + params.sigma_b[0]
    sigma = softplus(raw_sigma)
    color_in = np.concatenate([hs[-1], sh], axis=1)
    raw_color = color_in @ params.color_w + params.color_b
    color = sigmoid(raw_color)
    return FieldContext(x, sh, enc, hs, raw_sigma, raw_color, sigma, color)


def field_backward(params: FieldParams, ctx: FieldContext,
                   d_sigma: np.ndarray, d_color: np.ndarray) -> dict:
    """Reverse-mode pass: gradients of sum(d_sigma*sigma + d_color*color)
    with respect to every parameter tensor."""
    cfg = params.config
    grads = {}
    width = cfg.mlp_hidden_width

    d_raw_color = d_color * ctx.color * (1.0 - ctx.color)
    d_raw_sigma = d_sigma * sigmoid(ctx.raw_sigma)

    h_last = ctx.hs[-1]
    color_in = np.concatenate([h_last, ctx.sh], axis=1)
    grads["color_w"] = color_in.T @ d_raw_color
    grads["color_b"] = d_raw_color.sum(axis=0)
    d_color_in = d_raw_color @ params.color_w.T

    grads["sigma_w"] = h_last.T @ d_raw_sigma
    grads["sigma_b"] = np.array([d_raw_sigma.sum()], dtype=params.dtype)

    d_h = d_color_in[:, :width] + d_raw_sigma[:, None] * params.sigma_w[None, :]
    for i in range(len(params.trunk_ws) - 1, -1, -1):
        d_h = d_h * (ctx.hs[i] > 0)
        below = ctx.hs[i - 1] if i > 0 else ctx.enc
        grads[f"trunk_w{i}"] = below.T @ d_h
        grads[f"trunk_b{i}"] = d_h.sum(axis=0)
        d_h = d_h @ params.trunk_ws[i].T
    d_enc = np.ascontiguousarray(d_h)

    d_tables = np.zeros_like(params.tables)
    _encode_backward(ctx.x, d_enc, cfg.level_resolutions(),
                     cfg.table_size, d_tables)
    grads["tables"] = d_tables
    return grads


def eval_field(x, d, params: FieldParams):
    """Density and view-dependent color at positions x with directions d.

    Density depends on position only; direction enters the color branch.
    Accepts single points (shape (3,)) or batches (n, 3).
    """
    params.validate_finite()
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    dirs = np.atleast_2d(np.asarray(d, dtype=params.dtype))
    norms = np.linalg.norm(dirs, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-5):
        raise FieldError("view directions must be unit vectors")
    sh = sh_basis(dirs, params.config.direction_encoding_degree)
    if sh.shape[0] == 1 and pts.shape[0] > 1:
        sh = np.broadcast_to(sh, (pts.shape[0], sh.shape[1])).copy()
    ctx = field_forward(params, pts, sh.astype(params.dtype))
    if single:
        return float(ctx.sigma[0]), ctx.color[0]
    return ctx.sigma, ctx.color


def sigma_only(params: FieldParams, x: np.ndarray) -> np.ndarray:
    """Density for a batch of points, skipping the color branch."""
    pts = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    enc = np.empty((pts.shape[0], params.config.encoding_dim), dtype=params.dtype)
    _encode_forward(pts, params.tables, params.config.level_resolutions(), enc)
    h = enc
    hs = []
    for w, b in zip(params.trunk_ws, params.trunk_bs):
        h = np.maximum(h @ w + b, 0.0)
        hs.append(h)
    return softplus(hs[-1] @ params.sigma_w + params.sigma_b[0])


def sigma_position_grad(params: FieldParams, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of density with respect to position, shape (n, 3)."""
    pts = np.atleast_2d(np.asarray(x, dtype=params.dtype))
    cfg = params.config
    enc = np.empty((pts.shape[0], cfg.encoding_dim), dtype=params.dtype)
    res = cfg.level_resolutions()
    _encode_forward(pts, params.tables, res, enc)
    h = enc
    hs = []
    for w, b in zip(params.trunk_ws, params.trunk_bs):
        h = np.maximum(h @ w + b, 0.0)
        hs.append(h)
    raw_sigma = hs[-1] @ params.sigma_w + params.sigma_b[0]
    d_h = sigmoid(raw_sigma)[:, None] * params.sigma_w[None, :]
    for i in range(len(params.trunk_ws) - 1, -1, -1):
        d_h = d_h * (hs[i] > 0)
        d_h = d_h @ params.trunk_ws[i].T
    d_enc = np.ascontiguousarray(d_h)
    d_x = np.empty_like(pts)
    _encode_position_grad(pts, d_enc, params.tables, res, d_x)
    return d_x


def save_checkpoint(params: FieldParams, path) -> None:
    """Write parameters to a zip container.

    Layout: ``manifest.json`` with the config and a tensor list (name, shape,
    archive member), plus one raw little-endian float32 ``.bin`` per tensor.
    """
    tensors = params.tensors()
    manifest = {
        "format": "sketchfield-checkpoint-v1",
        "config": dataclasses.asdict(params.config),
        "tensors": [
            {"name": name, "shape": list(t.shape), "file": f"tensors/{name}.bin"}
            for name, t in tensors
        ],
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        for name, t in tensors:
            zf.writestr(f"tensors/{name}.bin",
                        np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path) -> FieldParams:
    """Load parameters written by :func:`save_checkpoint`."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "sketchfield-checkpoint-v1":
            raise FieldError(f"unrecognized checkpoint format in {path}")
        config = HashGridConfig(**manifest["config"])
        arrays = {}
        for entry in manifest["tensors"]:
            raw = np.frombuffer(zf.read(entry["file"]), dtype="<f4")
            arrays[entry["name"]] = raw.reshape(entry["shape"]).copy()
    trunk_ws = [arrays[f"trunk_w{i}"] for i in range(config.mlp_hidden_layers)]
    trunk_bs = [arrays[f"trunk_b{i}"] for i in range(config.mlp_hidden_layers)]
    params = FieldParams(
        config=config,
        tables=arrays["tables"],
        trunk_ws=trunk_ws,
        trunk_bs=trunk_bs,
        sigma_w=arrays["sigma_w"],
        sigma_b=arrays["sigma_b"],
        color_w=arrays["color_w"],
        color_b=arrays["color_b"],
    )
    params.validate_finite()
    return params


def field_normal(x, params: FieldParams, degenerate_eps: float = 1e-8):
    """Surface normal as the negated, normalized density gradient.

    Returns (normals, degenerate) where degenerate flags points whose density
    gradient magnitude falls below ``degenerate_eps``; their normal rows are
    zeroed and the caller should substitute a fixed up-vector.
    """
    single = np.asarray(x).ndim == 1
    g = sigma_position_grad(params, x)
    mag = np.linalg.norm(g, axis=1)
    degenerate = mag < degenerate_eps
    normals = np.zeros_like(g)
    ok = ~degenerate
    normals[ok] = -g[ok] / mag[ok, None]
    if single:
        return normals[0], bool(degenerate[0])
    return normals, degenerate
