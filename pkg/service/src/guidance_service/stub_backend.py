"""Deterministic weights-free backend.

Every operation is a pure function of the request, has the same shapes,
value ranges, and qualitative behavior as the model-backed path, and runs
anywhere in milliseconds.  Generation blends the submitted render toward a
procedural target keyed by the prompt and seed; the blend strength follows
the diffusion schedule, so more noise means a generated image further from
the input, and a near-zero noise level is a near-identity.
"""

import hashlib
import re

import numpy as np

from .config import ServiceConfig, ServiceError
from .perceptual import pyramid_l1_grad

# The standard latent-diffusion training schedule; the stub only needs its
# cumulative signal fraction alpha_bar(t).
NUM_TRAIN_STEPS = 1000
_BETAS = np.linspace(0.00085, 0.012, NUM_TRAIN_STEPS)
_ALPHA_BARS = np.cumprod(1.0 - _BETAS)

COLOR_ANCHORS = {
    "red": (0.80, 0.15, 0.15), "green": (0.15, 0.70, 0.20),
    "blue": (0.15, 0.25, 0.80), "yellow": (0.85, 0.80, 0.15),
    "orange": (0.90, 0.55, 0.10), "purple": (0.55, 0.15, 0.70),
    "pink": (0.95, 0.60, 0.70), "brown": (0.45, 0.30, 0.15),
    "white": (0.95, 0.95, 0.95), "black": (0.05, 0.05, 0.05),
    "gray": (0.50, 0.50, 0.50), "grey": (0.50, 0.50, 0.50),
}


def alpha_bar_at(noise_level: float) -> float:
    step = int(round(noise_level * NUM_TRAIN_STEPS))
    step = min(max(step, 1), NUM_TRAIN_STEPS)
    return float(_ALPHA_BARS[step - 1])


def _bilinear_upsample(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    gh, gw = grid.shape[:2]
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 2)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    return (grid[y0][:, x0] * (1 - fy) * (1 - fx)
            + grid[y0][:, x0 + 1] * (1 - fy) * fx
            + grid[y0 + 1][:, x0] * fy * (1 - fx)
            + grid[y0 + 1][:, x0 + 1] * fy * fx)


def procedural_target(prompt: str, seed: int, height: int, width: int,
                      sketch: np.ndarray = None) -> np.ndarray:
    """A smooth color field keyed by (prompt, seed), darkened along strokes.

    sha256 keeps the key stable across processes; Python's hash() is
    per-run salted and would break the determinism contract.
    """
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    key = (int.from_bytes(digest[:8], "little") ^ (seed & 0xFFFFFFFF))
    rng = np.random.default_rng(key)
    coarse = rng.uniform(0.15, 0.85, (4, 4, 3))
    target = _bilinear_upsample(coarse, height, width)
    if sketch is not None:
        target = target * (1.0 - 0.5 * sketch[..., None])
    return target


class StubBackend:
    """Fixture behavior for every endpoint, no models involved."""

    def __init__(self, config: ServiceConfig):
        self.config = config

    def generate(self, image: np.ndarray, prompt: str, noise_level: float,
                 seed: int, ddim_steps: int, cfg_weight: float,
                 sketch: np.ndarray = None) -> np.ndarray:
        h, w = image.shape[:2]
        target = procedural_target(prompt, seed, h, w, sketch)
        # The blend fraction 1 - alpha_bar(t) is strictly increasing in the
        # discrete noise step, tiny near t = 0, and close to 1 at t = 0.98:
        # exactly the qualitative drift the model-backed path shows.
        s = 1.0 - alpha_bar_at(noise_level)
        return (1.0 - s) * image + s * target

    def lpips_grad(self, image_a: np.ndarray, image_b: np.ndarray):
        return pyramid_l1_grad(image_a, image_b)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        # Saturation-weighted mean color: background-heavy renders embed by
        # their subject's color instead of the background's.
        sat = image.max(axis=2) - image.min(axis=2)
        total = float(sat.sum())
        if total > 1e-6:
            vec = (image * sat[..., None]).sum(axis=(0, 1)) / total
        else:
            vec = image.mean(axis=(0, 1))
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 1e-9 else np.full(3, 1.0 / np.sqrt(3.0))

    def embed_prompt(self, prompt: str) -> np.ndarray:
        words = re.findall(r"[a-z]+", prompt.lower())
        anchors = [COLOR_ANCHORS[w] for w in words if w in COLOR_ANCHORS]
        vec = (np.mean(anchors, axis=0) if anchors
               else np.full(3, 0.5))
        return vec / np.linalg.norm(vec)

    def clip_similarities(self, images, prompts, model: str) -> np.ndarray:
        if model not in self.config.embed_models:
            raise ServiceError(
                400, f"unknown embedding model {model!r}; have "
                     f"{list(self.config.embed_models)}")
        image_vecs = np.stack([self.embed_image(im) for im in images])
        prompt_vecs = np.stack([self.embed_prompt(p) for p in prompts])
        return image_vecs @ prompt_vecs.T

    def hed(self, image: np.ndarray) -> np.ndarray:
        gray = (0.299 * image[:, :, 0] + 0.587 * image[:, :, 1]
                + 0.114 * image[:, :, 2])
        p = np.pad(gray, 1, mode="edge")
        gx = ((p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:])
              - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2]))
        gy = ((p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:])
              - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:]))
        mag = np.hypot(gx, gy)
        peak = float(mag.max())
        # Constant images leave only rounding residue in the gradients; the
        # absolute floor keeps that from being promoted to edges.
        if peak <= 1e-6:
            return np.zeros(gray.shape, dtype=np.uint8)
        return (mag > self.config.edge_threshold * peak).astype(np.uint8)
