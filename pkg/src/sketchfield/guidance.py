"""Guidance providers and noise-schedule math.

A guidance provider turns a rendered image at some pose and noise level into
a "generated" target image the optimizer regresses toward.  Two backends:
a deterministic mock that blends the render with an analytic oracle render
(for tests and offline runs), and an HTTP client for a diffusion service.
The pure schedule math (variance schedule, latent noising, classifier-free
guidance combination) and the wire codec live here too.
"""

from __future__ import annotations

import base64
import io
import time
from dataclasses import dataclass

import numpy as np
import requests
from PIL import Image


class GuidanceError(ValueError):
    """Invalid guidance inputs."""


class GuidanceTransportError(GuidanceError):
    """Remote call failed (connection trouble or an HTTP error status)."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class GuidanceProtocolError(GuidanceError):
    """Remote response arrived but could not be interpreted."""


# ---------------------------------------------------------------------------
# Noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    num_train_steps: int
    alphas: np.ndarray       # alpha_s = 1 - beta_s, index 0 holds step 1
    alpha_bars: np.ndarray   # cumulative products


def make_noise_schedule(num_train_steps: int, beta_start: float,
                        beta_end: float) -> NoiseSchedule:
    """Linear variance schedule: beta linearly spaced, alpha_bar by
    cumulative product.  beta_start = 0 is allowed as the no-noise limit."""
    if num_train_steps < 1:
        raise GuidanceError("num_train_steps must be >= 1")
    if not (0 <= beta_start <= beta_end < 1):
        raise GuidanceError(
            f"need 0 <= beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, num_train_steps)
    alphas = 1.0 - betas
    return NoiseSchedule(num_train_steps=num_train_steps, alphas=alphas,
                         alpha_bars=np.cumprod(alphas))


def default_schedule() -> NoiseSchedule:
    return make_noise_schedule(1000, 0.00085, 0.012)


def noise_step(t: float, schedule: NoiseSchedule) -> int:
    """Map continuous t in (0,1) to a discrete step by rounding, clamped to
    [1, num_train_steps]."""
    step = int(round(t * schedule.num_train_steps))
    return min(max(step, 1), schedule.num_train_steps)


def alpha_bar_at(t: float, schedule: NoiseSchedule) -> float:
    return float(schedule.alpha_bars[noise_step(t, schedule) - 1])


def noisy_latent(z: np.ndarray, t: float, eps: np.ndarray,
                 schedule: NoiseSchedule) -> np.ndarray:
    """Forward noising: sqrt(alpha_bar_t) z + sqrt(1 - alpha_bar_t) eps."""
    z = np.asarray(z)
    eps = np.asarray(eps)
    if z.shape != eps.shape:
        raise GuidanceError(f"shape mismatch: z {z.shape} vs eps {eps.shape}")
    ab = alpha_bar_at(t, schedule)
    return np.sqrt(ab) * z + np.sqrt(1.0 - ab) * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray,
                omega: float) -> np.ndarray:
    """Classifier-free guidance: (1 + omega) conditional - omega unconditional."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise GuidanceError(
            f"shape mismatch: {eps_cond.shape} vs {eps_uncond.shape}")
    return (1.0 + omega) * eps_cond - omega * eps_uncond


# ---------------------------------------------------------------------------
# Request / response types


@dataclass(frozen=True)
class GuidanceConfig:
    cfg_weight: float = 7.5
    ddim_steps: int = 20
    negative_prompt: str = ""

    def __post_init__(self):
        if self.cfg_weight < 0:
            raise GuidanceError("cfg_weight must be >= 0")
        if self.ddim_steps < 1:
            raise GuidanceError("ddim_steps must be >= 1")


@dataclass
class GuidanceRequest:
    rendered_image: np.ndarray          # (h, w, 3) in [0, 1]
    noise_level: float                  # t in (0, 1)
    prompt: str
    seed: int = 0
    pose_id: str = None
    sketch: np.ndarray = None           # (h, w) binary, optional
    pose: object = None                 # CameraPose, used by the mock backend
    background: tuple = (1.0, 1.0, 1.0)  # mock oracle composites over this

    def __post_init__(self):
        if not (0.0 < self.noise_level < 1.0):
            raise GuidanceError(
                f"noise_level must lie in (0,1), got {self.noise_level}")
        if self.sketch is not None:
            vals = np.unique(np.asarray(self.sketch))
            if not np.all(np.isin(vals, (0, 1))):
                raise GuidanceError("sketch must be binary (values 0/1)")


@dataclass
class GuidanceResponse:
    generated_image: np.ndarray         # (h, w, 3) in [0, 1]


# ---------------------------------------------------------------------------
# Wire codec: images as base64 PNG, float arrays as base64 little-endian f32


def encode_image_b64(image: np.ndarray) -> str:
    """Encode a float image in [0,1] (h,w,3) or a binary mask (h,w) as
    base64 PNG text.  Floats are quantized to 8 bits."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        data = (arr.astype(np.uint8) * 255) if arr.max(initial=0) <= 1 else arr.astype(np.uint8)
        img = Image.fromarray(data, mode="L")
    else:
        data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
        img = Image.fromarray(data, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_image_b64(text: str) -> np.ndarray:
    """Decode base64 PNG text to a float image in [0,1]; grayscale PNGs come
    back as binary (h,w) masks."""
    try:
        img = Image.open(io.BytesIO(base64.b64decode(text)))
        img.load()
    except Exception as exc:
        raise GuidanceProtocolError(f"undecodable image payload: {exc}") from exc
    arr = np.asarray(img)
    if arr.ndim == 2:
        return (arr >= 128).astype(np.uint8)
    return arr[:, :, :3].astype(np.float64) / 255.0


def encode_f32_b64(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {"grad_f32": base64.b64encode(a.tobytes()).decode("ascii"),
            "shape": list(a.shape)}


def decode_f32_b64(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text)
    arr = np.frombuffer(raw, dtype="<f4")
    expect = int(np.prod(shape))
    if arr.size != expect:
        raise GuidanceProtocolError(
            f"array payload has {arr.size} values, shape {shape} needs {expect}")
    return arr.reshape(shape).astype(np.float64)


def request_to_wire(request: GuidanceRequest,
                    config: GuidanceConfig = None) -> dict:
    config = config or GuidanceConfig()
    body = {
        "prompt": request.prompt,
        "noise_level": float(request.noise_level),
        "ddim_steps": int(config.ddim_steps),
        "cfg_weight": float(config.cfg_weight),
        "seed": int(request.seed),
        "rendered_png": encode_image_b64(request.rendered_image),
    }
    if request.sketch is not None:
        body["sketch_png"] = encode_image_b64(request.sketch)
    return body


# ---------------------------------------------------------------------------
# Backends


def mock_generate(request: GuidanceRequest, oracle,
                  schedule: NoiseSchedule = None) -> GuidanceResponse:
    """Deterministic stand-in for a diffusion backend.

    Blends the rendered image toward the oracle's analytic render at the
    request pose with strength s = sqrt(1 - alpha_bar_t), so low noise
    returns the render nearly unchanged and high noise returns the oracle
    view: the farther the noise goes, the farther the output drifts from
    the input.
    """
    from . import dataset as dataset_mod

    if request.pose is None:
        raise GuidanceError(
            f"mock backend cannot resolve a camera for pose_id="
            f"{request.pose_id!r}; attach a pose to the request")
    schedule = schedule or default_schedule()
    target = dataset_mod.oracle_render(oracle, request.pose,
                                       background=request.background)
    rendered = np.asarray(request.rendered_image, dtype=np.float64)
    if rendered.shape != target.shape:
        raise GuidanceError(
            f"rendered image {rendered.shape} does not match the pose "
            f"resolution {target.shape}")
    s = np.sqrt(1.0 - alpha_bar_at(request.noise_level, schedule))
    return GuidanceResponse(generated_image=(1.0 - s) * rendered + s * target)


def remote_generate(request: GuidanceRequest, endpoint: str,
                    config: GuidanceConfig = None,
                    max_attempts: int = 3, backoff: float = 0.5,
                    timeout: float = 30.0) -> GuidanceResponse:
    """Call the generation service over HTTP.

    Routes to the sketch-conditioned path when a sketch is attached,
    otherwise to the prompt-only path.  Server errors (5xx) and connection
    failures are retried with exponential backoff; client errors (4xx)
    fail immediately.
    """
    path = "/generate" if request.sketch is not None else "/generate_text"
    url = endpoint.rstrip("/") + path
    body = request_to_wire(request, config)
    payload = _post_with_retries(url, body, max_attempts, backoff, timeout)
    if "generated_png" not in payload:
        raise GuidanceProtocolError(
            f"response lacks 'generated_png' (keys: {sorted(payload)})")
    image = decode_image_b64(payload["generated_png"])
    if image.ndim != 3:
        raise GuidanceProtocolError("generated image decoded to a non-RGB array")
    return GuidanceResponse(generated_image=image)


def _post_with_retries(url, body, max_attempts, backoff, timeout):
    last_exc = None
    for attempt in range(max_attempts):
        try:
            resp = requests.post(url, json=body, timeout=timeout)
        except requests.RequestException as exc:
            last_exc = GuidanceTransportError(f"connection to {url} failed: {exc}")
        else:
            if resp.status_code == 200:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise GuidanceProtocolError(
                        f"response from {url} is not valid JSON: {exc}") from exc
            if 400 <= resp.status_code < 500:
                raise GuidanceTransportError(
                    f"{url} rejected the request with status {resp.status_code}",
                    status=resp.status_code)
            last_exc = GuidanceTransportError(
                f"{url} returned status {resp.status_code}",
                status=resp.status_code)
        if attempt + 1 < max_attempts:
            time.sleep(backoff * (2 ** attempt))
    raise last_exc


# ---------------------------------------------------------------------------
# Perceptual proxy: L1 over a 3-level mean-pool pyramid, exact gradient


def _pool2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    h2, w2 = h // 2, w // 2
    trimmed = img[: 2 * h2, : 2 * w2]
    return trimmed.reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3)).reshape(
        h2, w2, *img.shape[2:])


def _unpool2(g: np.ndarray, parent_shape) -> np.ndarray:
    out = np.zeros(parent_shape, dtype=g.dtype)
    h2, w2 = g.shape[:2]
    out[: 2 * h2, : 2 * w2] = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25
    return out


def perceptual_grad_local(rendered: np.ndarray, target: np.ndarray):
    """Pyramid L1 distance and its exact gradient with respect to rendered.

    Per level the distance is the mean absolute difference; levels are the
    image itself plus two 2x mean-pool reductions, summed.
    """
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise GuidanceError(f"shape mismatch: {a.shape} vs {b.shape}")
    la, lb = [a], [b]
    for _ in range(2):
        la.append(_pool2(la[-1]))
        lb.append(_pool2(lb[-1]))
    loss = 0.0
    level_grads = []
    for al, bl in zip(la, lb):
        d = al - bl
        loss += float(np.mean(np.abs(d)))
        level_grads.append(np.sign(d) / d.size)
    g = level_grads[2]
    for lvl in (1, 0):
        g = _unpool2(g, la[lvl].shape) + level_grads[lvl]
    return loss, g


def perceptual_grad(rendered: np.ndarray, target: np.ndarray, provider):
    """Perceptual distance and gradient through the given provider."""
    return provider.perceptual_grad(rendered, target)


class MockProvider:
    """Offline backend: oracle-blend generation plus the local pyramid
    perceptual proxy.  Fully deterministic."""

    def __init__(self, oracle, schedule: NoiseSchedule = None):
        self.oracle = oracle
        self.schedule = schedule or default_schedule()

    def generate(self, request: GuidanceRequest) -> GuidanceResponse:
        return mock_generate(request, self.oracle, self.schedule)

    def perceptual_grad(self, rendered, target):
        return perceptual_grad_local(rendered, target)


class RemoteProvider:
    """HTTP backend speaking the wire protocol."""

    def __init__(self, endpoint: str, config: GuidanceConfig = None,
                 max_attempts: int = 3, backoff: float = 0.5,
                 timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.config = config or GuidanceConfig()
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.timeout = timeout

    def generate(self, request: GuidanceRequest) -> GuidanceResponse:
        return remote_generate(request, self.endpoint, self.config,
                               self.max_attempts, self.backoff, self.timeout)

    def perceptual_grad(self, rendered, target):
        a = np.asarray(rendered)
        if a.shape != np.asarray(target).shape:
            raise GuidanceError("shape mismatch")
        body = {"image_a": encode_image_b64(rendered),
                "image_b": encode_image_b64(target)}
        payload = _post_with_retries(self.endpoint + "/lpips_grad", body,
                                     self.max_attempts, self.backoff,
                                     self.timeout)
        try:
            loss = float(payload["loss"])
            grad = decode_f32_b64(payload["grad_f32"], payload["shape"])
        except KeyError as exc:
            raise GuidanceProtocolError(
                f"perceptual response missing field {exc}") from exc
        return loss, grad
