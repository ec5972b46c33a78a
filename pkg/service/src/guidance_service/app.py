"""HTTP front end for the guidance service.

Five POST endpoints over plain JSON:

    /generate          sketch-conditioned image generation
    /generate_text     text-only image generation
    /lpips_grad        perceptual distance and its input gradient
    /clip_rprecision   prompt/image retrieval sanity check
    /hed               soft edge detection, thresholded to a mask

The handler is deliberately stateless: every request carries everything the
operation needs, and nothing about one request is visible to the next.  A
single lock serializes backend work so heavyweight model calls never run
concurrently while cheap validation still overlaps.

Malformed requests (bad JSON, missing fields, wrong image kinds) map to 400.
A noise_level that is present but unusable maps to 422 so clients can tell
schema bugs from range bugs.  Backend loading failures map to 503.  Every
response carries X-Ddim-Steps and X-Cfg-Weight headers; the generate routes
report the values actually used for that request, everything else reports
the configured defaults.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .config import ServiceConfig, ServiceError
from .stub_backend import StubBackend
from .wire import decode_image, encode_f32, encode_image

MODES = ("models", "stub", "echo")


def _require(payload: dict, key: str):
    if key not in payload:
        raise ServiceError(400, f"missing required field {key!r}")
    return payload[key]


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ServiceError(400, f"{name} must be a number")
    return float(value)


def _noise_level(payload: dict) -> float:
    value = _require(payload, "noise_level")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ServiceError(422, "noise_level must be a number")
    t = float(value)
    if not np.isfinite(t) or not 0.0 < t < 1.0:
        raise ServiceError(422,
                           f"noise_level must lie strictly inside (0, 1), got {t}")
    return t


def _decode_rgb(payload: dict, key: str) -> np.ndarray:
    image = decode_image(_require(payload, key))
    if image.ndim != 3:
        raise ServiceError(400, f"{key} must decode to an RGB image")
    return image


def _decode_mask(payload: dict, key: str) -> np.ndarray:
    mask = decode_image(_require(payload, key))
    if mask.ndim != 2:
        raise ServiceError(400, f"{key} must decode to a single-channel mask")
    return mask


def _generate_common(server, payload, with_sketch: bool):
    prompt = payload.get("prompt", "")
    if not isinstance(prompt, str):
        raise ServiceError(400, "prompt must be a string")
    t = _noise_level(payload)
    steps = payload.get("ddim_steps", server.config.ddim_steps)
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 1:
        raise ServiceError(400, "ddim_steps must be a positive integer")
    weight = _number(payload.get("cfg_weight", server.config.cfg_weight),
                     "cfg_weight")
    if weight < 0.0:
        raise ServiceError(400, "cfg_weight must be non-negative")
    seed = payload.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ServiceError(400, "seed must be an integer")

    image = _decode_rgb(payload, "rendered_png")
    if with_sketch:
        sketch = _decode_mask(payload, "sketch_png")
        if sketch.shape != image.shape[:2]:
            raise ServiceError(400, "sketch_png and rendered_png sizes differ")
    else:
        if "sketch_png" in payload:
            raise ServiceError(400,
                               "sketch_png does not belong on the text route")
        sketch = None

    headers = {"X-Ddim-Steps": str(steps), "X-Cfg-Weight": f"{weight:g}"}
    if server.mode == "echo":
        # Protocol-echo mode: hand the rendered image straight back so the
        # whole transport and codec can be exercised with no model at all.
        return {"generated_png": encode_image(image)}, headers
    with server.work_lock:
        out = server.backend.generate(image, prompt, t, seed, steps, weight,
                                      sketch=sketch)
    return {"generated_png": encode_image(out)}, headers


def _route_generate(server, payload):
    return _generate_common(server, payload, with_sketch=True)


def _route_generate_text(server, payload):
    return _generate_common(server, payload, with_sketch=False)


def _route_lpips_grad(server, payload):
    image_a = _decode_rgb(payload, "image_a")
    image_b = _decode_rgb(payload, "image_b")
    with server.work_lock:
        loss, grad = server.backend.lpips_grad(image_a, image_b)
    body = {"loss": float(loss)}
    body.update(encode_f32(grad))
    return body, {}


def _route_clip_rprecision(server, payload):
    images = _require(payload, "images")
    prompts = _require(payload, "prompts")
    if not isinstance(images, list) or not images:
        raise ServiceError(400, "images must be a non-empty list")
    if not isinstance(prompts, list) or len(prompts) < 2:
        raise ServiceError(400, "prompts must list at least two entries")
    if not all(isinstance(p, str) for p in prompts):
        raise ServiceError(400, "prompts must be strings")
    if len(images) != len(prompts):
        raise ServiceError(400,
                           f"got {len(images)} images for {len(prompts)} prompts; "
                           "entries pair up one to one")
    model = payload.get("model", server.config.embed_models[0])
    if not isinstance(model, str):
        raise ServiceError(400, "model must be a string")

    decoded = []
    for i, item in enumerate(images):
        image = decode_image(item)
        if image.ndim != 3:
            raise ServiceError(400, f"images[{i}] must decode to an RGB image")
        decoded.append(image)

    with server.work_lock:
        sims = server.backend.clip_similarities(decoded, prompts, model)
    ranks = []
    for i in range(len(decoded)):
        own = sims[i, i]
        ranks.append(1 + int(np.sum(sims[i] > own)))
    precision = float(np.mean([r == 1 for r in ranks]))
    return {"precision_at_1": precision, "per_image_ranks": ranks}, {}


def _route_hed(server, payload):
    image = _decode_rgb(payload, "image")
    with server.work_lock:
        mask = server.backend.hed(image)
    return {"sketch_png": encode_image(mask)}, {}


_ROUTES = {
    "/generate": _route_generate,
    "/generate_text": _route_generate_text,
    "/lpips_grad": _route_lpips_grad,
    "/clip_rprecision": _route_clip_rprecision,
    "/hed": _route_hed,
}


class _Handler(BaseHTTPRequestHandler):

    def log_message(self, fmt, *args):
        pass

    def _read_json(self) -> dict:
        try:
            length = int(self.headers.get("Content-Length"))
        except (TypeError, ValueError):
            raise ServiceError(400, "missing or unreadable Content-Length")
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw)
        except ValueError:
            raise ServiceError(400, "request body is not valid JSON")
        if not isinstance(payload, dict):
            raise ServiceError(400, "request body must be a JSON object")
        return payload

    def _respond(self, status: int, body: dict, extra_headers: dict):
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        headers = {"X-Ddim-Steps": str(self.server.config.ddim_steps),
                   "X-Cfg-Weight": f"{self.server.config.cfg_weight:g}"}
        headers.update(extra_headers)
        for name, value in headers.items():
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        try:
            route = _ROUTES.get(self.path)
            if route is None:
                raise ServiceError(404, f"no such endpoint: {self.path}")
            payload = self._read_json()
            body, extra = route(self.server, payload)
            self._respond(200, body, extra)
        except ServiceError as err:
            self._respond(err.status, {"error": err.message}, {})
        except Exception as exc:  # last resort; never leak a traceback page
            self._respond(500, {"error": f"internal error: {exc}"}, {})


class GuidanceServer(ThreadingHTTPServer):
    """Threading HTTP server that owns the config, mode, and backend."""

    daemon_threads = True

    def __init__(self, address, config: ServiceConfig, mode: str, backend):
        super().__init__(address, _Handler)
        self.config = config
        self.mode = mode
        self.backend = backend
        self.work_lock = threading.Lock()


def create_server(config: ServiceConfig = None, mode: str = "stub",
                  host: str = "127.0.0.1", port: int = 8501) -> GuidanceServer:
    """Build a ready-to-serve server; call serve_forever() on the result.

    mode "models" answers with the pretrained stack, "stub" with the
    deterministic procedural backend, and "echo" like "stub" except the
    generate routes return their input image unchanged.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    config = config if config is not None else ServiceConfig()
    if mode == "models":
        from .models_backend import ModelsBackend
        backend = ModelsBackend(config)
    else:
        backend = StubBackend(config)
    return GuidanceServer((host, port), config, mode, backend)
