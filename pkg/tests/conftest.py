"""Shared fixtures: small field configs, synthetic scenes, and a stub
guidance server for wire-protocol tests."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

import sketchfield as sf


@pytest.fixture
def small_config():
    """A tiny hash-grid config that keeps finite-difference sweeps fast."""
    return sf.HashGridConfig(num_levels=4, table_size_log2=10,
                             base_resolution=4, growth_factor=1.6,
                             mlp_hidden_width=16)


def make_rough_params(config, seed=3, spread=0.3, density_bias=0.4):
    """Float64 params with pre-activations spread away from the ReLU kinks,
    so central differences probe smooth territory."""
    params = sf.init_params(config, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed + 100)
    params.tables += rng.uniform(-spread, spread, params.tables.shape)
    for b in params.trunk_bs:
        b += rng.uniform(-spread, spread, b.shape)
    params.sigma_b[0] = density_bias
    return params


@pytest.fixture
def rough_params(small_config):
    return make_rough_params(small_config)


@pytest.fixture
def sphere_scene():
    return sf.OracleScene(
        primitives=[sf.Sphere(center=(0.0, 0.0, 0.0), radius=0.45,
                              color=(0.85, 0.2, 0.15))],
        prompt="a red sphere")


@pytest.fixture
def sphere_box_scene():
    return sf.OracleScene(
        primitives=[
            sf.Sphere(center=(-0.35, 0.0, 0.25), radius=0.32,
                      color=(0.85, 0.2, 0.15)),
            sf.Box(center=(0.3, 0.0, -0.12), half_extents=(0.3, 0.26, 0.3),
                   color=(0.2, 0.35, 0.8)),
        ],
        prompt="a red sphere beside a blue box")


class _StubState:
    """Mutable behavior switch for the stub guidance server."""

    def __init__(self):
        self.mode = "echo"            # echo | fixture | status | garbage
        self.status = 500
        self.fixture_png = None
        self.requests = []            # (path, body) log


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        state = self.server.state
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        state.requests.append((self.path, body))
        if state.mode == "status":
            self.send_response(state.status)
            self.end_headers()
            return
        if state.mode == "garbage":
            payload = b"this is not json"
        elif state.mode == "fixture":
            payload = json.dumps(
                {"generated_png": state.fixture_png}).encode()
        elif self.path == "/lpips_grad":
            a = sf.guidance.decode_image_b64(body["image_a"])
            b = sf.guidance.decode_image_b64(body["image_b"])
            loss, grad = sf.guidance.perceptual_grad_local(a, b)
            msg = {"loss": loss}
            msg.update(sf.guidance.encode_f32_b64(grad))
            payload = json.dumps(msg).encode()
        else:
            payload = json.dumps(
                {"generated_png": body["rendered_png"]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="session")
def stub_server():
    """Local HTTP server speaking the wire protocol; yields (endpoint, state)."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.state = _StubState()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    endpoint = f"http://127.0.0.1:{server.server_address[1]}"
    yield endpoint, server.state
    server.shutdown()


@pytest.fixture
def stub(stub_server):
    """Stub server reset to echo mode with a clean request log."""
    endpoint, state = stub_server
    state.mode = "echo"
    state.requests.clear()
    state.fixture_png = None
    return endpoint, state
