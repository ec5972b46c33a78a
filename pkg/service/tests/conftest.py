"""Shared fixtures: in-process servers and frozen wire payloads.

The servers run on ephemeral ports inside daemon threads, one per backend
mode, shared across the whole session.  Tests talk to them over real HTTP
so the transport, status codes, and headers are exercised end to end.
"""

import json
import pathlib
import threading

import numpy as np
import pytest
import requests

from guidance_service import create_server

FIXTURES = pathlib.Path(__file__).parent / "fixtures"
TIMEOUT = 30.0


def _start(mode):
    server = create_server(mode=mode, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://127.0.0.1:{server.server_port}"


@pytest.fixture(scope="session")
def stub_url():
    server, url = _start("stub")
    yield url
    server.shutdown()


@pytest.fixture(scope="session")
def echo_url():
    server, url = _start("echo")
    yield url
    server.shutdown()


def post(url, path, body):
    return requests.post(url + path, json=body, timeout=TIMEOUT)


@pytest.fixture(scope="session")
def fixture_rgb():
    return np.load(FIXTURES / "rgb_image.npy")


@pytest.fixture(scope="session")
def fixture_mask():
    return np.load(FIXTURES / "mask.npy")


@pytest.fixture(scope="session")
def fixture_request():
    with open(FIXTURES / "request_body.json") as fh:
        return json.load(fh)


def valid_generate_body(fixture_request, **overrides):
    body = dict(fixture_request)
    body.update(overrides)
    return body
