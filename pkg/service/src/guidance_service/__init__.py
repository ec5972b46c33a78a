"""Guidance microservice.

Five JSON-over-HTTP endpoints back a sketch-to-3D training loop:
``/generate`` (sketch-conditioned image generation), ``/generate_text``
(prompt-only), ``/lpips_grad`` (perceptual distance with gradient),
``/clip_rprecision`` (prompt retrieval scoring), and ``/hed`` (edge maps).
Images travel as base64 PNG, float arrays as base64 little-endian f32.

Three operating modes: ``models`` wraps pretrained diffusion, perceptual,
and embedding models (returning 503 until they are loadable); ``stub``
serves deterministic weights-free fixtures so integration tests run
anywhere; ``echo`` additionally short-circuits the generation routes to
return the submitted render, which proves wire round trips bit-exactly.
"""

from .config import ServiceConfig, ServiceError
from .app import create_server

__version__ = "0.1.0"
