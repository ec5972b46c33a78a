"""The wire format: base64 PNG images, base64 little-endian f32 arrays.

This is the service-side twin of the client codec.  RGB float images in
[0, 1] are quantized to 8 bits (so anything already on the 1/255 grid
survives a round trip bitwise); 2D arrays are binary masks carried as
grayscale PNGs and re-binarized at 50% on decode.
"""

import base64
import io

import numpy as np
from PIL import Image

from .config import ServiceError


def decode_image(text: str) -> np.ndarray:
    """Base64 PNG to a float RGB image in [0,1] or a binary (h, w) mask."""
    try:
        img = Image.open(io.BytesIO(base64.b64decode(text)))
        img.load()
    except Exception as exc:
        raise ServiceError(400, f"undecodable image payload: {exc}") from exc
    arr = np.asarray(img)
    if arr.ndim == 2:
        return (arr >= 128).astype(np.uint8)
    return arr[:, :, :3].astype(np.float64) / 255.0


def encode_image(image: np.ndarray) -> str:
    """Float RGB image in [0,1] (h, w, 3) or binary mask (h, w) to base64 PNG."""
    arr = np.asarray(image)
    if arr.ndim == 2:
        data = (arr.astype(np.uint8) * 255) if arr.max(initial=0) <= 1 \
            else arr.astype(np.uint8)
        img = Image.fromarray(data, mode="L")
    else:
        data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
        img = Image.fromarray(data, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def encode_f32(arr: np.ndarray) -> dict:
    """Float array to {"grad_f32": base64 of little-endian f32, "shape": [...]}."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {"grad_f32": base64.b64encode(a.tobytes()).decode("ascii"),
            "shape": list(a.shape)}


def decode_f32(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text)
    arr = np.frombuffer(raw, dtype="<f4")
    expect = int(np.prod(shape))
    if arr.size != expect:
        raise ServiceError(
            400, f"array payload has {arr.size} values, shape {shape} "
                 f"needs {expect}")
    return arr.reshape(shape).astype(np.float64)
