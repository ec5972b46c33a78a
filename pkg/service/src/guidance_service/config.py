"""Service configuration and the error type the HTTP layer maps to statuses."""

from dataclasses import dataclass, field


class ServiceError(Exception):
    """An error with an HTTP status.

    400 malformed body, 422 invalid noise level, 503 model not loaded.
    """

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass(frozen=True)
class ServiceConfig:
    """Static service configuration: model identifiers and defaults.

    The defaults are recorded in every response's X-Ddim-Steps and
    X-Cfg-Weight headers (generation responses record the effective
    per-request values) so clients can reproduce results.
    """

    base_model: str = "runwayml/stable-diffusion-v1-5"
    control_model: str = "lllyasviel/control_v11p_sd15_scribble"
    perceptual_model: str = "lpips-vgg"
    embed_models: tuple = ("ViT-B/32", "ViT-B/16", "ViT-L/14")
    device: str = "cpu"
    ddim_steps: int = 20
    cfg_weight: float = 7.5
    edge_threshold: float = 0.25

    def __post_init__(self):
        if self.ddim_steps < 1:
            raise ValueError(f"ddim_steps must be >= 1, got {self.ddim_steps}")
        if self.cfg_weight < 0:
            raise ValueError(f"cfg_weight must be >= 0, got {self.cfg_weight}")
        if not (0.0 < self.edge_threshold < 1.0):
            raise ValueError("edge_threshold must be in (0, 1)")
        if not self.embed_models:
            raise ValueError("need at least one embedding model identifier")
