"""Synchronized generation-and-reconstruction training.

Each iteration renders the field at one sketch pose and one random
upper-hemisphere pose, asks the guidance provider for generated targets at
an annealed noise level (sketch-conditioned at the sketch pose, prompt-only
at the random pose), and descends the weighted sum of both reconstruction
losses plus a geometry regularizer with Adam.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import field as field_mod
from . import renderer as renderer_mod
from .field import FieldParams, HashGridConfig
from .guidance import GuidanceError, GuidanceRequest, default_schedule
from .renderer import CameraPose, RenderOptions, RenderOutput, generate_rays


class TrainError(RuntimeError):
    """Training could not proceed (repeated provider failures, bad config)."""


@dataclass(frozen=True)
class AnnealSchedule:
    t_min: float = 0.02
    t0: float = 0.5
    t1: float = 0.98
    total_steps: int = 25000

    def __post_init__(self):
        if not (0 < self.t_min < self.t0 <= self.t1 < 1):
            raise TrainError(
                f"need 0 < t_min < t0 <= t1 < 1, got "
                f"{self.t_min}, {self.t0}, {self.t1}")
        if self.total_steps < 1:
            raise TrainError("total_steps must be >= 1")


def anneal_t_max(n: int, schedule: AnnealSchedule) -> float:
    """Linearly decreasing noise ceiling: t1 at step 0 down to t0 at the
    final step, exactly at both endpoints; past-the-end clamps to t0."""
    if n <= 0:
        return schedule.t1
    if n >= schedule.total_steps:
        return schedule.t0
    return schedule.t1 - (schedule.t1 - schedule.t0) * (n / schedule.total_steps)


def sample_noise_level(rng: np.random.Generator, t_min: float,
                       t_max: float) -> float:
    """Uniform draw in [t_min, t_max]; a collapsed interval returns t_min."""
    if t_min >= t_max:
        return t_min
    return float(rng.uniform(t_min, t_max))


@dataclass(frozen=True)
class PoseRanges:
    """Sampling intervals for random training viewpoints."""

    elevation_deg: tuple = (10.0, 60.0)
    azimuth_deg: tuple = (0.0, 360.0)
    radius: tuple = (2.3, 2.7)
    fov_deg: tuple = (40.0, 50.0)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        lo, hi = self.elevation_deg
        if not (0.0 <= lo <= hi <= 90.0):
            raise TrainError(
                f"elevation range must sit inside [0, 90], got {self.elevation_deg}")


def sample_random_pose(rng: np.random.Generator,
                       ranges: PoseRanges) -> CameraPose:
    """Random upper-hemisphere camera looking at the origin with up = +z."""
    elev = np.deg2rad(rng.uniform(*ranges.elevation_deg))
    az = np.deg2rad(rng.uniform(*ranges.azimuth_deg))
    radius = rng.uniform(*ranges.radius)
    fov = np.deg2rad(rng.uniform(*ranges.fov_deg))
    eye = radius * np.array([np.cos(elev) * np.cos(az),
                             np.cos(elev) * np.sin(az),
                             np.sin(elev)])
    focal = 0.5 * ranges.width / np.tan(0.5 * fov)
    return renderer_mod.look_at_pose(eye, focal=focal, width=ranges.width,
                                     height=ranges.height)


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 10.0
    lambda_r: float = 1.0
    lambda_a: float = 1.0
    lambda_a_start_step: int = 20000

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_r, self.lambda_a) < 0:
            raise TrainError("loss weights must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 25000
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-15
    render_resolution: int = 64
    seed: int = 0
    pose_ranges: PoseRanges = dc_field(default_factory=PoseRanges)
    weights: LossWeights = dc_field(default_factory=LossWeights)
    t_min: float = 0.02
    t0: float = 0.5
    t1: float = 0.98
    near: float = 1.2
    far: float = 3.8
    samples_per_ray: int = 64
    checkpoint_every: int = 500
    field_config: HashGridConfig = dc_field(default_factory=HashGridConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise TrainError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise TrainError("learning_rate must be positive")

    @property
    def anneal_schedule(self) -> AnnealSchedule:
        return AnnealSchedule(self.t_min, self.t0, self.t1, self.iterations)


def desk_train_config(seed: int = 0, iterations: int = 2000,
                      resolution: int = 64) -> TrainConfig:
    """Small profile that converges on synthetic scenes in minutes on a CPU.

    Cuts ray sampling and the trunk width relative to the full-scale
    defaults; the geometry regularizer activates at 80% of the run,
    preserving the full-scale schedule's activation ratio.
    """
    return TrainConfig(
        iterations=iterations,
        render_resolution=resolution,
        samples_per_ray=24,
        weights=LossWeights(lambda_a_start_step=int(0.8 * iterations)),
        pose_ranges=PoseRanges(width=resolution, height=resolution),
        field_config=HashGridConfig(mlp_hidden_width=32),
        seed=seed,
    )


@dataclass
class IterationRecord:
    step: int
    t_sampled: float
    loss_s: float
    loss_r: float
    loss_a: float
    loss_total: float
    pose_kind: tuple

    def to_dict(self) -> dict:
        return {"step": self.step, "t": self.t_sampled, "loss_s": self.loss_s,
                "loss_r": self.loss_r, "loss_a": self.loss_a,
                "loss_total": self.loss_total,
                "pose_kind": list(self.pose_kind)}


# ---------------------------------------------------------------------------
# Losses


def reconstruction_loss(rendered: np.ndarray, generated: np.ndarray,
                        perceptual_provider=None):
    """Mean absolute error plus the provider's perceptual distance, with the
    exact pixel gradient on the rendered image.  The generated target is
    treated as data: no gradient flows into it."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(generated, dtype=np.float64)
    if a.shape != b.shape:
        raise TrainError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    if perceptual_provider is not None:
        p_loss, p_grad = perceptual_provider.perceptual_grad(a, b)
        loss += p_loss
        grad = grad + p_grad
    return loss, grad


def geometry_regularizer(render: RenderOutput, pose: CameraPose = None,
                         opacity_threshold: float = 0.5, eps: float = 1e-12):
    """Opacity entropy plus an orientation hinge on rendered normals.

    Entropy pushes per-pixel opacity toward 0 or 1; its exact gradient with
    respect to the opacity image is returned for backpropagation.  The
    orientation term penalizes normals facing away from the camera,
    mean(max(0, n . v)^2) over pixels above the opacity threshold; it is
    scored on the frozen normal buffer and contributes no gradient.
    """
    o = np.asarray(render.opacity, dtype=np.float64)
    entropy = float(np.mean(-o * np.log(o + eps) - (1.0 - o) * np.log(1.0 - o + eps)))
    d_o = (-np.log(o + eps) - o / (o + eps)
           + np.log(1.0 - o + eps) + (1.0 - o) / (1.0 - o + eps)) / o.size
    orientation = 0.0
    if render.normal is not None and pose is not None:
        mask = o > opacity_threshold
        if np.any(mask):
            dirs = generate_rays(pose).directions.reshape(o.shape + (3,))
            dots = np.einsum("...c,...c->...", render.normal, dirs)[mask]
            orientation = float(np.mean(np.maximum(0.0, dots) ** 2))
    return entropy + orientation, d_o


# ---------------------------------------------------------------------------
# Training state and loop


@dataclass
class TrainState:
    params: FieldParams
    moments: dict
    adam_t: int
    step: int
    rng: np.random.Generator
    config: TrainConfig
    noise_schedule: object


def init_state(config: TrainConfig) -> TrainState:
    params = field_mod.init_params(config.field_config, config.seed)
    moments = {name: [np.zeros_like(t), np.zeros_like(t)]
               for name, t in params.tensors()}
    return TrainState(params=params, moments=moments, adam_t=0, step=0,
                      rng=np.random.default_rng([config.seed, 1]),
                      config=config, noise_schedule=default_schedule())


def adam_update(state: TrainState, grads: dict) -> None:
    cfg = state.config
    state.adam_t += 1
    c1 = 1.0 - cfg.adam_beta1 ** state.adam_t
    c2 = 1.0 - cfg.adam_beta2 ** state.adam_t
    for name, p in state.params.tensors():
        g = grads[name]
        m, v = state.moments[name]
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def train_step(state: TrainState, dataset, provider):
    """One synchronized generation/reconstruction iteration.

    Renders the field at a uniformly chosen sketch view and at a freshly
    sampled random pose over per-iteration random backgrounds, obtains
    generated targets at a shared noise level drawn below the annealed
    ceiling, backpropagates the weighted losses, and applies Adam.
    """
    cfg = state.config
    w = cfg.weights
    n = state.step
    rng = state.rng
    t_max = anneal_t_max(n, cfg.anneal_schedule)
    t = sample_noise_level(rng, cfg.t_min, t_max)
    lambda_a_eff = w.lambda_a if n >= w.lambda_a_start_step else 0.0

    view = dataset.views[int(rng.integers(len(dataset.views)))]
    bg_s = tuple(rng.uniform(0.0, 1.0, 3))
    opts_s = RenderOptions(near=cfg.near, far=cfg.far,
                           samples_per_ray=cfg.samples_per_ray,
                           stratified=True, seed=int(rng.integers(2**31)),
                           background=bg_s)
    out_s, ctx_s = renderer_mod.render_with_context(state.params, view.pose, opts_s)
    resp_s = provider.generate(GuidanceRequest(
        rendered_image=out_s.color, noise_level=t, prompt=dataset.prompt,
        seed=int(rng.integers(2**31)), pose_id=view.view_id,
        sketch=view.sketch, pose=view.pose, background=bg_s))
    loss_s, g_s = reconstruction_loss(out_s.color, resp_s.generated_image,
                                      provider)

    pose_r = sample_random_pose(rng, cfg.pose_ranges)
    bg_r = tuple(rng.uniform(0.0, 1.0, 3))
    opts_r = RenderOptions(near=cfg.near, far=cfg.far,
                           samples_per_ray=cfg.samples_per_ray,
                           stratified=True, seed=int(rng.integers(2**31)),
                           background=bg_r,
                           compute_normals=lambda_a_eff > 0)
    out_r, ctx_r = renderer_mod.render_with_context(state.params, pose_r, opts_r)
    if w.lambda_r > 0:
        resp_r = provider.generate(GuidanceRequest(
            rendered_image=out_r.color, noise_level=t, prompt=dataset.prompt,
            seed=int(rng.integers(2**31)), pose_id=None, sketch=None,
            pose=pose_r, background=bg_r))
        loss_r, g_r = reconstruction_loss(out_r.color, resp_r.generated_image,
                                          provider)
    else:
        loss_r, g_r = 0.0, None

    if lambda_a_eff > 0:
        loss_a, g_op = geometry_regularizer(out_r, pose_r)
    else:
        loss_a, g_op = 0.0, None

    grads = renderer_mod.backward_from_context(state.params, ctx_s,
                                               w.lambda_s * g_s)
    pixel_r = w.lambda_r * g_r if g_r is not None else np.zeros_like(out_r.color)
    opacity_r = lambda_a_eff * g_op if g_op is not None else None
    if g_r is not None or g_op is not None:
        field_mod.add_grads(grads, renderer_mod.backward_from_context(
            state.params, ctx_r, pixel_r, opacity_gradient=opacity_r))

    adam_update(state, grads)
    state.step += 1
    loss_total = (w.lambda_s * loss_s + w.lambda_r * loss_r
                  + lambda_a_eff * loss_a)
    record = IterationRecord(step=n, t_sampled=t, loss_s=loss_s, loss_r=loss_r,
                             loss_a=loss_a, loss_total=loss_total,
                             pose_kind=("sketch", "random"))
    return state, record


def train(config: TrainConfig, dataset, provider, out_dir=None):
    """Run the full loop: returns (final params, iteration records).

    With an output directory, writes one record line per iteration to
    ``records.jsonl``, periodic checkpoints, and ``checkpoint_final.zip``.
    Deterministic for a fixed seed with the mock provider.
    """
    if len(dataset.views) < 1:
        raise TrainError("dataset has no sketch views")
    state = init_state(config)
    records = []
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "records.jsonl", "w")
    failures = 0
    try:
        while state.step < config.iterations:
            try:
                state, record = train_step(state, dataset, provider)
            except GuidanceError as exc:
                failures += 1
                if failures >= 10:
                    raise TrainError(
                        f"10 consecutive provider failures, last: {exc}") from exc
                continue
            failures = 0
            records.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record.to_dict()) + "\n")
            if (out_dir is not None and config.checkpoint_every > 0
                    and state.step % config.checkpoint_every == 0
                    and state.step < config.iterations):
                field_mod.save_checkpoint(
                    state.params, out_dir / f"checkpoint_{state.step:06d}.zip")
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        field_mod.save_checkpoint(state.params, out_dir / "checkpoint_final.zip")
    return state.params, records
