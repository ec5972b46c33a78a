"""Model-backed operations: latent diffusion, LPIPS, CLIP, HED.

Everything loads lazily on first use.  When the model stack or the weights
are unavailable the load error is remembered and every call maps to a 503,
so a service started without GPUs or caches still answers the protocol
correctly; the stub backend exists for that situation.
"""

import numpy as np

from .config import ServiceConfig, ServiceError


def _unavailable(what: str, exc: Exception) -> ServiceError:
    return ServiceError(503, f"{what} not loaded: {exc}")


class ModelsBackend:
    """Wraps the pretrained models named in the config."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self._pipes = {}        # "sketch" / "text" -> diffusers pipeline
        self._lpips = None
        self._clip = {}         # variant name -> (model, processor)
        self._hed = None

    # ---- loading ----------------------------------------------------------

    def _load_pipe(self, kind: str):
        if kind in self._pipes:
            return self._pipes[kind]
        try:
            import torch
            from diffusers import (ControlNetModel, DDIMScheduler,
                                   StableDiffusionControlNetImg2ImgPipeline,
                                   StableDiffusionImg2ImgPipeline)
            if kind == "sketch":
                control = ControlNetModel.from_pretrained(
                    self.config.control_model)
                pipe = StableDiffusionControlNetImg2ImgPipeline.from_pretrained(
                    self.config.base_model, controlnet=control,
                    safety_checker=None)
            else:
                pipe = StableDiffusionImg2ImgPipeline.from_pretrained(
                    self.config.base_model, safety_checker=None)
            pipe.scheduler = DDIMScheduler.from_config(pipe.scheduler.config)
            pipe = pipe.to(self.config.device)
            pipe.set_progress_bar_config(disable=True)
            self._pipes[kind] = (torch, pipe)
        except Exception as exc:
            raise _unavailable("diffusion pipeline", exc)
        return self._pipes[kind]

    def _load_lpips(self):
        if self._lpips is None:
            try:
                import lpips
                import torch
                net = self.config.perceptual_model.split("-")[-1]
                self._lpips = (torch, lpips.LPIPS(net=net))
            except Exception as exc:
                raise _unavailable("perceptual model", exc)
        return self._lpips

    def _load_clip(self, variant: str):
        if variant not in self._clip:
            try:
                import torch
                from transformers import CLIPModel, CLIPProcessor
                name = "openai/clip-" + variant.lower().replace("/", "-")
                model = CLIPModel.from_pretrained(name).to(self.config.device)
                processor = CLIPProcessor.from_pretrained(name)
                self._clip[variant] = (torch, model, processor)
            except Exception as exc:
                raise _unavailable("embedding model", exc)
        return self._clip[variant]

    def _load_hed(self):
        if self._hed is None:
            try:
                from controlnet_aux import HEDdetector
                self._hed = HEDdetector.from_pretrained("lllyasviel/Annotators")
            except Exception as exc:
                raise _unavailable("edge detector", exc)
        return self._hed

    # ---- operations -------------------------------------------------------

    def generate(self, image: np.ndarray, prompt: str, noise_level: float,
                 seed: int, ddim_steps: int, cfg_weight: float,
                 sketch: np.ndarray = None) -> np.ndarray:
        kind = "sketch" if sketch is not None else "text"
        torch, pipe = self._load_pipe(kind)
        from PIL import Image
        src = Image.fromarray(
            np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8))
        generator = torch.Generator(self.config.device).manual_seed(seed)
        kwargs = dict(prompt=prompt, image=src, strength=float(noise_level),
                      num_inference_steps=int(ddim_steps),
                      guidance_scale=1.0 + float(cfg_weight),
                      generator=generator)
        if sketch is not None:
            control = Image.fromarray((sketch * 255).astype(np.uint8)).convert("RGB")
            kwargs["control_image"] = control
        out = pipe(**kwargs).images[0].resize(src.size)
        return np.asarray(out).astype(np.float64) / 255.0

    def lpips_grad(self, image_a: np.ndarray, image_b: np.ndarray):
        if image_a.shape != image_b.shape:
            raise ServiceError(
                400, f"shape mismatch: {image_a.shape} vs {image_b.shape}")
        torch, net = self._load_lpips()
        to_t = lambda x: torch.tensor(
            x.transpose(2, 0, 1)[None] * 2.0 - 1.0, dtype=torch.float32,
            requires_grad=False)
        a = to_t(image_a).requires_grad_(True)
        loss = net(a, to_t(image_b)).sum()
        loss.backward()
        grad = a.grad[0].numpy().transpose(1, 2, 0) * 2.0
        return float(loss.item()), grad

    def clip_similarities(self, images, prompts, model: str) -> np.ndarray:
        if model not in self.config.embed_models:
            raise ServiceError(
                400, f"unknown embedding model {model!r}; have "
                     f"{list(self.config.embed_models)}")
        torch, clip, processor = self._load_clip(model)
        from PIL import Image
        pil = [Image.fromarray(
            np.clip(np.round(im * 255.0), 0, 255).astype(np.uint8))
            for im in images]
        with torch.no_grad():
            inputs = processor(text=list(prompts), images=pil,
                               return_tensors="pt", padding=True)
            out = clip(**{k: v.to(self.config.device)
                          for k, v in inputs.items()})
            img = out.image_embeds / out.image_embeds.norm(dim=-1, keepdim=True)
            txt = out.text_embeds / out.text_embeds.norm(dim=-1, keepdim=True)
        return (img @ txt.T).cpu().numpy()

    def hed(self, image: np.ndarray) -> np.ndarray:
        detector = self._load_hed()
        from PIL import Image
        src = Image.fromarray(
            np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8))
        boundary = np.asarray(detector(src).convert("L")).astype(np.float64)
        return (boundary / 255.0 > self.config.edge_threshold).astype(np.uint8)
