"""Noise schedules, guidance math, and the mock guidance provider.

Training asks a guidance model the same question every iteration: "here is
my render pushed to noise level t, what should it have looked like?"  The
noise level is sampled under a ceiling that anneals from 0.98 down to 0.5,
so early iterations allow large corrections and late ones only refinements.
"""

import numpy as np

import sketchfield as sf
from sketchfield import guidance as gmod
from sketchfield import optimizer as omod
from sketchfield.cli import PRESET_SCENES
from sketchfield.dataset import oracle_render

# ---- the diffusion schedule ----------------------------------------------
sched = gmod.default_schedule()
print("training steps:", sched.num_train_steps)
for t in (0.1, 0.5, 0.98):
    step = gmod.noise_step(t, sched)
    ab = gmod.alpha_bar_at(t, sched)
    print(f"  t={t:4.2f} -> step {step:4d}, alpha_bar {ab:.5f}, "
          f"signal kept {np.sqrt(ab):.3f}")

# noisy_latent interpolates between the clean latent and pure noise.
rng = np.random.default_rng(0)
z = rng.standard_normal((8, 8, 3))
eps = rng.standard_normal((8, 8, 3))
for t in (0.1, 0.5, 0.98):
    noisy = gmod.noisy_latent(z, t, eps, sched)
    corr = np.corrcoef(noisy.ravel(), z.ravel())[0, 1]
    print(f"  correlation with clean latent at t={t:4.2f}: {corr:.3f}")

# Classifier-free guidance pushes the conditional prediction away from the
# unconditional one; weight 0 is a no-op and agreement is a fixed point.
cond = rng.standard_normal(4)
uncond = rng.standard_normal(4)
print("\ncfg at omega=7.5:", np.round(gmod.cfg_combine(cond, uncond, 7.5), 3))
print("cfg at omega=0 returns conditional:",
      bool(np.array_equal(gmod.cfg_combine(cond, uncond, 0.0), cond)))

# ---- the annealed noise ceiling ------------------------------------------
anneal = omod.AnnealSchedule()
print("\nnoise ceiling over training:")
for n in (0, 6250, 12500, 18750, 25000):
    print(f"  iteration {n:5d}: t_max = {omod.anneal_t_max(n, anneal):.3f}")
draw_rng = np.random.default_rng(7)
draws = [omod.sample_noise_level(draw_rng, anneal.t_min, 0.98)
         for _ in range(1000)]
print(f"  1000 draws under ceiling 0.98: min {min(draws):.3f}, "
      f"max {max(draws):.3f}")

# ---- the mock provider ----------------------------------------------------
# The mock stands in for a diffusion service: it blends the submitted render
# toward an exact render of a known scene, more strongly at higher noise.
# That gives training a target that is consistent across views by
# construction, which is what makes offline end-to-end runs meaningful.
scene = PRESET_SCENES["sphere"]
pose = sf.look_at_pose((0.0, -2.5, 0.9), focal=96.0, width=64, height=64)
reference = oracle_render(scene, pose)
render = np.clip(reference + rng.normal(0.0, 0.15, reference.shape), 0.0, 1.0)

print("\nmock generation drift (PSNR of target vs submitted render):")
for t in (0.1, 0.4, 0.7, 0.98):
    request = sf.GuidanceRequest(rendered_image=render, noise_level=t,
                                 prompt=scene.prompt, pose=pose)
    target = gmod.mock_generate(request, scene).generated_image
    print(f"  t={t:4.2f}: {sf.psnr(target, render):6.2f} dB")

# ---- the wire format ------------------------------------------------------
# Remote guidance speaks base64 PNG over JSON.  The wire carries 8-bit
# channels, so an image already on the 1/255 grid survives the trip bitwise
# and tests can assert exact equality through a live server.
wire_img = np.round(render * 255.0) / 255.0
decoded = gmod.decode_image_b64(gmod.encode_image_b64(wire_img))
body = gmod.request_to_wire(sf.GuidanceRequest(
    rendered_image=wire_img, noise_level=0.5, prompt=scene.prompt))
print("\nwire round trip bit-exact:", bool(np.array_equal(decoded, wire_img)))
print("request fields:", sorted(body))
