"""A complete (tiny) training run: sketches in, radiance field out.

Every iteration renders the field at one sketch view and one random
hemisphere view, asks the guidance provider for targets at a sampled noise
level, and descends the weighted sum of sketch-view loss, random-view loss,
and (late in the run) a geometry regularizer.

This run is deliberately small -- 16x16 renders, a few hundred iterations,
a tiny hash grid -- so it finishes in seconds.  The same loop at 64x64 and
2,000 iterations is what the test suite's end-to-end gate exercises.
"""

import time

import numpy as np

import sketchfield as sf
from sketchfield import metrics as mmod
from sketchfield import optimizer as omod
from sketchfield.cli import PRESET_SCENES
from sketchfield.dataset import oracle_render

scene = PRESET_SCENES["sphere"]
dataset, _ = sf.synth_scene_dataset(scene, 2, resolution=16)
provider = sf.MockProvider(scene)

config = omod.TrainConfig(
    iterations=300,
    render_resolution=16,
    samples_per_ray=8,
    weights=omod.LossWeights(lambda_a_start_step=240),
    pose_ranges=omod.PoseRanges(width=16, height=16),
    field_config=sf.HashGridConfig(num_levels=4, table_size_log2=10,
                                   base_resolution=4, growth_factor=1.6,
                                   mlp_hidden_width=16),
    seed=0)

holdout = sf.look_at_pose((1.4, -1.9, 0.9), focal=24.0, width=16, height=16)
white = sf.RenderOptions(samples_per_ray=8, background=(1.0, 1.0, 1.0))
reference = oracle_render(scene, holdout)

fresh = sf.init_params(config.field_config, config.seed)
print("holdout PSNR before training:",
      f"{mmod.psnr(sf.render(fresh, holdout, white).color, reference):.2f} dB")

start = time.time()
params, records = omod.train(config, dataset, provider)
print(f"trained {config.iterations} iterations in {time.time() - start:.1f}s")

# The loss falls in two phases: the initial haze collapses first (renders go
# nearly blank), then the solid forms where the sketch views demand it.
losses = [r.loss_total for r in records]
for a, b in [(0, 10), (100, 110), (200, 210), (290, 300)]:
    print(f"  mean loss over iterations [{a:3d}, {b:3d}): "
          f"{np.mean(losses[a:b]):.3f}")

print("holdout PSNR after training: ",
      f"{mmod.psnr(sf.render(params, holdout, white).color, reference):.2f} dB")

# Each record keeps the full picture of one iteration: the sampled noise
# level, the three loss components, and which pose legs ran.
last = records[-1].to_dict()
print("last record:", {k: (round(v, 4) if isinstance(v, float) else v)
                       for k, v in last.items()})
