"""Multi-view sketch-constrained 3D generation.

A hash-grid radiance field is optimized by synchronized generation and
reconstruction: guidance-provided target images at sketch poses and random
poses are regressed through a differentiable volume renderer under an
annealed noise schedule, and results are scored with edge-based sketch
similarity metrics.
"""

from .field import (FieldParams, HashGridConfig, add_grads, eval_field,
                    field_normal, hash_encode, init_params, load_checkpoint,
                    save_checkpoint, zero_grads)
from .renderer import (CameraPose, RenderOptions, RenderOutput, composite,
                       generate_rays, look_at_pose, render, render_backward,
                       sample_segments)
from .guidance import (GuidanceConfig, GuidanceRequest, GuidanceResponse,
                       MockProvider, RemoteProvider, cfg_combine,
                       make_noise_schedule, mock_generate, noisy_latent,
                       perceptual_grad, remote_generate)
from .optimizer import (AnnealSchedule, LossWeights, TrainConfig, anneal_t_max,
                        desk_train_config, geometry_regularizer,
                        reconstruction_loss, sample_noise_level,
                        sample_random_pose, train, train_step)
from .metrics import (PointSet2D, chamfer_distance, evaluate, extract_edges,
                      hausdorff_distance, psnr)
from .dataset import (Box, OracleScene, SketchDataset, SketchView, Sphere,
                      load_dataset, oracle_render, perturb_poses, save_dataset,
                      synth_scene_dataset)

__version__ = "0.1.0"
