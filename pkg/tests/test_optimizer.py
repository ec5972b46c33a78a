"""Noise annealing, pose sampling, losses, and the training loop."""

import dataclasses

import numpy as np
import pytest

import sketchfield as sf
from sketchfield import guidance as gmod
from sketchfield import optimizer as omod
from sketchfield.renderer import RenderOutput, generate_rays


class CountingProvider:
    """Delegates to a real provider while logging generate() pose ids."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def generate(self, request):
        self.calls.append(request.pose_id)
        return self.inner.generate(request)

    def perceptual_grad(self, a, b):
        return self.inner.perceptual_grad(a, b)


class FailingProvider:
    def __init__(self, inner, fail_every=None):
        self.inner = inner
        self.fail_every = fail_every
        self.count = 0

    def generate(self, request):
        self.count += 1
        if self.fail_every is None or self.count % self.fail_every == 1:
            raise gmod.GuidanceError("synthetic outage")
        return self.inner.generate(request)

    def perceptual_grad(self, a, b):
        return self.inner.perceptual_grad(a, b)


def tiny_config(small_config, **overrides):
    base = dict(
        iterations=10,
        render_resolution=16,
        samples_per_ray=8,
        pose_ranges=omod.PoseRanges(width=16, height=16),
        weights=omod.LossWeights(lambda_a_start_step=8),
        field_config=small_config,
        seed=5,
    )
    base.update(overrides)
    return omod.TrainConfig(**base)


@pytest.fixture
def tiny_dataset(sphere_scene):
    ds, _ = sf.synth_scene_dataset(sphere_scene, 2, resolution=16)
    return ds


class TestAnnealSchedule:
    def test_endpoints_are_exact(self):
        sched = omod.AnnealSchedule()
        assert omod.anneal_t_max(0, sched) == 0.98
        assert omod.anneal_t_max(sched.total_steps, sched) == 0.5

    def test_halfway_value(self):
        """Halfway through, the ceiling sits midway: 0.74."""
        sched = omod.AnnealSchedule()
        assert abs(omod.anneal_t_max(12500, sched) - 0.74) < 1e-12

    def test_monotone_non_increasing_over_the_whole_run(self):
        sched = omod.AnnealSchedule(total_steps=25000)
        values = np.array([omod.anneal_t_max(n, sched)
                           for n in range(sched.total_steps + 1)])
        assert np.all(np.diff(values) <= 0)
        assert values[0] == 0.98 and values[-1] == 0.5

    def test_past_the_end_clamps(self):
        sched = omod.AnnealSchedule()
        assert omod.anneal_t_max(10**9, sched) == 0.5
        assert omod.anneal_t_max(-3, sched) == 0.98

    def test_invalid_orderings_rejected(self):
        with pytest.raises(omod.TrainError):
            omod.AnnealSchedule(t_min=0.5, t0=0.5)
        with pytest.raises(omod.TrainError):
            omod.AnnealSchedule(t0=0.99, t1=0.98)
        with pytest.raises(omod.TrainError):
            omod.AnnealSchedule(total_steps=0)


class TestSampleNoiseLevel:
    def test_draws_stay_in_range_and_center(self):
        rng = np.random.default_rng(0)
        draws = np.array([omod.sample_noise_level(rng, 0.02, 0.98)
                          for _ in range(1000)])
        assert draws.min() >= 0.02 and draws.max() <= 0.98
        assert abs(draws.mean() - 0.5) < 0.03

    def test_seeded_reproducibility(self):
        a = omod.sample_noise_level(np.random.default_rng(7), 0.1, 0.9)
        b = omod.sample_noise_level(np.random.default_rng(7), 0.1, 0.9)
        assert a == b

    def test_collapsed_interval_returns_the_floor(self):
        rng = np.random.default_rng(1)
        assert omod.sample_noise_level(rng, 0.5, 0.5) == 0.5
        assert omod.sample_noise_level(rng, 0.5, 0.4) == 0.5


class TestSampleRandomPose:
    def test_poses_respect_the_ranges(self):
        rng = np.random.default_rng(2)
        ranges = omod.PoseRanges()
        lo_f = 0.5 * ranges.width / np.tan(np.deg2rad(25.0))
        hi_f = 0.5 * ranges.width / np.tan(np.deg2rad(20.0))
        for _ in range(200):
            pose = omod.sample_random_pose(rng, ranges)
            r = np.linalg.norm(pose.translation)
            assert 2.3 <= r <= 2.7
            assert pose.translation[2] > 0
            assert lo_f <= pose.focal <= hi_f
            np.testing.assert_allclose(pose.forward,
                                       -pose.translation / r, atol=1e-6)

    def test_azimuths_cover_the_circle(self):
        rng = np.random.default_rng(3)
        az = []
        for _ in range(1000):
            p = omod.sample_random_pose(rng, omod.PoseRanges())
            az.append(np.arctan2(p.translation[1], p.translation[0]))
        hist, _ = np.histogram(az, bins=8, range=(-np.pi, np.pi))
        assert np.all(hist > 0)

    def test_invalid_elevation_range_rejected(self):
        with pytest.raises(omod.TrainError):
            omod.PoseRanges(elevation_deg=(-5.0, 60.0))
        with pytest.raises(omod.TrainError):
            omod.PoseRanges(elevation_deg=(10.0, 95.0))


class TestReconstructionLoss:
    def test_identical_images_cost_nothing(self):
        img = np.random.default_rng(4).uniform(size=(8, 8, 3))
        loss, grad = omod.reconstruction_loss(img, img)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_uniform_offset_costs_its_magnitude(self):
        a = np.full((8, 8, 3), 0.6)
        loss, grad = omod.reconstruction_loss(a, a - 0.1)
        assert abs(loss - 0.1) < 1e-12
        np.testing.assert_allclose(grad, 1.0 / a.size, atol=1e-15)

    def test_gradient_matches_finite_differences(self, sphere_scene):
        """Including the provider's perceptual term."""
        provider = gmod.MockProvider(sphere_scene)
        rng = np.random.default_rng(5)
        a = rng.uniform(0.1, 0.9, (8, 8, 3))
        b = rng.uniform(0.1, 0.9, (8, 8, 3))
        _, grad = omod.reconstruction_loss(a, b, provider)
        h = 1e-6
        flat = a.reshape(-1)
        for i in rng.choice(flat.size, size=40, replace=False):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = omod.reconstruction_loss(a, b, provider)
            flat[i] = orig - h
            lm, _ = omod.reconstruction_loss(a, b, provider)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            an = grad.reshape(-1)[i]
            # The sign-based terms can cancel to an exact zero; the floor
            # keeps central-difference rounding noise from reading as error.
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-6) < 1e-3

    def test_shape_mismatch_rejected(self):
        with pytest.raises(omod.TrainError):
            omod.reconstruction_loss(np.zeros((4, 4, 3)), np.zeros((8, 8, 3)))


class TestGeometryRegularizer:
    @staticmethod
    def output(opacity, normal=None):
        h, w = opacity.shape
        return RenderOutput(color=np.zeros((h, w, 3)), opacity=opacity,
                            depth=np.zeros((h, w)), normal=normal)

    def test_transparent_image_has_no_entropy(self):
        value, _ = omod.geometry_regularizer(self.output(np.zeros((4, 4))))
        assert abs(value) < 1e-9

    def test_half_opacity_costs_ln_two(self):
        value, _ = omod.geometry_regularizer(self.output(np.full((4, 4), 0.5)))
        assert abs(value - np.log(2.0)) < 1e-9

    def test_entropy_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        o = rng.uniform(0.1, 0.9, (6, 6))
        _, d_o = omod.geometry_regularizer(self.output(o))
        h = 1e-6
        for i in rng.choice(o.size, size=20, replace=False):
            flat = o.reshape(-1)
            orig = flat[i]
            flat[i] = orig + h
            vp, _ = omod.geometry_regularizer(self.output(o))
            flat[i] = orig - h
            vm, _ = omod.geometry_regularizer(self.output(o))
            flat[i] = orig
            fd = (vp - vm) / (2 * h)
            an = d_o.reshape(-1)[i]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-3

    def test_camera_facing_normals_cost_nothing_extra(self):
        pose = sf.look_at_pose((2.0, 0.0, 1.0), focal=4.0, width=4, height=4)
        dirs = generate_rays(pose).directions.reshape(4, 4, 3)
        opacity = np.full((4, 4), 0.9)
        base, _ = omod.geometry_regularizer(self.output(opacity))
        facing, _ = omod.geometry_regularizer(self.output(opacity, -dirs), pose)
        away, _ = omod.geometry_regularizer(self.output(opacity, dirs), pose)
        assert abs(facing - base) < 1e-12
        assert abs(away - (base + 1.0)) < 1e-9

    def test_orientation_ignores_transparent_pixels(self):
        pose = sf.look_at_pose((2.0, 0.0, 1.0), focal=4.0, width=4, height=4)
        dirs = generate_rays(pose).directions.reshape(4, 4, 3)
        opacity = np.full((4, 4), 0.3)
        base, _ = omod.geometry_regularizer(self.output(opacity))
        with_normals, _ = omod.geometry_regularizer(
            self.output(opacity, dirs), pose)
        assert with_normals == base


class TestAdamUpdate:
    def test_first_step_is_sign_descent(self, small_config):
        """With zero moments, the bias-corrected first update reduces to
        lr * g / (|g| + eps), i.e. a signed step of size lr."""
        config = tiny_config(small_config)
        state = omod.init_state(config)
        before = state.params.sigma_b.copy()
        grads = sf.zero_grads(state.params)
        grads["sigma_b"][0] = 2.5
        omod.adam_update(state, grads)
        np.testing.assert_allclose(state.params.sigma_b[0],
                                   before[0] - config.learning_rate,
                                   atol=1e-9)
        np.testing.assert_array_equal(state.params.sigma_w,
                                      sf.init_params(small_config, 5).sigma_w)


class TestTrainStep:
    def test_one_step_updates_parameters(self, small_config, tiny_dataset,
                                         sphere_scene):
        config = tiny_config(small_config)
        provider = gmod.MockProvider(sphere_scene)
        state = omod.init_state(config)
        before = state.params.tables.copy()
        state, record = omod.train_step(state, tiny_dataset, provider)
        assert state.step == 1
        assert np.any(state.params.tables != before)
        assert np.isfinite(record.loss_total)
        assert record.pose_kind == ("sketch", "random")

    def test_total_is_the_weighted_sum_before_regularizer_onset(
            self, small_config, tiny_dataset, sphere_scene):
        config = tiny_config(small_config)
        w = config.weights
        state = omod.init_state(config)
        _, record = omod.train_step(state, tiny_dataset,
                                    gmod.MockProvider(sphere_scene))
        assert record.loss_a == 0.0
        assert record.loss_total == (w.lambda_s * record.loss_s
                                     + w.lambda_r * record.loss_r)

    def test_regularizer_contributes_after_its_start_step(
            self, small_config, tiny_dataset, sphere_scene):
        config = tiny_config(small_config,
                            weights=omod.LossWeights(lambda_a_start_step=0))
        state = omod.init_state(config)
        _, record = omod.train_step(state, tiny_dataset,
                                    gmod.MockProvider(sphere_scene))
        assert record.loss_a != 0.0

    def test_disabled_random_loss_skips_its_generation_request(
            self, small_config, tiny_dataset, sphere_scene):
        provider = CountingProvider(gmod.MockProvider(sphere_scene))
        config = tiny_config(small_config,
                             weights=omod.LossWeights(lambda_r=0.0,
                                                      lambda_a_start_step=8))
        state = omod.init_state(config)
        omod.train_step(state, tiny_dataset, provider)
        assert len(provider.calls) == 1
        assert provider.calls[0] is not None  # the sketch view's id

        provider2 = CountingProvider(gmod.MockProvider(sphere_scene))
        config2 = tiny_config(small_config)
        omod.train_step(omod.init_state(config2), tiny_dataset, provider2)
        assert len(provider2.calls) == 2
        assert provider2.calls[1] is None  # random pose has no view id

    def test_training_moves_renders_toward_the_scene(self, small_config,
                                                     sphere_scene):
        """A short run on a two-view sphere must drive the loss down and beat
        the fresh field at reproducing an oracle view.  The first phase only
        clears the initialization haze, so this needs enough steps for the
        solid to actually form."""
        ds, oracle_images = sf.synth_scene_dataset(sphere_scene, 2,
                                                   resolution=16)
        config = tiny_config(small_config, iterations=150,
                             weights=omod.LossWeights(lambda_a_start_step=120))
        provider = gmod.MockProvider(sphere_scene)
        params, records = omod.train(config, ds, provider)
        losses = [r.loss_total for r in records]
        assert np.mean(losses[-10:]) < np.mean(losses[:10])
        opts = sf.RenderOptions(near=config.near, far=config.far,
                                samples_per_ray=config.samples_per_ray)
        pose = ds.views[0].pose
        fresh = sf.render(sf.init_params(small_config, config.seed), pose, opts)
        trained = sf.render(params, pose, opts)
        ref = oracle_images[0]
        from sketchfield.metrics import psnr
        assert psnr(trained.color, ref) > psnr(fresh.color, ref) + 10.0


class TestTrainLoop:
    def test_records_one_entry_per_iteration(self, small_config, tiny_dataset,
                                             sphere_scene):
        config = tiny_config(small_config)
        params, records = omod.train(config, tiny_dataset,
                                     gmod.MockProvider(sphere_scene))
        assert len(records) == config.iterations
        assert [r.step for r in records] == list(range(config.iterations))
        assert all(np.isfinite(r.loss_total) for r in records)

    def test_same_seed_reproduces_bitwise(self, small_config, tiny_dataset,
                                          sphere_scene):
        config = tiny_config(small_config)
        p1, _ = omod.train(config, tiny_dataset, gmod.MockProvider(sphere_scene))
        p2, _ = omod.train(config, tiny_dataset, gmod.MockProvider(sphere_scene))
        for (name, a), (_, b) in zip(p1.tensors(), p2.tensors()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_output_directory_contents(self, tmp_path, small_config,
                                       tiny_dataset, sphere_scene):
        config = tiny_config(small_config, checkpoint_every=5)
        params, records = omod.train(config, tiny_dataset,
                                     gmod.MockProvider(sphere_scene),
                                     out_dir=tmp_path)
        lines = (tmp_path / "records.jsonl").read_text().strip().splitlines()
        assert len(lines) == config.iterations
        assert (tmp_path / "checkpoint_000005.zip").exists()
        final = sf.load_checkpoint(tmp_path / "checkpoint_final.zip")
        for (name, a), (_, b) in zip(final.tensors(), params.tensors()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_intermittent_provider_failures_are_retried(
            self, small_config, tiny_dataset, sphere_scene):
        provider = FailingProvider(gmod.MockProvider(sphere_scene),
                                   fail_every=3)
        config = tiny_config(small_config, iterations=5)
        _, records = omod.train(config, tiny_dataset, provider)
        assert len(records) == 5

    def test_persistent_provider_failure_aborts(self, small_config,
                                                tiny_dataset, sphere_scene):
        provider = FailingProvider(gmod.MockProvider(sphere_scene))
        config = tiny_config(small_config)
        with pytest.raises(omod.TrainError, match="10 consecutive"):
            omod.train(config, tiny_dataset, provider)


class TestTrainConfig:
    def test_invalid_values_rejected(self):
        with pytest.raises(omod.TrainError):
            omod.TrainConfig(iterations=0)
        with pytest.raises(omod.TrainError):
            omod.TrainConfig(learning_rate=0.0)
        with pytest.raises(omod.TrainError):
            omod.LossWeights(lambda_s=-1.0)

    def test_desk_profile_scales_the_regularizer_onset(self):
        config = omod.desk_train_config(iterations=1000)
        assert config.weights.lambda_a_start_step == 800
        assert config.iterations == 1000
        assert config.anneal_schedule.total_steps == 1000

    def test_anneal_schedule_property_uses_paper_constants(self):
        config = omod.TrainConfig()
        sched = config.anneal_schedule
        assert (sched.t_min, sched.t0, sched.t1) == (0.02, 0.5, 0.98)
        assert sched.total_steps == config.iterations
