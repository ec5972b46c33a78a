"""Edge extraction, chamfer/Hausdorff distances, checkpoint evaluation."""

import numpy as np
import pytest

import sketchfield as sf
from sketchfield import metrics as mmod


def random_point_set(n, seed):
    return mmod.PointSet2D(np.random.default_rng(seed).uniform(0, 1, (n, 2)))


class TestExtractEdges:
    def test_constant_image_has_no_edges(self):
        sketch, pts = mmod.extract_edges(np.full((16, 16, 3), 0.4))
        assert sketch.sum() == 0
        assert len(pts) == 0

    def test_vertical_step_marks_the_boundary_columns(self):
        img = np.zeros((16, 16))
        img[:, 8:] = 1.0
        sketch, pts = mmod.extract_edges(img)
        rows, cols = np.nonzero(sketch)
        assert len(cols) > 0
        assert set(cols) <= {7, 8}

    def test_output_is_strictly_binary(self):
        rng = np.random.default_rng(0)
        sketch, _ = mmod.extract_edges(rng.uniform(size=(12, 12, 3)))
        assert sketch.dtype == np.uint8
        assert set(np.unique(sketch)) <= {0, 1}

    def test_nonfinite_image_rejected(self):
        img = np.zeros((8, 8))
        img[3, 3] = np.nan
        with pytest.raises(mmod.MetricsError):
            mmod.extract_edges(img)

    def test_point_coordinates_are_pixel_centers(self):
        """A lone stroke pixel at (row 2, col 5) of an 8x10 sketch maps to
        ((5 + 0.5)/10, (2 + 0.5)/8)."""
        sketch = np.zeros((8, 10), np.uint8)
        sketch[2, 5] = 1
        pts = mmod.points_from_sketch(sketch)
        np.testing.assert_allclose(pts.points, [[0.55, 0.3125]], atol=1e-15)


class TestPointSet:
    def test_out_of_range_coordinates_rejected(self):
        with pytest.raises(mmod.MetricsError):
            mmod.PointSet2D(np.array([[0.5, 1.5]]))

    def test_empty_set_allowed_but_not_measurable(self):
        empty = mmod.PointSet2D(np.empty((0, 2)))
        assert len(empty) == 0
        with pytest.raises(mmod.MetricsError):
            mmod.nn_distances(empty, random_point_set(4, 0))


class TestChamfer:
    def test_identical_sets_have_zero_distance(self):
        s = random_point_set(40, 1)
        assert mmod.chamfer_distance(s, s) == 0.0

    def test_single_point_pair(self):
        """{(0,0)} vs {(0,0.3)}: each directed mean is 0.3, summing to 0.6."""
        a = mmod.PointSet2D(np.array([[0.0, 0.0]]))
        b = mmod.PointSet2D(np.array([[0.0, 0.3]]))
        assert abs(mmod.chamfer_distance(a, b) - 0.6) < 1e-12

    def test_symmetry_is_exact(self):
        a = random_point_set(31, 2)
        b = random_point_set(57, 3)
        assert mmod.chamfer_distance(a, b) == mmod.chamfer_distance(b, a)

    def test_grid_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            a = random_point_set(int(rng.integers(1, 200)), 100 + trial)
            b = random_point_set(int(rng.integers(1, 200)), 200 + trial)
            fast = mmod.chamfer_distance(a, b, method="grid")
            slow = mmod.chamfer_distance(a, b, method="brute")
            assert abs(fast - slow) <= 1e-9

    def test_translation_grows_the_distance(self):
        base = np.random.default_rng(5).uniform(0.2, 0.5, (50, 2))
        a = mmod.PointSet2D(base)
        small = mmod.chamfer_distance(a, mmod.PointSet2D(base + 0.05))
        large = mmod.chamfer_distance(a, mmod.PointSet2D(base + 0.3))
        assert 0 < small < large

    def test_unknown_method_rejected(self):
        s = random_point_set(5, 6)
        with pytest.raises(mmod.MetricsError):
            mmod.chamfer_distance(s, s, method="kdtree")


class TestHausdorff:
    def test_identical_sets_have_zero_distance(self):
        s = random_point_set(25, 7)
        assert mmod.hausdorff_distance(s, s) == 0.0

    def test_worst_point_dominates(self):
        """{(0,0), (1,0)} vs {(0,0)}: the far point is 1 away."""
        a = mmod.PointSet2D(np.array([[0.0, 0.0], [1.0, 0.0]]))
        b = mmod.PointSet2D(np.array([[0.0, 0.0]]))
        assert abs(mmod.hausdorff_distance(a, b) - 1.0) < 1e-12

    def test_bounds_against_chamfer_and_directed_means(self):
        """HD >= each directed mean NN distance, and CD <= 2 HD."""
        a = random_point_set(60, 8)
        b = random_point_set(45, 9)
        hd = mmod.hausdorff_distance(a, b)
        assert hd >= np.mean(mmod.nn_distances(a, b))
        assert hd >= np.mean(mmod.nn_distances(b, a))
        assert mmod.chamfer_distance(a, b) <= 2.0 * hd

    def test_grid_matches_brute_force(self):
        for trial in range(10):
            a = random_point_set(80, 300 + trial)
            b = random_point_set(120, 400 + trial)
            fast = mmod.hausdorff_distance(a, b, method="grid")
            slow = mmod.hausdorff_distance(a, b, method="brute")
            assert abs(fast - slow) <= 1e-9


class TestPsnr:
    def test_identical_images_are_infinitely_clean(self):
        img = np.random.default_rng(10).uniform(size=(8, 8, 3))
        assert mmod.psnr(img, img) == np.inf

    def test_known_mse(self):
        """A uniform 0.1 error has MSE 0.01, i.e. 20 dB."""
        a = np.full((4, 4, 3), 0.5)
        assert abs(mmod.psnr(a, a + 0.1) - 20.0) < 1e-9


class TestEvaluate:
    def test_report_covers_every_view(self, sphere_scene, small_config):
        ds, _ = sf.synth_scene_dataset(sphere_scene, 4, resolution=32)
        params = sf.init_params(small_config, seed=0)
        report = mmod.evaluate(params, ds)
        assert report["detector"] == "sobel-thin"
        assert report["num_views"] == 4
        assert len(report["views"]) == 4
        assert {r["view_id"] for r in report["views"]} == {
            v.view_id for v in ds.views}
        for r in report["views"]:
            if not r["missing"]:
                assert r["cd"] > 0 and r["hd"] > 0

    def test_featureless_renders_are_flagged_missing(self, sphere_scene,
                                                     small_config):
        """A field with its density forced to zero renders pure background,
        which has no edges; every view must be flagged, never scored."""
        ds, _ = sf.synth_scene_dataset(sphere_scene, 3, resolution=32)
        params = sf.init_params(small_config, seed=0)
        params.sigma_b[0] = -60.0
        report = mmod.evaluate(params, ds)
        assert report["num_missing"] == 3
        assert report["mean_cd"] is None
        assert all(r["missing"] for r in report["views"])

    def test_checkpoint_path_accepted(self, tmp_path, sphere_scene,
                                      small_config):
        ds, _ = sf.synth_scene_dataset(sphere_scene, 2, resolution=32)
        params = sf.init_params(small_config, seed=0)
        path = tmp_path / "ckpt.zip"
        sf.save_checkpoint(params, path)
        from_path = mmod.evaluate(path, ds)
        from_params = mmod.evaluate(params, ds)
        assert from_path["views"] == from_params["views"]
