import os
import tempfile
import unittest
import warnings

import numpy as np
from scipy.ndimage import gaussian_filter

from src.core.exceptions import DataError, DegenerateFramePairError, ImageTooSmallError
from src.core.keypoints.mkp_extractor import MKPSet, MatchingParams, extract_mkps, match_descriptors, \
    prepare_frame, read_mkp_csv, write_mkp_csv
from src.core.keypoints.sift_detector import KeypointSet, detect_and_describe
from src.core.odometry.pose_utils import yaw_pose
from src.core.projection.spherical_projection import ProjectionConfig
from src.data.synthetic.scene_generator import cast_scene, load_scene_spec

ROOT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))
SCENE_PATH = os.path.join(ROOT_DIR, 'configs', 'scene_default.ini')


def keypoint_set(descriptors, positions=None):
    descriptors = np.asarray(descriptors, dtype=np.float64)
    m = descriptors.shape[0]
    positions = np.zeros((m, 2)) if positions is None else positions
    return KeypointSet(positions=positions, scales=np.ones(m), orientations=np.zeros(m), descriptors=descriptors)


def unit_rows(values):
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def textured_image(seed, height=64, width=512):
    """ Smooth random texture that wraps around in columns like an equalized depth image """
    noise = np.random.default_rng(seed).random((height, width))
    smooth = gaussian_filter(noise, sigma=2.5, mode='wrap')
    smooth = (smooth - smooth.min()) / (smooth.max() - smooth.min())
    return np.round(smooth * 255).astype(np.uint8)


def cyclic_shift(col_a, col_b, width):
    return (col_b - col_a + width / 2) % width - width / 2


class TestDetector(unittest.TestCase):

    def test_constant_image(self):
        self.assertEqual(len(detect_and_describe(np.full((64, 128), 90, dtype=np.uint8))), 0)

    def test_too_small(self):
        with self.assertRaises(ImageTooSmallError):
            detect_and_describe(np.zeros((15, 64), dtype=np.uint8))

    def test_blob(self):
        image = np.zeros((64, 128), dtype=np.uint8)
        image[30:35, 60:65] = 255
        keypoints = detect_and_describe(image)
        self.assertGreaterEqual(len(keypoints), 1)
        distance = np.linalg.norm(keypoints.positions - np.array([32.0, 62.0]), axis=1)
        self.assertLessEqual(distance.min(), 2.0)

    def test_descriptors_are_unit_vectors(self):
        keypoints = detect_and_describe(textured_image(0))
        self.assertGreater(len(keypoints), 0)
        self.assertEqual(keypoints.descriptors.shape[1], 128)
        np.testing.assert_allclose(np.linalg.norm(keypoints.descriptors, axis=1), 1.0, atol=1e-6)
        self.assertTrue(np.all((keypoints.positions[:, 1] >= 0) & (keypoints.positions[:, 1] < 512)))

    def test_deterministic(self):
        a, b = detect_and_describe(textured_image(1)), detect_and_describe(textured_image(1))
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.descriptors, b.descriptors)

    def test_circular_shift(self):
        width, shift = 512, 50
        image = textured_image(2, width=width)
        a = detect_and_describe(image)
        b = detect_and_describe(np.roll(image, shift, axis=1))

        matches = match_descriptors(a, b)
        self.assertGreater(len(matches), 20)
        displacement = np.array([cyclic_shift(a.positions[m.index_a, 1], b.positions[m.index_b, 1], width)
                                 for m in matches])
        self.assertGreaterEqual(np.mean(np.abs(displacement - shift) <= 1.0), 0.9)


class TestMatching(unittest.TestCase):

    def test_identical_lists(self):
        keypoints = keypoint_set(unit_rows(np.random.default_rng(0).random((30, 128))))
        matches = match_descriptors(keypoints, keypoints)
        self.assertEqual(len(matches), 30)
        for match in matches:
            self.assertEqual(match.index_a, match.index_b)
            self.assertEqual(match.distance, 0.0)

    def test_orthogonal_descriptors(self):
        eye = np.eye(128)
        self.assertEqual(match_descriptors(keypoint_set(eye[:10]), keypoint_set(eye[10:20])), [])

    def test_noisy_copies(self):
        rng = np.random.default_rng(1)
        descriptors = unit_rows(rng.random((100, 128)))
        noisy = unit_rows(descriptors + rng.normal(0.0, 0.01, descriptors.shape))
        matches = match_descriptors(keypoint_set(descriptors), keypoint_set(noisy))
        self.assertGreaterEqual(sum(m.index_a == m.index_b for m in matches), 95)

        distances = [m.distance for m in matches]
        self.assertEqual(distances, sorted(distances))
        for m in matches:
            self.assertAlmostEqual(m.distance, np.linalg.norm(descriptors[m.index_a] - noisy[m.index_b]), places=6)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a = keypoint_set(unit_rows(rng.random((60, 128))))
        b = keypoint_set(unit_rows(np.vstack([a.descriptors[:40] + rng.normal(0, 0.02, (40, 128)),
                                              rng.random((30, 128))])))
        forward = {(m.index_a, m.index_b) for m in match_descriptors(a, b)}
        backward = {(m.index_b, m.index_a) for m in match_descriptors(b, a)}
        self.assertEqual(forward, backward)

    def test_displacement_gate(self):
        rng = np.random.default_rng(3)
        descriptors = unit_rows(rng.random((4, 128)))
        a = keypoint_set(descriptors, positions=np.array([[10, 0], [10, 100], [10, 500], [10, 1020]], dtype=float))
        b = keypoint_set(descriptors, positions=np.array([[10, 2], [10, 300], [10, 505], [10, 3]], dtype=float))
        matches = match_descriptors(a, b, MatchingParams(max_col_displacement=10), width=1024)
        # 1020 -> 3 is a 7 column step across the seam
        self.assertEqual(sorted(m.index_a for m in matches), [0, 2, 3])
        with self.assertRaises(ValueError):
            match_descriptors(a, b, MatchingParams(max_col_displacement=10))


class TestMKPExtraction(unittest.TestCase):
    spec = load_scene_spec(SCENE_PATH)
    cfg = spec.scanner.projection_config()
    columns = 6
    yaw = columns * 2.0 * np.pi / spec.scanner.azimuth_steps

    cloud_i, _ = cast_scene(0, spec)
    cloud_j, _ = cast_scene(0, spec, sensor_pose=yaw_pose(yaw))
    frame_i = prepare_frame(cloud_i, cfg)
    frame_j = prepare_frame(cloud_j, cfg)

    def _extract(self, frame_a, frame_b, n=1000):
        with warnings.catch_warnings():
            warnings.simplefilter('ignore')
            return extract_mkps(frame_a, frame_b, n=n)

    def test_identical_frames(self):
        mkps = self._extract(self.frame_i, self.frame_i)
        self.assertGreater(len(mkps), 0)
        np.testing.assert_array_equal(mkps.left, mkps.right)

    def test_pairs_follow_the_sensor_motion(self):
        mkps = self._extract(self.frame_i, self.frame_j)
        self.assertGreater(len(mkps), 10)
        point_pose = yaw_pose(self.yaw).inverse()
        error = np.linalg.norm(point_pose.apply(mkps.left) - mkps.right, axis=1)
        self.assertGreaterEqual(np.mean(error < 0.1), 0.8)

    def test_no_fake_pairs(self):
        mkps = self._extract(self.frame_i, self.frame_j)
        rows_i, cols_i, rows_j, cols_j = mkps.pixel_pairs.T
        self.assertTrue(np.all(self.frame_i.image.valid[rows_i, cols_i]))
        self.assertTrue(np.all(self.frame_j.image.valid[rows_j, cols_j]))
        np.testing.assert_array_equal(mkps.left, self.cloud_i.points[self.frame_i.image.index_map[rows_i, cols_i]])

    def test_count_and_shortfall(self):
        mkps = self._extract(self.frame_i, self.frame_j, n=5)
        self.assertEqual(len(mkps), 5)
        self.assertEqual(mkps.shortfall, 0)

        everything = self._extract(self.frame_i, self.frame_j, n=100000)
        self.assertEqual(everything.shortfall, 100000 - len(everything))
        with self.assertWarns(UserWarning):
            extract_mkps(self.frame_i, self.frame_j, n=100000)

    def test_deterministic(self):
        a = self._extract(self.frame_i, self.frame_j)
        b = self._extract(prepare_frame(self.cloud_i, self.cfg), prepare_frame(self.cloud_j, self.cfg))
        self.assertEqual(a.pairs.tobytes(), b.pairs.tobytes())

    def test_degenerate_pair(self):
        empty = self.frame_j._replace(keypoints=KeypointSet.empty())
        with self.assertRaises(DegenerateFramePairError):
            extract_mkps(self.frame_i, empty)

    def test_config_mismatch(self):
        other = prepare_frame(self.cloud_j, ProjectionConfig(height=64, width=512), detect=False)
        with self.assertRaises(DataError):
            extract_mkps(self.frame_i, other)


class TestMKPCsv(unittest.TestCase):

    def test_round_trip_with_labels(self):
        rng = np.random.default_rng(4)
        mkps = MKPSet(pairs=rng.normal(0, 20, (50, 6)), weights=rng.random(50), labels=rng.integers(0, 2, 50))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'mkps.csv')
            write_mkp_csv(mkps, path)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), 'xi,yi,zi,xj,yj,zj,weight,label')
            back = read_mkp_csv(path)
        np.testing.assert_array_equal(back.pairs, mkps.pairs)
        np.testing.assert_array_equal(back.weights, mkps.weights)
        np.testing.assert_array_equal(back.labels, mkps.labels)

    def test_plain_file(self):
        mkps = MKPSet(pairs=np.arange(12.0).reshape(2, 6) / 7.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'mkps.csv')
            write_mkp_csv(mkps, path)
            back = read_mkp_csv(path)
        np.testing.assert_array_equal(back.pairs, mkps.pairs)
        self.assertIsNone(back.labels)

    def test_wrong_columns(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'mkps.csv')
            with open(path, 'w') as f:
                f.write('a,b,c\n1,2,3\n')
            with self.assertRaises(DataError):
                read_mkp_csv(path)


if __name__ == '__main__':
    unittest.main()
