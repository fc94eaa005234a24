import json
import os
import tempfile
import unittest
import xml.etree.ElementTree as ElementTree

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from src.core.eval.evaluate import SEGMENT_LENGTHS, export_segment_error_plot, export_trajectory_plot, \
    kitti_metrics, read_pose_file, segment_errors, trajectory_distances, write_pose_file
from src.core.exceptions import DataError, PoseFileError
from src.core.odometry.pose_utils import Trajectory, accumulate_trajectory
from src.data.point_cloud import Pose

SVG_NS = '{http://www.w3.org/2000/svg}'


def straight_line(n, step=1.0):
    return accumulate_trajectory([Pose(rotation=np.eye(3), translation=[step, 0.0, 0.0])] * (n - 1))


def wandering_trajectory(rng, n):
    steps = [Pose(rotation=Rotation.from_euler('xyz', rng.normal(0, [0.002, 0.002, 0.02])).as_matrix(),
                  translation=[1.0 + rng.normal(0, 0.05), rng.normal(0, 0.02), rng.normal(0, 0.01)])
             for _ in range(n - 1)]
    return accumulate_trajectory(steps)


def perturbed(trajectory, rng, sigma=0.01):
    steps = [Pose(rotation=Rotation.from_rotvec(rng.normal(0, 0.001, 3)).as_matrix() @ step.rotation,
                  translation=step.translation + rng.normal(0, sigma, 3))
             for step in trajectory.relative_poses()]
    return accumulate_trajectory(steps)


def svg_polyline(svg_path, gid):
    """ Vertices of the path drawn for the line with the given gid """
    root = ElementTree.parse(svg_path).getroot()
    for group in root.iter(SVG_NS + 'g'):
        if group.get('id') == gid:
            path = next(group.iter(SVG_NS + 'path'))
            return path.get('d').replace('M', ' ').replace('L', ' ').split()
    raise AssertionError("no element with id '{}'".format(gid))


class TestKittiMetrics(unittest.TestCase):

    def test_perfect_estimate(self):
        gt = straight_line(1000)
        report = kitti_metrics(gt, gt)
        self.assertAlmostEqual(report.t_rel, 0.0, places=9)
        self.assertAlmostEqual(report.r_rel, 0.0, places=4)
        self.assertFalse(report.short_path)
        self.assertEqual([s.length for s in report.segments], list(map(float, SEGMENT_LENGTHS)))

    def test_scaled_straight_line(self):
        # every segment of length L is estimated as 1.01 L long: 1 % translational error everywhere
        gt = straight_line(1000)
        est = straight_line(1000, step=1.01)
        report = kitti_metrics(est, gt)
        self.assertAlmostEqual(report.t_rel, 1.0, places=9)
        self.assertAlmostEqual(report.r_rel, 0.0, places=4)

        # 900 start frames reach a 100 m segment, 200 reach 800 m
        counts = {s.length: s.count for s in report.segments}
        self.assertEqual(counts[100.0], 900)
        self.assertEqual(counts[800.0], 200)

    def test_segment_partition_uses_ground_truth_only(self):
        rng = np.random.default_rng(0)
        gt = wandering_trajectory(rng, 400)
        a = segment_errors(perturbed(gt, rng), gt)
        b = segment_errors(perturbed(gt, rng, sigma=0.2), gt)
        np.testing.assert_array_equal(a[['first', 'length']].to_numpy(), b[['first', 'length']].to_numpy())

    def test_segment_end_frame(self):
        gt = straight_line(300)
        errors = segment_errors(gt, gt, lengths=(100,))
        self.assertEqual(errors.shape[0], 200)
        dist = trajectory_distances(gt)
        self.assertEqual(dist[100] - dist[0], 100.0)

    def test_invariant_to_a_common_rigid_motion(self):
        rng = np.random.default_rng(1)
        gt = wandering_trajectory(rng, 400)
        est = perturbed(gt, rng)
        offset = Pose(rotation=Rotation.random(random_state=3).as_matrix(), translation=[5.0, -2.0, 1.0])
        report = kitti_metrics(est, gt)
        moved = kitti_metrics(est.transformed(offset), gt.transformed(offset))
        self.assertAlmostEqual(report.t_rel, moved.t_rel, places=9)
        self.assertAlmostEqual(report.r_rel, moved.r_rel, places=6)

    def test_positive_on_a_wrong_estimate(self):
        rng = np.random.default_rng(2)
        gt = wandering_trajectory(rng, 300)
        report = kitti_metrics(perturbed(gt, rng), gt)
        self.assertGreater(report.t_rel, 0.0)
        self.assertGreater(report.r_rel, 0.0)

    def test_short_path(self):
        gt = straight_line(50)
        report = kitti_metrics(gt, gt)
        self.assertTrue(report.short_path)
        self.assertEqual(report.segments, [])
        self.assertEqual(report.path_length, 49.0)
        self.assertIn('no segments', report.table())

    def test_bad_inputs(self):
        with self.assertRaises(DataError):
            kitti_metrics(straight_line(10), straight_line(11))
        with self.assertRaises(DataError):
            kitti_metrics(Trajectory(), Trajectory())

    def test_report_json(self):
        report = kitti_metrics(straight_line(300, 1.01), straight_line(300))
        restored = json.loads(report.to_json())
        self.assertEqual(restored['t_rel'], report.t_rel)
        self.assertEqual(len(restored['segments']), 2)
        self.assertIn('t_rel (%)', report.table())


class TestPoseFiles(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'poses.txt')

    def tearDown(self):
        self.tmp.cleanup()

    def _write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)

    def test_identity_line(self):
        self._write('1 0 0 0 0 1 0 0 0 0 1 0\n')
        trajectory = read_pose_file(self.path)
        self.assertEqual(len(trajectory), 1)
        self.assertEqual(trajectory[0], Pose.identity())

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        trajectory = wandering_trajectory(rng, 50)
        write_pose_file(trajectory, self.path)
        restored = read_pose_file(self.path)
        for a, b in zip(trajectory, restored):
            self.assertEqual(a, b)

    def test_malformed_line(self):
        self._write('1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n')
        with self.assertRaises(PoseFileError) as ctx:
            read_pose_file(self.path)
        self.assertIn(':2:', str(ctx.exception))

        self._write('1 0 0 0 0 1 0 0 0 0 1 x\n')
        with self.assertRaises(PoseFileError):
            read_pose_file(self.path)

    def test_rotation_not_orthonormal(self):
        self._write('1 0 0 0 0 1 0 0 0 0 1 0\n1.01 0 0 0 0 1 0 0 0 0 1 0\n')
        with self.assertWarns(UserWarning) as ctx:
            trajectory = read_pose_file(self.path)
        self.assertIn('frame 1', str(ctx.warning))
        np.testing.assert_allclose(trajectory[1].rotation, np.eye(3), atol=1e-9)

    def test_empty_file(self):
        self._write('')
        with self.assertRaises(PoseFileError):
            read_pose_file(self.path)


class TestPlots(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.csv_path = os.path.join(self.tmp.name, 'trajectories.csv')
        self.svg_path = os.path.join(self.tmp.name, 'trajectories.svg')

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_identity(self):
        frame = export_trajectory_plot({'gt': Trajectory()}, self.csv_path, self.svg_path)
        self.assertEqual(frame.shape[0], 1)
        self.assertEqual((frame['x'][0], frame['z'][0]), (0.0, 0.0))
        self.assertTrue(os.path.isfile(self.svg_path))

    def test_polyline_vertices(self):
        export_trajectory_plot({'gt': straight_line(100)}, self.csv_path, self.svg_path)
        values = svg_polyline(self.svg_path, 'trajectory-gt')
        self.assertEqual(len(values), 200)

    def test_csv_parses_back(self):
        rng = np.random.default_rng(5)
        gt = wandering_trajectory(rng, 60)
        est = perturbed(gt, rng)
        export_trajectory_plot({'gt': gt, 'est': est}, self.csv_path, self.svg_path)
        frame = pd.read_csv(self.csv_path, float_precision='round_trip')
        self.assertEqual(list(frame.columns), ['trajectory', 'frame', 'x', 'z'])
        np.testing.assert_array_equal(frame[frame['trajectory'] == 'est'][['x', 'z']].to_numpy(),
                                      est.positions[:, [0, 2]])

    def test_deterministic_svg(self):
        trajectories = {'gt': straight_line(20)}
        export_trajectory_plot(trajectories, self.csv_path, self.svg_path)
        with open(self.svg_path, 'rb') as f:
            first = f.read()
        export_trajectory_plot(trajectories, self.csv_path, self.svg_path)
        with open(self.svg_path, 'rb') as f:
            self.assertEqual(f.read(), first)

    def test_no_trajectory(self):
        with self.assertRaises(ValueError):
            export_trajectory_plot({}, self.csv_path, self.svg_path)

    def test_segment_error_plot(self):
        report = kitti_metrics(straight_line(1000, 1.01), straight_line(1000))
        frame = export_segment_error_plot(report, os.path.join(self.tmp.name, 'segments.csv'),
                                          os.path.join(self.tmp.name, 'segments.svg'))
        np.testing.assert_allclose(frame['t_err_percent'], 1.0, atol=1e-9)
        self.assertEqual(frame['length'].tolist(), list(map(float, SEGMENT_LENGTHS)))


if __name__ == '__main__':
    unittest.main()
