import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.core.agent.pointnet_model import NeuralEstimator
from src.core.agent.trainer import TrainConfig, evaluate_networks, load_checkpoint, make_training_samples, \
    save_checkpoint, train, write_loss_curve
from src.core.eval.evaluate import EvalReport, export_segment_error_plot, export_trajectory_plot, kitti_metrics, \
    read_pose_file, write_pose_file, write_report
from src.core.exceptions import DataError, EstimationError
from src.core.keypoints.mkp_extractor import MatchingParams, extract_mkps, prepare_frame, write_mkp_csv
from src.core.keypoints.sift_detector import DetectorParams
from src.core.odometry.estimators import RansacParams, iterative_registration, ransac_estimate
from src.core.odometry.pose_utils import Trajectory, accumulate_trajectory
from src.core.pipeline.config import dump_params
from src.core.projection.image_io import export_projection
from src.core.projection.spherical_projection import ProjectionConfig
from src.data.file_utils import atomic_write_text
from src.data.kitti_data_feed import KittiScanFeed, load_kitti_scan, scan_file_name, write_kitti_scan
from src.data.point_cloud import Pose
from src.data.synthetic.scene_generator import load_scene_spec, synth_sequence

logger = logging.getLogger(__name__)

TIMING_COLUMNS = ['frame', 'prepare_seconds', 'estimate_seconds', 'n_mkps', 'n_inliers', 'status']


def projection_config_from(config):
    return ProjectionConfig.from_dict(config['projection'])


def detector_params_from(config):
    return DetectorParams.from_dict(config['detector'])


def matching_params_from(config):
    return MatchingParams(**config['matching'])


def ransac_params_from(config):
    return RansacParams(**config['ransac'])


def train_config_from(config, log_dir=None):
    train_cfg = config['train']
    return TrainConfig(batch_size=train_cfg['batch_size'],
                       learning_rate=train_cfg['learning_rate'],
                       epochs=train_cfg['epochs'],
                       augmentation_ratio=train_cfg['augmentation_ratio'],
                       beta_max=float(np.radians(train_cfg['beta_max_deg'])),
                       seed=config['run']['seed'],
                       n_points=config['mkps']['n'],
                       top_k=config['mkps']['k'],
                       log_dir=log_dir)


def _out_dir(config):
    out_dir = config['paths']['out_dir']
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


class FramePairEstimator:
    """ Pose frame i -> frame i+1 with the configured estimator, plus the counts logged per pair """

    def __init__(self, config):
        self.config = config
        self.name = config['run']['estimator']
        self.seed = config['run']['seed']
        self.detector_params = detector_params_from(config)
        self.matching_params = matching_params_from(config)
        self.ransac_params = ransac_params_from(config)
        self.neural = None
        if self.name == 'neural':
            checkpoint = config['paths']['checkpoint']
            if not checkpoint or not os.path.isdir(checkpoint):
                raise FileNotFoundError("The neural estimator needs a checkpoint directory, got '{}'".format(
                    checkpoint))
            self.neural = NeuralEstimator(load_checkpoint(checkpoint), n_points=config['mkps']['n'],
                                          top_k=config['mkps']['k'], seed=self.seed)

    @property
    def needs_keypoints(self):
        return self.name != 'icp_baseline'

    def __call__(self, frame_idx, frame_i, frame_j):
        if self.name == 'icp_baseline':
            icp = self.config['icp']
            result = iterative_registration(frame_i.cloud, frame_j.cloud, max_iter=icp['max_iter'], tol=icp['tol'],
                                            max_points=icp['max_points'])
            if not result.converged:
                warnings.warn("ICP did not converge for frame {} (rmse {:.4f})".format(frame_idx, result.rmse))
            return result.pose, 0, 0

        mkps = extract_mkps(frame_i, frame_j, n=self.config['mkps']['n'], detector_params=self.detector_params,
                            matching_params=self.matching_params)
        if self.name == 'neural':
            return self.neural.estimate(mkps), len(mkps), 0
        pose, inliers = ransac_estimate(mkps, self.ransac_params, seed=[self.seed, frame_idx])
        return pose, len(mkps), int(inliers.sum())


class PreparedFrame(NamedTuple):
    frame_idx: int
    frame: Optional[object]
    error: Optional[Exception]
    seconds: float


def _prepare(feed_frame, load, cfg, detector_params, detect):
    start = time.perf_counter()
    try:
        frame = prepare_frame(load(feed_frame), cfg, detector_params, detect=detect)
        return PreparedFrame(feed_frame, frame, None, time.perf_counter() - start)
    except (DataError, EstimationError) as e:
        return PreparedFrame(feed_frame, None, e, time.perf_counter() - start)


def prepared_frames(frames, load, cfg, detector_params, detect=True, prefetch=True):
    """ Prepared frames in order; with prefetch the next frame is prepared while the caller works on the current """

    if not prefetch:
        for frame_idx in frames:
            yield _prepare(frame_idx, load, cfg, detector_params, detect)
        return

    with ThreadPoolExecutor(max_workers=1) as executor:
        pending = None
        for frame_idx in frames:
            future = executor.submit(_prepare, frame_idx, load, cfg, detector_params, detect)
            if pending is not None:
                yield pending.result()
            pending = future
        if pending is not None:
            yield pending.result()


class OdometryResult(NamedTuple):
    trajectory: Trajectory
    report: Optional[EvalReport]
    timing: pd.DataFrame
    failed_frames: List[int]


def run_odometry(config, feed=None, progress=True):
    """
    project -> complete -> equalize -> MKPs -> pose for every consecutive pair, accumulated into a
    trajectory and written as a KITTI pose file. In non-strict mode a failing pair contributes an
    identity motion and a warning; with run.strict the failure propagates.
    """

    out_dir = _out_dir(config)
    strict = config['run']['strict']
    if feed is None:
        feed = KittiScanFeed(config['paths']['scans_dir'])
    if len(feed) < 2:
        raise DataError("Odometry needs at least 2 scans, got {}".format(len(feed)))
    gt_path = config['paths']['gt_poses']
    if gt_path and not os.path.isfile(gt_path):
        raise FileNotFoundError("Ground-truth pose file '{}' does not exist".format(gt_path))

    cfg = projection_config_from(config)
    estimator = FramePairEstimator(config)
    frames = prepared_frames(feed.frames, lambda frame: load_kitti_scan(feed.scan_path(frame)), cfg,
                             estimator.detector_params, detect=estimator.needs_keypoints,
                             prefetch=config['run']['prefetch'])

    motions, rows, failed = [], [], []
    previous = None
    for current in tqdm(frames, total=len(feed), desc="Odometry", disable=not progress):
        if previous is None:
            if current.error is not None and strict:
                raise current.error
            previous = current
            rows.append([current.frame_idx, current.seconds, 0.0, 0, 0, 'first' if current.error is None else 'failed'])
            continue

        start = time.perf_counter()
        n_mkps, n_inliers, status = 0, 0, 'ok'
        try:
            failure = previous.error or current.error
            if failure is not None:
                raise failure
            point_pose, n_mkps, n_inliers = estimator(previous.frame_idx, previous.frame, current.frame)
            # sensor motion is the inverse of the point motion
            motion = point_pose.inverse()
        except (DataError, EstimationError) as e:
            if strict:
                raise
            warnings.warn("Frame {} skipped, identity motion used: {}".format(current.frame_idx, e))
            motion, status = Pose.identity(), 'failed'
            failed.append(current.frame_idx)

        motions.append(motion)
        rows.append([current.frame_idx, current.seconds, time.perf_counter() - start, n_mkps, n_inliers, status])
        previous = current

    trajectory = accumulate_trajectory(motions)
    write_pose_file(trajectory, os.path.join(out_dir, 'poses.txt'))
    timing = pd.DataFrame(rows, columns=TIMING_COLUMNS)
    atomic_write_text(os.path.join(out_dir, 'timing.csv'), timing.to_csv(index=False))
    dump_params(config, os.path.join(out_dir, 'params.json'))

    report = None
    if gt_path:
        gt = read_pose_file(gt_path)
        report = kitti_metrics(trajectory, gt)
        write_report(report, os.path.join(out_dir, 'eval.json'))
        logger.info("odometry metrics\n%s", report.table())

    logger.info("%d frames, %d failed, poses written to %s", len(trajectory), len(failed), out_dir)
    return OdometryResult(trajectory=trajectory, report=report, timing=timing, failed_frames=failed)


def run_synth(config):
    """ Scan directory (velodyne/NNNNNN.bin) and ground-truth pose file of a synthetic sequence """

    out_dir = _out_dir(config)
    scene_path = config['paths']['scene']
    if not scene_path or not os.path.isfile(scene_path):
        raise FileNotFoundError("Scene spec '{}' does not exist".format(scene_path))
    spec = load_scene_spec(scene_path)

    clouds, gt = synth_sequence(config['run']['seed'], spec, config['run']['n_frames'])
    scans_dir = os.path.join(out_dir, 'velodyne')
    os.makedirs(scans_dir, exist_ok=True)
    for frame_idx, cloud in enumerate(tqdm(clouds, desc="Writing scans")):
        write_kitti_scan(cloud, os.path.join(scans_dir, scan_file_name(frame_idx)))
    gt_path = os.path.join(out_dir, 'poses_gt.txt')
    write_pose_file(gt, gt_path)
    dump_params(config, os.path.join(out_dir, 'params.json'))
    logger.info("%d synthetic scans written to %s", len(clouds), scans_dir)
    return scans_dir, gt_path


def run_project(config, scan_path):
    """ Debug images of one scan: depth and equalized PGM plus the index map CSV """

    out_dir = _out_dir(config)
    frame = prepare_frame(load_kitti_scan(scan_path), projection_config_from(config), detect=False)
    prefix = os.path.join(out_dir, os.path.splitext(os.path.basename(scan_path))[0])
    paths = export_projection(frame.image, frame.equalized, prefix)
    logger.info("%d valid pixels, %d points outside the FOV", frame.image.n_valid, frame.image.n_dropped)
    return paths


def run_mkps(config, scan_a, scan_b):
    out_dir = _out_dir(config)
    cfg = projection_config_from(config)
    detector_params = detector_params_from(config)
    frame_i = prepare_frame(load_kitti_scan(scan_a), cfg, detector_params)
    frame_j = prepare_frame(load_kitti_scan(scan_b), cfg, detector_params)
    mkps = extract_mkps(frame_i, frame_j, n=config['mkps']['n'], matching_params=matching_params_from(config))
    path = os.path.join(out_dir, 'mkps.csv')
    write_mkp_csv(mkps, path)
    logger.info("%d MKPs written to %s (shortfall %d)", len(mkps), path, mkps.shortfall)
    return mkps


def collect_training_samples(config, progress=True):
    """ Labeled MKPs of every consecutive scan pair, from the configured scans or a synthetic scene """

    cfg = projection_config_from(config)
    detector_params = detector_params_from(config)
    if config['paths']['scans_dir']:
        feed = KittiScanFeed(config['paths']['scans_dir'])
        clouds = [cloud for _, cloud in feed]
        gt = read_pose_file(config['paths']['gt_poses'])
    else:
        scene_path = config['paths']['scene']
        if not scene_path or not os.path.isfile(scene_path):
            raise FileNotFoundError("Training needs 'scans_dir' and 'gt_poses' or a scene spec")
        clouds, gt = synth_sequence(config['run']['seed'], load_scene_spec(scene_path), config['run']['n_frames'])
    if len(gt) != len(clouds):
        raise DataError("Got {} scans for {} ground-truth poses".format(len(clouds), len(gt)))

    mkp_sets, point_poses = [], []
    frames = [prepare_frame(cloud, cfg, detector_params) for cloud in tqdm(clouds, desc="Preparing frames",
                                                                           disable=not progress)]
    for k, motion in enumerate(gt.relative_poses()):
        try:
            mkps = extract_mkps(frames[k], frames[k + 1], n=config['mkps']['n'],
                                matching_params=matching_params_from(config))
        except EstimationError as e:
            warnings.warn("Pair {} left out of training: {}".format(k, e))
            continue
        mkp_sets.append(mkps)
        point_poses.append(motion.inverse())
    return make_training_samples(mkp_sets, point_poses, config['mkps']['label_threshold'])


def run_train(config, samples=None, progress=True):
    """ Trains the neural estimator, writes checkpoint/, loss_curve.csv and params.json """

    out_dir = _out_dir(config)
    samples = collect_training_samples(config, progress) if samples is None else samples
    n_val = int(round(config['train']['val_fraction'] * len(samples)))
    train_samples, val_samples = samples[:len(samples) - n_val], samples[len(samples) - n_val:]

    train_cfg = train_config_from(config, log_dir=os.path.join(out_dir, 'tensorboard'))
    result = train(train_samples, train_cfg, config['model'], progress=progress)

    save_checkpoint(result.networks, os.path.join(out_dir, 'checkpoint'))
    write_loss_curve(result.loss_curve, os.path.join(out_dir, 'loss_curve.csv'))
    dump_params(config, os.path.join(out_dir, 'params.json'))
    if val_samples:
        errors = evaluate_networks(result.networks, val_samples, train_cfg)
        logger.info("validation: rotation %.4f deg, translation %.4f m", errors['rotation_error_deg'],
                    errors['translation_error_m'])
    return result


def run_eval(est_path, gt_path, out_dir=None):
    report = kitti_metrics(read_pose_file(est_path), read_pose_file(gt_path))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_report(report, os.path.join(out_dir, 'eval.json'))
        if report.segments:
            export_segment_error_plot(report, os.path.join(out_dir, 'segment_errors.csv'),
                                      os.path.join(out_dir, 'segment_errors.svg'))
    return report


def run_plot(config, pose_paths):
    """ Overlay plot of pose files; each trajectory is named after its file """

    out_dir = _out_dir(config)
    trajectories = {os.path.splitext(os.path.basename(path))[0]: read_pose_file(path) for path in pose_paths}
    return export_trajectory_plot(trajectories, os.path.join(out_dir, 'trajectories.csv'),
                                  os.path.join(out_dir, 'trajectories.svg'), plane=config['run']['plot_plane'])
