import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
import tensorflow as tf
from tensorboardX import SummaryWriter
from tqdm import tqdm

from src.core.agent.pointnet_model import NETWORK_NAMES, MLPSpec, NeuralEstimator, PointNetModel, \
    build_networks, resample_indices, top_k_indices
from src.core.exceptions import DataError, TrainingDivergenceError
from src.core.keypoints.mkp_extractor import MKPSet
from src.core.odometry.pose_utils import quat_from_pose, rotation_angle, yaw_pose
from src.core.odometry.twist_solver import label_mkps
from src.data.file_utils import atomic_write_bytes, atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_TRAIN_CONFIG = {'batch_size': 128,
                        'learning_rate': 1e-4,
                        'epochs': 50,
                        'augmentation_ratio': 0.05,
                        'beta_max_deg': 3.0,
                        'val_fraction': 0.1}

CHECKPOINT_WEIGHTS = 'weights.bin'
CHECKPOINT_MANIFEST = 'manifest.json'
BCE_EPSILON = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    epochs: int = 50
    augmentation_ratio: float = 0.05
    beta_max: float = float(np.radians(3.0))
    seed: int = 0
    n_points: int = 1000
    top_k: int = 100
    log_dir: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("'batch_size' must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("'learning_rate' must be > 0")
        if self.epochs < 1:
            raise ValueError("'epochs' must be >= 1")
        if not 0 <= self.augmentation_ratio <= 1:
            raise ValueError("'augmentation_ratio' must be in [0, 1]")
        if self.beta_max < 0:
            raise ValueError("'beta_max' must be >= 0")
        if not 1 <= self.top_k <= self.n_points:
            raise ValueError("'top_k' must be in [1, n_points]")


class TrainingSample(NamedTuple):
    """ Labeled MKPs of one frame pair and the pose mapping frame i onto frame i+1 """
    mkps: MKPSet
    gt: object


def make_training_samples(mkp_sets, gt_poses, threshold=0.1):
    if len(mkp_sets) != len(gt_poses):
        raise DataError("Got {} MKP sets for {} poses".format(len(mkp_sets), len(gt_poses)))
    return [TrainingSample(mkps=label_mkps(mkps, gt, threshold), gt=gt) for mkps, gt in zip(mkp_sets, gt_poses)]


def _yaw_pairs(pairs, gt, beta):
    """ Right-hand points and ground truth turned by the same yaw """
    yaw = yaw_pose(beta)
    rotated = np.array(pairs, dtype=np.float64, copy=True)
    rotated[..., 3:] = rotated[..., 3:] @ yaw.rotation.T
    return rotated, yaw.compose(gt)


def augment_rotation(mkps, gt, beta_max, seed):
    """
    Draws beta in (-beta_max, beta_max) and rotates the frame i+1 side of every pair by Yaw(beta).
    The returned ground truth is Yaw(beta) o gt, so pairs that were exact under gt stay exact.
    """

    if beta_max < 0:
        raise ValueError("'beta_max' must be >= 0")
    if beta_max == 0:
        return mkps, gt
    beta = np.random.default_rng(seed).uniform(-beta_max, beta_max)
    pairs, augmented_gt = _yaw_pairs(mkps.pairs, gt, beta)
    return MKPSet(pairs=pairs, weights=mkps.weights, labels=mkps.labels, pixel_pairs=mkps.pixel_pairs,
                  shortfall=mkps.shortfall), augmented_gt


def selection_loss_tf(labels, scores):
    scores = tf.clip_by_value(scores, BCE_EPSILON, 1.0 - BCE_EPSILON)
    return -tf.reduce_mean(labels * tf.math.log(scores) + (1.0 - labels) * tf.math.log(1.0 - scores))


def squared_l2_loss_tf(targets, predictions):
    return tf.reduce_mean(tf.reduce_sum(tf.square(predictions - targets), axis=-1))


def set_determinism(seed):
    tf.random.set_seed(seed)
    try:
        tf.config.experimental.enable_op_determinism()
    except (AttributeError, RuntimeError):
        logger.debug("op determinism is not available in this TensorFlow build")


def train_network(model, batch_fn, n_samples, loss_fn, cfg, name, rng, writer=None, progress=True):
    """
    Adam on one network. 'batch_fn(batch_idx, rng)' returns the (inputs, targets) of a batch.
    Returns the mean loss of every epoch.
    """

    optimizer = tf.keras.optimizers.Adam(learning_rate=cfg.learning_rate)
    variables = model.trainable_variables
    epoch_losses = []

    for epoch in tqdm(range(cfg.epochs), desc="Training {} network".format(name), disable=not progress):
        order = rng.permutation(n_samples)
        total, seen = 0.0, 0
        for start in range(0, n_samples, cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            inputs, targets = batch_fn(batch_idx, rng)
            with tf.GradientTape() as tape:
                loss = loss_fn(tf.constant(targets, dtype=tf.float64), model(inputs, training=True))
            loss_value = float(loss.numpy())
            if not np.isfinite(loss_value):
                raise TrainingDivergenceError("Loss of the {} network became {} in epoch {}".format(
                    name, loss_value, epoch))
            optimizer.apply_gradients(zip(tape.gradient(loss, variables), variables))
            total += loss_value * batch_idx.shape[0]
            seen += batch_idx.shape[0]

        epoch_losses.append(total / seen)
        if writer is not None:
            writer.add_scalar('{}/loss'.format(name), epoch_losses[-1], epoch)
    return epoch_losses


class TrainResult(NamedTuple):
    networks: dict
    loss_curve: pd.DataFrame


def _fixed_size_inputs(samples, cfg, rng):
    inputs = np.zeros((len(samples), cfg.n_points, 6))
    labels = np.zeros((len(samples), cfg.n_points))
    for i, sample in enumerate(samples):
        idx = resample_indices(len(sample.mkps), cfg.n_points, rng)
        inputs[i] = sample.mkps.pairs[idx]
        labels[i] = sample.mkps.labels[idx]
    return inputs, labels


def select_top_k(selector, inputs, top_k):
    scores = selector(inputs).numpy()
    return np.stack([inputs[i][top_k_indices(scores[i], top_k)] for i in range(inputs.shape[0])])


def train(samples, cfg=None, model_config=None, progress=True):
    """
    Trains the three networks one after the other: selection against the pair labels (binary
    cross-entropy), then rotation and translation on the top-k pairs the trained selection picks.
    A share 'augmentation_ratio' of every rotation batch is replaced by yaw-augmented copies.
    """

    cfg = TrainConfig() if cfg is None else cfg
    if len(samples) == 0:
        raise DataError("Training needs at least one sample")
    if any(sample.mkps.labels is None or len(sample.mkps) == 0 for sample in samples):
        raise DataError("Every training sample needs labeled MKPs")

    set_determinism(cfg.seed)
    networks = build_networks(model_config, seed=cfg.seed)
    writer = SummaryWriter(cfg.log_dir) if cfg.log_dir else None
    rows = []

    try:
        inputs, labels = _fixed_size_inputs(samples, cfg, np.random.default_rng([cfg.seed, 0]))
        losses = train_network(networks['selection'], lambda idx, _: (inputs[idx], labels[idx]), len(samples),
                               selection_loss_tf, cfg, 'selection', np.random.default_rng([cfg.seed, 1]),
                               writer, progress)
        rows += [('selection', epoch, loss) for epoch, loss in enumerate(losses)]

        selected = select_top_k(networks['selection'], inputs, cfg.top_k)
        gts = [sample.gt for sample in samples]
        rotation_targets = np.array([quat_from_pose(gt).vector for gt in gts])

        def rotation_batch(idx, rng):
            batch_inputs, batch_targets = selected[idx].copy(), rotation_targets[idx].copy()
            n_augmented = int(round(cfg.augmentation_ratio * idx.shape[0]))
            if n_augmented and cfg.beta_max > 0:
                for j in rng.choice(idx.shape[0], n_augmented, replace=False):
                    beta = rng.uniform(-cfg.beta_max, cfg.beta_max)
                    batch_inputs[j], augmented_gt = _yaw_pairs(batch_inputs[j], gts[idx[j]], beta)
                    batch_targets[j] = quat_from_pose(augmented_gt).vector
            return batch_inputs, batch_targets

        losses = train_network(networks['rotation'], rotation_batch, len(samples), squared_l2_loss_tf, cfg,
                               'rotation', np.random.default_rng([cfg.seed, 2]), writer, progress)
        rows += [('rotation', epoch, loss) for epoch, loss in enumerate(losses)]

        translation_targets = np.array([gt.translation for gt in gts])
        losses = train_network(networks['translation'], lambda idx, _: (selected[idx], translation_targets[idx]),
                               len(samples), squared_l2_loss_tf, cfg, 'translation',
                               np.random.default_rng([cfg.seed, 3]), writer, progress)
        rows += [('translation', epoch, loss) for epoch, loss in enumerate(losses)]
    finally:
        if writer is not None:
            writer.close()

    return TrainResult(networks=networks, loss_curve=pd.DataFrame(rows, columns=['network', 'epoch', 'loss']))


def write_loss_curve(loss_curve, path):
    atomic_write_text(path, loss_curve.to_csv(index=False, float_format='%.17g'))


def evaluate_networks(networks, samples, cfg=None):
    """ Mean rotation error (degrees) and translation error (meters) of the neural estimator """

    cfg = TrainConfig() if cfg is None else cfg
    estimator = NeuralEstimator(networks, n_points=cfg.n_points, top_k=cfg.top_k, seed=cfg.seed)
    rotation_errors, translation_errors = [], []
    for sample in samples:
        pose = estimator.estimate(sample.mkps)
        rotation_errors.append(np.degrees(rotation_angle(pose.rotation.T @ sample.gt.rotation)))
        translation_errors.append(np.linalg.norm(pose.translation - sample.gt.translation))
    return {'rotation_error_deg': float(np.mean(rotation_errors)),
            'translation_error_m': float(np.mean(translation_errors))}


def _sweep(parameter, values, make_cfg, train_samples, val_samples, model_config, progress):
    rows = []
    for value in values:
        result = train(train_samples, make_cfg(value), model_config, progress=progress)
        errors = evaluate_networks(result.networks, val_samples, make_cfg(value))
        logger.info("%s = %s: rotation %.4f deg, translation %.4f m", parameter, value,
                    errors['rotation_error_deg'], errors['translation_error_m'])
        rows.append({parameter: value, **errors})
    return pd.DataFrame(rows, columns=[parameter, 'rotation_error_deg', 'translation_error_m'])


def sweep_augmentation_ratio(train_samples, val_samples, ratios=(0.0, 0.05, 0.1, 0.2), cfg=None,
                             model_config=None, progress=False):
    """ Validation errors for every augmentation ratio, all other settings fixed """
    cfg = TrainConfig() if cfg is None else cfg
    make_cfg = lambda ratio: TrainConfig(**{**asdict(cfg), 'augmentation_ratio': ratio})
    return _sweep('augmentation_ratio', ratios, make_cfg, train_samples, val_samples, model_config, progress)


def sweep_top_k(train_samples, val_samples, top_ks=(25, 50, 100), cfg=None, model_config=None, progress=False):
    """ Validation errors for every selection size k """
    cfg = TrainConfig() if cfg is None else cfg
    make_cfg = lambda k: TrainConfig(**{**asdict(cfg), 'top_k': k})
    return _sweep('top_k', top_ks, make_cfg, train_samples, val_samples, model_config, progress)


def save_checkpoint(networks, directory):
    """
    Writes every network weight as row-major little-endian float32 into weights.bin, one tensor after
    the other, and describes them in manifest.json (tensor name, shape, byte offset, network specs).
    """

    tensors, chunks, offset = [], [], 0
    for net_name in NETWORK_NAMES:
        for layer in networks[net_name].dense_layers:
            for kind, variable in (('kernel', layer.kernel), ('bias', layer.bias)):
                values = np.ascontiguousarray(variable.numpy(), dtype='<f4')
                tensors.append({'name': '{}/{}/{}'.format(net_name, layer.name, kind),
                                'shape': list(values.shape),
                                'offset': offset})
                chunks.append(values.tobytes())
                offset += values.nbytes

    manifest = {'format': 'float32-le-row-major',
                'networks': {name: asdict(networks[name].mlp_spec) for name in NETWORK_NAMES},
                'tensors': tensors}
    os.makedirs(directory, exist_ok=True)
    atomic_write_bytes(os.path.join(directory, CHECKPOINT_WEIGHTS), b''.join(chunks))
    atomic_write_text(os.path.join(directory, CHECKPOINT_MANIFEST), json.dumps(manifest, indent=2))


def load_checkpoint(directory):
    with open(os.path.join(directory, CHECKPOINT_MANIFEST), 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    payload = np.fromfile(os.path.join(directory, CHECKPOINT_WEIGHTS), dtype='<f4')
    by_name = {tensor['name']: tensor for tensor in manifest['tensors']}

    networks = {}
    for net_name in NETWORK_NAMES:
        spec = MLPSpec(**manifest['networks'][net_name])
        model = PointNetModel(spec, name=net_name)
        for layer in model.dense_layers:
            for kind, variable in (('kernel', layer.kernel), ('bias', layer.bias)):
                key = '{}/{}/{}'.format(net_name, layer.name, kind)
                if key not in by_name:
                    raise DataError("Checkpoint '{}' has no tensor '{}'".format(directory, key))
                tensor = by_name[key]
                start = tensor['offset'] // 4
                count = int(np.prod(tensor['shape']))
                if list(variable.shape) != tensor['shape'] or start + count > payload.shape[0]:
                    raise DataError("Tensor '{}' does not fit the checkpoint layout".format(key))
                variable.assign(payload[start:start + count].reshape(tensor['shape']).astype(np.float64))
        networks[net_name] = model
    return networks
