from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
import tensorflow as tf

from src.core.odometry.pose_utils import quat_recover, quat_to_rotation
from src.data.point_cloud import Pose

DEFAULT_MODEL_CONFIG = {'point_widths': (64, 128, 256),
                        'head_widths': (128,),
                        'input_scale': 0.1}

NETWORK_NAMES = ('selection', 'rotation', 'translation')


@dataclass(frozen=True)
class MLPSpec:
    """
    Shared per-point MLP (input_width -> point_widths), max-pool over the points, then a head
    (head_widths -> output_width). With concat_global the pooled feature is appended to every point
    feature and the head runs per point (selection); otherwise it runs once on the pooled feature.
    """

    point_widths: Tuple[int, ...] = (64, 128, 256)
    head_widths: Tuple[int, ...] = (128,)
    output_width: int = 3
    output_activation: str = 'linear'
    concat_global: bool = False
    input_width: int = 6
    input_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, 'point_widths', tuple(int(w) for w in self.point_widths))
        object.__setattr__(self, 'head_widths', tuple(int(w) for w in self.head_widths))
        if self.input_width != 6:
            raise ValueError("MKP rows have 6 values, 'input_width' must be 6")
        if len(self.point_widths) == 0 or min(self.point_widths + self.head_widths) < 1:
            raise ValueError("Layer widths must be >= 1")
        if self.output_activation not in ('linear', 'sigmoid'):
            raise ValueError("'output_activation' must be 'linear' or 'sigmoid'")


def selection_spec(point_widths=(64, 128, 256), head_widths=(128,), input_scale=0.1):
    return MLPSpec(point_widths=point_widths, head_widths=head_widths, output_width=1,
                   output_activation='sigmoid', concat_global=True, input_scale=input_scale)


def regression_spec(point_widths=(64, 128, 256), head_widths=(128,), input_scale=0.1):
    return MLPSpec(point_widths=point_widths, head_widths=head_widths, output_width=3,
                   output_activation='linear', concat_global=False, input_scale=input_scale)


class PointNetModel(tf.keras.Model):
    """ PointNet without input/feature transform nets, float64 throughout """

    def __init__(self, spec, seed=0, name=None):
        super(PointNetModel, self).__init__(name=name, dtype='float64')
        self.mlp_spec = spec

        def dense(width, activation, layer_name, layer_seed):
            return tf.keras.layers.Dense(width,
                                         activation=activation,
                                         dtype='float64',
                                         kernel_initializer=tf.keras.initializers.GlorotUniform(seed=layer_seed),
                                         name=layer_name)

        self.point_layers = [dense(width, 'relu', 'point_{}'.format(i), seed + i)
                             for i, width in enumerate(spec.point_widths)]
        offset = seed + len(spec.point_widths)
        self.head_layers = [dense(width, 'relu', 'head_{}'.format(i), offset + i)
                            for i, width in enumerate(spec.head_widths)]
        self.output_layer = dense(spec.output_width, spec.output_activation, 'output', offset + len(spec.head_widths))

        # creates the weights
        self(tf.zeros((1, 1, spec.input_width), dtype=tf.float64))

    @property
    def dense_layers(self):
        return self.point_layers + self.head_layers + [self.output_layer]

    def call(self, inputs, training=False):
        features = tf.convert_to_tensor(inputs, dtype=tf.float64) * self.mlp_spec.input_scale
        for layer in self.point_layers:
            features = layer(features)
        pooled = tf.reduce_max(features, axis=1)

        if self.mlp_spec.concat_global:
            hidden = tf.concat([features, tf.broadcast_to(pooled[:, None, :], tf.shape(features))], axis=-1)
        else:
            hidden = pooled
        for layer in self.head_layers:
            hidden = layer(hidden)
        output = self.output_layer(hidden)
        return tf.squeeze(output, axis=-1) if self.mlp_spec.concat_global else output


def build_networks(config=None, seed=0):
    """ The three networks of the neural estimator, seeded independently """

    config = {**DEFAULT_MODEL_CONFIG, **(config or {})}
    kwargs = dict(point_widths=config['point_widths'], head_widths=config['head_widths'],
                  input_scale=config['input_scale'])
    return {'selection': PointNetModel(selection_spec(**kwargs), seed=seed, name='selection'),
            'rotation': PointNetModel(regression_spec(**kwargs), seed=seed + 1000, name='rotation'),
            'translation': PointNetModel(regression_spec(**kwargs), seed=seed + 2000, name='translation')}


class SelectionOutput(NamedTuple):
    scores: np.ndarray
    top_k: np.ndarray


def top_k_indices(scores, k):
    """ Indices of the k largest scores, ties to the lower index """
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:min(k, scores.shape[0])]


def _as_batch(pairs):
    pairs = getattr(pairs, 'pairs', pairs)
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 6)
    if pairs.shape[0] == 0:
        raise ValueError("At least one MKP is needed")
    return pairs[None, :, :]


def selection_forward(model, mkps, k=100):
    scores = model(_as_batch(mkps)).numpy()[0]
    return SelectionOutput(scores=scores, top_k=top_k_indices(scores, k))


def rotation_forward(model, selected):
    """ Predicted quaternion vector part (b, c, d) """
    return model(_as_batch(selected)).numpy()[0]


def translation_forward(model, selected):
    return model(_as_batch(selected)).numpy()[0]


def rotation_loss(pred, gt):
    """ Squared L2 between the prediction and the vector part of the ground-truth quaternion """
    return float(np.sum((np.asarray(pred, dtype=np.float64) - gt.vector) ** 2))


def translation_loss(pred, gt):
    return float(np.sum((np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) ** 2))


def resample_indices(m, size, rng):
    """ First 'size' rows when there are enough, otherwise all rows plus rows drawn with replacement """
    if m >= size:
        return np.arange(size)
    return np.concatenate([np.arange(m), rng.choice(m, size - m, replace=True)])


class NeuralEstimator:
    """ selection -> top-k -> rotation and translation regression, giving the pose frame i -> frame i+1 """

    def __init__(self, networks, n_points=1000, top_k=100, seed=0):
        self.networks = networks
        self.n_points = n_points
        self.top_k = top_k
        self.seed = seed

    def select(self, mkps):
        pairs = getattr(mkps, 'pairs', mkps)
        rows = pairs[resample_indices(pairs.shape[0], self.n_points, np.random.default_rng(self.seed))]
        return rows[selection_forward(self.networks['selection'], rows, self.top_k).top_k]

    def estimate(self, mkps):
        selected = self.select(mkps)
        quaternion, _ = quat_recover(rotation_forward(self.networks['rotation'], selected))
        translation = translation_forward(self.networks['translation'], selected)
        return Pose(rotation=quat_to_rotation(quaternion), translation=translation)

    def quaternion_output(self, mkps):
        """ The 7 values (a, b, c, d, tx, ty, tz) predicted for one frame pair """
        selected = self.select(mkps)
        quaternion, _ = quat_recover(rotation_forward(self.networks['rotation'], selected))
        return np.concatenate([quaternion.as_array(), translation_forward(self.networks['translation'], selected)])
