import configparser
import copy
import json

from src.core.agent.pointnet_model import DEFAULT_MODEL_CONFIG
from src.core.agent.trainer import DEFAULT_TRAIN_CONFIG
from src.core.keypoints.mkp_extractor import DEFAULT_MATCHING_CONFIG
from src.core.keypoints.sift_detector import DEFAULT_DETECTOR_CONFIG
from src.core.odometry.estimators import DEFAULT_ICP_CONFIG, DEFAULT_RANSAC_CONFIG
from src.core.projection.spherical_projection import DEFAULT_PROJECTION_CONFIG
from src.data.file_utils import atomic_write_text

ESTIMATORS = ('closed_form_ransac', 'icp_baseline', 'neural')

DEFAULT_PIPELINE_CONFIG = {'projection': DEFAULT_PROJECTION_CONFIG,
                           'detector': DEFAULT_DETECTOR_CONFIG,
                           'matching': DEFAULT_MATCHING_CONFIG,
                           'mkps': {'n': 1000,
                                    'k': 100,
                                    'label_threshold': 0.1},
                           'ransac': DEFAULT_RANSAC_CONFIG,
                           'icp': DEFAULT_ICP_CONFIG,
                           'train': DEFAULT_TRAIN_CONFIG,
                           'model': DEFAULT_MODEL_CONFIG,
                           'paths': {'scans_dir': '',
                                     'gt_poses': '',
                                     'out_dir': 'output',
                                     'checkpoint': '',
                                     'scene': ''},
                           'run': {'estimator': 'closed_form_ransac',
                                   'seed': 0,
                                   'strict': False,
                                   'n_frames': 50,
                                   'prefetch': True,
                                   'plot_plane': 'xz'}}

# keys whose default is None hold an optional float
OPTIONAL_FLOAT_KEYS = {('matching', 'max_col_displacement')}


def add_default_dict(config):
    """ Section-wise merge of 'config' over the defaults """
    merged = copy.deepcopy(DEFAULT_PIPELINE_CONFIG)
    for section, values in config.items():
        merged.setdefault(section, {}).update(values)
    return merged


def _coerce(section, key, text):
    default = DEFAULT_PIPELINE_CONFIG[section][key]
    text = text.strip()
    try:
        if (section, key) in OPTIONAL_FLOAT_KEYS:
            return None if text.lower() in ('', 'none') else float(text)
        if isinstance(default, bool):
            states = configparser.ConfigParser.BOOLEAN_STATES
            if text.lower() not in states:
                raise ValueError
            return states[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.split(','))
        return text
    except ValueError:
        raise ValueError("Value '{}' of key '{}' in section [{}] can not be parsed".format(text, key, section))


def parse_config(text):
    parser = configparser.ConfigParser()
    parser.read_string(text)
    config = {}
    for section in parser.sections():
        if section not in DEFAULT_PIPELINE_CONFIG:
            raise ValueError("Config key '{0}' is not allowed !!!".format(section))
        config[section] = {}
        for key, value in parser.items(section):
            if key not in DEFAULT_PIPELINE_CONFIG[section]:
                raise ValueError("Config key '{0}' is not allowed !!!".format(key))
            config[section][key] = _coerce(section, key, value)
    return config


def load_pipeline_config(path=None, overrides=None):
    """ Defaults, then the INI file at 'path', then 'overrides' ({section: {key: value}}); validated """

    config = {}
    if path:
        with open(path, 'r', encoding='utf-8') as f:
            config = parse_config(f.read())
    config = add_default_dict(config)
    for section, values in (overrides or {}).items():
        config.setdefault(section, {}).update(values)
    _validate_config(config)
    return config


def _validate_config(config):
    """ tests if all inputs are allowed """

    for k, v in config.items():
        if k not in DEFAULT_PIPELINE_CONFIG.keys():
            raise ValueError("Config key '{0}' is not allowed !!!".format(k))
        for ky in v.keys():
            if ky not in DEFAULT_PIPELINE_CONFIG[k].keys():
                raise ValueError("Config key '{0}' is not allowed !!!".format(ky))

    if not config['mkps']['n'] >= config['mkps']['k'] >= 3:
        raise ValueError("MKP counts must satisfy n >= k >= 3, got n={} k={}".format(
            config['mkps']['n'], config['mkps']['k']))

    if config['mkps']['label_threshold'] <= 0:
        raise ValueError("'label_threshold' must be > 0")

    if config['run']['estimator'] not in ESTIMATORS:
        raise ValueError("'estimator' must be one of {}".format(', '.join(ESTIMATORS)))

    if config['run']['n_frames'] < 2:
        raise ValueError("'n_frames' must be >= 2")

    if config['train']['batch_size'] < 1 or config['train']['epochs'] < 1:
        raise ValueError("'batch_size' and 'epochs' must be >= 1")

    if config['train']['learning_rate'] <= 0:
        raise ValueError("'learning_rate' must be > 0")

    if config['train']['augmentation_ratio'] < 0 or config['train']['beta_max_deg'] < 0:
        raise ValueError("'augmentation_ratio' and 'beta_max_deg' must be >= 0")

    if not 0 <= config['train']['val_fraction'] < 1:
        raise ValueError("'val_fraction' has to be a fraction in [0, 1)")

    if config['ransac']['min_inliers'] < 3 or config['ransac']['iterations'] < 1:
        raise ValueError("'min_inliers' must be >= 3 and 'iterations' >= 1")

    if config['ransac']['inlier_threshold'] <= 0:
        raise ValueError("'inlier_threshold' must be > 0")

    if config['projection']['max_range'] <= 0:
        raise ValueError("'max_range' must be > 0")

    if config['run']['plot_plane'] not in ('xy', 'xz', 'yz'):
        raise ValueError("'plot_plane' must be one of xy, xz, yz")


def dump_params(config, path):
    """ The effective config next to the run outputs """
    atomic_write_text(path, json.dumps(config, indent=2, sort_keys=True, default=list))
