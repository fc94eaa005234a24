import configparser
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.exceptions import SceneSpecError
from src.core.odometry.pose_utils import Trajectory
from src.core.projection.spherical_projection import ProjectionConfig
from src.data.point_cloud import PointCloud, Pose

logger = logging.getLogger(__name__)

# rays must leave the sensor before they can hit a surface
MIN_HIT_DISTANCE = 1e-6

DEFAULT_SCANNER_CONFIG = {'rings': 64,
                          'azimuth_steps': 1024,
                          'fov_up_deg': 2.0,
                          'fov_down_deg': -24.8,
                          'max_range': 80.0,
                          'range_noise': 0.0,
                          'dropout': 0.0}

DEFAULT_MOTION_CONFIG = {'forward': 0.5,
                         'lateral': 0.0,
                         'vertical': 0.0,
                         'yaw_deg': 0.2}

DEFAULT_PRIMITIVE_CONFIG = {'plane': {'normal': (0.0, 0.0, 1.0),
                                      'offset': -1.7,
                                      'reflectivity': 0.3},
                            'box': {'center': (10.0, 0.0, 0.0),
                                    'size': (2.0, 2.0, 2.0),
                                    'yaw_deg': 0.0,
                                    'velocity': (0.0, 0.0, 0.0),
                                    'reflectivity': 0.6},
                            'cylinder': {'center': (5.0, 5.0),
                                         'radius': 0.3,
                                         'z_min': -1.7,
                                         'z_max': 2.0,
                                         'velocity': (0.0, 0.0, 0.0),
                                         'reflectivity': 0.8}}


def yaw_matrix(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ScannerConfig:
    """ Spinning multi-ring LiDAR: 'rings' elevation bins over the vertical FOV, 'azimuth_steps' firings per turn """

    rings: int = 64
    azimuth_steps: int = 1024
    fov_up_deg: float = 2.0
    fov_down_deg: float = -24.8
    max_range: float = 80.0
    range_noise: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        if self.rings < 1 or self.azimuth_steps < 1:
            raise SceneSpecError("'rings' and 'azimuth_steps' must be >= 1")
        if self.fov_down_deg >= self.fov_up_deg:
            raise SceneSpecError("'fov_up_deg' must be larger than 'fov_down_deg'")
        if self.max_range <= 0:
            raise SceneSpecError("'max_range' must be > 0")
        if self.range_noise < 0:
            raise SceneSpecError("'range_noise' must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise SceneSpecError("'dropout' has to be a fraction in [0, 1)")

    def projection_config(self):
        """ The projection that puts every ray of this scanner into its own pixel """
        return ProjectionConfig(height=self.rings,
                                width=self.azimuth_steps,
                                vertical_fov=(np.radians(self.fov_down_deg), np.radians(self.fov_up_deg)),
                                max_range=self.max_range)


@dataclass(frozen=True)
class MotionConfig:
    """ Constant sensor motion per frame, expressed in the sensor frame of the previous scan """

    forward: float = 0.5
    lateral: float = 0.0
    vertical: float = 0.0
    yaw_deg: float = 0.2

    def as_pose(self):
        return Pose(rotation=yaw_matrix(np.radians(self.yaw_deg)),
                    translation=[self.forward, self.lateral, self.vertical])


class Primitive:
    kind = None

    def at_frame(self, frame_idx):
        """ The primitive as it is placed when scan 'frame_idx' is taken """
        return self

    def intersect(self, origin, directions):
        """ Distance along every ray to the first hit, np.inf where the ray misses """
        raise NotImplementedError

    def surface_distance(self, points):
        raise NotImplementedError


@dataclass(frozen=True)
class Plane(Primitive):
    """ Infinite plane n . p = offset """

    name: str = 'ground'
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = -1.7
    reflectivity: float = 0.3
    kind = 'plane'

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if norm == 0:
            raise SceneSpecError("Plane '{}' has a zero normal".format(self.name))
        object.__setattr__(self, 'normal', tuple(normal / norm))

    def intersect(self, origin, directions):
        normal = np.asarray(self.normal)
        denom = directions @ normal
        t = np.full(directions.shape[0], np.inf)
        facing = np.abs(denom) > 1e-12
        t[facing] = (self.offset - origin @ normal) / denom[facing]
        t[t <= MIN_HIT_DISTANCE] = np.inf
        return t

    def surface_distance(self, points):
        return np.abs(np.asarray(points) @ np.asarray(self.normal) - self.offset)


@dataclass(frozen=True)
class Box(Primitive):
    """ Box with a yaw about the vertical axis; 'velocity' moves it every frame """

    name: str = 'box'
    center: Tuple[float, float, float] = (10.0, 0.0, 0.0)
    size: Tuple[float, float, float] = (2.0, 2.0, 2.0)
    yaw_deg: float = 0.0
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    reflectivity: float = 0.6
    kind = 'box'

    def __post_init__(self):
        if np.any(np.asarray(self.size) <= 0):
            raise SceneSpecError("Box '{}' must have a positive size".format(self.name))

    def at_frame(self, frame_idx):
        center = np.asarray(self.center) + frame_idx * np.asarray(self.velocity)
        return Box(name=self.name, center=tuple(center), size=self.size, yaw_deg=self.yaw_deg,
                   velocity=self.velocity, reflectivity=self.reflectivity)

    def _to_local(self, points):
        # row vectors: p_local = Rz(-yaw) (p - c)
        return (np.asarray(points) - np.asarray(self.center)) @ yaw_matrix(np.radians(self.yaw_deg))

    def intersect(self, origin, directions):
        half = 0.5 * np.asarray(self.size)
        local_origin = self._to_local(origin)
        local_dirs = directions @ yaw_matrix(np.radians(self.yaw_deg))

        with np.errstate(divide='ignore', invalid='ignore'):
            inv_dirs = 1.0 / local_dirs
            t1 = (-half - local_origin) * inv_dirs
            t2 = (half - local_origin) * inv_dirs
        t_near = np.where(np.isnan(t1) | np.isnan(t2), -np.inf, np.minimum(t1, t2)).max(axis=1)
        t_far = np.where(np.isnan(t1) | np.isnan(t2), np.inf, np.maximum(t1, t2)).min(axis=1)

        hit = t_far >= np.maximum(t_near, MIN_HIT_DISTANCE)
        t = np.where(t_near > MIN_HIT_DISTANCE, t_near, t_far)
        return np.where(hit, t, np.inf)

    def surface_distance(self, points):
        q = np.abs(self._to_local(points)) - 0.5 * np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Cylinder(Primitive):
    """ Closed vertical cylinder between z_min and z_max """

    name: str = 'pole'
    center: Tuple[float, float] = (5.0, 5.0)
    radius: float = 0.3
    z_min: float = -1.7
    z_max: float = 2.0
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    reflectivity: float = 0.8
    kind = 'cylinder'

    def __post_init__(self):
        if self.radius <= 0:
            raise SceneSpecError("Cylinder '{}' must have a positive radius".format(self.name))
        if self.z_min >= self.z_max:
            raise SceneSpecError("Cylinder '{}' must have 'z_max' larger than 'z_min'".format(self.name))

    def at_frame(self, frame_idx):
        shift = frame_idx * np.asarray(self.velocity)
        return Cylinder(name=self.name, center=(self.center[0] + shift[0], self.center[1] + shift[1]),
                        radius=self.radius, z_min=self.z_min + shift[2], z_max=self.z_max + shift[2],
                        velocity=self.velocity, reflectivity=self.reflectivity)

    def intersect(self, origin, directions):
        ox, oy = origin[0] - self.center[0], origin[1] - self.center[1]
        dx, dy, dz = directions[:, 0], directions[:, 1], directions[:, 2]

        # mantle
        a = dx ** 2 + dy ** 2
        b = 2.0 * (ox * dx + oy * dy)
        c = ox ** 2 + oy ** 2 - self.radius ** 2
        disc = b ** 2 - 4.0 * a * c
        t = np.full(directions.shape[0], np.inf)
        candidates = (a > 1e-12) & (disc >= 0)
        sqrt_disc = np.sqrt(np.where(candidates, disc, 0.0))
        safe_a = np.where(candidates, a, 1.0)
        for root in ((-b - sqrt_disc) / (2.0 * safe_a), (-b + sqrt_disc) / (2.0 * safe_a)):
            z = origin[2] + root * dz
            ok = candidates & (root > MIN_HIT_DISTANCE) & (z >= self.z_min) & (z <= self.z_max)
            t = np.where(ok & (root < t), root, t)

        # caps
        with np.errstate(divide='ignore', invalid='ignore'):
            for z_cap in (self.z_min, self.z_max):
                root = (z_cap - origin[2]) / dz
                rx, ry = ox + root * dx, oy + root * dy
                ok = (np.abs(dz) > 1e-12) & (root > MIN_HIT_DISTANCE) & (rx ** 2 + ry ** 2 <= self.radius ** 2)
                t = np.where(ok & (root < t), root, t)
        return t

    def surface_distance(self, points):
        points = np.asarray(points)
        radial = np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1]) - self.radius
        half_height = 0.5 * (self.z_max - self.z_min)
        vertical = np.abs(points[:, 2] - 0.5 * (self.z_max + self.z_min)) - half_height
        q = np.stack([radial, vertical], axis=1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)


PRIMITIVE_TYPES = {'plane': Plane, 'box': Box, 'cylinder': Cylinder}


@dataclass(frozen=True)
class SceneSpec:
    scanner: ScannerConfig = field(default_factory=ScannerConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    primitives: Tuple[Primitive, ...] = ()


def _parse_value(text, default, key, section):
    try:
        if isinstance(default, tuple):
            values = tuple(float(v) for v in text.split(','))
            if len(values) != len(default):
                raise ValueError
            return values
        if isinstance(default, int) and not isinstance(default, bool):
            return int(text)
        return float(text)
    except ValueError:
        raise SceneSpecError("Value '{}' of key '{}' in section [{}] can not be parsed".format(text, key, section))


def _parse_section(parser, section, defaults):
    values = {}
    for key, text in parser.items(section):
        if key not in defaults:
            raise SceneSpecError("Config key '{0}' is not allowed !!!".format(key))
        values[key] = _parse_value(text, defaults[key], key, section)
    return values


def parse_scene_spec(text):
    """
    Reads a scene description in INI syntax:

        [scanner]            rings, azimuth_steps, fov_up_deg, fov_down_deg, max_range, range_noise, dropout
        [motion]             forward, lateral, vertical (meters per frame), yaw_deg (degrees per frame)
        [plane.<name>]       normal = nx, ny, nz; offset; reflectivity
        [box.<name>]         center = x, y, z; size = dx, dy, dz; yaw_deg; velocity = vx, vy, vz; reflectivity
        [cylinder.<name>]    center = x, y; radius; z_min; z_max; velocity = vx, vy, vz; reflectivity
    """

    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise SceneSpecError("Scene spec is not valid INI: {}".format(e))

    scanner, motion, primitives = {}, {}, []
    for section in parser.sections():
        if section == 'scanner':
            scanner = _parse_section(parser, section, DEFAULT_SCANNER_CONFIG)
        elif section == 'motion':
            motion = _parse_section(parser, section, DEFAULT_MOTION_CONFIG)
        else:
            kind, _, name = section.partition('.')
            if kind not in PRIMITIVE_TYPES or not name:
                raise SceneSpecError("Section [{}] is not allowed !!!".format(section))
            values = _parse_section(parser, section, DEFAULT_PRIMITIVE_CONFIG[kind])
            primitives.append(PRIMITIVE_TYPES[kind](name=name, **values))

    spec = SceneSpec(scanner=ScannerConfig(**scanner), motion=MotionConfig(**motion), primitives=tuple(primitives))
    _validate_scene(spec)
    return spec


def load_scene_spec(path):
    with open(path, 'r', encoding='utf-8') as f:
        return parse_scene_spec(f.read())


def _validate_scene(spec):
    if len(spec.primitives) == 0:
        raise SceneSpecError("Scene spec has no primitives, nothing to scan !!!")


def scanner_phase(spec, seed):
    """ Seeded azimuth offset of the firing pattern, kept within a quarter column so rays stay at pixel centers """
    delta_beta = 2.0 * np.pi / spec.scanner.azimuth_steps
    return np.random.default_rng(seed).uniform(-0.25, 0.25) * delta_beta


def scanner_rays(spec, seed):
    """
    Unit ray directions in the sensor frame, ring-major: ray id = ring * azimuth_steps + step.
    Ring 0 is the lowest elevation; elevations and azimuths sit at the centers of the projection bins.
    """

    scanner = spec.scanner
    fov_down, fov_up = np.radians(scanner.fov_down_deg), np.radians(scanner.fov_up_deg)
    delta_alpha = (fov_up - fov_down) / scanner.rings
    delta_beta = 2.0 * np.pi / scanner.azimuth_steps

    elevations = fov_down + (np.arange(scanner.rings) + 0.5) * delta_alpha
    azimuths = -np.pi + (np.arange(scanner.azimuth_steps) + 0.5) * delta_beta + scanner_phase(spec, seed)
    elevation, azimuth = np.meshgrid(elevations, azimuths, indexing='ij')
    elevation, azimuth = elevation.ravel(), azimuth.ravel()
    return np.stack([np.cos(elevation) * np.cos(azimuth),
                     np.cos(elevation) * np.sin(azimuth),
                     np.sin(elevation)], axis=1)


def cast_scene(seed, spec, sensor_pose=None, frame_idx=0):
    """
    Scans the scene from 'sensor_pose' (sensor to world).
    Returns the sensor-frame cloud and the id of the ray behind every point.
    """

    _validate_scene(spec)
    scanner = spec.scanner
    sensor_pose = Pose.identity() if sensor_pose is None else sensor_pose

    directions = scanner_rays(spec, seed)
    world_directions = directions @ sensor_pose.rotation.T
    origin = sensor_pose.translation

    first_hit = np.full(directions.shape[0], np.inf)
    reflectivity = np.zeros(directions.shape[0])
    for primitive in spec.primitives:
        t = primitive.at_frame(frame_idx).intersect(origin, world_directions)
        closer = t < first_hit
        first_hit[closer] = t[closer]
        reflectivity[closer] = primitive.reflectivity

    hit = first_hit <= scanner.max_range
    rng = np.random.default_rng([seed, frame_idx])
    if scanner.dropout > 0:
        hit &= rng.random(hit.shape[0]) >= scanner.dropout

    ray_ids = np.flatnonzero(hit)
    ranges = first_hit[ray_ids]
    if scanner.range_noise > 0:
        ranges = np.maximum(ranges + rng.normal(0.0, scanner.range_noise, ranges.shape[0]), MIN_HIT_DISTANCE)

    cloud = PointCloud(points=ranges[:, None] * directions[ray_ids], intensity=reflectivity[ray_ids])
    logger.debug("frame %d: %d of %d rays returned", frame_idx, len(cloud), directions.shape[0])
    return cloud, ray_ids


def synth_scene(seed, spec):
    """ One scan from the world origin, deterministic in 'seed' """
    cloud, _ = cast_scene(seed, spec)
    return cloud


def synth_sequence(seed, spec, n_frames, motion=None):
    """
    Scans of a sensor moving with constant 'motion' (defaults to the spec's [motion] section).
    Returns the list of clouds and the ground-truth Trajectory whose k-th pose maps scan k into scan 0.
    """

    if n_frames < 1:
        raise SceneSpecError("'n_frames' must be >= 1")
    step = (motion if motion is not None else spec.motion).as_pose()

    clouds, poses = [], []
    sensor_pose = Pose.identity()
    for frame_idx in range(n_frames):
        if frame_idx > 0:
            sensor_pose = sensor_pose.compose(step)
            # keep the accumulated rotation inside the Pose tolerance over long sequences
            sensor_pose = Pose(rotation=Rotation.from_matrix(sensor_pose.rotation).as_matrix(),
                               translation=sensor_pose.translation)
        cloud, _ = cast_scene(seed, spec, sensor_pose=sensor_pose, frame_idx=frame_idx)
        clouds.append(cloud)
        poses.append(sensor_pose)
    return clouds, Trajectory(poses=poses)
