"""Synthetic multimodal scene generation: moving boxes, ego motion, simulated
radar sweeps, rasterized camera images, and radar sweep accumulation.

Everything here is deterministic given (seed, config) and implemented with
numpy only; the neural pipeline consumes these arrays downstream.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import cv2
import numpy as np

from .geometry import (
    pose_matrix,
    relative_pose,
    rotate_vectors_2d,
    transform_points_2d,
    wrap_angle,
)

ATTR_STATIONARY = 0
ATTR_MOVING = 1

# Class palette for rasterization, RGB in [0, 1].
CLASS_COLORS = np.array(
    [
        [0.85, 0.20, 0.20],
        [0.20, 0.55, 0.85],
        [0.25, 0.75, 0.30],
        [0.85, 0.70, 0.15],
        [0.60, 0.30, 0.70],
        [0.90, 0.45, 0.10],
        [0.20, 0.70, 0.70],
        [0.75, 0.25, 0.55],
    ]
)


class ConfigurationError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class Box3D:
    """One 3D box in the ego frame. Ground truth carries score 1.0."""

    center: np.ndarray  # (3,) meters
    size: np.ndarray  # (3,) l, w, h, strictly positive
    yaw: float  # radians in (-pi, pi]
    velocity: np.ndarray  # (2,) m/s ground-plane
    class_id: int
    score: float = 1.0
    attribute_id: int = ATTR_STATIONARY

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        if np.any(self.size <= 0):
            raise ValueError(f"box size must be strictly positive, got {self.size}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        self.yaw = wrap_angle(float(self.yaw))

    def to_row(self) -> np.ndarray:
        return np.concatenate(
            [
                self.center,
                self.size,
                [self.yaw],
                self.velocity,
                [float(self.class_id), self.score, float(self.attribute_id)],
            ]
        ).astype(np.float32)

    @staticmethod
    def from_row(row: np.ndarray) -> "Box3D":
        row = np.asarray(row, dtype=np.float64).reshape(12)
        return Box3D(
            center=row[0:3],
            size=row[3:6],
            yaw=float(row[6]),
            velocity=row[7:9],
            class_id=int(round(row[9])),
            score=float(row[10]),
            attribute_id=int(round(row[11])),
        )

    def corners_bev(self) -> np.ndarray:
        """(4, 2) ground-plane corners in the ego frame."""
        l, w = self.size[0], self.size[1]
        local = np.array(
            [[l / 2, w / 2], [l / 2, -w / 2], [-l / 2, -w / 2], [-l / 2, w / 2]]
        )
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def corners_3d(self) -> np.ndarray:
        """(8, 3) box corners in the ego frame; bottom face first."""
        bev = self.corners_bev()
        h = self.size[2]
        z0 = self.center[2] - h / 2
        z1 = self.center[2] + h / 2
        bottom = np.concatenate([bev, np.full((4, 1), z0)], axis=1)
        top = np.concatenate([bev, np.full((4, 1), z1)], axis=1)
        return np.concatenate([bottom, top], axis=0)


@dataclass
class RadarSweep:
    """(N, 5) point set: x, y, z [m, ego frame], v_comp [m/s], t_offset [s]."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class CameraFrame:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    intrinsics: np.ndarray  # (3, 3)
    extrinsics: np.ndarray  # (4, 4) ego-to-camera
    timestamp: float = 0.0


@dataclass
class EgoPose:
    translation: np.ndarray  # (3,) world frame
    yaw: float
    timestamp: float

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def matrix_2d(self) -> np.ndarray:
        return pose_matrix(self.translation[0], self.translation[1], self.yaw)


@dataclass
class SceneFrame:
    frame_id: int
    ego_pose: EgoPose
    cameras: list  # list[CameraFrame]
    radar: RadarSweep
    gt_boxes: list  # list[Box3D]


@dataclass
class SceneSequence:
    frames: list  # list[SceneFrame]
    config_hash: str


@dataclass
class RadarSimConfig:
    points_per_object: float = 6.0  # Poisson mean per box
    clutter_rate: float = 10.0  # Poisson mean per sweep
    pos_noise: float = 0.08  # meters, per coordinate
    vel_noise: float = 0.05  # m/s on v_comp
    clutter_z_range: tuple = (0.0, 3.0)


@dataclass
class CameraConfig:
    image_height: int = 224
    image_width: int = 448
    focal: float = 260.0
    height_above_ground: float = 1.6


@dataclass
class SceneGenConfig:
    n_frames: int = 10
    dt: float = 0.5
    bev_extent: tuple = (-32.0, 32.0, -32.0, 32.0)  # x_min, x_max, y_min, y_max
    num_classes: int = 4
    objects_min: int = 3
    objects_max: int = 6
    speed_max: float = 6.0
    process_noise: float = 0.05  # m/s sigma added to velocity per frame
    ego_speed: float = 2.0
    ego_yaw_rate: float = 0.0
    z_range: tuple = (-2.0, 6.0)
    radar: RadarSimConfig = field(default_factory=RadarSimConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    class_names: tuple = ("car", "truck", "pedestrian", "cyclist")

    def validate(self):
        x0, x1, y0, y1 = self.bev_extent
        if self.n_frames <= 0:
            raise ConfigurationError("n_frames must be positive")
        if x1 <= x0 or y1 <= y0:
            raise ConfigurationError("bev_extent must span positive area")
        if self.num_classes <= 0:
            raise ConfigurationError("num_classes must be positive")
        if self.objects_min < 0 or self.objects_max < self.objects_min:
            raise ConfigurationError("invalid objects-per-frame range")
        if len(self.class_names) != self.num_classes:
            raise ConfigurationError("class_names length must equal num_classes")

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# Per-class nominal (l, w, h); cycled if num_classes exceeds the table.
CLASS_SIZES = np.array(
    [
        [4.4, 1.9, 1.6],
        [7.5, 2.6, 2.9],
        [0.7, 0.7, 1.7],
        [1.8, 0.7, 1.6],
        [6.0, 2.2, 2.2],
        [2.4, 1.2, 1.5],
    ]
)


def default_camera(cfg: CameraConfig) -> CameraFrame:
    """Front-facing pinhole camera. Camera frame: z forward, x right, y down."""
    h, w = cfg.image_height, cfg.image_width
    intrinsics = np.array(
        [[cfg.focal, 0.0, w / 2.0], [0.0, cfg.focal, h / 2.0], [0.0, 0.0, 1.0]]
    )
    # ego (x fwd, y left, z up) -> camera (x right, y down, z fwd)
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    extrinsics = np.eye(4)
    extrinsics[:3, :3] = rot
    extrinsics[:3, 3] = rot @ np.array([0.0, 0.0, -cfg.height_above_ground])
    return CameraFrame(
        image=np.zeros((h, w, 3), dtype=np.float64),
        intrinsics=intrinsics,
        extrinsics=extrinsics,
    )


def _spawn_objects(rng: np.random.Generator, cfg: SceneGenConfig, n: int):
    """World-frame object state arrays: position (n,2), velocity (n,2), yaw,
    size, class. Ego starts at the world origin, so spawn in the extent."""
    x0, x1, y0, y1 = cfg.bev_extent
    margin = 4.0
    pos = rng.uniform([x0 + margin, y0 + margin], [x1 - margin, y1 - margin], (n, 2))
    speed = rng.uniform(0.0, cfg.speed_max, n)
    heading = rng.uniform(-math.pi, math.pi, n)
    vel = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    cls = rng.integers(0, cfg.num_classes, n)
    size = CLASS_SIZES[cls % len(CLASS_SIZES)] * rng.uniform(0.9, 1.1, (n, 3))
    yaw = heading.copy()
    return pos, vel, yaw, size, cls


def generate_sequence(seed: int, cfg: SceneGenConfig) -> SceneSequence:
    """Generate a deterministic synthetic sequence.

    Objects follow constant velocity plus small process noise in the world
    frame and bounce off the (ego-relative) BEV extent so every ground-truth
    box stays inside it.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n_obj = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
    pos, vel, yaw, size, cls = _spawn_objects(rng, cfg, n_obj)

    camera_tmpl = default_camera(cfg.camera)
    x0, x1, y0, y1 = cfg.bev_extent
    margin = 2.0

    frames = []
    ego_xy = np.zeros(2)
    ego_yaw = 0.0
    for k in range(cfg.n_frames):
        t = k * cfg.dt
        ego = EgoPose(
            translation=np.array([ego_xy[0], ego_xy[1], 0.0]), yaw=ego_yaw, timestamp=t
        )
        world_to_ego = relative_pose(np.eye(3), ego.matrix_2d())

        gt_boxes = []
        pos_ego = transform_points_2d(world_to_ego, pos) if n_obj else np.zeros((0, 2))
        vel_ego = rotate_vectors_2d(world_to_ego, vel) if n_obj else np.zeros((0, 2))
        for i in range(n_obj):
            speed = float(np.hypot(*vel[i]))
            gt_boxes.append(
                Box3D(
                    center=np.array([pos_ego[i, 0], pos_ego[i, 1], size[i, 2] / 2]),
                    size=size[i],
                    yaw=wrap_angle(yaw[i] - ego_yaw),
                    velocity=vel_ego[i],
                    class_id=int(cls[i]),
                    score=1.0,
                    attribute_id=ATTR_MOVING if speed > 0.3 else ATTR_STATIONARY,
                )
            )

        # snap through float32 so on-disk round-trips reproduce fields exactly
        gt_boxes = [Box3D.from_row(b.to_row()) for b in gt_boxes]
        radar = simulate_radar(gt_boxes, ego, cfg, rng)
        radar = RadarSweep(radar.points.astype(np.float32).astype(np.float64))
        image = render_image(gt_boxes, camera_tmpl, cfg)
        image = image.astype(np.float32).astype(np.float64)
        cam = CameraFrame(
            image=image,
            intrinsics=camera_tmpl.intrinsics.copy(),
            extrinsics=camera_tmpl.extrinsics.copy(),
            timestamp=t,
        )
        frames.append(
            SceneFrame(
                frame_id=k, ego_pose=ego, cameras=[cam], radar=radar, gt_boxes=gt_boxes
            )
        )

        # advance world state
        if n_obj:
            vel = vel + rng.normal(0.0, cfg.process_noise, vel.shape)
            pos = pos + vel * cfg.dt
            yaw = np.where(np.hypot(vel[:, 0], vel[:, 1]) > 0.3,
                           np.arctan2(vel[:, 1], vel[:, 0]), yaw)
        ego_yaw = wrap_angle(ego_yaw + cfg.ego_yaw_rate * cfg.dt)
        ego_xy = ego_xy + cfg.ego_speed * cfg.dt * np.array(
            [math.cos(ego_yaw), math.sin(ego_yaw)]
        )
        # bounce objects that would leave the next ego-relative extent
        if n_obj:
            next_ego = pose_matrix(ego_xy[0], ego_xy[1], ego_yaw)
            rel = transform_points_2d(relative_pose(np.eye(3), next_ego), pos)
            for i in range(n_obj):
                if not (x0 + margin < rel[i, 0] < x1 - margin
                        and y0 + margin < rel[i, 1] < y1 - margin):
                    vel[i] = -vel[i]
                    pos[i] = pos[i] + 2 * vel[i] * cfg.dt

    return SceneSequence(frames=frames, config_hash=cfg.hash())


def simulate_radar(
    boxes, ego: EgoPose, cfg: SceneGenConfig, rng_or_seed
) -> RadarSweep:
    """Simulate one radar sweep in the current ego frame.

    Object points are drawn on sensor-visible box faces; v_comp is the radial
    component of (object velocity - ego velocity) plus Gaussian noise. Clutter
    is uniform over the extent with noise-only v_comp.
    """
    rng = (
        rng_or_seed
        if isinstance(rng_or_seed, np.random.Generator)
        else np.random.default_rng(rng_or_seed)
    )
    rc = cfg.radar
    x0, x1, y0, y1 = cfg.bev_extent
    ego_vel_ego = np.array([cfg.ego_speed, 0.0])  # ego velocity in its own frame

    rows = []
    for box in boxes:
        n_pts = int(rng.poisson(rc.points_per_object))
        if n_pts == 0:
            continue
        pts = _sample_visible_surface(box, n_pts, rng)
        rel_vel = box.velocity - ego_vel_ego
        radial = pts[:, :2] / np.maximum(
            np.linalg.norm(pts[:, :2], axis=1, keepdims=True), 1e-9
        )
        v_comp = radial @ rel_vel + rng.normal(0.0, rc.vel_noise, n_pts)
        pts = pts + rng.normal(0.0, rc.pos_noise, pts.shape)
        t_off = np.zeros(n_pts)
        rows.append(np.column_stack([pts, v_comp, t_off]))

    n_clutter = int(rng.poisson(rc.clutter_rate))
    if n_clutter:
        cx = rng.uniform(x0, x1, n_clutter)
        cy = rng.uniform(y0, y1, n_clutter)
        cz = rng.uniform(rc.clutter_z_range[0], rc.clutter_z_range[1], n_clutter)
        cv = rng.normal(0.0, max(rc.vel_noise, 1e-6), n_clutter)
        rows.append(np.column_stack([cx, cy, cz, cv, np.zeros(n_clutter)]))

    if not rows:
        return RadarSweep(np.zeros((0, 5)))
    return RadarSweep(np.concatenate(rows, axis=0))


def _sample_visible_surface(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample points on the vertical box faces whose outward normal faces the
    sensor at the ego origin; falls back to all faces if none are visible."""
    corners = box.corners_bev()  # (4, 2), counterclockwise
    faces = [(corners[i], corners[(i + 1) % 4]) for i in range(4)]
    visible = []
    for a, b in faces:
        mid = (a + b) / 2
        edge = b - a
        normal = np.array([edge[1], -edge[0]])  # outward for CCW ordering
        if normal @ (0 - mid) > 0:  # faces the sensor at origin
            visible.append((a, b, np.linalg.norm(edge)))
    if not visible:
        visible = [(a, b, np.linalg.norm(b - a)) for a, b in faces]
    lengths = np.array([f[2] for f in visible])
    probs = lengths / lengths.sum()
    idx = rng.choice(len(visible), n, p=probs)
    u = rng.uniform(0.0, 1.0, n)
    z = rng.uniform(
        box.center[2] - box.size[2] / 2, box.center[2] + box.size[2] / 2, n
    )
    pts = np.empty((n, 3))
    for j in range(n):
        a, b, _ = visible[idx[j]]
        pts[j, :2] = a + u[j] * (b - a)
        pts[j, 2] = z[j]
    return pts


def _background(h: int, w: int) -> np.ndarray:
    """Deterministic sky-over-ground gradient background."""
    img = np.empty((h, w, 3))
    rows = np.linspace(0.0, 1.0, h)[:, None]
    sky = np.array([0.55, 0.70, 0.90])
    ground = np.array([0.35, 0.33, 0.30])
    horizon = 0.45
    for c in range(3):
        img[..., c] = np.where(
            rows < horizon,
            sky[c] * (1.0 - 0.3 * rows / horizon),
            ground[c] * (0.7 + 0.3 * (rows - horizon) / (1 - horizon)),
        )
    return img


def render_image(boxes, camera: CameraFrame, cfg: SceneGenConfig) -> np.ndarray:
    """Rasterize class-colored cuboids onto the background, far to near.

    Each box in front of the camera becomes the filled convex hull of its
    projected corners. Boxes behind the camera are skipped.
    """
    h, w = cfg.camera.image_height, cfg.camera.image_width
    img = (_background(h, w) * 255).astype(np.uint8)

    renderable = []
    for box in boxes:
        corners = box.corners_3d()
        cam_pts = (camera.extrinsics[:3, :3] @ corners.T).T + camera.extrinsics[:3, 3]
        if np.any(cam_pts[:, 2] < 0.5):
            continue  # behind or grazing the camera
        uv = (camera.intrinsics @ cam_pts.T).T
        uv = uv[:, :2] / uv[:, 2:3]
        depth = float(np.mean(cam_pts[:, 2]))
        renderable.append((depth, uv, box.class_id))

    renderable.sort(key=lambda r: -r[0])  # far to near
    for _, uv, class_id in renderable:
        pts = np.round(uv).astype(np.int64)
        if np.all(pts[:, 0] < 0) or np.all(pts[:, 0] >= w):
            continue
        if np.all(pts[:, 1] < 0) or np.all(pts[:, 1] >= h):
            continue
        hull = cv2.convexHull(pts.astype(np.int32).reshape(-1, 1, 2))
        color = CLASS_COLORS[class_id % len(CLASS_COLORS)] * 255
        cv2.fillConvexPoly(img, hull, color.tolist())

    return img.astype(np.float64) / 255.0


def accumulate_radar(sequence: SceneSequence, frame_index: int, k: int) -> RadarSweep:
    """Stack up to k previous sweeps into the current ego frame.

    Past points are transformed via SE(2) pose composition; their t_offset is
    the (negative) source-minus-current timestamp. At the sequence start only
    the available frames are used.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    frames = sequence.frames
    cur = frames[frame_index]
    cur_pose = cur.ego_pose.matrix_2d()
    parts = [cur.radar.points]
    for j in range(frame_index - 1, max(frame_index - k, 0) - 1, -1):
        src = frames[j]
        pts = src.radar.points
        if len(pts) == 0:
            continue
        m = relative_pose(src.ego_pose.matrix_2d(), cur_pose)
        out = pts.copy()
        out[:, :2] = transform_points_2d(m, pts[:, :2])
        out[:, 4] = pts[:, 4] + (src.ego_pose.timestamp - cur.ego_pose.timestamp)
        parts.append(out)
    return RadarSweep(np.concatenate(parts, axis=0))
