"""Planar (SE(2)) ego-pose arithmetic shared by scene generation, radar
accumulation, and memory propagation.

Convention: x-forward, y-left, yaw counterclockwise about +z. A pose is the
transform from the ego frame to the world frame.
"""

from __future__ import annotations

import math

import numpy as np


def pose_matrix(x: float, y: float, yaw: float) -> np.ndarray:
    """3x3 homogeneous ego-to-world matrix for a planar pose."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]], dtype=np.float64)


def invert_pose(m: np.ndarray) -> np.ndarray:
    r = m[:2, :2]
    t = m[:2, 2]
    out = np.eye(3)
    out[:2, :2] = r.T
    out[:2, 2] = -r.T @ t
    return out


def relative_pose(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Transform taking points expressed in `src` ego frame into `dst` ego frame."""
    return invert_pose(dst) @ src


def transform_points_2d(m: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Apply a 3x3 planar transform to an (N, 2) array of points."""
    xy = np.asarray(xy, dtype=np.float64)
    return xy @ m[:2, :2].T + m[:2, 2]


def rotate_vectors_2d(m: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rotate (N, 2) direction/velocity vectors (no translation)."""
    return np.asarray(vec, dtype=np.float64) @ m[:2, :2].T


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a
