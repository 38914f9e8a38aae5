"""Metric 3D primitives: boxes, poses, pinhole cameras and frame transforms.

Conventions
-----------
* Ego / world frames are right-handed with x forward, y left, z up.
* Camera frames use x right, y down, z forward (optical axis).
* A :class:`Pose` maps points from its own frame into the parent frame:
  ``p_parent = R @ p_local + t``. Ego poses are therefore world-from-ego and
  camera extrinsics are camera-from-ego (parent = camera).
* Quaternions are stored scalar-first ``(w, x, y, z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


def normalize_yaw(angle: float) -> float:
    """Wrap ``angle`` into the half-open interval [-pi, pi)."""
    if not math.isfinite(angle):
        raise ValueError(f"yaw must be finite, got {angle!r}")
    wrapped = math.fmod(angle + math.pi, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    out = wrapped - math.pi
    # fmod rounding can land exactly on +pi
    if out >= math.pi:
        out -= TWO_PI
    return out


@dataclass(frozen=True)
class Box3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # (w, l, h)
    yaw: float = 0.0
    frame: str = "world"

    def __post_init__(self) -> None:
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must be 3-vectors")
        if not all(math.isfinite(v) for v in center):
            raise ValueError(f"non-finite box center {center}")
        if not all(math.isfinite(v) and v > 0 for v in size):
            raise ValueError(f"box size components must be finite and > 0, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def xyz(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def corners(self) -> np.ndarray:
        """The 8 corners as an (8, 3) array, in the box's own frame."""
        w, l, h = self.size
        # l runs along the heading, w across it
        xs = np.array([1, 1, 1, 1, -1, -1, -1, -1]) * (l / 2.0)
        ys = np.array([1, -1, -1, 1, 1, -1, -1, 1]) * (w / 2.0)
        zs = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (h / 2.0)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return (rot @ np.stack([xs, ys, zs])).T + self.xyz

    def with_center(self, center: Sequence[float], frame: Optional[str] = None) -> "Box3D":
        return Box3D(tuple(center), self.size, self.yaw, frame or self.frame)

    def to_list(self) -> list[float]:
        return [*self.center, *self.size, self.yaw]

    @classmethod
    def from_list(cls, values: Sequence[float], frame: str = "world") -> "Box3D":
        if len(values) != 7:
            raise ValueError(f"box needs 7 values [cx,cy,cz,w,l,h,yaw], got {len(values)}")
        return cls(tuple(values[:3]), tuple(values[3:6]), values[6], frame)


@dataclass(frozen=True)
class Pose:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        t = tuple(float(v) for v in self.translation)
        q = tuple(float(v) for v in self.rotation)
        if len(t) != 3 or len(q) != 4:
            raise ValueError("pose needs a 3-vector translation and a 4-vector quaternion")
        if not all(math.isfinite(v) for v in (*t, *q)):
            raise ValueError("pose entries must be finite")
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"rotation quaternion must be unit norm, got |q|={norm!r}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def from_matrix(cls, rot: np.ndarray, translation: Sequence[float]) -> "Pose":
        x, y, z, w = Rotation.from_matrix(np.asarray(rot, dtype=np.float64)).as_quat()
        q = np.array([w, x, y, z])
        q /= np.linalg.norm(q)
        return cls(tuple(translation), tuple(q))

    @classmethod
    def from_yaw(cls, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Pose":
        half = 0.5 * yaw
        return cls(tuple(translation), (math.cos(half), 0.0, 0.0, math.sin(half)))

    @cached_property
    def matrix(self) -> np.ndarray:
        """Rotation as a 3x3 matrix."""
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w]).as_matrix()

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def yaw(self) -> float:
        r = self.matrix
        return math.atan2(r[1, 0], r[0, 0])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) points from this pose's local frame to its parent."""
        return np.asarray(points, dtype=np.float64) @ self.matrix.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map (..., 3) points from the parent frame into this pose's frame."""
        return (np.asarray(points, dtype=np.float64) - self.t) @ self.matrix

    def to_list(self) -> list[float]:
        return [*self.translation, *self.rotation]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        if len(values) != 7:
            raise ValueError(f"pose needs 7 values [tx,ty,tz,qw,qx,qy,qz], got {len(values)}")
        q = np.asarray(values[3:], dtype=np.float64)
        norm = float(np.linalg.norm(q))
        if not math.isfinite(norm) or norm < 1e-6:
            raise ValueError("pose quaternion must be finite and non-zero")
        q = q / norm  # tolerate serialization rounding
        return cls(tuple(values[:3]), tuple(q))


def _heading_angle(rot: np.ndarray, yaw: float) -> float:
    heading = rot @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
    return math.atan2(heading[1], heading[0])


def transform_box(box: Box3D, src: Pose, dst: Pose, frame: Optional[str] = None) -> Box3D:
    """Re-express ``box`` from the frame located at ``src`` into the frame at ``dst``.

    Both poses are given relative to a common parent (normally the world).
    The centre is exact for arbitrary rotations; the yaw is the heading of the
    rotated box axis projected onto the destination ground plane, which is
    exactly invertible for gravity-aligned (z-only) rotations.
    """
    world = src.apply(box.xyz)
    local = dst.apply_inverse(world)
    rel = dst.matrix.T @ src.matrix
    yaw = _heading_angle(rel, box.yaw)
    return Box3D(tuple(local), box.size, yaw, frame or box.frame)


def center_distance(a: Box3D, b: Box3D) -> float:
    """Ground-plane (x, y) distance between two box centres."""
    if a.frame != b.frame:
        raise ValueError(f"boxes are in different frames: {a.frame!r} vs {b.frame!r}")
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])


class CameraName(str, Enum):
    FRONT = "Front"
    FRONT_LEFT = "FrontLeft"
    FRONT_RIGHT = "FrontRight"
    BACK_RIGHT = "BackRight"
    BACK_LEFT = "BackLeft"
    BACK = "Back"


@dataclass(frozen=True)
class CameraCalib:
    name: CameraName
    intrinsic: tuple[tuple[float, float, float], ...]
    extrinsic: Pose  # camera-from-ego
    image_size: tuple[int, int]  # (w, h)

    def __post_init__(self) -> None:
        k = np.asarray(self.intrinsic, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError("intrinsic must be 3x3")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0:
            raise ValueError("intrinsic must be upper triangular")
        object.__setattr__(self, "name", CameraName(self.name))
        object.__setattr__(self, "intrinsic", tuple(tuple(float(v) for v in row) for row in k))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))

    @property
    def K(self) -> np.ndarray:
        return np.asarray(self.intrinsic, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "name": self.name.value,
            "intrinsic": [list(r) for r in self.intrinsic],
            "extrinsic": self.extrinsic.to_list(),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraCalib":
        return cls(CameraName(d["name"]), tuple(tuple(r) for r in d["intrinsic"]),
                   Pose.from_list(d["extrinsic"]), tuple(d["image_size"]))


@dataclass(frozen=True)
class Projection:
    camera: CameraName
    rect: tuple[float, float, float, float]  # x0, y0, x1, y1 in pixels
    visible: bool = True


# yaw offset (deg) and horizontal FOV (deg) of the default rig
DEFAULT_RIG_LAYOUT: dict[CameraName, tuple[float, float]] = {
    CameraName.FRONT: (0.0, 70.0),
    CameraName.FRONT_LEFT: (55.0, 70.0),
    CameraName.FRONT_RIGHT: (-55.0, 70.0),
    CameraName.BACK_LEFT: (110.0, 70.0),
    CameraName.BACK_RIGHT: (-110.0, 70.0),
    CameraName.BACK: (180.0, 110.0),
}


def make_camera(name: CameraName, yaw_deg: float, hfov_deg: float,
                image_size: tuple[int, int] = (1600, 900),
                mount: Sequence[float] = (1.0, 0.0, 1.6)) -> CameraCalib:
    w, h = image_size
    f = (w / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    K = ((f, 0.0, w / 2.0), (0.0, f, h / 2.0), (0.0, 0.0, 1.0))
    psi = math.radians(yaw_deg)
    # columns: camera x (right), y (down), z (forward) expressed in ego axes
    ego_from_cam = np.array([
        [math.sin(psi), 0.0, math.cos(psi)],
        [-math.cos(psi), 0.0, math.sin(psi)],
        [0.0, -1.0, 0.0],
    ])
    cam_from_ego = ego_from_cam.T
    t = -cam_from_ego @ np.asarray(mount, dtype=np.float64)
    return CameraCalib(name, K, Pose.from_matrix(cam_from_ego, t), image_size)


def default_rig(image_size: tuple[int, int] = (1600, 900)) -> list[CameraCalib]:
    return [make_camera(name, yaw, fov, image_size) for name, (yaw, fov) in DEFAULT_RIG_LAYOUT.items()]


def project_to_camera(box: Box3D, calib: CameraCalib, min_depth: float = 1e-3) -> Optional[Projection]:
    """Pixel-space bounding rectangle of an ego-frame box, or None if unseen."""
    pts = calib.extrinsic.apply(box.corners())
    front = pts[pts[:, 2] > min_depth]
    if len(front) == 0:
        return None
    uvw = front @ calib.K.T
    uv = uvw[:, :2] / uvw[:, 2:3]
    w, h = calib.image_size
    inside = (uv[:, 0] >= 0) & (uv[:, 0] <= w) & (uv[:, 1] >= 0) & (uv[:, 1] <= h)
    if not inside.any():
        return None
    x0, y0 = np.clip(uv.min(axis=0), 0, [w, h])
    x1, y1 = np.clip(uv.max(axis=0), 0, [w, h])
    return Projection(calib.name, (float(x0), float(y0), float(x1), float(y1)))


def visible_cameras(box: Box3D, rig: Sequence[CameraCalib]) -> list[CameraName]:
    return [c.name for c in rig if project_to_camera(box, c) is not None]
