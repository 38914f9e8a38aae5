"""Deterministic synthetic driving scenes with attribute-tagged object tracks.

The ego vehicle drives straight along its initial heading at constant speed,
so the ego frame axes stay aligned with a fixed "road" frame. Object motion is
authored in that road frame and converted to world coordinates.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .geom3d import Box3D, CameraCalib, Pose, default_rig

CLASSES = ("car", "truck", "bus", "trailer", "motorcycle", "bicycle", "pedestrian")
COLORS = ("red", "yellow", "black", "white", "blue", "silver")
LOCATIONS = ("front", "left", "back", "right")
ARCHETYPES = ("constant_velocity", "stopped", "crossing", "overtaking")

FRAME_RATE = 2.0  # Hz
MOVING_SPEED = 0.5  # m/s, strictly greater means moving
OVERTAKE_WINDOW = 5.0  # m of relative longitudinal offset
CROSSING_BAND = 6.0  # m of lateral offset from the ego path

CLASS_SIZES = {  # (w, l, h)
    "car": (1.9, 4.6, 1.7),
    "truck": (2.5, 8.0, 3.2),
    "bus": (2.9, 11.0, 3.4),
    "trailer": (2.6, 10.0, 3.8),
    "motorcycle": (0.8, 2.1, 1.4),
    "bicycle": (0.6, 1.7, 1.3),
    "pedestrian": (0.6, 0.7, 1.75),
}

ARCHETYPE_CLASSES = {
    "constant_velocity": ("car", "truck", "bus", "motorcycle", "bicycle", "pedestrian"),
    "stopped": CLASSES,
    "crossing": ("pedestrian", "bicycle"),
    "overtaking": ("car", "truck", "bus", "motorcycle"),
}


@dataclass(frozen=True)
class SceneConfig:
    n_tracks: int = 12
    duration_frames: int = 40
    motion_mix: tuple[tuple[str, float], ...] = (
        ("constant_velocity", 0.4),
        ("stopped", 0.25),
        ("crossing", 0.15),
        ("overtaking", 0.2),
    )
    seed: int = 0
    ego_speed: tuple[float, float] = (4.0, 10.0)
    # scales lateral/longitudinal spawn ranges; <1 packs objects closer together
    spread: float = 1.0

    def validate(self) -> None:
        if self.n_tracks < 0:
            raise ValueError("n_tracks must be >= 0")
        if self.duration_frames < 1:
            raise ValueError("duration_frames must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        mix = dict(self.motion_mix)
        unknown = set(mix) - set(ARCHETYPES)
        if unknown:
            raise ValueError(f"unknown motion archetypes {sorted(unknown)}")
        if any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
            raise ValueError("motion mix weights must be >= 0 with a positive sum")
        lo, hi = self.ego_speed
        if not 0 <= lo <= hi:
            raise ValueError("ego_speed must be an ordered non-negative range")
        if self.spread <= 0:
            raise ValueError("spread must be > 0")


@dataclass
class Track:
    track_id: int
    category: str
    color: str
    archetype: str
    first_frame: int
    boxes: list[Box3D]  # world frame, one per present frame
    velocities: list[tuple[float, float, float]]

    @property
    def last_frame(self) -> int:
        return self.first_frame + len(self.boxes) - 1

    @property
    def frames(self) -> range:
        return range(self.first_frame, self.last_frame + 1)

    def present(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def box(self, frame: int) -> Box3D:
        return self.boxes[frame - self.first_frame]

    def velocity(self, frame: int) -> tuple[float, float, float]:
        return self.velocities[frame - self.first_frame]

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "category": self.category,
            "color": self.color,
            "archetype": self.archetype,
            "first_frame": self.first_frame,
            "boxes": [b.to_list() for b in self.boxes],
            "velocities": [list(v) for v in self.velocities],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Track":
        return cls(
            track_id=int(d["track_id"]),
            category=d["category"],
            color=d["color"],
            archetype=d.get("archetype", "unknown"),
            first_frame=int(d["first_frame"]),
            boxes=[Box3D.from_list(b) for b in d["boxes"]],
            velocities=[tuple(float(x) for x in v) for v in d["velocities"]],
        )


class UnknownElementError(KeyError):
    """Raised when an expression references a tag missing from the element map."""

    def __init__(self, tag: str):
        super().__init__(tag)
        self.tag = tag

    def __str__(self) -> str:
        return f"unknown language element {self.tag!r}"


@dataclass
class ElementMap:
    """Per-frame membership of tracks in each language element.

    ``present`` holds the tracks visible at each frame; it is the universe for
    negation.
    """

    members: dict[str, dict[int, frozenset[int]]]
    present: dict[int, frozenset[int]]

    @property
    def tags(self) -> list[str]:
        return sorted(self.members)

    @property
    def frames(self) -> list[int]:
        return sorted(self.present)

    def at(self, tag: str, frame: int) -> frozenset[int]:
        try:
            per_frame = self.members[tag]
        except KeyError:
            raise UnknownElementError(tag) from None
        return per_frame.get(frame, frozenset())

    def universe(self, frame: int) -> frozenset[int]:
        return self.present.get(frame, frozenset())

    def box_count(self, tag: str) -> int:
        return sum(len(s) for s in self.members[tag].values())

    def to_dict(self) -> dict:
        return {
            tag: {str(f): sorted(ids) for f, ids in sorted(per.items()) if ids}
            for tag, per in sorted(self.members.items())
        }

    @classmethod
    def from_dict(cls, d: dict, present: dict[int, frozenset[int]]) -> "ElementMap":
        members = {
            tag: {int(f): frozenset(int(i) for i in ids) for f, ids in per.items()}
            for tag, per in d.items()
        }
        return cls(members, present)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ElementMap):
            return NotImplemented
        return self.to_dict() == other.to_dict() and self.present == other.present


@dataclass
class Scene:
    scene_id: str
    timestamps: list[float]
    ego: list[Pose]  # world-from-ego per frame
    rig: list[CameraCalib]
    tracks: list[Track]
    element_map: ElementMap

    @property
    def n_frames(self) -> int:
        return len(self.timestamps)

    def track(self, track_id: int) -> Track:
        for t in self.tracks:
            if t.track_id == track_id:
                return t
        raise KeyError(track_id)

    def present_tracks(self, frame: int) -> list[Track]:
        return [t for t in self.tracks if t.present(frame)]

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "frames": list(self.timestamps),
            "ego": [p.to_list() for p in self.ego],
            "rig": [c.to_dict() for c in self.rig],
            "tracks": [t.to_dict() for t in self.tracks],
            "element_map": self.element_map.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        tracks = [Track.from_dict(t) for t in d["tracks"]]
        n = len(d["frames"])
        present = presence_by_frame(tracks, n)
        return cls(
            scene_id=str(d["scene_id"]),
            timestamps=[float(t) for t in d["frames"]],
            ego=[Pose.from_list(p) for p in d["ego"]],
            rig=[CameraCalib.from_dict(c) for c in d["rig"]],
            tracks=tracks,
            element_map=ElementMap.from_dict(d["element_map"], present),
        )


def presence_by_frame(tracks: Sequence[Track], n_frames: int) -> dict[int, frozenset[int]]:
    return {f: frozenset(t.track_id for t in tracks if t.present(f)) for f in range(n_frames)}


def _location_tag(x: float, y: float) -> str:
    # quadrants of 90 deg centred on the axes; a boundary belongs to the
    # quadrant on its counter-clockwise side
    bearing = math.degrees(math.atan2(y, x))
    if -45.0 <= bearing < 45.0:
        return "front"
    if 45.0 <= bearing < 135.0:
        return "left"
    if -135.0 <= bearing < -45.0:
        return "right"
    return "back"


def derive_element_tags(track: Track, ego: Sequence[Pose]) -> dict[int, frozenset[str]]:
    """Language elements satisfied by ``track`` at each frame it is present."""
    rel = {}
    for f in track.frames:
        rel[f] = ego[f].apply_inverse(track.box(f).xyz)
    xs = {f: float(p[0]) for f, p in rel.items()}
    frames = list(track.frames)

    out = {}
    for i, f in enumerate(frames):
        vx, vy, vz = track.velocity(f)
        tags = {track.category, track.color}
        speed = math.hypot(vx, vy)
        moving = speed > MOVING_SPEED
        tags.add("moving" if moving else "stopped")
        x, y = float(rel[f][0]), float(rel[f][1])
        tags.add(_location_tag(x, y))

        v_ego = ego[f].matrix.T @ np.array([vx, vy, vz])
        if moving and abs(v_ego[1]) > abs(v_ego[0]) and abs(y) < CROSSING_BAND:
            tags.add("crossing")

        if -OVERTAKE_WINDOW <= x <= OVERTAKE_WINDOW:
            behind_before = any(xs[g] < -OVERTAKE_WINDOW for g in frames[:i])
            ahead_after = any(xs[g] > OVERTAKE_WINDOW for g in frames[i + 1:])
            if behind_before and ahead_after:
                tags.add("overtaking")
        out[f] = frozenset(tags)
    return out


def build_element_map(tracks: Sequence[Track], ego: Sequence[Pose]) -> ElementMap:
    n_frames = len(ego)
    members: dict[str, dict[int, set[int]]] = {}
    for track in tracks:
        for f, tags in derive_element_tags(track, ego).items():
            for tag in tags:
                members.setdefault(tag, {}).setdefault(f, set()).add(track.track_id)
    frozen = {tag: {f: frozenset(ids) for f, ids in per.items()} for tag, per in members.items()}
    return ElementMap(frozen, presence_by_frame(tracks, n_frames))


def _archetype_counts(mix: dict[str, float], n: int) -> dict[str, int]:
    """Largest-remainder apportionment of ``n`` tracks over the mix."""
    total = sum(mix.values())
    names = [a for a in ARCHETYPES if mix.get(a, 0) > 0]
    quotas = {a: n * mix[a] / total for a in names}
    counts = {a: int(math.floor(q + 1e-9)) for a, q in quotas.items()}
    left = n - sum(counts.values())
    order = sorted(names, key=lambda a: (-(quotas[a] - counts[a]), ARCHETYPES.index(a)))
    for a in order[:left]:
        counts[a] += 1
    return counts


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _road_motion(archetype: str, category: str, rng: np.random.Generator,
                 v_ego: float, t_last: float, spread: float) -> tuple[np.ndarray, np.ndarray]:
    """Initial (x, y) and velocity (vx, vy) in the road frame."""
    u = rng.uniform
    if archetype == "overtaking":
        x0 = u(-25.0, -12.0)
        y0 = float(rng.choice([-3.5, 3.5]))
        need = (10.0 - x0) / max(t_last, 0.5)
        dv = max(1.0, need) * u(1.0, 1.3)
        return np.array([x0, y0]), np.array([v_ego + dv, 0.0])
    if archetype == "stopped":
        side = float(rng.choice([-1.0, 1.0]))
        x0 = u(-10.0, v_ego * t_last + 30.0 * spread)
        return np.array([x0, side * u(5.0, 10.0) * spread]), np.zeros(2)
    if archetype == "crossing":
        side = float(rng.choice([-1.0, 1.0]))
        speed = u(1.0, 1.8) if category == "pedestrian" else u(3.0, 5.0)
        t_cross = u(0.2, 0.8) * max(t_last, 0.5)
        y0 = side * u(7.0, 10.0) * spread
        # crossing point chosen ahead of where the ego will be
        x0 = v_ego * t_cross + u(8.0, 25.0) * spread
        return np.array([x0, y0]), np.array([0.0, -side * speed])
    # constant velocity; relative longitudinal offset never goes from - to +
    if category == "pedestrian":
        side = float(rng.choice([-1.0, 1.0]))
        return (np.array([u(-10.0, 50.0) * spread, side * u(6.0, 9.0) * spread]),
                np.array([float(rng.choice([-1.0, 1.0])) * u(1.0, 1.8), 0.0]))
    kind = rng.integers(3)
    if kind == 0:  # oncoming
        return np.array([u(10.0, 80.0) * spread, float(rng.choice([3.5, 7.0]))]), np.array([-u(5.0, 12.0), 0.0])
    if kind == 1 and v_ego > 1.0:  # slower, same direction, ahead
        return (np.array([u(8.0, 60.0) * spread, float(rng.choice([-3.5, 0.0]))]),
                np.array([u(0.3, 0.8) * v_ego, 0.0]))
    # faster, same direction, already ahead
    return (np.array([u(6.0, 40.0) * spread, float(rng.choice([-3.5, 0.0, 3.5]))]),
            np.array([v_ego + u(0.5, 3.0), 0.0]))


def generate_scene(config: SceneConfig, index: int = 0, scene_id: Optional[str] = None) -> Scene:
    config.validate()
    rng = scene_rng(config.seed, index)
    n_frames = config.duration_frames
    dt = 1.0 / FRAME_RATE
    t_last = (n_frames - 1) * dt
    timestamps = [round(f * dt, 6) for f in range(n_frames)]

    heading = rng.uniform(-math.pi, math.pi)
    origin = np.array([rng.uniform(-500, 500), rng.uniform(-500, 500), 0.0])
    v_ego = rng.uniform(*config.ego_speed)
    c, s = math.cos(heading), math.sin(heading)
    road_to_world = np.array([[c, -s], [s, c]])
    ego = [Pose.from_yaw(heading, origin + np.array([c, s, 0.0]) * v_ego * t) for t in timestamps]

    counts = _archetype_counts(dict(config.motion_mix), config.n_tracks)
    archetypes = [a for a in ARCHETYPES for _ in range(counts.get(a, 0))]
    archetypes = [archetypes[i] for i in rng.permutation(len(archetypes))]

    tracks = []
    for k, archetype in enumerate(archetypes):
        category = str(rng.choice(ARCHETYPE_CLASSES[archetype]))
        color = str(rng.choice(COLORS))
        if archetype == "overtaking" or n_frames < 4:
            first, last = 0, n_frames - 1
        else:
            first = int(rng.integers(0, n_frames // 4 + 1))
            last = int(rng.integers((3 * n_frames) // 4, n_frames))
            last = max(last, first)
        p0, vel = _road_motion(archetype, category, rng, v_ego, t_last, config.spread)
        scale = rng.uniform(0.9, 1.1)
        size = tuple(v * scale for v in CLASS_SIZES[category])
        if np.hypot(*vel) > 0:
            yaw_road = math.atan2(vel[1], vel[0])
        else:
            yaw_road = float(rng.choice([0.0, math.pi]))
        yaw = heading + yaw_road
        vel_world = road_to_world @ vel
        boxes, velocities = [], []
        for f in range(first, last + 1):
            t = timestamps[f]
            xy = origin[:2] + road_to_world @ (p0 + vel * t)
            boxes.append(Box3D((xy[0], xy[1], size[2] / 2.0), size, yaw, "world"))
            velocities.append((float(vel_world[0]), float(vel_world[1]), 0.0))
        tracks.append(Track(k + 1, category, color, archetype, first, boxes, velocities))

    return Scene(
        scene_id=scene_id or f"scene-{config.seed:04d}-{index:04d}",
        timestamps=timestamps,
        ego=ego,
        rig=default_rig(),
        tracks=tracks,
        element_map=build_element_map(tracks, ego),
    )


def generate_scenes(config: SceneConfig, n_scenes: int) -> list[Scene]:
    if n_scenes < 0:
        raise ValueError("n_scenes must be >= 0")
    return [generate_scene(config, i) for i in range(n_scenes)]


def _split_key(scene_id: str) -> str:
    return hashlib.sha256(scene_id.encode("utf-8")).hexdigest()


def split_dataset(scenes: Iterable, ratio: float) -> tuple[list[str], list[str]]:
    """Deterministic hash-ordered train/val split of scene ids."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    ids = [s.scene_id if isinstance(s, Scene) else str(s) for s in scenes]
    if not ids:
        raise ValueError("cannot split an empty scene list")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scene ids")
    ordered = sorted(ids, key=lambda i: (_split_key(i), i))
    n_train = int(round(ratio * len(ids)))
    return sorted(ordered[:n_train]), sorted(ordered[n_train:])
