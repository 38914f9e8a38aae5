"""Small hand-built scenarios shared by the evaluation and acceptance tests."""

from langtrack.geom3d import Box3D
from langtrack.trackeval import Tracklet

SIZE = (1.8, 4.5, 1.6)


def box(x: float, y: float = 0.0) -> Box3D:
    return Box3D((x, y, 0.0), SIZE)


def swap_scenario(n_frames: int = 10):
    """Two parallel GT tracks; the two predictions trade targets halfway."""
    half = n_frames // 2
    gt = {f: [(1, box(0.0, f)), (2, box(10.0, f))] for f in range(n_frames)}
    a = {f: box(0.0 if f < half else 10.0, f) for f in range(n_frames)}
    b = {f: box(10.0 if f < half else 0.0, f) for f in range(n_frames)}
    ones = {f: 1.0 for f in range(n_frames)}
    return gt, [Tracklet(100, a, dict(ones)), Tracklet(200, b, dict(ones))]


def constant_velocity_scene(starts, velocities, n_frames: int = 12, ego_speed: float = 0.0, scene_id: str = "built"):
    """Objects moving in straight lines; the ego drives along +x at ``ego_speed``."""
    import numpy as np

    from langtrack.geom3d import Pose, default_rig
    from langtrack.simworld import FRAME_RATE, Scene, Track, build_element_map

    dt = 1.0 / FRAME_RATE
    ego = [Pose((ego_speed * f * dt, 0.0, 0.0)) for f in range(n_frames)]
    tracks = []
    for k, (start, vel) in enumerate(zip(starts, velocities), start=1):
        boxes = [Box3D((start[0] + vel[0] * f * dt, start[1] + vel[1] * f * dt, 0.8), SIZE) for f in range(n_frames)]
        tracks.append(Track(k, "car", "red", "constant_velocity", 0, boxes, [(vel[0], vel[1], 0.0)] * n_frames))
    return Scene(scene_id, [f * dt for f in range(n_frames)], ego, default_rig(), tracks,
                 build_element_map(tracks, ego))
