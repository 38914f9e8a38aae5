"""Noise-configurable oracle detector standing in for an image-based decoder."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geom3d import Box3D, Pose, transform_box
from ..simworld import CLASSES, Scene
from .embed import DEFAULT_WIDTH, tag_feature

CLUTTER_RANGE = 50.0  # m, half-width of the square clutter is spawned in
CLUTTER_SIZE = (1.8, 4.5, 1.6)
WORLD = Pose((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))


@dataclass(frozen=True)
class NoiseConfig:
    sigma_pos: float = 0.0
    p_drop: float = 0.0
    p_clutter: float = 0.0
    sigma_feat: Optional[float] = None  # defaults to sigma_pos
    seed: int = 0

    def validate(self) -> None:
        if self.sigma_pos < 0 or (self.sigma_feat is not None and self.sigma_feat < 0):
            raise ValueError("noise scales must be >= 0")
        for name in ("p_drop", "p_clutter"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def feat_sigma(self) -> float:
        return self.sigma_pos if self.sigma_feat is None else self.sigma_feat


@dataclass(frozen=True)
class Detection:
    box: Box3D  # ego frame
    feature: np.ndarray
    class_scores: np.ndarray
    gt_track: Optional[int] = None  # None for clutter; never read by trackers

    @property
    def score(self) -> float:
        return float(self.class_scores.max())


def _frame_rng(noise: NoiseConfig, scene_id: str, frame: int) -> np.random.Generator:
    h = int.from_bytes(hashlib.sha256(scene_id.encode("utf-8")).digest()[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([noise.seed, h, frame]))


def detect_oracle(scene: Scene, frame: int, noise: NoiseConfig = NoiseConfig(),
                  prompt_gate: Optional[np.ndarray] = None, width: int = DEFAULT_WIDTH) -> list[Detection]:
    """Ground-truth boxes of ``frame`` in the ego frame, corrupted per ``noise``.

    Features embed each object's true tags at this frame. When ``prompt_gate``
    is given, features are multiplied elementwise by it.
    """
    if not 0 <= frame < scene.n_frames:
        raise IndexError(f"frame {frame} outside scene of {scene.n_frames} frames")
    noise.validate()
    rng = _frame_rng(noise, scene.scene_id, frame)
    ego = scene.ego[frame]
    emap = scene.element_map
    tags_of: dict[int, set[str]] = {}
    for tag in emap.tags:
        for tid in emap.members[tag].get(frame, ()):
            tags_of.setdefault(tid, set()).add(tag)

    dets = []
    for track in sorted(scene.present_tracks(frame), key=lambda t: t.track_id):
        # draw every variate even for dropped objects so streams stay aligned
        drop = rng.random() < noise.p_drop
        offset = rng.normal(0.0, 1.0, size=2) * noise.sigma_pos
        fnoise = rng.normal(0.0, 1.0, size=width) * noise.feat_sigma / np.sqrt(width)
        clutter = rng.random() < noise.p_clutter
        clutter_xy = rng.uniform(-CLUTTER_RANGE, CLUTTER_RANGE, size=2)
        clutter_scores = rng.uniform(0.0, 0.4, size=len(CLASSES))
        clutter_feat = rng.normal(0.0, 1.0, size=width) / np.sqrt(width)
        clutter_yaw = float(rng.uniform(-np.pi, np.pi))
        if not drop:
            box = transform_box(track.box(frame), WORLD, ego, frame="ego")
            c = box.center
            box = box.with_center((c[0] + offset[0], c[1] + offset[1], c[2]))
            scores = np.zeros(len(CLASSES))
            scores[CLASSES.index(track.category)] = 1.0
            feat = tag_feature(tags_of.get(track.track_id, ()), width) + fnoise
            dets.append(Detection(box, feat, scores, track.track_id))
        if clutter:
            h = CLUTTER_SIZE[2]
            box = Box3D((clutter_xy[0], clutter_xy[1], h / 2), CLUTTER_SIZE, clutter_yaw, "ego")
            dets.append(Detection(box, clutter_feat, clutter_scores, None))
    if prompt_gate is not None:
        gate = np.asarray(prompt_gate, dtype=np.float64)
        dets = [Detection(d.box, d.feature * gate, d.class_scores, d.gt_track) for d in dets]
    return dets

