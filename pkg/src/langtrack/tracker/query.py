"""Query-propagation tracker: decode stub, past/prompt/future reasoning, lifecycle."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..assign import solve_assignment
from ..geom3d import Box3D, Pose, transform_box
from ..simworld import FRAME_RATE, Scene
from .detect import WORLD, Detection, NoiseConfig, detect_oracle
from .embed import DEFAULT_WIDTH, PromptEmbedding
from .reasoning import PastParams, future_reason, past_reason, prompt_reason_many


@dataclass(frozen=True)
class TrackerConfig:
    n_fixed: int = 64
    tau_h: int = 3
    tau_f: int = 8
    gamma_object: float = 0.2
    gamma_prompt: float = 0.2
    miss_tolerance: int = 3
    gate: float = 2.0  # m, association gate around a motion-predicted reference point
    young_speed: float = 16.0  # m/s bound used while a track has no velocity estimate
    feature_weight: float = 8.0
    use_past: bool = True
    past: PastParams = PastParams()
    motion_gain: float = 1.0
    early_fusion: bool = False
    width: int = DEFAULT_WIDTH
    coast_decay: float = 0.5  # class-score factor per frame a track goes undetected

    def validate(self) -> None:
        for name in ("gamma_object", "gamma_prompt"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.tau_h < 1 or self.tau_f < 1:
            raise ValueError("tau_h and tau_f must be >= 1")
        if self.n_fixed < 1 or self.miss_tolerance < 1:
            raise ValueError("n_fixed and miss_tolerance must be >= 1")
        if self.gate <= 0 or self.young_speed <= 0:
            raise ValueError("gates must be > 0")


@dataclass
class Query:
    feature: np.ndarray
    ref_point: np.ndarray  # ego frame of the current step
    kind: str  # "track" or "fixed"
    track_id: Optional[int]
    class_scores: np.ndarray
    prompt_prob: float = 0.0
    cache: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in ("track", "fixed"):
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.kind == "track" and self.track_id is None:
            raise ValueError("track queries need a track_id")


@dataclass
class TrackState:
    track_id: int
    feature: np.ndarray
    center: np.ndarray  # world frame
    size: tuple[float, float, float]
    yaw: float
    class_scores: np.ndarray
    cache: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)  # (frame, feature, centre)
    hits: int = 1
    misses: int = 0
    predicted: Optional[np.ndarray] = None  # world centre expected at the next frame
    motion: Optional[np.ndarray] = None


@dataclass
class TrackerState:
    frame: int = -1
    tracks: list[TrackState] = field(default_factory=list)
    next_id: int = 1


@dataclass
class FrameOutput:
    frame: int
    track_ids: list[int]
    boxes: list[Box3D]  # world frame
    class_scores: np.ndarray  # best class score per query
    features: np.ndarray  # refined queries, N x C
    prompt_probs: np.ndarray  # n_prompts x N

    def referred(self, prompt_index: int, gamma_object: float, gamma_prompt: float) -> np.ndarray:
        if len(self.track_ids) == 0:
            return np.zeros(0, dtype=bool)
        return (self.class_scores > gamma_object) & (self.prompt_probs[prompt_index] > gamma_prompt)


def _xy_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :2] - b[None, :, :2]
    return np.hypot(d[..., 0], d[..., 1])


def _feature_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _match(tracks: list[TrackState], refs: np.ndarray, dets: list[Detection], det_xy: np.ndarray,
           det_feat: np.ndarray, gates: np.ndarray, weight: float) -> list[tuple[int, int]]:
    if not tracks or not dets:
        return []
    dist = _xy_distance(refs, det_xy)
    feats = np.stack([t.feature for t in tracks])
    cost = dist + weight * _feature_distance(feats, det_feat)
    return solve_assignment(cost, forbidden=dist >= gates[:, None])


def decode(state: TrackerState, ego: Pose, dets: list[Detection], config: TrackerConfig, dt: float
           ) -> tuple[dict[int, int], list[int]]:
    """Match track queries to detections; returns {track index: det index} and unclaimed det indices."""
    det_xy = np.array([d.box.center for d in dets]).reshape(-1, 3)
    det_feat = np.array([d.feature for d in dets]).reshape(len(dets), -1)
    refs = []
    for t in state.tracks:
        pred = t.predicted if t.predicted is not None else t.center
        ref_box = transform_box(Box3D(tuple(pred), t.size, t.yaw, "world"), WORLD, ego, frame="ego")
        refs.append(ref_box.center)
    refs = np.array(refs).reshape(-1, 3)
    matched: dict[int, int] = {}
    # established tracks first, then tracks still lacking a velocity estimate
    for young in (False, True):
        idx = [i for i, t in enumerate(state.tracks) if (t.hits < 2) == young and i not in matched]
        free = [j for j in range(len(dets)) if j not in matched.values()]
        if not idx or not free:
            continue
        if young:
            gates = np.array([config.young_speed * dt * (state.tracks[i].misses + 1) for i in idx])
        else:
            gates = np.full(len(idx), config.gate)
        pairs = _match([state.tracks[i] for i in idx], refs[idx], [dets[j] for j in free], det_xy[free],
                       det_feat[free], gates, config.feature_weight)
        for r, c in pairs:
            matched[idx[r]] = free[c]
    claimed = set(matched.values())
    return matched, [j for j in range(len(dets)) if j not in claimed]


def track_step(state: TrackerState, frame: int, ego: Pose, dets: Sequence[Detection],
               prompts: Sequence[PromptEmbedding], head, config: TrackerConfig = TrackerConfig(),
               dt: float = 1.0 / FRAME_RATE) -> tuple[TrackerState, FrameOutput]:
    """Advance the tracker by one frame; ``dets`` are in the ego frame of ``ego``."""
    dets = list(dets)
    if frame <= state.frame:
        raise ValueError(f"frame {frame} does not advance past {state.frame}")
    tracks = [replace(t, cache=list(t.cache)) for t in state.tracks]
    state = TrackerState(frame, tracks, state.next_id)
    matched, unclaimed = decode(state, ego, dets, config, dt) if tracks else ({}, list(range(len(dets))))

    # fixed queries pick up unclaimed detections, most confident first
    unclaimed.sort(key=lambda j: (-dets[j].score, j))
    births = [j for j in unclaimed[: config.n_fixed] if dets[j].score > config.gamma_object]

    n_old = len(tracks)
    sources = [dets[matched[i]] if i in matched else None for i in range(n_old)] + [dets[j] for j in births]
    world_boxes = [transform_box(d.box, ego, WORLD, frame="world") if d is not None else None for d in sources]
    for j, wb in zip(births, world_boxes[n_old:]):
        d = dets[j]
        tracks.append(TrackState(state.next_id, d.feature, wb.xyz, tuple(wb.size), wb.yaw, d.class_scores))
        state.next_id += 1

    feats, centers, caches, priors, scores = [], [], [], [], []
    for i, t in enumerate(tracks):
        d, wb = sources[i], world_boxes[i]
        old = i < n_old
        if d is not None:
            feats.append(d.feature)
            centers.append(wb.xyz)
            scores.append(d.class_scores)
            # a prior needs a velocity estimate, i.e. two cached observations
            priors.append(t.predicted if (old and config.use_past and len(t.cache) >= 2) else None)
            t.size, t.yaw = tuple(wb.size), wb.yaw
        else:
            feats.append(t.feature)
            centers.append(t.predicted if t.predicted is not None else t.center)
            scores.append(t.class_scores * config.coast_decay)
            priors.append(None)
        caches.append([f for _, f, _ in t.cache] if config.use_past else [])

    n = len(tracks)
    width = config.width if not n else len(feats[0])
    refined, ref_centers = past_reason(np.array(feats).reshape(n, width), np.array(centers).reshape(n, 3),
                                       caches, priors, config.past)
    probs = prompt_reason_many(refined, prompts, head).reshape(len(prompts), n)

    ids, boxes, best = [], [], np.zeros(n)
    for i, t in enumerate(tracks):
        t.class_scores = scores[i]
        best[i] = float(np.max(scores[i]))
        t.center = ref_centers[i]
        t.feature = refined[i]
        ids.append(t.track_id)
        boxes.append(Box3D(tuple(t.center), t.size, t.yaw, "world"))

    survivors = []
    for i, t in enumerate(tracks):
        if best[i] > config.gamma_object:
            t.misses = 0
            if i in matched:
                t.hits += 1
            if config.use_past:
                t.cache.append((frame, t.feature.copy(), t.center.copy()))
                del t.cache[: max(0, len(t.cache) - config.tau_h)]
        else:
            t.misses += 1
            if t.misses >= config.miss_tolerance:
                continue
        history = [(f, c) for f, _, c in t.cache]
        t.motion = future_reason(t.center, history, frame, dt, config.tau_f, config.motion_gain)
        t.predicted = t.center + t.motion[0]
        survivors.append(t)
    state.tracks = survivors
    return state, FrameOutput(frame, ids, boxes, best, refined, probs)


def track_scene(scene: Scene, prompts: Sequence[PromptEmbedding], head, config: TrackerConfig = TrackerConfig(),
                noise: NoiseConfig = NoiseConfig(), prompt_gate: Optional[np.ndarray] = None) -> list[FrameOutput]:
    """Run the tracker online over every frame of ``scene``."""
    config.validate()
    dt = 1.0 / FRAME_RATE
    state = TrackerState()
    outputs = []
    for f in range(scene.n_frames):
        dets = detect_oracle(scene, f, noise, prompt_gate, config.width)
        state, out = track_step(state, f, scene.ego[f], dets, prompts, head, config, dt)
        outputs.append(out)
    return outputs
