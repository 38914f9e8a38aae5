"""Greedy centroid tracker used as the heuristic baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..assign import greedy_assignment
from ..geom3d import transform_box
from ..promptgen import PromptLabel
from ..simworld import FRAME_RATE, Scene
from .detect import WORLD, NoiseConfig, detect_oracle
from .embed import embed_prompt
from .pairs import PairSubmission, submissions_from_outputs
from .query import FrameOutput, TrackerConfig
from .reasoning import prompt_reason_many


@dataclass
class _GreedyTrack:
    track_id: int
    center: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    hits: int = 1
    misses: int = 0
    last_seen: int = 0


def greedy_track_scene(scene: Scene, prompts, head, config: TrackerConfig = TrackerConfig(),
                       noise: NoiseConfig = NoiseConfig()) -> list[FrameOutput]:
    """Distance-only association: constant-velocity prediction, greedy matching.

    Velocity comes from the last two matched positions; a track seen only once
    uses the same speed-bounded gate as the query tracker's young tracks but
    without appearance cues. Prompt scores come from raw detection features.
    """
    config.validate()
    dt = 1.0 / FRAME_RATE
    tracks: list[_GreedyTrack] = []
    next_id = 1
    outputs = []
    for f in range(scene.n_frames):
        ego = scene.ego[f]
        dets = detect_oracle(scene, f, noise, None, config.width)
        world = [transform_box(d.box, ego, WORLD, frame="world") for d in dets]
        matched: dict[int, int] = {}
        for young in (False, True):
            idx = [i for i, t in enumerate(tracks) if (t.hits < 2) == young]
            free = [j for j in range(len(dets)) if j not in matched.values()]
            if not idx or not free:
                continue
            pred = np.array([tracks[i].center + tracks[i].velocity * dt * (tracks[i].misses + 1) for i in idx])
            det_xy = np.array([world[j].xyz for j in free])
            d = pred[:, None, :2] - det_xy[None, :, :2]
            dist = np.hypot(d[..., 0], d[..., 1])
            if young:
                gate = np.array([config.young_speed * dt * (tracks[i].misses + 1) for i in idx])
                forbidden = dist >= gate[:, None]
                top = float(gate.max()) + 1.0
            else:
                forbidden, top = None, config.gate
            for r, c in greedy_assignment(dist, gate=top, forbidden=forbidden):
                matched[idx[r]] = free[c]

        claimed = set(matched.values())
        fresh = sorted((j for j in range(len(dets)) if j not in claimed), key=lambda j: (-dets[j].score, j))
        births = [j for j in fresh[: config.n_fixed] if dets[j].score > config.gamma_object]

        emitted: list[tuple[int, int]] = []  # (track id, detection index)
        survivors = []
        for i, t in enumerate(tracks):
            if i in matched and dets[matched[i]].score > config.gamma_object:
                j = matched[i]
                c = world[j].xyz
                t.velocity = (c - t.center) / ((f - t.last_seen) * dt)
                t.velocity[2] = 0.0
                t.center, t.last_seen = c, f
                t.hits += 1
                t.misses = 0
                emitted.append((t.track_id, j))
            else:
                t.misses += 1
                if t.misses >= config.miss_tolerance:
                    continue
            survivors.append(t)
        for j in births:
            survivors.append(_GreedyTrack(next_id, world[j].xyz, last_seen=f))
            emitted.append((next_id, j))
            next_id += 1
        tracks = survivors

        feats = np.array([dets[j].feature for _, j in emitted]).reshape(len(emitted), config.width)
        probs = prompt_reason_many(feats, prompts, head).reshape(len(prompts), len(emitted))
        outputs.append(FrameOutput(
            f, [tid for tid, _ in emitted], [world[j] for _, j in emitted],
            np.array([dets[j].score for _, j in emitted]), feats, probs,
        ))
    return outputs


def run_greedy_baseline(scene: Scene, labels: Sequence[PromptLabel], head, config: TrackerConfig = TrackerConfig(),
                        noise: NoiseConfig = NoiseConfig()) -> list[PairSubmission]:
    embeds = [embed_prompt(l.text, config.width) for l in labels]
    outputs = greedy_track_scene(scene, embeds, head, config, noise)
    return submissions_from_outputs(scene.scene_id, [l.prompt_id for l in labels], outputs,
                                    config.gamma_object, config.gamma_prompt)
