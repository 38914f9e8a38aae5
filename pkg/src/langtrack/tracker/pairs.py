"""Video-prompt pairs: ground truth, submissions and tracker drivers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..geom3d import Box3D
from ..promptgen import PromptLabel
from ..simworld import Scene
from ..trackeval import GTFrames, PairResult, Tracklet, compute_amota_amotp
from .detect import NoiseConfig
from .embed import embed_prompt
from .query import FrameOutput, TrackerConfig, track_scene

PairKey = tuple[str, str]


@dataclass
class PairSubmission:
    scene_id: str
    prompt_id: str
    tracklets: list[Tracklet]

    @property
    def key(self) -> PairKey:
        return (self.scene_id, self.prompt_id)

    @property
    def n_boxes(self) -> int:
        return sum(len(t.boxes) for t in self.tracklets)

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "prompt_id": self.prompt_id,
            "tracklets": [
                {
                    "pred_id": t.pred_id,
                    "boxes": {str(f): [round(v, 6) for v in b.to_list()] for f, b in sorted(t.boxes.items())},
                    "conf": {str(f): round(c, 6) for f, c in sorted(t.conf.items())},
                }
                for t in sorted(self.tracklets, key=lambda t: t.pred_id)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairSubmission":
        tracklets = [
            Tracklet(int(t["pred_id"]),
                     {int(f): Box3D.from_list(b) for f, b in t["boxes"].items()},
                     {int(f): float(c) for f, c in t["conf"].items()})
            for t in d["tracklets"]
        ]
        return cls(str(d["scene_id"]), str(d["prompt_id"]), tracklets)


def gt_frames(scene: Scene, label: PromptLabel) -> GTFrames:
    """Referred ground-truth boxes of one pair, keyed by frame."""
    out = {}
    for f, ids in sorted(label.referred.items()):
        out[f] = [(tid, scene.track(tid).box(f)) for tid in sorted(ids)]
    return out


def gt_submission(scene: Scene, label: PromptLabel, shift: Sequence[float] = (0.0, 0.0, 0.0)) -> PairSubmission:
    """The pair's own ground truth as a submission, optionally translated by ``shift``."""
    boxes: dict[int, dict[int, Box3D]] = {}
    for f, items in gt_frames(scene, label).items():
        for tid, b in items:
            boxes.setdefault(tid, {})[f] = b.with_center(np.asarray(b.center) + np.asarray(shift))
    return PairSubmission(scene.scene_id, label.prompt_id,
                          [Tracklet(tid, bx, {f: 1.0 for f in bx}) for tid, bx in sorted(boxes.items())])


def submissions_from_outputs(scene_id: str, prompt_ids: Sequence[str], outputs: Iterable[FrameOutput],
                             gamma_object: float, gamma_prompt: float) -> list[PairSubmission]:
    """Referred outputs per prompt; confidence is prompt probability times class score."""
    per_prompt: list[dict[int, Tracklet]] = [{} for _ in prompt_ids]
    for out in outputs:
        for k in range(len(prompt_ids)):
            mask = out.referred(k, gamma_object, gamma_prompt)
            for i in np.flatnonzero(mask):
                tid = out.track_ids[i]
                tr = per_prompt[k].setdefault(tid, Tracklet(tid, {}, {}))
                tr.boxes[out.frame] = out.boxes[i]
                tr.conf[out.frame] = float(np.clip(out.prompt_probs[k, i] * out.class_scores[i], 0.0, 1.0))
    return [PairSubmission(scene_id, pid, [t for _, t in sorted(tr.items())])
            for pid, tr in zip(prompt_ids, per_prompt)]


def run_query_tracker(scene: Scene, labels: Sequence[PromptLabel], head, config: TrackerConfig = TrackerConfig(),
                      noise: NoiseConfig = NoiseConfig()) -> list[PairSubmission]:
    """Track one scene for all its prompts.

    Without early fusion the tracking is prompt independent, so a single pass
    serves every prompt; with it, each prompt gets its own pass.
    """
    embeds = [embed_prompt(l.text, config.width) for l in labels]
    ids = [l.prompt_id for l in labels]
    if not config.early_fusion:
        outputs = track_scene(scene, embeds, head, config, noise)
        return submissions_from_outputs(scene.scene_id, ids, outputs, config.gamma_object, config.gamma_prompt)
    subs = []
    for pid, emb in zip(ids, embeds):
        outputs = track_scene(scene, [emb], head, config, noise, prompt_gate=emb.pooled())
        subs.extend(submissions_from_outputs(scene.scene_id, [pid], outputs, config.gamma_object,
                                             config.gamma_prompt))
    return subs


def evaluate_pairs(scenes: Sequence[Scene], labels: Sequence[PromptLabel], subs: Sequence[PairSubmission],
                   n_recall: int = 40, gate: float = 2.0) -> list[tuple[PairKey, PairResult]]:
    by_scene = {s.scene_id: s for s in scenes}
    by_key = {s.key: s for s in subs}
    results = []
    for label in labels:
        key = (label.scene_id, label.prompt_id)
        sub = by_key.get(key)
        scene = by_scene[label.scene_id]
        results.append((key, compute_amota_amotp(gt_frames(scene, label), sub.tracklets if sub else [],
                                                 n_recall, gate)))
    return results


def referred_box_count(subs: Iterable[PairSubmission]) -> int:
    return sum(s.n_boxes for s in subs)
