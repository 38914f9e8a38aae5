"""Training of the prompt-reasoning head on tracker queries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..assign import solve_assignment
from ..neurocore import (AdamWState, CheckpointError, cosine_multiplier, focal_loss_logits, load_checkpoint,
                         optimizer_step, save_checkpoint)
from ..promptgen import PromptLabel
from ..simworld import Scene
from .detect import NoiseConfig
from .embed import PromptEmbedding, embed_prompt
from .query import FrameOutput, TrackerConfig, track_scene
from .reasoning import PromptHead


class DegenerateTrainingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 400
    batch_pairs: int = 64
    rows_per_pair: Optional[int] = 32  # None uses every row
    lr: float = 2e-3
    weight_decay: float = 0.0
    loss_weight: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    cosine: bool = True
    seed: int = 0
    hidden: int = 64
    n_heads: int = 4
    residual: bool = False

    def validate(self) -> None:
        if self.steps < 0 or self.batch_pairs < 1:
            raise ValueError("steps must be >= 0 and batch_pairs >= 1")
        if self.rows_per_pair is not None and self.rows_per_pair < 1:
            raise ValueError("rows_per_pair must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.loss_weight < 0:
            raise ValueError("loss_weight must be >= 0")


@dataclass
class TrainingPair:
    key: tuple[str, str]
    queries: np.ndarray  # M x C refined query features
    prompt: PromptEmbedding
    labels: np.ndarray  # M binary targets


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)


def label_queries(outputs: Sequence[FrameOutput], scene: Scene, label: PromptLabel, gamma_object: float,
                  gate: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Rows of confident queries and whether their matched GT track is referred."""
    rows, targets = [], []
    for out in outputs:
        keep = np.flatnonzero(out.class_scores > gamma_object)
        if len(keep) == 0:
            continue
        present = scene.present_tracks(out.frame)
        referred = label.referred_at(out.frame)
        y = np.zeros(len(keep))
        if present:
            gt_xy = np.array([t.box(out.frame).center[:2] for t in present])
            q_xy = np.array([out.boxes[i].center[:2] for i in keep])
            d = q_xy[:, None, :] - gt_xy[None, :, :]
            dist = np.hypot(d[..., 0], d[..., 1])
            for r, c in solve_assignment(dist, gate=gate):
                y[r] = float(present[c].track_id in referred)
        rows.append(out.features[keep])
        targets.append(y)
    if not rows:
        return np.zeros((0, outputs[0].features.shape[1] if outputs else 0)), np.zeros(0)
    return np.vstack(rows), np.concatenate(targets)


def build_training_pairs(scenes: Sequence[Scene], labels: Sequence[PromptLabel],
                         config: TrackerConfig = TrackerConfig(), noise: NoiseConfig = NoiseConfig()
                         ) -> list[TrainingPair]:
    """Track every scene once and label its queries for each of the scene's prompts."""
    by_scene: dict[str, list[PromptLabel]] = {}
    for l in labels:
        by_scene.setdefault(l.scene_id, []).append(l)
    pairs = []
    for scene in scenes:
        outputs = track_scene(scene, [], None, config, noise)
        for l in by_scene.get(scene.scene_id, []):
            q, y = label_queries(outputs, scene, l, config.gamma_object)
            if len(y):
                pairs.append(TrainingPair((scene.scene_id, l.prompt_id), q, embed_prompt(l.text, config.width), y))
    return pairs


def batch_loss(head: PromptHead, batch: Sequence[TrainingPair], config: TrainConfig):
    """Weighted focal loss over all rows of ``batch`` and its parameter gradients."""
    logits, cache = head.logits_batch([p.queries for p in batch], [p.prompt for p in batch])
    z = np.concatenate(logits)
    y = np.concatenate([p.labels for p in batch])
    loss, dz = focal_loss_logits(z, y, config.focal_alpha, config.focal_gamma)
    loss *= config.loss_weight
    dz = dz * config.loss_weight
    splits = np.cumsum([len(p.labels) for p in batch])[:-1]
    grads = head.backward_batch(np.split(dz, splits), cache)
    return loss, grads


def _subsample(pair: TrainingPair, rows: Optional[int], rng: np.random.Generator) -> TrainingPair:
    if rows is None or len(pair.labels) <= rows:
        return pair
    idx = np.sort(rng.choice(len(pair.labels), size=rows, replace=False))
    return TrainingPair(pair.key, pair.queries[idx], pair.prompt, pair.labels[idx])


def train_prompt_head(pairs: Sequence[TrainingPair], config: TrainConfig = TrainConfig(),
                      head: Optional[PromptHead] = None) -> tuple[PromptHead, TrainHistory]:
    """Optimize only the prompt head; deterministic for a given seed."""
    config.validate()
    if not pairs:
        raise ValueError("need at least one training pair")
    width = pairs[0].queries.shape[1]
    if head is None:
        head = PromptHead.init(width, config.n_heads, config.hidden, seed=config.seed, residual=config.residual)
    if not any(p.labels.any() for p in pairs):
        warnings.warn("no positive labels in the training data; the head can only learn to reject",
                      DegenerateTrainingWarning, stacklevel=2)
    rng = np.random.default_rng(config.seed)
    params = head.named()
    state = AdamWState()
    history = TrainHistory()
    for step in range(config.steps):
        size = min(config.batch_pairs, len(pairs))
        batch = [_subsample(pairs[i], config.rows_per_pair, rng)
                 for i in np.sort(rng.choice(len(pairs), size=size, replace=False))]
        loss, grads = batch_loss(head, batch, config)
        scale = cosine_multiplier(step, config.steps) if config.cosine else 1.0
        params, state = optimizer_step(params, grads, state, lr=config.lr, weight_decay=config.weight_decay,
                                       lr_scale=scale)
        head = head.with_named(params)
        history.loss.append(loss)
        history.lr.append(config.lr * scale)
    return head, history


def head_separation(head: PromptHead, pairs: Sequence[TrainingPair]) -> tuple[float, float]:
    """Mean predicted probability on referred and on non-referred rows."""
    pos, neg = [], []
    for p in pairs:
        prob = head(p.queries, p.prompt)
        pos.append(prob[p.labels == 1])
        neg.append(prob[p.labels == 0])
    pos_all, neg_all = np.concatenate(pos), np.concatenate(neg)
    return (float(pos_all.mean()) if len(pos_all) else float("nan"),
            float(neg_all.mean()) if len(neg_all) else float("nan"))


def save_head(path, head: PromptHead, meta: Optional[dict] = None) -> None:
    info = {"kind": "prompt_head", "width": head.width, "n_heads": head.attn.n_heads, "residual": head.residual}
    info.update(meta or {})
    save_checkpoint(path, head.named(), info)


def load_head(path) -> tuple[PromptHead, dict]:
    """Rebuild a prompt head from a checkpoint written by :func:`save_head`."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "prompt_head":
        raise CheckpointError(f"{path} does not hold a prompt head")
    try:
        n_heads = int(meta["n_heads"])
        template = PromptHead.init(int(meta["width"]), n_heads, tensors["mlp.w1"].shape[1],
                                   residual=bool(meta.get("residual", False)))
        expected = template.named()
        if set(tensors) != set(expected):
            raise CheckpointError(f"{path}: tensor names differ from a prompt head's")
        for k, v in expected.items():
            if tensors[k].shape != v.shape:
                raise CheckpointError(f"{path}: tensor {k} has shape {tensors[k].shape}, expected {v.shape}")
        return template.with_named(tensors), meta
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed prompt-head checkpoint ({exc})") from exc
