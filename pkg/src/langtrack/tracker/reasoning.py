"""Past, prompt and future reasoning over feature-vector queries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from ..neurocore import (AttentionParams, MLPParams, Params, attention_backward, batched_attention, mlp_backward,
                         mlp_forward, multi_head_attention, sinusoidal_positions)
from .embed import DEFAULT_WIDTH, PromptEmbedding

# --------------------------------------------------------------------------
# prompt reasoning


@dataclass
class PromptHead:
    """Cross attention from refined queries to prompt tokens, then an MLP logit."""

    attn: AttentionParams
    mlp: MLPParams
    residual: bool = False

    @classmethod
    def init(cls, width: int = DEFAULT_WIDTH, n_heads: int = 4, hidden: int = 64, seed: int = 0,
             residual: bool = False) -> "PromptHead":
        rng = np.random.default_rng(seed)
        return cls(AttentionParams.init(width, n_heads, rng), MLPParams.init(width, hidden, 1, rng), residual)

    @property
    def width(self) -> int:
        return self.attn.width

    def named(self) -> Params:
        out = {f"attn.{k}": v for k, v in self.attn.named().items()}
        out.update({f"mlp.{k}": v for k, v in self.mlp.named().items()})
        return out

    def with_named(self, named: Params) -> "PromptHead":
        attn = AttentionParams.from_named({k[5:]: v for k, v in named.items() if k.startswith("attn.")},
                                          self.attn.n_heads)
        mlp = MLPParams.from_named({k[4:]: v for k, v in named.items() if k.startswith("mlp.")})
        return PromptHead(attn, mlp, self.residual)

    def logits(self, queries: np.ndarray, prompt: PromptEmbedding) -> tuple[np.ndarray, tuple]:
        s = prompt.matrix
        if s.shape[1] != self.width:
            raise ValueError(f"prompt width {s.shape[1]} != head width {self.width}")
        q = np.asarray(queries, dtype=np.float64).reshape(-1, self.width)
        if len(q) == 0:
            return np.zeros(0), ()
        pos = sinusoidal_positions(len(s), self.width)
        qp, acache = multi_head_attention(q, s, pos, self.attn, residual=self.residual)
        out, mcache = mlp_forward(qp, self.mlp)
        return out[:, 0], (acache, mcache)

    def backward(self, dlogits: np.ndarray, cache: tuple) -> Params:
        acache, mcache = cache
        mgrads, dqp = mlp_backward(np.asarray(dlogits).reshape(-1, 1), mcache)
        agrads, _, _ = attention_backward(dqp, acache)
        out = {f"attn.{k}": v for k, v in agrads.items()}
        out.update({f"mlp.{k}": v for k, v in mgrads.items()})
        return out

    def logits_batch(self, queries: Sequence[np.ndarray], prompts: Sequence[PromptEmbedding]
                     ) -> tuple[list[np.ndarray], tuple]:
        """Logits for several (queries, prompt) problems in one padded pass."""
        if len(queries) != len(prompts):
            raise ValueError("need one prompt per query block")
        c = self.width
        b = len(prompts)
        if b == 0:
            return [], ()
        sizes = [len(x) for x in queries]
        lengths = [len(p.matrix) for p in prompts]
        n_max, l_max = max(max(sizes), 1), max(lengths)
        q = np.zeros((b, n_max, c))
        kv = np.zeros((b, l_max, c))
        pos = np.zeros((b, l_max, c))
        kmask = np.zeros((b, l_max), dtype=bool)
        table = sinusoidal_positions(l_max, c)
        for i, (x, p) in enumerate(zip(queries, prompts)):
            if p.matrix.shape[1] != c:
                raise ValueError(f"prompt width {p.matrix.shape[1]} != head width {c}")
            q[i, : sizes[i]] = x
            kv[i, : lengths[i]] = p.matrix
            pos[i, : lengths[i]] = table[: lengths[i]]
            kmask[i, : lengths[i]] = True
        qp, acache = batched_attention(q, kv, pos, self.attn, kmask, residual=self.residual)
        out, mcache = mlp_forward(qp.reshape(-1, c), self.mlp)
        z = out[:, 0].reshape(b, n_max)
        return [z[i, : sizes[i]] for i in range(b)], (acache, mcache, sizes, n_max)

    def backward_batch(self, dlogits: Sequence[np.ndarray], cache: tuple) -> Params:
        acache, mcache, sizes, n_max = cache
        dz = np.zeros((len(sizes), n_max))
        for i, g in enumerate(dlogits):
            dz[i, : sizes[i]] = g
        mgrads, dqp = mlp_backward(dz.reshape(-1, 1), mcache)
        agrads, _, _ = attention_backward(dqp.reshape(len(sizes), n_max, self.width), acache)
        out = {f"attn.{k}": v for k, v in agrads.items()}
        out.update({f"mlp.{k}": v for k, v in mgrads.items()})
        return out

    def __call__(self, queries: np.ndarray, prompt: PromptEmbedding) -> np.ndarray:
        z, _ = self.logits(queries, prompt)
        return expit(z)

    def probs_many(self, queries: np.ndarray, prompts: Sequence[PromptEmbedding]) -> np.ndarray:
        """Probabilities of the same queries under each prompt, n_prompts x N."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, self.width)
        if not prompts or len(q) == 0:
            return np.zeros((len(prompts), len(q)))
        z, _ = self.logits_batch([q] * len(prompts), prompts)
        return expit(np.array(z))


class PassAllHead:
    """Ablation stand-in: every query is referred with probability one."""

    def __call__(self, queries: np.ndarray, prompt: PromptEmbedding) -> np.ndarray:
        return np.ones(np.asarray(queries).shape[0])

    def probs_many(self, queries: np.ndarray, prompts: Sequence[PromptEmbedding]) -> np.ndarray:
        return np.ones((len(prompts), np.asarray(queries).shape[0]))


def prompt_reason(refined: np.ndarray, prompt: PromptEmbedding, head) -> np.ndarray:
    """Per-query probability of being referred by ``prompt``."""
    return head(np.asarray(refined, dtype=np.float64), prompt)


def prompt_reason_many(refined: np.ndarray, prompts: Sequence[PromptEmbedding], head) -> np.ndarray:
    """``prompt_reason`` for several prompts at once, n_prompts x N."""
    q = np.asarray(refined, dtype=np.float64)
    if hasattr(head, "probs_many"):
        return head.probs_many(q, prompts)
    return np.array([head(q, p) for p in prompts]).reshape(len(prompts), len(q))


# --------------------------------------------------------------------------
# past reasoning


@dataclass(frozen=True)
class PastParams:
    """Fixed past-reasoning maps.

    ``frame_gain`` blends each query toward its cross-frame attention output,
    ``object_gain`` does the same for cross-object attention, and ``box_gain``
    is the linear residual head pulling decoded centres toward the motion prior.
    """

    frame_gain: float = 0.0
    frame_sharpness: float = 8.0
    object_gain: float = 0.0
    box_gain: float = 0.3


def _attend_rows(query: np.ndarray, keys: np.ndarray, sharpness: float) -> np.ndarray:
    c = len(query)
    params = AttentionParams.identity(c, 1, scale=sharpness * np.sqrt(c))
    out, _ = multi_head_attention(query[None, :], keys, None, params)
    return out[0]


def past_reason(features: np.ndarray, centers: np.ndarray, caches: Sequence[Sequence[np.ndarray]],
                priors: Sequence[Optional[np.ndarray]], params: PastParams = PastParams()
                ) -> tuple[np.ndarray, np.ndarray]:
    """Refine decoded query features and box centres.

    ``caches[i]`` holds previous features of query ``i``; ``priors[i]`` is the
    centre predicted for it from the previous frame (None without history).
    """
    q = np.asarray(features, dtype=np.float64)
    b = np.asarray(centers, dtype=np.float64)
    n = len(q)
    if len(b) != n or len(caches) != n or len(priors) != n:
        raise ValueError("features, centres, caches and priors must have equal length")
    if n == 0:
        return q.reshape(0, q.shape[1] if q.ndim == 2 else 0), b.reshape(0, 3)
    refined = q.copy()
    if params.frame_gain:
        for i in range(n):
            keys = np.vstack([*caches[i], q[i]]) if len(caches[i]) else q[i:i + 1]
            refined[i] = q[i] + params.frame_gain * (_attend_rows(q[i], keys, params.frame_sharpness) - q[i])
    if params.object_gain and n > 1:
        c = q.shape[1]
        mixed, _ = multi_head_attention(refined, refined, None, AttentionParams.identity(c, 1, np.sqrt(c)))
        refined = refined + params.object_gain * (mixed - refined)
    boxes = b.copy()
    for i, prior in enumerate(priors):
        if prior is not None and params.box_gain:
            boxes[i] = b[i] + params.box_gain * (np.asarray(prior) - b[i])
    return refined, boxes


# --------------------------------------------------------------------------
# future reasoning


def future_reason(center: np.ndarray, history: Sequence[tuple[int, np.ndarray]], frame: int, dt: float,
                  horizon: int = 8, motion_gain: float = 1.0) -> np.ndarray:
    """Per-frame world displacements for the next ``horizon`` frames.

    Velocity is the mean rate between the oldest cached centre and the current
    one; without history the object is assumed static.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    c = np.asarray(center, dtype=np.float64)
    velocity = np.zeros(3)
    if history:
        f0, c0 = history[0]
        if frame > f0:
            velocity = (c - np.asarray(c0)) / ((frame - f0) * dt)
            velocity[2] = 0.0
    step = motion_gain * velocity * dt
    return np.tile(step, (horizon, 1))
