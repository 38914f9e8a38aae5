"""Small double-precision neural kernel with hand-derived gradients.

Covers exactly what the prompt-reasoning head needs: linear layers, a
two-layer MLP, multi-head cross attention with sinusoidal key positions,
focal and L1 losses, a finite-difference checker and AdamW.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy.special import expit

Params = dict[str, np.ndarray]

CHECKPOINT_FORMAT = "langtrack-checkpoint"
CHECKPOINT_VERSION = 1


def _as2d(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


# --------------------------------------------------------------------------
# attention


@dataclass
class AttentionParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray  # no key bias: it shifts every score of a query equally, which softmax ignores
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    n_heads: int

    NAMES = ("wq", "bq", "wk", "wv", "bv", "wo", "bo")

    def __post_init__(self) -> None:
        c = self.wq.shape[0]
        if c % self.n_heads:
            raise ValueError(f"width {c} not divisible by {self.n_heads} heads")
        for n in ("wq", "wk", "wv", "wo"):
            if getattr(self, n).shape != (c, c):
                raise ValueError(f"{n} must be {c}x{c}")

    @property
    def width(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, width: int, n_heads: int, rng: np.random.Generator) -> "AttentionParams":
        z = np.zeros(width)
        return cls(xavier(rng, width, width), z.copy(), xavier(rng, width, width),
                   xavier(rng, width, width), z.copy(), xavier(rng, width, width), z.copy(), n_heads)

    @classmethod
    def identity(cls, width: int, n_heads: int, scale: float = 1.0) -> "AttentionParams":
        eye, z = np.eye(width), np.zeros(width)
        return cls(scale * eye, z.copy(), eye.copy(), eye.copy(), z.copy(), eye.copy(), z.copy(), n_heads)

    def named(self) -> Params:
        return {n: getattr(self, n) for n in self.NAMES}

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray], n_heads: int) -> "AttentionParams":
        return cls(*(np.array(named[n], dtype=np.float64) for n in cls.NAMES), n_heads=n_heads)


@dataclass
class AttentionCache:
    q: np.ndarray
    kv: np.ndarray
    kin: np.ndarray
    qh: np.ndarray
    kh: np.ndarray
    vh: np.ndarray
    attn: np.ndarray
    merged: np.ndarray
    params: AttentionParams
    residual: bool
    batched: bool


def _split(x: np.ndarray, h: int) -> np.ndarray:
    b, n, c = x.shape
    return x.reshape(b, n, h, c // h).transpose(0, 2, 1, 3)


def _merge(x: np.ndarray) -> np.ndarray:
    b, h, n, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * d)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _attention(q: np.ndarray, kv: np.ndarray, pos: np.ndarray, mask: Optional[np.ndarray],
               params: AttentionParams, residual: bool, batched: bool) -> tuple[np.ndarray, AttentionCache]:
    h = params.n_heads
    d = params.width // h
    kin = kv + pos
    qh = _split(q @ params.wq + params.bq, h)
    kh = _split(kin @ params.wk, h)
    vh = _split(kv @ params.wv + params.bv, h)
    scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(d)
    if mask is not None:
        scores = np.where(mask[:, None, None, :], scores, -np.inf)
    attn = softmax(scores)
    merged = _merge(attn @ vh)
    out = merged @ params.wo + params.bo
    if residual:
        out = out + q
    return out, AttentionCache(q, kv, kin, qh, kh, vh, attn, merged, params, residual, batched)


def multi_head_attention(q, kv, pos, params: AttentionParams,
                         residual: bool = False) -> tuple[np.ndarray, AttentionCache]:
    """Scaled dot-product cross attention; ``pos`` is added to the keys only."""
    q = _as2d(q, "q")
    kv = _as2d(kv, "kv")
    c = params.width
    if q.shape[1] != c or kv.shape[1] != c:
        raise ValueError(f"query/key widths {q.shape[1]}, {kv.shape[1]} != model width {c}")
    if pos is None:
        pos = np.zeros_like(kv)
    pos = _as2d(pos, "pos")
    if pos.shape != kv.shape:
        raise ValueError(f"positional encoding shape {pos.shape} != key shape {kv.shape}")
    if kv.shape[0] == 0:
        raise ValueError("attention needs at least one key")
    out, cache = _attention(q[None], kv[None], pos[None], None, params, residual, batched=False)
    return out[0], cache


def batched_attention(q, kv, pos, params: AttentionParams, key_mask=None,
                      residual: bool = False) -> tuple[np.ndarray, AttentionCache]:
    """Independent attention problems stacked on a leading axis.

    ``q`` is B x N x C, ``kv`` and ``pos`` are B x L x C; ``key_mask`` (B x L,
    True = real key) lets prompts of different lengths share one padded batch.
    """
    q = np.asarray(q, dtype=np.float64)
    kv = np.asarray(kv, dtype=np.float64)
    c = params.width
    if q.ndim != 3 or kv.ndim != 3 or q.shape[0] != kv.shape[0] or q.shape[2] != c or kv.shape[2] != c:
        raise ValueError(f"batched shapes {q.shape} / {kv.shape} inconsistent with width {c}")
    pos = np.zeros_like(kv) if pos is None else np.asarray(pos, dtype=np.float64)
    if pos.shape != kv.shape:
        raise ValueError(f"positional encoding shape {pos.shape} != key shape {kv.shape}")
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)
        if mask.shape != kv.shape[:2]:
            raise ValueError(f"key mask shape {mask.shape} != {kv.shape[:2]}")
        if not mask.any(axis=1).all():
            raise ValueError("every batch entry needs at least one unmasked key")
    elif kv.shape[1] == 0:
        raise ValueError("attention needs at least one key")
    return _attention(q, kv, pos, mask, params, residual, batched=True)


def attention_backward(dout, cache: AttentionCache) -> tuple[Params, np.ndarray, np.ndarray]:
    """Gradients w.r.t. parameters, queries and key/value rows."""
    p = cache.params
    h = p.n_heads
    c = p.width
    d = c // h
    dout = np.asarray(dout, dtype=np.float64)
    if not cache.batched:
        dout = dout[None]
    flat = lambda x: x.reshape(-1, x.shape[-1])
    grads = {"wo": flat(cache.merged).T @ flat(dout), "bo": flat(dout).sum(axis=0)}
    dmerged = _split(dout @ p.wo.T, h)
    dattn = dmerged @ cache.vh.transpose(0, 1, 3, 2)
    dvh = cache.attn.transpose(0, 1, 3, 2) @ dmerged
    dscores = cache.attn * (dattn - (dattn * cache.attn).sum(axis=-1, keepdims=True)) / math.sqrt(d)
    dqh = dscores @ cache.kh
    dkh = dscores.transpose(0, 1, 3, 2) @ cache.qh
    dqp, dkp, dvp = _merge(dqh), _merge(dkh), _merge(dvh)
    grads["wq"] = flat(cache.q).T @ flat(dqp)
    grads["bq"] = flat(dqp).sum(axis=0)
    grads["wk"] = flat(cache.kin).T @ flat(dkp)
    grads["wv"] = flat(cache.kv).T @ flat(dvp)
    grads["bv"] = flat(dvp).sum(axis=0)
    dq = dqp @ p.wq.T
    if cache.residual:
        dq = dq + dout
    dkv = dkp @ p.wk.T + dvp @ p.wv.T
    if not cache.batched:
        return grads, dq[0], dkv[0]
    return grads, dq, dkv


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    if width % 2:
        raise ValueError(f"positional width must be even, got {width}")
    if length < 0:
        raise ValueError("length must be >= 0")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, width, 2, dtype=np.float64) / width)
    out = np.empty((length, width))
    out[:, 0::2] = np.sin(pos / freq)
    out[:, 1::2] = np.cos(pos / freq)
    return out


# --------------------------------------------------------------------------
# MLP


@dataclass
class MLPParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator) -> "MLPParams":
        return cls(xavier(rng, d_in, d_hidden), np.zeros(d_hidden), xavier(rng, d_hidden, d_out), np.zeros(d_out))

    @classmethod
    def zeros(cls, d_in: int, d_hidden: int, d_out: int) -> "MLPParams":
        return cls(np.zeros((d_in, d_hidden)), np.zeros(d_hidden), np.zeros((d_hidden, d_out)), np.zeros(d_out))

    def named(self) -> Params:
        return {n: getattr(self, n) for n in self.NAMES}

    @classmethod
    def from_named(cls, named: Mapping[str, np.ndarray]) -> "MLPParams":
        return cls(*(np.array(named[n], dtype=np.float64) for n in cls.NAMES))


def mlp_forward(x, p: MLPParams) -> tuple[np.ndarray, tuple]:
    """Two fully-connected layers with a ReLU in between."""
    x = _as2d(x, "x")
    pre = x @ p.w1 + p.b1
    hid = np.maximum(pre, 0.0)
    return hid @ p.w2 + p.b2, (x, pre, hid, p)


def mlp_backward(dout, cache) -> tuple[Params, np.ndarray]:
    x, pre, hid, p = cache
    grads = {"w2": hid.T @ dout, "b2": dout.sum(axis=0)}
    dpre = (dout @ p.w2.T) * (pre > 0)
    grads["w1"] = x.T @ dpre
    grads["b1"] = dpre.sum(axis=0)
    return grads, dpre @ p.w1.T


# --------------------------------------------------------------------------
# losses


def focal_loss_logits(logits, targets, alpha: float = 0.25, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Mean binary focal loss and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"logit shape {z.shape} != target shape {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("targets must be binary")
    n = z.size
    if n == 0:
        return 0.0, np.zeros_like(z)
    s = 2.0 * y - 1.0
    log_pt = -np.logaddexp(0.0, -s * z)
    pt = expit(s * z)
    qt = expit(-s * z)  # 1 - pt without cancellation
    at = np.where(y == 1, alpha, 1.0 - alpha)
    mod = qt ** gamma
    loss = float(np.sum(-at * mod * log_pt) / n)
    grad = s * at * mod * (gamma * pt * log_pt - qt) / n
    return loss, grad


def focal_loss(probs, targets, alpha: float = 0.25, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Focal loss from probabilities in (0, 1); the gradient is w.r.t. logits."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return focal_loss_logits(np.log(p) - np.log1p(-p), targets, alpha, gamma)


def l1_loss(pred, target) -> tuple[float, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0, np.zeros_like(a)
    diff = a - b
    return float(np.abs(diff).mean()), np.sign(diff) / a.size


# --------------------------------------------------------------------------
# gradient verification


def finite_diff_check(f: Callable, params: Union[np.ndarray, Mapping[str, np.ndarray]],
                      grads: Union[np.ndarray, Mapping[str, np.ndarray]], eps: float = 1e-5) -> float:
    """Max relative error between ``grads`` and central differences of ``f``.

    ``f`` is called with ``params`` (perturbed in place, then restored) and
    must return a scalar.
    """
    if isinstance(params, np.ndarray):
        named, gnamed = {"x": params}, {"x": np.asarray(grads)}
        call = lambda: f(params)
    else:
        named, gnamed = dict(params), {k: np.asarray(v) for k, v in grads.items()}
        call = lambda: f(params)
    worst = 0.0
    for name, arr in named.items():
        g = gnamed[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {arr.shape}")
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(call())
            flat[i] = orig - eps
            fm = float(call())
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - num) / max(1e-8, abs(gflat[i]) + abs(num))
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamWState:
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def cosine_multiplier(step: int, total: int, floor: float = 0.0) -> float:
    """Cosine-annealing factor going from 1 at step 0 to ``floor`` at ``total``."""
    if total <= 0:
        return 1.0
    frac = min(max(step / total, 0.0), 1.0)
    return floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


def optimizer_step(params: Params, grads: Params, state: AdamWState, lr: float = 2e-4,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                   weight_decay: float = 0.01, lr_scale: float = 1.0) -> tuple[Params, AdamWState]:
    """One AdamW update with decoupled weight decay; inputs are not mutated."""
    b1, b2 = betas
    t = state.step + 1
    lr_t = lr * lr_scale
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p[name] = p * (1.0 - lr_t * weight_decay) - lr_t * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamWState(t, new_m, new_v)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(np.shape(arr)), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in sorted(tensors.items())
        },
    }
    Path(path).write_text(json.dumps(doc))


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: Union[str, Path]) -> tuple[Params, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    tensors = {}
    for name, t in doc.get("tensors", {}).items():
        try:
            arr = np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"bad tensor {name!r}: {exc}") from exc
        tensors[name] = arr
    return tensors, doc.get("meta", {})
