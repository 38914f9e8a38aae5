"""Frozen hash embeddings for prompt tokens and object attribute tags."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

DEFAULT_WIDTH = 32

_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=4096)
def _token_vector(token: str, width: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")
    v = np.random.default_rng(seed).standard_normal(width)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def embed_token(token: str, width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Unit vector determined only by the token string and the width."""
    return _token_vector(token, width).copy()


@dataclass(frozen=True)
class PromptEmbedding:
    tokens: tuple[str, ...]
    matrix: np.ndarray  # L x C

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def pooled(self) -> np.ndarray:
        return self.matrix.mean(axis=0)


def embed_prompt(text: str, width: int = DEFAULT_WIDTH) -> PromptEmbedding:
    if not isinstance(text, str):
        raise TypeError("prompt text must be a string")
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("prompt text has no tokens")
    return PromptEmbedding(tuple(tokens), np.stack([_token_vector(t, width) for t in tokens]))


def tag_feature(tags: Iterable[str], width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Unit-normalized sum of the tags' token vectors (zero vector for no tags)."""
    v = np.zeros(width)
    for tag in sorted(set(tags)):
        v += _token_vector(tag, width)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v
