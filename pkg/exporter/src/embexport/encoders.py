"""Pluggable text encoders.

An encoder identifier is "<prefix>:<argument>". The registry maps the
prefix to a factory; nothing here hardcodes a particular model. The
built-in "hashed:<dim>" encoder derives one deterministic unit vector
per token from a blake2b digest and mean-pools, which gives stable,
dependency-free embeddings for tests and smoke runs. "st:<model>" is a
thin adapter over sentence-transformers when that package is installed.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError, DataError


class Encoder:
    """Minimal interface: a dimension and an encode(texts) -> (n, dim)."""

    dim: int

    def encode(self, texts: list[str]) -> np.ndarray:
        raise NotImplementedError


class HashedEncoder(Encoder):
    def __init__(self, dim: int):
        self.dim = dim
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        cached = self._token_cache.get(token)
        if cached is not None:
            return cached
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "little")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        self._token_cache[token] = vec
        return vec

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = text.split()
            if not tokens:
                raise DataError(f"text at row {i} is blank")
            out[i] = np.mean([self._token_vector(t) for t in tokens], axis=0)
        return out


def _make_hashed(argument: str) -> Encoder:
    try:
        dim = int(argument)
    except ValueError:
        raise ConfigError(f"hashed encoder needs an integer dimension, got {argument!r}") from None
    if dim <= 0:
        raise ConfigError(f"hashed encoder dimension must be positive, got {dim}")
    return HashedEncoder(dim)


class _SentenceTransformerEncoder(Encoder):
    def __init__(self, model_name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError:
            raise ConfigError(
                "encoder 'st:...' needs the sentence-transformers package installed"
            ) from None
        self._model = SentenceTransformer(model_name)
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        for i, text in enumerate(texts):
            if not text.strip():
                raise DataError(f"text at row {i} is blank")
        return np.asarray(self._model.encode(list(texts)), dtype=np.float64)


_FACTORIES = {
    "hashed": _make_hashed,
    "st": _SentenceTransformerEncoder,
}


def register_encoder(prefix: str, factory) -> None:
    _FACTORIES[prefix] = factory


def get_encoder(identifier: str) -> Encoder:
    prefix, sep, argument = identifier.partition(":")
    if not sep or prefix not in _FACTORIES:
        known = ", ".join(sorted(_FACTORIES))
        raise ConfigError(f"unknown encoder {identifier!r} (known prefixes: {known})")
    return _FACTORIES[prefix](argument)
