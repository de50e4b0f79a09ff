"""Batch-attention clustering head.

Each of the two paths maps the batch through LayerNorm, one or more
Linear+ReLU+Dropout hidden layers, and a final Linear to produce Q and K.
Scaled dot-product attention over the batch then yields clustered features
as convex combinations of the raw input rows (no value projection), plus a
linear auxiliary head on top. Forward and reverse passes are written out
by hand in numpy; gradients are exact for the realized dropout mask.

Parameter vectors are stored flat in float32 (the checkpoint dtype); all
arithmetic upcasts to float64. Flat layout, in order: for the q path then
the k path: ln_gain(d), ln_bias(d), then per hidden layer W(d*d row-major,
input index major) and b(d), then the output W and b; finally the aux head
W and b.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, NumericsError

LN_EPS = 1e-5

CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIfQ")


def _layout(d: int, depth: int) -> list[tuple[str, tuple[int, ...]]]:
    specs: list[tuple[str, tuple[int, ...]]] = []
    for path in ("q", "k"):
        specs.append((f"{path}.ln_gain", (d,)))
        specs.append((f"{path}.ln_bias", (d,)))
        for layer in range(depth):
            specs.append((f"{path}.hidden{layer}.W", (d, d)))
            specs.append((f"{path}.hidden{layer}.b", (d,)))
        specs.append((f"{path}.out.W", (d, d)))
        specs.append((f"{path}.out.b", (d,)))
    specs.append(("aux.W", (d, d)))
    specs.append(("aux.b", (d,)))
    return specs


def param_count(d: int, depth: int = 1) -> int:
    """Total number of scalar parameters for the given width and depth."""
    return sum(int(np.prod(shape)) for _, shape in _layout(d, depth))


@dataclass
class ClustererParams:
    """Flat parameter vector plus the metadata to interpret it.

    Checkpoints and training snapshots keep float32 (the canonical storage
    dtype); float64 vectors are accepted as-is so callers can probe the
    exact float64 forward function, e.g. for finite-difference checks.
    """

    flat: np.ndarray
    d: int
    depth: int = 1
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        flat = np.asarray(self.flat)
        self.flat = flat if flat.dtype == np.float64 else flat.astype(np.float32)
        expected = param_count(self.d, self.depth)
        if self.flat.shape != (expected,):
            raise ContractError(
                f"expected {expected} parameters for d={self.d} depth={self.depth}, "
                f"got shape {self.flat.shape}"
            )
        if not np.isfinite(self.flat).all():
            raise NumericsError("parameters contain NaN or Inf")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def n_params(self) -> int:
        return self.flat.shape[0]

    def views(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        """Name -> array views into a flat vector (default: own parameters)."""
        vec = self.flat if flat is None else flat
        out: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in _layout(self.d, self.depth):
            size = int(np.prod(shape))
            out[name] = vec[offset : offset + size].reshape(shape)
            offset += size
        return out

    def copy(self) -> "ClustererParams":
        return ClustererParams(
            flat=self.flat.copy(), d=self.d, depth=self.depth, dropout_rate=self.dropout_rate
        )


def init_params(seed: int, d: int, dropout_rate: float, depth: int = 1) -> ClustererParams:
    """Uniform(+-sqrt(1/d)) linear weights, zero biases, identity LayerNorm."""
    if d < 1:
        raise ContractError(f"d must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    bound = float(np.sqrt(1.0 / d))
    pieces = []
    for name, shape in _layout(d, depth):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "W":
            pieces.append(rng.uniform(-bound, bound, size=shape).ravel())
        elif leaf == "ln_gain":
            pieces.append(np.ones(shape))
        else:
            pieces.append(np.zeros(shape))
    flat = np.concatenate(pieces).astype(np.float32)
    return ClustererParams(flat=flat, d=d, depth=depth, dropout_rate=dropout_rate)


@dataclass
class BatchForward:
    """Forward-pass outputs plus every intermediate the backward pass needs."""

    Q: np.ndarray
    K: np.ndarray
    logits: np.ndarray
    attn: np.ndarray
    clustered: np.ndarray
    aux_out: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)


def _checked(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values in {name}")
    return arr


def _path_forward(
    views: dict[str, np.ndarray],
    path: str,
    depth: int,
    x: np.ndarray,
    dropout_rate: float,
    training: bool,
    rng: np.random.Generator | None,
) -> dict:
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    y = _checked(f"{path}.layernorm", xhat * views[f"{path}.ln_gain"] + views[f"{path}.ln_bias"])

    hidden = []
    h = y
    for layer in range(depth):
        pre = _checked(f"{path}.hidden{layer}", h @ views[f"{path}.hidden{layer}.W"] + views[f"{path}.hidden{layer}.b"])
        relu = np.maximum(pre, 0.0)
        if training and dropout_rate > 0.0:
            assert rng is not None
            keep = rng.random(relu.shape) >= dropout_rate
            mask = keep / (1.0 - dropout_rate)
            dropped = relu * mask
        else:
            mask = None
            dropped = relu
        hidden.append({"input": h, "pre": pre, "mask": mask, "out": dropped})
        h = dropped
    out = _checked(f"{path}.out", h @ views[f"{path}.out.W"] + views[f"{path}.out.b"])
    return {"x": x, "inv_std": inv_std, "xhat": xhat, "y": y, "hidden": hidden, "out": out}


def forward(
    params: ClustererParams, X: np.ndarray, training: bool = False, rng_seed: int = 0
) -> BatchForward:
    """Run the batch through both paths, attention, and the aux head.

    Dropout fires only when ``training`` is true and the rate is positive,
    drawing masks from ``rng_seed`` (q path first, then k path).
    """
    X64 = np.asarray(X, dtype=np.float64)
    if X64.ndim != 2 or X64.shape[1] != params.d:
        raise ContractError(f"batch shape {X64.shape} incompatible with d={params.d}")
    if X64.shape[0] < 2:
        raise ContractError("attention needs a batch of at least 2 rows")
    if not np.isfinite(X64).all():
        raise ContractError("batch contains NaN or Inf")

    views = params.views(params.flat.astype(np.float64))
    rng = np.random.default_rng(rng_seed) if training and params.dropout_rate > 0 else None
    q_cache = _path_forward(views, "q", params.depth, X64, params.dropout_rate, training, rng)
    k_cache = _path_forward(views, "k", params.depth, X64, params.dropout_rate, training, rng)
    Q, K = q_cache["out"], k_cache["out"]

    scale = 1.0 / np.sqrt(params.d)
    logits = _checked("logits", (Q @ K.T) * scale)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    attn = exp / exp.sum(axis=1, keepdims=True)
    clustered = _checked("clustered_features", attn @ X64)
    aux_out = _checked("aux_head", clustered @ views["aux.W"] + views["aux.b"])

    cache = {"X": X64, "q": q_cache, "k": k_cache, "views": views, "scale": scale}
    return BatchForward(
        Q=Q, K=K, logits=logits, attn=attn, clustered=clustered, aux_out=aux_out, cache=cache
    )


def _path_backward(
    views: dict[str, np.ndarray],
    path: str,
    depth: int,
    cache: dict,
    grad_out: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    top_in = cache["hidden"][-1]["out"] if depth else cache["y"]
    grads[f"{path}.out.W"] += top_in.T @ grad_out
    grads[f"{path}.out.b"] += grad_out.sum(axis=0)
    g = grad_out @ views[f"{path}.out.W"].T

    for layer in range(depth - 1, -1, -1):
        entry = cache["hidden"][layer]
        if entry["mask"] is not None:
            g = g * entry["mask"]
        g = g * (entry["pre"] > 0.0)
        grads[f"{path}.hidden{layer}.W"] += entry["input"].T @ g
        grads[f"{path}.hidden{layer}.b"] += g.sum(axis=0)
        g = g @ views[f"{path}.hidden{layer}.W"].T

    xhat, inv_std = cache["xhat"], cache["inv_std"]
    grads[f"{path}.ln_gain"] += (g * xhat).sum(axis=0)
    grads[f"{path}.ln_bias"] += g.sum(axis=0)
    g_xhat = g * views[f"{path}.ln_gain"]
    mean_g = g_xhat.mean(axis=1, keepdims=True)
    mean_gx = (g_xhat * xhat).mean(axis=1, keepdims=True)
    return inv_std * (g_xhat - mean_g - xhat * mean_gx)


def backward(
    params: ClustererParams,
    fwd: BatchForward,
    grad_logits: np.ndarray | None = None,
    grad_aux_out: np.ndarray | None = None,
    grad_q: np.ndarray | None = None,
    grad_k: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact reverse pass; returns (flat parameter gradient, gradient wrt X).

    ``grad_q``/``grad_k`` accept gradients injected directly into Q and K by
    loss terms that pair this forward's Q or K with another forward (the
    augmented-batch cross terms).
    """
    cache = fwd.cache
    X = cache["X"]
    n, d = X.shape
    views = cache["views"]
    scale = cache["scale"]

    def _shaped(g: np.ndarray | None, shape: tuple[int, int], what: str) -> np.ndarray:
        if g is None:
            return np.zeros(shape)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != shape:
            raise ContractError(f"{what} has shape {g.shape}, expected {shape}")
        return g

    g_logits = _shaped(grad_logits, (n, n), "grad_logits")
    g_aux = _shaped(grad_aux_out, (n, d), "grad_aux_out")
    gQ = _shaped(grad_q, (n, d), "grad_q")
    gK = _shaped(grad_k, (n, d), "grad_k")

    grads = {name: np.zeros(shape) for name, shape in _layout(params.d, params.depth)}

    # Aux head and clustered features.
    grads["aux.W"] += fwd.clustered.T @ g_aux
    grads["aux.b"] += g_aux.sum(axis=0)
    g_clustered = g_aux @ views["aux.W"].T
    g_attn = g_clustered @ X.T
    grad_x = fwd.attn.T @ g_clustered

    # Softmax jacobian feeds the attention users' gradient back into logits,
    # where it joins any direct upstream logit gradient.
    attn = fwd.attn
    g_logits = g_logits + attn * (g_attn - (g_attn * attn).sum(axis=1, keepdims=True))
    gQ = gQ + (g_logits @ fwd.K) * scale
    gK = gK + (g_logits.T @ fwd.Q) * scale

    grad_x += _path_backward(views, "q", params.depth, cache["q"], gQ, grads)
    grad_x += _path_backward(views, "k", params.depth, cache["k"], gK, grads)

    flat_grad = np.concatenate([grads[name].ravel() for name, _ in _layout(params.d, params.depth)])
    return flat_grad, grad_x


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(params: ClustererParams, path: str | Path) -> None:
    """Write the versioned binary checkpoint (header + float32 parameters)."""
    with open(path, "wb") as fh:
        fh.write(
            _CKPT_HEADER.pack(
                CHECKPOINT_MAGIC,
                CHECKPOINT_VERSION,
                params.d,
                params.depth,
                params.dropout_rate,
                params.n_params,
            )
        )
        fh.write(np.ascontiguousarray(params.flat, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> ClustererParams:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, d, depth, dropout_rate, n = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    expected = _CKPT_HEADER.size + 4 * n
    if len(raw) != expected or n != param_count(d, depth):
        raise FormatError(f"{path}: parameter payload does not match header")
    flat = np.frombuffer(raw, dtype="<f4", offset=_CKPT_HEADER.size).copy()
    return ClustererParams(flat=flat, d=d, depth=depth, dropout_rate=float(dropout_rate))
