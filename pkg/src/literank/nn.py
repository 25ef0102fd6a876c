"""Learnable LITE scorer heads, their gradients, and an AdamW optimizer.

Separable LITE applies one shared two-layer MLP (with ReLU and layer norm after
each layer) to every row of ``S``, then another to every column of the result,
then a linear projection of the flattened matrix. Flattened LITE is a two-layer
ReLU network on ``vec(S)``. ``vec`` is row-major throughout.

Each ``*_forward`` returns ``(score, cache)``; the matching ``*_backward``
takes that cache and an upstream scalar and returns ``(grads, dS)`` where
``grads`` maps parameter names to arrays shaped like the parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO

import numpy as np

from literank.errors import CheckpointError, ContractError, ShapeError
from literank.scorers import KnrmParams, KNRM_LOG_FLOOR, knrm_features
from literank.tensor import LN_EPS, as_matrix, layer_norm, layer_norm_backward

DEFAULT_M1 = 360
DEFAULT_M2 = 2400


@dataclass
class SepLiteParams:
    """Separable LITE head for an L1 x L2 similarity matrix.

    Row MLP: ``W1`` (m2, L2), ``W2`` (L2, m2). Column MLP: ``W3`` (m1, L1),
    ``W4`` (L1, m1). ``w`` has length L1 * L2.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    w: np.ndarray
    eps: float = LN_EPS

    def __post_init__(self) -> None:
        for name in self.names():
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        m2, l2 = self.W1.shape
        m1, l1 = self.W3.shape
        expected = {
            "W1": (m2, l2), "b1": (m2,), "W2": (l2, m2), "b2": (l2,),
            "W3": (m1, l1), "b3": (m1,), "W4": (l1, m1), "b4": (l1,),
            "w": (l1 * l2,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"SepLiteParams.{name} has shape {getattr(self, name).shape}, expected {shape}")

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "w")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(L1, L2, m1, m2)"""
        return self.W3.shape[1], self.W1.shape[1], self.W3.shape[0], self.W1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.names()}

    @classmethod
    def zeros(cls, l1: int, l2: int, m1: int, m2: int, eps: float = LN_EPS) -> "SepLiteParams":
        z = np.zeros
        return cls(z((m2, l2)), z(m2), z((l2, m2)), z(l2), z((m1, l1)), z(m1), z((l1, m1)), z(l1), z(l1 * l2), eps)


@dataclass
class FlatLiteParams:
    """``score = a . relu(W vec(S) + b)`` with ``W`` of shape (m, L1*L2)."""

    W: np.ndarray
    b: np.ndarray
    a: np.ndarray
    shape: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.a = np.asarray(self.a, dtype=np.float64).ravel()
        if self.W.ndim != 2 or self.W.shape[0] < 1:
            raise ShapeError(f"FlatLiteParams.W must be (m, n) with m >= 1, got {self.W.shape}")
        m, n = self.W.shape
        if self.b.shape != (m,) or self.a.shape != (m,):
            raise ShapeError(f"FlatLiteParams b/a must have length {m}, got {self.b.shape}/{self.a.shape}")
        if self.shape == (0, 0):
            self.shape = (1, n)
        if self.shape[0] * self.shape[1] != n:
            raise ShapeError(f"similarity shape {self.shape} does not flatten to {n} inputs")

    @staticmethod
    def names() -> tuple[str, ...]:
        return ("W", "b", "a")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(L1, L2, m)"""
        return self.shape[0], self.shape[1], self.W.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "a": self.a}


def diagonal_selector(l: int) -> FlatLiteParams:
    """Flat LITE head computing ``tr(S)`` exactly for an l x l similarity matrix.

    Uses a +/- pair of hidden units per diagonal entry:
    ``relu(s_ii) - relu(-s_ii) = s_ii``.
    """
    n = l * l
    W = np.zeros((2 * l, n))
    for i in range(l):
        W[2 * i, i * l + i] = 1.0
        W[2 * i + 1, i * l + i] = -1.0
    a = np.tile([1.0, -1.0], l)
    return FlatLiteParams(W, np.zeros(2 * l), a, shape=(l, l))


# -- separable LITE ------------------------------------------------------------


@dataclass
class SepLiteCache:
    params: SepLiteParams
    s: np.ndarray
    h1: np.ndarray
    n1: np.ndarray
    h2: np.ndarray
    s1: np.ndarray  # S'
    h3: np.ndarray
    n3: np.ndarray
    h4: np.ndarray
    s2t: np.ndarray  # S'' transposed, one column of S'' per row


def _mlp_block(x, Wa, ba, Wb, bb, eps):
    """Row-wise LN(relu(Wb LN(relu(Wa x + ba)) + bb)) for every row x of ``x``."""
    h_a = x @ Wa.T + ba
    n_a = layer_norm(np.maximum(h_a, 0.0), eps)
    h_b = n_a @ Wb.T + bb
    out = layer_norm(np.maximum(h_b, 0.0), eps)
    return h_a, n_a, h_b, out


def _mlp_block_backward(d_out, x, Wa, Wb, h_a, n_a, h_b, out, eps):
    a_b = np.maximum(h_b, 0.0)
    d_hb = layer_norm_backward(d_out, out, a_b, eps) * (h_b > 0)
    dWb = d_hb.T @ n_a
    dbb = d_hb.sum(axis=0)
    d_na = d_hb @ Wb
    a_a = np.maximum(h_a, 0.0)
    d_ha = layer_norm_backward(d_na, n_a, a_a, eps) * (h_a > 0)
    dWa = d_ha.T @ x
    dba = d_ha.sum(axis=0)
    dx = d_ha @ Wa
    return dWa, dba, dWb, dbb, dx


def sep_lite_forward(s, p: SepLiteParams) -> tuple[float, SepLiteCache]:
    s = as_matrix(s, "similarity matrix")
    l1, l2, _, _ = p.dims
    if s.shape != (l1, l2):
        raise ShapeError(f"sep LITE head expects S of shape {(l1, l2)}, got {s.shape}")
    h1, n1, h2, s1 = _mlp_block(s, p.W1, p.b1, p.W2, p.b2, p.eps)
    h3, n3, h4, s2t = _mlp_block(s1.T, p.W3, p.b3, p.W4, p.b4, p.eps)
    value = float(p.w @ s2t.T.ravel())
    return value, SepLiteCache(p, s, h1, n1, h2, s1, h3, n3, h4, s2t)


def sep_lite_backward(cache: SepLiteCache, upstream: float) -> tuple[dict[str, np.ndarray], np.ndarray]:
    if not isinstance(cache, SepLiteCache):
        raise ContractError(f"expected a SepLiteCache, got {type(cache).__name__}")
    p = cache.params
    l1, l2, _, _ = p.dims
    if cache.s.shape != (l1, l2) or cache.s2t.shape != (l2, l1):
        raise ContractError("cache does not match its parameters")
    s2 = cache.s2t.T
    grads = {"w": s2.ravel() * upstream}
    d_s2t = (p.w.reshape(l1, l2) * upstream).T
    dW3, db3, dW4, db4, d_s1t = _mlp_block_backward(
        d_s2t, cache.s1.T, p.W3, p.W4, cache.h3, cache.n3, cache.h4, cache.s2t, p.eps
    )
    dW1, db1, dW2, db2, ds = _mlp_block_backward(
        d_s1t.T, cache.s, p.W1, p.W2, cache.h1, cache.n1, cache.h2, cache.s1, p.eps
    )
    grads.update(W1=dW1, b1=db1, W2=dW2, b2=db2, W3=dW3, b3=db3, W4=dW4, b4=db4)
    return {n: grads[n] for n in p.names()}, ds


# -- flattened LITE ------------------------------------------------------------


@dataclass
class FlatLiteCache:
    params: FlatLiteParams
    z: np.ndarray
    h: np.ndarray


def flat_lite_forward(s, p: FlatLiteParams) -> tuple[float, FlatLiteCache]:
    s = as_matrix(s, "similarity matrix")
    if s.size != p.W.shape[1]:
        raise ShapeError(f"flat LITE head expects {p.W.shape[1]} inputs, got S of shape {s.shape}")
    z = s.ravel()
    h = p.W @ z + p.b
    return float(p.a @ np.maximum(h, 0.0)), FlatLiteCache(p, z, h)


def flat_lite_backward(cache: FlatLiteCache, upstream: float) -> tuple[dict[str, np.ndarray], np.ndarray]:
    if not isinstance(cache, FlatLiteCache):
        raise ContractError(f"expected a FlatLiteCache, got {type(cache).__name__}")
    p = cache.params
    if cache.z.size != p.W.shape[1]:
        raise ContractError("cache does not match its parameters")
    dh = p.a * upstream * (cache.h > 0)
    grads = {
        "W": np.outer(dh, cache.z),
        "b": dh,
        "a": np.maximum(cache.h, 0.0) * upstream,
    }
    ds = (p.W.T @ dh).reshape(p.shape)
    return grads, ds


# -- KNRM (only w is learned) ----------------------------------------------------


@dataclass
class KnrmCache:
    params: KnrmParams
    s: np.ndarray
    phi: np.ndarray


def knrm_forward(s, p: KnrmParams) -> tuple[float, KnrmCache]:
    s = as_matrix(s, "similarity matrix")
    phi = knrm_features(s, p)
    return float(p.w @ phi), KnrmCache(p, s, phi)


def knrm_backward(cache: KnrmCache, upstream: float) -> tuple[dict[str, np.ndarray], np.ndarray]:
    p, s = cache.params, cache.s
    diff = s[None, :, :] - p.mus[:, None, None]
    inv_var = 1.0 / p.sigmas[:, None, None] ** 2
    kern = np.exp(-0.5 * diff**2 * inv_var)
    soft_tf = kern.sum(axis=2, keepdims=True)
    live = soft_tf > KNRM_LOG_FLOOR  # floored sums carry no gradient
    dlog = np.where(live, 1.0 / np.maximum(soft_tf, KNRM_LOG_FLOOR), 0.0)
    coeff = (p.w * upstream)[:, None, None]
    ds = (coeff * dlog * kern * (-diff * inv_var)).sum(axis=0)
    grads = {"mus": np.zeros_like(p.mus), "sigmas": np.zeros_like(p.sigmas), "w": cache.phi * upstream}
    return grads, ds


HEAD_TYPES = {"flat-lite": FlatLiteParams, "sep-lite": SepLiteParams, "knrm": KnrmParams}
FROZEN = {"knrm": ("mus", "sigmas")}


def head_forward(head, s):
    if isinstance(head, SepLiteParams):
        return sep_lite_forward(s, head)
    if isinstance(head, FlatLiteParams):
        return flat_lite_forward(s, head)
    if isinstance(head, KnrmParams):
        return knrm_forward(s, head)
    raise ContractError(f"not a trainable head: {type(head).__name__}")


def head_backward(cache, upstream: float):
    if isinstance(cache, SepLiteCache):
        return sep_lite_backward(cache, upstream)
    if isinstance(cache, FlatLiteCache):
        return flat_lite_backward(cache, upstream)
    if isinstance(cache, KnrmCache):
        return knrm_backward(cache, upstream)
    raise ContractError(f"not a head cache: {type(cache).__name__}")


def head_kind(head) -> str:
    for kind, cls in HEAD_TYPES.items():
        if isinstance(head, cls):
            return kind
    raise ContractError(f"not a trainable head: {type(head).__name__}")


# -- initialization ------------------------------------------------------------


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(kind: str, dims: tuple[int, ...], seed: int):
    """Seeded initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.

    ``dims`` is (L1, L2, m1, m2) for ``sep-lite``, (L1, L2, m) for
    ``flat-lite`` and (L1, L2) for ``knrm`` (the default 11 kernels).
    """
    rng = np.random.default_rng(seed)
    if kind == "sep-lite":
        l1, l2, m1, m2 = dims
        if min(dims) < 1:
            raise ContractError(f"sep LITE dims must be >= 1, got {dims}")
        return SepLiteParams(
            W1=_uniform(rng, (m2, l2), l2), b1=np.zeros(m2),
            W2=_uniform(rng, (l2, m2), m2), b2=np.zeros(l2),
            W3=_uniform(rng, (m1, l1), l1), b3=np.zeros(m1),
            W4=_uniform(rng, (l1, m1), m1), b4=np.zeros(l1),
            w=_uniform(rng, l1 * l2, l1 * l2),
        )
    if kind == "flat-lite":
        l1, l2, m = dims
        if min(dims) < 1:
            raise ContractError(f"flat LITE dims must be >= 1, got {dims}")
        n = l1 * l2
        return FlatLiteParams(_uniform(rng, (m, n), n), np.zeros(m), _uniform(rng, m, m), shape=(l1, l2))
    if kind == "knrm":
        k = len(KnrmParams().mus)
        return KnrmParams(w=_uniform(rng, k, k))
    raise ContractError(f"cannot initialize scorer {kind!r}")


# -- optimizer -------------------------------------------------------------------


@dataclass
class AdamW:
    """Adam with decoupled weight decay. Updates parameter arrays in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lr < 0 or self.weight_decay < 0 or self.eps < 0:
            raise ContractError("lr, weight_decay and eps must be nonnegative")

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * update


def trainable_tensors(head) -> dict[str, np.ndarray]:
    frozen = FROZEN.get(head_kind(head), ())
    return {n: t for n, t in head.tensors().items() if n not in frozen}


# -- checkpoints -------------------------------------------------------------------

MAGIC = b"LITEHEAD"
VERSION = 1
KIND_TAGS = {"flat-lite": 1, "sep-lite": 2, "knrm": 3, "projection": 4}
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


def _write_tensor(fh: BinaryIO, t: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def save_checkpoint(path, obj) -> None:
    """Write a head (or a projection matrix) in the LITEHEAD format.

    Layout, little-endian: magic, u32 version, u8 kind tag, u32 ndims,
    ndims x u32 dims, then every tensor as f64 row-major in declaration order.
    Separable heads append their layer-norm epsilon as one more f64.
    """
    if isinstance(obj, np.ndarray):
        proj = as_matrix(obj, "projection")
        kind, dims, tensors = "projection", proj.shape, [proj]
    else:
        kind = head_kind(obj)
        if kind == "sep-lite":
            dims = obj.dims
        elif kind == "flat-lite":
            dims = obj.dims
        else:
            dims = (obj.mus.size,)
        tensors = list(obj.tensors().values())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", VERSION, KIND_TAGS[kind], len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for t in tensors:
            _write_tensor(fh, t)
        if kind == "sep-lite":
            fh.write(struct.pack("<d", obj.eps))


def load_checkpoint(path, expect: str | None = None):
    """Read a LITEHEAD file; returns a head object or, for projections, an array."""
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + struct.calcsize("<IBI")
    if len(data) < fixed or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a LITEHEAD checkpoint")
    version, tag, ndims = struct.unpack_from("<IBI", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if tag not in _TAG_KINDS:
        raise CheckpointError(f"{path}: unknown kind tag {tag}")
    kind = _TAG_KINDS[tag]
    if expect is not None and kind != expect:
        raise CheckpointError(f"{path}: holds a {kind} checkpoint, expected {expect}")
    pos = fixed
    if len(data) < pos + 4 * ndims:
        raise CheckpointError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndims}I", data, pos)
    pos += 4 * ndims

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape))
        if len(data) < pos + 8 * n:
            raise CheckpointError(f"{path}: truncated tensor data")
        t = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
        return t

    if kind == "projection":
        obj = take(tuple(dims))
    elif kind == "flat-lite":
        l1, l2, m = dims
        obj = FlatLiteParams(take((m, l1 * l2)), take((m,)), take((m,)), shape=(l1, l2))
    elif kind == "knrm":
        (k,) = dims
        obj = KnrmParams(take((k,)), take((k,)), take((k,)))
    else:
        l1, l2, m1, m2 = dims
        shapes = [(m2, l2), (m2,), (l2, m2), (l2,), (m1, l1), (m1,), (l1, m1), (l1,), (l1 * l2,)]
        tensors = [take(s) for s in shapes]
        (eps,) = take((1,))
        obj = SepLiteParams(*tensors, eps=float(eps))
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return obj


def flat_lite_batch(z: np.ndarray, p: FlatLiteParams) -> tuple[np.ndarray, np.ndarray]:
    """Scores for a batch of flattened similarity matrices ``z`` (B, n); also returns pre-activations."""
    h = z @ p.W.T + p.b
    return np.maximum(h, 0.0) @ p.a, h


def flat_lite_batch_backward(z: np.ndarray, h: np.ndarray, p: FlatLiteParams, upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients of ``sum_b upstream[b] * score_b``."""
    dh = upstream[:, None] * p.a[None, :] * (h > 0)
    return {"W": dh.T @ z, "b": dh.sum(axis=0), "a": np.maximum(h, 0.0).T @ upstream}
