"""Small deterministic numerics: a 3-layer ReLU MLP with exact backprop, Adam,
seeded random streams and the binary checkpoint format.

Dense matrices are plain float64 numpy arrays. Weights are stored ``(out, in)``
so a single design is mapped as ``W @ x + b``; batches are row-major
``(n, in)`` arrays and go through ``x @ W.T + b``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TENSOR_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

CKPT_MAGIC = b"DEMO-CKPT"
CKPT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        h = self.W1.shape[0]
        if self.W2.shape != (h, h) or self.W3.shape[1] != h:
            raise ShapeError(
                f"inconsistent layer shapes {self.W1.shape}, {self.W2.shape}, {self.W3.shape}"
            )
        if self.b1.shape != (h,) or self.b2.shape != (h,) or self.b3.shape != (self.W3.shape[0],):
            raise ShapeError("bias shapes do not match weight shapes")

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W3.shape[0]

    def tensors(self):
        return [getattr(self, name) for name in TENSOR_NAMES]

    def items(self):
        return [(name, getattr(self, name)) for name in TENSOR_NAMES]

    def copy(self) -> MlpParams:
        return MlpParams(*(t.copy() for t in self.tensors()))

    def zeros_like(self) -> MlpParams:
        return MlpParams(*(np.zeros_like(t) for t in self.tensors()))


def init_mlp(
    in_dim: int, hidden_dim: int, out_dim: int, rng: RngStream, last_scale: float = 1.0
) -> MlpParams:
    """He-initialised weights, zero biases. ``last_scale=0`` zeroes the output layer."""
    g = rng.generator
    W1 = g.standard_normal((hidden_dim, in_dim)) * np.sqrt(2.0 / in_dim)
    W2 = g.standard_normal((hidden_dim, hidden_dim)) * np.sqrt(2.0 / hidden_dim)
    W3 = g.standard_normal((out_dim, hidden_dim)) * np.sqrt(1.0 / hidden_dim) * last_scale
    return MlpParams(
        W1, np.zeros(hidden_dim), W2, np.zeros(hidden_dim), W3, np.zeros(out_dim)
    )


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"expected input of width {params.in_dim}, got shape {x.shape}")
    return x, single


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    out, _ = mlp_forward_cached(params, x)
    return out


def mlp_forward_cached(params: MlpParams, x):
    """Forward pass that also returns the activations needed by ``mlp_backward``."""
    xb, single = _as_batch(params, x)
    a1 = xb @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    out = h2 @ params.W3.T + params.b3
    cache = (xb, a1, h1, a2, h2)
    return (out[0] if single else out), cache


def mlp_backward(params: MlpParams, x, grad_out, cache=None) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of ``sum(grad_out * mlp_forward(params, x))``.

    For a batch the parameter gradients are summed over rows and the input
    gradient keeps one row per sample. ReLU'(0) is taken as 0.
    """
    if cache is None:
        _, cache = mlp_forward_cached(params, x)
    xb, a1, h1, a2, h2 = cache
    single = np.ndim(x) == 1
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (xb.shape[0], params.out_dim):
        raise ShapeError(f"grad_out shape {g.shape} does not match output ({xb.shape[0]}, {params.out_dim})")

    gW3 = g.T @ h2
    gb3 = g.sum(axis=0)
    ga2 = (g @ params.W3) * (a2 > 0.0)
    gW2 = ga2.T @ h1
    gb2 = ga2.sum(axis=0)
    ga1 = (ga2 @ params.W2) * (a1 > 0.0)
    gW1 = ga1.T @ xb
    gb1 = ga1.sum(axis=0)
    gx = ga1 @ params.W1
    return MlpParams(gW1, gb1, gW2, gb2, gW3, gb3), (gx[0] if single else gx)


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **kw) -> AdamState:
        return cls(params.zeros_like(), params.zeros_like(), lr=lr, **kw)


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in tensor {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in TENSOR_NAMES:
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p = getattr(params, name)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream)``.

    Child streams extend the key path, so ``RngStream(s, 5).child(k)`` is a
    function of ``(s, 5, k)`` only and never of how many draws were made before.
    """

    seed: int
    stream: int = 0
    path: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, k: int) -> RngStream:
        return RngStream(self.seed, self.stream, (*self.path, int(k)))


def gaussian(rng: RngStream, n: int | tuple[int, ...]) -> np.ndarray:
    return rng.generator.standard_normal(n)


# -- checkpoints ------------------------------------------------------------

_HEADER = struct.Struct("<9sIIIII")


def save_checkpoint(path, params: MlpParams, meta: dict | None = None) -> None:
    """Write ``params`` as header + little-endian float64 tensors (W1, b1, ..., b3)."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [
        _HEADER.pack(
            CKPT_MAGIC, CKPT_VERSION, params.in_dim, params.hidden_dim, params.out_dim, len(meta_bytes)
        ),
        meta_bytes,
    ]
    parts += [np.ascontiguousarray(t, dtype="<f8").tobytes() for t in params.tensors()]
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    raw = Path(path).read_bytes()
    magic, version, din, hid, dout, meta_len = _HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not a DEMO-CKPT file")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = _HEADER.size
    meta = json.loads(raw[off : off + meta_len].decode())
    off += meta_len
    shapes = [(hid, din), (hid,), (hid, hid), (hid,), (dout, hid), (dout,)]
    tensors = []
    for shape in shapes:
        n = int(np.prod(shape))
        tensors.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape))
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensors")
    return MlpParams(*tensors), meta


def params_allclose(a: MlpParams, b: MlpParams, **kw) -> bool:
    return all(np.allclose(x, y, **kw) for x, y in zip(a.tensors(), b.tensors()))


__all__ = [
    "AdamState",
    "MlpParams",
    "RngStream",
    "ShapeError",
    "adam_step",
    "gaussian",
    "init_mlp",
    "load_checkpoint",
    "mlp_backward",
    "mlp_forward",
    "mlp_forward_cached",
    "save_checkpoint",
]
