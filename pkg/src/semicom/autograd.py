"""Minimal dense numeric core with reverse-mode differentiation.

Everything is a 2-D float64 array. Forward primitives are methods on a
``Tape``; each call records the inputs it needs for the adjoint pass, and
``Tape.backward`` replays the records in exact reverse order to accumulate
gradients. The op set is deliberately small: affine maps, neighbor-list
graph layers (GCN / GIN), masked softmax, dropout, and the reductions
needed to assemble scalar losses.

Also provides the adaptive-moment optimizer and a little binary container
for named parameter arrays (versioned header, little-endian float64
payloads).
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

Neighbors = Sequence[Sequence[int]]

_CKPT_MAGIC = b"SCAR"
_CKPT_VERSION = 1


class Array:
    """A dense 2-D float64 value; rejects NaN/Inf on construction."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"Array must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite value in Array")
        self.data = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Array(shape={self.data.shape})"


def _as_grad(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def _accum(grads: dict, arr: Array, g: np.ndarray) -> None:
    prev = grads.get(arr)
    if prev is None:
        grads[arr] = g.copy()
    else:
        prev += g


def normalized_adjacency(adj: Neighbors) -> np.ndarray:
    """Dense symmetric-normalized adjacency with self-loops.

    Entry (u, v) is 1/sqrt((deg u + 1)(deg v + 1)) for v in N(u) or v == u.
    """
    n = len(adj)
    a = np.eye(n)
    for u, nbrs in enumerate(adj):
        for v in nbrs:
            a[u, v] = 1.0
    inv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv[:, None] * inv[None, :]


def adjacency_with_self(adj: Neighbors) -> np.ndarray:
    """Dense 0/1 adjacency plus the identity (sum-aggregation with self)."""
    n = len(adj)
    a = np.eye(n)
    for u, nbrs in enumerate(adj):
        for v in nbrs:
            a[u, v] = 1.0
    return a


class Tape:
    """Ordered record of primitive applications over Arrays.

    A tape is confined to one forward pass / one logical thread. All ops
    return fresh Arrays and push an adjoint closure; ``backward`` walks the
    records in reverse.
    """

    def __init__(self):
        self._records: list[tuple[Array, Callable[[np.ndarray, dict], None]]] = []

    def __len__(self) -> int:
        return len(self._records)

    def _emit(self, value: np.ndarray, adjoint) -> Array:
        out = Array(value)
        self._records.append((out, adjoint))
        return out

    # -- elementwise / affine ------------------------------------------------

    def add(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

        def adjoint(g, grads):
            _accum(grads, a, g)
            _accum(grads, b, g)

        return self._emit(a.data + b.data, adjoint)

    def sub(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")

        def adjoint(g, grads):
            _accum(grads, a, g)
            _accum(grads, b, -g)

        return self._emit(a.data - b.data, adjoint)

    def mul(self, a: Array, b: Array) -> Array:
        if a.shape != b.shape:
            raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")

        def adjoint(g, grads):
            _accum(grads, a, g * b.data)
            _accum(grads, b, g * a.data)

        return self._emit(a.data * b.data, adjoint)

    def affine(self, x: Array, scale: float, shift: float = 0.0) -> Array:
        """scale * x + shift with python-float constants."""

        def adjoint(g, grads):
            _accum(grads, x, g * scale)

        return self._emit(scale * x.data + shift, adjoint)

    def relu(self, x: Array) -> Array:
        mask = x.data > 0.0

        def adjoint(g, grads):
            _accum(grads, x, g * mask)

        return self._emit(np.where(mask, x.data, 0.0), adjoint)

    def log(self, x: Array) -> Array:
        if np.any(x.data <= 0.0):
            raise FloatingPointError("log of non-positive value")

        def adjoint(g, grads):
            _accum(grads, x, g / x.data)

        return self._emit(np.log(x.data), adjoint)

    # -- matrix ops ----------------------------------------------------------

    def matmul(self, a: Array, b: Array) -> Array:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul shape mismatch {a.shape} vs {b.shape}")

        def adjoint(g, grads):
            _accum(grads, a, g @ b.data.T)
            _accum(grads, b, a.data.T @ g)

        return self._emit(a.data @ b.data, adjoint)

    def matmul_const(self, m: np.ndarray, x: Array) -> Array:
        """Left-multiply by a constant matrix (no gradient into m)."""
        if m.shape[1] != x.shape[0]:
            raise ValueError(f"matmul_const shape mismatch {m.shape} vs {x.shape}")
        mt = m.T.copy()

        def adjoint(g, grads):
            _accum(grads, x, mt @ g)

        return self._emit(m @ x.data, adjoint)

    def add_row(self, x: Array, row: Array) -> Array:
        """Broadcast-add a 1 x c row over every row of x."""
        if row.shape != (1, x.shape[1]):
            raise ValueError(f"add_row shape mismatch {x.shape} vs {row.shape}")

        def adjoint(g, grads):
            _accum(grads, x, g)
            _accum(grads, row, g.sum(axis=0, keepdims=True))

        return self._emit(x.data + row.data, adjoint)

    def transpose(self, x: Array) -> Array:
        def adjoint(g, grads):
            _accum(grads, x, g.T)

        return self._emit(x.data.T.copy(), adjoint)

    # -- reductions / reshaping ----------------------------------------------

    def sum_all(self, x: Array) -> Array:
        shape = x.shape

        def adjoint(g, grads):
            _accum(grads, x, np.full(shape, g[0, 0]))

        return self._emit(np.array([[x.data.sum()]]), adjoint)

    def sum_rows(self, x: Array, rows: Sequence[int]) -> Array:
        idx = np.asarray(rows, dtype=np.intp)
        shape = x.shape

        def adjoint(g, grads):
            gx = _as_grad(shape)
            np.add.at(gx, idx, g[0])
            _accum(grads, x, gx)

        return self._emit(x.data[idx].sum(axis=0, keepdims=True), adjoint)

    def gather_rows(self, x: Array, rows: Sequence[int]) -> Array:
        idx = np.asarray(rows, dtype=np.intp)
        shape = x.shape

        def adjoint(g, grads):
            gx = _as_grad(shape)
            np.add.at(gx, idx, g)
            _accum(grads, x, gx)

        return self._emit(x.data[idx].copy(), adjoint)

    def concat_cols(self, parts: Sequence[Array]) -> Array:
        rows = parts[0].shape[0]
        if any(p.shape[0] != rows for p in parts):
            raise ValueError("concat_cols row mismatch")
        widths = [p.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)
        parts = list(parts)

        def adjoint(g, grads):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(grads, p, g[:, lo:hi])

        return self._emit(np.concatenate([p.data for p in parts], axis=1), adjoint)

    def select(self, x: Array, i: int, j: int) -> Array:
        shape = x.shape

        def adjoint(g, grads):
            gx = _as_grad(shape)
            gx[i, j] = g[0, 0]
            _accum(grads, x, gx)

        return self._emit(np.array([[x.data[i, j]]]), adjoint)

    # -- neural-net building blocks -------------------------------------------

    def apply_linear(self, x: Array, w: Array, bias: Array | None = None) -> Array:
        out = self.matmul(x, w)
        if bias is not None:
            out = self.add_row(out, bias)
        return out

    def gcn_layer(self, h: Array, adj: Neighbors, w: Array) -> Array:
        """Symmetric-normalized propagation with self-loops, then ReLU."""
        if len(adj) != h.shape[0]:
            raise ValueError(f"gcn_layer: {len(adj)} neighbor lists for {h.shape[0]} rows")
        agg = self.matmul_const(normalized_adjacency(adj), h)
        return self.relu(self.matmul(agg, w))

    def gin_layer(self, h: Array, adj: Neighbors, mlp_w: Array) -> Array:
        """Sum aggregation (self included, epsilon fixed at 0), then ReLU."""
        if len(adj) != h.shape[0]:
            raise ValueError(f"gin_layer: {len(adj)} neighbor lists for {h.shape[0]} rows")
        agg = self.matmul_const(adjacency_with_self(adj), h)
        return self.relu(self.matmul(agg, mlp_w))

    def masked_softmax(self, logits: Array, mask: Sequence[bool]) -> Array:
        """Softmax over masked-in entries of a 1 x n row; masked-out get 0."""
        if logits.shape[0] != 1:
            raise ValueError("masked_softmax expects a 1 x n row")
        m = np.asarray(mask, dtype=bool)
        if m.shape != (logits.shape[1],):
            raise ValueError("mask length mismatch")
        if not m.any():
            raise ValueError("masked_softmax: empty mask")
        z = logits.data[0]
        shifted = z[m] - z[m].max()
        e = np.exp(shifted)
        probs = np.zeros_like(z)
        probs[m] = e / e.sum()
        p = probs.reshape(1, -1)

        def adjoint(g, grads):
            inner = (g * p).sum()
            _accum(grads, logits, p * (g - inner))

        return self._emit(p, adjoint)

    def dropout(self, x: Array, rate: float, training: bool,
                rng: np.random.Generator | int | None = None) -> Array:
        """Inverted dropout: zero with probability ``rate``, scale survivors."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not training or rate == 0.0:
            def adjoint(g, grads):
                _accum(grads, x, g)

            return self._emit(x.data.copy(), adjoint)
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

        def adjoint(g, grads):
            _accum(grads, x, g * keep)

        return self._emit(x.data * keep, adjoint)

    # -- reverse pass ----------------------------------------------------------

    def backward(self, loss: Array, params: Iterable[Array] = ()) -> dict[Array, np.ndarray]:
        """Accumulate d(loss)/d(array) for everything reachable from ``loss``.

        ``loss`` must be a recorded 1 x 1 scalar. Every entry of ``params``
        is guaranteed a key in the result; parameters the loss never touched
        get a zero gradient.
        """
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be scalar 1 x 1, got {loss.shape}")
        if not any(out is loss for out, _ in self._records):
            raise ValueError("loss was not recorded on this tape")
        grads: dict[Array, np.ndarray] = {loss: np.ones((1, 1))}
        for out, adjoint in reversed(self._records):
            g = grads.pop(out, None)
            if g is None:
                continue
            adjoint(g, grads)
        for p in params:
            grads.setdefault(p, _as_grad(p.shape))
        return grads


class Adam:
    """Bias-corrected adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params: Iterable[Array], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Mapping[Array, np.ndarray]) -> None:
        """Apply one in-place update from a gradient mapping.

        Parameters without an entry are treated as having zero gradient.
        """
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for p, m, v in zip(self.params, self._m, self._v):
            g = grads.get(p)
            if g is None:
                g = _as_grad(p.shape)
            elif g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError("non-finite parameter after update")


def glorot(rows: int, cols: int, rng: np.random.Generator) -> Array:
    """Fan-based uniform init in [-sqrt(6/(rows+cols)), +...]."""
    limit = np.sqrt(6.0 / (rows + cols))
    return Array(rng.uniform(-limit, limit, size=(rows, cols)))


def save_arrays(path, named: Mapping[str, Array | np.ndarray]) -> None:
    """Write a named-array container: versioned header then flat entries."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(named)))
        for name, value in named.items():
            data = value.data if isinstance(value, Array) else np.asarray(value, dtype=np.float64)
            if data.ndim != 2:
                raise ValueError(f"checkpoint entry {name!r} must be 2-D")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    """Read a container written by :func:`save_arrays`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a parameter container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            payload = fh.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    return out
