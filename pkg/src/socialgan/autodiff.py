"""Dense rank-<=2 float64 tensors with tape-based reverse-mode differentiation.

Only the operations the trajectory-GAN graph needs are implemented. Forward
math runs on plain numpy arrays; while a Tape is active every op appends a
record (output, inputs, backward closure), and ``Tape.backward`` replays the
records in reverse execution order, accumulating gradients into each input's
``grad`` slot. Execution order is a valid topological order, so every node is
visited after all of its consumers.

Gradient arrays are never mutated in place: accumulation rebinds
``t.grad = t.grad + g``, which keeps views returned by backward closures safe
to share.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array of rank <= 2 plus a gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor({self.data!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops for one reverse-mode sweep.

    Used as a context manager; ops executed inside the ``with`` block are
    recorded. Nested tapes record onto the innermost tape only.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into every recorded tensor's grad."""
        if loss.data.ndim != 0:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        _accumulate(loss, np.asarray(1.0))
        for out, inputs, backward in reversed(self._records):
            if out.grad is None:
                continue  # branch never reached the loss
            for inp, g in zip(inputs, backward(out.grad)):
                if g is not None:
                    _accumulate(inp, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; dA = dC @ B^T, dB = A^T @ dC."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or (ad.ndim == 1 and bd.ndim == 1):
        raise DimensionError(f"matmul needs a matrix operand, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 1 else bd.shape[0]):
        raise DimensionError(f"matmul inner dims differ: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    def backward(g):
        if ad.ndim == 1:  # (k,) @ (k,m) -> (m,)
            return g @ bd.T, np.outer(ad, g)
        if bd.ndim == 1:  # (n,k) @ (k,) -> (n,)
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    _record(out, (a, b), backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)
    _record(out, (a,), lambda g: (g.T,))
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as e:
        raise DimensionError(f"add: incompatible shapes {a.shape} + {b.shape}") from e
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError as e:
        raise DimensionError(f"sub: incompatible shapes {a.shape} - {b.shape}") from e
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as e:
        raise DimensionError(f"mul: incompatible shapes {a.shape} * {b.shape}") from e
    _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )
    return out


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient at exactly 0 is defined as 0."""
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0
    _record(out, (x,), lambda g: (g * mask,))
    return out


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # Stable in both tails: never exponentiates a large positive number.
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_values(x.data)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * 0.5 / y,))
    return out


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the feature (last) axis; backward splits at the seam."""
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim:
        raise DimensionError(f"concat rank mismatch: {ad.shape} vs {bd.shape}")
    if ad.ndim == 1:
        seam = ad.shape[0]
        out = Tensor(np.concatenate([ad, bd]))
        _record(out, (a, b), lambda g: (g[:seam], g[seam:]))
        return out
    if ad.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"concat row mismatch: {ad.shape} vs {bd.shape}")
        seam = ad.shape[1]
        out = Tensor(np.hstack([ad, bd]))
        _record(out, (a, b), lambda g: (g[:, :seam], g[:, seam:]))
        return out
    raise DimensionError("concat needs rank-1 or rank-2 operands")


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one row each."""
    if len(rows) == 0:
        raise DimensionError("stack_rows of an empty sequence")
    d = rows[0].data.shape
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != d:
            raise DimensionError(f"stack_rows needs equal-length vectors, got {r.shape} vs {d}")
    out = Tensor(np.stack([r.data for r in rows]))
    _record(out, tuple(rows), lambda g: tuple(g[i] for i in range(len(rows))))
    return out


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows needs a matrix, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise IndexError(f"row index out of range for shape {x.shape}")
    out = Tensor(x.data[idx])

    def backward(g):
        z = np.zeros_like(x.data)
        np.add.at(z, idx, g)
        return (z,)

    _record(out, (x,), backward)
    return out


def row(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"row needs a matrix, got shape {x.shape}")
    if not 0 <= i < x.data.shape[0]:
        raise IndexError(f"row {i} out of range for shape {x.shape}")
    out = Tensor(x.data[i])

    def backward(g):
        z = np.zeros_like(x.data)
        z[i] = g
        return (z,)

    _record(out, (x,), backward)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"slice_cols needs a matrix, got shape {x.shape}")
    out = Tensor(x.data[:, start:stop])

    def backward(g):
        z = np.zeros_like(x.data)
        z[:, start:stop] = g
        return (z,)

    _record(out, (x,), backward)
    return out


def max_rows(x: Tensor) -> Tensor:
    """Columnwise max over rows; each column's gradient goes to one argmax row
    (ties broken toward the lowest row index)."""
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise DimensionError(f"max_rows needs a non-empty matrix, got shape {x.shape}")
    cols = np.arange(x.data.shape[1])
    idx = np.argmax(x.data, axis=0)  # argmax returns the first (lowest) index on ties
    out = Tensor(x.data[idx, cols])

    def backward(g):
        z = np.zeros_like(x.data)
        z[idx, cols] = g
        return (z,)

    _record(out, (x,), backward)
    return out


def max_over_set(rows: Sequence[Tensor]) -> Tensor:
    """Elementwise maximum over a non-empty set of equal-length vectors."""
    return max_rows(stack_rows(rows))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - numpy-style name
    out = Tensor(np.sum(x.data, axis=axis))

    def backward(g):
        if axis is None:
            return (np.full(x.data.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy(),)

    _record(out, (x,), backward)
    return out


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.mean(x.data))
    _record(out, (x,), lambda g: (np.full(x.data.shape, g / n),))
    return out


def bce_with_logits(logits: Tensor, label: int) -> Tensor:
    """Elementwise binary cross-entropy against a constant 0/1 label.

    Uses the log-sum-exp form max(l,0) - l*y + log(1 + exp(-|l|)), which is
    finite for any logit; the gradient is sigmoid(l) - y.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    ld = logits.data
    out = Tensor(np.maximum(ld, 0.0) - ld * label + np.log1p(np.exp(-np.abs(ld))))
    _record(out, (logits,), lambda g: (g * (_sigmoid_values(ld) - label),))
    return out


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------


class Param:
    """Named leaf tensor with a persistent, always-allocated gradient buffer."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def zero_grads(params: Sequence[Param]) -> None:
    for p in params:
        p.value.grad = np.zeros_like(p.value.data)


class Adam:
    """Adam with bias correction over a fixed parameter list.

    ``step`` reads the accumulated grads and leaves them untouched; callers
    zero them between phases.
    """

    def __init__(self, params: Sequence[Param], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            # rebind rather than mutate: closures on old tapes keep old values
            p.value.data = p.value.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Param],
                      eps: float = 1e-5, max_coords_per_param: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Compare the tape gradient of ``f`` against central differences.

    ``f`` must be a deterministic scalar-valued function of ``params`` taking
    no arguments. Returns the max relative error over all checked coordinates
    with denominator max(|analytic|, |numeric|, 1e-8). When
    ``max_coords_per_param`` is set, that many coordinates per parameter are
    sampled with ``rng`` instead of sweeping all of them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grads(params)
    with Tape() as tape:
        loss = f()
        if not np.isfinite(loss.data):
            raise ValueError("objective is not finite at the evaluation point")
        tape.backward(loss)
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.value.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        ana_flat = analytic[id(p)].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError("objective is not finite during perturbation")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(numeric), abs(ana_flat[i]), 1e-8)
            worst = max(worst, abs(numeric - ana_flat[i]) / denom)
    return worst
