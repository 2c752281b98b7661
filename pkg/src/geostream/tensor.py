"""Dense float64 tensors with reverse-mode gradient accumulation.

Values live in contiguous row-major numpy arrays. Every operation checks its
output for NaN/Inf and raises instead of letting garbage propagate. While
tracing is enabled (the default) each op records a backward rule; wrapping
code in ``no_grad()`` skips graph construction entirely, which is the fast
path for inference. The trace flag is thread-local: a traced graph belongs to
one thread, while untraced evaluation over shared parameters is safe from
many threads at once.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


_state = threading.local()


def _tracing() -> bool:
    return getattr(_state, "trace", True)


def is_tracing() -> bool:
    """True when ops on this thread record backward rules."""
    return _tracing()


class no_grad:
    """Context manager that disables backward-rule recording on this thread."""

    def __enter__(self):
        self._saved = _tracing()
        _state.trace = False
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.trace = self._saved
        return False


def _finite(data: np.ndarray, op: str) -> None:
    # fast screen: a non-finite element always makes the sum non-finite; a
    # non-finite sum over finite elements (overflow) is disambiguated exactly
    if not math.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class Tensor:
    """A dense float64 array plus an optional gradient slot.

    ``grad`` is lazily allocated during backward for intermediate nodes and
    persists (accumulating across backward calls) for tensors owned by a
    :class:`Param`.
    """

    __slots__ = ("data", "grad", "_prev", "_backward", "_keep_grad")

    def __init__(self, data, prev: tuple = ()):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self._prev = prev
        self._backward = None
        self._keep_grad = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self.data!r})"

    # -- graph plumbing -----------------------------------------------------

    def _topo(self) -> list:
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        Requires a scalar (0-d) tensor. Param grads accumulate additively
        across repeated calls; intermediate grads are reset per call.
        """
        if self.data.shape != ():
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        order = self._topo()
        for node in order:
            if not node._keep_grad:
                node.grad = None
        if self._keep_grad:
            self.grad += 1.0
        else:
            self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- elementwise --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = _raw(self.data + float(other), "add", (self,))
            if out._prev:
                def _bw():
                    _accum(self, out.grad)
                out._backward = _bw
            return out
        _binary_shapes(self, other, "add")
        out = _raw(self.data + other.data, "add", (self, other))
        if out._prev:
            def _bw():
                _accum_maybe_scalar(self, out.grad)
                _accum_maybe_scalar(other, out.grad)
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-float(other))
        _binary_shapes(self, other, "sub")
        out = _raw(self.data - other.data, "sub", (self, other))
        if out._prev:
            def _bw():
                _accum_maybe_scalar(self, out.grad)
                _accum_maybe_scalar(other, -out.grad)
            out._backward = _bw
        return out

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            c = float(other)
            out = _raw(self.data * c, "mul", (self,))
            if out._prev:
                def _bw():
                    _accum(self, out.grad * c)
                out._backward = _bw
            return out
        _binary_shapes(self, other, "mul")
        out = _raw(self.data * other.data, "mul", (self, other))
        if out._prev:
            def _bw():
                _accum_maybe_scalar(self, out.grad * other.data)
                _accum_maybe_scalar(other, out.grad * self.data)
            out._backward = _bw
        return out

    __rmul__ = __mul__

    # -- linear algebra -----------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self.data, other.data
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != (b.shape[0] if b.ndim >= 1 else None):
            raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
        out = _raw(a @ b, "matmul", (self, other))
        if out._prev:
            def _bw():
                g = out.grad
                if a.ndim == 2 and b.ndim == 2:
                    _accum(self, g @ b.T)
                    _accum(other, a.T @ g)
                elif a.ndim == 2 and b.ndim == 1:
                    _accum(self, np.outer(g, b))
                    _accum(other, a.T @ g)
                elif a.ndim == 1 and b.ndim == 2:
                    _accum(self, b @ g)
                    _accum(other, np.outer(a, g))
                else:
                    _accum(self, g * b)
                    _accum(other, g * a)
            out._backward = _bw
        return out

    __matmul__ = matmul

    # -- nonlinearities -----------------------------------------------------

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = _raw(y, "tanh", (self,))
        if out._prev:
            def _bw():
                _accum(self, (1.0 - y * y) * out.grad)
            out._backward = _bw
        return out

    def sigmoid(self) -> "Tensor":
        y = expit(self.data)
        out = _raw(y, "sigmoid", (self,))
        if out._prev:
            def _bw():
                _accum(self, y * (1.0 - y) * out.grad)
            out._backward = _bw
        return out

    def log(self) -> "Tensor":
        out = _raw(np.log(self.data), "log", (self,))
        if out._prev:
            def _bw():
                _accum(self, out.grad / self.data)
            out._backward = _bw
        return out

    def clamp_min(self, floor: float) -> "Tensor":
        y = np.maximum(self.data, floor)
        out = _raw(y, "clamp_min", (self,))
        if out._prev:
            mask = self.data > floor
            def _bw():
                _accum(self, np.where(mask, out.grad, 0.0))
            out._backward = _bw
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self) -> "Tensor":
        out = _raw(self.data.sum(), "sum", (self,))
        if out._prev:
            def _bw():
                _accum(self, np.broadcast_to(out.grad, self.data.shape))
            out._backward = _bw
        return out

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.size)

    def softmax(self) -> "Tensor":
        """Stable softmax of a 1-D tensor; outputs sum to 1."""
        x = self.data
        if x.ndim != 1 or x.size == 0:
            raise ShapeError(f"softmax requires a nonempty 1-D tensor, got shape {x.shape}")
        e = np.exp(x - x.max())
        y = e / e.sum()
        out = _raw(y, "softmax", (self,))
        if out._prev:
            def _bw():
                g = out.grad
                _accum(self, y * (g - np.dot(g, y)))
            out._backward = _bw
        return out

    def max_over_time(self) -> "Tensor":
        """Per-column maximum of a T x d tensor; ties go to the smallest row."""
        r = self.data
        if r.ndim != 2 or r.shape[0] == 0:
            raise ShapeError(f"max_over_time requires a nonempty T x d tensor, got shape {r.shape}")
        idx = np.argmax(r, axis=0)  # first occurrence = smallest t
        cols = np.arange(r.shape[1])
        out = _raw(r[idx, cols], "max_over_time", (self,))
        if out._prev:
            def _bw():
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                self.grad[idx, cols] += out.grad
            out._backward = _bw
        return out

    def pick(self, i: int) -> "Tensor":
        """Scalar component i of a 1-D tensor."""
        if self.data.ndim != 1:
            raise ShapeError(f"pick requires a 1-D tensor, got shape {self.shape}")
        if not 0 <= i < self.data.size:
            raise ShapeError(f"pick index {i} out of range for length {self.data.size}")
        out = _raw(self.data[i], "pick", (self,))
        if out._prev:
            def _bw():
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                self.grad[i] += out.grad
            out._backward = _bw
        return out


def _raw(data: np.ndarray, op: str, parents: tuple) -> Tensor:
    # ops hand in fresh C-contiguous float64 arrays, so slots are set directly
    if data.ndim == 0 and not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=np.float64)
    _finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._prev = parents if _tracing() else ()
    out._backward = None
    out._keep_grad = False
    return out


def _binary_shapes(a: Tensor, b, op: str) -> None:
    if not isinstance(b, Tensor):
        raise TypeError(f"{op} expects a Tensor or scalar, got {type(b).__name__}")
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _accum_maybe_scalar(t: Tensor, g: np.ndarray) -> None:
    # scalar operand broadcast against a non-scalar result
    if t.data.shape == () and g.shape != ():
        _accum(t, g.sum())
    else:
        _accum(t, g)


# -- structural ops ----------------------------------------------------------


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors end to end."""
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat requires 1-D tensors, got shape {p.shape}")
    out = _raw(np.concatenate([p.data for p in parts]), "concat", tuple(parts))
    if out._prev:
        offsets = np.cumsum([0] + [p.data.size for p in parts])
        def _bw():
            for p, lo, hi in zip(parts, offsets, offsets[1:]):
                _accum(p, out.grad[lo:hi])
        out._backward = _bw
    return out


def stack_rows(rows: list[Tensor]) -> Tensor:
    """Stack equal-length 1-D tensors into a T x d matrix."""
    if not rows:
        raise ShapeError("stack_rows requires at least one row")
    d = rows[0].data.size
    for r in rows:
        if r.data.ndim != 1 or r.data.size != d:
            raise ShapeError(f"stack_rows rows must share length {d}, got shape {r.shape}")
    out = _raw(np.stack([r.data for r in rows]), "stack_rows", tuple(rows))
    if out._prev:
        def _bw():
            for i, r in enumerate(rows):
                _accum(r, out.grad[i])
        out._backward = _bw
    return out


def hstack_cols(mats: list[Tensor]) -> Tensor:
    """Concatenate T x d_i matrices along columns."""
    t = mats[0].data.shape[0]
    for m in mats:
        if m.data.ndim != 2 or m.data.shape[0] != t:
            raise ShapeError(f"hstack_cols matrices must share {t} rows, got shape {m.shape}")
    out = _raw(np.concatenate([m.data for m in mats], axis=1), "hstack_cols", tuple(mats))
    if out._prev:
        offsets = np.cumsum([0] + [m.data.shape[1] for m in mats])
        def _bw():
            for m, lo, hi in zip(mats, offsets, offsets[1:]):
                _accum(m, out.grad[:, lo:hi])
        out._backward = _bw
    return out


def add_rowvec(mat: Tensor, vec: Tensor) -> Tensor:
    """Add a length-d vector to every row of a T x d matrix."""
    if mat.data.ndim != 2 or vec.data.ndim != 1 or mat.data.shape[1] != vec.data.size:
        raise ShapeError(f"add_rowvec shape mismatch: {mat.shape} + {vec.shape}")
    out = _raw(mat.data + vec.data, "add_rowvec", (mat, vec))
    if out._prev:
        def _bw():
            _accum(mat, out.grad)
            _accum(vec, out.grad.sum(axis=0))
        out._backward = _bw
    return out


def gather_rows(table: Tensor, ids: list[int]) -> Tensor:
    """Select rows of an embedding table; backward scatters into the table."""
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows requires a 2-D table, got shape {table.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    out = _raw(table.data[idx], "gather_rows", (table,))
    if out._prev:
        def _bw():
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, out.grad)
        out._backward = _bw
    return out


def _lstm_cell(x_row: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
               w_h: np.ndarray, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared LSTM cell numerics: (gate activations, [h; c], tanh(c)).

    Both the traced step and the untraced sequence loop call this, so the two
    paths are bit-identical by construction.
    """
    z = h_prev @ w_h
    z += x_row
    act = np.empty(4 * h)
    expit(z[: 3 * h], out=act[: 3 * h])
    np.tanh(z[3 * h :], out=act[3 * h :])
    hc = np.empty(2 * h)
    c = hc[h:]
    np.multiply(act[h : 2 * h], c_prev, out=c)
    c += act[:h] * act[3 * h :]
    tc = np.tanh(c)
    np.multiply(act[2 * h : 3 * h], tc, out=hc[:h])
    return act, hc, tc


def lstm_sequence(x_proj: np.ndarray, w_h: np.ndarray, reverse: bool = False) -> np.ndarray:
    """All hidden states of one recurrent pass, as a plain T x H array.

    Ungraphed inference fast path; numerics match a chain of
    :func:`lstm_step` calls exactly.
    """
    seq_len = x_proj.shape[0]
    h = w_h.shape[0]
    states = np.empty((seq_len, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    order = range(seq_len - 1, -1, -1) if reverse else range(seq_len)
    for t in order:
        _, hc, _ = _lstm_cell(x_proj[t], h_prev, c_prev, w_h, h)
        h_prev = hc[:h]
        c_prev = hc[h:]
        states[t] = h_prev
    _finite(states, "lstm_sequence")
    _finite(c_prev, "lstm_sequence")
    return states


def lstm_step(x_proj: Tensor, t: int, hc_prev: Tensor | None, w_h: Tensor) -> Tensor:
    """One LSTM step returning the concatenated [h; c] state vector.

    ``x_proj`` holds the precomputed input projections (plus bias) for the
    whole sequence, one 4H row per step, gate layout [input, forget, output |
    candidate]. ``hc_prev`` is the previous step's [h; c] (None for the zero
    initial state). The fused backward implements the standard LSTM chain
    rule in one closure, which keeps per-step graph overhead to a single
    node.
    """
    h4 = x_proj.data.shape[1]
    h = h4 // 4
    if h4 != 4 * h or w_h.data.shape != (h, h4):
        raise ShapeError(f"lstm_step expects x_proj (T x 4H) and w_h (H x 4H), got {x_proj.shape}, {w_h.shape}")
    if hc_prev is None:
        h_prev = np.zeros(h)
        c_prev = np.zeros(h)
    else:
        if hc_prev.data.shape != (2 * h,):
            raise ShapeError(f"lstm_step state must have shape ({2 * h},), got {hc_prev.shape}")
        h_prev = hc_prev.data[:h]
        c_prev = hc_prev.data[h:]
    act, hc, tc = _lstm_cell(x_proj.data[t], h_prev, c_prev, w_h.data, h)
    gi = act[:h]
    gf = act[h : 2 * h]
    go = act[2 * h : 3 * h]
    gc = act[3 * h :]
    parents = (x_proj, w_h) if hc_prev is None else (x_proj, hc_prev, w_h)
    out = _raw(hc, "lstm_step", parents)
    if out._prev:
        def _bw():
            gh = out.grad[:h]
            dc = out.grad[h:] + gh * go * (1.0 - tc * tc)
            dz = np.empty(h4)
            dz[:h] = dc * gc * gi * (1.0 - gi)
            dz[h : 2 * h] = dc * c_prev * gf * (1.0 - gf)
            dz[2 * h : 3 * h] = gh * tc * go * (1.0 - go)
            dz[3 * h :] = dc * gi * (1.0 - gc * gc)
            if x_proj.grad is None:
                x_proj.grad = np.zeros_like(x_proj.data)
            x_proj.grad[t] += dz
            _accum(w_h, np.outer(h_prev, dz))
            if hc_prev is not None:
                if hc_prev.grad is None:
                    hc_prev.grad = np.zeros_like(hc_prev.data)
                hc_prev.grad[:h] += w_h.data @ dz
                hc_prev.grad[h:] += dc * gf
        out._backward = _bw
    return out


def stack_front_halves(states: list[Tensor], h: int) -> Tensor:
    """Stack the h-vector (front) halves of [h; c] states into a T x h matrix."""
    out = _raw(np.stack([s.data[:h] for s in states]), "stack_front_halves", tuple(states))
    if out._prev:
        def _bw():
            for i, s in enumerate(states):
                if s.grad is None:
                    s.grad = np.zeros_like(s.data)
                s.grad[:h] += out.grad[i]
        out._backward = _bw
    return out


class Param:
    """A learnable tensor with a persistent, zero-initialized gradient buffer."""

    __slots__ = ("value",)

    def __init__(self, data):
        self.value = Tensor(data)
        self.value._keep_grad = True
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray:
        return self.value.grad

    @property
    def shape(self) -> tuple:
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.value.grad[...] = 0.0

    def __repr__(self):
        return f"Param(shape={self.shape})"
