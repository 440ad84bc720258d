"""Dense float64 tensors with a recorded tape and reverse-mode gradients.

Values are contiguous row-major numpy arrays. `apply` runs one primitive and
records it on a tape whenever a differentiable input is involved; `backward`
walks the records in reverse and returns d(loss)/d(leaf) for every leaf
registered on that tape. The primitive set is deliberately small: exactly
what a dense two-frame autoencoder with sharpened gating needs.

A tape is single-threaded. Distinct tapes share nothing and may live on
distinct threads.
"""

from __future__ import annotations

import numpy as np

# Floor applied to scalar-pow bases so fractional and negative exponents stay finite.
CLAMP_MIN = 1e-12

PRIMITIVE_KINDS = frozenset({
    "matmul",
    "add",
    "sub",
    "hadamard",
    "scalar-pow",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "concat",
    "slice",
    "sum",
    "mean-squared-error",
})


class ShapeMismatch(ValueError):
    """Input shapes do not conform to the requested primitive."""


def _as_array(data) -> np.ndarray:
    # order="C" keeps 0-d arrays 0-d (ascontiguousarray would promote them).
    return np.asarray(data, dtype=np.float64, order="C")


class Tensor:
    """A dense array, optionally tracked as a node on a tape."""

    __slots__ = ("data", "tape", "node", "grad")

    def __init__(self, data, tape: "Tape | None" = None, node: int | None = None):
        self.data = _as_array(data)
        self.tape = tape
        self.node = node
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a one-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def constant(data) -> Tensor:
    """Tensor that never tracks gradients."""
    return Tensor(data)


class Record:
    """One primitive application: kind, input node ids, attributes, output node id."""

    __slots__ = ("kind", "input_ids", "attrs", "output_id")

    def __init__(self, kind: str, input_ids: tuple[int, ...], attrs: dict, output_id: int):
        self.kind = kind
        self.input_ids = input_ids
        self.attrs = attrs
        self.output_id = output_id


class Tape:
    """Ordered log of primitive applications.

    Node ids are assigned in creation order, so inputs always precede the
    outputs that consume them and the record list is already topologically
    sorted for the backward sweep.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._differentiable: list[bool] = []
        self._leaves: dict[int, Tensor] = {}
        self.records: list[Record] = []

    def _register(self, value: np.ndarray, differentiable: bool) -> int:
        self._values.append(value)
        self._differentiable.append(differentiable)
        return len(self._values) - 1

    def leaf(self, data) -> Tensor:
        """Register a differentiable leaf (a parameter) and return its handle."""
        arr = _as_array(data)
        node = self._register(arr, True)
        handle = Tensor(arr, tape=self, node=node)
        self._leaves[node] = handle
        return handle

    @property
    def num_nodes(self) -> int:
        return len(self._values)

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        return tuple(self._leaves)

    def value(self, node: int) -> np.ndarray:
        return self._values[node]

    def replay_matches(self) -> bool:
        """Recompute every record from its stored inputs; True when each output is bit-identical."""
        for rec in self.records:
            inputs = [self._values[i] for i in rec.input_ids]
            fresh = _forward(rec.kind, inputs, rec.attrs)
            stored = self._values[rec.output_id]
            if fresh.shape != stored.shape or fresh.tobytes() != stored.tobytes():
                return False
        return True


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeMismatch(message)


def _check_elementwise_pair(kind: str, a: np.ndarray, b: np.ndarray, allow_row_broadcast: bool) -> None:
    if a.shape == b.shape:
        return
    if allow_row_broadcast:
        # A vector may broadcast across the rows of a matrix (bias terms in
        # batched affine layers). Nothing wider than that.
        if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
            return
        if a.ndim == 1 and b.ndim == 2 and b.shape[1] == a.shape[0]:
            return
    raise ShapeMismatch(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def _check(kind: str, arrays: list[np.ndarray], attrs: dict) -> None:
    if kind == "matmul":
        _require(len(arrays) == 2, "matmul takes exactly two inputs")
        a, b = arrays
        _require(1 <= a.ndim <= 2 and 1 <= b.ndim <= 2,
                 f"matmul supports vectors and matrices, got {a.shape} and {b.shape}")
        _require(a.shape[-1] == b.shape[0], f"matmul: shapes {a.shape} and {b.shape} do not conform")
    elif kind in ("add", "sub"):
        _require(len(arrays) == 2, f"{kind} takes exactly two inputs")
        _check_elementwise_pair(kind, arrays[0], arrays[1], allow_row_broadcast=True)
    elif kind == "hadamard":
        _require(len(arrays) == 2, "hadamard takes exactly two inputs")
        _check_elementwise_pair(kind, arrays[0], arrays[1], allow_row_broadcast=False)
    elif kind == "scalar-pow":
        _require(len(arrays) == 1, "scalar-pow takes exactly one input")
        if "exponent" not in attrs:
            raise ValueError("scalar-pow needs an 'exponent' attribute")
        float(attrs["exponent"])
    elif kind in ("relu", "tanh", "sigmoid", "sum"):
        _require(len(arrays) == 1, f"{kind} takes exactly one input")
    elif kind == "softmax":
        _require(len(arrays) == 1, "softmax takes exactly one input")
        axis = int(attrs.get("axis", -1))
        _require(-arrays[0].ndim <= axis < arrays[0].ndim,
                 f"softmax: axis {axis} out of range for shape {arrays[0].shape}")
    elif kind == "concat":
        _require(len(arrays) >= 2, "concat takes at least two inputs")
        axis = int(attrs.get("axis", 0))
        first = arrays[0]
        _require(-first.ndim <= axis < first.ndim,
                 f"concat: axis {axis} out of range for shape {first.shape}")
        axis = axis % first.ndim
        for other in arrays[1:]:
            _require(other.ndim == first.ndim,
                     f"concat: ranks differ, {first.shape} vs {other.shape}")
            for d in range(first.ndim):
                if d != axis:
                    _require(other.shape[d] == first.shape[d],
                             f"concat: shapes {first.shape} and {other.shape} disagree off axis {axis}")
    elif kind == "slice":
        _require(len(arrays) == 1, "slice takes exactly one input")
        axis = int(attrs["axis"])
        start, stop = attrs["range"]
        _require(-arrays[0].ndim <= axis < arrays[0].ndim,
                 f"slice: axis {axis} out of range for shape {arrays[0].shape}")
        extent = arrays[0].shape[axis]
        _require(0 <= start < stop <= extent,
                 f"slice: range ({start}, {stop}) invalid for extent {extent}")
    elif kind == "mean-squared-error":
        _require(len(arrays) == 2, "mean-squared-error takes exactly two inputs")
        _check_elementwise_pair(kind, arrays[0], arrays[1], allow_row_broadcast=False)
    else:
        raise ValueError(f"unknown primitive kind: {kind!r}")


def _forward(kind: str, arrays: list[np.ndarray], attrs: dict) -> np.ndarray:
    if kind == "matmul":
        return arrays[0] @ arrays[1]
    if kind == "add":
        return arrays[0] + arrays[1]
    if kind == "sub":
        return arrays[0] - arrays[1]
    if kind == "hadamard":
        return arrays[0] * arrays[1]
    if kind == "scalar-pow":
        return np.power(np.maximum(arrays[0], CLAMP_MIN), float(attrs["exponent"]))
    if kind == "relu":
        return np.maximum(arrays[0], 0.0)
    if kind == "tanh":
        return np.tanh(arrays[0])
    if kind == "sigmoid":
        # tanh form avoids exp overflow for large negative inputs
        return 0.5 * (np.tanh(0.5 * arrays[0]) + 1.0)
    if kind == "softmax":
        x = arrays[0]
        axis = int(attrs.get("axis", -1))
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=axis, keepdims=True)
    if kind == "concat":
        return np.concatenate(arrays, axis=int(attrs.get("axis", 0)))
    if kind == "slice":
        axis = int(attrs["axis"])
        start, stop = attrs["range"]
        index = [slice(None)] * arrays[0].ndim
        index[axis] = slice(int(start), int(stop))
        return arrays[0][tuple(index)].copy()
    if kind == "sum":
        return np.asarray(np.sum(arrays[0]))
    if kind == "mean-squared-error":
        diff = arrays[0] - arrays[1]
        return np.asarray(np.mean(diff * diff))
    raise ValueError(f"unknown primitive kind: {kind!r}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Inverse of the row broadcast allowed for add/sub.
    if grad.shape == shape:
        return grad
    return np.sum(grad, axis=0)


def _backward(kind: str, grad: np.ndarray, inputs: list[np.ndarray], attrs: dict,
              output: np.ndarray) -> list[np.ndarray]:
    if kind == "matmul":
        a, b = inputs
        if a.ndim == 2 and b.ndim == 2:
            return [grad @ b.T, a.T @ grad]
        if a.ndim == 2 and b.ndim == 1:
            return [np.outer(grad, b), a.T @ grad]
        if a.ndim == 1 and b.ndim == 2:
            return [b @ grad, np.outer(a, grad)]
        return [grad * b, grad * a]
    if kind == "add":
        a, b = inputs
        return [_reduce_to(grad, a.shape), _reduce_to(grad, b.shape)]
    if kind == "sub":
        a, b = inputs
        return [_reduce_to(grad, a.shape), -_reduce_to(grad, b.shape)]
    if kind == "hadamard":
        a, b = inputs
        return [grad * b, grad * a]
    if kind == "scalar-pow":
        (a,) = inputs
        exponent = float(attrs["exponent"])
        clamped = np.maximum(a, CLAMP_MIN)
        local = exponent * np.power(clamped, exponent - 1.0)
        # Below the clamp the output is constant in the input.
        return [grad * local * (a >= CLAMP_MIN)]
    if kind == "relu":
        (a,) = inputs
        return [grad * (a > 0.0)]
    if kind == "tanh":
        return [grad * (1.0 - output * output)]
    if kind == "sigmoid":
        return [grad * output * (1.0 - output)]
    if kind == "softmax":
        axis = int(attrs.get("axis", -1))
        inner = np.sum(grad * output, axis=axis, keepdims=True)
        return [(grad - inner) * output]
    if kind == "concat":
        axis = int(attrs.get("axis", 0)) % inputs[0].ndim
        grads = []
        offset = 0
        for arr in inputs:
            extent = arr.shape[axis]
            index = [slice(None)] * arr.ndim
            index[axis] = slice(offset, offset + extent)
            grads.append(grad[tuple(index)].copy())
            offset += extent
        return grads
    if kind == "slice":
        (a,) = inputs
        axis = int(attrs["axis"])
        start, stop = attrs["range"]
        full = np.zeros_like(a)
        index = [slice(None)] * a.ndim
        index[axis] = slice(int(start), int(stop))
        full[tuple(index)] = grad
        return [full]
    if kind == "sum":
        (a,) = inputs
        return [np.full(a.shape, float(grad))]
    if kind == "mean-squared-error":
        a, b = inputs
        scaled = (a - b) * (2.0 / a.size * float(grad))
        return [scaled, -scaled]
    raise ValueError(f"unknown primitive kind: {kind!r}")


def apply(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Run one primitive; records on the inputs' tape when gradients are needed.

    Inputs may be Tensors or anything numpy can coerce; plain arrays become
    constants. All tracked inputs must share one tape.
    """
    if kind not in PRIMITIVE_KINDS:
        raise ValueError(f"unknown primitive kind: {kind!r}")
    attrs = dict(attrs) if attrs else {}
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    arrays = [t.data for t in tensors]
    _check(kind, arrays, attrs)
    out = _forward(kind, arrays, attrs)

    tape: Tape | None = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("inputs recorded on different tapes")
    if tape is None:
        return Tensor(out)
    tracked = any(
        t.tape is tape and t.node is not None and tape._differentiable[t.node]
        for t in tensors
    )
    if not tracked:
        return Tensor(out)
    ids = tuple(
        t.node if t.tape is tape and t.node is not None else tape._register(t.data, False)
        for t in tensors
    )
    out_id = tape._register(out, True)
    tape.records.append(Record(kind, ids, attrs, out_id))
    return Tensor(out, tape=tape, node=out_id)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss with respect to every leaf on its tape.

    Leaves that the loss does not depend on get zero gradients. A loss with
    no tape (all-constant computation) yields an empty map. Also fills the
    .grad field of each leaf handle.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None or loss.node is None:
        return {}
    adjoints: dict[int, np.ndarray] = {loss.node: np.ones((), dtype=np.float64)}
    for rec in reversed(tape.records):
        out_grad = adjoints.get(rec.output_id)
        if out_grad is None:
            continue
        inputs = [tape._values[i] for i in rec.input_ids]
        in_grads = _backward(rec.kind, out_grad, inputs, rec.attrs, tape._values[rec.output_id])
        for nid, g in zip(rec.input_ids, in_grads):
            if not tape._differentiable[nid]:
                continue
            held = adjoints.get(nid)
            adjoints[nid] = g if held is None else held + g
    result: dict[int, np.ndarray] = {}
    for nid, handle in tape._leaves.items():
        g = adjoints.get(nid)
        if g is None:
            g = np.zeros_like(tape._values[nid])
        handle.grad = g
        result[nid] = g
    return result


def grad_check(f, point, step: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and central-difference gradients.

    f maps one tensor to a scalar tensor and must be deterministic: any noise
    inside it has to be frozen (same draw on every call). The error for each
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x0 = _as_array(point.data if isinstance(point, Tensor) else point)
    tape = Tape()
    leaf = tape.leaf(x0.copy())
    loss = f(leaf)
    grads = backward(loss)
    analytic = grads.get(leaf.node, np.zeros_like(x0)) if grads else np.zeros_like(x0)

    worst = 0.0
    flat0 = x0.reshape(-1)
    flat_a = analytic.reshape(-1)
    for i in range(flat0.size):
        bumped = x0.copy()
        bumped.reshape(-1)[i] = flat0[i] + step
        f_plus = f(Tensor(bumped)).item()
        bumped = x0.copy()
        bumped.reshape(-1)[i] = flat0[i] - step
        f_minus = f(Tensor(bumped)).item()
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(flat_a[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
