"""Dense float tensors with tape-based reverse-mode differentiation.

Values are numpy arrays, float32 by default and float64 for verification
work. Operations record themselves onto a thread-local tape while
gradients are enabled; :func:`backward` replays the tape in exact reverse
recording order and then frees it. Gradients accumulate only on leaf
tensors (tensors not produced by a recorded operation).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.dtype(np.float32)
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class GraphNode:
    """One recorded operation: its inputs and backward rule."""

    __slots__ = ("inputs", "backward_fn", "graph")

    def __init__(self, inputs, backward_fn, graph):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.graph = graph


class Graph:
    """The operations of one forward pass, in recording order."""

    def __init__(self):
        self.nodes: list[GraphNode] = []

    def record(self, inputs: tuple, backward_fn: Callable) -> GraphNode:
        node = GraphNode(inputs, backward_fn, self)
        self.nodes.append(node)
        return node

    def release(self) -> None:
        for node in self.nodes:
            node.inputs = ()
            node.backward_fn = None
            node.graph = None
        self.nodes.clear()


_local = threading.local()


def _active_graph(create: bool = False) -> Graph | None:
    graph = getattr(_local, "graph", None)
    if graph is None and create:
        graph = Graph()
        _local.graph = graph
    return graph


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        self._prev = grad_enabled()
        _local.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _local.grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float array, optionally tracked for differentiation.

    Tensors are treated as immutable after creation except for gradient
    accumulation into ``grad``. Only float32 and float64 are supported.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("Tensor data must be raw array data, not another Tensor")
        arr = np.asarray(data)
        # np.asarray with order="C", unlike ascontiguousarray, keeps 0-d
        # scalars 0-d instead of promoting them to shape (1,).
        if dtype is not None:
            dtype = np.dtype(dtype)
            if dtype not in _FLOAT_DTYPES:
                raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
            arr = np.asarray(arr, dtype=dtype, order="C")
        elif arr.dtype in _FLOAT_DTYPES:
            arr = np.asarray(arr, order="C")
        else:
            arr = np.asarray(arr, dtype=DEFAULT_DTYPE, order="C")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: GraphNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array. Callers must not mutate it."""
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same data, detached from any recorded graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic operators are attached by rawburst.ops at import time.


def make_op_output(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it on the tape when gradients flow.

    ``backward_fn(out_grad)`` must return one gradient array (or None) per
    input, in order.
    """
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _active_graph(create=True).record(tuple(inputs), backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    The loss must be a single-element tensor attached to the active tape.
    The tape is traversed in exact reverse recording order and freed
    afterwards, so each graph supports one backward call.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    graph = _active_graph()
    if loss.node is None or graph is None or loss.node.graph is not graph:
        raise ValueError("loss is not attached to the active graph (detached or already freed)")

    pending: dict[int, np.ndarray] = {id(loss.node): np.ones_like(loss.data)}
    try:
        for node in reversed(graph.nodes):
            out_grad = pending.pop(id(node), None)
            if out_grad is None:
                continue
            grads = node.backward_fn(out_grad)
            for tensor, g in zip(node.inputs, grads):
                if g is None or not tensor.requires_grad:
                    continue
                g = np.asarray(g, dtype=tensor.data.dtype)
                if tensor.node is not None and tensor.node.graph is graph:
                    key = id(tensor.node)
                    acc = pending.get(key)
                    pending[key] = g if acc is None else acc + g
                else:
                    tensor.accumulate_grad(g)
    finally:
        graph.release()
        _local.graph = None


def write_array(path: str | Path, arr: np.ndarray) -> None:
    """Write ``arr`` as flat little-endian float32 plus a JSON descriptor.

    The descriptor sits next to the data file with the extension replaced
    by ``.json`` and records the row-major shape.
    """
    path = Path(path)
    arr = np.asarray(arr)
    path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    descriptor = {"shape": list(arr.shape), "dtype": "f32", "order": "C"}
    path.with_suffix(".json").write_text(json.dumps(descriptor, sort_keys=True) + "\n")


def read_array(path: str | Path) -> np.ndarray:
    """Read an array written by :func:`write_array`."""
    path = Path(path)
    desc_path = path.with_suffix(".json")
    if not desc_path.exists():
        raise FileNotFoundError(f"missing descriptor {desc_path} for {path}")
    try:
        descriptor = json.loads(desc_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed descriptor {desc_path}: {exc}") from exc
    shape = tuple(int(d) for d in descriptor["shape"])
    raw = path.read_bytes()
    expected = int(np.prod(shape, dtype=np.int64)) * 4
    if len(raw) != expected:
        raise ValueError(
            f"truncated or oversized data file {path}: expected {expected} bytes "
            f"for shape {shape}, found {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(tensor: Tensor, path: str | Path) -> None:
    """Serialize a tensor's values (float32 on the wire)."""
    write_array(path, tensor.data)


def load_tensor(path: str | Path) -> Tensor:
    """Load a tensor saved by :func:`save_tensor`."""
    return Tensor(read_array(path))
