"""Dense tensors with reverse-mode automatic differentiation, Adam and checkpoints.

Every op computes its forward value with numpy and, when gradients are being
tracked, registers a closure mapping the output gradient to input gradients.
``backward`` walks the recorded graph once in reverse topological order.
"""
import hashlib
import logging
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

NEG_INF = -1e9
IGNORE_ID = -100

_DTYPES = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32
_grad_state = threading.local()


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class ContractError(AutodiffError, RuntimeError):
    pass


def set_precision(mode: str) -> None:
    global _dtype
    if mode not in _DTYPES:
        raise ValueError(f"unknown precision {mode!r}; expected one of {sorted(_DTYPES)}")
    _dtype = _DTYPES[mode]


def get_precision() -> str:
    return "f64" if _dtype == np.float64 else "f32"


def get_dtype():
    return _dtype


@contextmanager
def precision(mode: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=get_dtype())
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"tensor {name or '<anonymous>'} holds non-finite values")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = "leaf"
        self._inputs: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], op: str,
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out.op = op
    out._inputs = ()
    out._backward = None
    out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._inputs = inputs
        out._backward = backward
    return out


def _is_bias(a: Tensor, b: Tensor) -> bool:
    return b.data.ndim == 1 and a.data.ndim >= 1 and b.shape[0] == a.shape[-1] and a.shape != b.shape


def _sum_to_bias(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis of ``a``."""
    bias = _is_bias(a, b)
    if a.shape != b.shape and not bias:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        return g, (_sum_to_bias(g) if bias else g)

    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bias = _is_bias(a, b)
    if a.shape != b.shape and not bias:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        gb = g * a.data
        return g * b.data, (_sum_to_bias(gb) if bias else gb)

    return _result(a.data * b.data, (a, b), "mul", backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(g):
        return (g * factor,)

    return _result(x.data * x.data.dtype.type(factor), (x,), "scale", backward)


def add_mask(x: Tensor, mask_bias: np.ndarray) -> Tensor:
    """Adds a constant (non-differentiable) bias broadcast over the leading axes of ``x``."""
    if mask_bias.shape != x.shape[-mask_bias.ndim:]:
        raise ShapeError(f"add_mask: mask {mask_bias.shape} does not trail {x.shape}")

    def backward(g):
        return (g,)

    return _result(x.data + mask_bias.astype(x.data.dtype, copy=False), (x,), "add_mask", backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), "sum", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either 2-D (shared across the leading axes of ``a``) or has the
    same leading axes as ``a``.
    """
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not align")
    shared = b.data.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} differ")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if shared:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), "transpose", backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def backward(g):
        return (g.reshape(original),)

    return _result(x.data.reshape(tuple(shape)), (x,), "reshape", backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}: {exc}") from exc
    return _result(data, tensors, "concat", backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` along the first axis."""

    def backward(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop], (x,), "slice_rows", backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), "softmax", backward)


def gelu(x: Tensor) -> Tensor:
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    y = 0.5 * x.data * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * dinner),)

    return _result(y.astype(x.data.dtype, copy=False), (x,), "gelu", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs features {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, _sum_to_bias(g * xhat), _sum_to_bias(g)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", backward)


def embed_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    index = np.asarray(ids, dtype=np.int64).reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"embedding ids out of range [0, {table.shape[0]})")

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(table.data[index], (table,), "embed_lookup", backward)


def cross_entropy(logits: Tensor, target_ids: Sequence[int], ignore_id: int = IGNORE_ID) -> Tensor:
    """Mean negative log-likelihood over the positions whose target is not ``ignore_id``."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [T x V] logits, got {logits.shape}")
    targets = np.asarray(target_ids, dtype=np.int64).reshape(-1)
    rows, vocab = logits.shape
    if targets.shape[0] != rows:
        raise ShapeError(f"cross_entropy: {rows} logit rows vs {targets.shape[0]} targets")
    valid = targets != ignore_id
    picked = targets[valid]
    if picked.size and (picked.min() < 0 or picked.max() >= vocab):
        raise IndexError(f"target ids out of range [0, {vocab})")
    count = int(valid.sum())
    if count == 0:
        return Tensor(0.0)

    positions = np.nonzero(valid)[0]
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    value = -log_probs[positions, picked].sum() / count

    def backward(g):
        d = np.exp(log_probs)
        d[positions, picked] -= 1.0
        d[~valid] = 0.0
        return (d * (g / count),)

    return _result(np.asarray(value, dtype=logits.data.dtype), (logits,), "cross_entropy", backward)


@dataclass
class Graph:
    """Reverse-mode tape rebuilt from an output tensor.

    ``nodes`` is in topological order (inputs before the ops consuming them);
    ``visits`` records each node id once as backward walks the reversed order.
    """
    nodes: List[Tensor]
    visits: List[int] = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._inputs):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(nodes=order)

    def run(self, seed: np.ndarray) -> None:
        if not self.nodes:
            return
        grads: Dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            self.visits.append(id(node))
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._inputs, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss: Tensor) -> Graph:
    """Accumulates d(loss)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph.from_output(loss)
    graph.run(np.ones_like(loss.data))
    return graph


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error per tensor is ``|a - n| / (|a| + |n|)`` in the L2 norm.
    Run under f64 precision.
    """
    for t in tensors:
        t.zero_grad()
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = fn().item()
            flat[i] = original - eps
            minus = fn().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (plus - minus) / (2 * eps)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
              state: AdamState) -> Tuple[Dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place on ``params``.

    Parameters without an entry in ``grads`` are treated as having zero gradient.
    """
    for name, param in params.items():
        g = grads.get(name)
        if g is not None and g.shape != param.shape:
            raise ShapeError(f"adam_step: grad for {name} has shape {g.shape}, param {param.shape}")
        if name in state.m and state.m[name].shape != param.shape:
            raise ShapeError(f"adam_step: state for {name} has shape {state.m[name].shape}, param {param.shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.data.dtype, copy=False)
    return params, state


def save_checkpoint(prefix: str, arrays: Dict[str, np.ndarray], header: Dict[str, str]) -> Tuple[str, str]:
    """Writes ``<prefix>.manifest`` and ``<prefix>.bin``; returns both paths."""
    manifest_path, blob_path = f"{prefix}.manifest", f"{prefix}.bin"
    directory = os.path.dirname(manifest_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    lines = ["[header]"]
    lines += [f"{key}={value}" for key, value in header.items()]
    lines.append("[tensors]")
    with open(blob_path, "wb") as blob:
        for name, array in arrays.items():
            little = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
            blob.write(little.tobytes())
            dims = ",".join(str(d) for d in array.shape)
            lines.append(f"{name} {np.dtype(array.dtype).name} {dims}")
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return manifest_path, blob_path


def load_checkpoint(prefix: str) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    manifest_path, blob_path = f"{prefix}.manifest", f"{prefix}.bin"
    header: Dict[str, str] = {}
    entries: List[Tuple[str, np.dtype, Tuple[int, ...]]] = []
    section = None
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line in ("[header]", "[tensors]"):
                section = line
            elif section == "[header]":
                key, _, value = line.partition("=")
                header[key] = value
            elif section == "[tensors]":
                name, dtype_name, dims = line.split(" ")
                shape = tuple(int(d) for d in dims.split(",")) if dims else ()
                entries.append((name, np.dtype(dtype_name).newbyteorder("<"), shape))
            else:
                raise ContractError(f"{manifest_path}: unexpected line {line!r}")
    with open(blob_path, "rb") as blob:
        raw = blob.read()
    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for name, dtype, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        chunk = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[name] = chunk.astype(dtype.newbyteorder("="), copy=True).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise ContractError(f"{blob_path}: {len(raw) - offset} trailing bytes after the manifest's tensors")
    return arrays, header


def checksum(arrays: Dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name, array in arrays.items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()
