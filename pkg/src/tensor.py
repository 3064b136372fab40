"""
Tensor - Motor de Autodiferenciación en Modo Reverso
=====================================================
Tensor denso sobre numpy con un grafo tipo cinta: cada operación ejecutada
se agrega en orden y backward() recorre la cinta exactamente al revés.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .exceptions import GraphError, NumericError, ShapeError

logger = logging.getLogger(__name__)

_DTYPES = {32: np.float32, 64: np.float64}

# Estado por hilo: grafo activo, modo gradiente y precisión
_state = threading.local()


def _local():
    if not hasattr(_state, 'graph'):
        _state.graph = None
        _state.grad_enabled = True
        _state.dtype = np.float32
    return _state


# =============================================================================
# PRECISIÓN Y MODO GRADIENTE
# =============================================================================

def get_default_dtype():
    """dtype con el que se crean tensores y parámetros nuevos"""
    return _local().dtype


def set_precision(bits: int) -> None:
    """Fija la precisión por defecto del hilo actual (32 o 64 bits)"""
    if bits not in _DTYPES:
        raise ValueError(f"Precisión no soportada: {bits}")
    _local().dtype = _DTYPES[bits]


@contextmanager
def precision(bits: int):
    """Context manager para cambiar temporalmente la precisión"""
    state = _local()
    previous = state.dtype
    set_precision(bits)
    try:
        yield
    finally:
        state.dtype = previous


@contextmanager
def no_grad():
    """Desactiva la grabación de operaciones en el grafo"""
    state = _local()
    previous = state.grad_enabled
    state.grad_enabled = False
    try:
        yield
    finally:
        state.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _local().grad_enabled


# =============================================================================
# GRAFO
# =============================================================================

@dataclass
class Node:
    """Operación grabada: id, entradas y función de retropropagación"""
    op: str
    inputs: Tuple['Tensor', ...]
    output: 'Tensor'
    backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


class Graph:
    """Cinta ordenada de operaciones ejecutadas"""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def release(self) -> None:
        """Libera activaciones guardadas tras backward"""
        for node in self.nodes:
            node.backward_fn = None
            node.inputs = ()
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


def current_graph() -> Graph:
    """Grafo activo del hilo; se crea uno nuevo si el anterior ya fue consumido"""
    state = _local()
    if state.graph is None or state.graph.consumed:
        state.graph = Graph()
    return state.graph


def reset_graph() -> None:
    """Descarta el grafo activo (inicio de un nuevo paso)"""
    state = _local()
    if state.graph is not None and not state.graph.consumed:
        state.graph.release()
    state.graph = None


# =============================================================================
# TENSOR
# =============================================================================

ArrayLike = Union[np.ndarray, float, int, Sequence]


class Tensor:
    """Arreglo n-dimensional con buffer de gradiente opcional"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._graph: Optional[Graph] = None
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requiere un tensor escalar, forma {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # Operadores
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_mean(self, axis, keepdims)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Envuelve escalares/arreglos como tensores constantes"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, requires_grad=False, dtype=dtype)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor],
                backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """
    Crea el tensor de salida de una operación y la graba en el grafo

    Args:
        op: Nombre de la operación
        data: Resultado del forward
        inputs: Tensores de entrada (en el orden que devuelve backward_fn)
        backward_fn: g -> gradientes por entrada

    Returns:
        Tensor de salida
    """
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: la salida contiene valores no finitos")
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        graph = current_graph()
        for t in inputs:
            if t._graph is not None and t._graph is not graph:
                raise GraphError(f"{op}: entrada perteneciente a un grafo ya consumido")
        out.requires_grad = True
        out._graph = graph
        out._node = Node(op, tuple(inputs), out, backward_fn)
        graph.record(out._node)
    return out


def backward(loss: Tensor) -> None:
    """
    Retropropaga desde una pérdida escalar

    Recorre la cinta en orden inverso exacto y acumula el gradiente en cada
    hoja con requires_grad. El grafo queda consumido.
    """
    if loss.size != 1:
        raise GraphError(f"backward requiere una pérdida escalar, forma {loss.shape}")
    graph = loss._graph
    if graph is None or loss._node is None:
        raise GraphError("La pérdida no tiene un grafo asociado")
    if graph.consumed:
        raise GraphError("backward ya fue ejecutado sobre este grafo; reinicie con reset_graph()")

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
            if inp._node is None:
                leaves[key] = inp

    for key, leaf in leaves.items():
        g = np.array(grads[key], dtype=leaf.data.dtype, copy=True)
        leaf.grad = g if leaf.grad is None else leaf.grad + g

    graph.consumed = True
    graph.release()


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Suma las dimensiones agregadas por broadcasting hasta recuperar `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, extent in enumerate(shape):
        if extent == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


# =============================================================================
# OPERACIONES ELEMENTALES
# =============================================================================

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return make_result('add', a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return make_result('sub', a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return make_result('mul', a.data * b.data, (a, b), _backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return (unbroadcast(g / b.data, a.shape),
                unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return make_result('div', a.data / b.data, (a, b), _backward)


def neg(a: Tensor) -> Tensor:
    return make_result('neg', -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Producto matricial (con broadcasting de lotes)"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requiere al menos 2 dimensiones: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimensiones internas distintas {a.shape} @ {b.shape}")

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return make_result('matmul', np.matmul(a.data, b.data), (a, b), _backward)


def reshape(a: Tensor, shape) -> Tensor:
    original = a.shape
    return make_result('reshape', a.data.reshape(shape), (a,),
                       lambda g: (g.reshape(original),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return make_result('transpose', np.transpose(a.data, axes), (a,),
                       lambda g: (np.transpose(g, inverse),))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return make_result('sum', a.data.sum(axis=axis, keepdims=keepdims), (a,), _backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[ax] for ax in axes]))

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)
    return make_result('mean', a.data.mean(axis=axis, keepdims=keepdims), (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatena tensores a lo largo de un eje"""
    if not tensors:
        raise ShapeError("concat requiere al menos un tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result('concat', data, tuple(tensors), _backward)


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)
