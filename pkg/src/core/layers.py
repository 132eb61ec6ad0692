"""
Heat-convolution network with hand-written reverse mode.

Layer k computes

    Z_k = K_s( dropout(H_{k-1}) W_k ),    H_k = sigma_k(Z_k)

where K_s is the node-wise heat kernel of the backend and one scale vector s is
shared by every layer. Node classification reads logits from Z_K; graph
classification flattens H_K row-major into a two-layer ReLU readout.

Applying W_k before the kernel is equivalent to applying it after (the kernel
acts on rows, W_k on columns) and keeps the cached basis stack at the narrower
width.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from src.core.backends import ExactKernel, KernelBackend, PolynomialKernel, make_backend
from src.core.errors import DimensionError, InputError, NumericalError, UsageError
from src.core.graph import SparseMatrix
from src.core.kernel import PolynomialBasis, ScaleVector

logger = logging.getLogger(__name__)

TRAIN = "train"
EVAL = "eval"

# dropout seed: an int or an entropy sequence such as [seed, epoch]
Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class Readout:
    """Two-layer MLP f_R(H_K) = relu(relu(flat(H_K) W1) W2)."""

    w1: np.ndarray
    w2: np.ndarray
    final_relu: bool = True

    @property
    def num_classes(self) -> int:
        return int(self.w2.shape[1])


@dataclass(frozen=True)
class Model:
    """Weights, shared scales and kernel selection. Immutable; updates return copies."""

    weights: tuple
    scales: ScaleVector
    basis: Optional[PolynomialBasis]
    exact: bool = False
    dropout_rate: float = 0.5
    readout: Optional[Readout] = None

    def __post_init__(self) -> None:
        weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        if not weights:
            raise InputError("a model needs at least one convolution layer")
        for k in range(1, len(weights)):
            if weights[k - 1].shape[1] != weights[k].shape[0]:
                raise DimensionError(
                    f"layer {k} outputs {weights[k - 1].shape[1]} columns but layer {k + 1} expects {weights[k].shape[0]}"
                )
        if self.basis is None and not self.exact:
            raise InputError("a polynomial basis is required unless the model is exact")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InputError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if self.readout is not None:
            expected = len(self.scales) * weights[-1].shape[1]
            if self.readout.w1.shape[0] != expected:
                raise DimensionError(f"readout expects {self.readout.w1.shape[0]} inputs, layers give {expected}")
            if self.readout.w1.shape[1] != self.readout.w2.shape[0]:
                raise DimensionError("readout hidden widths disagree")
        object.__setattr__(self, "weights", weights)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_nodes(self) -> int:
        return len(self.scales)

    @property
    def backend_label(self) -> str:
        return "exact" if self.exact else self.basis.family.value

    def backend_for(self, lap: SparseMatrix, amortize: bool = True) -> KernelBackend:
        return make_backend(lap, self.basis, exact=self.exact, amortize=amortize)

    def updated(self, **changes) -> "Model":
        return replace(self, **changes)

    def without_dropout(self) -> "Model":
        return replace(self, dropout_rate=0.0)


@dataclass
class LayerCache:
    inputs: np.ndarray
    mask: Optional[np.ndarray]
    dropped: np.ndarray
    prep: np.ndarray
    pre_activation: np.ndarray
    relu: bool


@dataclass
class ForwardCache:
    """Everything the backward pass needs; no recurrence is re-run."""

    model: Model
    backend: KernelBackend
    task: str
    coeffs: object
    layers: List[LayerCache]
    logits: np.ndarray
    flat: Optional[np.ndarray] = None
    readout_hidden_pre: Optional[np.ndarray] = None
    readout_hidden: Optional[np.ndarray] = None
    readout_out_pre: Optional[np.ndarray] = None


@dataclass
class Gradients:
    loss: float
    weights: List[np.ndarray]
    scales: np.ndarray
    inputs: Optional[np.ndarray] = None
    readout_w1: Optional[np.ndarray] = None
    readout_w2: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def is_finite(self) -> bool:
        arrays = list(self.weights) + [self.scales]
        arrays += [a for a in (self.readout_w1, self.readout_w2) if a is not None]
        return bool(np.isfinite(self.loss)) and all(np.all(np.isfinite(a)) for a in arrays)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(
    layer_dims: Sequence[int],
    num_nodes: int,
    basis: Optional[PolynomialBasis],
    exact: bool = False,
    initial_scale: float = 2.0,
    s_min: float = 1e-3,
    s_max: float = 10.0,
    dropout_rate: float = 0.5,
    readout_hidden: Optional[int] = None,
    num_classes: Optional[int] = None,
    final_relu: bool = True,
    seed: int = 0,
) -> Model:
    """
    Glorot-initialised model with every scale set to ``initial_scale``.

    ``layer_dims`` lists d_0, d_1, ..., d_K. A readout is attached when
    ``readout_hidden`` and ``num_classes`` are given.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise InputError(f"layer dimensions must be >= 2 positive sizes, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = tuple(glorot(rng, dims[k], dims[k + 1]) for k in range(len(dims) - 1))
    scales = ScaleVector.uniform(num_nodes, initial_scale, s_min, s_max)

    readout = None
    if readout_hidden is not None:
        if not num_classes:
            raise InputError("a readout needs num_classes")
        flat_dim = num_nodes * dims[-1]
        readout = Readout(glorot(rng, flat_dim, readout_hidden), glorot(rng, readout_hidden, num_classes), final_relu)

    return Model(weights=weights, scales=scales, basis=basis, exact=exact, dropout_rate=dropout_rate, readout=readout)


def _resolve_backend(model: Model, lap: Union[SparseMatrix, KernelBackend]) -> KernelBackend:
    if isinstance(lap, (PolynomialKernel, ExactKernel)):
        if isinstance(lap, ExactKernel) != model.exact:
            raise UsageError("backend kind does not match the model")
        return lap
    return model.backend_for(lap)


def _forward_layers(
    model: Model,
    backend: KernelBackend,
    x: np.ndarray,
    mode: str,
    rng_seed: Optional[Seed],
    relu_last: bool,
):
    if mode not in (TRAIN, EVAL):
        raise InputError(f"mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")
    features = np.asarray(x, dtype=np.float64)
    if features.ndim != 2:
        raise DimensionError(f"features must be N x d, got shape {features.shape}")
    if features.shape[0] != model.num_nodes or backend.num_nodes != model.num_nodes:
        raise DimensionError(
            f"model has {model.num_nodes} scales, features {features.shape[0]} rows, graph {backend.num_nodes} nodes"
        )
    if features.shape[1] != model.weights[0].shape[0]:
        raise DimensionError(f"first layer expects {model.weights[0].shape[0]} features, got {features.shape[1]}")

    use_dropout = mode == TRAIN and model.dropout_rate > 0.0
    rng = np.random.default_rng(rng_seed) if use_dropout else None
    coeffs = backend.coefficients(model.scales)

    hidden = features
    layers: List[LayerCache] = []
    for k, weight in enumerate(model.weights):
        mask = None
        dropped = hidden
        if use_dropout:
            keep = rng.random(hidden.shape) >= model.dropout_rate
            mask = keep / (1.0 - model.dropout_rate)
            dropped = hidden * mask

        prep = backend.prepare(dropped @ weight, coeffs)
        pre_activation = backend.combine(prep, coeffs)
        if not np.all(np.isfinite(pre_activation)):
            raise NumericalError(f"non-finite activations in layer {k + 1}")

        relu = k < model.num_layers - 1 or relu_last
        layers.append(LayerCache(hidden, mask, dropped, prep, pre_activation, relu))
        hidden = np.maximum(pre_activation, 0.0) if relu else pre_activation
    return hidden, coeffs, layers


def forward_node(
    model: Model,
    lap: Union[SparseMatrix, KernelBackend],
    x: np.ndarray,
    mode: str = EVAL,
    rng_seed: Optional[Seed] = None,
):
    """
    Node-classification forward pass.

    Returns:
        (logits N x |J|, ForwardCache)
    """
    backend = _resolve_backend(model, lap)
    logits, coeffs, layers = _forward_layers(model, backend, x, mode, rng_seed, relu_last=False)
    cache = ForwardCache(model=model, backend=backend, task="node", coeffs=coeffs, layers=layers, logits=logits)
    return logits, cache


def forward_graph(
    model: Model,
    lap: Union[SparseMatrix, KernelBackend],
    x: np.ndarray,
    mode: str = EVAL,
    rng_seed: Optional[Seed] = None,
):
    """
    Graph-classification forward pass through the readout.

    Returns:
        (logits of length |J|, ForwardCache)
    """
    if model.readout is None:
        raise UsageError("forward_graph needs a model with a readout")
    backend = _resolve_backend(model, lap)
    if np.shape(x)[0] != model.num_nodes or backend.num_nodes != model.num_nodes:
        raise InputError(f"model was built for {model.num_nodes} nodes, sample has {backend.num_nodes}")

    embedded, coeffs, layers = _forward_layers(model, backend, x, mode, rng_seed, relu_last=True)
    readout = model.readout
    flat = embedded.reshape(-1)
    hidden_pre = flat @ readout.w1
    hidden = np.maximum(hidden_pre, 0.0)
    out_pre = hidden @ readout.w2
    logits = np.maximum(out_pre, 0.0) if readout.final_relu else out_pre

    cache = ForwardCache(
        model=model,
        backend=backend,
        task="graph",
        coeffs=coeffs,
        layers=layers,
        logits=logits,
        flat=flat,
        readout_hidden_pre=hidden_pre,
        readout_hidden=hidden,
        readout_out_pre=out_pre,
    )
    return logits, cache


def softmax(logits: np.ndarray) -> np.ndarray:
    values = np.asarray(logits, dtype=np.float64)
    shifted = values - np.max(values, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    ids = np.asarray(labels, dtype=np.int64)
    out = np.zeros((ids.shape[0], num_classes), dtype=np.float64)
    valid = ids >= 0
    out[np.nonzero(valid)[0], ids[valid]] = 1.0
    return out


def _mask_rows(mask, num_rows: int) -> np.ndarray:
    if mask is None:
        return np.arange(num_rows)
    arr = np.asarray(mask)
    if arr.dtype == bool:
        if arr.shape != (num_rows,):
            raise DimensionError(f"boolean mask must have length {num_rows}")
        return np.nonzero(arr)[0]
    return np.unique(arr.astype(np.int64))


def softmax_cross_entropy(logits: np.ndarray, y_true: np.ndarray, mask=None):
    """
    Mean cross-entropy over the masked rows, with log-sum-exp stabilisation.

    Args:
        logits: N x |J| (or a single row)
        y_true: one-hot rows matching logits
        mask: boolean vector or node ids; None means all rows

    Returns:
        (loss, dlogits) with dlogits = (softmax - Y) / |mask| on masked rows, 0 elsewhere

    Raises:
        InputError: empty mask or non one-hot target rows
    """
    values = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(y_true, dtype=np.float64))
    if values.shape != targets.shape:
        raise DimensionError(f"logits {values.shape} and targets {targets.shape} differ")
    rows = _mask_rows(mask, values.shape[0])
    if rows.size == 0:
        raise InputError("the loss mask selects no rows")
    picked = targets[rows]
    if not (np.all((picked == 0.0) | (picked == 1.0)) and np.all(picked.sum(axis=1) == 1.0)):
        raise InputError("target rows must be one-hot on masked rows")

    shifted = values[rows] - np.max(values[rows], axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -float(np.sum(picked * log_probs)) / rows.size

    dlogits = np.zeros_like(values)
    dlogits[rows] = (np.exp(log_probs) - picked) / rows.size
    return loss, dlogits.reshape(np.shape(logits))


def _check_cache(model: Model, cache: ForwardCache, task: str) -> None:
    if cache.model is not model:
        raise UsageError("forward cache belongs to a different model")
    if cache.task != task:
        raise UsageError(f"forward cache is from a {cache.task} pass, not {task}")


def _backward_layers(model: Model, cache: ForwardCache, upstream: np.ndarray):
    backend = cache.backend
    scale_grad = np.zeros(model.num_nodes)
    weight_grads: List[np.ndarray] = [None] * model.num_layers
    grad = upstream
    for k in range(model.num_layers - 1, -1, -1):
        layer = cache.layers[k]
        if layer.relu:
            grad = grad * (layer.pre_activation > 0.0)
        scale_grad += backend.scale_grad(layer.prep, cache.coeffs, grad)
        grad_projected = backend.adjoint(cache.coeffs, grad)
        weight_grads[k] = layer.dropped.T @ grad_projected
        grad = grad_projected @ model.weights[k].T
        if layer.mask is not None:
            grad = grad * layer.mask
    return weight_grads, scale_grad, grad


def backward_node(model: Model, cache: ForwardCache, y_true: np.ndarray, train_mask=None) -> Gradients:
    """Gradients of the masked cross-entropy w.r.t. W_k, the scales and the input."""
    _check_cache(model, cache, "node")
    loss, dlogits = softmax_cross_entropy(cache.logits, y_true, train_mask)
    weight_grads, scale_grad, input_grad = _backward_layers(model, cache, dlogits)
    return Gradients(loss=loss, weights=weight_grads, scales=scale_grad, inputs=input_grad)


def backward_graph(model: Model, cache: ForwardCache, y_true: np.ndarray) -> Gradients:
    """Gradients of one sample's cross-entropy, chained through the readout."""
    _check_cache(model, cache, "graph")
    readout = model.readout
    loss, dlogits = softmax_cross_entropy(cache.logits[None, :], np.asarray(y_true, dtype=np.float64)[None, :])
    grad_out = dlogits[0]
    if readout.final_relu:
        grad_out = grad_out * (cache.readout_out_pre > 0.0)
    grad_w2 = np.outer(cache.readout_hidden, grad_out)
    grad_hidden = (readout.w2 @ grad_out) * (cache.readout_hidden_pre > 0.0)
    grad_w1 = np.outer(cache.flat, grad_hidden)
    grad_embedded = (readout.w1 @ grad_hidden).reshape(cache.layers[-1].pre_activation.shape)

    weight_grads, scale_grad, input_grad = _backward_layers(model, cache, grad_embedded)
    return Gradients(
        loss=loss,
        weights=weight_grads,
        scales=scale_grad,
        inputs=input_grad,
        readout_w1=grad_w1,
        readout_w2=grad_w2,
    )


def predict_node(model: Model, lap: Union[SparseMatrix, KernelBackend], x: np.ndarray) -> np.ndarray:
    logits, _ = forward_node(model, lap, x, mode=EVAL)
    return np.argmax(logits, axis=1)


def predict_graph(model: Model, lap: Union[SparseMatrix, KernelBackend], x: np.ndarray) -> int:
    logits, _ = forward_graph(model, lap, x, mode=EVAL)
    return int(np.argmax(logits))
