"""
Training loops: full-batch node classification with early stopping, k-fold
cross-validated graph classification, the l1-regularised objective with the
projected scale update, and a finite-difference gradient check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, precision_score, recall_score
from sklearn.model_selection import StratifiedKFold

from src.core.backends import ExactKernel, KernelBackend, make_backend
from src.core.datasets import GraphPopulation, NodeDataset
from src.core.errors import ConfigError, InputError, NumericalError
from src.core.graph import SparseMatrix, normalized_laplacian
from src.core.kernel import PolynomialBasis, ScaleVector
from src.core.layers import (
    EVAL,
    TRAIN,
    ForwardCache,
    Gradients,
    Model,
    Readout,
    backward_graph,
    backward_node,
    forward_graph,
    forward_node,
    glorot,
    init_model,
    one_hot,
    softmax_cross_entropy,
)
from src.utils.file_utils import PathLike, write_tsv
from src.utils.time_utils import Stopwatch

logger = logging.getLogger(__name__)

InfoCallback = Optional[Callable[[str], None]]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _emit_info(on_info: InfoCallback, message: str) -> None:
    """Log progress and forward it to the optional caller hook."""
    logger.info(message)
    if on_info:
        try:
            on_info(message)
        except Exception:
            pass


@dataclass(frozen=True)
class TrainConfig:
    lr_w: float = 0.01
    beta_s: float = 0.1
    alpha: float = 0.1
    epochs: int = 200
    patience: int = 50
    seed: int = 0
    initial_scale: float = 2.0
    s_min: float = 1e-3
    s_max: float = 10.0
    hidden_dims: Tuple[int, ...] = (64,)
    folds: int = 5
    dropout: float = 0.5
    readout_hidden: int = 16
    optimizer: str = "adam"
    weight_decay: float = 0.0
    readout_final_relu: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        problems = []
        if not self.lr_w > 0.0:
            problems.append(f"lr must be > 0 (got {self.lr_w})")
        if self.beta_s < 0.0:
            problems.append(f"scale lr must be >= 0 (got {self.beta_s})")
        if self.alpha < 0.0:
            problems.append(f"alpha must be >= 0 (got {self.alpha})")
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0 (got {self.epochs})")
        if self.patience < 1:
            problems.append(f"patience must be >= 1 (got {self.patience})")
        if not 0.0 < self.s_min <= self.s_max:
            problems.append(f"need 0 < s_min <= s_max (got {self.s_min}, {self.s_max})")
        elif not self.s_min <= self.initial_scale <= self.s_max:
            problems.append(f"initial scale {self.initial_scale} outside [{self.s_min}, {self.s_max}]")
        if not self.hidden_dims or any(h <= 0 for h in self.hidden_dims):
            problems.append(f"hidden sizes must be positive (got {list(self.hidden_dims)})")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must lie in [0, 1) (got {self.dropout})")
        if self.readout_hidden < 1:
            problems.append(f"readout hidden size must be positive (got {self.readout_hidden})")
        if self.optimizer not in ("adam", "sgd"):
            problems.append(f"optimizer must be 'adam' or 'sgd' (got {self.optimizer!r})")
        if self.weight_decay < 0.0:
            problems.append(f"weight decay must be >= 0 (got {self.weight_decay})")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "TrainConfig":
        """Build from resolved ``Config`` values (the CLI key names)."""
        return cls(
            lr_w=float(values["lr"]),
            beta_s=float(values["scale_lr"]),
            alpha=float(values["alpha"]),
            epochs=int(values["epochs"]),
            patience=int(values["patience"]),
            seed=int(values["seed"]),
            initial_scale=float(values["initial_scale"]),
            s_min=float(values["s_min"]),
            s_max=float(values["s_max"]),
            hidden_dims=tuple(values["hidden"]),
            folds=int(values["folds"]),
            dropout=float(values["dropout"]),
            readout_hidden=int(values["readout_hidden"]),
            optimizer=str(values["optimizer"]).lower(),
            weight_decay=float(values["weight_decay"]),
            readout_final_relu=bool(values.get("readout_final_relu", True)),
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    kernel_ms: float
    total_ms: float


@dataclass
class TrainReport:
    """Per-epoch history plus the metrics of the restored best epoch."""

    backend: str
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    test_accuracy: float = float("nan")
    test_precision: float = float("nan")
    test_recall: float = float("nan")
    scales: Optional[np.ndarray] = None
    scale_history: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    monitor: str = "val"

    @property
    def best_record(self) -> EpochRecord:
        return next(r for r in self.records if r.epoch == self.best_epoch)

    def summary(self) -> Dict[str, float]:
        best = self.best_record
        return {
            "best_epoch": self.best_epoch,
            "epochs_run": self.records[-1].epoch if self.records else 0,
            f"best_{self.monitor}_acc": best.val_acc,
            "test_accuracy": self.test_accuracy,
            "test_precision": self.test_precision,
            "test_recall": self.test_recall,
        }

    def write_tsv(self, path: PathLike) -> None:
        """One line per epoch, then a ``#summary`` record of key=value pairs."""
        rows = [(r.epoch, r.train_loss, r.val_loss, r.val_acc, r.kernel_ms, r.total_ms) for r in self.records]
        summary = "\t".join(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}" for key, value in self.summary().items())
        write_tsv(
            path,
            rows,
            header=("epoch", "loss", f"{self.monitor}_loss", f"{self.monitor}_acc", "kernel_ms", "total_ms"),
            comments=(f"backend: {self.backend}", "loss: cross-entropy + alpha * sum|s|; times in milliseconds"),
        )
        with open(path, "a", encoding="utf-8", newline="\n") as handle:
            handle.write(f"#summary\t{summary}\n")

    def write_scale_history(self, path: PathLike) -> None:
        if not self.scale_history:
            return
        epochs = [epoch for epoch, _ in self.scale_history]
        stacked = np.stack([values for _, values in self.scale_history], axis=1)
        rows = [(p, *(float(v) for v in stacked[p])) for p in range(stacked.shape[0])]
        write_tsv(path, rows, header=("node_id", *(f"epoch_{e}" for e in epochs)), comments=("scale per node at quarter intervals",))


@dataclass
class CrossValidationReport:
    folds: List[TrainReport]
    accuracy: Tuple[float, float]
    precision: Tuple[float, float]
    recall: Tuple[float, float]
    # restored best model of each fold, same order as ``folds``
    models: List[Model] = field(default_factory=list)

    def write_tsv(self, path: PathLike) -> None:
        rows = [(k, r.best_epoch, r.test_accuracy, r.test_precision, r.test_recall) for k, r in enumerate(self.folds)]
        rows.append(("mean", "", self.accuracy[0], self.precision[0], self.recall[0]))
        rows.append(("std", "", self.accuracy[1], self.precision[1], self.recall[1]))
        write_tsv(
            path,
            rows,
            header=("fold", "best_epoch", "accuracy", "precision", "recall"),
            comments=("held-out fold metrics; precision and recall are macro averages",),
        )


def total_loss(err_loss: float, scales: Union[ScaleVector, np.ndarray], alpha: float) -> float:
    """err_loss + alpha * sum_p |s_p|."""
    values = scales.values if isinstance(scales, ScaleVector) else np.asarray(scales, dtype=np.float64)
    return float(err_loss) + float(alpha) * float(np.sum(np.abs(values)))


def regularized_scale_grad(ds: np.ndarray, scales: ScaleVector, alpha: float) -> np.ndarray:
    return np.asarray(ds, dtype=np.float64) + alpha * np.sign(scales.values)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> List[np.ndarray]:
        return [p - self.lr * g for p, g in zip(params, grads)]


class Adam:
    """Adam with bias correction; one moment pair per parameter array."""

    def __init__(self, lr: float, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._t = 0
        self._m: List[np.ndarray] = []
        self._v: List[np.ndarray] = []

    def update(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> List[np.ndarray]:
        if not self._m:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        correction1 = 1.0 - self.beta1**self._t
        correction2 = 1.0 - self.beta2**self._t
        updated = []
        for i, (param, grad) in enumerate(zip(params, grads)):
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * grad
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self._m[i] / correction1
            v_hat = self._v[i] / correction2
            updated.append(param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


Optimizer = Union[SGD, Adam]


def make_optimizer(config: TrainConfig) -> Optimizer:
    return Adam(config.lr_w) if config.optimizer == "adam" else SGD(config.lr_w)


def _parameters(model: Model) -> List[np.ndarray]:
    params = list(model.weights)
    if model.readout is not None:
        params += [model.readout.w1, model.readout.w2]
    return params


def _parameter_grads(model: Model, grads: Gradients) -> List[np.ndarray]:
    out = list(grads.weights)
    if model.readout is not None:
        out += [grads.readout_w1, grads.readout_w2]
    return out


def step(model: Model, grads: Gradients, config: TrainConfig, optimizer: Optional[Optimizer] = None) -> Model:
    """
    One parameter update.

    Weights move by the optimizer (plain SGD when none is given); scales by
    projected gradient descent s <- clamp(s - beta_s (ds + alpha sign(s))).

    Raises:
        NumericalError: non-finite gradients
    """
    if not grads.is_finite():
        raise NumericalError("non-finite gradient; epoch aborted")
    optimizer = optimizer or SGD(config.lr_w)

    params = _parameters(model)
    param_grads = _parameter_grads(model, grads)
    if config.weight_decay > 0.0:
        param_grads = [g + config.weight_decay * p for p, g in zip(params, param_grads)]
    updated = optimizer.update(params, param_grads)

    scale_grad = regularized_scale_grad(grads.scales, model.scales, config.alpha)
    scales = model.scales.projected(model.scales.values - config.beta_s * scale_grad)

    readout = model.readout
    if readout is not None:
        readout = Readout(updated[model.num_layers], updated[model.num_layers + 1], readout.final_relu)
    return model.updated(weights=tuple(updated[: model.num_layers]), scales=scales, readout=readout)


def _quarter_epochs(epochs: int) -> List[int]:
    return sorted({int(math.ceil(q * epochs / 4)) for q in range(5)})


def _classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> Tuple[float, float, float]:
    if y_true.size == 0:
        return float("nan"), float("nan"), float("nan")
    labels = list(range(num_classes))
    return (
        float(accuracy_score(y_true, y_pred)),
        float(precision_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
        float(recall_score(y_true, y_pred, labels=labels, average="macro", zero_division=0)),
    )


def _improves(acc: float, loss: float, best_acc: float, best_loss: float) -> bool:
    return acc > best_acc or (acc == best_acc and loss < best_loss)


def train_node(
    dataset: NodeDataset,
    config: TrainConfig,
    basis: Optional[PolynomialBasis],
    exact: bool = False,
    amortize: bool = True,
    on_info: InfoCallback = None,
) -> Tuple[TrainReport, Model]:
    """
    Full-batch training with early stopping on validation accuracy.

    Epoch 0 records the initial model, so ``epochs=0`` yields a report of
    initialisation metrics only. The best epoch (highest validation accuracy,
    ties to lower validation loss) is restored before test evaluation.

    Raises:
        InputError: no training nodes or fewer than two classes
    """
    if dataset.train.size == 0:
        raise InputError("dataset has no training nodes")
    num_classes = dataset.num_classes
    if num_classes < 2:
        raise InputError("node classification needs at least two classes")
    monitor_ids = dataset.val if dataset.val.size else dataset.train
    monitor = "val" if dataset.val.size else "train"
    if monitor == "train":
        logger.warning("dataset has no validation nodes; early stopping monitors training accuracy")

    lap = normalized_laplacian(dataset.graph)
    backend = make_backend(lap, basis, exact=exact, amortize=amortize)
    targets = one_hot(dataset.labels, num_classes)
    model = init_model(
        [dataset.num_features, *config.hidden_dims, num_classes],
        dataset.num_nodes,
        basis,
        exact=exact,
        initial_scale=config.initial_scale,
        s_min=config.s_min,
        s_max=config.s_max,
        dropout_rate=config.dropout,
        seed=config.seed,
    )
    optimizer = make_optimizer(config)
    report = TrainReport(backend=backend.label, monitor=monitor)
    snapshots = set(_quarter_epochs(config.epochs))
    clock = Stopwatch()

    def evaluate(current: Model) -> Tuple[float, float]:
        logits, _ = forward_node(current, backend, dataset.features, mode=EVAL)
        loss, _ = softmax_cross_entropy(logits, targets, monitor_ids)
        acc = float(np.mean(np.argmax(logits[monitor_ids], axis=1) == dataset.labels[monitor_ids]))
        return loss, acc

    backend.timer.reset()
    with clock.measure():
        init_logits, _ = forward_node(model, backend, dataset.features, mode=EVAL)
        init_err, _ = softmax_cross_entropy(init_logits, targets, dataset.train)
        val_loss, val_acc = evaluate(model)
    report.records.append(
        EpochRecord(0, total_loss(init_err, model.scales, config.alpha), val_loss, val_acc, backend.timer.reset(), clock.reset())
    )
    report.scale_history.append((0, model.scales.values.copy()))
    best_model, best_acc, best_loss, stale = model, val_acc, val_loss, 0

    for epoch in range(1, config.epochs + 1):
        with clock.measure():
            _, cache = forward_node(model, backend, dataset.features, mode=TRAIN, rng_seed=[config.seed, epoch])
            grads = backward_node(model, cache, targets, dataset.train)
            loss = total_loss(grads.loss, model.scales, config.alpha)
            model = step(model, grads, config, optimizer)
            val_loss, val_acc = evaluate(model)
        report.records.append(EpochRecord(epoch, loss, val_loss, val_acc, backend.timer.reset(), clock.reset()))
        if epoch in snapshots:
            report.scale_history.append((epoch, model.scales.values.copy()))

        if _improves(val_acc, val_loss, best_acc, best_loss):
            best_model, best_acc, best_loss, stale = model, val_acc, val_loss, 0
            report.best_epoch = epoch
        else:
            stale += 1
        if epoch % 10 == 0 or epoch == 1:
            _emit_info(on_info, f"epoch {epoch:4d}  loss {loss:.4f}  {monitor}_acc {val_acc:.4f}")
        if stale >= config.patience:
            _emit_info(on_info, f"early stop at epoch {epoch}; best epoch {report.best_epoch}")
            if epoch not in snapshots:
                report.scale_history.append((epoch, model.scales.values.copy()))
            break

    test_ids = dataset.test
    if test_ids.size:
        logits, _ = forward_node(best_model, backend, dataset.features, mode=EVAL)
        predicted = np.argmax(logits[test_ids], axis=1)
        report.test_accuracy, report.test_precision, report.test_recall = _classification_metrics(
            dataset.labels[test_ids], predicted, num_classes
        )
    report.scales = best_model.scales.values.copy()
    _emit_info(on_info, f"best epoch {report.best_epoch}: {monitor}_acc {best_acc:.4f}, test_acc {report.test_accuracy:.4f}")
    return report, best_model


def _population_backends(population: GraphPopulation, basis, exact: bool) -> List[KernelBackend]:
    return [make_backend(normalized_laplacian(s.graph), basis, exact=exact) for s in population.samples]


def _mean_gradients(model: Model, collected: List[Gradients]) -> Gradients:
    count = len(collected)
    return Gradients(
        loss=sum(g.loss for g in collected) / count,
        weights=[sum(g.weights[k] for g in collected) / count for k in range(model.num_layers)],
        scales=sum(g.scales for g in collected) / count,
        readout_w1=sum(g.readout_w1 for g in collected) / count,
        readout_w2=sum(g.readout_w2 for g in collected) / count,
    )


def revive_dead_outputs(model: Model, out_pre: np.ndarray, seed) -> Model:
    """
    Redraw readout output columns that the final ReLU clips on every training sample.

    Such a column gets a zero gradient forever and its class can never be
    predicted. The replacement column is non-negative, so with any active
    readout hidden unit the output is positive again.

    Args:
        model: graph model with a readout
        out_pre: (samples, classes) pre-ReLU readout outputs of the last epoch
        seed: entropy for the replacement weights
    """
    readout = model.readout
    if readout is None or not readout.final_relu:
        return model
    dead = np.all(np.asarray(out_pre) <= 0.0, axis=0)
    if not dead.any():
        return model
    w2 = readout.w2.copy()
    fresh = np.abs(glorot(np.random.default_rng(seed), *w2.shape))
    w2[:, dead] = fresh[:, dead]
    logger.debug("redrew readout outputs %s clipped on every training sample", np.flatnonzero(dead).tolist())
    return model.updated(readout=Readout(readout.w1, w2, readout.final_relu))


def _evaluate_graphs(model: Model, population: GraphPopulation, backends, indices, targets) -> Tuple[float, float, np.ndarray]:
    losses, predicted = [], []
    for t in indices:
        logits, _ = forward_graph(model, backends[t], population.samples[t].features, mode=EVAL)
        loss, _ = softmax_cross_entropy(logits[None, :], targets[t][None, :])
        losses.append(loss)
        predicted.append(int(np.argmax(logits)))
    predicted = np.array(predicted, dtype=np.int64)
    acc = float(np.mean(predicted == population.labels[indices]))
    return float(np.mean(losses)), acc, predicted


def _train_fold(
    population: GraphPopulation,
    backends: List[KernelBackend],
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    config: TrainConfig,
    basis: Optional[PolynomialBasis],
    exact: bool,
    fold: int,
    on_info: InfoCallback,
) -> Tuple[TrainReport, Model]:
    targets = one_hot(population.labels, population.num_classes)
    hidden = list(config.hidden_dims)
    model = init_model(
        [population.num_features, *hidden, hidden[-1]],
        population.num_nodes,
        basis,
        exact=exact,
        initial_scale=config.initial_scale,
        s_min=config.s_min,
        s_max=config.s_max,
        dropout_rate=config.dropout,
        readout_hidden=config.readout_hidden,
        num_classes=population.num_classes,
        final_relu=config.readout_final_relu,
        seed=config.seed + fold,
    )
    optimizer = make_optimizer(config)
    report = TrainReport(backend=backends[0].label, monitor="train")
    clock = Stopwatch()

    def kernel_ms() -> float:
        return sum(backends[t].timer.reset() for t in range(len(backends)))

    kernel_ms()
    with clock.measure():
        train_loss, train_acc, _ = _evaluate_graphs(model, population, backends, train_idx, targets)
    report.records.append(
        EpochRecord(0, total_loss(train_loss, model.scales, config.alpha), train_loss, train_acc, kernel_ms(), clock.reset())
    )
    best_model, best_acc, best_loss, stale = model, train_acc, train_loss, 0

    for epoch in range(1, config.epochs + 1):
        with clock.measure():
            collected, outputs = [], []
            for t in train_idx:
                _, cache = forward_graph(
                    model, backends[t], population.samples[t].features, mode=TRAIN, rng_seed=[config.seed, fold, epoch, int(t)]
                )
                collected.append(backward_graph(model, cache, targets[t]))
                outputs.append(cache.readout_out_pre)
            grads = _mean_gradients(model, collected)
            loss = total_loss(grads.loss, model.scales, config.alpha)
            model = step(model, grads, config, optimizer)
            model = revive_dead_outputs(model, np.stack(outputs), seed=[config.seed, fold, epoch])
            train_loss, train_acc, _ = _evaluate_graphs(model, population, backends, train_idx, targets)
        report.records.append(EpochRecord(epoch, loss, train_loss, train_acc, kernel_ms(), clock.reset()))

        if _improves(train_acc, train_loss, best_acc, best_loss):
            best_model, best_acc, best_loss, stale = model, train_acc, train_loss, 0
            report.best_epoch = epoch
        else:
            stale += 1
        if stale >= config.patience:
            break

    _, _, predicted = _evaluate_graphs(best_model, population, backends, test_idx, targets)
    report.test_accuracy, report.test_precision, report.test_recall = _classification_metrics(
        population.labels[test_idx], predicted, population.num_classes
    )
    report.scales = best_model.scales.values.copy()
    _emit_info(
        on_info,
        f"fold {fold + 1}: best epoch {report.best_epoch}, accuracy {report.test_accuracy:.4f}, "
        f"precision {report.test_precision:.4f}, recall {report.test_recall:.4f}",
    )
    return report, best_model


def train_graph(
    population: GraphPopulation,
    config: TrainConfig,
    basis: Optional[PolynomialBasis],
    exact: bool = False,
    on_info: InfoCallback = None,
) -> CrossValidationReport:
    """
    Stratified k-fold cross-validation of graph classification.

    Folds carry no validation split, so early stopping watches training
    accuracy; the held-out fold is only used for the final metrics.

    Raises:
        InputError: folds < 2 or a class with fewer samples than folds
    """
    if config.folds < 2:
        raise InputError(f"cross-validation needs at least 2 folds, got {config.folds}")
    counts = np.bincount(population.labels, minlength=population.num_classes)
    if int(counts.min()) < config.folds:
        weakest = int(np.argmin(counts))
        raise InputError(f"class {weakest} has {int(counts[weakest])} samples, fewer than {config.folds} folds")

    backends = _population_backends(population, basis, exact)
    splitter = StratifiedKFold(n_splits=config.folds, shuffle=True, random_state=config.seed)
    reports, models = [], []
    indices = np.arange(len(population))
    for fold, (train_idx, test_idx) in enumerate(splitter.split(indices.reshape(-1, 1), population.labels)):
        report, model = _train_fold(population, backends, train_idx, test_idx, config, basis, exact, fold, on_info)
        reports.append(report)
        models.append(model)

    def mean_std(values: List[float]) -> Tuple[float, float]:
        return float(np.mean(values)), float(np.std(values))

    result = CrossValidationReport(
        folds=reports,
        accuracy=mean_std([r.test_accuracy for r in reports]),
        precision=mean_std([r.test_precision for r in reports]),
        recall=mean_std([r.test_recall for r in reports]),
        models=models,
    )
    _emit_info(on_info, f"{config.folds}-fold accuracy {result.accuracy[0]:.4f} +/- {result.accuracy[1]:.4f}")
    return result


@dataclass
class EpochTiming:
    kernel_ms: float
    total_ms: float


def time_epochs(
    dataset: NodeDataset,
    backend: KernelBackend,
    config: TrainConfig,
    epochs: int,
) -> List[EpochTiming]:
    """
    Time full training epochs (forward, backward, update) on one backend.

    A warm-up epoch runs first and is discarded. The kernel share covers
    every backend call, including per-epoch decompositions.
    """
    if epochs < 1:
        raise InputError(f"need at least one timed epoch, got {epochs}")
    exact = isinstance(backend, ExactKernel)
    num_classes = max(dataset.num_classes, 2)
    targets = one_hot(dataset.labels, num_classes)
    model = init_model(
        [dataset.num_features, *config.hidden_dims, num_classes],
        dataset.num_nodes,
        None if exact else backend.basis,
        exact=exact,
        initial_scale=config.initial_scale,
        s_min=config.s_min,
        s_max=config.s_max,
        dropout_rate=config.dropout,
        seed=config.seed,
    )
    optimizer = make_optimizer(config)
    mask = dataset.train if dataset.train.size else np.arange(dataset.num_nodes)
    clock = Stopwatch()
    timings = []
    for epoch in range(epochs + 1):
        backend.timer.reset()
        clock.reset()
        with clock.measure():
            _, cache = forward_node(model, backend, dataset.features, mode=TRAIN, rng_seed=[config.seed, epoch])
            grads = backward_node(model, cache, targets, mask)
            model = step(model, grads, config, optimizer)
        if epoch > 0:
            timings.append(EpochTiming(backend.timer.reset(), clock.reset()))
    return timings


# Denominator floor for relative errors; gradients below it are compared absolutely.
GRADIENT_FLOOR = 1e-5
CANCELLATION_STEP = 1e-8


@dataclass
class GradCheckSample:
    """Inputs for a gradient check: a node task (with mask) or a single graph."""

    lap: SparseMatrix
    features: np.ndarray
    targets: np.ndarray
    mask: Optional[np.ndarray] = None
    task: str = "node"


@dataclass
class GroupError:
    max_rel: float
    mean_rel: float
    checked: int
    skipped: int = 0


@dataclass
class GradCheckReport:
    groups: Dict[str, GroupError]
    h: float
    tolerance: float
    warnings: List[str] = field(default_factory=list)

    @property
    def max_rel(self) -> float:
        return max((g.max_rel for g in self.groups.values()), default=0.0)

    @property
    def unchecked(self) -> List[str]:
        """Groups whose every entry sat on a ReLU kink."""
        return [name for name, group in self.groups.items() if group.checked == 0]

    @property
    def passed(self) -> bool:
        return self.max_rel < self.tolerance and not self.unchecked


def _activation_pattern(cache: ForwardCache) -> np.ndarray:
    parts = [layer.pre_activation > 0.0 for layer in cache.layers if layer.relu]
    if cache.readout_hidden_pre is not None:
        parts.append(cache.readout_hidden_pre > 0.0)
        if cache.model.readout.final_relu:
            parts.append(cache.readout_out_pre > 0.0)
    return np.concatenate([p.ravel() for p in parts]) if parts else np.zeros(0, dtype=bool)


def grad_check(
    model: Model,
    sample: GradCheckSample,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    subsample: int = 50,
    seed: int = 0,
    backend: Optional[KernelBackend] = None,
) -> GradCheckReport:
    """
    Compare analytic gradients with central differences.

    Every scale is checked; weight matrices are checked on a random subsample of
    at least ``subsample`` entries (all entries when smaller). Entries whose
    perturbation flips a ReLU are skipped and counted, since the loss is not
    differentiable across the kink. Dropout is disabled.
    """
    model = model.without_dropout()
    backend = backend or model.backend_for(sample.lap)
    warnings: List[str] = []
    if h < CANCELLATION_STEP:
        message = f"finite-difference step h={h:g} is below {CANCELLATION_STEP:g}; cancellation will inflate the error"
        logger.warning(message)
        warnings.append(message)

    def run(current: Model):
        if sample.task == "graph":
            logits, cache = forward_graph(current, backend, sample.features, mode=EVAL)
            loss, _ = softmax_cross_entropy(logits[None, :], sample.targets[None, :])
        else:
            logits, cache = forward_node(current, backend, sample.features, mode=EVAL)
            loss, _ = softmax_cross_entropy(logits, sample.targets, sample.mask)
        return loss, cache

    _, cache = run(model)
    if sample.task == "graph":
        grads = backward_graph(model, cache, sample.targets)
    else:
        grads = backward_node(model, cache, sample.targets, sample.mask)

    rng = np.random.default_rng(seed)
    groups: Dict[str, GroupError] = {}

    def check(name: str, analytic: np.ndarray, base: np.ndarray, rebuild: Callable[[np.ndarray], Model], indices) -> None:
        errors, skipped = [], 0
        for index in indices:
            plus, minus = base.copy(), base.copy()
            plus.flat[index] += h
            minus.flat[index] -= h
            loss_plus, cache_plus = run(rebuild(plus))
            loss_minus, cache_minus = run(rebuild(minus))
            if not np.array_equal(_activation_pattern(cache_plus), _activation_pattern(cache_minus)):
                skipped += 1
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            exact_value = float(analytic.flat[index])
            errors.append(abs(exact_value - numeric) / max(abs(exact_value), abs(numeric), GRADIENT_FLOOR))
        groups[name] = GroupError(
            max_rel=float(max(errors, default=0.0)),
            mean_rel=float(np.mean(errors)) if errors else 0.0,
            checked=len(errors),
            skipped=skipped,
        )

    def sampled(size: int) -> np.ndarray:
        count = min(size, max(subsample, 50))
        return np.sort(rng.choice(size, size=count, replace=False))

    scales = model.scales
    check(
        "scales",
        grads.scales,
        scales.values.copy(),
        lambda values: model.updated(scales=ScaleVector(values, min(scales.s_min, values.min()), max(scales.s_max, values.max()))),
        range(len(scales)),
    )
    for k, weight in enumerate(model.weights):
        def rebuild_weight(values, k=k):
            weights = list(model.weights)
            weights[k] = values
            return model.updated(weights=tuple(weights))

        check(f"W_{k}", grads.weights[k], weight, rebuild_weight, sampled(weight.size))
    if model.readout is not None:
        readout = model.readout
        check(
            "W_R1",
            grads.readout_w1,
            readout.w1,
            lambda values: model.updated(readout=Readout(values, readout.w2, readout.final_relu)),
            sampled(readout.w1.size),
        )
        check(
            "W_R2",
            grads.readout_w2,
            readout.w2,
            lambda values: model.updated(readout=Readout(readout.w1, values, readout.final_relu)),
            sampled(readout.w2.size),
        )

    report = GradCheckReport(groups=groups, h=h, tolerance=tolerance, warnings=warnings)
    for name in report.unchecked:
        message = f"gradcheck group {name}: all {groups[name].skipped} entries skipped at ReLU kinks, nothing compared"
        logger.warning(message)
        report.warnings.append(message)
    for name, group in groups.items():
        logger.debug("gradcheck %s: max %.2e mean %.2e (%d checked, %d skipped)", name, group.max_rel, group.mean_rel, group.checked, group.skipped)
    return report
