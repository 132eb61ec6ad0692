"""
Node-classification datasets, graph populations and their seeded synthetic
generators.

On-disk node dataset (one directory):

    edges.tsv      p<TAB>q[<TAB>weight]
    features.tsv   node_id<TAB>f_1<TAB>...<TAB>f_d
    labels.tsv     node_id<TAB>class
    splits.tsv     node_id<TAB>train|val|test

Graph population: a manifest of ``label<TAB>edge_file<TAB>feature_file`` lines,
file paths relative to the manifest. All files are UTF-8 with ``#`` comments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import NearestCentroid

from src.core.errors import (
    InconsistentPopulationError,
    InputError,
    LabelRangeError,
    MissingFileError,
    NodeIndexError,
    RaggedFeaturesError,
    SplitOverlapError,
)
from src.core.graph import Graph, degree_vector, read_edge_list, write_edge_list
from src.utils.file_utils import ensure_dir, iter_tsv_records, resolve_relative, write_tsv

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SPLIT_NAMES = ("train", "val", "test")
UNLABELED = -1


@dataclass(frozen=True)
class NodeDataset:
    """Graph, node features, labels (-1 for unlabeled) and disjoint splits."""

    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.num_nodes
        if features.ndim != 2 or features.shape[0] != n:
            raise InputError(f"features must be {n} x d, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise InputError("feature rows must be finite")
        if labels.shape != (n,):
            raise InputError(f"labels must have length {n}, got {labels.shape}")
        if np.any(labels < UNLABELED):
            raise LabelRangeError("labels must be >= 0 (or -1 for unlabeled)")

        splits = {}
        for name in SPLIT_NAMES:
            ids = np.unique(np.asarray(getattr(self, name), dtype=np.int64))
            if ids.size and (ids[0] < 0 or ids[-1] >= n):
                raise NodeIndexError(f"{name} split holds node ids outside [0, {n})")
            if np.any(labels[ids] == UNLABELED):
                raise InputError(f"{name} split holds unlabeled nodes")
            splits[name] = ids
        for first, second in (("train", "val"), ("train", "test"), ("val", "test")):
            shared = np.intersect1d(splits[first], splits[second])
            if shared.size:
                raise SplitOverlapError(f"node {int(shared[0])} is in both {first} and {second}")

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        for name, ids in splits.items():
            object.__setattr__(self, name, ids)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if np.any(self.labels >= 0) else 0

    def mask(self, split: str) -> np.ndarray:
        """Boolean node mask of a split."""
        out = np.zeros(self.num_nodes, dtype=bool)
        out[getattr(self, split)] = True
        return out


@dataclass(frozen=True)
class GraphSample:
    graph: Graph
    features: np.ndarray
    label: int
    name: str = ""

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


@dataclass(frozen=True)
class GraphPopulation:
    """Labelled graphs on one fixed node set."""

    samples: Tuple[GraphSample, ...]
    num_classes: int

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        if not samples:
            raise InputError("a graph population needs at least one sample")
        first = samples[0]
        for sample in samples[1:]:
            if sample.num_nodes != first.num_nodes:
                raise InconsistentPopulationError(
                    f"sample {sample.name or '?'} has {sample.num_nodes} nodes, "
                    f"{first.name or 'the first sample'} has {first.num_nodes}"
                )
            if sample.features.shape[1] != first.features.shape[1]:
                raise InputError(f"sample {sample.name or '?'} has a different feature width")
        labels = np.array([s.label for s in samples], dtype=np.int64)
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise LabelRangeError(f"sample labels must lie in [0, {self.num_classes})")
        missing = sorted(set(range(self.num_classes)) - set(labels.tolist()))
        if missing:
            raise InputError(f"classes without samples: {missing}")
        object.__setattr__(self, "samples", samples)

    @property
    def num_nodes(self) -> int:
        return self.samples[0].num_nodes

    @property
    def num_features(self) -> int:
        return int(self.samples[0].features.shape[1])

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.samples)


def _read_features(path: Path) -> np.ndarray:
    rows: Dict[int, List[float]] = {}
    width: Optional[int] = None
    for line_no, fields in iter_tsv_records(path):
        try:
            node = int(fields[0])
            values = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise InputError(f"{path}:{line_no}: {exc}") from exc
        if node < 0:
            raise NodeIndexError(f"{path}:{line_no}: negative node id {node}")
        if width is None:
            width = len(values)
        if len(values) != width or width == 0:
            raise RaggedFeaturesError(f"{path}:{line_no}: expected {width} features, got {len(values)}")
        if node in rows:
            raise InputError(f"{path}:{line_no}: node {node} listed twice")
        rows[node] = values

    if not rows:
        raise InputError(f"{path}: no feature rows")
    n = max(rows) + 1
    if len(rows) != n:
        missing = next(p for p in range(n) if p not in rows)
        raise NodeIndexError(f"{path}: node {missing} has no feature row")
    features = np.array([rows[p] for p in range(n)], dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise InputError(f"{path}: non-finite feature values")
    return features


def _read_labels(path: Path, num_nodes: int) -> np.ndarray:
    labels = np.full(num_nodes, UNLABELED, dtype=np.int64)
    for line_no, fields in iter_tsv_records(path):
        if len(fields) != 2:
            raise InputError(f"{path}:{line_no}: expected node_id<TAB>class")
        try:
            node, label = int(fields[0]), int(fields[1])
        except ValueError as exc:
            raise InputError(f"{path}:{line_no}: {exc}") from exc
        if not 0 <= node < num_nodes:
            raise NodeIndexError(f"{path}:{line_no}: node {node} outside [0, {num_nodes})")
        if label < 0:
            raise LabelRangeError(f"{path}:{line_no}: class {label} is negative")
        labels[node] = label

    present = np.unique(labels[labels >= 0])
    # class ids must be contiguous 0..J-1
    if present.size and present[-1] >= present.size:
        gap = next(j for j in range(present.size + 1) if j not in set(present.tolist()))
        raise LabelRangeError(f"{path}: class {int(present[-1])} out of range, class {gap} has no nodes")
    return labels


def _read_splits(path: Path, num_nodes: int) -> Dict[str, List[int]]:
    splits: Dict[str, List[int]] = {name: [] for name in SPLIT_NAMES}
    seen: Dict[int, Tuple[str, int]] = {}
    for line_no, fields in iter_tsv_records(path):
        if len(fields) != 2:
            raise InputError(f"{path}:{line_no}: expected node_id<TAB>split")
        try:
            node = int(fields[0])
        except ValueError as exc:
            raise InputError(f"{path}:{line_no}: {exc}") from exc
        name = fields[1].lower()
        if name not in splits:
            raise InputError(f"{path}:{line_no}: unknown split '{fields[1]}'")
        if not 0 <= node < num_nodes:
            raise NodeIndexError(f"{path}:{line_no}: node {node} outside [0, {num_nodes})")
        if node in seen and seen[node][0] != name:
            other, other_line = seen[node]
            raise SplitOverlapError(f"{path}:{line_no}: node {node} already in {other} (line {other_line})")
        seen[node] = (name, line_no)
        splits[name].append(node)
    return splits


def load_node_dataset(directory: PathLike) -> NodeDataset:
    """
    Load a node dataset directory.

    Raises:
        MissingFileError: a required file is absent
        RaggedFeaturesError: feature rows of different widths
        LabelRangeError: negative or non-contiguous class ids
        NodeIndexError: a node id outside [0, N) (the message names the line)
        SplitOverlapError: a node listed in two splits
    """
    root = Path(directory)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory not found: {root}")
    features = _read_features(root / "features.tsv")
    n = features.shape[0]
    graph = read_edge_list(root / "edges.tsv", num_nodes=n)
    labels = _read_labels(root / "labels.tsv", n)
    splits = _read_splits(root / "splits.tsv", n)
    for name, ids in splits.items():
        unlabeled = [p for p in ids if labels[p] == UNLABELED]
        if unlabeled:
            raise LabelRangeError(f"{root / 'splits.tsv'}: node {unlabeled[0]} in {name} has no label")
    dataset = NodeDataset(graph=graph, features=features, labels=labels, **{k: np.array(v, dtype=np.int64) for k, v in splits.items()})
    logger.info(
        "loaded %s: N=%d, d=%d, classes=%d, train/val/test=%d/%d/%d",
        root, n, dataset.num_features, dataset.num_classes, dataset.train.size, dataset.val.size, dataset.test.size,
    )
    return dataset


def _feature_rows(features: np.ndarray) -> List[list]:
    return [[p, *(float(v) for v in row)] for p, row in enumerate(features)]


def save_node_dataset(dataset: NodeDataset, directory: PathLike) -> Path:
    root = ensure_dir(directory)
    write_edge_list(dataset.graph, root / "edges.tsv")
    write_tsv(root / "features.tsv", _feature_rows(dataset.features), header=("node_id", "features..."))
    labelled = [(p, int(label)) for p, label in enumerate(dataset.labels) if label >= 0]
    write_tsv(root / "labels.tsv", labelled, header=("node_id", "class"))
    split_rows = [(int(p), name) for name in SPLIT_NAMES for p in getattr(dataset, name)]
    write_tsv(root / "splits.tsv", split_rows, header=("node_id", "split"))
    return root


def load_graph_population(manifest: PathLike) -> GraphPopulation:
    """
    Load every sample listed in a manifest.

    Raises:
        InputError: empty manifest or malformed line
        InconsistentPopulationError: samples disagree on N (both files named)
    """
    manifest_path = Path(manifest)
    samples: List[GraphSample] = []
    reference: Optional[Tuple[int, Path]] = None
    for line_no, fields in iter_tsv_records(manifest_path):
        if len(fields) != 3:
            raise InputError(f"{manifest_path}:{line_no}: expected label<TAB>edge_file<TAB>feature_file")
        try:
            label = int(fields[0])
        except ValueError as exc:
            raise InputError(f"{manifest_path}:{line_no}: {exc}") from exc
        if label < 0:
            raise LabelRangeError(f"{manifest_path}:{line_no}: class {label} is negative")
        edge_file = resolve_relative(manifest_path, fields[1])
        feature_file = resolve_relative(manifest_path, fields[2])

        features = _read_features(feature_file)
        n = features.shape[0]
        if reference is None:
            reference = (n, feature_file)
        elif n != reference[0]:
            raise InconsistentPopulationError(
                f"{manifest_path}:{line_no}: {feature_file} has {n} nodes but {reference[1]} has {reference[0]}"
            )
        graph = read_edge_list(edge_file, num_nodes=n)
        samples.append(GraphSample(graph=graph, features=features, label=label, name=edge_file.stem))

    if not samples:
        raise InputError(f"{manifest_path}: manifest lists no samples")
    num_classes = max(s.label for s in samples) + 1
    population = GraphPopulation(samples=tuple(samples), num_classes=num_classes)
    logger.info("loaded %d samples (N=%d, classes=%d) from %s", len(population), population.num_nodes, num_classes, manifest_path)
    return population


def save_graph_population(population: GraphPopulation, directory: PathLike) -> Path:
    """Write one edge and one feature file per sample plus ``manifest.tsv``; returns the manifest."""
    root = ensure_dir(directory)
    rows = []
    for t, sample in enumerate(population.samples):
        edge_name, feature_name = f"sample_{t:04d}_edges.tsv", f"sample_{t:04d}_features.tsv"
        write_edge_list(sample.graph, root / edge_name)
        write_tsv(root / feature_name, _feature_rows(sample.features), header=("node_id", "features..."))
        rows.append((sample.label, edge_name, feature_name))
    return write_tsv(root / "manifest.tsv", rows, header=("label", "edge_file", "feature_file"))


def _random_graph(rng: np.random.Generator, probs: np.ndarray) -> Graph:
    """Independent edges with probability probs[p, q] for p < q."""
    n = probs.shape[0]
    draws = rng.random((n, n))
    upper = np.triu(draws < probs, k=1)
    adjacency = sparse.csr_matrix(upper.astype(np.float64))
    adjacency = sparse.csr_matrix(adjacency + adjacency.T)
    adjacency.sort_indices()
    return Graph(adjacency)


def _stratified_split(rng: np.random.Generator, labels: np.ndarray, fractions=(0.6, 0.2)) -> Dict[str, np.ndarray]:
    splits: Dict[str, List[int]] = {name: [] for name in SPLIT_NAMES}
    for label in np.unique(labels):
        members = rng.permutation(np.nonzero(labels == label)[0])
        n_train = int(round(fractions[0] * members.size))
        n_val = int(round(fractions[1] * members.size))
        splits["train"].extend(members[:n_train].tolist())
        splits["val"].extend(members[n_train:n_train + n_val].tolist())
        splits["test"].extend(members[n_train + n_val:].tolist())
    return {name: np.sort(np.array(ids, dtype=np.int64)) for name, ids in splits.items()}


def gen_sbm_node(
    n_per_block: int,
    blocks: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_shift: float,
    seed: int,
) -> NodeDataset:
    """
    Stochastic block model node-classification task.

    Node p belongs to block p // n_per_block. Features are standard normal plus
    ``feat_shift`` on the feature dimensions j with j % blocks equal to the
    node's block. Each class is split 60/20/20 into train/val/test.

    Raises:
        InputError: invalid sizes or probabilities outside 0 <= p_out < p_in <= 1
    """
    if n_per_block < 1 or blocks < 1 or feat_dim < 1:
        raise InputError("n_per_block, blocks and feat_dim must be positive")
    if not 0.0 <= p_out < p_in <= 1.0:
        raise InputError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")

    rng = np.random.default_rng(seed)
    n = n_per_block * blocks
    labels = np.arange(n) // n_per_block
    same_block = labels[:, None] == labels[None, :]
    graph = _random_graph(rng, np.where(same_block, p_in, p_out))

    pattern = (np.arange(feat_dim)[None, :] % blocks) == labels[:, None]
    features = rng.standard_normal((n, feat_dim)) + feat_shift * pattern
    splits = _stratified_split(rng, labels)
    logger.debug("generated SBM: N=%d, edges=%d", n, graph.num_edges)
    return NodeDataset(graph=graph, features=features, labels=labels, **splits)


def gen_synthetic_population(
    samples_per_class: int,
    num_classes: int,
    n_nodes: int,
    edge_prob_by_class: Sequence[float],
    feat_shift_by_class: Sequence[float],
    seed: int,
    feat_dim: int = 4,
) -> GraphPopulation:
    """
    Erdos-Renyi graphs on a fixed node set with class-dependent edge density and
    class-shifted standard-normal node features.

    Raises:
        InputError: n_nodes < 2 or parameter lists not of length num_classes
    """
    if n_nodes < 2:
        raise InputError(f"n_nodes must be >= 2, got {n_nodes}")
    if samples_per_class < 1 or num_classes < 1 or feat_dim < 1:
        raise InputError("samples_per_class, num_classes and feat_dim must be positive")
    if len(edge_prob_by_class) != num_classes or len(feat_shift_by_class) != num_classes:
        raise InputError(f"class parameter lists must have length {num_classes}")
    if any(not 0.0 <= p <= 1.0 for p in edge_prob_by_class):
        raise InputError("edge probabilities must lie in [0, 1]")

    rng = np.random.default_rng(seed)
    samples = []
    for label in range(num_classes):
        probs = np.full((n_nodes, n_nodes), float(edge_prob_by_class[label]))
        for index in range(samples_per_class):
            graph = _random_graph(rng, probs)
            features = rng.standard_normal((n_nodes, feat_dim)) + float(feat_shift_by_class[label])
            samples.append(GraphSample(graph=graph, features=features, label=label, name=f"class{label}_{index:03d}"))
    return GraphPopulation(samples=tuple(samples), num_classes=num_classes)


def degree_histograms(population: GraphPopulation) -> np.ndarray:
    """Row t is the normalised histogram of integer degrees 0..N-1 in sample t."""
    n = population.num_nodes
    rows = []
    for sample in population.samples:
        degrees = np.clip(np.rint(degree_vector(sample.graph)).astype(np.int64), 0, n - 1)
        rows.append(np.bincount(degrees, minlength=n) / n)
    return np.array(rows, dtype=np.float64)


def degree_histogram_oracle(population: GraphPopulation, folds: int = 5, seed: int = 0) -> float:
    """
    Cross-validated accuracy of a nearest-centroid classifier on degree
    histograms; a structural separability certificate for a population.
    """
    labels = population.labels
    smallest = int(np.bincount(labels).min())
    folds = min(folds, smallest)
    if folds < 2:
        raise InputError("every class needs at least two samples for the degree-histogram oracle")
    histograms = degree_histograms(population)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    correct = 0
    for train_idx, test_idx in splitter.split(histograms, labels):
        classifier = NearestCentroid().fit(histograms[train_idx], labels[train_idx])
        correct += int(np.sum(classifier.predict(histograms[test_idx]) == labels[test_idx]))
    return correct / len(labels)
