"""
Subcommand implementations. Each ``cmd_*`` takes parsed arguments and returns
an exit status; every artifact is written below ``--out``.
"""

from __future__ import annotations

import argparse
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.core.backends import make_backend
from src.core.checkpoint import load_model, save_model
from src.core.datasets import (
    degree_histogram_oracle,
    gen_sbm_node,
    gen_synthetic_population,
    load_graph_population,
    load_node_dataset,
    save_graph_population,
    save_node_dataset,
)
from src.core.errors import ConfigError, InputError
from src.core.graph import normalized_laplacian
from src.core.kernel import DEFAULT_ORDERS, Family, PolynomialBasis, ScaleVector, kernel_pointwise
from src.core.layers import init_model, one_hot
from src.core.training import (
    GradCheckReport,
    GradCheckSample,
    TrainConfig,
    grad_check,
    time_epochs,
    train_graph,
    train_node,
)
from src.utils.config import Config
from src.utils.file_utils import ensure_dir, iter_tsv_records, write_tsv
from src.utils.time_utils import Stopwatch, format_ms, median_min_max

logger = logging.getLogger(__name__)

EXACT = "exact"
GRID_POINTS = 2001


@dataclass
class RunConfig:
    """Resolved hyperparameters plus backend, dataset and output selection."""

    values: Dict[str, Any]
    basis: Optional[PolynomialBasis]
    exact: bool
    dataset: Optional[Path]
    out: Path
    notes: List[str] = field(default_factory=list)

    def train_config(self, seed_offset: int = 0) -> TrainConfig:
        values = dict(self.values)
        values["seed"] = int(values["seed"]) + seed_offset
        return TrainConfig.from_mapping(values)

    @property
    def backend_name(self) -> str:
        return EXACT if self.exact else self.basis.family.value


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < --preset < --config < explicit flags."""
    config = Config(getattr(args, "config", None), preset=getattr(args, "preset", None))
    flags = {key: getattr(args, key) for key in Config.DEFAULT_CONFIG if hasattr(args, key)}
    config.update(flags)
    values = config.get_all()

    name = str(values["basis"]).lower()
    notes = []
    if name == EXACT:
        basis, exact = None, True
    else:
        basis, exact = PolynomialBasis.of(name, values["order"], float(values["b"])), False
        if basis.family is Family.CHEBYSHEV:
            if getattr(args, "b", None) is None and basis.b == Config.DEFAULT_CONFIG["b"]:
                notes.append(f"b = {basis.b} (default)")
            if basis.b < 2.0:
                message = f"Chebyshev b = {basis.b} < 2 truncates the Laplacian spectrum [0, 2]"
                logger.warning(message)
                notes.append(message)
        if values["order"] is None:
            notes.append(f"order = {basis.order} (family default)")

    dataset = getattr(args, "dataset", None)
    return RunConfig(
        values=values,
        basis=basis,
        exact=exact,
        dataset=Path(dataset) if dataset else None,
        out=Path(args.out),
        notes=notes,
    )


def _write_summary(path: Path, run: RunConfig, lines: Sequence[str]) -> None:
    header = [f"backend: {run.backend_name}"]
    if run.basis is not None:
        header += [f"order: {run.basis.order}", f"b: {run.basis.b}"]
    header += [f"note: {note}" for note in run.notes]
    path.write_text("\n".join([*header, *lines]) + "\n", encoding="utf-8")


def _require_dataset(run: RunConfig) -> Path:
    if run.dataset is None:
        raise InputError("--dataset is required")
    return run.dataset


def cmd_train_node(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    dataset = load_node_dataset(_require_dataset(run))
    out = ensure_dir(run.out)
    repeats = int(run.values["repeats"])
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")

    results = []
    for r in range(repeats):
        report, model = train_node(dataset, run.train_config(seed_offset=r), run.basis, exact=run.exact)
        results.append((report, model))
    accuracies = [report.test_accuracy for report, _ in results]
    best_index = int(np.nanargmax(accuracies)) if not all(math.isnan(a) for a in accuracies) else 0
    report, model = results[best_index]

    report.write_tsv(out / "report.tsv")
    report.write_scale_history(out / "scale_history.tsv")
    save_model(model, out / "model.bin")
    _save_resolved_config(run, out)

    lines = [
        f"test_accuracy: {100.0 * report.test_accuracy:.2f}",
        f"test_precision: {report.test_precision:.4f}",
        f"test_recall: {report.test_recall:.4f}",
        f"best_epoch: {report.best_epoch}",
    ]
    if repeats > 1:
        lines += [
            f"repeats: {repeats}",
            f"test_accuracy_mean: {100.0 * float(np.mean(accuracies)):.2f}",
            f"test_accuracy_std: {100.0 * float(np.std(accuracies)):.2f}",
            f"best_seed: {int(run.values['seed']) + best_index}",
        ]
    _write_summary(out / "summary.txt", run, lines)
    print(f"test accuracy {100.0 * report.test_accuracy:.2f}% (best epoch {report.best_epoch}); artifacts in {out}")
    return 0


def _save_resolved_config(run: RunConfig, out: Path) -> None:
    config = Config()
    config.update(run.values)
    config.save(out / "config.json")


def cmd_train_graph(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    population = load_graph_population(_require_dataset(run))
    out = ensure_dir(run.out)
    result = train_graph(population, run.train_config(), run.basis, exact=run.exact)

    result.write_tsv(out / "folds.tsv")
    for k, (report, model) in enumerate(zip(result.folds, result.models)):
        report.write_tsv(out / f"report_fold{k}.tsv")
        save_model(model, out / f"model_fold{k}.bin")
    _save_resolved_config(run, out)
    lines = [
        f"folds: {len(result.folds)}",
        f"accuracy: {result.accuracy[0]:.4f} +/- {result.accuracy[1]:.4f}",
        f"precision: {result.precision[0]:.4f} +/- {result.precision[1]:.4f}",
        f"recall: {result.recall[0]:.4f} +/- {result.recall[1]:.4f}",
    ]
    _write_summary(out / "summary.txt", run, lines)
    print(f"mean accuracy {result.accuracy[0]:.4f} +/- {result.accuracy[1]:.4f}; artifacts in {out}")
    return 0


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated numbers, got '{text}'") from exc


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise InputError(f"expected comma-separated integers, got '{text}'") from exc


def _families(text: str, allow_exact: bool = False) -> List[str]:
    names = [part.strip().lower() for part in str(text).split(",") if part.strip()]
    if names == ["all"]:
        names = [family.value for family in Family] + ([EXACT] if allow_exact else [])
    valid = {family.value for family in Family} | ({EXACT} if allow_exact else set())
    unknown = [name for name in names if name not in valid]
    if unknown or not names:
        raise InputError(f"unknown basis {unknown or text!r}; choose from {sorted(valid)} or 'all'")
    return names


def approx_error_table(
    scales: Sequence[float], families: Sequence[str], orders: Optional[Sequence[int]], b: float, grid_points: int = GRID_POINTS
) -> List[tuple]:
    """Rows (family, order, b, s, max |e^{-s lambda} - approximation|) on a uniform grid over [0, 2]."""
    grid = np.linspace(0.0, 2.0, grid_points)
    rows = []
    for name in families:
        family = Family(name)
        for order in orders or [DEFAULT_ORDERS[family]]:
            basis = PolynomialBasis.of(family, order, b)
            for s in scales:
                error = float(np.max(np.abs(np.exp(-s * grid) - kernel_pointwise(s, grid, basis))))
                rows.append((family.value, order, basis.b if family is Family.CHEBYSHEV else "", float(s), error))
    return rows


def cmd_approx_error(args: argparse.Namespace) -> int:
    scales = parse_float_list(args.s)
    if any(s <= 0.0 for s in scales):
        raise InputError("scales must be > 0")
    orders = parse_int_list(args.orders) if args.orders else None
    rows = approx_error_table(scales, _families(args.basis), orders, args.b, args.grid_points)
    header = ("family", "order", "b", "s", "max_abs_error")
    comments = (f"max over {args.grid_points} uniform points on [0, 2] of |exp(-s*lambda) - approximation| (dimensionless)",)
    if args.out:
        path = write_tsv(Path(args.out) / "approx_error.tsv", rows, header=header, comments=comments)
        logger.info("wrote %s", path)
    print("#" + "\t".join(header))
    for row in rows:
        print("\t".join(str(v) for v in row[:4]) + f"\t{row[4]:.3e}")
    return 0


def gradcheck_fixtures(seed: int):
    """A 30-node SBM node task and a 12-node graph sample."""
    node_data = gen_sbm_node(15, 2, 0.3, 0.05, feat_dim=6, feat_shift=1.0, seed=seed)
    population = gen_synthetic_population(1, 2, 12, (0.3, 0.3), (0.0, 1.0), seed=seed, feat_dim=4)
    graph_sample = population.samples[1]
    return node_data, graph_sample


def run_gradcheck(basis_name: str, task: str, args: argparse.Namespace) -> GradCheckReport:
    exact = basis_name == EXACT
    basis = None if exact else PolynomialBasis.of(basis_name, args.order, args.b)
    node_data, graph_sample = gradcheck_fixtures(args.seed)
    rng = np.random.default_rng(args.seed)

    if task == "node":
        lap = normalized_laplacian(node_data.graph)
        dims = [node_data.num_features, args.hidden, node_data.num_classes]
        model = init_model(dims, node_data.num_nodes, basis, exact=exact, dropout_rate=0.0, seed=args.seed)
        sample = GradCheckSample(lap, node_data.features, one_hot(node_data.labels, node_data.num_classes), node_data.train)
    else:
        lap = normalized_laplacian(graph_sample.graph)
        dims = [graph_sample.features.shape[1], args.hidden, args.hidden]
        model = init_model(
            dims, graph_sample.num_nodes, basis, exact=exact, dropout_rate=0.0, readout_hidden=8, num_classes=2, seed=args.seed
        )
        sample = GradCheckSample(lap, graph_sample.features, one_hot([graph_sample.label], 2)[0], task="graph")

    scales = ScaleVector(rng.uniform(0.5, 2.5, size=len(model.scales)))
    model = model.updated(scales=scales)
    backend = make_backend(lap, basis, exact=exact)
    return grad_check(model, sample, h=args.h, tolerance=args.tolerance, seed=args.seed, backend=backend)


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rows = []
    passed = True
    for name in _families(args.basis, allow_exact=True):
        for task in ("node", "graph"):
            report = run_gradcheck(name, task, args)
            for message in report.warnings:
                print(f"warning: {message}")
            for group, error in report.groups.items():
                rows.append((name, task, group, error.max_rel, error.mean_rel, error.checked, error.skipped))
                print(f"{name:9s} {task:5s} {group:5s} max {error.max_rel:.2e} mean {error.mean_rel:.2e} ({error.checked} checked, {error.skipped} at kinks)")
            passed = passed and report.passed
    if args.out:
        write_tsv(
            Path(args.out) / "gradcheck.tsv",
            rows,
            header=("basis", "task", "group", "max_rel_error", "mean_rel_error", "checked", "skipped"),
            comments=(f"central differences with h={args.h:g}; tolerance {args.tolerance:g}",),
        )
    print("gradcheck " + ("passed" if passed else f"FAILED (tolerance {args.tolerance:g})"))
    return 0 if passed else 1


def bench_dataset(size: int, seed: int, feat_dim: int = 32):
    """Two-block SBM with expected within-block degree of about ten."""
    n_per_block = max(size // 2, 1)
    p_in = min(1.0, 10.0 / n_per_block)
    return gen_sbm_node(n_per_block, 2, p_in, p_in / 10.0, feat_dim=feat_dim, feat_shift=1.0, seed=seed)


def cmd_bench(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    config = run.train_config()
    names = _families(args.backends, allow_exact=True)
    if run.dataset is not None:
        datasets = [(str(run.dataset), load_node_dataset(run.dataset))]
    else:
        datasets = [(str(size), bench_dataset(size, config.seed)) for size in parse_int_list(args.sizes)]

    rows = []
    for label, dataset in datasets:
        lap = normalized_laplacian(dataset.graph)
        variants = []
        for name in names:
            if name == EXACT:
                variants += [(EXACT, None, True, True), ("exact-per-epoch", None, True, False)]
            else:
                same_family = run.basis is not None and run.basis.family.value == name
                order = run.values["order"] if same_family else None
                variants.append((name, PolynomialBasis.of(name, order, float(run.values["b"])), False, True))
        for variant, basis, exact, amortize in variants:
            setup = Stopwatch()
            with setup.measure():
                backend = make_backend(lap, basis, exact=exact, amortize=amortize)
            timings = time_epochs(dataset, backend, config, args.epochs_timed)
            kernel = median_min_max([t.kernel_ms for t in timings])
            total = median_min_max([t.total_ms for t in timings])
            rows.append((label, dataset.num_nodes, variant, len(timings), setup.elapsed_ms, *kernel, *total))
            print(f"N={dataset.num_nodes:5d} {variant:16s} kernel {format_ms(kernel[0])}  epoch {format_ms(total[0])}")

    out = ensure_dir(run.out)
    write_tsv(
        out / "bench.tsv",
        rows,
        header=(
            "dataset", "nodes", "backend", "epochs", "setup_ms",
            "kernel_median_ms", "kernel_min_ms", "kernel_max_ms",
            "epoch_median_ms", "epoch_min_ms", "epoch_max_ms",
        ),
        comments=("wall-clock milliseconds, monotonic clock; warm-up epoch discarded; medians over timed epochs",),
    )
    return 0


def read_node_names(path: Path) -> List[List[str]]:
    """``name[<TAB>group]`` per line, in node order."""
    return [fields[:2] for _, fields in iter_tsv_records(path)]


def cmd_export_scales(args: argparse.Namespace) -> int:
    model = load_model(args.checkpoint)
    scales = model.scales.values
    order = np.argsort(scales, kind="stable")
    names = None
    if args.names:
        names = read_node_names(Path(args.names))
        if len(names) != len(scales):
            raise InputError(f"{args.names} lists {len(names)} names for {len(scales)} nodes")

    rows = []
    for rank, node in enumerate(order, start=1):
        row = [rank, int(node), float(scales[node])]
        if names is not None:
            entry = names[node]
            row += [entry[0], entry[1] if len(entry) > 1 else ""]
        rows.append(row)
    header = ["rank", "node_id", "scale"] + (["name", "group"] if names is not None else [])
    path = write_tsv(
        Path(args.out) / "scales.tsv",
        rows,
        header=header,
        comments=(f"learned diffusion scales ascending; clamp [{model.scales.s_min:g}, {model.scales.s_max:g}]",),
    )
    print(f"wrote {len(rows)} scales to {path}")
    return 0


def cmd_make_sbm(args: argparse.Namespace) -> int:
    dataset = gen_sbm_node(args.n_per_block, args.blocks, args.p_in, args.p_out, args.feat_dim, args.feat_shift, args.seed)
    root = save_node_dataset(dataset, args.out)
    print(f"wrote SBM dataset (N={dataset.num_nodes}, edges={dataset.graph.num_edges}) to {root}")
    return 0


def cmd_make_population(args: argparse.Namespace) -> int:
    edge_probs = parse_float_list(args.edge_probs)
    feat_shifts = parse_float_list(args.feat_shifts)
    population = gen_synthetic_population(
        args.samples_per_class, args.classes, args.nodes, edge_probs, feat_shifts, args.seed, feat_dim=args.feat_dim
    )
    manifest = save_graph_population(population, args.out)
    oracle = degree_histogram_oracle(population, seed=args.seed)
    print(f"wrote {len(population)} samples to {manifest}; degree-histogram oracle accuracy {oracle:.3f}")
    return 0
