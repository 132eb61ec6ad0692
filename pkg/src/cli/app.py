"""
Argument parsing, logging setup and error-to-exit-status mapping.

Exit status: 0 success, 1 runtime or data error (and failed gradient checks),
2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from src.cli import commands
from src.core.errors import HeatConvError
from src.core.spectral import DEFAULT_MAX_N
from src.utils.config import Config

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
BASIS_CHOICES = ("chebyshev", "hermite", "laguerre", "exact")

Handler = Callable[[argparse.Namespace], int]


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _default(key: str) -> str:
    return f"(default: {Config.DEFAULT_CONFIG[key]})"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default="out", help="output directory for every artifact (default: out)")
    parser.add_argument("--verbose", action="store_true", help="debug logging (default: off)")
    parser.add_argument("--quiet", action="store_true", help="warnings only (default: off)")


def _add_training_flags(parser: argparse.ArgumentParser, dataset_help: str) -> None:
    # None means "not given" so lower configuration layers keep their values
    parser.add_argument("--dataset", help=dataset_help)
    parser.add_argument("--config", help="JSON experiment file (default: none)")
    parser.add_argument("--preset", help=f"named hyperparameter preset: {', '.join(sorted(Config.PRESETS))} (default: none)")
    parser.add_argument("--seed", type=int, help=f"random seed {_default('seed')}")
    parser.add_argument("--basis", choices=BASIS_CHOICES, help=f"kernel backend {_default('basis')}")
    parser.add_argument("--order", type=int, help="truncation order m (default: 20 chebyshev/laguerre, 30 hermite)")
    parser.add_argument("--b", type=float, help=f"Chebyshev spectral domain [0, b] {_default('b')}")
    parser.add_argument("--hidden", help=f"comma-separated hidden widths {_default('hidden')}")
    parser.add_argument("--lr", type=float, help=f"weight learning rate {_default('lr')}")
    parser.add_argument("--scale-lr", dest="scale_lr", type=float, help=f"scale learning rate {_default('scale_lr')}")
    parser.add_argument("--alpha", type=float, help=f"l1 scale regularisation weight {_default('alpha')}")
    parser.add_argument("--dropout", type=float, help=f"dropout rate {_default('dropout')}")
    parser.add_argument("--epochs", type=int, help=f"maximum epochs {_default('epochs')}")
    parser.add_argument("--patience", type=int, help=f"early-stopping patience {_default('patience')}")
    parser.add_argument("--folds", type=int, help=f"cross-validation folds {_default('folds')}")
    parser.add_argument("--initial-scale", dest="initial_scale", type=float, help=f"initial scale {_default('initial_scale')}")
    parser.add_argument("--s-min", dest="s_min", type=float, help=f"scale clamp lower bound {_default('s_min')}")
    parser.add_argument("--s-max", dest="s_max", type=float, help=f"scale clamp upper bound {_default('s_max')}")
    parser.add_argument("--readout-hidden", dest="readout_hidden", type=int, help=f"readout hidden width {_default('readout_hidden')}")
    parser.add_argument(
        "--linear-readout-output",
        dest="readout_final_relu",
        action="store_const",
        const=False,
        default=None,
        help="drop the ReLU on the readout output so every class logit keeps a gradient (default: ReLU on)",
    )
    parser.add_argument("--optimizer", choices=("adam", "sgd"), help=f"weight optimizer {_default('optimizer')}")
    parser.add_argument("--weight-decay", dest="weight_decay", type=float, help=f"L2 weight decay {_default('weight_decay')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatconv",
        description="Graph convolution with per-node trainable heat-kernel scales.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train-node", help="train a node classifier")
    _add_common(p)
    _add_training_flags(p, "node dataset directory (edges/features/labels/splits.tsv)")
    p.add_argument("--repeats", type=int, help=f"independent runs with seeds seed..seed+R-1 {_default('repeats')}")
    p.set_defaults(handler=commands.cmd_train_node)

    p = sub.add_parser("train-graph", help="cross-validate a graph classifier")
    _add_common(p)
    _add_training_flags(p, "graph population manifest")
    p.set_defaults(handler=commands.cmd_train_graph)

    p = sub.add_parser("approx-error", help="max kernel approximation error over a lambda grid")
    p.add_argument("--out", default=None, help="also write approx_error.tsv here (default: stdout only)")
    p.add_argument("--verbose", action="store_true", help="debug logging (default: off)")
    p.add_argument("--quiet", action="store_true", help="warnings only (default: off)")
    p.add_argument("--s", default="0.001,0.1,0.5,1,2,5", help="comma-separated scales (default: 0.001,0.1,0.5,1,2,5)")
    p.add_argument("--basis", default="all", help="comma-separated families or 'all' (default: all)")
    p.add_argument("--orders", default=None, help="comma-separated orders (default: each family's default order)")
    p.add_argument("--b", type=float, default=2.0, help="Chebyshev domain length (default: 2.0)")
    p.add_argument("--grid-points", dest="grid_points", type=int, default=commands.GRID_POINTS, help=f"grid size (default: {commands.GRID_POINTS})")
    p.set_defaults(handler=commands.cmd_approx_error)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on small fixtures")
    p.add_argument("--out", default=None, help="also write gradcheck.tsv here (default: stdout only)")
    p.add_argument("--verbose", action="store_true", help="debug logging (default: off)")
    p.add_argument("--quiet", action="store_true", help="warnings only (default: off)")
    p.add_argument("--basis", default="all", help="comma-separated backends incl. 'exact', or 'all' (default: all)")
    p.add_argument("--order", type=int, default=None, help="truncation order (default: family default)")
    p.add_argument("--b", type=float, default=2.0, help="Chebyshev domain length (default: 2.0)")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step (default: 1e-05)")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error allowed (default: 0.0001)")
    p.add_argument("--hidden", type=int, default=8, help="hidden width of the fixture models (default: 8)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.set_defaults(handler=commands.cmd_gradcheck)

    p = sub.add_parser("bench", help="time exact and polynomial backends per epoch")
    _add_common(p)
    _add_training_flags(p, "node dataset directory (default: generated SBM graphs)")
    p.add_argument("--sizes", default="50,500,2000", help=f"generated graph sizes, at most {DEFAULT_MAX_N} for exact (default: 50,500,2000)")
    p.add_argument("--backends", default="all", help="comma-separated backends incl. 'exact', or 'all' (default: all)")
    p.add_argument("--bench-epochs", dest="epochs_timed", type=int, default=10, help="timed epochs after one warm-up (default: 10)")
    p.set_defaults(handler=commands.cmd_bench)

    p = sub.add_parser("export-scales", help="rank learned node scales from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="model.bin from train-node or model_fold{k}.bin from train-graph")
    p.add_argument("--names", default=None, help="node names, one 'name[<TAB>group]' line per node (default: none)")
    p.set_defaults(handler=commands.cmd_export_scales)

    p = sub.add_parser("make-sbm", help="write a stochastic block model node dataset")
    _add_common(p)
    p.add_argument("--n-per-block", dest="n_per_block", type=int, default=100, help="nodes per block (default: 100)")
    p.add_argument("--blocks", type=int, default=2, help="number of blocks/classes (default: 2)")
    p.add_argument("--p-in", dest="p_in", type=float, default=0.1, help="within-block edge probability (default: 0.1)")
    p.add_argument("--p-out", dest="p_out", type=float, default=0.01, help="between-block edge probability (default: 0.01)")
    p.add_argument("--feat-dim", dest="feat_dim", type=int, default=16, help="feature dimension (default: 16)")
    p.add_argument("--feat-shift", dest="feat_shift", type=float, default=1.0, help="class signal in the features (default: 1.0)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.set_defaults(handler=commands.cmd_make_sbm)

    p = sub.add_parser("make-population", help="write a synthetic graph population")
    _add_common(p)
    p.add_argument("--samples-per-class", dest="samples_per_class", type=int, default=20, help="samples per class (default: 20)")
    p.add_argument("--classes", type=int, default=2, help="number of classes (default: 2)")
    p.add_argument("--nodes", type=int, default=16, help="nodes per graph (default: 16)")
    p.add_argument("--edge-probs", dest="edge_probs", default="0.1,0.5", help="edge probability per class (default: 0.1,0.5)")
    p.add_argument("--feat-shifts", dest="feat_shifts", default="0.0,1.0", help="feature shift per class (default: 0.0,1.0)")
    p.add_argument("--feat-dim", dest="feat_dim", type=int, default=4, help="feature dimension (default: 4)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.set_defaults(handler=commands.cmd_make_population)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except (HeatConvError, OSError) as exc:
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
