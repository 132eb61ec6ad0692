from pathlib import Path

import numpy as np
import pytest

from src.cli.app import build_parser, main
from src.cli.commands import approx_error_table, parse_float_list, resolve_run_config
from src.core.checkpoint import load_model
from src.core.errors import InputError

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _data_lines(path):
    return [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]


@pytest.fixture()
def sbm_dir(tmp_path):
    target = tmp_path / "sbm"
    code = main(["make-sbm", "--out", str(target), "--n-per-block", "10", "--p-in", "0.5", "--p-out", "0.05", "--feat-dim", "4", "--quiet"])
    assert code == 0
    return target


def _train_node(dataset, out, *extra):
    return main(["train-node", "--dataset", str(dataset), "--out", str(out), "--epochs", "4", "--hidden", "8", "--quiet", *extra])


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert "train-node" in capsys.readouterr().out
    assert main(["no-such-command"]) == 2
    assert main(["train-node", "--basis", "legendre"]) == 2


def test_make_sbm_then_train_node(sbm_dir, tmp_path):
    out = tmp_path / "run"

    assert _train_node(sbm_dir, out, "--basis", "chebyshev") == 0

    for name in ("report.tsv", "scale_history.tsv", "model.bin", "config.json", "summary.txt"):
        assert (out / name).exists(), name
    summary = (out / "summary.txt").read_text(encoding="utf-8")
    assert "backend: chebyshev" in summary
    assert "note: b = 2.0 (default)" in summary
    assert "note: order = 20 (family default)" in summary
    accuracy_line = next(line for line in summary.splitlines() if line.startswith("test_accuracy: "))
    assert len(accuracy_line.split(": ")[1].split(".")[1]) == 2


def test_train_node_artifacts_are_deterministic(sbm_dir, tmp_path):
    assert _train_node(sbm_dir, tmp_path / "a", "--basis", "laguerre", "--seed", "3") == 0
    assert _train_node(sbm_dir, tmp_path / "b", "--basis", "laguerre", "--seed", "3") == 0

    for name in ("summary.txt", "config.json", "scale_history.tsv", "model.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_chebyshev_b_below_two_is_noted(sbm_dir, tmp_path):
    assert _train_node(sbm_dir, tmp_path / "run", "--basis", "chebyshev", "--b", "1.5", "--order", "10") == 0

    summary = (tmp_path / "run" / "summary.txt").read_text(encoding="utf-8")
    assert "b: 1.5" in summary
    assert "truncates" in summary
    assert "(default)" not in summary


def test_repeats_summarise_every_seed(sbm_dir, tmp_path):
    assert _train_node(sbm_dir, tmp_path / "run", "--basis", "laguerre", "--repeats", "2") == 0

    summary = (tmp_path / "run" / "summary.txt").read_text(encoding="utf-8")
    assert "repeats: 2" in summary
    assert "test_accuracy_mean: " in summary


def test_train_node_errors_exit_nonzero(sbm_dir, tmp_path, capsys):
    assert _train_node(tmp_path / "missing", tmp_path / "run") == 1
    assert "error:" in capsys.readouterr().err
    assert _train_node(FIXTURES / "errors" / "split_overlap", tmp_path / "run") == 1
    assert _train_node(sbm_dir, tmp_path / "run", "--lr", "0") == 1
    assert main(["train-node", "--out", str(tmp_path / "run"), "--quiet"]) == 1


def test_config_file_and_preset_layering(tmp_path):
    config_path = tmp_path / "experiment.json"
    config_path.write_text('{"preset": "citeseer", "epochs": 7}', encoding="utf-8")
    args = build_parser().parse_args(["train-node", "--config", str(config_path), "--alpha", "0.5", "--out", str(tmp_path)])

    run = resolve_run_config(args)

    assert run.values["hidden"] == [32]
    assert run.values["epochs"] == 7
    assert run.values["alpha"] == 0.5
    assert run.basis.b == 1.5
    assert run.train_config(seed_offset=2).seed == 2


def test_export_scales_ranks_ascending(sbm_dir, tmp_path):
    assert _train_node(sbm_dir, tmp_path / "run", "--basis", "laguerre") == 0
    names = tmp_path / "names.tsv"
    names.write_text("".join(f"region_{p}\t{'left' if p < 10 else 'right'}\n" for p in range(20)), encoding="utf-8")

    code = main(["export-scales", "--checkpoint", str(tmp_path / "run" / "model.bin"), "--names", str(names), "--out", str(tmp_path / "exp"), "--quiet"])

    assert code == 0
    rows = _data_lines(tmp_path / "exp" / "scales.tsv")
    assert [int(row[0]) for row in rows] == list(range(1, 21))
    scales = [float(row[2]) for row in rows]
    assert scales == sorted(scales)
    assert all(row[3] == f"region_{row[1]}" for row in rows)
    assert {row[4] for row in rows} == {"left", "right"}


def test_export_scales_rejects_name_count_mismatch(sbm_dir, tmp_path):
    assert _train_node(sbm_dir, tmp_path / "run", "--basis", "laguerre") == 0
    names = tmp_path / "names.tsv"
    names.write_text("only_one\n", encoding="utf-8")

    assert main(["export-scales", "--checkpoint", str(tmp_path / "run" / "model.bin"), "--names", str(names), "--out", str(tmp_path)]) == 1
    assert main(["export-scales", "--checkpoint", str(tmp_path / "absent.bin"), "--out", str(tmp_path)]) == 1


def test_train_graph_on_fixture_population(tmp_path):
    manifest = FIXTURES / "population" / "manifest.tsv"
    args = ["train-graph", "--dataset", str(manifest), "--epochs", "2", "--hidden", "4", "--readout-hidden", "4", "--basis", "laguerre", "--quiet"]

    assert main([*args, "--folds", "2", "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--folds", "2", "--out", str(tmp_path / "b")]) == 0
    assert main([*args, "--folds", "3", "--out", str(tmp_path / "c")]) == 1

    assert [row[0] for row in _data_lines(tmp_path / "a" / "folds.tsv")] == ["0", "1", "mean", "std"]
    assert (tmp_path / "a" / "folds.tsv").read_bytes() == (tmp_path / "b" / "folds.tsv").read_bytes()
    assert (tmp_path / "a" / "model_fold1.bin").exists()
    assert "accuracy: " in (tmp_path / "a" / "summary.txt").read_text(encoding="utf-8")


def test_train_graph_linear_readout_output_flag(tmp_path):
    manifest = FIXTURES / "population" / "manifest.tsv"
    args = ["train-graph", "--dataset", str(manifest), "--epochs", "2", "--hidden", "4", "--folds", "2", "--quiet"]

    assert main([*args, "--linear-readout-output", "--out", str(tmp_path / "linear")]) == 0
    assert main([*args, "--out", str(tmp_path / "relu")]) == 0

    assert load_model(tmp_path / "linear" / "model_fold0.bin").readout.final_relu is False
    assert load_model(tmp_path / "relu" / "model_fold0.bin").readout.final_relu is True


def test_make_population_then_train_graph(tmp_path, capsys):
    pop = tmp_path / "pop"
    assert main(["make-population", "--out", str(pop), "--samples-per-class", "3", "--nodes", "6", "--quiet"]) == 0
    assert "oracle accuracy" in capsys.readouterr().out

    code = main(
        ["train-graph", "--dataset", str(pop / "manifest.tsv"), "--folds", "3", "--epochs", "1", "--hidden", "3", "--out", str(tmp_path / "run"), "--quiet"]
    )
    assert code == 0


def test_approx_error_command(tmp_path, capsys):
    assert main(["approx-error", "--s", "0.5,1", "--basis", "laguerre,chebyshev", "--out", str(tmp_path), "--quiet"]) == 0

    printed = capsys.readouterr().out.splitlines()
    rows = _data_lines(tmp_path / "approx_error.tsv")
    assert printed[0].startswith("#family")
    assert len(printed) == 5
    assert [(row[0], row[1], row[3]) for row in rows] == [
        ("laguerre", "20", "0.5"), ("laguerre", "20", "1.0"), ("chebyshev", "20", "0.5"), ("chebyshev", "20", "1.0"),
    ]
    assert rows[0][2] == ""
    assert rows[2][2] == "2.0"
    assert main(["approx-error", "--s", "0", "--quiet"]) == 1
    assert main(["approx-error", "--basis", "legendre", "--quiet"]) == 1


def test_approx_error_table_values():
    rows = approx_error_table([1.0], ["laguerre"], [5, 20], b=2.0)

    assert [row[1] for row in rows] == [5, 20]
    assert rows[1][4] >= 2.0**-21 - 1e-15
    assert rows[1][4] < 1e-4 < rows[0][4]


def test_gradcheck_command(tmp_path, capsys):
    code = main(["gradcheck", "--basis", "laguerre,chebyshev", "--out", str(tmp_path), "--quiet"])

    assert code == 0
    assert "gradcheck passed" in capsys.readouterr().out
    rows = _data_lines(tmp_path / "gradcheck.tsv")
    assert {(row[0], row[1]) for row in rows} == {("laguerre", "node"), ("laguerre", "graph"), ("chebyshev", "node"), ("chebyshev", "graph")}
    assert all(float(row[3]) < 1e-4 for row in rows)


def test_gradcheck_warns_about_tiny_steps(capsys):
    main(["gradcheck", "--basis", "laguerre", "--h", "1e-10", "--quiet"])

    assert "warning: finite-difference step" in capsys.readouterr().out


def test_bench_command(tmp_path):
    code = main(
        ["bench", "--sizes", "30", "--backends", "laguerre,exact", "--bench-epochs", "2", "--hidden", "4", "--out", str(tmp_path), "--quiet"]
    )

    assert code == 0
    rows = _data_lines(tmp_path / "bench.tsv")
    assert [row[2] for row in rows] == ["laguerre", "exact", "exact-per-epoch"]
    assert all(row[1] == "30" and row[3] == "2" for row in rows)
    assert all(np.isfinite(float(value)) for row in rows for value in row[4:])


def test_parse_float_list():
    assert parse_float_list("0.5, 1,2") == [0.5, 1.0, 2.0]
    with pytest.raises(InputError):
        parse_float_list("1,x")
