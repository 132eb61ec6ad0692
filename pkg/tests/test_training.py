from pathlib import Path

import numpy as np
import pytest

from src.core.backends import make_backend
from src.core.datasets import gen_sbm_node, gen_synthetic_population, load_graph_population, load_node_dataset
from src.core.errors import ConfigError, InputError, NumericalError
from src.core.graph import build_graph, normalized_laplacian
from src.core.kernel import PolynomialBasis, ScaleVector
from src.core.layers import Gradients, Model, backward_node, forward_node, init_model, one_hot, softmax_cross_entropy
from src.core.training import (
    SGD,
    Adam,
    GradCheckSample,
    TrainConfig,
    grad_check,
    regularized_scale_grad,
    revive_dead_outputs,
    step,
    time_epochs,
    total_loss,
    train_graph,
    train_node,
)

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def _tiny_config(**overrides):
    values = dict(epochs=5, patience=50, hidden_dims=(8,), seed=0, dropout=0.5)
    values.update(overrides)
    return TrainConfig(**values)


def _one_layer_model(scales):
    return Model(weights=(np.ones((2, 2)),), scales=scales, basis=PolynomialBasis.of("laguerre"))


def test_total_loss_adds_l1_penalty():
    assert total_loss(0.5, np.array([1.0, 2.0]), 0.1) == pytest.approx(0.8)
    assert total_loss(0.5, ScaleVector.uniform(4, 2.0), 0.0) == 0.5


def test_regularized_scale_grad():
    scales = ScaleVector(np.array([0.5, 3.0]))

    assert np.allclose(regularized_scale_grad(np.array([1.0, -1.0]), scales, 0.25), [1.25, -0.75])


def test_step_projects_scales_into_bounds():
    model = _one_layer_model(ScaleVector(np.array([0.002, 9.5])))
    grads = Gradients(loss=1.0, weights=[np.zeros((2, 2))], scales=np.array([10.0, -10.0]))

    updated = step(model, grads, TrainConfig(beta_s=1.0, alpha=0.0))

    assert list(updated.scales.values) == [1e-3, 10.0]


def test_step_with_zero_scale_rate_keeps_scales():
    model = _one_layer_model(ScaleVector(np.array([0.7, 1.3])))
    grads = Gradients(loss=1.0, weights=[np.ones((2, 2))], scales=np.array([5.0, -5.0]))

    updated = step(model, grads, TrainConfig(beta_s=0.0, lr_w=0.5))

    assert np.array_equal(updated.scales.values, model.scales.values)
    assert np.allclose(updated.weights[0], 0.5)


def test_step_rejects_non_finite_gradients():
    model = _one_layer_model(ScaleVector.uniform(2, 1.0))
    grads = Gradients(loss=1.0, weights=[np.zeros((2, 2))], scales=np.array([np.nan, 0.0]))

    with pytest.raises(NumericalError):
        step(model, grads, TrainConfig())


def test_sgd_minimises_a_parabola():
    optimizer = SGD(0.1)
    x = np.array([3.0])
    for _ in range(200):
        (x,) = optimizer.update([x], [2.0 * (x - 1.0)])

    assert x[0] == pytest.approx(1.0, abs=1e-8)


def test_adam_first_step_moves_by_learning_rate():
    optimizer = Adam(0.01)

    (updated,) = optimizer.update([np.array([1.0, -1.0])], [np.array([100.0, -0.001])])

    assert np.allclose(updated, [0.99, -0.99], atol=1e-6)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_w=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(initial_scale=20.0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainConfig(dropout=1.0)


def test_train_config_from_cli_keys():
    config = TrainConfig.from_mapping(
        {
            "lr": 0.05, "scale_lr": 1.0, "alpha": 0.2, "epochs": 7, "patience": 3, "seed": 4,
            "initial_scale": 1.5, "s_min": 0.01, "s_max": 5.0, "hidden": [16, 8], "folds": 3,
            "dropout": 0.0, "readout_hidden": 4, "optimizer": "SGD", "weight_decay": 0.0,
        }
    )

    assert config.lr_w == 0.05
    assert config.beta_s == 1.0
    assert config.hidden_dims == (16, 8)
    assert config.optimizer == "sgd"


def test_zero_epochs_reports_initial_model():
    dataset = gen_sbm_node(10, 2, 0.5, 0.05, 4, 1.0, seed=0)

    report, model = train_node(dataset, _tiny_config(epochs=0), PolynomialBasis.of("laguerre"))

    assert [r.epoch for r in report.records] == [0]
    assert report.best_epoch == 0
    assert 0.0 <= report.test_accuracy <= 1.0
    assert np.array_equal(model.scales.values, np.full(20, 2.0))


def test_training_is_deterministic():
    dataset = gen_sbm_node(10, 2, 0.5, 0.05, 4, 1.0, seed=1)
    config = _tiny_config(epochs=6)

    first, first_model = train_node(dataset, config, PolynomialBasis.of("chebyshev"))
    second, second_model = train_node(dataset, config, PolynomialBasis.of("chebyshev"))

    assert [r.train_loss for r in first.records] == [r.train_loss for r in second.records]
    assert [r.val_acc for r in first.records] == [r.val_acc for r in second.records]
    assert first.best_epoch == second.best_epoch
    assert np.array_equal(first_model.scales.values, second_model.scales.values)


def test_large_alpha_drives_scales_to_lower_bound():
    dataset = gen_sbm_node(10, 2, 0.5, 0.05, 4, 1.0, seed=2)
    config = _tiny_config(epochs=4, alpha=1000.0, beta_s=1.0)

    report, _ = train_node(dataset, config, PolynomialBasis.of("laguerre"))

    last_epoch, last_scales = report.scale_history[-1]
    assert last_epoch == 4
    assert np.all(last_scales == config.s_min)


def test_scale_history_uses_quarter_epochs():
    dataset = gen_sbm_node(8, 2, 0.5, 0.05, 3, 1.0, seed=3)

    report, _ = train_node(dataset, _tiny_config(epochs=8), PolynomialBasis.of("hermite", 10))

    assert [epoch for epoch, _ in report.scale_history] == [0, 2, 4, 6, 8]


def test_early_stopping_respects_patience():
    dataset = gen_sbm_node(8, 2, 0.5, 0.05, 3, 0.0, seed=4)

    # a step far below one ulp leaves the model unchanged, so nothing ever improves
    config = _tiny_config(epochs=100, patience=2, lr_w=1e-300, beta_s=0.0, dropout=0.0)

    report, _ = train_node(dataset, config, PolynomialBasis.of("laguerre"))

    assert report.best_epoch == 0
    assert report.records[-1].epoch == 2


def test_train_node_on_toy_fixture_writes_report(tmp_path):
    dataset = load_node_dataset(FIXTURES / "toy2")
    messages = []

    report, _ = train_node(dataset, _tiny_config(epochs=3, dropout=0.0), PolynomialBasis.of("chebyshev"), on_info=messages.append)
    report.write_tsv(tmp_path / "report.tsv")
    report.write_scale_history(tmp_path / "scale_history.tsv")

    lines = (tmp_path / "report.tsv").read_text(encoding="utf-8").splitlines()
    assert report.monitor == "train"
    assert lines[-1].startswith("#summary\t")
    assert "best_epoch=" in lines[-1]
    assert len([line for line in lines if not line.startswith("#")]) == 4
    assert (tmp_path / "scale_history.tsv").exists()
    assert any("best epoch" in message for message in messages)


def test_failing_progress_hook_is_ignored():
    dataset = gen_sbm_node(6, 2, 0.5, 0.05, 3, 1.0, seed=5)

    def hook(message):
        raise RuntimeError("listener went away")

    report, _ = train_node(dataset, _tiny_config(epochs=2), PolynomialBasis.of("laguerre"), on_info=hook)

    assert len(report.records) == 3


def test_train_node_requires_training_nodes():
    dataset = load_node_dataset(FIXTURES / "toy2")
    empty = type(dataset)(dataset.graph, dataset.features, dataset.labels, train=[], val=[], test=[1])

    with pytest.raises(InputError):
        train_node(empty, _tiny_config(), PolynomialBasis.of("laguerre"))


def test_exact_backend_trains_like_chebyshev():
    dataset = gen_sbm_node(8, 2, 0.5, 0.05, 3, 1.0, seed=6)
    config = _tiny_config(epochs=3, optimizer="sgd")

    approx, _ = train_node(dataset, config, PolynomialBasis.of("chebyshev"))
    exact, _ = train_node(dataset, config, None, exact=True)

    assert exact.backend == "exact"
    for a, b in zip(approx.records, exact.records):
        assert a.train_loss == pytest.approx(b.train_loss, rel=1e-6)


def test_train_graph_on_fixture_population(tmp_path):
    population = load_graph_population(FIXTURES / "population" / "manifest.tsv")
    config = _tiny_config(epochs=3, folds=2, hidden_dims=(4,), readout_hidden=4)

    result = train_graph(population, config, PolynomialBasis.of("laguerre"))
    result.write_tsv(tmp_path / "folds.tsv")

    assert len(result.folds) == 2
    assert all(fold.monitor == "train" for fold in result.folds)
    assert 0.0 <= result.accuracy[0] <= 1.0
    rows = [line.split("\t") for line in (tmp_path / "folds.tsv").read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    assert [row[0] for row in rows] == ["0", "1", "mean", "std"]


def test_train_graph_is_deterministic():
    population = gen_synthetic_population(3, 2, 6, [0.2, 0.7], [0.0, 1.0], seed=1, feat_dim=2)
    config = _tiny_config(epochs=2, folds=3, hidden_dims=(3,), readout_hidden=3)

    first = train_graph(population, config, PolynomialBasis.of("chebyshev"))
    second = train_graph(population, config, PolynomialBasis.of("chebyshev"))

    assert first.accuracy == second.accuracy
    assert [f.scales.tolist() for f in first.folds] == [f.scales.tolist() for f in second.folds]


def test_train_graph_fold_checks():
    population = load_graph_population(FIXTURES / "population" / "manifest.tsv")

    with pytest.raises(InputError):
        train_graph(population, _tiny_config(folds=1), PolynomialBasis.of("laguerre"))
    with pytest.raises(InputError):
        train_graph(population, _tiny_config(folds=3), PolynomialBasis.of("laguerre"))


def test_time_epochs_discards_warm_up():
    dataset = gen_sbm_node(10, 2, 0.5, 0.05, 4, 1.0, seed=7)
    lap = normalized_laplacian(dataset.graph)

    timings = time_epochs(dataset, make_backend(lap, PolynomialBasis.of("laguerre")), _tiny_config(), epochs=3)
    exact_timings = time_epochs(dataset, make_backend(lap, None, exact=True, amortize=False), _tiny_config(), epochs=2)

    assert len(timings) == 3
    assert len(exact_timings) == 2
    assert all(t.total_ms >= t.kernel_ms >= 0.0 for t in timings + exact_timings)
    with pytest.raises(InputError):
        time_epochs(dataset, make_backend(lap, PolynomialBasis.of("laguerre")), _tiny_config(), epochs=0)


def test_grad_check_on_thirty_node_graph():
    dataset = gen_sbm_node(15, 2, 0.4, 0.05, 4, 1.0, seed=8)
    lap = normalized_laplacian(dataset.graph)
    model = init_model([4, 16, 2], 30, PolynomialBasis.of("chebyshev"), seed=8)
    model = model.updated(scales=ScaleVector(np.random.default_rng(8).uniform(0.5, 2.5, size=30)))
    sample = GradCheckSample(lap, dataset.features, one_hot(dataset.labels, 2), mask=dataset.train)

    report = grad_check(model, sample)

    assert report.passed, report.groups
    assert report.groups["W_0"].checked + report.groups["W_0"].skipped == 50
    assert report.warnings == []


def test_grad_check_warns_about_tiny_steps():
    lap = normalized_laplacian(build_graph([(0, 1), (1, 2)], 3))
    model = init_model([2, 2], 3, PolynomialBasis.of("laguerre"))
    sample = GradCheckSample(lap, np.eye(3)[:, :2], one_hot([0, 1, 0], 2))

    report = grad_check(model, sample, h=1e-10)

    assert len(report.warnings) == 1
    assert "1e-10" in report.warnings[0]


def test_grad_check_fails_when_a_group_is_all_kinks():
    lap = normalized_laplacian(build_graph([(0, 1), (1, 2)], 3))
    model = init_model([2, 3, 2], 3, PolynomialBasis.of("laguerre"), seed=0)
    model = model.updated(weights=(np.zeros((2, 3)), model.weights[1]))
    sample = GradCheckSample(lap, np.eye(3)[:, :2], one_hot([0, 1, 0], 2))

    report = grad_check(model, sample)

    assert report.groups["W_0"].checked == 0
    assert report.groups["W_0"].skipped == 6
    assert report.unchecked == ["W_0"]
    assert not report.passed
    assert any("W_0" in message for message in report.warnings)


def test_revive_dead_outputs_redraws_only_clipped_columns():
    model = init_model([2, 3, 3], 4, PolynomialBasis.of("laguerre"), readout_hidden=4, num_classes=2, seed=2)
    out_pre = np.array([[0.5, -1.0], [0.2, 0.0], [-0.3, -2.0]])

    revived = revive_dead_outputs(model, out_pre, seed=[0, 1, 5])
    again = revive_dead_outputs(model, out_pre, seed=[0, 1, 5])

    assert np.array_equal(revived.readout.w2[:, 0], model.readout.w2[:, 0])
    assert np.all(revived.readout.w2[:, 1] >= 0.0)
    assert not np.array_equal(revived.readout.w2[:, 1], model.readout.w2[:, 1])
    assert np.array_equal(revived.readout.w2, again.readout.w2)
    assert np.array_equal(revived.readout.w1, model.readout.w1)
    assert revive_dead_outputs(model, np.abs(out_pre) + 0.1, seed=0) is model


def test_revive_dead_outputs_leaves_linear_readout_alone():
    model = init_model([2, 3, 3], 4, PolynomialBasis.of("laguerre"), readout_hidden=4, num_classes=2, final_relu=False, seed=2)

    assert revive_dead_outputs(model, np.full((3, 2), -1.0), seed=0) is model


def _cli_values():
    return {
        "lr": 0.01, "scale_lr": 0.1, "alpha": 0.1, "epochs": 5, "patience": 5, "seed": 0,
        "initial_scale": 2.0, "s_min": 1e-3, "s_max": 10.0, "hidden": [8], "folds": 2,
        "dropout": 0.5, "readout_hidden": 4, "optimizer": "adam", "weight_decay": 0.0,
    }


def test_train_graph_with_linear_readout_output():
    population = load_graph_population(FIXTURES / "population" / "manifest.tsv")
    config = _tiny_config(epochs=2, folds=2, hidden_dims=(4,), readout_hidden=4, readout_final_relu=False)

    result = train_graph(population, config, PolynomialBasis.of("laguerre"))

    assert [model.readout.final_relu for model in result.models] == [False, False]
    assert TrainConfig.from_mapping({**_cli_values(), "readout_final_relu": False}).readout_final_relu is False


def test_fixed_scales_still_decrease_training_loss():
    dataset = gen_sbm_node(100, 2, 0.1, 0.01, 16, 1.0, seed=0)
    config = TrainConfig(epochs=12, patience=50, hidden_dims=(16,), beta_s=0.0, alpha=0.0, dropout=0.0, seed=0)

    report, model = train_node(dataset, config, PolynomialBasis.of("chebyshev"))

    losses = [record.train_loss for record in report.records[1:]]
    assert len(losses) == 12
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))
    assert np.array_equal(model.scales.values, np.full(200, config.initial_scale))


def test_single_small_step_lowers_total_loss_across_seeds():
    config = TrainConfig(lr_w=1e-4, beta_s=1e-4, alpha=0.1, dropout=0.0)
    basis = PolynomialBasis.of("chebyshev")

    def objective(model, lap, dataset, targets):
        logits, _ = forward_node(model, lap, dataset.features)
        loss, _ = softmax_cross_entropy(logits, targets, dataset.train)
        return total_loss(loss, model.scales, config.alpha)

    lowered = 0
    for seed in range(20):
        dataset = gen_sbm_node(20, 2, 0.3, 0.05, 8, 1.0, seed=seed)
        lap = normalized_laplacian(dataset.graph)
        targets = one_hot(dataset.labels, 2)
        model = init_model([8, 16, 2], dataset.num_nodes, basis, dropout_rate=0.0, seed=seed)
        _, cache = forward_node(model, lap, dataset.features)
        grads = backward_node(model, cache, targets, dataset.train)

        updated = step(model, grads, config)

        lowered += objective(updated, lap, dataset, targets) < objective(model, lap, dataset, targets)
    assert lowered >= 18


@pytest.mark.slow
@pytest.mark.parametrize("family", ["chebyshev", "hermite", "laguerre"])
def test_sbm_reaches_target_accuracy(family):
    dataset = gen_sbm_node(100, 2, 0.1, 0.01, 16, 1.0, seed=0)
    config = TrainConfig(epochs=200, hidden_dims=(64,), seed=0)

    report, model = train_node(dataset, config, PolynomialBasis.of(family))

    assert report.test_accuracy >= 0.95
    assert np.std(model.scales.values, ddof=1) > 1e-3
    assert np.all((model.scales.values >= config.s_min) & (model.scales.values <= config.s_max))


@pytest.mark.slow
@pytest.mark.parametrize("family", ["chebyshev", "hermite", "laguerre"])
def test_population_reaches_target_accuracy(family):
    population = gen_synthetic_population(20, 2, 16, [0.1, 0.5], [0.0, 1.0], seed=0)
    config = TrainConfig(epochs=100, hidden_dims=(16,), readout_hidden=16, folds=5, seed=0)

    result = train_graph(population, config, PolynomialBasis.of(family))

    # eight held-out graphs per fold; a fold stuck on one class scores 0.5
    assert all(fold.test_accuracy >= 0.75 for fold in result.folds), [fold.test_accuracy for fold in result.folds]
    assert result.accuracy[0] >= 0.90


@pytest.mark.slow
def test_polynomial_kernel_beats_per_epoch_decomposition_at_two_thousand_nodes():
    dataset = gen_sbm_node(1000, 2, 0.01, 0.001, 32, 1.0, seed=0)
    lap = normalized_laplacian(dataset.graph)
    config = TrainConfig(hidden_dims=(16,), seed=0)

    polynomial = time_epochs(dataset, make_backend(lap, PolynomialBasis.of("chebyshev")), config, epochs=3)
    exact = time_epochs(dataset, make_backend(lap, None, exact=True, amortize=False), config, epochs=3)

    assert 3.0 * np.median([t.kernel_ms for t in polynomial]) <= np.median([t.kernel_ms for t in exact])
    assert 3.0 * np.median([t.total_ms for t in polynomial]) <= np.median([t.total_ms for t in exact])
