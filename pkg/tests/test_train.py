# tests/test_train.py
"""
Tests for the training loop, evaluation and run snapshots.
"""
import sys
import os
import numpy as np
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.core.exceptions import NumericError
from tcnn.data.datasets import channel_stats, gen_synthetic, normalize
from tcnn.model.resnet import build_cnn, gpsa_layers
from tcnn.reparam.surgery import transform_last_stage
from tcnn.schemas.model import ModelConfig, StageSpec, reference_config
from tcnn.schemas.plan import TrainPlan
from tcnn.schemas.reparam import InitMode
from tcnn.tensor.tensor import set_default_dtype
from tcnn.train.loop import Trainer, evaluate, snapshot, train_epochs


def small_config(dtype="f32", seed=0):
    return ModelConfig(stages=[StageSpec(blocks=1, channels=8, stride=1),
                               StageSpec(blocks=1, channels=16, stride=2)],
                       stem_channels=8, n_classes=4, resolution=8, seed=seed, dtype=dtype)


def small_data(n_train=128, n_test=32, dtype=np.float32):
    train = gen_synthetic(n_train, 8, 4, seed=0, split="train", dtype=dtype)
    test = gen_synthetic(n_test, 8, 4, seed=0, split="test", dtype=dtype)
    mean, std = channel_stats(train)
    return normalize(train, mean, std), normalize(test, mean, std)


def sgd_plan(epochs=5, **kwargs):
    values = dict(optimizer="sgd_momentum", max_lr=0.05, min_lr=0.0005, warmup_epochs=1,
                  total_epochs=epochs, batch_size=32, weight_decay=5e-4, gating_lr=0.1, resolution=8)
    values.update(kwargs)
    return TrainPlan(**values)


@pytest.fixture(scope="module")
def data():
    """Small normalized synthetic splits at 8 x 8"""
    return small_data()


def test_zero_epochs_changes_nothing(data):
    """A 0-epoch plan leaves the parameters and the log untouched"""
    model = build_cnn(small_config())
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    model, log = train_epochs(model, *data, sgd_plan(epochs=0))
    assert len(log) == 0
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[name])


def test_training_loss_decreases(data):
    """Five epochs lower the training loss and log one record per epoch"""
    model = build_cnn(small_config())
    _, log = train_epochs(model, *data, sgd_plan(epochs=5))
    losses = log.series("train_loss")
    assert len(losses) == 5
    assert losses[-1] < losses[0]
    assert [r.epoch for r in log.records] == [1, 2, 3, 4, 5]


def test_identical_seeds_identical_parameters():
    """Two f64 runs with the same seeds end with identical parameters"""
    set_default_dtype("f64")
    train, test = small_data(64, 16, np.float64)
    runs = []
    for _ in range(2):
        model, log = train_epochs(build_cnn(small_config("f64")), train, test, sgd_plan(epochs=2))
        runs.append((model, log))
    for (na, pa), (nb, pb) in zip(runs[0][0].named_parameters(), runs[1][0].named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert runs[0][1].rows() == runs[1][1].rows()


def test_hybrid_logs_gates_and_spans(data):
    """GPSA runs record gate and span series; gates move at the constant gating rate"""
    hybrid, _ = transform_last_stage(build_cnn(small_config()), InitMode.paper())
    plan = sgd_plan(epochs=1, optimizer="adamw", max_lr=1e-3, min_lr=1e-5, weight_decay=0.05)
    _, log = train_epochs(hybrid, *data, plan)
    record = log.last
    assert len(record.gates) == len(gpsa_layers(hybrid)) == 2
    assert all(len(layer) == 9 for layer in record.gates)
    assert any(abs(g - 0.7311) > 1e-3 for layer in record.gates for g in layer)
    assert "gate_L1_H8" in log.columns() and "span_L0_H0" in log.columns()


@pytest.mark.parametrize("optimizer", ["sgd_momentum", "adamw"])
def test_zero_gating_lr_freezes_gates(data, optimizer):
    """gating_lr = 0 leaves every gate bit-identical while the rest of the model trains"""
    hybrid, _ = transform_last_stage(build_cnn(small_config()), InitMode.paper())
    gates = {name: layer.gate.data.copy() for name, layer in gpsa_layers(hybrid)}
    w_out = {name: layer.w_out.data.copy() for name, layer in gpsa_layers(hybrid)}
    plan = sgd_plan(epochs=1, optimizer=optimizer, max_lr=1e-3, min_lr=1e-5, weight_decay=0.05, gating_lr=0.0)
    hybrid, _ = train_epochs(hybrid, *data, plan)
    for name, layer in gpsa_layers(hybrid):
        assert np.array_equal(layer.gate.data, gates[name])
        assert not np.array_equal(layer.w_out.data, w_out[name])


def test_tiny_finetune_moves_gates(data):
    """Five fine-tuning epochs of the paper-initialized tiny model move some gate by more than 0.05"""
    cnn = build_cnn(reference_config("tiny", n_classes=4, resolution=8, seed=2))
    hybrid, _ = transform_last_stage(cnn, InitMode.paper())
    before = {name: layer.gate.data.copy() for name, layer in gpsa_layers(hybrid)}
    plan = sgd_plan(epochs=5, optimizer="adamw", max_lr=1e-4, min_lr=1e-6, weight_decay=0.05)
    hybrid, _ = train_epochs(hybrid, *data, plan)
    shift = max(np.max(np.abs(layer.gate.data - before[name])) for name, layer in gpsa_layers(hybrid))
    assert shift > 0.05


def test_micro_batches_run(data):
    """Micro-batched steps cover the whole batch"""
    model = build_cnn(small_config())
    trainer = Trainer(model, sgd_plan(epochs=1, micro_batch=8), *data)
    trainer.run(1)
    assert trainer.step == 4
    assert np.isfinite(trainer.log.last.train_loss)


def test_non_finite_loss_raises(data):
    """A NaN parameter stops training with a numeric error"""
    model = build_cnn(small_config())
    model.fc.weight.assign(np.full(model.fc.weight.shape, np.nan))
    with pytest.raises(NumericError):
        Trainer(model, sgd_plan(epochs=1), *data).run(1)


def test_evaluate_restores_mode(data):
    """Evaluation is deterministic and leaves the model in its previous mode"""
    model = build_cnn(small_config())
    model.train()
    first = evaluate(model, data[1], batch_size=10)
    assert model.training
    assert evaluate(model, data[1], batch_size=7) == pytest.approx(first)
    assert 0.0 <= first[1] <= 1.0


def test_snapshot_is_independent(data):
    """A snapshot continues on its own; the original run is unaffected"""
    trainer = Trainer(build_cnn(small_config()), sgd_plan(epochs=3), *data)
    trainer.run(1)
    copy = snapshot(trainer)
    assert copy.train_set is trainer.train_set
    copy.run(1)
    assert trainer.epoch == 1 and copy.epoch == 2
    assert len(trainer.log) == 1 and len(copy.log) == 2
    trainer.run(1)
    # same streams and state: continuing the original reproduces the snapshot's epoch
    assert trainer.log.last.train_loss == pytest.approx(copy.log.last.train_loss)


def test_same_optimizer_continuation(data):
    """Replacing the model keeps optimizer state of surviving parameters"""
    trainer = Trainer(build_cnn(small_config()), sgd_plan(epochs=2), *data)
    trainer.run(1)
    hybrid, _ = transform_last_stage(trainer.model, InitMode.paper())
    trainer.replace_model(hybrid)
    assert "fc.weight" in trainer.optimizer.state
    assert "stages.1.0.conv1.weight" not in trainer.optimizer.state
    trainer.run(1)
    assert trainer.epoch == 2
    assert "stages.1.0.conv1.gpsa.w_out" in trainer.optimizer.state
