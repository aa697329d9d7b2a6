# tcnn/train/loop.py
"""
Training and evaluation loops.
"""
import copy
import time
from typing import Optional, Tuple

import numpy as np

from tcnn.core.exceptions import NumericError
from tcnn.data.datasets import Dataset, batches
from tcnn.model.loss import cross_entropy
from tcnn.model.resnet import ResNet, forward_classify, gpsa_layers
from tcnn.nn.gpsa import attention_span, gating_values
from tcnn.schemas.metrics import EpochRecord, MetricsLog
from tcnn.schemas.plan import TrainPlan
from tcnn.tensor.tensor import Tensor, no_grad
from tcnn.train.optim import Optimizer
from tcnn.train.schedule import lr_at
from tcnn.utils.logging import logger
from tcnn.utils.rng import stream


def evaluate(model: ResNet, dataset: Dataset, batch_size: int = 50) -> Tuple[float, float]:
    """Mean loss and accuracy in eval mode, without recording a tape."""
    was_training = model.training
    model.eval()
    total_loss = 0.0
    correct = 0
    dtype = model.fc.weight.dtype
    try:
        with no_grad():
            for x, y in batches(dataset, batch_size):
                logits = forward_classify(model, Tensor(x, dtype=dtype))
                total_loss += cross_entropy(logits, y).item() * len(y)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
    finally:
        model.train(was_training)
    n = max(len(dataset), 1)
    return total_loss / n, correct / n


def gpsa_observables(model: ResNet) -> Tuple[list, list]:
    """sigmoid(lambda_h) and 1 / alpha_h of every GPSA layer."""
    layers = gpsa_layers(model)
    return [gating_values(l) for _, l in layers], [attention_span(l) for _, l in layers]


class Trainer:
    """
    Owns one training run: model, optimizer, schedule position and random streams.

    Epochs are counted across calls to `run`, so a run can be paused (e.g. for
    a surgery) and continued with the same optimizer and schedule.
    """

    def __init__(self, model: ResNet, plan: TrainPlan, train_set: Dataset, test_set: Dataset,
                 log: Optional[MetricsLog] = None, eval_batch_size: int = 50):
        self.model = model
        self.plan = plan
        self.train_set = train_set
        self.test_set = test_set
        self.log = log if log is not None else MetricsLog()
        self.eval_batch_size = eval_batch_size
        self.optimizer = Optimizer(model, plan)
        self.epoch = 0
        self.step = 0
        self.shuffle_rng = stream(plan.seed, "shuffle")
        self.augment_rng = stream(plan.seed, "augment")
        model.set_drop_rate(plan.drop_rate)

    @property
    def steps_per_epoch(self) -> int:
        return -(-len(self.train_set) // self.plan.batch_size)

    def replace_model(self, model: ResNet) -> None:
        """Continue with a transformed model, keeping optimizer state by parameter name."""
        self.model = model
        self.optimizer.bind(model)
        model.set_drop_rate(self.plan.drop_rate)

    def _train_batch(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, int]:
        dtype = self.model.fc.weight.dtype
        chunk = self.plan.micro_batch or len(y)
        total_loss = 0.0
        correct = 0
        self.optimizer.zero_grad()
        for start in range(0, len(y), chunk):
            xs, ys = x[start:start + chunk], y[start:start + chunk]
            logits = forward_classify(self.model, Tensor(xs, dtype=dtype))
            loss = cross_entropy(logits, ys, self.plan.label_smoothing)
            value = loss.item()
            if not np.isfinite(value):
                logger.error(f"Non-finite loss at epoch {self.epoch + 1}, step {self.step}")
                raise NumericError("Non-finite training loss", detail=f"epoch {self.epoch + 1}, step {self.step}")
            (loss * (len(ys) / len(y))).backward()
            total_loss += value * len(ys)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == ys))
        return total_loss, correct

    def run(self, epochs: int) -> MetricsLog:
        """Train for `epochs` more epochs, appending one record per epoch."""
        spe = self.steps_per_epoch
        for _ in range(epochs):
            started = time.time()
            self.model.train()
            loss_sum = 0.0
            correct = 0
            lr = 0.0
            hflip = self.augment_rng if self.plan.hflip else None
            for x, y in batches(self.train_set, self.plan.batch_size, self.shuffle_rng, hflip):
                lr = lr_at(self.step, self.plan, spe)
                batch_loss, batch_correct = self._train_batch(x, y)
                self.optimizer.step(lr)
                loss_sum += batch_loss
                correct += batch_correct
                self.step += 1
            self.epoch += 1
            test_loss, test_acc = evaluate(self.model, self.test_set, self.eval_batch_size)
            gates, spans = gpsa_observables(self.model)
            record = EpochRecord(epoch=self.epoch, lr=lr, train_loss=loss_sum / len(self.train_set),
                                 train_acc=correct / len(self.train_set), test_loss=test_loss,
                                 test_acc=test_acc, gates=gates, spans=spans)
            self.log.append(record)
            logger.info(f"epoch {self.epoch}: lr {lr:.2e} train loss {record.train_loss:.4f} "
                        f"acc {record.train_acc:.3f} test acc {test_acc:.3f} ({time.time() - started:.1f}s)")
        return self.log


def train_epochs(model: ResNet, train_set: Dataset, test_set: Dataset, plan: TrainPlan,
                 log: Optional[MetricsLog] = None, eval_batch_size: int = 50) -> Tuple[ResNet, MetricsLog]:
    """Train `model` in place for plan.total_epochs epochs."""
    trainer = Trainer(model, plan, train_set, test_set, log, eval_batch_size)
    trainer.run(plan.total_epochs)
    return trainer.model, trainer.log


def snapshot(trainer: Trainer) -> Trainer:
    """Independent copy of a run (model, optimizer, schedule position, random streams, log)."""
    shared = {id(trainer.train_set): trainer.train_set, id(trainer.test_set): trainer.test_set}
    return copy.deepcopy(trainer, memo=shared)
