# tcnn/train/experiments.py
"""
Reparametrization-timing, learning-rate and fine-tuning-length experiments.
"""
import time
from typing import Dict, List, Optional, Sequence, Tuple

from tcnn.core.exceptions import ConfigError
from tcnn.data.datasets import Dataset
from tcnn.model.resnet import ResNet, build_cnn, gpsa_layers
from tcnn.nn.gpsa import DEFAULT_BETA
from tcnn.reparam.surgery import transform_last_stage
from tcnn.schemas.metrics import MetricsLog
from tcnn.schemas.model import ModelConfig
from tcnn.schemas.plan import TrainPlan
from tcnn.schemas.reparam import InitMode
from tcnn.schemas.reports import EpochSweepRow, ExperimentRow, LrSweepResult
from tcnn.train.loop import Trainer, evaluate, snapshot
from tcnn.utils.logging import logger


def _with_epochs(plan: TrainPlan, epochs: int) -> TrainPlan:
    return plan.copy(update={"total_epochs": epochs, "warmup_epochs": min(plan.warmup_epochs, epochs)})


def _row_name(t1: int, budget: int, same_optimizer: bool) -> str:
    if t1 == budget:
        return "Vanilla CNN"
    if t1 == 0:
        return "Vanilla hybrid"
    return f"t1={t1}" + ("*" if same_optimizer else "")


def _row(name: str, t1: int, t2: int, same_optimizer: bool, trainer: Trainer, started: float) -> ExperimentRow:
    last = trainer.log.last
    gates = [g for layer in (last.gates if last else []) for g in layer]
    return ExperimentRow(name=name, t1=t1, t2=t2, same_optimizer=same_optimizer,
                         resolution=trainer.train_set.resolution,
                         train_acc=last.train_acc if last else None,
                         test_acc=last.test_acc if last else None,
                         test_loss=last.test_loss if last else None,
                         mean_gate=sum(gates) / len(gates) if gates else None,
                         seconds=time.time() - started)


def _continue_as_hybrid(trainer: Trainer, t1: int, t2: int, same_optimizer: bool,
                        finetune: TrainPlan, mode: InitMode, beta: float, content_scale: bool,
                        eval_batch_size: int) -> Trainer:
    hybrid, _ = transform_last_stage(trainer.model, mode, beta, content_scale)
    if same_optimizer or t1 == 0:
        trainer.replace_model(hybrid)
        trainer.run(t2)
        return trainer
    tuned = Trainer(hybrid, _with_epochs(finetune, t2), trainer.train_set, trainer.test_set,
                    MetricsLog(records=list(trainer.log.records)), eval_batch_size)
    tuned.epoch = trainer.epoch
    tuned.run(t2)
    return tuned


def schedule_experiment(t1: int, t2: int, same_optimizer: bool, base_plan: TrainPlan, finetune: TrainPlan,
                        config: ModelConfig, train_set: Dataset, test_set: Dataset,
                        mode: Optional[InitMode] = None, beta: float = DEFAULT_BETA,
                        content_scale: bool = True, eval_batch_size: int = 50) -> Tuple[ExperimentRow, MetricsLog]:
    """
    Train a CNN for t1 epochs, reparametrize it and train t2 more epochs.

    With `same_optimizer` the CNN's optimizer state and schedule continue after the
    surgery; otherwise the hybrid is fine-tuned with a fresh `finetune` plan of t2
    epochs. t1 = 0 trains the hybrid from scratch with the base plan, t2 = 0 is the
    plain CNN.

    Raises:
        ConfigError: If t1 + t2 differs from the base plan's epoch budget
    """
    budget = base_plan.total_epochs
    if t1 < 0 or t2 < 0 or t1 + t2 != budget:
        raise ConfigError("t1 + t2 must equal the epoch budget", detail=f"{t1} + {t2} != {budget}")
    mode = mode or InitMode.paper()
    started = time.time()
    trainer = Trainer(build_cnn(config), base_plan, train_set, test_set, eval_batch_size=eval_batch_size)
    trainer.run(t1)
    if t2 > 0:
        trainer = _continue_as_hybrid(trainer, t1, t2, same_optimizer, finetune, mode, beta,
                                      content_scale, eval_batch_size)
    row = _row(_row_name(t1, budget, same_optimizer), t1, t2, same_optimizer, trainer, started)
    logger.info(f"{row.name}: test acc {row.test_acc}")
    return row, trainer.log


def schedule_table(t1_values: Sequence[int], budget: int, same_optimizer: bool, base_plan: TrainPlan,
                   finetune: TrainPlan, config: ModelConfig, train_set: Dataset, test_set: Dataset,
                   finetune_epochs: int = 0, finetune_data: Optional[Tuple[Dataset, Dataset]] = None,
                   mode: Optional[InitMode] = None, beta: float = DEFAULT_BETA, content_scale: bool = True,
                   eval_batch_size: int = 50) -> List[Tuple[ExperimentRow, MetricsLog]]:
    """
    All reparametrization times of one table from a single CNN trajectory.

    The CNN is trained once over `budget` epochs and snapshotted at every t1;
    each snapshot then continues as in `schedule_experiment`. With
    `finetune_epochs` > 0 a final "T-CNN" row fine-tunes the fully trained CNN
    after surgery, on `finetune_data` when given (e.g. a higher resolution).
    """
    if not t1_values:
        raise ConfigError("At least one t1 is required")
    bad = [t for t in t1_values if not 0 <= t <= budget]
    if bad:
        raise ConfigError("t1 outside the epoch budget", detail=f"{bad} not in [0, {budget}]")
    mode = mode or InitMode.paper()
    base_plan = _with_epochs(base_plan, budget) if base_plan.total_epochs != budget else base_plan
    started = time.time()
    trainer = Trainer(build_cnn(config), base_plan, train_set, test_set, eval_batch_size=eval_batch_size)
    snapshots: Dict[int, Trainer] = {}
    for epoch in range(budget + 1):
        if epoch in t1_values and epoch < budget:
            snapshots[epoch] = snapshot(trainer)
        if epoch < budget:
            trainer.run(1)
    cnn_seconds = time.time() - started

    results: List[Tuple[ExperimentRow, MetricsLog]] = []
    for t1 in t1_values:
        row_started = time.time() - cnn_seconds * t1 / max(budget, 1)
        t2 = budget - t1
        if t2 == 0:
            branch = trainer
        else:
            branch = _continue_as_hybrid(snapshot(snapshots[t1]), t1, t2, same_optimizer, finetune, mode,
                                         beta, content_scale, eval_batch_size)
        row = _row(_row_name(t1, budget, same_optimizer), t1, t2, same_optimizer, branch, row_started)
        logger.info(f"{row.name}: test acc {row.test_acc}")
        results.append((row, branch.log))

    if finetune_epochs > 0:
        row_started = time.time()
        hybrid, _ = transform_last_stage(trainer.model, mode, beta, content_scale)
        train_ft, test_ft = finetune_data or (train_set, test_set)
        tuned = Trainer(hybrid, _with_epochs(finetune, finetune_epochs).copy(update={"resolution": train_ft.resolution}),
                        train_ft, test_ft, MetricsLog(records=list(trainer.log.records)), eval_batch_size)
        tuned.epoch = trainer.epoch
        tuned.run(finetune_epochs)
        name = "T-CNN" if train_ft.resolution == train_set.resolution else f"T-CNN@{train_ft.resolution}"
        row = _row(name, budget, finetune_epochs, False, tuned, row_started - cnn_seconds)
        logger.info(f"{row.name}: test acc {row.test_acc}")
        results.append((row, tuned.log))
    return results


def dip_depth(initial_test_acc: float, log: MetricsLog, warmup_epochs: int) -> float:
    """Initial accuracy minus the lowest test accuracy up to one epoch past warmup, floored at 0."""
    window = log.records[:warmup_epochs + 1]
    if not window:
        return 0.0
    return max(0.0, initial_test_acc - min(r.test_acc for r in window))


def _ensure_hybrid(model: ResNet, beta: float, content_scale: bool) -> ResNet:
    if gpsa_layers(model):
        return model
    hybrid, _ = transform_last_stage(model, InitMode.paper(), beta, content_scale)
    return hybrid


def lr_sweep(model: ResNet, lrs: Sequence[float], plan: TrainPlan, train_set: Dataset, test_set: Dataset,
             beta: float = DEFAULT_BETA, content_scale: bool = True,
             eval_batch_size: int = 50) -> List[LrSweepResult]:
    """
    Fine-tune independent copies of `model` under each maximal learning rate.

    A plain CNN is reparametrized (paper mode) first. Results keep the order of `lrs`.
    """
    if not lrs:
        raise ConfigError("lr_sweep needs at least one learning rate")
    base = _ensure_hybrid(model, beta, content_scale)
    initial = evaluate(base, test_set, eval_batch_size)[1]
    results = []
    for lr in lrs:
        swept = plan.copy(update={"max_lr": lr, "min_lr": min(plan.min_lr, lr)})
        trainer = Trainer(base.clone(), swept, train_set, test_set, eval_batch_size=eval_batch_size)
        trainer.run(swept.total_epochs)
        accs = trainer.log.series("test_acc")
        result = LrSweepResult(max_lr=lr, initial_test_acc=initial, min_test_acc=min(accs) if accs else initial,
                               dip_depth=dip_depth(initial, trainer.log, swept.warmup_epochs),
                               final_test_acc=accs[-1] if accs else initial, log=trainer.log)
        logger.info(f"max lr {lr:.1e}: dip {result.dip_depth:.3f}, final test acc {result.final_test_acc:.3f}")
        results.append(result)
    return results


def epoch_sweep(model: ResNet, epochs_list: Sequence[int], plan: TrainPlan, train_set: Dataset,
                test_set: Dataset, beta: float = DEFAULT_BETA, content_scale: bool = True,
                eval_batch_size: int = 50) -> List[EpochSweepRow]:
    """Fine-tune independent copies of `model` for each number of epochs."""
    if not epochs_list:
        raise ConfigError("epoch_sweep needs at least one epoch count")
    base = _ensure_hybrid(model, beta, content_scale)
    rows = []
    for epochs in epochs_list:
        if epochs < 0:
            raise ConfigError("Epoch counts must be non-negative", detail=str(epochs))
        trainer = Trainer(base.clone(), _with_epochs(plan, epochs), train_set, test_set,
                          eval_batch_size=eval_batch_size)
        trainer.run(epochs)
        last = trainer.log.last
        if last is None:
            _, test_acc = evaluate(trainer.model, test_set, eval_batch_size)
            rows.append(EpochSweepRow(epochs=0, test_acc=test_acc))
        else:
            rows.append(EpochSweepRow(epochs=epochs, train_acc=last.train_acc, test_acc=last.test_acc))
        logger.info(f"{epochs} fine-tuning epochs: test acc {rows[-1].test_acc}")
    return rows
