# tcnn/cli/commands.py
"""
Command handlers. Each takes the parsed arguments and the effective settings
and returns an exit code.
"""
import csv
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from tcnn.core.config import Settings, write_run_config
from tcnn.core.exceptions import ConfigError, UsageError, VerificationError
from tcnn.data.datasets import Dataset, load_datasets, normalization_record
from tcnn.model.resnet import ResNet, build_cnn, forward_classify, gpsa_layers
from tcnn.model.loss import cross_entropy
from tcnn.nn.gpsa import GpsaLayer, attention_distance, attention_map_at, attention_span, gating_values, gpsa_forward
from tcnn.reparam.surgery import PaddedGpsa, transform_last_stage, verify_equivalence
from tcnn.schemas.model import ModelConfig, StageSpec, reference_config
from tcnn.schemas.plan import TrainPlan, finetune_plan, scratch_plan
from tcnn.schemas.reparam import InitMode
from tcnn.schemas.reports import GradcheckReport
from tcnn.storage.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tcnn.storage.export import write_attention_maps, write_metrics_csv, write_report, write_rows_csv
from tcnn.tensor.gradcheck import gradcheck
from tcnn.tensor.tensor import Tensor, no_grad, set_default_dtype
from tcnn.train.experiments import epoch_sweep, lr_sweep, schedule_table
from tcnn.train.loop import Trainer, evaluate
from tcnn.utils.logging import logger
from tcnn.utils.rng import stream

CHECKPOINT_KEYS = ("model", "transform", "dtype")


# ------ helpers ------
def init_mode(kind: str, settings: Settings) -> InitMode:
    """Paper or strict initialization with the constants from the settings."""
    try:
        if kind == "strict":
            return InitMode(kind="strict", alpha_init=settings.STRICT_ALPHA, lambda_init=settings.STRICT_LAMBDA)
        return InitMode(kind="paper", alpha_init=settings.PAPER_ALPHA, lambda_init=settings.PAPER_LAMBDA)
    except ValidationError as e:
        raise ConfigError("Invalid initialization mode", detail=str(e))


def parse_list(text: str, kind=float, what: str = "list") -> list:
    try:
        values = [kind(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"Invalid {what}", detail=text)
    if not values:
        raise UsageError(f"Empty {what}", detail=text)
    return values


def with_updates(plan: TrainPlan, **updates) -> TrainPlan:
    """Copy of `plan` with the non-None updates, validated again."""
    values = plan.dict()
    values.update({k: v for k, v in updates.items() if v is not None})
    try:
        return TrainPlan(**values)
    except ValidationError as e:
        raise ConfigError("Invalid training plan", detail=str(e))


def stem_of(path: str) -> str:
    return os.path.splitext(path)[0]


def checkpoint_extra(checkpoint: Checkpoint) -> Dict:
    return {k: v for k, v in checkpoint.config.items() if k not in CHECKPOINT_KEYS}


def data_extra(train_set: Dataset) -> Dict:
    if train_set.mean is None:
        return {}
    return {"normalization": {"mean": [float(v) for v in train_set.mean], "std": [float(v) for v in train_set.std]}}


def ensure_hybrid(model: ResNet, settings: Settings) -> ResNet:
    if gpsa_layers(model):
        return model
    logger.info("Checkpoint holds a plain CNN; reparametrizing the last stage (paper mode)")
    hybrid, _ = transform_last_stage(model, init_mode("paper", settings), settings.SOFTPLUS_BETA,
                                     settings.CONTENT_SCALE)
    return hybrid


def record_run(path: str, settings: Settings, command: str, train_set: Optional[Dataset] = None) -> None:
    extra = {"COMMAND": command}
    if train_set is not None:
        extra.update(normalization_record(train_set))
    write_run_config(f"{stem_of(path)}_config.txt", settings, extra)


# ------ commands ------
def cmd_train(args, settings: Settings) -> int:
    """Train a CNN (or a hybrid when --hybrid) from scratch."""
    train_set, test_set = load_datasets(settings)
    config = reference_config(settings.MODEL_CONFIG, settings.BLOCK_KIND, n_classes=settings.N_CLASSES,
                              resolution=settings.RESOLUTION, seed=settings.SEED,
                              drop_rate=settings.DROP_RATE, dtype=settings.DTYPE)
    model = build_cnn(config)
    if args.hybrid:
        model, _ = transform_last_stage(model, init_mode("paper", settings), settings.SOFTPLUS_BETA,
                                        settings.CONTENT_SCALE)
    plan = scratch_plan(settings, args.epochs)
    trainer = Trainer(model, plan, train_set, test_set, eval_batch_size=settings.EVAL_BATCH_SIZE)
    trainer.run(plan.total_epochs)
    out = args.out or os.path.join(settings.OUTPUT_DIR, "hybrid.ckpt" if args.hybrid else "cnn.ckpt")
    save_checkpoint(trainer.model, out, trainer.optimizer, {"epoch": trainer.epoch, "step": trainer.step},
                    data_extra(train_set))
    write_metrics_csv(args.metrics or f"{stem_of(out)}_metrics.csv", trainer.log)
    record_run(out, settings, "train", train_set)
    return 0


def cmd_transform(args, settings: Settings) -> int:
    """Checkpoint surgery: last-stage 3x3 convolutions become GPSA layers."""
    checkpoint = load_checkpoint(args.input)
    hybrid, report = transform_last_stage(checkpoint.model, init_mode(args.mode, settings),
                                          settings.SOFTPLUS_BETA, settings.CONTENT_SCALE)
    save_checkpoint(hybrid, args.out, extra=checkpoint_extra(checkpoint))
    write_report(args.report or f"{stem_of(args.out)}_surgery", report)
    print(report.to_text(), end="")
    return 0


def cmd_finetune(args, settings: Settings) -> int:
    """Fine-tune a (transformed) checkpoint with the AdamW recipe."""
    checkpoint = load_checkpoint(args.input)
    model = ensure_hybrid(checkpoint.model, settings)
    train_set, test_set = load_datasets(settings, args.res)
    min_lr = args.max_lr / 100.0 if args.max_lr is not None else None
    plan = with_updates(finetune_plan(settings, args.epochs), max_lr=args.max_lr, min_lr=min_lr,
                        gating_lr=args.gating_lr, drop_rate=args.dr, resolution=train_set.resolution)
    trainer = Trainer(model, plan, train_set, test_set, eval_batch_size=settings.EVAL_BATCH_SIZE)
    trainer.run(plan.total_epochs)
    out = args.out or os.path.join(settings.OUTPUT_DIR, "tcnn.ckpt")
    save_checkpoint(trainer.model, out, trainer.optimizer, {"epoch": trainer.epoch, "step": trainer.step},
                    data_extra(train_set))
    write_metrics_csv(args.metrics or f"{stem_of(out)}_metrics.csv", trainer.log)
    record_run(out, settings, "finetune", train_set)
    return 0


def cmd_verify(args, settings: Settings) -> int:
    """Compare two models (or a CNN and its strict transform) on random probes."""
    reference = load_checkpoint(args.model).model
    if args.against:
        other = load_checkpoint(args.against).model
    else:
        other, _ = transform_last_stage(reference, init_mode("strict", settings), settings.SOFTPLUS_BETA,
                                        settings.CONTENT_SCALE)
    tol = settings.VERIFY_TOL if args.tol is None else args.tol
    report = verify_equivalence(reference, other, args.probes or settings.PROBES, tol, args.res,
                                settings.SEED, settings.PROBE_BATCH)
    print(report.to_text(), end="")
    if args.report:
        write_report(args.report, report)
    if not report.passed:
        raise VerificationError("Models are not equivalent",
                                detail=f"max abs deviation {report.max_abs_dev:.3e} > tol {tol:.1e}")
    return 0


def inspect_model(model: ResNet, image: np.ndarray, query: Optional[Tuple[int, int]] = None):
    """
    Attention maps (full padded grid), gates, spans and measured distances of every GPSA layer.

    `query` is given on each layer's unpadded input grid; the default is its center pixel.
    """
    layers = gpsa_layers(model)
    if not layers:
        raise UsageError("Model has no GPSA layers; transform it first")
    for _, layer in layers:
        layer.capture = True
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            forward_classify(model, Tensor(image[None], dtype=model.fc.weight.dtype))
        parents = dict(model.named_modules())
        maps, rows = [], []
        for i, (name, layer) in enumerate(layers):
            x = layer.captured
            parent = parents.get(name.rsplit(".", 1)[0])
            pad = parent.pad.pad if isinstance(parent, PaddedGpsa) else 0
            H, W = x.shape[-2] - 2 * pad, x.shape[-1] - 2 * pad
            r, c = query if query is not None else (H // 2, W // 2)
            if not (0 <= r < H and 0 <= c < W):
                raise UsageError("Query pixel outside the layer grid", detail=f"({r}, {c}) on {H} x {W} ({name})")
            maps.append(attention_map_at(layer, x, (r + pad, c + pad)))
            for h, (gate, span, dist) in enumerate(zip(gating_values(layer), attention_span(layer),
                                                       attention_distance(layer, x))):
                rows.append({"layer": i, "name": name, "head": h, "gate": gate, "span": span, "distance": dist})
        return maps, rows
    finally:
        model.train(was_training)
        for _, layer in layers:
            layer.capture = False
            layer.captured = None


def cmd_inspect(args, settings: Settings) -> int:
    """Attention maps of one test image plus per-head gate, span and distance."""
    model = load_checkpoint(args.model).model
    _, test_set = load_datasets(settings, args.res)
    if not 0 <= args.image < len(test_set):
        raise UsageError("Image index out of range", detail=f"{args.image} not in [0, {len(test_set)})")
    query = tuple(parse_list(args.query, int, "query")) if args.query else None
    if query is not None and len(query) != 2:
        raise UsageError("Query must be row,col", detail=args.query)
    maps, rows = inspect_model(model, test_set.images[args.image], query)
    out_dir = args.out or os.path.join(settings.OUTPUT_DIR, "inspect")
    write_attention_maps(out_dir, maps)
    _write_dict_csv(os.path.join(out_dir, "heads.csv"), rows)
    for row in rows:
        print(f"L{row['layer']} H{row['head']}: gate {row['gate']:.4f} span {row['span']:.4f} "
              f"distance {row['distance']:.3f}")
    return 0


def _write_dict_csv(path: str, rows: List[dict]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_eval(args, settings: Settings) -> int:
    """Test loss and accuracy, optionally at another resolution."""
    model = load_checkpoint(args.model).model
    _, test_set = load_datasets(settings, args.res)
    loss, acc = evaluate(model, test_set, settings.EVAL_BATCH_SIZE)
    print(f"resolution={test_set.resolution} loss={loss:.6f} acc={acc:.4f}")
    return 0


def cmd_experiment(args, settings: Settings) -> int:
    """Reparametrization-timing table from one CNN trajectory."""
    t1_values = parse_list(args.t1, int, "t1 list")
    if args.t2 is not None:
        if len(t1_values) != 1:
            raise UsageError("--t2 needs a single --t1")
        budget = t1_values[0] + args.t2
    else:
        budget = args.budget or settings.SCRATCH_EPOCHS
    train_set, test_set = load_datasets(settings)
    finetune_data = load_datasets(settings, args.finetune_res) if args.finetune_res else None
    config = reference_config(settings.MODEL_CONFIG, settings.BLOCK_KIND, n_classes=settings.N_CLASSES,
                              resolution=settings.RESOLUTION, seed=settings.SEED,
                              drop_rate=settings.DROP_RATE, dtype=settings.DTYPE)
    results = schedule_table(t1_values, budget, args.same_optimizer, scratch_plan(settings, budget),
                             finetune_plan(settings), config, train_set, test_set,
                             finetune_epochs=args.finetune_epochs or 0, finetune_data=finetune_data,
                             mode=init_mode("paper", settings), beta=settings.SOFTPLUS_BETA,
                             content_scale=settings.CONTENT_SCALE, eval_batch_size=settings.EVAL_BATCH_SIZE)
    out = args.out or os.path.join(settings.OUTPUT_DIR, "experiment.csv")
    write_rows_csv(out, [row for row, _ in results], exclude=("seconds",))
    for row, log in results:
        safe = row.name.replace(" ", "_").replace("=", "").replace("*", "_star").replace("@", "_res")
        write_metrics_csv(f"{stem_of(out)}_{safe}.csv", log)
        print(f"{row.name:<16} t1={row.t1:<4} t2={row.t2:<4} test acc {row.test_acc} ({row.seconds:.1f}s)")
    record_run(out, settings, "experiment", train_set)
    return 0


def cmd_lr_sweep(args, settings: Settings) -> int:
    """Fine-tuning dynamics under several maximal learning rates."""
    model = load_checkpoint(args.model).model
    train_set, test_set = load_datasets(settings)
    lrs = parse_list(args.lrs, float, "learning rate list")
    results = lr_sweep(model, lrs, finetune_plan(settings, args.epochs), train_set, test_set,
                       settings.SOFTPLUS_BETA, settings.CONTENT_SCALE, settings.EVAL_BATCH_SIZE)
    out = args.out or os.path.join(settings.OUTPUT_DIR, "lr_sweep.csv")
    write_rows_csv(out, results, exclude=("log",))
    for result in results:
        write_metrics_csv(f"{stem_of(out)}_lr{result.max_lr:g}.csv", result.log)
        print(f"max lr {result.max_lr:g}: dip {result.dip_depth:.4f} final test acc {result.final_test_acc:.4f}")
    return 0


def cmd_epoch_sweep(args, settings: Settings) -> int:
    """Final accuracy against the number of fine-tuning epochs."""
    model = load_checkpoint(args.model).model
    train_set, test_set = load_datasets(settings)
    epochs_list = parse_list(args.epochs_list, int, "epoch list")
    rows = epoch_sweep(model, epochs_list, finetune_plan(settings), train_set, test_set,
                       settings.SOFTPLUS_BETA, settings.CONTENT_SCALE, settings.EVAL_BATCH_SIZE)
    out = args.out or os.path.join(settings.OUTPUT_DIR, "epoch_sweep.csv")
    write_rows_csv(out, rows)
    for row in rows:
        print(f"{row.epochs} epochs: test acc {row.test_acc}")
    return 0


# ------ gradient checks ------
def gpsa_gradcheck(seed: int = 0, content_scale: bool = True) -> GradcheckReport:
    """Tape vs. finite differences for one GPSA layer wrt every parameter class (f64)."""
    rng = stream(seed, "init")
    layer = GpsaLayer(3, 4, n_heads=4, bias=True, content_scale=content_scale, rng=rng, dtype=np.float64)
    layer.alpha_raw.assign(rng.uniform(0.2, 1.5, layer.n_heads))
    layer.gate.assign(rng.normal(0.0, 1.0, layer.n_heads))
    layer.bias.assign(rng.normal(0.0, 0.1, layer.d_out))
    x = Tensor(rng.standard_normal((2, 3, 3, 4)), dtype=np.float64)
    weights = Tensor(rng.standard_normal((2, 12, 4)), dtype=np.float64)
    tokens = x.reshape(2, 3, 12).transpose(0, 2, 1)

    def loss(*_):
        return (gpsa_forward(tokens, layer, layer.positional(3, 4)) * weights).sum()
    return gradcheck(loss, dict(layer.named_parameters()), eps=1e-5, tol=1e-5)


def model_gradcheck(seed: int = 0) -> GradcheckReport:
    """End-to-end loss of a two-block hybrid wrt all of its parameters (f64)."""
    config = ModelConfig(stages=[StageSpec(blocks=1, channels=3, stride=1),
                                 StageSpec(blocks=1, channels=4, stride=2)],
                         input_channels=2, n_classes=3, stem_channels=3, resolution=6, seed=seed, dtype="f64")
    model, _ = transform_last_stage(build_cnn(config), InitMode.paper())
    rng = stream(seed, "probe")
    for _, layer in gpsa_layers(model):
        layer.w_qry.assign(rng.normal(0.0, 0.5, layer.w_qry.shape))
        layer.w_key.assign(rng.normal(0.0, 0.5, layer.w_key.shape))
    x = Tensor(rng.standard_normal((3, 2, 6, 6)), dtype=np.float64)
    labels = np.array([0, 1, 2])
    model.eval()

    def loss(*_):
        return cross_entropy(forward_classify(model, x), labels)
    return gradcheck(loss, dict(model.named_parameters()), eps=1e-5, tol=1e-4)


def cmd_gradcheck(args, settings: Settings) -> int:
    """Run the GPSA-layer and end-to-end gradient checks in double precision."""
    set_default_dtype("f64")
    reports = [("gpsa layer", gpsa_gradcheck(settings.SEED, settings.CONTENT_SCALE))]
    if not args.layer_only:
        reports.append(("two-block hybrid", model_gradcheck(settings.SEED)))
    failed = []
    for title, report in reports:
        print(f"== {title}")
        print(report.to_text(), end="")
        if not report.passed:
            failed.append(title)
    if failed:
        raise VerificationError("Gradient check failed", detail=", ".join(failed))
    return 0
