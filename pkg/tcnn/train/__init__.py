# tcnn/train/__init__.py
"""Optimizers, schedules, training loops and experiment harnesses."""
from tcnn.train.groups import param_groups
from tcnn.train.loop import Trainer, evaluate, train_epochs
from tcnn.train.optim import Optimizer, adamw_step, sgd_step
from tcnn.train.schedule import lr_at
