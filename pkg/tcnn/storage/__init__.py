# tcnn/storage/__init__.py
"""Checkpoints and result files."""
from tcnn.storage.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from tcnn.storage.export import write_attention_maps, write_metrics_csv, write_pgm, write_report, write_rows_csv
