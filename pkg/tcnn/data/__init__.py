# tcnn/data/__init__.py
"""Datasets and batching."""
from tcnn.data.datasets import Dataset, batches, gen_synthetic, load_cifar10, load_datasets
