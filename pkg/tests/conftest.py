# tests/conftest.py
"""
Shared fixtures.
"""
import sys
import os
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.tensor.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def reset_default_dtype():
    """Every test starts (and ends) in single precision."""
    set_default_dtype("f32")
    yield
    set_default_dtype("f32")
