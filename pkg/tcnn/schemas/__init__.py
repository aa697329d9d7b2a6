
# tcnn/schemas/__init__.py
"""Pydantic models for validated configuration, plans and reports."""
