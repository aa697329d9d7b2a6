# tcnn/core/__init__.py
"""Core functionality: settings and error handling."""
