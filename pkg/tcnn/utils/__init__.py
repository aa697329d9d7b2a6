# tcnn/utils/__init__.py
