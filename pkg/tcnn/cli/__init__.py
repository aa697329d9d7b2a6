from tcnn.cli.main import cli_dispatch, handle_error, main

__all__ = ["cli_dispatch", "handle_error", "main"]
