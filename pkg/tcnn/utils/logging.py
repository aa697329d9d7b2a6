# tcnn/utils/logging.py

import logging
from datetime import datetime
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(levelname)s - [%(module)s:%(lineno)d] - %(message)s'

# Configure logging to the terminal; a dated log file is added by configure_logging
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("tcnn")


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Set the package log level and optionally mirror records into a file.

    Args:
        level (str): Logging level name
        log_file (Optional[str]): File path, "auto" for tcnn_YYYYMMDD.log, or None

    Returns:
        logging.Logger: The package logger
    """
    logger.setLevel(level.upper())
    if log_file:
        if log_file == "auto":
            log_file = f'tcnn_{datetime.now().strftime("%Y%m%d")}.log'
        known = {getattr(h, "baseFilename", None) for h in logger.handlers}
        handler = logging.FileHandler(log_file)
        if handler.baseFilename in known:
            handler.close()
        else:
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logger.addHandler(handler)
    return logger
