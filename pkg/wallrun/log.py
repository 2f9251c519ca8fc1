import logging
import sys

def get_logger(name: str, level: int = logging.INFO) -> logging.Logger:
    """
    Return the logger for `name` with a single stdout handler attached.

    Relaxers, integrators and the CLI all call this; the handler check keeps
    re-imports and repeated construction from duplicating output lines.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    # Only add handler if none exists (prevents duplicates on module reload)
    if not logger.handlers:
        stream_handler = logging.StreamHandler(sys.stdout)
        stream_handler.setFormatter(
                logging.Formatter('%(levelname)s: %(message)s')
        )
        logger.addHandler(stream_handler)
        logger.propagate = False
    return logger

def set_level(level: int | str) -> None:
    """Set the level of every wallrun logger created so far."""
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith('wallrun') and isinstance(logger, logging.Logger):
            logger.setLevel(level)
