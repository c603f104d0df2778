"""
Error handlers: map exceptions to process exit codes.
"""

import json
import logging

from dasnlab.errors.exceptions import DivergenceError, LabException

logger = logging.getLogger("dasnlab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_DIVERGENCE = 3


def exit_code_for(error: BaseException) -> int:
    """Exit code of an exception raised by a command."""
    if isinstance(error, LabException):
        return error.exit_code
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_CONFIG


def handle_exception(error: BaseException) -> int:
    """
    Log the error and return its exit code.

    Lab exceptions are expected failures and are logged without a traceback;
    anything else is logged with one. The structured form of a lab
    exception goes to the debug log.
    """
    code = exit_code_for(error)
    if isinstance(error, LabException):
        logger.debug(f"error details: {json.dumps(error.to_dict(), default=str)}")
    if isinstance(error, DivergenceError):
        logger.error(f"Training diverged: {error.message}")
    elif isinstance(error, LabException):
        details = error.payload.get("errors") if error.payload else None
        logger.error(f"{type(error).__name__}: {error.message}")
        for item in details or []:
            logger.error(f"  {item.get('loc', '')}: {item.get('msg', '')}")
    elif isinstance(error, OSError):
        logger.error(f"I/O error: {error}")
    else:
        logger.exception(f"Unexpected error: {error}")
    return code
