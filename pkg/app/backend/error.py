import logging

from config import EXIT_USAGE
from fusepathlib.datamatrix import InputFormatError
from fusepathlib.diffop import SizeGuardError

ERROR_MESSAGE = """fusepath encountered an unexpected error.
Rerun with --verbose to see the full traceback.
Error type: {error_type}
"""


class UsageError(ValueError):
    pass


def error_message(error: Exception) -> str:
    if isinstance(error, InputFormatError):
        return f"Invalid input: {error}"
    if isinstance(error, SizeGuardError):
        return f"Problem too large: {error}"
    if isinstance(error, (UsageError, ValueError)):
        return f"Error: {error}"
    return ERROR_MESSAGE.format(error_type=type(error))


def exit_code_for(error: Exception) -> int:
    """Every failure that stops a command is a usage or input error; numerical warnings never raise."""
    return EXIT_USAGE


def error_exit(error: Exception, command: str) -> int:
    if not isinstance(error, ValueError):
        logging.exception("Exception in %s: %s", command, error)
    return exit_code_for(error)
