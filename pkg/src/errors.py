"""Exception hierarchy shared by the library, the CLI and the MCP tools."""

from __future__ import annotations

from typing import Any


class KanError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 1


class ConfigurationError(KanError):
    """An invalid spec or run configuration."""


class InputError(KanError):
    """Bad call-site input: shapes, empty datasets, missing files."""


class DataFormatError(InputError):
    """A malformed IDX file or sample export."""


class SizeGuardError(InputError):
    """A dense Hessian was requested above the verification-scale guard."""


class NumericalError(KanError):
    """Non-finite values or loss blow-up during training.

    ``partial_log`` holds whatever trajectory was recorded before the abort.
    """

    exit_code = 2

    def __init__(self, message: str, iteration: int | None = None, partial_log: Any = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration
        self.partial_log = partial_log
