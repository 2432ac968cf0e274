"""Exception hierarchy shared by every stockbot module.

Each error carries a stable ``kind`` string that the CLI emits in its
machine-readable error payload, plus the process exit code to use.
"""

from __future__ import annotations

import traceback
from typing import Any, Dict, Optional


class StockBotError(Exception):
    kind = "error"
    exit_code = 1

    def __init__(self, message: str, *, module: Optional[str] = None) -> None:
        super().__init__(message)
        self.message = message
        self._module = module

    @property
    def provenance(self) -> str:
        """Innermost ``stockbot.*`` module that raised this error."""
        if self._module:
            return self._module
        found = "stockbot"
        for frame, _ in traceback.walk_tb(self.__traceback__):
            name = frame.f_globals.get("__name__", "")
            if name.startswith("stockbot"):
                found = name
        return found

    def to_payload(self) -> Dict[str, Any]:
        return {"error": {"kind": self.kind, "message": self.message, "module": self.provenance}}


class DimensionError(StockBotError, ValueError):
    kind = "dimension"


class ContractError(StockBotError):
    kind = "contract"


class DomainError(StockBotError, ValueError):
    kind = "domain"


class NumericError(StockBotError, ArithmeticError):
    """An operation produced NaN or infinity."""

    kind = "non-finite"


class ConfigError(StockBotError, ValueError):
    kind = "config-invalid"
    exit_code = 2


class FormatError(StockBotError, ValueError):
    kind = "format"


class DataError(StockBotError, ValueError):
    kind = "data"


class InsufficientDataError(StockBotError, ValueError):
    kind = "insufficient-data"


class DegenerateSeriesError(StockBotError, ValueError):
    kind = "degenerate-series"


class NonFiniteGradientError(StockBotError, ArithmeticError):
    kind = "non-finite-gradient"


class InputNotFoundError(StockBotError, FileNotFoundError):
    kind = "input-not-found"
    exit_code = 2


class SpecMismatchError(StockBotError):
    kind = "spec-mismatch"
    exit_code = 2
