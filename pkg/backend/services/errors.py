"""
Exception types raised across frugal-bench
"""
from typing import List, Optional


class FrugalBenchError(Exception):
    """Base class for all frugal-bench errors"""


class ParameterError(FrugalBenchError, ValueError):
    """Invalid distribution or model parameters"""


class RangeError(FrugalBenchError, ValueError):
    """Argument outside the domain of an operation"""


class FitError(FrugalBenchError):
    """A margin, copula, propensity or regression fit could not be completed"""


class ShapeError(FrugalBenchError, ValueError):
    """Matrix or vector dimensions do not agree"""


class ConditioningError(FrugalBenchError):
    """Covariate block of a correlation matrix could not be inverted"""


class SpecError(FrugalBenchError, ValueError):
    """Inconsistent FrugalSpec or DomainSpec"""


class UnsupportedShiftError(FrugalBenchError, ValueError):
    """Shift kind not defined for the targeted margin"""


class CapabilityError(FrugalBenchError):
    """Predictor asked for an output it cannot produce"""


class InputError(FrugalBenchError, ValueError):
    """Malformed samples handed to a statistical primitive"""


class TestError(FrugalBenchError):
    """A bootstrap harness could not produce a report"""

    __test__ = False  # keep pytest from collecting this class


class PluginError(FrugalBenchError):
    """External plugin process failed"""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr

    def __str__(self) -> str:
        base = super().__str__()
        if self.stderr:
            return f"{base} [plugin stderr: {self.stderr.strip()[-500:]}]"
        return base


class ProtocolError(PluginError):
    """Plugin reply violates the wire protocol"""

    def __init__(self, message: str, field: str, stderr: str = ""):
        super().__init__(f"{message} (field '{field}')", stderr)
        self.detail = message
        self.field = field

    def __reduce__(self):
        # rebuilt in the parent process when raised inside a bootstrap worker
        return (type(self), (self.detail, self.field, self.stderr))


class IngestionError(FrugalBenchError, ValueError):
    """CSV input could not be turned into a study table"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = ""
        if row is not None or column is not None:
            location = f" at row {row}, column '{column}'"
        super().__init__(f"{message}{location}")
        self.row = row
        self.column = column


class ConfigError(FrugalBenchError, ValueError):
    """Experiment configuration failed validation"""

    def __init__(self, message: str, problems: Optional[List[str]] = None):
        self.problems = list(problems or [])
        detail = "; ".join(self.problems)
        super().__init__(f"{message}: {detail}" if detail else message)
