"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes: configuration problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class RenalRiskError(Exception):
    exit_code = 1


class ConfigError(RenalRiskError):
    """Invalid configuration or usage."""

    exit_code = 1


class DataError(RenalRiskError):
    """Missing, malformed, or inconsistent data artifacts."""

    exit_code = 2


class ParseError(DataError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NumericError(RenalRiskError):
    """Non-finite loss or other numeric breakdown during training."""

    exit_code = 3
