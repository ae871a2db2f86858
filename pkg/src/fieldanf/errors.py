from typing import Optional


class FieldAnfError(Exception):
    """Base error; `exit_code` is what the command line tool exits with"""

    exit_code: int = 1


class ParameterError(FieldAnfError):
    exit_code = 4


class IncompatibleSketchError(ParameterError):
    """Counters of different kinds (or b, or seed) cannot be combined"""


class ParseError(FieldAnfError):
    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    @classmethod
    def from_decode(cls, path: str, err: UnicodeDecodeError) -> "ParseError":
        """Wrap an undecodable input file, pointing at the line of the bad byte"""
        line = err.object[: err.start].count(b"\n") + 1
        return cls(f"{path} is not valid UTF-8 text: {err.reason}", line)


class ScriptError(ParseError):
    """Malformed or inconsistent churn script"""

    exit_code = 5


class SchedulerError(FieldAnfError):
    exit_code = 5


class ConsistencyError(FieldAnfError):
    exit_code = 6
