import dataclasses
import logging
from typing import Optional


logger = logging.getLogger(__name__)


#
# __str__()-related functions
#

def basic_str(obj):
    """
    Handy for writing quick and dirty __str__() implementations.
    """
    return obj.__class__.__name__ + ': ' + obj.__repr__()


#
# ---- errors ----
#
# All of our errors are RuntimeErrors so that callers (mainly the CLI) can catch them uniformly. The subclasses exist
# so that tests and callers can tell them apart, and so that some can carry extra information (e.g., line numbers).
#

class ShapeError(RuntimeError):
    """
    Raised when tensor shapes do not agree for an operation.
    """
    pass


class ContractError(RuntimeError):
    """
    Raised when a caller violates an operation's precondition, e.g., backward() on a non-scalar.
    """
    pass


class PoseValidationError(RuntimeError):
    """
    Raised when a matrix is not a rigid transform.
    """
    pass


class PoseParseError(RuntimeError):

    def __init__(self, message, line_number=None):
        super().__init__(f"line {line_number}: {message}" if line_number is not None else message)
        self.line_number = line_number


class AlignmentError(RuntimeError):
    pass


class ConfigError(RuntimeError):
    pass


class CheckpointLoadError(RuntimeError):
    pass


class AssociationError(RuntimeError):

    def __init__(self, message, unmatched_timestamps=()):
        super().__init__(message)
        self.unmatched_timestamps = list(unmatched_timestamps)


class TrainingError(RuntimeError):
    """
    Raised when training cannot continue, e.g., the loss became NaN or Inf.
    """
    pass


#
# ---- float formatting ----
#

def format_float(value):
    """
    :return: value formatted with 17 significant digits, which is enough for an exact float64 round trip
    """
    return f"{value:.17g}"


#
# ---- plain-text tables ----
#

def aligned_table_lines(rows):
    """
    :param rows: list of equal-length tuples of strings. the first row is typically a header
    :return: list of lines with each column left-justified to its widest cell
    """
    widths = [max(len(row[col_idx]) for row in rows) for col_idx in range(len(rows[0]))]
    return ['  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in rows]


#
# ---- config field coercion ----
#

def _coerce_int(value):
    if isinstance(value, bool):
        raise ValueError(f"not an int: {value!r}")
    elif isinstance(value, int):
        return value

    number = float(value)
    if not number.is_integer():
        raise ValueError(f"not an int: {value!r}")

    return int(number)


def _coerce_float(value):
    if isinstance(value, bool):
        raise ValueError(f"not a float: {value!r}")

    return float(value)


_TYPE_TO_COERCER = {int: _coerce_int, float: _coerce_float, Optional[int]: _coerce_int,
                    Optional[float]: _coerce_float}


def coerce_numeric_fields(config):
    """
    Converts a dataclass instance's int and float fields in place, so that numbers that arrive as strings (e.g., YAML
    1.1 reads `1e-3` as a str) or as integral floats are accepted. None is kept for Optional fields.

    :raises ConfigError: if a value cannot be converted
    """
    for config_field in dataclasses.fields(config):
        coercer = _TYPE_TO_COERCER.get(config_field.type)
        value = getattr(config, config_field.name)
        if (coercer is None) or ((value is None) and (config_field.type in [Optional[int], Optional[float]])):
            continue

        try:
            setattr(config, config_field.name, coercer(value))
        except (TypeError, ValueError) as ex:
            raise ConfigError(f"{type(config).__name__}.{config_field.name} must be a number. got {value!r}. "
                              f"ex={ex!r}")
