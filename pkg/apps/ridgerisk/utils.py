"""
Utility functions for parsing and validating numeric CLI input
"""

import math
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

GRID_SPACINGS = ("linear", "log")


def parse_number(token: str) -> float:
    """
    Parse a real number, accepting plain decimals and fractions such as "1/3".

    Args:
        token: Text to parse

    Returns:
        The value as a float

    Raises:
        ValueError: if the token is not a finite number
    """
    text = token.strip()
    if not text:
        raise ValueError("empty number")
    try:
        value = float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError) as e:
        raise ValueError(f"not a number: {token!r}") from e
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {token!r}")
    return value


def parse_number_list(text: str) -> List[float]:
    """
    Parse a comma separated list of numbers.

    Args:
        text: Text such as "1,0.5" or "1/3,2/3"

    Returns:
        List of floats, in input order
    """
    if text is None or not text.strip():
        raise ValueError("empty list")
    return [parse_number(token) for token in text.split(",")]


def validate_positive(name: str, value: float, minimum: float = 0.0) -> Tuple[bool, Optional[str]]:
    """
    Validate that a parameter is finite and strictly above a minimum.

    Returns:
        Tuple of (is_valid, error_message)
    """
    if value is None or not math.isfinite(value):
        return False, f"{name} must be a finite number"
    if value <= 0:
        return False, f"{name} must be positive"
    if value < minimum:
        return False, f"{name} must be at least {minimum:g}"
    return True, None


def validate_nonnegative(name: str, value: float) -> Tuple[bool, Optional[str]]:
    if value is None or not math.isfinite(value):
        return False, f"{name} must be a finite number"
    if value < 0:
        return False, f"{name} must be nonnegative"
    return True, None


def validate_range(start: float, stop: float, steps: int, spacing: str = "linear") -> Tuple[bool, Optional[str]]:
    """
    Validate a sweep range.

    Args:
        start: First grid value
        stop: Last grid value
        steps: Number of grid points
        spacing: "linear" or "log"

    Returns:
        Tuple of (is_valid, error_message)
    """
    if spacing not in GRID_SPACINGS:
        return False, f"spacing must be one of {', '.join(GRID_SPACINGS)}"
    if not (math.isfinite(start) and math.isfinite(stop)):
        return False, "range bounds must be finite"
    if start >= stop:
        return False, "range start must be below stop"
    if steps < 2:
        return False, "range needs at least 2 steps"
    if spacing == "log" and start <= 0:
        return False, "log spacing needs a positive start"
    return True, None


def make_grid(start: float, stop: float, steps: int, spacing: str = "linear") -> np.ndarray:
    """
    Build an ascending grid with both endpoints included.

    Args:
        start: First grid value
        stop: Last grid value
        steps: Number of points
        spacing: "linear" or "log"

    Returns:
        numpy array of grid values
    """
    is_valid, error_msg = validate_range(start, stop, steps, spacing)
    if not is_valid:
        raise ValueError(error_msg)
    if spacing == "log":
        return np.geomspace(start, stop, steps)
    return np.linspace(start, stop, steps)


def format_float(value: float) -> str:
    """Full-precision, locale-independent text for a float ("nan" for missing values)."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)
