"""Small argument checks shared across modules."""

import numbers

import numpy as np


def check_positive_int(value, name, allow_zero=False):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else ">= 1"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value


def check_finite(value, name):
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


def check_nonneg(value, name):
    value = check_finite(value, name)
    if value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value}")
    return value


def check_state(t, b, T=None, B=None):
    """Validate a (remaining auctions, remaining budget) pair against grid bounds."""
    t = check_positive_int(t, "t", allow_zero=True)
    b = check_positive_int(b, "b", allow_zero=True)
    if T is not None and t > T:
        raise ValueError(f"t={t} outside table range [0, {T}]")
    if B is not None and b > B:
        raise ValueError(f"b={b} outside table range [0, {B}]")
    return t, b
