from __future__ import annotations

import numpy as np


class TrainingError(ValueError):
    pass


class SingleClassError(TrainingError):
    pass


class DivergenceError(TrainingError, ArithmeticError):
    pass


class SchemaError(ValueError):
    pass


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_from_logits(z, y) -> float:
    """Mean binary cross-entropy computed from logits without overflow."""
    return float(np.mean(np.logaddexp(0.0, z) - y * z))
