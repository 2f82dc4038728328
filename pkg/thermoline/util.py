import numpy as np


class ThermolineError(Exception):
    pass


def trapezoid_weights(n: int, dx: float) -> np.ndarray:
    """
    Quadrature weights of the trapezoid rule on `n` uniformly spaced nodes,
    so that `weights @ values` equals `scipy.integrate.trapezoid(values, dx=dx)`.
    """
    weights = np.full(n, dx)
    weights[0] = weights[-1] = dx / 2
    return weights
