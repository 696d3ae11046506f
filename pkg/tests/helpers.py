"""Shared test utilities."""
import numpy as np

from dispcascade.lindblad import rhs


def liouvillian(me, t=0.0):
    """Matrix of rho -> L rho in the row-major vec basis, via the reference rhs."""
    d = me.space.total_dim
    out = np.zeros((d * d, d * d), dtype=complex)
    for k in range(d * d):
        e = np.zeros(d * d, dtype=complex)
        e[k] = 1
        out[:, k] = rhs(me, t, e.reshape(d, d)).ravel()
    return out
