"""Log-log least squares shared by the experiment drivers."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["fit_slope"]


def fit_slope(points):
    """Ordinary least squares of ``log value`` on ``log n``.

    Parameters
    ----------
    points : iterable of (n, value)
        At least three pairs with positive entries.

    Returns
    -------
    slope, stderr : float
        Fitted slope and its standard error from the residual variance
        (zero for an exact fit).
    """
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise ValueError("fit_slope needs at least 3 points")
    arr = np.array(pts)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("fit_slope needs positive finite values")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("fit_slope needs at least two distinct n")
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = len(pts) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, stderr
