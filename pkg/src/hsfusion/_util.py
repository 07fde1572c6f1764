"""Small numerical helpers shared across modules."""

import numpy as np


def precision(variances, data=None) -> np.ndarray:
    """Per-band inverse noise variances.

    Zero or tiny variances are floored at ``1e-12`` times the mean signal
    power of ``data`` (or at machine tiny) so noiseless bands get a large but
    finite weight.
    """
    var = np.asarray(variances, dtype=np.float64).ravel()
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("noise variances must be finite and nonnegative")
    floor = np.finfo(np.float64).tiny
    if data is not None:
        floor = max(floor, 1e-12 * float(np.mean(np.square(data))))
    return 1.0 / np.maximum(var, floor)
