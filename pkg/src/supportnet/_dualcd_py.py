"""Pure-python twin of the compiled dual coordinate descent epoch.

Same update rule and visit semantics as ``_dualcd.pyx``; the per-
coordinate dot products go through numpy, so results can differ from the
compiled kernel in the last few ulps but nowhere beyond that. Selected
automatically when the extension is not built (or forced via
SUPPORTNET_PURE_PYTHON=1).
"""

import numpy as np


def cd_epoch(x, y, q_diag, alpha, w, c, order):
    max_pg = 0.0
    for i in order:
        g = y[i] * float(np.dot(w, x[i])) - 1.0
        a_old = alpha[i]

        if a_old <= 0.0:
            pg = g if g < 0.0 else 0.0
        elif a_old >= c:
            pg = g if g > 0.0 else 0.0
        else:
            pg = g

        if pg != 0.0:
            if q_diag[i] > 0.0:
                a_new = min(max(a_old - g / q_diag[i], 0.0), c)
            else:
                a_new = c if g < 0.0 else 0.0
            delta = (a_new - a_old) * y[i]
            if delta != 0.0:
                w += delta * x[i]
                alpha[i] = a_new
            max_pg = max(max_pg, abs(pg))

    return max_pg
