# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop of dual coordinate descent for the linear L1-hinge SVM.

One call sweeps every coordinate once in the given visit order, updating
the dual variables and the primal weight vector in place, and returns the
largest projected-gradient magnitude seen during the sweep. The epoch
loop, permutation generation and convergence logic stay in Python so both
backends share them exactly.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def cd_epoch(
    double[:, ::1] x,
    double[::1] y,
    double[::1] q_diag,
    double[::1] alpha,
    double[::1] w,
    double c,
    long long[::1] order,
):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t t = x.shape[1]
    cdef Py_ssize_t idx, i, j
    cdef double g, pg, a_old, a_new, delta, dot, max_pg = 0.0

    for idx in range(n):
        i = order[idx]
        dot = 0.0
        for j in range(t):
            dot += w[j] * x[i, j]
        g = y[i] * dot - 1.0
        a_old = alpha[i]

        if a_old <= 0.0:
            pg = g if g < 0.0 else 0.0
        elif a_old >= c:
            pg = g if g > 0.0 else 0.0
        else:
            pg = g

        if pg != 0.0:
            if q_diag[i] > 0.0:
                a_new = a_old - g / q_diag[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > c:
                    a_new = c
            else:
                # zero feature row: the sub-problem is linear in alpha_i
                a_new = c if g < 0.0 else 0.0
            delta = (a_new - a_old) * y[i]
            if delta != 0.0:
                for j in range(t):
                    w[j] += delta * x[i, j]
                alpha[i] = a_new
            if pg < 0.0:
                pg = -pg
            if pg > max_pg:
                max_pg = pg

    return max_pg
