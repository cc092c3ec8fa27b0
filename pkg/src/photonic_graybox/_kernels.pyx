# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for stacks of small Hermitian matrices.

Every routine works on a contiguous ``(B, n, n)`` stack and loops over the
batch in C. The eigensolver is a cyclic complex Jacobi method, which is
accurate to a few ulps relative to the matrix norm for the tiny matrices
(n <= ~10) this package deals with.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, cos, sin

from photonic_graybox.errors import ConvergenceError

cnp.import_array()

DEF MAX_SWEEPS = 60


cdef inline double cabs2(double complex z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef int _jacobi(double complex* a, double complex* v, double* w,
                 Py_ssize_t n) noexcept nogil:
    """Diagonalize the row-major ``n x n`` matrix ``a`` in place.

    Eigenvectors accumulate in the columns of ``v``. Returns the number of
    sweeps used, or -1 on non-convergence.
    """
    cdef Py_ssize_t p, q, k, sweep
    cdef double off, g, apq_abs, theta, t, c, s, app, aqq, tiny = 0.0
    cdef double complex ph, akp, akq, jqp, jqq

    for p in range(n):
        for q in range(n):
            v[p * n + q] = 0
        v[p * n + p] = 1
        a[p * n + p] = a[p * n + p].real
    for k in range(n * n):
        tiny += cabs2(a[k])
    # stop once the off-diagonal mass is below round-off of the whole matrix
    tiny *= 1e-32

    for sweep in range(MAX_SWEEPS):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += cabs2(a[p * n + q])
        if off <= tiny:
            for p in range(n):
                w[p] = a[p * n + p].real
            return sweep
        for p in range(n):
            for q in range(p + 1, n):
                apq_abs = sqrt(cabs2(a[p * n + q]))
                if apq_abs == 0.0:
                    continue
                app = a[p * n + p].real
                aqq = a[q * n + q].real
                g = 100.0 * apq_abs
                if sweep > 3 and fabs(app) + g == fabs(app) and fabs(aqq) + g == fabs(aqq):
                    a[p * n + q] = 0
                    a[q * n + p] = 0
                    continue
                # rotate the phase out of a[p, q], then a real Jacobi rotation
                ph = a[p * n + q] / apq_abs
                theta = 0.5 * (aqq - app) / apq_abs
                t = 1.0 / (fabs(theta) + sqrt(1.0 + theta * theta))
                if theta < 0.0:
                    t = -t
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                # J = diag(1, conj(ph)) @ [[c, s], [-s, c]]
                jqp = -s * ph.conjugate()
                jqq = c * ph.conjugate()
                for k in range(n):
                    akp = a[k * n + p]
                    akq = a[k * n + q]
                    a[k * n + p] = akp * c + akq * jqp
                    a[k * n + q] = akp * s + akq * jqq
                for k in range(n):
                    akp = a[p * n + k]
                    akq = a[q * n + k]
                    a[p * n + k] = c * akp + jqp.conjugate() * akq
                    a[q * n + k] = s * akp + jqq.conjugate() * akq
                for k in range(n):
                    akp = v[k * n + p]
                    akq = v[k * n + q]
                    v[k * n + p] = akp * c + akq * jqp
                    v[k * n + q] = akp * s + akq * jqq
                a[p * n + q] = 0
                a[q * n + p] = 0
                a[p * n + p] = a[p * n + p].real
                a[q * n + q] = a[q * n + q].real
    return -1


cdef void _sort_eig(double* w, double complex* v, Py_ssize_t n) noexcept nogil:
    # insertion sort, ascending; columns of v follow
    cdef Py_ssize_t i, j, k
    cdef double key
    cdef double complex tmp
    for i in range(1, n):
        j = i
        while j > 0 and w[j - 1] > w[j]:
            key = w[j]
            w[j] = w[j - 1]
            w[j - 1] = key
            for k in range(n):
                tmp = v[k * n + j]
                v[k * n + j] = v[k * n + j - 1]
                v[k * n + j - 1] = tmp
            j -= 1


def herm_eig_batch(h):
    """Eigen-decompose a stack of Hermitian matrices, eigenvalues ascending."""
    work_arr = np.array(h, dtype=np.complex128, order="C", copy=True)
    cdef double complex[:, :, ::1] work = work_arr
    cdef Py_ssize_t b, nb = work.shape[0], n = work.shape[1]
    w_arr = np.empty((nb, n), dtype=np.float64)
    v_arr = np.empty((nb, n, n), dtype=np.complex128)
    cdef double[:, ::1] w = w_arr
    cdef double complex[:, :, ::1] v = v_arr
    cdef int status
    cdef Py_ssize_t bad = -1
    if nb == 0:
        return w_arr, v_arr
    with nogil:
        for b in range(nb):
            status = _jacobi(&work[b, 0, 0], &v[b, 0, 0], &w[b, 0], n)
            if status < 0:
                bad = b
                break
            _sort_eig(&w[b, 0], &v[b, 0, 0], n)
    if bad >= 0:
        raise ConvergenceError(f"Jacobi sweep cap reached for matrix {bad}")
    return w_arr, v_arr


def expm_from_eig(w_in, v_in, double length):
    """Assemble ``V diag(exp(-i w l)) V^H`` for each matrix in the stack."""
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef const double complex[:, :, ::1] v = np.ascontiguousarray(v_in, dtype=np.complex128)
    cdef Py_ssize_t nb = v.shape[0], n = v.shape[1]
    u_arr = np.zeros((nb, n, n), dtype=np.complex128)
    cdef double complex[:, :, ::1] u = u_arr
    cdef double complex[::1] e = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t b, i, j, k
    cdef double phi
    cdef double complex acc
    with nogil:
        for b in range(nb):
            for k in range(n):
                phi = -w[b, k] * length
                e[k] = cos(phi) + 1j * sin(phi)
            for i in range(n):
                for j in range(n):
                    acc = 0
                    for k in range(n):
                        acc = acc + v[b, i, k] * e[k] * v[b, j, k].conjugate()
                    u[b, i, j] = acc
    return u_arr


def exp_adjoint_batch(w_in, v_in, double length, g_in, double rel_tol):
    """Pull an upstream gradient on ``exp(-i H l)`` back onto ``H``.

    Works in the eigenbasis with divided differences of ``x -> exp(-i x l)``
    and returns the Hermitian part of the result.
    """
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef const double complex[:, :, ::1] v = np.ascontiguousarray(v_in, dtype=np.complex128)
    cdef const double complex[:, :, ::1] g = np.ascontiguousarray(g_in, dtype=np.complex128)
    cdef Py_ssize_t nb = v.shape[0], n = v.shape[1]
    out_arr = np.empty((nb, n, n), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    cdef double complex[:, ::1] t1 = np.empty((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] t2 = np.empty((n, n), dtype=np.complex128)
    cdef double complex[::1] e = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t b, i, j, k
    cdef double wmax, tol, d, phi
    cdef double complex acc, kern
    with nogil:
        for b in range(nb):
            wmax = 1.0
            for k in range(n):
                phi = -w[b, k] * length
                e[k] = cos(phi) + 1j * sin(phi)
                if fabs(w[b, k]) > wmax:
                    wmax = fabs(w[b, k])
            tol = rel_tol * wmax
            # t1 = V^H G
            for i in range(n):
                for j in range(n):
                    acc = 0
                    for k in range(n):
                        acc = acc + v[b, k, i].conjugate() * g[b, k, j]
                    t1[i, j] = acc
            # t2 = (t1 V) * conj(kernel)
            for i in range(n):
                for j in range(n):
                    acc = 0
                    for k in range(n):
                        acc = acc + t1[i, k] * v[b, k, j]
                    d = w[b, i] - w[b, j]
                    if fabs(d) < tol:
                        kern = -1j * length * e[i]
                    else:
                        kern = (e[i] - e[j]) / d
                    t2[i, j] = acc * kern.conjugate()
            # t1 = V t2
            for i in range(n):
                for j in range(n):
                    acc = 0
                    for k in range(n):
                        acc = acc + v[b, i, k] * t2[k, j]
                    t1[i, j] = acc
            # out = t1 V^H, Hermitian part
            for i in range(n):
                for j in range(n):
                    acc = 0
                    for k in range(n):
                        acc = acc + t1[i, k] * v[b, j, k].conjugate()
                    t2[i, j] = acc
            for i in range(n):
                for j in range(n):
                    out[b, i, j] = 0.5 * (t2[i, j] + t2[j, i].conjugate())
    return out_arr
