# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP/Adam kernels.

Matrices are C-contiguous float64; BLAS sees them as their column-major
transposes, which is why the dgemm argument order looks swapped.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"


cdef void _affine(double[:, ::1] w, double[::1] b, double[:, ::1] x, double[:, ::1] z, bint relu) noexcept nogil:
    # z (B x out) = x (B x in) @ w.T (in x out) + b
    cdef int n_out = w.shape[0]
    cdef int n_in = w.shape[1]
    cdef int batch = x.shape[0]
    cdef double one = 1.0, zero = 0.0
    cdef char ta = b'T', tb = b'N'
    cdef Py_ssize_t i, j
    dgemm(&ta, &tb, &n_out, &batch, &n_in, &one, &w[0, 0], &n_in, &x[0, 0], &n_in, &zero, &z[0, 0], &n_out)
    for i in range(batch):
        for j in range(n_out):
            z[i, j] += b[j]
            if relu and z[i, j] < 0.0:
                z[i, j] = 0.0


def mlp_forward(list weights, list biases, x):
    cdef Py_ssize_t k, last = len(weights) - 1
    cdef double[:, ::1] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] w
    acts = [x]
    for k in range(last + 1):
        w = weights[k]
        out = np.empty((h.shape[0], w.shape[0]), dtype=np.float64)
        _affine(w, biases[k], h, out, k < last)
        acts.append(out)
        h = out
    return acts


def mlp_backward(list weights, list acts, grad_out, list grad_weights, list grad_biases):
    cdef Py_ssize_t k, i, j
    cdef int n_out, n_in, batch
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N', tt = b'T'
    cdef double[:, ::1] delta = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef double[:, ::1] a, w, gw, nxt
    cdef double[::1] gb
    batch = delta.shape[0]
    for k in range(len(weights) - 1, -1, -1):
        w = weights[k]
        a = np.ascontiguousarray(acts[k], dtype=np.float64)
        gw = grad_weights[k]
        gb = grad_biases[k]
        n_out = w.shape[0]
        n_in = w.shape[1]
        with nogil:
            # gw (out x in) = delta.T @ a
            dgemm(&tn, &tt, &n_in, &n_out, &batch, &one, &a[0, 0], &n_in, &delta[0, 0], &n_out, &zero, &gw[0, 0], &n_in)
            for j in range(n_out):
                gb[j] = 0.0
            for i in range(batch):
                for j in range(n_out):
                    gb[j] += delta[i, j]
        if k > 0:
            nxt = np.empty((batch, n_in), dtype=np.float64)
            with nogil:
                # nxt (B x in) = delta @ w, masked by the ReLU of the layer input
                dgemm(&tn, &tn, &n_in, &batch, &n_out, &one, &w[0, 0], &n_in, &delta[0, 0], &n_out, &zero, &nxt[0, 0], &n_in)
                for i in range(batch):
                    for j in range(n_in):
                        if a[i, j] <= 0.0:
                            nxt[i, j] = 0.0
            delta = nxt


def adam_update(double[::1] params, double[::1] grad, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double c1 = 1.0 - pow(beta1, step)
    cdef double c2 = 1.0 - pow(beta2, step)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            params[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
