# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; mirrors ``_kernels_py`` exactly in semantics."""
import numpy as np
from libc.math cimport isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm


def accumulate_face_normals(vertices, faces):
    cdef double[:, ::1] v = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef long long[:, ::1] f = np.ascontiguousarray(faces, dtype=np.int64)
    out_arr = np.zeros((v.shape[0], 3))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, k
    cdef long long a, b, c
    cdef double e1x, e1y, e1z, e2x, e2y, e2z, nx, ny, nz
    for t in range(f.shape[0]):
        a = f[t, 0]; b = f[t, 1]; c = f[t, 2]
        e1x = v[b, 0] - v[a, 0]; e1y = v[b, 1] - v[a, 1]; e1z = v[b, 2] - v[a, 2]
        e2x = v[c, 0] - v[a, 0]; e2y = v[c, 1] - v[a, 1]; e2z = v[c, 2] - v[a, 2]
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        for k in (a, b, c):
            out[k, 0] += nx; out[k, 1] += ny; out[k, 2] += nz
    return out_arr


cdef inline void gemm_nt(double* A, double* B, double* C, int n, int m, int k, double beta) nogil:
    # C (n x m) = A (n x k) @ B (m x k)^T + beta C, all row-major
    cdef char ta = b'T', tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &m, &n, &k, &one, B, &k, A, &k, &beta, C, &m)


cdef inline void gemm_nn(double* A, double* B, double* C, int n, int m, int k) nogil:
    # C (n x m) = A (n x k) @ B (k x m)
    cdef char ta = b'N', tb = b'N'
    cdef double one = 1.0, zero = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &one, B, &m, A, &k, &zero, C, &m)


cdef inline void gemm_tn_update(double* A, double* B, double* C, int n, int m, int k, double alpha) nogil:
    # C (m x k) += alpha * B (n x m)^T @ A (n x k)
    cdef char ta = b'N', tb = b'T'
    cdef double one = 1.0
    dgemm(&ta, &tb, &k, &m, &n, &alpha, A, &k, B, &m, &one, C, &k)


def mlp_gd(list weights, x, y, double lr, long max_steps, double eps, long record_every=1):
    cdef int nl = len(weights)
    cdef int n = x.shape[0]
    cdef list keep = []
    cdef double** W = <double**> malloc(nl * sizeof(double*))
    cdef double** H = <double**> malloc(nl * sizeof(double*))   # H[0] = x, H[l] = relu(z_l)
    cdef double** D = <double**> malloc(nl * sizeof(double*))   # delta at layer output
    cdef double** G = <double**> malloc(nl * sizeof(double*))
    cdef int* rows = <int*> malloc(nl * sizeof(int))
    cdef int* cols = <int*> malloc(nl * sizeof(int))
    cdef double[:, ::1] mv
    cdef double[::1] flat
    cdef int l, i
    cdef Py_ssize_t j, size
    cdef double loss, diff
    cdef long steps = 0
    trace = []
    try:
        for l in range(nl):
            w = weights[l]
            if not (w.flags.c_contiguous and w.dtype == np.float64):
                raise ValueError("weights must be C-contiguous float64")
            mv = w
            W[l] = &mv[0, 0]
            rows[l] = w.shape[0]
            cols[l] = w.shape[1]
        xa = np.ascontiguousarray(x, dtype=np.float64)
        ya = np.ascontiguousarray(y, dtype=np.float64)
        keep.extend([xa, ya])
        mv = xa
        H[0] = &mv[0, 0]
        for l in range(nl):
            buf = np.zeros((n, rows[l]))
            keep.append(buf)
            mv = buf
            D[l] = &mv[0, 0]
            if l + 1 < nl:
                hb = np.zeros((n, rows[l]))
                keep.append(hb)
                mv = hb
                H[l + 1] = &mv[0, 0]
        mv = ya
        yp = &mv[0, 0]
        while True:
            with nogil:
                for l in range(nl - 1):
                    gemm_nt(H[l], W[l], H[l + 1], n, rows[l], cols[l], 0.0)
                    size = n * rows[l]
                    for j in range(size):
                        if H[l + 1][j] < 0.0 or not H[l + 1][j] > 0.0:
                            H[l + 1][j] = 0.0
                gemm_nt(H[nl - 1], W[nl - 1], D[nl - 1], n, rows[nl - 1], cols[nl - 1], 0.0)
                loss = 0.0
                size = n * rows[nl - 1]
                for j in range(size):
                    diff = D[nl - 1][j] - yp[j]
                    D[nl - 1][j] = diff
                    loss += diff * diff
                loss *= 0.5
            if steps % record_every == 0:
                trace.append(loss)
            if loss <= eps or not isfinite(loss) or steps >= max_steps:
                if steps % record_every != 0:
                    trace.append(loss)
                return steps, loss, np.array(trace)
            with nogil:
                for l in range(nl - 1, -1, -1):
                    if l > 0:
                        # delta_{l-1} = (delta_l @ W_l) * (H_l > 0), computed before W_l changes
                        gemm_nn(D[l], W[l], D[l - 1], n, cols[l], rows[l])
                        size = n * cols[l]
                        for j in range(size):
                            if not H[l][j] > 0.0:
                                D[l - 1][j] = 0.0
                    gemm_tn_update(H[l], D[l], W[l], n, rows[l], cols[l], -lr)
            steps += 1
    finally:
        free(W); free(H); free(D); free(G); free(rows); free(cols)
