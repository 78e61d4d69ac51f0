# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled GRU sequence kernels; same contract as ``_gru_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _mm(int m, int n, int k, double* A, int lda, double* B, int ldb,
                     double* C, int ldc, double beta) noexcept nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C via column-major dgemm on transposes
    cdef char tr = b'N'
    cdef double one = 1.0
    dgemm(&tr, &tr, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline void _mm_at(int m, int n, int k, double* A, int lda, double* B, int ldb,
                        double* C, int ldc, double beta) noexcept nogil:
    # C(m,n) = A(k,m).T @ B(k,n) + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tn, &tt, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline void _mm_bt(int m, int n, int k, double* A, int lda, double* B, int ldb,
                        double* C, int ldc, double beta) noexcept nogil:
    # C(m,n) = A(m,k) @ B(n,k).T + beta*C
    cdef char tn = b'N'
    cdef char tt = b'T'
    cdef double one = 1.0
    dgemm(&tt, &tn, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double _sig(double a) noexcept nogil:
    cdef double e
    if a >= 0.0:
        return 1.0 / (1.0 + exp(-a))
    e = exp(a)
    return e / (1.0 + e)


cdef inline double _tanh(double a) noexcept nogil:
    # evaluated on |a| so exp never overflows
    cdef double e = exp(-2.0 * (a if a >= 0.0 else -a))
    cdef double v = (1.0 - e) / (1.0 + e)
    return v if a >= 0.0 else -v


def gru_seq_forward(xw_in, mask_in, h0_in, U_in):
    cdef cnp.ndarray[double, ndim=3, mode="c"] xw = np.ascontiguousarray(xw_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] mask = np.ascontiguousarray(mask_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] U = np.ascontiguousarray(U_in, dtype=np.float64)
    cdef int T = xw.shape[0]
    cdef int B = xw.shape[1]
    cdef int H = xw.shape[2] // 3
    cdef int H3 = 3 * H
    cdef int BH = B * H
    cdef cnp.ndarray[double, ndim=3, mode="c"] hs = np.empty((T + 1, B, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] z = np.empty((max(T, 1), B, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] r = np.empty((max(T, 1), B, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] c = np.empty((max(T, 1), B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] g = np.empty((B, H3))
    cdef cnp.ndarray[double, ndim=2, mode="c"] rh = np.empty((B, H))
    hs[0] = h0_in
    if T == 0 or B == 0 or H == 0:
        return hs, z[:T], r[:T], c[:T]
    cdef int t, i, j, k, q
    cdef double m, cc, hv
    cdef double* pxw
    cdef double* ph
    cdef double* phn
    cdef double* pz
    cdef double* pr
    cdef double* pc
    cdef double* pg = &g[0, 0]
    cdef double* prh = &rh[0, 0]
    cdef double* pU = &U[0, 0]
    cdef double* pm = &mask[0, 0]
    with nogil:
        for t in range(T):
            ph = &hs[0, 0, 0] + t * BH
            phn = ph + BH
            pxw = &xw[0, 0, 0] + t * B * H3
            pz = &z[0, 0, 0] + t * BH
            pr = &r[0, 0, 0] + t * BH
            pc = &c[0, 0, 0] + t * BH
            _mm(B, 2 * H, H, ph, H, pU, H3, pg, H3, 0.0)
            for i in range(B):
                for j in range(H):
                    k = i * H + j
                    q = i * H3 + j
                    pz[k] = _sig(pxw[q] + pg[q])
                    pr[k] = _sig(pxw[q + H] + pg[q + H])
                    prh[k] = pr[k] * ph[k]
            _mm(B, H, H, prh, H, pU + 2 * H, H3, pg + 2 * H, H3, 0.0)
            for i in range(B):
                m = pm[t * B + i]
                for j in range(H):
                    k = i * H + j
                    q = i * H3 + 2 * H + j
                    cc = _tanh(pxw[q] + pg[q])
                    pc[k] = cc
                    hv = ph[k]
                    phn[k] = hv + m * pz[k] * (cc - hv)
    return hs, z, r, c


def gru_seq_backward(dhs_in, mask_in, hs_in, z_in, r_in, c_in, U_in):
    cdef cnp.ndarray[double, ndim=3, mode="c"] dhs = np.ascontiguousarray(dhs_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] mask = np.ascontiguousarray(mask_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] hs = np.ascontiguousarray(hs_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] r = np.ascontiguousarray(r_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] U = np.ascontiguousarray(U_in, dtype=np.float64)
    cdef int T = z.shape[0]
    cdef int B = z.shape[1]
    cdef int H = z.shape[2]
    cdef int H3 = 3 * H
    cdef int BH = B * H
    cdef cnp.ndarray[double, ndim=3, mode="c"] dxw = np.empty((T, B, H3))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dU = np.zeros((H, H3))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dh = dhs[T].copy()
    if T == 0 or B == 0 or H == 0:
        return dxw, dh, dU
    cdef cnp.ndarray[double, ndim=2, mode="c"] dprev = np.empty((B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] drh = np.empty((B, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] rh = np.empty((B, H))
    cdef int t, i, j, k, q
    cdef double m, dhp, zz, rr, cc, hv
    cdef double* pd
    cdef double* ph
    cdef double* pz
    cdef double* pr
    cdef double* pc
    cdef double* pext
    cdef double* pU = &U[0, 0]
    cdef double* pdU = &dU[0, 0]
    cdef double* pdh = &dh[0, 0]
    cdef double* pdprev = &dprev[0, 0]
    cdef double* pdrh = &drh[0, 0]
    cdef double* prh = &rh[0, 0]
    cdef double* pm = &mask[0, 0]
    with nogil:
        for t in range(T - 1, -1, -1):
            pd = &dxw[0, 0, 0] + t * B * H3
            ph = &hs[0, 0, 0] + t * BH
            pz = &z[0, 0, 0] + t * BH
            pr = &r[0, 0, 0] + t * BH
            pc = &c[0, 0, 0] + t * BH
            pext = &dhs[0, 0, 0] + t * BH
            for i in range(B):
                m = pm[t * B + i]
                for j in range(H):
                    k = i * H + j
                    q = i * H3 + j
                    dhp = m * pdh[k]
                    zz = pz[k]
                    cc = pc[k]
                    hv = ph[k]
                    pdprev[k] = pdh[k] - dhp * zz
                    pd[q + 2 * H] = dhp * zz * (1.0 - cc * cc)
                    pd[q] = dhp * (cc - hv) * zz * (1.0 - zz)
                    prh[k] = pr[k] * hv
            _mm_bt(B, H, H, pd + 2 * H, H3, pU + 2 * H, H3, pdrh, H, 0.0)
            for i in range(B):
                for j in range(H):
                    k = i * H + j
                    rr = pr[k]
                    pd[i * H3 + H + j] = pdrh[k] * ph[k] * rr * (1.0 - rr)
                    pdprev[k] += pdrh[k] * rr
            _mm_bt(B, H, 2 * H, pd, H3, pU, H3, pdprev, H, 1.0)
            _mm_at(H, 2 * H, B, ph, H, pd, H3, pdU, H3, 1.0)
            _mm_at(H, H, B, prh, H, pd + 2 * H, H3, pdU + 2 * H, H3, 1.0)
            for k in range(BH):
                pdh[k] = pdprev[k] + pext[k]
    return dxw, dh, dU
