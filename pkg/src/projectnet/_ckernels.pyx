# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Dykstra kernels.  Same packed-plan contract as _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.string cimport memcpy, memset
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()

DEF AFFINE = 0
DEF HALFSPACE = 1
DEF NONNEG = 2
DEF BOX = 3
DEF SIMPLEX = 4


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


cdef double _simplex_tau(const double* y, double* buf, Py_ssize_t d, double total) noexcept nogil:
    cdef Py_ssize_t i
    cdef double css = 0.0, tau = 0.0, cand
    memcpy(buf, y, d * sizeof(double))
    qsort(buf, d, sizeof(double), _cmp_desc)
    for i in range(d):
        css += buf[i]
        cand = (css - total) / (i + 1)
        if buf[i] - cand > 0:
            tau = cand
    return tau


cdef inline void _gemv(char tr, Py_ssize_t rows, Py_ssize_t cols, double alpha, const double* M, const double* v,
                       double* out) noexcept nogil:
    # out += alpha * op(M) v for column-major M (rows x cols); a row-major
    # (cols x rows) array is that M transposed
    cdef int nr = <int>rows, nc = <int>cols, one = 1
    cdef double beta = 1.0
    dgemv(&tr, &nr, &nc, &alpha, <double*>M, &nr, <double*>v, &one, &beta, out, &one)


cdef inline void _gemv_t(Py_ssize_t rows, Py_ssize_t cols, double alpha, const double* M, const double* v,
                         double* out) noexcept nogil:
    _gemv(b'T', rows, cols, alpha, M, v, out)


cdef void _fwd_one(
    const cnp.intp_t[::1] kinds, const cnp.intp_t[::1] foff, const cnp.intp_t[::1] ioff,
    const cnp.intp_t[::1] isize, const double[::1] fdata, const cnp.intp_t[::1] idata,
    const cnp.intp_t[::1] moff, const cnp.intp_t[::1] zslot, const cnp.intp_t[::1] hslot,
    Py_ssize_t d, Py_ssize_t nz, Py_ssize_t nh, Py_ssize_t R,
    double* x, const double* rhs, Py_ssize_t rhs_set, int k,
    unsigned char* mask, double tol, int* cycles_out,
    double* z, double* c, double* y, double* r, double* buf, double* xprev) noexcept nogil:
    cdef Py_ssize_t J = kinds.shape[0]
    cdef Py_ssize_t t, j, i, q, m, nnz, f0, i0, zs, h, mo
    cdef const double* A
    cdef const double* P
    cdef const double* bvec
    cdef const double* vals
    cdef const double* lo
    cdef const double* hi
    cdef double s, lam, acc, bj, inv, tau, diff, yi
    cdef int kind
    memset(z, 0, nz * d * sizeof(double))
    memset(c, 0, nh * sizeof(double))
    cycles_out[0] = 0
    for t in range(k):
        if tol > 0:
            memcpy(xprev, x, d * sizeof(double))
        for j in range(J):
            kind = kinds[j]
            f0 = foff[j]
            if kind == AFFINE:
                m = isize[j]
                A = &fdata[f0]
                P = &fdata[f0 + m * d]
                bvec = &fdata[f0 + 2 * m * d]
                if rhs != NULL and j == rhs_set:
                    bvec = rhs
                # r = A x - b ; x -= P r  (row-major A, P seen as transposed column-major)
                for q in range(m):
                    r[q] = -bvec[q]
                _gemv_t(d, m, 1.0, A, x, r)
                _gemv_t(m, d, -1.0, P, r, x)
            elif kind == HALFSPACE:
                nnz = isize[j]
                i0 = ioff[j]
                vals = &fdata[f0]
                bj = fdata[f0 + nnz]
                inv = fdata[f0 + nnz + 1]
                h = hslot[j]
                s = c[h] / inv - bj
                for q in range(nnz):
                    s = s + vals[q] * x[idata[i0 + q]]
                lam = s * inv if s > 0 else 0.0
                for q in range(nnz):
                    x[idata[i0 + q]] += (c[h] - lam) * vals[q]
                c[h] = lam
                if mask != NULL:
                    mask[t * R + moff[j]] = 1 if s > 0 else 0
            else:
                zs = zslot[j]
                mo = moff[j]
                for i in range(d):
                    y[i] = x[i] + z[zs * d + i]
                if kind == NONNEG:
                    for i in range(d):
                        x[i] = y[i] if y[i] > 0 else 0.0
                        if mask != NULL:
                            mask[t * R + mo + i] = 1 if y[i] > 0 else 0
                elif kind == BOX:
                    lo = &fdata[f0]
                    hi = &fdata[f0 + d]
                    for i in range(d):
                        yi = y[i]
                        if yi < lo[i]:
                            x[i] = lo[i]
                        elif yi > hi[i]:
                            x[i] = hi[i]
                        else:
                            x[i] = yi
                        if mask != NULL:
                            mask[t * R + mo + i] = 1 if (yi > lo[i] and yi < hi[i]) else 0
                else:
                    tau = _simplex_tau(y, buf, d, fdata[f0])
                    for i in range(d):
                        x[i] = y[i] - tau if y[i] - tau > 0 else 0.0
                        if mask != NULL:
                            mask[t * R + mo + i] = 1 if y[i] - tau > 0 else 0
                for i in range(d):
                    z[zs * d + i] = y[i] - x[i]
        cycles_out[0] = t + 1
        if tol > 0:
            diff = 0.0
            for i in range(d):
                if fabs(x[i] - xprev[i]) > diff:
                    diff = fabs(x[i] - xprev[i])
            if diff <= tol:
                break


def dykstra_forward(pk, W, rhs, int k, bint record, double tol=0.0):
    cdef double[:, ::1] x = np.array(W, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t B = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t nz = pk.nz, nh = pk.nh, R = pk.R, mr = pk.m_rhs
    cdef Py_ssize_t rhs_set = pk.rhs_set
    cdef const cnp.intp_t[::1] kinds = pk.kinds
    cdef const cnp.intp_t[::1] foff = pk.foff
    cdef const cnp.intp_t[::1] ioff = pk.ioff
    cdef const cnp.intp_t[::1] isize = pk.isize
    cdef const double[::1] fdata = pk.fdata
    cdef const cnp.intp_t[::1] idata = pk.idata
    cdef const cnp.intp_t[::1] moff = pk.moff
    cdef const cnp.intp_t[::1] zslot = pk.zslot
    cdef const cnp.intp_t[::1] hslot = pk.hslot
    cdef double[:, ::1] rv
    cdef const double* rp = NULL
    cdef unsigned char[:, :, ::1] mk
    cdef unsigned char* mp = NULL
    cdef Py_ssize_t b, maxm = 1
    cdef int cyc = 0, maxcyc = 0
    cdef Py_ssize_t jj
    for jj in range(kinds.shape[0]):
        if kinds[jj] == AFFINE and isize[jj] > maxm:
            maxm = isize[jj]
    masks = None
    if record:
        masks = np.zeros((B, k, R), dtype=np.uint8)
        mk = masks
    if rhs is not None:
        rv = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef double* z = <double*>malloc((nz * d + 1) * sizeof(double))
    cdef double* c = <double*>malloc((nh + 1) * sizeof(double))
    cdef double* y = <double*>malloc((d + 1) * sizeof(double))
    cdef double* r = <double*>malloc((maxm + 1) * sizeof(double))
    cdef double* buf = <double*>malloc((d + 1) * sizeof(double))
    cdef double* xprev = <double*>malloc((d + 1) * sizeof(double))
    if z == NULL or c == NULL or y == NULL or r == NULL or buf == NULL or xprev == NULL:
        free(z); free(c); free(y); free(r); free(buf); free(xprev)
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                rp = &rv[b, 0] if rhs is not None else NULL
                mp = &mk[b, 0, 0] if (record and k > 0 and R > 0) else NULL
                _fwd_one(kinds, foff, ioff, isize, fdata, idata, moff, zslot, hslot,
                         d, nz, nh, R, &x[b, 0], rp, rhs_set, k, mp, tol, &cyc,
                         z, c, y, r, buf, xprev)
                if cyc > maxcyc:
                    maxcyc = cyc
    finally:
        free(z); free(c); free(y); free(r); free(buf); free(xprev)
    return np.asarray(x), masks, maxcyc


cdef void _bwd_one(
    const cnp.intp_t[::1] kinds, const cnp.intp_t[::1] foff, const cnp.intp_t[::1] ioff,
    const cnp.intp_t[::1] isize, const double[::1] fdata, const cnp.intp_t[::1] idata,
    const cnp.intp_t[::1] moff, const cnp.intp_t[::1] zslot, const cnp.intp_t[::1] hslot,
    Py_ssize_t d, Py_ssize_t nz, Py_ssize_t nh, Py_ssize_t R,
    double* gx, double* grhs, Py_ssize_t rhs_set, int k, const unsigned char* mask,
    double* gz, double* gc, double* r) noexcept nogil:
    cdef Py_ssize_t J = kinds.shape[0]
    cdef Py_ssize_t t, j, i, q, m, nnz, f0, i0, zs, h, mo, cnt
    cdef const double* A
    cdef const double* P
    cdef const double* vals
    cdef double acc, ad, glam, inv, mv, v, act
    cdef int kind
    memset(gz, 0, nz * d * sizeof(double))
    memset(gc, 0, nh * sizeof(double))
    for t in range(k - 1, -1, -1):
        for j in range(J - 1, -1, -1):
            kind = kinds[j]
            f0 = foff[j]
            if kind == AFFINE:
                m = isize[j]
                A = &fdata[f0]
                P = &fdata[f0 + m * d]
                if grhs != NULL and j == rhs_set:
                    _gemv(b'N', m, d, 1.0, P, gx, grhs)  # grhs += P^T gx
                # gx -= P A gx  (I - P A is symmetric)
                memset(r, 0, m * sizeof(double))
                _gemv_t(d, m, 1.0, A, gx, r)
                _gemv_t(m, d, -1.0, P, r, gx)
            elif kind == HALFSPACE:
                nnz = isize[j]
                i0 = ioff[j]
                vals = &fdata[f0]
                inv = fdata[f0 + nnz + 1]
                h = hslot[j]
                act = <double>mask[t * R + moff[j]]
                ad = 0.0
                for q in range(nnz):
                    ad = ad + vals[q] * gx[idata[i0 + q]]
                glam = gc[h] - ad
                for q in range(nnz):
                    gx[idata[i0 + q]] += act * glam * inv * vals[q]
                gc[h] = ad + act * glam
            else:
                zs = zslot[j]
                mo = moff[j]
                mv = 0.0
                if kind == SIMPLEX:
                    cnt = 0
                    for i in range(d):
                        if mask[t * R + mo + i]:
                            mv = mv + gx[i] - gz[zs * d + i]
                            cnt = cnt + 1
                    if cnt > 0:
                        mv = mv / cnt
                for i in range(d):
                    if mask[t * R + mo + i]:
                        v = gx[i] - gz[zs * d + i] - mv + gz[zs * d + i]
                    else:
                        v = gz[zs * d + i]
                    gz[zs * d + i] = v
                    gx[i] = v


def dykstra_backward(pk, masks, G, int k, bint need_rhs):
    cdef double[:, ::1] gx = np.array(G, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t B = gx.shape[0], d = gx.shape[1]
    cdef Py_ssize_t nz = pk.nz, nh = pk.nh, R = pk.R, mr = pk.m_rhs
    cdef Py_ssize_t rhs_set = pk.rhs_set
    cdef const cnp.intp_t[::1] kinds = pk.kinds
    cdef const cnp.intp_t[::1] foff = pk.foff
    cdef const cnp.intp_t[::1] ioff = pk.ioff
    cdef const cnp.intp_t[::1] isize = pk.isize
    cdef const double[::1] fdata = pk.fdata
    cdef const cnp.intp_t[::1] idata = pk.idata
    cdef const cnp.intp_t[::1] moff = pk.moff
    cdef const cnp.intp_t[::1] zslot = pk.zslot
    cdef const cnp.intp_t[::1] hslot = pk.hslot
    cdef const unsigned char[:, :, ::1] mk = masks
    cdef double[:, ::1] gr
    cdef double* grp = NULL
    cdef Py_ssize_t b, maxm = 1, jj
    for jj in range(kinds.shape[0]):
        if kinds[jj] == AFFINE and isize[jj] > maxm:
            maxm = isize[jj]
    grhs = None
    if need_rhs:
        grhs = np.zeros((B, max(mr, 1)), dtype=np.float64)
        gr = grhs
    cdef double* gz = <double*>malloc((nz * d + 1) * sizeof(double))
    cdef double* gc = <double*>malloc((nh + 1) * sizeof(double))
    cdef double* r = <double*>malloc((maxm + 1) * sizeof(double))
    if gz == NULL or gc == NULL or r == NULL:
        free(gz); free(gc); free(r)
        raise MemoryError()
    try:
        with nogil:
            for b in range(B):
                grp = &gr[b, 0] if need_rhs else NULL
                _bwd_one(kinds, foff, ioff, isize, fdata, idata, moff, zslot, hslot,
                         d, nz, nh, R, &gx[b, 0], grp, rhs_set, k,
                         &mk[b, 0, 0] if (k > 0 and R > 0) else NULL, gz, gc, r)
    finally:
        free(gz); free(gc); free(r)
    if need_rhs:
        grhs = grhs[:, :mr]
    return np.asarray(gx), grhs
