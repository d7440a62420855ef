# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled chart kernels; same layout and loop order as ``_pykernels``."""

from libc.math cimport exp, log, INFINITY
from libc.stdlib cimport malloc, free

ctypedef long long i64
ctypedef unsigned char u8

cdef double NEG_INF = -INFINITY


cdef inline double _merge(double* acc, double U, const double* tmp, double scale, double s, Py_ssize_t n) noexcept nogil:
    # acc * e^U += (tmp / scale) * e^s; returns the new U
    cdef Py_ssize_t h
    cdef double f
    if s > U:
        if U == NEG_INF:
            for h in range(n):
                acc[h] = tmp[h] / scale
        else:
            f = exp(U - s)
            for h in range(n):
                acc[h] = acc[h] * f + tmp[h] / scale
        return s
    f = exp(s - U) / scale
    for h in range(n):
        acc[h] += tmp[h] * f
    return U


def inside(int n, const i64[::1] m, const i64[::1] off, const i64[::1] a_start,
           const i64[::1] r_b, const i64[::1] r_c, const i64[::1] r_off, const double[::1] params,
           double[:, :, ::1] ins, double[:, :, ::1] ins_sc, const u8[:, :, ::1] mask):
    cdef Py_ssize_t N = m.shape[0]
    cdef Py_ssize_t mmax = 1, a, length, i, j, k, r, b, c, h1, h2, h3, ma, mb, mc, ob, oc, base
    cdef double U, sb, sc, t, inner, vb, tmax, mx
    for a in range(N):
        if m[a] > mmax:
            mmax = m[a]
    cdef double* acc = <double*> malloc(mmax * sizeof(double))
    cdef double* tmp = <double*> malloc(mmax * sizeof(double))
    try:
        with nogil:
            for length in range(2, n + 1):
                for i in range(n - length + 1):
                    j = i + length
                    for a in range(N):
                        if not mask[i, j, a] or a_start[a] == a_start[a + 1]:
                            continue
                        ma = m[a]
                        U = NEG_INF
                        for k in range(i + 1, j):
                            for r in range(a_start[a], a_start[a + 1]):
                                b = r_b[r]
                                sb = ins_sc[i, k, b]
                                if sb == NEG_INF:
                                    continue
                                c = r_c[r]
                                sc = ins_sc[k, j, c]
                                if sc == NEG_INF:
                                    continue
                                mb = m[b]
                                mc = m[c]
                                ob = off[b]
                                oc = off[c]
                                tmax = 0.0
                                for h1 in range(ma):
                                    t = 0.0
                                    for h2 in range(mb):
                                        vb = ins[i, k, ob + h2]
                                        if vb == 0.0:
                                            continue
                                        base = r_off[r] + (h1 * mb + h2) * mc
                                        inner = 0.0
                                        for h3 in range(mc):
                                            inner = inner + params[base + h3] * ins[k, j, oc + h3]
                                        t = t + inner * vb
                                    tmp[h1] = t
                                    if t > tmax:
                                        tmax = t
                                if tmax <= 0.0:
                                    continue
                                U = _merge(acc, U, tmp, tmax, sb + sc + log(tmax), ma)
                        if U == NEG_INF:
                            continue
                        mx = 0.0
                        for h1 in range(ma):
                            if acc[h1] > mx:
                                mx = acc[h1]
                        if mx > 0.0:
                            for h1 in range(ma):
                                ins[i, j, off[a] + h1] = acc[h1] / mx
                            ins_sc[i, j, a] = U + log(mx)
    finally:
        free(acc)
        free(tmp)


def outside(int n, const i64[::1] m, const i64[::1] off, const i64[::1] a_start,
            const i64[::1] r_b, const i64[::1] r_c, const i64[::1] r_off, const double[::1] params,
            const double[:, :, ::1] ins, const double[:, :, ::1] ins_sc,
            double[:, :, ::1] out, double[:, :, ::1] out_sc):
    cdef Py_ssize_t N = m.shape[0]
    cdef Py_ssize_t mmax = 1, a, length, i, j, k, r, b, c, h1, h2, h3, ma, mb, mc, oa, ob, oc, base
    cdef double sa, sb, sc, mx, w, pv, tbmax, tcmax
    for a in range(N):
        if m[a] > mmax:
            mmax = m[a]
    cdef double* tb = <double*> malloc(mmax * sizeof(double))
    cdef double* tc = <double*> malloc(mmax * sizeof(double))
    try:
        with nogil:
            for length in range(n, 1, -1):
                for i in range(n - length + 1):
                    j = i + length
                    for a in range(N):
                        if a_start[a] == a_start[a + 1]:
                            continue
                        sa = out_sc[i, j, a]
                        if sa == NEG_INF or ins_sc[i, j, a] == NEG_INF:
                            continue
                        ma = m[a]
                        oa = off[a]
                        mx = 0.0
                        for h1 in range(ma):
                            if out[i, j, oa + h1] > mx:
                                mx = out[i, j, oa + h1]
                        if mx <= 0.0:
                            out_sc[i, j, a] = NEG_INF
                            continue
                        for h1 in range(ma):
                            out[i, j, oa + h1] = out[i, j, oa + h1] / mx
                        sa = sa + log(mx)
                        out_sc[i, j, a] = sa
                        for k in range(i + 1, j):
                            for r in range(a_start[a], a_start[a + 1]):
                                b = r_b[r]
                                sb = ins_sc[i, k, b]
                                if sb == NEG_INF:
                                    continue
                                c = r_c[r]
                                sc = ins_sc[k, j, c]
                                if sc == NEG_INF:
                                    continue
                                mb = m[b]
                                mc = m[c]
                                ob = off[b]
                                oc = off[c]
                                for h2 in range(mb):
                                    tb[h2] = 0.0
                                for h3 in range(mc):
                                    tc[h3] = 0.0
                                for h1 in range(ma):
                                    w = out[i, j, oa + h1]
                                    if w == 0.0:
                                        continue
                                    for h2 in range(mb):
                                        base = r_off[r] + (h1 * mb + h2) * mc
                                        for h3 in range(mc):
                                            pv = params[base + h3] * w
                                            tb[h2] = tb[h2] + pv * ins[k, j, oc + h3]
                                            tc[h3] = tc[h3] + pv * ins[i, k, ob + h2]
                                tbmax = 0.0
                                for h2 in range(mb):
                                    if tb[h2] > tbmax:
                                        tbmax = tb[h2]
                                if tbmax > 0.0:
                                    out_sc[i, k, b] = _merge(&out[i, k, ob], out_sc[i, k, b], tb, tbmax,
                                                             sa + sc + log(tbmax), mb)
                                tcmax = 0.0
                                for h3 in range(mc):
                                    if tc[h3] > tcmax:
                                        tcmax = tc[h3]
                                if tcmax > 0.0:
                                    out_sc[k, j, c] = _merge(&out[k, j, oc], out_sc[k, j, c], tc, tcmax,
                                                             sa + sb + log(tcmax), mc)
    finally:
        free(tb)
        free(tc)


def decode(int n, const i64[::1] m, const i64[::1] off, const i64[::1] a_start,
           const i64[::1] r_b, const i64[::1] r_c, const i64[::1] r_off, const double[::1] params,
           const double[:, :, ::1] ins, const double[:, :, ::1] ins_sc,
           const double[:, :, ::1] out, const double[:, :, ::1] out_sc, double logZ,
           double[:, :, ::1] best, i64[:, :, ::1] bp_k, i64[:, :, ::1] bp_r):
    cdef Py_ssize_t N = m.shape[0]
    cdef Py_ssize_t a, length, i, j, k, r, b, c, h1, h2, h3, ma, mb, mc, oa, ob, oc, base
    cdef double sa, sb, sc, bl, bc, q, t, inner, vb, cur, cand, w
    with nogil:
        for length in range(2, n + 1):
            for i in range(n - length + 1):
                j = i + length
                for a in range(N):
                    if a_start[a] == a_start[a + 1]:
                        continue
                    sa = out_sc[i, j, a]
                    if sa == NEG_INF or ins_sc[i, j, a] == NEG_INF:
                        continue
                    ma = m[a]
                    oa = off[a]
                    cur = NEG_INF
                    for k in range(i + 1, j):
                        for r in range(a_start[a], a_start[a + 1]):
                            b = r_b[r]
                            sb = ins_sc[i, k, b]
                            if sb == NEG_INF:
                                continue
                            c = r_c[r]
                            sc = ins_sc[k, j, c]
                            if sc == NEG_INF:
                                continue
                            bl = best[i, k, b]
                            bc = best[k, j, c]
                            if bl == NEG_INF or bc == NEG_INF:
                                continue
                            mb = m[b]
                            mc = m[c]
                            ob = off[b]
                            oc = off[c]
                            q = 0.0
                            for h1 in range(ma):
                                w = out[i, j, oa + h1]
                                if w == 0.0:
                                    continue
                                t = 0.0
                                for h2 in range(mb):
                                    vb = ins[i, k, ob + h2]
                                    if vb == 0.0:
                                        continue
                                    base = r_off[r] + (h1 * mb + h2) * mc
                                    inner = 0.0
                                    for h3 in range(mc):
                                        inner = inner + params[base + h3] * ins[k, j, oc + h3]
                                    t = t + inner * vb
                                q = q + t * w
                            if q <= 0.0:
                                continue
                            cand = log(q) + sa + sb + sc - logZ + bl + bc
                            if cand > cur:
                                cur = cand
                                bp_k[i, j, a] = k
                                bp_r[i, j, a] = r
                    best[i, j, a] = cur
