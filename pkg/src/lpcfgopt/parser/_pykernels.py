"""Pure-Python chart kernels (reference and fallback for ``_ckernels``).

Chart layout shared by both backends, for a sentence of length ``n``:

* ``ins[i, j, off[a]:off[a]+m[a]]`` holds the inside vector of item
  ``(a, i, j)`` divided by its largest entry, and ``ins_sc[i, j, a]`` the log
  of that factor (``-inf`` marks an absent item).  ``out``/``out_sc`` hold
  outside values the same way.
* Binary rules are sorted by ``(a, b, c)``; rules of parent ``a`` are
  ``a_start[a]:a_start[a+1]`` and their ``m_a x m_b x m_c`` parameter blocks
  start at ``params[r_off[r]]`` (row-major).

Loop order (span length, start, parent, split point, rule) is part of the
contract: the max-rule decoder breaks ties on it.
"""
from __future__ import annotations

import math

import numpy as np

NEG_INF = -math.inf


def _block(params, r_off, r, ma, mb, mc):
    p = r_off[r]
    return params[p:p + ma * mb * mc].reshape(ma, mb, mc)


def _merge(acc, U, tmp, s):
    """acc * e^U += tmp * e^s; returns the new U."""
    if s > U:
        if U != NEG_INF:
            acc *= math.exp(U - s)
        else:
            acc[:] = 0.0
        acc += tmp
        return s
    acc += tmp * math.exp(s - U)
    return U


def inside(n, m, off, a_start, r_b, r_c, r_off, params, ins, ins_sc, mask):
    N = len(m)
    for length in range(2, n + 1):
        for i in range(n - length + 1):
            j = i + length
            for a in range(N):
                if not mask[i, j, a] or a_start[a] == a_start[a + 1]:
                    continue
                ma = m[a]
                acc = np.zeros(ma)
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
                        mb, mc = m[b], m[c]
                        vb = ins[i, k, off[b]:off[b] + mb]
                        vc = ins[k, j, off[c]:off[c] + mc]
                        tmp = (_block(params, r_off, r, ma, mb, mc) @ vc) @ vb
                        tmax = tmp.max()
                        if tmax <= 0.0:
                            continue
                        U = _merge(acc, U, tmp / tmax, sb + sc + math.log(tmax))
                mx = acc.max() if U != NEG_INF else 0.0
                if mx > 0.0:
                    ins[i, j, off[a]:off[a] + ma] = acc / mx
                    ins_sc[i, j, a] = U + math.log(mx)


def outside(n, m, off, a_start, r_b, r_c, r_off, params, ins, ins_sc, out, out_sc):
    N = len(m)
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
                va = out[i, j, off[a]:off[a] + ma]
                mx = va.max()
                if mx <= 0.0:
                    out_sc[i, j, a] = NEG_INF
                    continue
                va /= mx
                sa += math.log(mx)
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
                        mb, mc = m[b], m[c]
                        P = _block(params, r_off, r, ma, mb, mc)
                        vb = ins[i, k, off[b]:off[b] + mb]
                        vc = ins[k, j, off[c]:off[c] + mc]
                        tb = (va @ P.reshape(ma, mb * mc)).reshape(mb, mc) @ vc
                        tc = vb @ (va @ P.reshape(ma, mb * mc)).reshape(mb, mc)
                        for tgt, t, s, lo, hi, mt in ((b, tb, sa + sc, i, k, mb), (c, tc, sa + sb, k, j, mc)):
                            tmax = t.max()
                            if tmax <= 0.0:
                                continue
                            seg = out[lo, hi, off[tgt]:off[tgt] + mt]
                            out_sc[lo, hi, tgt] = _merge(seg, out_sc[lo, hi, tgt], t / tmax, s + math.log(tmax))


def decode(n, m, off, a_start, r_b, r_c, r_off, params, ins, ins_sc, out, out_sc, logZ, best, bp_k, bp_r):
    N = len(m)
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
                va = out[i, j, off[a]:off[a] + ma]
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
                        bl, bc = best[i, k, b], best[k, j, c]
                        if bl == NEG_INF or bc == NEG_INF:
                            continue
                        mb, mc = m[b], m[c]
                        vb = ins[i, k, off[b]:off[b] + mb]
                        vc = ins[k, j, off[c]:off[c] + mc]
                        q = float(va @ ((_block(params, r_off, r, ma, mb, mc) @ vc) @ vb))
                        if q <= 0.0:
                            continue
                        cand = math.log(q) + sa + sb + sc - logZ + bl + bc
                        if cand > cur:
                            cur = cand
                            bp_k[i, j, a] = k
                            bp_r[i, j, a] = r
                best[i, j, a] = cur
