"""Compiled exact-event simulator of the two-level Moran system.

Event classes and rates, with ``x = n / N1`` the deme frequencies, ``P`` the
pooled type counts and ``Ntot = N1 * N2``:

* within-deme resampling/selection, type ``i`` replaced by a copy of ``j``:
  ``clock * eta * ((N1-1)*gamma1/2 + s1*V1[j]) * x_i * x_j`` per deme;
* mutation ``i -> j``: ``clock * eta * m[i, j] * x_i`` per deme;
* migration: each individual at rate ``c`` is replaced by a copy of a
  uniformly drawn individual of the pooled population;
* deme replacement: for every ordered pair ``src != tgt``, deme ``tgt`` is
  overwritten by a copy of ``src`` at rate
  ``(s2 * V2(x_src) + gamma2/2 * (N2-1)) / N2``.

``clock`` is ``N1`` when time is measured on the diffusion scale and ``1``
for raw Moran time. Within-deme events are drawn through a Fenwick tree over
demes; deme replacement is drawn by thinning against the bound
``s2 * sum_j s2j``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _fen_build(w, tree):
    n = w.size
    tree[:] = 0.0
    for i in range(n):
        j = i + 1
        while j <= n:
            tree[j] += w[i]
            j += j & (-j)


@njit(cache=True)
def _fen_add(tree, i, delta):
    j = i + 1
    n = tree.size - 1
    while j <= n:
        tree[j] += delta
        j += j & (-j)


@njit(cache=True)
def _fen_total(tree):
    n = tree.size - 1
    s = 0.0
    j = n
    while j > 0:
        s += tree[j]
        j -= j & (-j)
    return s


@njit(cache=True)
def _fen_find(tree, u):
    """Index ``i`` with ``prefix(i) <= u < prefix(i+1)`` and the residual ``u - prefix(i)``."""
    n = tree.size - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= u:
            pos = nxt
            u -= tree[nxt]
        step //= 2
    return min(pos, n - 1), u


@njit(cache=True)
def v2_value(n, d, N1, coef, off, masks):
    K = n.shape[1]
    out = 0.0
    for j in range(coef.size):
        prod = coef[j]
        for f in range(off[j], off[j + 1]):
            s = 0
            for i in range(K):
                if (masks[f] >> np.uint64(i)) & np.uint64(1):
                    s += n[d, i]
            prod *= s / N1
        out += prod
    return out


@njit(cache=True)
def _deme_w1(n, d, N1, A, sv1, scale):
    tot = 0.0
    for j in range(n.shape[1]):
        tot += n[d, j] * (N1 - n[d, j]) * (A + sv1[j])
    return tot * scale


@njit(nogil=True, cache=True)
def run_moran(init, seeds, N1, times, m, sv1, A, scale1, mscale, c, s2, g2h,
              coef, off, masks, snaps, absorbed, events):
    """Simulate one population per seed, storing counts at each checkpoint.

    Parameters
    ----------
    init : int64 array (R, N2, K)
        Initial counts per replicate.
    sv1 : s1 * V1
    A : (N1 - 1) * gamma1 / 2
    scale1 : clock * eta / N1**2
    mscale : clock * eta / N1
    g2h : gamma2 / 2
    snaps : int64 array (R, T, N2, K), output
    """
    R, N2, K = init.shape
    T = times.size
    Ntot = N1 * N2
    mrow = np.zeros(K)
    for i in range(K):
        for j in range(K):
            if i != j:
                mrow[i] += m[i, j]
    v2max = coef.sum()
    bsrc = s2 * v2max + g2h * (N2 - 1)
    w_rep = (N2 - 1) * bsrc
    w = np.zeros(N2)
    tree = np.zeros(N2 + 1)
    P = np.zeros(K, np.int64)
    cw = np.zeros(K)
    for rep in range(R):
        np.random.seed(seeds[rep])
        n = init[rep].copy()
        P[:] = 0
        for d in range(N2):
            w[d] = _deme_w1(n, d, N1, A, sv1, scale1)
            for i in range(K):
                P[i] += n[d, i]
        _fen_build(w, tree)
        t = 0.0
        ti = 0
        nev = 0
        absorbed[rep] = False
        since = 0
        while True:
            w1 = _fen_total(tree)
            if w1 < 0.0:
                w1 = 0.0
            wm = 0.0
            for i in range(K):
                wm += P[i] * mrow[i]
            wm *= mscale
            sq = 0.0
            for i in range(K):
                sq += P[i] * P[i]
            wg = c * (Ntot * Ntot - sq) / Ntot
            W = w1 + wm + wg + w_rep
            if W <= 1e-300:
                for q in range(ti, T):
                    snaps[rep, q] = n
                absorbed[rep] = True
                break
            t += np.random.exponential(1.0 / W)
            while ti < T and t > times[ti]:
                snaps[rep, ti] = n
                ti += 1
            if ti >= T:
                break
            u = np.random.random() * W
            nev += 1
            if u < w1:
                # one uniform drives the deme, donor and victim choices
                d, v = _fen_find(tree, u)
                if w[d] <= 0.0:
                    _fen_build(w, tree)
                    continue
                v = min(v / w[d], 1.0 - 1e-12)
                tot = 0.0
                for j in range(K):
                    cw[j] = n[d, j] * (N1 - n[d, j]) * (A + sv1[j])
                    tot += cw[j]
                v *= tot
                jj = -1
                for j in range(K):
                    if cw[j] > 0.0:
                        jj = j
                        if v < cw[j]:
                            break
                        v -= cw[j]
                v = min(v / cw[jj], 1.0 - 1e-12) * (N1 - n[d, jj])
                ii = -1
                for i in range(K):
                    if i == jj or n[d, i] == 0:
                        continue
                    ii = i
                    if v < n[d, i]:
                        break
                    v -= n[d, i]
                n[d, ii] -= 1
                n[d, jj] += 1
                P[ii] -= 1
                P[jj] += 1
            elif u < w1 + wm:
                tot = 0.0
                for i in range(K):
                    cw[i] = P[i] * mrow[i]
                    tot += cw[i]
                v = np.random.random() * tot
                ii = K - 1
                for i in range(K):
                    if v < cw[i]:
                        ii = i
                        break
                    v -= cw[i]
                v = np.random.random() * mrow[ii]
                jj = K - 1
                for j in range(K):
                    if j == ii:
                        continue
                    if v < m[ii, j]:
                        jj = j
                        break
                    v -= m[ii, j]
                v = np.random.random() * P[ii]
                d = N2 - 1
                for dd in range(N2):
                    if v < n[dd, ii]:
                        d = dd
                        break
                    v -= n[dd, ii]
                n[d, ii] -= 1
                n[d, jj] += 1
                P[ii] -= 1
                P[jj] += 1
            elif u < w1 + wm + wg:
                tot = 0.0
                for i in range(K):
                    cw[i] = P[i] * (Ntot - P[i])
                    tot += cw[i]
                v = np.random.random() * tot
                ii = K - 1
                for i in range(K):
                    if v < cw[i]:
                        ii = i
                        break
                    v -= cw[i]
                v = np.random.random() * (Ntot - P[ii])
                jj = K - 1
                for j in range(K):
                    if j == ii:
                        continue
                    if v < P[j]:
                        jj = j
                        break
                    v -= P[j]
                v = np.random.random() * P[ii]
                d = N2 - 1
                for dd in range(N2):
                    if v < n[dd, ii]:
                        d = dd
                        break
                    v -= n[dd, ii]
                n[d, ii] -= 1
                n[d, jj] += 1
                P[ii] -= 1
                P[jj] += 1
            else:
                src = np.random.randint(0, N2)
                acc = s2 * v2_value(n, src, N1, coef, off, masks) + g2h * (N2 - 1)
                if np.random.random() * bsrc >= acc:
                    continue
                d = np.random.randint(0, N2 - 1)
                if d >= src:
                    d += 1
                for i in range(K):
                    P[i] += n[src, i] - n[d, i]
                    n[d, i] = n[src, i]
            wd = _deme_w1(n, d, N1, A, sv1, scale1)
            _fen_add(tree, d, wd - w[d])
            w[d] = wd
            since += 1
            if since >= 65536:
                _fen_build(w, tree)
                since = 0
        events[rep] = nev
