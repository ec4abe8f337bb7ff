"""Compiled core of the set-valued dual.

State layout
------------
``cells[r, j]`` is the type subset (bit mask) held by summand ``r`` at frame
column ``j``; ``deme[j]`` is the deme label of column ``j``. Columns of the
same label are the ranks of that deme. Every event acts on all rows at once
(the coupling rule), so a state is a single 2-D array.

Event codes (``ev[0]``) and payloads:

====  ==========  ===========================================
code  family      ev[1], ev[2], ev[3]
====  ==========  ===========================================
0     select1     column, V1 component, -
1     mutate      column, mutation pair, -
2     coalesce1   kept column, removed column, -
3     migrate     column, destination label, -
4     select2     target label, V2 term, source label
5     coalesce2   kept label, merged label, -
====  ==========  ===========================================

Parameter tuple ``prm`` (see :func:`dualpop.dual.pack_params`)::

    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2)

Measure tuple ``meas`` (see :func:`dualpop.dual.pack_measure`)::

    (kind, mix_w, mix_pts, mix_tab, gq_x, gq_w, atom0, atom1, itab, gcdf, gM)
"""
import numpy as np
from numba import njit

U1 = np.uint64(1)
U0 = np.uint64(0)

SEL1, MUT, COAL1, MIG, SEL2, COAL2 = 0, 1, 2, 3, 4, 5

ST_DONE, ST_ABSORBED, ST_OVERFLOW = 0, 1, 2
# storage guard: summands times columns, in 64-bit words (128 MB)
MAX_CELLS = 1 << 24


# ---------------------------------------------------------------------------
# set operations
# ---------------------------------------------------------------------------


@njit(cache=True)
def trim(cells, deme, full):
    """Drop summands holding an empty cell and columns full in every summand."""
    S, C = cells.shape
    keep_r = np.ones(S, np.bool_)
    ns = 0
    for r in range(S):
        for j in range(C):
            if cells[r, j] == U0:
                keep_r[r] = False
                break
        if keep_r[r]:
            ns += 1
    keep_c = np.zeros(C, np.bool_)
    nc = 0
    for j in range(C):
        for r in range(S):
            if keep_r[r] and cells[r, j] != full:
                keep_c[j] = True
                nc += 1
                break
    out = np.empty((ns, nc), np.uint64)
    d2 = np.empty(nc, np.int64)
    jj = 0
    for j in range(C):
        if keep_c[j]:
            d2[jj] = deme[j]
            jj += 1
    rr = 0
    for r in range(S):
        if keep_r[r]:
            jj = 0
            for j in range(C):
                if keep_c[j]:
                    out[rr, jj] = cells[r, j]
                    jj += 1
            rr += 1
    return out, d2


@njit(cache=True)
def apply_sel1(cells, deme, j, B, full):
    """Level-I selection with fitness ``1_B`` at column ``j``.

    Each summand with cell ``A`` at ``j`` splits into ``A∩B`` (new column
    full) and ``B^c`` (new column ``A``). Summands with ``A`` full are left
    unchanged, which represents the same set.
    """
    S, C = cells.shape
    Bc = full ^ B
    n = 0
    for r in range(S):
        a = cells[r, j]
        if a == full:
            n += 1
        else:
            if a & B != U0:
                n += 1
            if Bc != U0:
                n += 1
    out = np.empty((n, C + 1), np.uint64)
    row = 0
    for r in range(S):
        a = cells[r, j]
        if a == full or a & B != U0:
            for k in range(C):
                out[row, k] = cells[r, k]
            if a != full:
                out[row, j] = a & B
            out[row, C] = full
            row += 1
    if Bc != U0:
        for r in range(S):
            a = cells[r, j]
            if a != full:
                for k in range(C):
                    out[row, k] = cells[r, k]
                out[row, j] = Bc
                out[row, C] = a
                row += 1
    d2 = np.empty(C + 1, np.int64)
    d2[:C] = deme
    d2[C] = deme[j]
    return trim(out, d2, full)


@njit(cache=True)
def apply_mut(cells, deme, j, l, k, full):
    """Preimage of the type map ``l -> k`` at column ``j``."""
    bl = U1 << np.uint64(l)
    bk = U1 << np.uint64(k)
    out = cells.copy()
    nbl = full ^ bl
    for r in range(out.shape[0]):
        a = out[r, j]
        na = a & nbl
        if a & bk != U0:
            na |= bl
        out[r, j] = na
    return trim(out, deme, full)


@njit(cache=True)
def apply_coal1(cells, deme, j1, j2, full):
    """Intersect column ``j2`` into ``j1`` and remove ``j2``."""
    S, C = cells.shape
    out = np.empty((S, C - 1), np.uint64)
    d2 = np.empty(C - 1, np.int64)
    kk = 0
    for k in range(C):
        if k == j2:
            continue
        d2[kk] = deme[k]
        for r in range(S):
            out[r, kk] = cells[r, k] & cells[r, j2] if k == j1 else cells[r, k]
        kk += 1
    return trim(out, d2, full)


@njit(cache=True)
def relabel(deme, old, new):
    out = deme.copy()
    for j in range(out.size):
        if out[j] == old:
            out[j] = new
    return out


@njit(cache=True)
def apply_sel2(cells, deme, tgt, sel_deme, copy_deme, moves, facs, full):
    """Level-II selection on the ranks of deme ``tgt``.

    New columns: ``nB`` selector columns at ``sel_deme`` (one per factor of
    the V2 term) and one copy column at ``copy_deme`` per rank of ``tgt``.
    With ``B = B_1 x ... x B_n`` and the disjoint split of its complement
    into pieces ``B_1 x .. x B_{i-1} x B_i^c x I x .. x I``:

    * ``moves`` false (infinite demes): the ``B`` piece keeps the target
      ranks in place; each complement piece moves them to the copy columns.
    * ``moves`` true (finite demes): the ``B`` piece moves the target ranks
      to the copy columns; complement pieces keep them in place.

    Summands whose target ranks are all full are left unchanged.
    """
    S, C = cells.shape
    nB = facs.size
    no = 0
    for k in range(C):
        if deme[k] == tgt:
            no += 1
    orig = np.empty(no, np.int64)
    q = 0
    for k in range(C):
        if deme[k] == tgt:
            orig[q] = k
            q += 1
    npieces = 0
    for i in range(nB):
        if facs[i] != full:
            npieces += 1
    inert = np.zeros(S, np.bool_)
    n = 0
    for r in range(S):
        allfull = True
        for q in range(no):
            if cells[r, orig[q]] != full:
                allfull = False
                break
        inert[r] = allfull
        n += 1 if allfull else 1 + npieces
    C2 = C + nB + no
    out = np.empty((n, C2), np.uint64)
    row = 0
    # unchanged rows and the B piece
    for r in range(S):
        for k in range(C):
            out[row, k] = cells[r, k]
        if inert[r]:
            for k in range(C, C2):
                out[row, k] = full
        else:
            for i in range(nB):
                out[row, C + i] = facs[i]
            for q in range(no):
                if moves:
                    out[row, C + nB + q] = cells[r, orig[q]]
                    out[row, orig[q]] = full
                else:
                    out[row, C + nB + q] = full
        row += 1
    # complement pieces
    for i in range(nB):
        if facs[i] == full:
            continue
        for r in range(S):
            if inert[r]:
                continue
            for k in range(C):
                out[row, k] = cells[r, k]
            for i2 in range(nB):
                if i2 < i:
                    out[row, C + i2] = facs[i2]
                elif i2 == i:
                    out[row, C + i2] = full ^ facs[i2]
                else:
                    out[row, C + i2] = full
            for q in range(no):
                if moves:
                    out[row, C + nB + q] = full
                else:
                    out[row, C + nB + q] = cells[r, orig[q]]
                    out[row, orig[q]] = full
            row += 1
    d2 = np.empty(C2, np.int64)
    d2[:C] = deme
    for i in range(nB):
        d2[C + i] = sel_deme
    for q in range(no):
        d2[C + nB + q] = copy_deme
    return trim(out, d2, full)


# ---------------------------------------------------------------------------
# rates and event sampling
# ---------------------------------------------------------------------------


@njit(cache=True)
def occupied(deme):
    """Sorted distinct labels and the number of columns carrying each."""
    srt = np.sort(deme)
    k = 0
    for j in range(srt.size):
        if j == 0 or srt[j] != srt[j - 1]:
            k += 1
    labels = np.empty(k, np.int64)
    counts = np.zeros(k, np.int64)
    i = -1
    for j in range(srt.size):
        if j == 0 or srt[j] != srt[j - 1]:
            i += 1
            labels[i] = srt[j]
        counts[i] += 1
    return labels, counts


@njit(cache=True)
def family_rates(deme, prm, out):
    """Total rate of each event family; returns occupied labels and rank counts."""
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    C = deme.size
    labels, counts = occupied(deme)
    k = labels.size
    f = (N2 - 1.0) / N2 if finite else 1.0
    pairs = 0.0
    for n in counts:
        pairs += n * (n - 1) / 2.0
    out[0] = C * sel1_rates.sum()
    out[1] = C * mut_rates.sum()
    out[2] = g1 * pairs
    out[3] = c * C * f
    out[4] = sel2_rates.sum() * k * f
    out[5] = g2 * k * (k - 1) / 2.0 * f
    return labels, counts


@njit(cache=True)
def choose(weights, total):
    u = np.random.random() * total
    acc = 0.0
    last = 0
    for i in range(weights.size):
        if weights[i] > 0:
            last = i
            acc += weights[i]
            if u < acc:
                return i
    return last


@njit(cache=True)
def sample_event(deme, labels, counts, rates6, total, prm, next_label, ev):
    """Draw one event; writes ``ev`` and returns the updated fresh-label counter."""
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    C = deme.size
    k = labels.size
    fam = choose(rates6, total)
    ev[0] = fam
    ev[3] = -1
    if fam == SEL1:
        ev[1] = np.random.randint(0, C)
        ev[2] = choose(sel1_rates, sel1_rates.sum())
    elif fam == MUT:
        ev[1] = np.random.randint(0, C)
        ev[2] = choose(mut_rates, mut_rates.sum())
    elif fam == COAL1:
        w = np.empty(k)
        for i in range(k):
            w[i] = counts[i] * (counts[i] - 1) / 2.0
        d = choose(w, w.sum())
        n = counts[d]
        i1 = np.random.randint(0, n)
        i2 = np.random.randint(0, n - 1)
        if i2 >= i1:
            i2 += 1
        a = -1
        b = -1
        seen = 0
        for j in range(C):
            if deme[j] == labels[d]:
                if seen == i1:
                    a = j
                if seen == i2:
                    b = j
                seen += 1
        ev[1] = min(a, b)
        ev[2] = max(a, b)
    elif fam == MIG:
        j = np.random.randint(0, C)
        ev[1] = j
        if finite:
            dest = np.random.randint(0, N2 - 1)
            if dest >= deme[j]:
                dest += 1
            ev[2] = dest
        else:
            ev[2] = next_label
            next_label += 1
    elif fam == SEL2:
        tgt = labels[np.random.randint(0, k)]
        ev[1] = tgt
        ev[2] = choose(sel2_rates, sel2_rates.sum())
        if finite:
            src = np.random.randint(0, N2 - 1)
            if src >= tgt:
                src += 1
            ev[3] = src
        else:
            ev[3] = next_label
            next_label += 1
    else:
        i1 = np.random.randint(0, k)
        i2 = np.random.randint(0, k - 1)
        if i2 >= i1:
            i2 += 1
        ev[1] = min(labels[i1], labels[i2])
        ev[2] = max(labels[i1], labels[i2])
    return next_label


@njit(cache=True)
def apply_set(cells, deme, ev, prm):
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    fam = ev[0]
    if fam == SEL1:
        return apply_sel1(cells, deme, ev[1], sel1_masks[ev[2]], full)
    if fam == MUT:
        return apply_mut(cells, deme, ev[1], mut_l[ev[2]], mut_k[ev[2]], full)
    if fam == COAL1:
        return apply_coal1(cells, deme, ev[1], ev[2], full)
    if fam == MIG:
        d2 = deme.copy()
        d2[ev[1]] = ev[2]
        return cells, d2
    if fam == SEL2:
        facs = sel2_masks[sel2_off[ev[2]]:sel2_off[ev[2] + 1]]
        if finite:
            return apply_sel2(cells, deme, ev[1], ev[3], ev[3], True, facs, full)
        return apply_sel2(cells, deme, ev[1], ev[1], ev[3], False, facs, full)
    return cells, relabel(deme, ev[2], ev[1])


# ---------------------------------------------------------------------------
# evaluation against the initial law
# ---------------------------------------------------------------------------


@njit(cache=True)
def _mu(mix_pts, mix_tab, m, mask):
    if mix_tab.shape[1] > 0:
        return mix_tab[m, mask]
    s = 0.0
    for i in range(mix_pts.shape[1]):
        if (mask >> np.uint64(i)) & U1:
            s += mix_pts[m, i]
    return s


@njit(cache=True)
def grid_moment(a, b, gq_x, gq_w, atom0, atom1, itab):
    """``int x^a (1-x)^b nu(dx)`` for the grid initial law."""
    if a < itab.shape[0] and b < itab.shape[1]:
        return itab[a, b]
    s = 0.0
    for q in range(gq_x.size):
        s += gq_w[q] * gq_x[q] ** a * (1.0 - gq_x[q]) ** b
    if a == 0:
        s += atom0
    if b == 0:
        s += atom1
    return s


@njit(cache=True)
def eval_set(cells, deme, meas):
    """Exact value of the dual state: sum over summands of per-deme integrals."""
    kind, mix_w, mix_pts, mix_tab, gq_x, gq_w, atom0, atom1, itab, gcdf, gM = meas
    S, C = cells.shape
    if S == 0:
        return 0.0
    if C == 0:
        return float(S)
    order = np.argsort(deme, kind="mergesort")
    starts = np.empty(C + 1, np.int64)
    nl = 0
    for q in range(C):
        if q == 0 or deme[order[q]] != deme[order[q - 1]]:
            starts[nl] = q
            nl += 1
    starts[nl] = C
    total = 0.0
    for r in range(S):
        prod = 1.0
        for d in range(nl):
            if kind == 0:
                s = 0.0
                for m in range(mix_w.size):
                    v = mix_w[m]
                    for q in range(starts[d], starts[d + 1]):
                        v *= _mu(mix_pts, mix_tab, m, cells[r, order[q]])
                        if v == 0.0:
                            break
                    s += v
            else:
                a = 0
                b = 0
                for q in range(starts[d], starts[d + 1]):
                    mask = cells[r, order[q]]
                    if mask == U1:
                        a += 1
                    elif mask == np.uint64(2):
                        b += 1
                s = grid_moment(a, b, gq_x, gq_w, atom0, atom1, itab)
            prod *= s
            if prod == 0.0:
                break
        total += prod
    return total


# ---------------------------------------------------------------------------
# pathwise phase (after overflow)
# ---------------------------------------------------------------------------
#
# Once a replicate exceeds the summand cap its set ``G_tau`` is frozen and
# only the bare frame keeps evolving. Each event is logged as the map it
# induces on points, so ``1{X in G_t}`` for a point ``X`` drawn from the
# initial law is obtained by pulling ``X`` back through the log and testing
# membership in ``G_tau``.
#
# Frame layout: columns ``0..C-1`` in capacity arrays ``lab`` (label), ``cid``
# (stable column id), ``nxt``/``prv`` (doubly linked list per label, rooted
# at ``head[label]``); per label ``cnt``; occupied labels in ``occ[0..k)``
# with positions ``occpos``; scalars ``sc = [C, k, pairs, next_id, next_label]``.


@njit(cache=True)
def _pm_inc(L, cnt, occ, occpos, sc):
    if cnt[L] == 0:
        occpos[L] = sc[1]
        occ[sc[1]] = L
        sc[1] += 1
    sc[2] += cnt[L]
    cnt[L] += 1


@njit(cache=True)
def _pm_dec(L, cnt, occ, occpos, sc):
    cnt[L] -= 1
    sc[2] -= cnt[L]
    if cnt[L] == 0:
        p = occpos[L]
        last = occ[sc[1] - 1]
        occ[p] = last
        occpos[last] = p
        sc[1] -= 1


@njit(cache=True)
def _pm_link(j, L, lab, nxt, prv, head):
    lab[j] = L
    prv[j] = -1
    nxt[j] = head[L]
    if head[L] >= 0:
        prv[head[L]] = j
    head[L] = j


@njit(cache=True)
def _pm_unlink(j, lab, nxt, prv, head):
    L = lab[j]
    if prv[j] >= 0:
        nxt[prv[j]] = nxt[j]
    else:
        head[L] = nxt[j]
    if nxt[j] >= 0:
        prv[nxt[j]] = prv[j]


@njit(cache=True)
def _pm_add(fr, L, ident):
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    j = sc[0]
    sc[0] += 1
    cid[j] = ident
    _pm_link(j, L, lab, nxt, prv, head)
    _pm_inc(L, cnt, occ, occpos, sc)


@njit(cache=True)
def _pm_remove(fr, j):
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    _pm_unlink(j, lab, nxt, prv, head)
    _pm_dec(lab[j], cnt, occ, occpos, sc)
    last = sc[0] - 1
    if j != last:
        lab[j] = lab[last]
        cid[j] = cid[last]
        nxt[j] = nxt[last]
        prv[j] = prv[last]
        if prv[j] >= 0:
            nxt[prv[j]] = j
        else:
            head[lab[j]] = j
        if nxt[j] >= 0:
            prv[nxt[j]] = j
    sc[0] -= 1


@njit(cache=True)
def _pm_move(fr, j, L2):
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    _pm_unlink(j, lab, nxt, prv, head)
    _pm_dec(lab[j], cnt, occ, occpos, sc)
    _pm_link(j, L2, lab, nxt, prv, head)
    _pm_inc(L2, cnt, occ, occpos, sc)


@njit(cache=True)
def _grow1(a, n, fill):
    out = np.full(n, fill, a.dtype)
    out[:a.size] = a
    return out


@njit(cache=True)
def _pm_reserve(fr, ncols, nlabels):
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    if ncols > lab.size:
        n = max(ncols, 2 * lab.size)
        lab = _grow1(lab, n, -1)
        cid = _grow1(cid, n, -1)
        nxt = _grow1(nxt, n, -1)
        prv = _grow1(prv, n, -1)
    if nlabels > head.size:
        n = max(nlabels, 2 * head.size)
        head = _grow1(head, n, -1)
        cnt = _grow1(cnt, n, 0)
        occ = _grow1(occ, n, -1)
        occpos = _grow1(occpos, n, -1)
    return lab, cid, nxt, prv, head, cnt, occ, occpos, sc


@njit(cache=True)
def _pm_build(deme, next_label, finite, N2):
    C = deme.size
    nl = N2 if finite else max(next_label, 1)
    cap = max(16, 2 * C)
    fr = (np.full(cap, -1, np.int64), np.full(cap, -1, np.int64),
          np.full(cap, -1, np.int64), np.full(cap, -1, np.int64),
          np.full(nl, -1, np.int64), np.zeros(nl, np.int64),
          np.full(nl, -1, np.int64), np.full(nl, -1, np.int64),
          np.array([0, 0, 0, C, next_label], np.int64))
    for j in range(C):
        _pm_add(fr, deme[j], j)
    return fr


@njit(cache=True)
def _pm_rates(fr, prm, out):
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    sc = fr[8]
    C = sc[0]
    k = sc[1]
    f = (N2 - 1.0) / N2 if finite else 1.0
    out[0] = C * sel1_rates.sum()
    out[1] = C * mut_rates.sum()
    out[2] = g1 * sc[2]
    out[3] = c * C * f
    out[4] = sel2_rates.sum() * k * f
    out[5] = g2 * k * (k - 1) / 2.0 * f


@njit(cache=True)
def _log_push(log, loglen, starts, nent, n):
    log = _grow(log, loglen + n)
    starts = _grow(starts, nent + 1)
    starts[nent] = loglen
    return log, starts


@njit(cache=True)
def _pm_step(fr, rates6, total, prm, log, loglen, starts, nent):
    """Draw and apply one event on the bare frame, logging its point map."""
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    C = sc[0]
    k = sc[1]
    fam = choose(rates6, total)
    if fam == SEL1:
        j = np.random.randint(0, C)
        r = choose(sel1_rates, sel1_rates.sum())
        log, starts = _log_push(log, loglen, starts, nent, 4)
        log[loglen] = SEL1
        log[loglen + 1] = cid[j]
        log[loglen + 2] = sc[3]
        log[loglen + 3] = r
        loglen += 4
        nent += 1
        _pm_add(fr, lab[j], sc[3])
        sc[3] += 1
    elif fam == MUT:
        j = np.random.randint(0, C)
        pp = choose(mut_rates, mut_rates.sum())
        log, starts = _log_push(log, loglen, starts, nent, 3)
        log[loglen] = MUT
        log[loglen + 1] = cid[j]
        log[loglen + 2] = pp
        loglen += 3
        nent += 1
    elif fam == COAL1:
        u = np.random.random() * sc[2]
        L = occ[k - 1]
        for i in range(k):
            w = cnt[occ[i]] * (cnt[occ[i]] - 1) / 2.0
            if u < w:
                L = occ[i]
                break
            u -= w
        n = cnt[L]
        i1 = np.random.randint(0, n)
        i2 = np.random.randint(0, n - 1)
        if i2 >= i1:
            i2 += 1
        j = head[L]
        q = 0
        j1 = -1
        j2 = -1
        while j >= 0:
            if q == i1:
                j1 = j
            if q == i2:
                j2 = j
            q += 1
            j = nxt[j]
        log, starts = _log_push(log, loglen, starts, nent, 3)
        log[loglen] = COAL1
        log[loglen + 1] = cid[j1]
        log[loglen + 2] = cid[j2]
        loglen += 3
        nent += 1
        _pm_remove(fr, j2)
    elif fam == MIG:
        j = np.random.randint(0, C)
        if finite:
            dest = np.random.randint(0, N2 - 1)
            if dest >= lab[j]:
                dest += 1
        else:
            dest = sc[4]
            sc[4] += 1
        _pm_move(fr, j, dest)
    elif fam == SEL2:
        tgt = occ[np.random.randint(0, k)]
        term = choose(sel2_rates, sel2_rates.sum())
        if finite:
            src = np.random.randint(0, N2 - 1)
            if src >= tgt:
                src += 1
            sel_deme = src
            copy_deme = src
            moves = 1
        else:
            sel_deme = tgt
            copy_deme = sc[4]
            sc[4] += 1
            moves = 0
        nB = sel2_off[term + 1] - sel2_off[term]
        no = cnt[tgt]
        L = 5 + nB + 2 * no
        log, starts = _log_push(log, loglen, starts, nent, L)
        log[loglen] = SEL2
        log[loglen + 1] = moves
        log[loglen + 2] = term
        log[loglen + 3] = nB
        log[loglen + 4] = no
        base = loglen + 5
        j = head[tgt]
        q = 0
        while j >= 0:
            log[base + nB + q] = sc[3] + nB + q
            log[base + nB + no + q] = cid[j]
            q += 1
            j = nxt[j]
        for i in range(nB):
            log[base + i] = sc[3]
            _pm_add(fr, sel_deme, sc[3])
            sc[3] += 1
        for q in range(no):
            _pm_add(fr, copy_deme, sc[3])
            sc[3] += 1
        loglen += L
        nent += 1
    else:
        i1 = np.random.randint(0, k)
        i2 = np.random.randint(0, k - 1)
        if i2 >= i1:
            i2 += 1
        a = min(occ[i1], occ[i2])
        b = max(occ[i1], occ[i2])
        j = head[b]
        while j >= 0:
            nx = nxt[j]
            _pm_move(fr, j, a)
            j = nx
    return log, loglen, starts, nent


@njit(cache=True)
def _draw_deme_type(meas):
    """Draw a deme law; returns (mixture component, x) with one of them unused."""
    kind, mix_w, mix_pts, mix_tab, gq_x, gq_w, atom0, atom1, itab, gcdf, gM = meas
    if kind == 0:
        return choose(mix_w, 1.0), 0.0
    u = np.random.random() * gcdf[-1]
    idx = np.searchsorted(gcdf, u, side="right")
    if idx == 0:
        return 0, 0.0
    if idx == 1:
        return 0, 1.0
    return 0, (idx - 2 + np.random.random()) / gM


@njit(cache=True)
def _pm_eval(fr, log, starts, nent, g_tau, prm, meas):
    """One draw of ``1{X in G_t}`` for ``X`` from the initial law."""
    (full, sel1_masks, sel1_rates, mut_l, mut_k, mut_rates, g1, c,
     sel2_rates, sel2_off, sel2_masks, g2, finite, N2) = prm
    kind, mix_w, mix_pts, mix_tab, gq_x, gq_w, atom0, atom1, itab, gcdf, gM = meas
    lab, cid, nxt, prv, head, cnt, occ, occpos, sc = fr
    vals = np.full(sc[3], -1, np.int64)
    for i in range(sc[1]):
        m, x = _draw_deme_type(meas)
        j = head[occ[i]]
        while j >= 0:
            if kind == 0:
                pts = mix_pts[m]
                vals[cid[j]] = choose(pts, pts.sum())
            else:
                vals[cid[j]] = 0 if np.random.random() < x else 1
            j = nxt[j]
    for e in range(nent - 1, -1, -1):
        p = starts[e]
        kd = log[p]
        if kd == SEL1:
            j = log[p + 1]
            if (sel1_masks[log[p + 3]] >> np.uint64(vals[j])) & U1 == U0:
                vals[j] = vals[log[p + 2]]
        elif kd == MUT:
            j = log[p + 1]
            if vals[j] == mut_l[log[p + 2]]:
                vals[j] = mut_k[log[p + 2]]
        elif kd == COAL1:
            vals[log[p + 2]] = vals[log[p + 1]]
        elif kd == SEL2:
            moves = log[p + 1]
            term = log[p + 2]
            nB = log[p + 3]
            no = log[p + 4]
            base = p + 5
            inB = True
            for i in range(nB):
                if (sel2_masks[sel2_off[term] + i] >> np.uint64(vals[log[base + i]])) & U1 == U0:
                    inB = False
                    break
            if inB == (moves == 1):
                for q in range(no):
                    vals[log[base + nB + no + q]] = vals[log[base + nB + q]]
    S, Ct = g_tau.shape
    for r in range(S):
        ok = True
        for j in range(Ct):
            if (g_tau[r, j] >> np.uint64(vals[j])) & U1 == U0:
                ok = False
                break
        if ok:
            return 1.0
    return 0.0


@njit(cache=True)
def _grow(buf, need):
    if need <= buf.size:
        return buf
    n = max(need, 2 * buf.size)
    out = np.empty(n, buf.dtype)
    out[:buf.size] = buf
    return out


@njit(cache=True)
def _point_phase(g_tau, deme, next_label, t, ti, times, prm, meas, values, rep, max_frame):
    """Continue a replicate pathwise from its frozen set ``g_tau``.

    Returns ``(t, events, status)``; the status is ``ST_OVERFLOW`` when the
    frame outgrows ``max_frame`` columns.
    """
    finite = prm[12]
    N2 = prm[13]
    off = prm[9]
    nbmax = 0
    for i in range(off.size - 1):
        nbmax = max(nbmax, off[i + 1] - off[i])
    fr = _pm_build(deme, next_label, finite, N2)
    log = np.empty(256, np.int64)
    starts = np.empty(64, np.int64)
    loglen = 0
    nent = 0
    rates6 = np.zeros(6)
    T = times.size
    nev = 0
    while True:
        _pm_rates(fr, prm, rates6)
        R = rates6.sum()
        if R <= 0.0:
            for q in range(ti, T):
                values[rep, q] = _pm_eval(fr, log, starts, nent, g_tau, prm, meas)
            return t, nev, ST_ABSORBED
        dt = np.random.exponential(1.0 / R)
        while ti < T and t + dt > times[ti]:
            values[rep, ti] = _pm_eval(fr, log, starts, nent, g_tau, prm, meas)
            ti += 1
        if ti >= T:
            return times[T - 1], nev, ST_DONE
        t += dt
        sc = fr[8]
        if sc[0] > max_frame:
            for q in range(ti, T):
                values[rep, q] = np.nan
            return t, nev, ST_OVERFLOW
        nlab = N2 if finite else sc[4] + 2
        fr = _pm_reserve(fr, 2 * sc[0] + nbmax + 1, nlab)
        log, loglen, starts, nent = _pm_step(fr, rates6, R, prm, log, loglen, starts, nent)
        nev += 1


# ---------------------------------------------------------------------------
# replicate driver
# ---------------------------------------------------------------------------


@njit(nogil=True, cache=True)
def run_replicates(seeds, cells0, deme0, label0, times, prm, meas,
                   max_summands, sample_on_overflow, max_frame,
                   values, status, sampled, stop_time, events, peak):
    """Run one dual trajectory per seed and record its value at ``times``.

    ``status``: 0 reached the last time, 1 absorbed (empty, full, or no
    enabled event), 2 aborted on overflow of the summand cap (or of
    ``MAX_CELLS`` words of set storage), or of the frame cap while sampling
    (values NaN from then on).
    ``sampled`` marks replicates evaluated pathwise after overflow.
    """
    T = times.size
    rates6 = np.zeros(6)
    ev = np.zeros(4, np.int64)
    for rep in range(seeds.size):
        np.random.seed(seeds[rep])
        cells = cells0.copy()
        deme = deme0.copy()
        next_label = label0
        t = 0.0
        ti = 0
        nev = 0
        pk = cells.shape[0]
        status[rep] = ST_DONE
        sampled[rep] = False
        while True:
            if cells.shape[0] == 0 or cells.shape[1] == 0:
                v = eval_set(cells, deme, meas)
                for q in range(ti, T):
                    values[rep, q] = v
                status[rep] = ST_ABSORBED
                break
            labels, counts = family_rates(deme, prm, rates6)
            R = rates6.sum()
            if R <= 0.0:
                v = eval_set(cells, deme, meas)
                for q in range(ti, T):
                    values[rep, q] = v
                status[rep] = ST_ABSORBED
                break
            dt = np.random.exponential(1.0 / R)
            while ti < T and t + dt > times[ti]:
                values[rep, ti] = eval_set(cells, deme, meas)
                ti += 1
            if ti >= T:
                t = times[T - 1]
                break
            t += dt
            next_label = sample_event(deme, labels, counts, rates6, R, prm, next_label, ev)
            nev += 1
            cells, deme = apply_set(cells, deme, ev, prm)
            if cells.shape[0] > pk:
                pk = cells.shape[0]
            if cells.shape[0] > max_summands or cells.size > MAX_CELLS:
                if sample_on_overflow:
                    sampled[rep] = True
                    t, n2, code = _point_phase(cells, deme, next_label, t, ti, times,
                                               prm, meas, values, rep, max_frame)
                    nev += n2
                    status[rep] = code
                else:
                    for q in range(ti, T):
                        values[rep, q] = np.nan
                    status[rep] = ST_OVERFLOW
                break
        stop_time[rep] = t
        events[rep] = nev
        peak[rep] = pk
