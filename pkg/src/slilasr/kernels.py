"""Hot inner loops: GRU recurrence, CTC alpha/beta lattice, edit distance.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. ``SLILASR_NUMBA=0`` routes the public names to the
numpy versions. Both versions are kept numerically equivalent (see
``tests/test_kernels.py``) and are compared in ``benchmarks/bench_kernels.py``.

Arrays are batch-major, C-contiguous float64.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

NEG_INF = -np.inf


# --------------------------------------------------------------------------
# GRU recurrence
#
#   r  = sigmoid(xr + h W_hr + b_hr)
#   z  = sigmoid(xz + h W_hz + b_hz)
#   n  = tanh(xn + r * (h W_hn + b_hn))
#   h' = (1 - z) * n + z * h
#
# ``xp`` [B, T, 3H] already holds the input projections x W_ih + b_ih, packed
# [r | z | n]. Sequence b is valid for its first ``lengths[b]`` frames; with
# ``reverse`` it is consumed from frame lengths[b]-1 down to 0. Padded frames
# emit zeros. Caches are indexed by step k, not by frame.
# --------------------------------------------------------------------------

def _step_frames(lengths, k, reverse):
    return np.where(reverse, lengths - 1 - k, k)


def _gru_forward_numpy(xp, w_hh, b_hh, lengths, reverse):
    B, T, H3 = xp.shape
    H = H3 // 3
    rows = np.arange(B)
    out = np.zeros((B, T, H))
    cache = np.zeros((5, T, B, H))   # h_prev, r, z, n, ghn
    h = np.zeros((B, H))
    for k in range(T):
        act = k < lengths
        frames = np.clip(_step_frames(lengths, k, reverse), 0, T - 1)
        x = xp[rows, frames]
        gh = h @ w_hh + b_hh
        r = 1.0 / (1.0 + np.exp(-(x[:, :H] + gh[:, :H])))
        z = 1.0 / (1.0 + np.exp(-(x[:, H:2 * H] + gh[:, H:2 * H])))
        ghn = gh[:, 2 * H:]
        n = np.tanh(x[:, 2 * H:] + r * ghn)
        hc = (1.0 - z) * n + z * h
        cache[:, k] = (h, r, z, n, ghn)
        cache[:, k, ~act] = 0.0
        out[rows[act], frames[act]] = hc[act]
        h = np.where(act[:, None], hc, h)
    return out, cache


@njit
def _gru_forward_numba(xp, w_hh, b_hh, lengths, reverse):
    B, T, H3 = xp.shape
    H = H3 // 3
    out = np.zeros((B, T, H))
    cache = np.zeros((5, T, B, H))
    h = np.zeros((B, H))
    for k in range(T):
        gh = np.dot(h, w_hh)
        for b in range(B):
            if k >= lengths[b]:
                continue
            t = lengths[b] - 1 - k if reverse else k
            for j in range(H):
                hp = h[b, j]
                r = 1.0 / (1.0 + np.exp(-(xp[b, t, j] + gh[b, j] + b_hh[j])))
                z = 1.0 / (1.0 + np.exp(-(xp[b, t, H + j] + gh[b, H + j] + b_hh[H + j])))
                ghn = gh[b, 2 * H + j] + b_hh[2 * H + j]
                # libm tanh is ~4x slower than exp here; saturates correctly at +-inf
                n = 1.0 - 2.0 / (1.0 + np.exp(2.0 * (xp[b, t, 2 * H + j] + r * ghn)))
                hc = (1.0 - z) * n + z * hp
                cache[0, k, b, j] = hp
                cache[1, k, b, j] = r
                cache[2, k, b, j] = z
                cache[3, k, b, j] = n
                cache[4, k, b, j] = ghn
                out[b, t, j] = hc
                h[b, j] = hc
    return out, cache


def _gru_backward_numpy(dout, w_hh, lengths, reverse, cache):
    B, T, H = dout.shape
    rows = np.arange(B)
    dxp = np.zeros((B, T, 3 * H))
    dw_hh = np.zeros((H, 3 * H))
    db_hh = np.zeros(3 * H)
    dh = np.zeros((B, H))
    for k in range(T - 1, -1, -1):
        act = (k < lengths)[:, None]
        frames = np.clip(_step_frames(lengths, k, reverse), 0, T - 1)
        hp, r, z, n, ghn = cache[:, k]
        dhc = np.where(act, dh + dout[rows, frames], 0.0)
        dn = dhc * (1.0 - z)
        dz = dhc * (hp - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        dgh = np.concatenate((dar, daz, dan * r), axis=1)
        a = act[:, 0]
        dxp[rows[a], frames[a]] = np.concatenate((dar, daz, dan), axis=1)[a]
        dw_hh += hp.T @ dgh
        db_hh += dgh.sum(axis=0)
        dh = dhc * z + dgh @ w_hh.T
    return dxp, dw_hh, db_hh


@njit
def _gru_backward_numba(dout, w_hh, lengths, reverse, cache):
    B, T, H = dout.shape
    dxp = np.zeros((B, T, 3 * H))
    dw_hh = np.zeros((H, 3 * H))
    db_hh = np.zeros(3 * H)
    dh = np.zeros((B, H))
    dgh = np.zeros((B, 3 * H))
    w_hh_t = np.ascontiguousarray(w_hh.T)
    for k in range(T - 1, -1, -1):
        for b in range(B):
            if k >= lengths[b]:
                for q in range(3 * H):
                    dgh[b, q] = 0.0
                continue
            t = lengths[b] - 1 - k if reverse else k
            for j in range(H):
                dhc = dh[b, j] + dout[b, t, j]
                r = cache[1, k, b, j]
                z = cache[2, k, b, j]
                n = cache[3, k, b, j]
                dn = dhc * (1.0 - z)
                dz = dhc * (cache[0, k, b, j] - n)
                dan = dn * (1.0 - n * n)
                dar = dan * cache[4, k, b, j] * r * (1.0 - r)
                daz = dz * z * (1.0 - z)
                dgh[b, j] = dar
                dgh[b, H + j] = daz
                dgh[b, 2 * H + j] = dan * r
                dxp[b, t, j] = dar
                dxp[b, t, H + j] = daz
                dxp[b, t, 2 * H + j] = dan
                dh[b, j] = dhc * z
        dw_hh += np.dot(np.ascontiguousarray(cache[0, k].T), dgh)
        for b in range(B):
            for q in range(3 * H):
                db_hh[q] += dgh[b, q]
        dh += np.dot(dgh, w_hh_t)
    return dxp, dw_hh, db_hh


# --------------------------------------------------------------------------
# CTC lattice over the blank-interleaved label sequence (blank = 0)
# --------------------------------------------------------------------------

def _lse2(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


_lse2_numba = njit(_lse2)


@njit
def _ctc_numba(log_probs, target):
    T, V = log_probs.shape
    m = target.shape[0]
    S = 2 * m + 1
    ext = np.zeros(S, dtype=np.int64)
    for i in range(m):
        ext[2 * i + 1] = target[i]
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = log_probs[0, 0]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        for s in range(S):
            acc = alpha[t - 1, s]
            if s >= 1:
                acc = _lse2_numba(acc, alpha[t - 1, s - 1])
            if s >= 2 and ext[s] != 0 and ext[s] != ext[s - 2]:
                acc = _lse2_numba(acc, alpha[t - 1, s - 2])
            if acc != NEG_INF:
                alpha[t, s] = acc + log_probs[t, ext[s]]
    beta[T - 1, S - 1] = log_probs[T - 1, 0]
    if S > 1:
        beta[T - 1, S - 2] = log_probs[T - 1, ext[S - 2]]
    for t in range(T - 2, -1, -1):
        for s in range(S):
            acc = beta[t + 1, s]
            if s + 1 < S:
                acc = _lse2_numba(acc, beta[t + 1, s + 1])
            if s + 2 < S and ext[s] != 0 and ext[s] != ext[s + 2]:
                acc = _lse2_numba(acc, beta[t + 1, s + 2])
            if acc != NEG_INF:
                beta[t, s] = acc + log_probs[t, ext[s]]
    log_p = alpha[T - 1, S - 1]
    if S > 1:
        log_p = _lse2_numba(log_p, alpha[T - 1, S - 2])
    occ = np.full((T, V), NEG_INF)
    for t in range(T):
        for s in range(S):
            v = alpha[t, s] + beta[t, s]
            if v != NEG_INF:
                occ[t, ext[s]] = _lse2_numba(occ[t, ext[s]], v)
    grad = np.zeros((T, V))
    for t in range(T):
        for k in range(V):
            if occ[t, k] != NEG_INF:
                grad[t, k] = -np.exp(occ[t, k] - log_probs[t, k] - log_p)
    return -log_p, grad


def _ctc_numpy(log_probs, target):
    T, V = log_probs.shape
    m = target.shape[0]
    S = 2 * m + 1
    ext = np.zeros(S, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(S, dtype=bool)
    if S > 2:
        skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    emit = log_probs[:, ext]
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            stack = np.full((3, S), NEG_INF)
            stack[0] = prev
            stack[1, 1:] = prev[:-1]
            stack[2, 2:] = np.where(skip[2:], prev[:-2], NEG_INF)
            alpha[t] = np.logaddexp.reduce(stack, axis=0) + emit[t]
        beta[T - 1, S - 1] = emit[T - 1, S - 1]
        if S > 1:
            beta[T - 1, S - 2] = emit[T - 1, S - 2]
        skip_fwd = np.zeros(S, dtype=bool)
        skip_fwd[:-2] = skip[2:]
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1]
            stack = np.full((3, S), NEG_INF)
            stack[0] = nxt
            stack[1, :-1] = nxt[1:]
            stack[2, :-2] = np.where(skip_fwd[:-2], nxt[2:], NEG_INF)
            beta[t] = np.logaddexp.reduce(stack, axis=0) + emit[t]
    log_p = np.logaddexp.reduce(alpha[T - 1, max(S - 2, 0):])
    ab = alpha + beta
    occ = np.full((T, V), NEG_INF)
    for s in range(S):
        occ[:, ext[s]] = np.logaddexp(occ[:, ext[s]], ab[:, s])
    grad = -np.exp(occ - log_probs - log_p)
    return -log_p, grad


# --------------------------------------------------------------------------
# Levenshtein distance with unit costs
# --------------------------------------------------------------------------

@njit
def _edit_distance_numba(a, b):
    n = a.shape[0]
    m = b.shape[0]
    prev = np.arange(m + 1)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        for j in range(m + 1):
            prev[j] = cur[j]
    return prev[m]


def _edit_distance_numpy(a, b):
    m = b.shape[0]
    offs = np.arange(m + 1)
    prev = offs.copy()
    for i in range(1, a.shape[0] + 1):
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        # insertions chain along the row: cur[j] = min_k<=j cand[k] + (j - k)
        prev = np.minimum.accumulate(cand - offs) + offs
    return int(prev[m])


if USE_NUMBA:
    gru_forward = _gru_forward_numba
    gru_backward = _gru_backward_numba
    ctc_lattice = _ctc_numba
    edit_distance_kernel = _edit_distance_numba
else:
    gru_forward = _gru_forward_numpy
    gru_backward = _gru_backward_numpy
    ctc_lattice = _ctc_numpy
    edit_distance_kernel = _edit_distance_numpy
