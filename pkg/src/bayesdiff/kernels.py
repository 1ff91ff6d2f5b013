"""Hot loops of the sampler.

Every kernel exists twice: a loop form compiled with numba and a vectorised
numpy form.  ``_accel.USE_NUMBA`` picks which one the public wrappers call.
Both consume the same pre-drawn uniforms, so for identical inputs they make
identical choices up to floating-point ties.

Conventions: ``g`` and ``s`` hold 1-based labels; a PDP index is
``2 * (g - 1) + (s - 1)``; atoms are rows of pool indices into ``zeta``.
Candidate order for one probe is: the active tables in ``active`` order, then
one new table for each of the four PDPs.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# numba kernels


@njit
def _logsumexp_1d(a):
    m = -np.inf
    for x in a:
        if x > m:
            m = x
    if m == -np.inf:
        return -np.inf
    acc = 0.0
    for x in a:
        acc += math.exp(x - m)
    return m + math.log(acc)


@njit
def _categorical(w, total, u):
    """Inverse-CDF draw from non-negative weights ``w`` summing to ``total``."""
    target = u * total
    acc = 0.0
    last = -1
    for i in range(w.size):
        if w[i] > 0.0:
            last = i
            acc += w[i]
            if acc > target:
                return i
    return last


@njit
def draw_not_all_equal_nb(logP, u, out):
    """Draw a tuple ``out[t] ~ softmax(logP[t])`` conditioned on not all equal.

    Exact sequential sampler: while the prefix is constant at ``a``, the
    weight of repeating ``a`` is multiplied by the probability that some later
    coordinate differs.  Returns False when the conditioning event is empty.
    """
    T, H = logP.shape
    lp = np.empty((T, H))
    for t in range(T):
        lse = _logsumexp_1d(logP[t])
        if lse == -np.inf:
            return False
        for h in range(H):
            lp[t, h] = logP[t, h] - lse
    # suffix[t, a] = sum_{t' >= t} lp[t', a]; suffix[T] = 0
    suffix = np.zeros((T + 1, H))
    for t in range(T - 1, -1, -1):
        for h in range(H):
            suffix[t, h] = suffix[t + 1, h] + lp[t, h]
    w = np.empty(H)
    total = 0.0
    for h in range(H):
        w[h] = math.exp(lp[0, h]) * -math.expm1(suffix[1, h])
        total += w[h]
    if not total > 0.0:
        return False
    a = _categorical(w, total, u[0])
    out[0] = a
    constant = True
    for t in range(1, T):
        total = 0.0
        for h in range(H):
            w[h] = math.exp(lp[t, h])
        if constant:
            w[a] *= -math.expm1(suffix[t + 1, a])
        for h in range(H):
            total += w[h]
        b = _categorical(w, total, u[t])
        out[t] = b
        if b != a:
            constant = False
    return True


@njit
def _new_table_logliks(M, logw, log_norm2, out):
    """Marginal log-likelihood of a new state-1 and state-2 table (into out[0:2])."""
    T, H = M.shape
    col = np.empty(H)
    tmp = np.empty(H)
    for h in range(H):
        acc = 0.0
        for t in range(T):
            acc += M[t, h]
        col[h] = acc
    for h in range(H):
        tmp[h] = logw[h] + col[h]
    out[0] = _logsumexp_1d(tmp)
    la = 0.0
    for t in range(T):
        for h in range(H):
            tmp[h] = logw[h] + M[t, h]
        la += _logsumexp_1d(tmp)
    for h in range(H):
        tmp[h] = T * logw[h] + col[h]
    lb = _logsumexp_1d(tmp)
    if lb < la:
        out[1] = la + math.log(-math.expm1(lb - la)) - log_norm2
    else:
        out[1] = -np.inf


@njit
def probe_logweights_nb(j, S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ, logF,
                        alpha, dsc, g, s, tab_pdp, tab_n, tab_atom, active, nact,
                        pdp_n, pdp_K, M, out):
    """Unnormalised log-weights of every candidate for probe ``j``.

    Probe ``j`` must already be removed from the counts.  Fills ``M`` (T x H
    per-pool-value log-likelihood terms) and ``out[:nact + 4]``.
    """
    p = g.size
    T, H = M.shape
    for t in range(T):
        a = S1[j, t]
        b = 0.5 * nt[t]
        for h in range(H):
            z = zeta[h]
            M[t, h] = (z * a - b * z * z) * inv_s2
    lm = np.empty((2, 2))
    for gg in range(2):
        for ss in range(2):
            v = logQ[gg, ss]
            if j == 0:
                v += logF0[gg]
            else:
                v += logF[j - 1, s[j - 1] - 1, gg]
            if j < p - 1:
                v += logF[j, ss, g[j + 1] - 1]
            lm[gg, ss] = v
    for c in range(nact):
        k = active[c]
        pdp = tab_pdp[k]
        gg = pdp // 2
        ss = pdp % 2
        lik = 0.0
        for t in range(T):
            lik += M[t, tab_atom[k, t]]
        out[c] = (lm[gg, ss] + math.log(tab_n[k] - dsc[ss])
                  - math.log(pdp_n[pdp] + alpha[ss]) + lik)
    newlik = np.empty(2)
    _new_table_logliks(M, logw, log_norm2, newlik)
    for pdp in range(4):
        gg = pdp // 2
        ss = pdp % 2
        out[nact + pdp] = (lm[gg, ss] + math.log(alpha[ss] + pdp_K[pdp] * dsc[ss])
                           - math.log(pdp_n[pdp] + alpha[ss]) + newlik[ss])
    return nact + 4


@njit
def _remove_probe(j, tab, tab_pdp, tab_n, active, pos, nact_arr, pdp_n, pdp_K):
    k = tab[j]
    pdp = tab_pdp[k]
    tab_n[k] -= 1
    pdp_n[pdp] -= 1
    if tab_n[k] == 0:
        nact = nact_arr[0]
        c = pos[k]
        last = active[nact - 1]
        active[c] = last
        pos[last] = c
        pos[k] = -1
        nact_arr[0] = nact - 1
        pdp_K[pdp] -= 1
    tab[j] = -1


@njit
def _open_table(pdp, tab_pdp, tab_n, active, pos, nact_arr, pdp_K):
    k = 0
    while pos[k] != -1:
        k += 1
    nact = nact_arr[0]
    active[nact] = k
    pos[k] = nact
    nact_arr[0] = nact + 1
    tab_pdp[k] = pdp
    tab_n[k] = 0
    pdp_K[pdp] += 1
    return k


@njit
def allocation_sweep_nb(S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ, logF,
                        alpha, dsc, g, s, tab, tab_pdp, tab_n, tab_atom, active, pos,
                        nact_arr, pdp_n, pdp_K, U):
    p = g.size
    T = nt.size
    H = zeta.size
    M = np.empty((T, H))
    out = np.empty(tab_n.size + 4)
    tmp = np.empty(H)
    drawn = np.empty(T, dtype=np.int64)
    lp2 = np.empty((T, H))
    for j in range(p):
        _remove_probe(j, tab, tab_pdp, tab_n, active, pos, nact_arr, pdp_n, pdp_K)
        nact = nact_arr[0]
        m = probe_logweights_nb(j, S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ,
                                logF, alpha, dsc, g, s, tab_pdp, tab_n, tab_atom,
                                active, nact, pdp_n, pdp_K, M, out)
        lse = _logsumexp_1d(out[:m])
        total = 0.0
        for c in range(m):
            out[c] = math.exp(out[c] - lse)
            total += out[c]
        c = _categorical(out[:m], total, U[j, 0])
        if c < nact:
            k = active[c]
            pdp = tab_pdp[k]
        else:
            pdp = c - nact
            k = _open_table(pdp, tab_pdp, tab_n, active, pos, nact_arr, pdp_K)
            if pdp % 2 == 0:
                for h in range(H):
                    acc = logw[h]
                    for t in range(T):
                        acc += M[t, h]
                    tmp[h] = acc
                lse2 = _logsumexp_1d(tmp)
                tot2 = 0.0
                for h in range(H):
                    tmp[h] = math.exp(tmp[h] - lse2)
                    tot2 += tmp[h]
                a = _categorical(tmp, tot2, U[j, 1])
                for t in range(T):
                    tab_atom[k, t] = a
            else:
                for t in range(T):
                    for h in range(H):
                        lp2[t, h] = logw[h] + M[t, h]
                draw_not_all_equal_nb(lp2, U[j, 1:], drawn)
                for t in range(T):
                    tab_atom[k, t] = drawn[t]
        tab[j] = k
        tab_n[k] += 1
        pdp_n[pdp] += 1
        g[j] = pdp // 2 + 1
        s[j] = pdp % 2 + 1


# ---------------------------------------------------------------------------
# numpy implementations


def _lse(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        r = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return r.squeeze() if axis is None else np.squeeze(r, axis=axis)


def _categorical_np(w, u):
    w = np.asarray(w, dtype=float)
    cw = np.cumsum(w)
    i = int(np.searchsorted(cw, u * cw[-1], side="right"))
    if i >= w.size:
        i = int(np.flatnonzero(w > 0)[-1])
    return i


def draw_not_all_equal_np(logP, u):
    T, H = logP.shape
    lp = logP - _lse(logP, axis=1)[:, None]
    if not np.all(np.isfinite(_lse(logP, axis=1))):
        return None
    suffix = np.zeros((T + 1, H))
    suffix[:T] = np.cumsum(lp[::-1], axis=0)[::-1]
    w = np.exp(lp[0]) * -np.expm1(suffix[1])
    if not w.sum() > 0.0:
        return None
    out = np.empty(T, dtype=np.int64)
    a = _categorical_np(w, u[0])
    out[0] = a
    constant = True
    for t in range(1, T):
        w = np.exp(lp[t])
        if constant:
            w[a] *= -np.expm1(suffix[t + 1, a])
        b = _categorical_np(w, u[t])
        out[t] = b
        constant = constant and b == a
    return out


def new_table_logliks_np(M, logw, log_norm2):
    T = M.shape[0]
    col = M.sum(axis=0)
    l1 = _lse(logw + col)
    la = _lse(logw[None, :] + M, axis=1).sum()
    lb = _lse(T * logw + col)
    l2 = la + np.log(-np.expm1(lb - la)) - log_norm2 if lb < la else NEG_INF
    return float(l1), float(l2)


def probe_logweights_np(j, S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ, logF,
                        alpha, dsc, g, s, tab_pdp, tab_n, tab_atom, active, nact,
                        pdp_n, pdp_K):
    p = g.size
    M = (np.outer(S1[j], zeta) - 0.5 * np.outer(nt, zeta * zeta)) * inv_s2
    lm = logQ.copy()
    lm += logF0[:, None] if j == 0 else logF[j - 1, s[j - 1] - 1][:, None]
    if j < p - 1:
        lm += logF[j, :, g[j + 1] - 1][None, :]
    acts = active[:nact]
    pdps = tab_pdp[acts]
    gg, ss = pdps // 2, pdps % 2
    T = nt.size
    lik = M[np.arange(T)[None, :], tab_atom[acts]].sum(axis=1)
    old = lm[gg, ss] + np.log(tab_n[acts] - dsc[ss]) - np.log(pdp_n[pdps] + alpha[ss]) + lik
    newlik = np.array(new_table_logliks_np(M, logw, log_norm2))
    allp = np.arange(4)
    g4, s4 = allp // 2, allp % 2
    with np.errstate(divide="ignore"):
        new = (lm[g4, s4] + np.log(alpha[s4] + pdp_K * dsc[s4])
               - np.log(pdp_n + alpha[s4]) + newlik[s4])
    return np.concatenate([old, new]), M


def _remove_probe_np(j, tab, tab_pdp, tab_n, active, pos, nact_arr, pdp_n, pdp_K):
    k = tab[j]
    pdp = tab_pdp[k]
    tab_n[k] -= 1
    pdp_n[pdp] -= 1
    if tab_n[k] == 0:
        nact = nact_arr[0]
        c = pos[k]
        last = active[nact - 1]
        active[c] = last
        pos[last] = c
        pos[k] = -1
        nact_arr[0] = nact - 1
        pdp_K[pdp] -= 1
    tab[j] = -1


def _open_table_np(pdp, tab_pdp, tab_n, active, pos, nact_arr, pdp_K):
    k = int(np.flatnonzero(pos == -1)[0])
    nact = nact_arr[0]
    active[nact] = k
    pos[k] = nact
    nact_arr[0] = nact + 1
    tab_pdp[k] = pdp
    tab_n[k] = 0
    pdp_K[pdp] += 1
    return k


def allocation_sweep_np(S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ, logF,
                        alpha, dsc, g, s, tab, tab_pdp, tab_n, tab_atom, active, pos,
                        nact_arr, pdp_n, pdp_K, U):
    p = g.size
    T = nt.size
    for j in range(p):
        _remove_probe_np(j, tab, tab_pdp, tab_n, active, pos, nact_arr, pdp_n, pdp_K)
        nact = int(nact_arr[0])
        lw, M = probe_logweights_np(j, S1, nt, inv_s2, zeta, logw, log_norm2, logF0, logQ,
                                    logF, alpha, dsc, g, s, tab_pdp, tab_n, tab_atom,
                                    active, nact, pdp_n, pdp_K)
        w = np.exp(lw - _lse(lw))
        c = _categorical_np(w, U[j, 0])
        if c < nact:
            k = active[c]
            pdp = tab_pdp[k]
        else:
            pdp = c - nact
            k = _open_table_np(pdp, tab_pdp, tab_n, active, pos, nact_arr, pdp_K)
            if pdp % 2 == 0:
                lp = logw + M.sum(axis=0)
                tab_atom[k, :] = _categorical_np(np.exp(lp - _lse(lp)), U[j, 1])
            else:
                tab_atom[k, :] = draw_not_all_equal_np(logw[None, :] + M, U[j, 1:1 + T])
        tab[j] = k
        tab_n[k] += 1
        pdp_n[pdp] += 1
        g[j] = pdp // 2 + 1
        s[j] = pdp % 2 + 1


# ---------------------------------------------------------------------------
# dispatch


def allocation_sweep(*args, backend=None):
    use_nb = _accel.USE_NUMBA if backend is None else backend == "numba"
    (allocation_sweep_nb if use_nb else allocation_sweep_np)(*args)


def draw_not_all_equal(logP, u, backend=None):
    """Pool-index tuple with ``P(out) ∝ prod_t softmax(logP[t])[out[t]]`` excluding constant tuples.

    Returns None when every admissible tuple has zero probability.
    """
    use_nb = _accel.USE_NUMBA if backend is None else backend == "numba"
    logP = np.ascontiguousarray(logP, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    if use_nb:
        out = np.empty(logP.shape[0], dtype=np.int64)
        return out if draw_not_all_equal_nb(logP, u, out) else None
    return draw_not_all_equal_np(logP, u)
