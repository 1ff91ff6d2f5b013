"""Brute-force reference computations for the sampler tests.

Everything here is written directly from the model definition with plain
loops, independently of the package's vectorised code paths.
"""
import itertools
import math

import numpy as np

from bayesdiff.model import group_mass, state_mass


def crp_log_prob(seating, d, alpha):
    """Sequential Chinese-restaurant probability of a seating (list of table ids)."""
    counts = {}
    out = 0.0
    for n, k in enumerate(seating):
        if k in counts:
            out += math.log((counts[k] - d) / (n + alpha))
            counts[k] += 1
        else:
            out += math.log((alpha + len(counts) * d) / (n + alpha))
            counts[k] = 1
    return out


def markov_log_prob(g, s, r, rho, gamma):
    out = math.log(1 - rho if g[0] == 1 else rho)
    for j in range(len(g)):
        out += math.log(state_mass(g[j], rho, gamma)[s[j] - 1])
        if j:
            out += math.log(group_mass(s[j - 1], r[j - 1], rho, gamma)[g[j] - 1])
    return out


def atom_options(state, H, T):
    """All pool-index tuples of a table in ``state`` with their log base-measure weight factor."""
    if state == 1:
        return [tuple([a] * T) for a in range(H)]
    return [tup for tup in itertools.product(range(H), repeat=T) if len(set(tup)) > 1]


def log_base(tup, state, w, T):
    if state == 1:
        return math.log(w[tup[0]])
    return sum(math.log(w[a]) for a in tup) - math.log(1 - np.sum(w ** T))


def column_loglik(col, t, values, sigma2):
    mu = np.asarray(values)[t - 1]
    return float(np.sum(-0.5 * np.log(2 * np.pi * sigma2) - 0.5 * (col - mu) ** 2 / sigma2))


def table_log_marginal(cols, t, state, zeta, w, sigma2):
    T = int(t.max())
    terms = []
    for tup in atom_options(state, zeta.size, T):
        ll = log_base(tup, state, w, T)
        for c in cols:
            ll += column_loglik(c, t, zeta[list(tup)], sigma2)
        terms.append(ll)
    m = max(terms)
    return m + math.log(sum(math.exp(x - m) for x in terms))


def set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def enumerate_state_posterior(resid, t, r, params, zeta, w):
    """Exact posterior over the state vector s, atoms and partitions summed out.

    ``resid`` is the n x p matrix of observations minus subject effects.
    """
    p = resid.shape[1]
    post = {}
    alphas = {1: params.alpha1, 2: params.alpha2}
    discounts = {1: 0.0, 2: params.d2}
    for g in itertools.product((1, 2), repeat=p):
        for s in itertools.product((1, 2), repeat=p):
            base = markov_log_prob(g, s, r, params.rho, params.gamma)
            groups = {}
            for j in range(p):
                groups.setdefault((g[j], s[j]), []).append(j)
            per_pdp = []
            for (gg, ss), members in groups.items():
                terms = []
                for part in set_partitions(members):
                    label = {j: k for k, blk in enumerate(sorted(part, key=min)) for j in blk}
                    lp = crp_log_prob([label[j] for j in members], discounts[ss], alphas[ss])
                    for blk in part:
                        lp += table_log_marginal([resid[:, j] for j in blk], t, ss, zeta, w, params.sigma2)
                    terms.append(lp)
                m = max(terms)
                per_pdp.append(m + math.log(sum(math.exp(x - m) for x in terms)))
            post.setdefault(s, []).append(base + sum(per_pdp))
    logs = {s: max(v) + math.log(sum(math.exp(x - max(v)) for x in v)) for s, v in post.items()}
    m = max(logs.values())
    tot = sum(math.exp(v - m) for v in logs.values())
    return {s: math.exp(v - m) / tot for s, v in logs.items()}


def probe_conditional(j, state, resid, t, r, params):
    """Full conditional of probe ``j``'s (g, s, table) from joint-density ratios.

    Returns a dict keyed by ``(g, s, slot)`` for existing tables (slots of
    the state after removing ``j``) and ``(g, s, None)`` for new tables.
    """
    zeta, w = state.zeta, state.weights
    T = int(t.max())
    p = state.p
    others = [k for k in range(p) if k != j]
    tabs = {}
    for k in others:
        tabs.setdefault(int(state.tab[k]), []).append(k)

    def joint(g, s, assign, atoms):
        lp = markov_log_prob(g, s, r, params.rho, params.gamma)
        for pdp in range(4):
            gg, ss = pdp // 2 + 1, pdp % 2 + 1
            seating = [assign[k] for k in range(p) if (g[k], s[k]) == (gg, ss)]
            lp += crp_log_prob(seating, 0.0 if ss == 1 else params.d2,
                               params.alpha1 if ss == 1 else params.alpha2)
        for slot, tup in atoms.items():
            st = 2 if len(set(zeta[list(tup)])) > 1 else 1
            lp += log_base(tup, st, w, T)
        for k in range(p):
            lp += column_loglik(resid[:, k], t, zeta[list(atoms[assign[k]])], params.sigma2)
        return lp

    base_g = [int(x) for x in state.g]
    base_s = [int(x) for x in state.s]
    assign = {k: int(state.tab[k]) for k in others}
    atoms = {slot: tuple(int(a) for a in state.tab_atom[slot]) for slot in tabs}
    out = {}
    for slot, members in tabs.items():
        pdp = int(state.tab_pdp[slot])
        g, s = list(base_g), list(base_s)
        g[j], s[j] = pdp // 2 + 1, pdp % 2 + 1
        out[(g[j], s[j], slot)] = joint(g, s, {**assign, j: slot}, atoms)
    for pdp in range(4):
        g, s = list(base_g), list(base_s)
        g[j], s[j] = pdp // 2 + 1, pdp % 2 + 1
        terms = [joint(g, s, {**assign, j: "new"}, {**atoms, "new": tup})
                 for tup in atom_options(s[j], zeta.size, T)]
        m = max(terms)
        out[(g[j], s[j], None)] = m + math.log(sum(math.exp(x - m) for x in terms))
    m = max(out.values())
    tot = sum(math.exp(v - m) for v in out.values())
    return {k: math.exp(v - m) / tot for k, v in out.items()}
