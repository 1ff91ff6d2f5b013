"""MCMC for the Sticky PDP differential-analysis model.

One iteration runs, in order: the joint (g, s, v) allocation sweep, atom and
pool updates, subject effects, scalar hyperparameters, the eta mixture move
and the d2 mixture move.  All randomness flows from one ``numpy`` Generator so
a chain is reproducible from its seed.
"""
from dataclasses import dataclass, field, asdict
from functools import lru_cache
import hashlib
import json
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln

from . import checkpoint, kernels
from .baselines import probe_pvalues
from .errors import DomainError, InvariantError, NumericalError, StateError
from .model import (
    AFFILIATION_CAP,
    ModelHyperParams,
    effective_affiliations,
    log_transition_tables,
    transition_loglik,
    weights_from_sticks,
)
from .state import ChainState

UPDATE_NAMES = (
    "atoms", "pool", "eps", "tau2_eps", "sigma2", "mu_G", "tau2_G",
    "beta", "alpha1", "alpha2", "rho", "gamma", "eta", "d2",
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SamplerConfig:
    n_iter: int = 10000
    burn_in: int = 5000
    thin: int = 5
    seed: int = 0
    H_G: int = 50
    H_pi: int = 50
    H_G_max: int = 800
    proposal_scales: dict = field(
        default_factory=lambda: {"alpha1": 1.0, "alpha2": 1.0, "rho": 0.5, "gamma": 0.5}
    )
    adapt: bool = True
    fixed: tuple = ()
    eta_nodes: int = 128
    d2_nodes: int = 64
    debug: bool = False
    backend: str = None

    def __post_init__(self):
        self.fixed = tuple(sorted(set(self.fixed)))
        self.validate()

    def validate(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise DomainError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if any(not v > 0 for v in self.proposal_scales.values()):
            raise DomainError("proposal scales must be positive")
        unknown = set(self.fixed) - set(UPDATE_NAMES)
        if unknown:
            raise DomainError(f"unknown fixed updates: {sorted(unknown)}")
        if self.H_G < 2:
            raise DomainError("H_G must be >= 2")
        return self

    @property
    def n_kept(self):
        return (self.n_iter - self.burn_in) // self.thin

    def to_dict(self):
        d = asdict(self)
        d["fixed"] = list(self.fixed)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["fixed"] = tuple(d.get("fixed", ()))
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# small conjugate / partition helpers


def normal_posterior(prior_mean, prior_var, n, sum_y, noise_var):
    """Posterior (mean, variance) of a normal mean with ``n`` observations summing to ``sum_y``."""
    prec = 1.0 / prior_var + n / noise_var
    return (prior_mean / prior_var + sum_y / noise_var) / prec, 1.0 / prec


def ig_posterior(a, b, n, ss):
    """Inverse-gamma (shape, rate) after ``n`` zero-mean normal draws with sum of squares ``ss``."""
    return a + 0.5 * n, b + 0.5 * ss


def draw_inv_gamma(shape, rate, rng):
    return rate / rng.gamma(shape)


def pdp_predictive_weights(cluster_sizes, d, alpha):
    """Chinese-restaurant predictive probabilities: existing tables then a new one."""
    counts = np.asarray(cluster_sizes, dtype=float)
    if not 0.0 <= d < 1.0 or not alpha > -d:
        raise DomainError(f"invalid PDP parameters d={d}, alpha={alpha}")
    if np.any(counts < 1):
        raise DomainError("cluster sizes must be >= 1")
    w = np.append(counts - d, alpha + counts.size * d)
    return w / w.sum()


def log_eppf(counts, d, alpha):
    """Log exchangeable partition probability of cluster sizes under PDP(d, alpha)."""
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    K = counts.size
    if K == 0:
        return 0.0
    n = counts.sum()
    k = np.arange(1, K)
    out = np.sum(np.log(alpha + k * d)) - (gammaln(alpha + n) - gammaln(alpha + 1.0))
    out += np.sum(gammaln(counts - d)) - K * gammaln(1.0 - d)
    return float(out)


def log_eppf_grid(counts, ds, alpha):
    """``log_eppf`` evaluated at every discount in ``ds`` at once."""
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    ds = np.asarray(ds, dtype=float)
    K = counts.size
    if K == 0:
        return np.zeros(ds.shape)
    n = counts.sum()
    k = np.arange(1, K)
    out = np.log(alpha + np.multiply.outer(ds, k)).sum(axis=-1) - (gammaln(alpha + n) - gammaln(alpha + 1.0))
    out += gammaln(np.subtract.outer(counts, ds)).sum(axis=0) - K * gammaln(1.0 - ds)
    return out


@lru_cache(maxsize=None)
def gauss_legendre(nodes):
    x, w = leggauss(nodes)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _lse(a):
    a = np.asarray(a, dtype=float)
    m = np.max(a)
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.sum(np.exp(a - m))))


def _log1mexp(x):
    """log(1 - exp(x)) for x <= 0."""
    if x >= 0.0:
        return -np.inf
    return math.log(-math.expm1(x)) if x > -0.693 else math.log1p(-math.exp(x))


def pool_logw(V):
    with np.errstate(divide="ignore"):
        return np.log(weights_from_sticks(V))


def log_norm_state2(logw, T):
    """log(1 - sum_v w_v^T): mass of not-all-equal T-tuples under G."""
    return _log1mexp(_lse(T * logw))


# ---------------------------------------------------------------------------
# generic samplers


def rw_metropolis(logf, x, scale, rng, logf_x=None):
    """One Gaussian random-walk Metropolis step; returns (x, logf(x), accepted)."""
    if logf_x is None:
        logf_x = logf(x)
    prop = x + scale * rng.standard_normal()
    lp = logf(prop)
    if math.log(rng.random()) < lp - logf_x:
        return prop, lp, True
    return x, logf_x, False


def slice_sample(logf, x0, w, lower, upper, rng, max_steps=32):
    """Univariate slice sampling with stepping out and shrinkage (bounded support)."""
    logy = logf(x0) - rng.exponential()
    L = x0 - w * rng.random()
    R = L + w
    j = int(max_steps * rng.random())
    k = max_steps - 1 - j
    while j > 0 and L > lower and logf(L) > logy:
        L -= w
        j -= 1
    while k > 0 and R < upper and logf(R) > logy:
        R += w
        k -= 1
    L = max(L, lower)
    R = min(R, upper)
    for _ in range(200):
        x1 = L + rng.random() * (R - L)
        if x1 > lower and x1 < upper and logf(x1) > logy:
            return x1
        if x1 < x0:
            L = x1
        else:
            R = x1
    return x0


# ---------------------------------------------------------------------------
# data-derived quantities


class _DataView:
    """Per-dataset constants reused across iterations."""

    def __init__(self, data):
        self.data = data
        self.T = data.T
        self.onehot = (data.t[None, :] == np.arange(1, self.T + 1)[:, None]).astype(float)
        self.nt = self.onehot.sum(axis=1)
        self.zb = data.z - data.b[:, None]
        self.b_mean = 1.0 / (data.p - 1)

    def suff_stats(self, eps):
        """(p, T) treatment-wise sums of ``z - b - eps``."""
        return np.ascontiguousarray((self.onehot @ (self.zb - eps[:, None])).T)


def _view(data):
    v = getattr(data, "_bd_view", None)
    if v is None or v.data is not data:
        v = _DataView(data)
        data._bd_view = v
    return v


def residuals(state, data):
    theta = state.theta()
    return data.z - data.b[:, None] - state.eps[:, None] - theta[data.t - 1]


def log_likelihood(state, data, params):
    R = residuals(state, data)
    N = R.size
    return float(-0.5 * N * math.log(2 * math.pi * params.sigma2) - 0.5 * np.sum(R * R) / params.sigma2)


def _kernel_args(state, data, params):
    v = _view(data)
    r = effective_affiliations(data.e, params.eta, params.gamma)
    logF0, logQ, logF = log_transition_tables(r, params.rho, params.gamma)
    logw = pool_logw(state.V)
    return dict(
        S1=v.suff_stats(state.eps),
        nt=v.nt,
        inv_s2=1.0 / params.sigma2,
        zeta=np.ascontiguousarray(state.zeta),
        logw=logw,
        log_norm2=log_norm_state2(logw, v.T),
        logF0=logF0,
        logQ=np.ascontiguousarray(logQ),
        logF=np.ascontiguousarray(logF),
        alpha=np.array([params.alpha1, params.alpha2]),
        dsc=np.array([0.0, params.d2]),
    )


# ---------------------------------------------------------------------------
# updates


def update_allocation_sweep(state, data, params, rng, backend=None):
    """Resample (g_j, s_j, v_j) for j = 1..p in order from their full conditionals."""
    a = _kernel_args(state, data, params)
    U = rng.random((state.p, _view(data).T + 1))
    kernels.allocation_sweep(
        a["S1"], a["nt"], a["inv_s2"], a["zeta"], a["logw"], a["log_norm2"], a["logF0"],
        a["logQ"], a["logF"], a["alpha"], a["dsc"], state.g, state.s, state.tab,
        state.tab_pdp, state.tab_n, state.tab_atom, state.active, state.pos, state.nact,
        state.pdp_n, state.pdp_K, U, backend=backend,
    )
    return state


def allocation_conditional(j, state, data, params, backend=None):
    """Normalised full conditional of probe ``j``'s (g, s, table).

    Returns a list of ``(g, s, slot)`` candidates (``slot`` is None for a new
    table) and the matching probabilities.  ``state`` is not modified.
    """
    st = state.copy()
    a = _kernel_args(st, data, params)
    kernels._remove_probe_np(j, st.tab, st.tab_pdp, st.tab_n, st.active, st.pos, st.nact,
                             st.pdp_n, st.pdp_K)
    nact = int(st.nact[0])
    args = (j, a["S1"], a["nt"], a["inv_s2"], a["zeta"], a["logw"], a["log_norm2"],
            a["logF0"], a["logQ"], a["logF"], a["alpha"], a["dsc"], st.g, st.s, st.tab_pdp,
            st.tab_n, st.tab_atom, st.active, nact, st.pdp_n, st.pdp_K)
    use_nb = kernels._accel.USE_NUMBA if backend is None else backend == "numba"
    if use_nb:
        M = np.empty((a["nt"].size, a["zeta"].size))
        out = np.empty(nact + 4)
        kernels.probe_logweights_nb(*args, M, out)
        lw = out
    else:
        lw, _ = kernels.probe_logweights_np(*args)
    cands = []
    for c in range(nact):
        k = int(st.active[c])
        pdp = int(st.tab_pdp[k])
        cands.append((pdp // 2 + 1, pdp % 2 + 1, k))
    for pdp in range(4):
        cands.append((pdp // 2 + 1, pdp % 2 + 1, None))
    prob = np.exp(lw - _lse(lw))
    return cands, prob / prob.sum()


def _table_stats(state, data):
    v = _view(data)
    S1 = v.suff_stats(state.eps)
    acts = state.active_tables()
    A = np.zeros((state.tab_n.size, v.T))
    np.add.at(A, state.tab, S1)
    Ak = A[acts]
    cnt = state.tab_n[acts][:, None] * v.nt[None, :]
    return acts, Ak, cnt


def _pool_counts(state, acts):
    atoms = state.tab_atom[acts]
    st2 = state.tab_pdp[acts] % 2 == 1
    m = np.zeros(state.H, dtype=np.int64)
    np.add.at(m, atoms[~st2, 0], 1)
    np.add.at(m, atoms[st2].ravel(), 1)
    return m, st2


def update_atoms(state, data, params, rng, backend=None, update_pool=True, H_max=800):
    """Resample table atoms, then the pool sticks and the occupied pool values."""
    acts, Ak, cnt = _table_stats(state, data)
    if acts.size == 0:
        raise StateError("no occupied tables")
    if np.any(state.tab_n[acts] < 1):
        raise StateError("empty table encountered during atom update")
    inv = 1.0 / params.sigma2
    zeta = state.zeta
    logw = pool_logw(state.V)
    M = (Ak[:, :, None] * zeta[None, None, :] - 0.5 * cnt[:, :, None] * (zeta * zeta)[None, None, :]) * inv
    st2 = state.tab_pdp[acts] % 2 == 1
    i1 = np.flatnonzero(~st2)
    if i1.size:
        lp = logw[None, :] + M[i1].sum(axis=1)
        lp -= lp.max(axis=1, keepdims=True)
        cw = np.cumsum(np.exp(lp), axis=1)
        u = rng.random(i1.size)
        idx = np.minimum((cw <= u[:, None] * cw[:, -1:]).sum(axis=1), state.H - 1)
        state.tab_atom[acts[i1], :] = idx[:, None]
    for c in np.flatnonzero(st2):
        out = kernels.draw_not_all_equal(logw[None, :] + M[c], rng.random(M.shape[1]), backend=backend)
        if out is None:
            raise StateError("pool cannot supply a differential atom")
        state.tab_atom[acts[c]] = out
    if update_pool:
        _update_pool(state, data, params, rng, acts, Ak, cnt, H_max)
    return state


def _grow_pool(state, params, rng, H_new):
    extra = H_new - state.H
    V = state.V.copy()
    V[-1] = rng.beta(1.0, params.beta)
    state.V = np.concatenate([V, rng.beta(1.0, params.beta, size=extra)])
    state.V[-1] = 1.0
    state.zeta = np.concatenate([state.zeta, rng.normal(params.mu_G, math.sqrt(params.tau2_G), size=extra)])


def _update_pool(state, data, params, rng, acts, Ak, cnt, H_max):
    T = Ak.shape[1]
    m, st2 = _pool_counts(state, acts)
    if m[-1] > 0 and state.H < H_max:
        _grow_pool(state, params, rng, min(2 * state.H, H_max))
        m = np.concatenate([m, np.zeros(state.H - m.size, dtype=np.int64)])
    # sticks: conjugate stick-breaking draw, corrected for the state-2 normaliser
    tail = np.concatenate([np.cumsum(m[::-1])[::-1][1:], [0]])
    V_new = np.empty(state.H)
    V_new[:-1] = rng.beta(1.0 + m[:-1], params.beta + tail[:-1])
    V_new[-1] = 1.0
    q2 = int(np.count_nonzero(st2))
    u = rng.random()
    if q2 > 0:
        old = log_norm_state2(pool_logw(state.V), T)
        new = log_norm_state2(pool_logw(V_new), T)
        if math.log(u) < q2 * (old - new):
            state.V = V_new
    else:
        state.V = V_new
    # occupied pool values: conjugate normal given the observations mapped to them
    atoms = state.tab_atom[acts]
    sy = np.zeros(state.H)
    cn = np.zeros(state.H)
    np.add.at(sy, atoms[~st2, 0], Ak[~st2].sum(axis=1))
    np.add.at(cn, atoms[~st2, 0], cnt[~st2].sum(axis=1))
    np.add.at(sy, atoms[st2].ravel(), Ak[st2].ravel())
    np.add.at(cn, atoms[st2].ravel(), cnt[st2].ravel())
    occ = m > 0
    mean, var = normal_posterior(params.mu_G, params.tau2_G, cn[occ], sy[occ], params.sigma2)
    state.zeta[occ] = mean + np.sqrt(var) * rng.standard_normal(int(occ.sum()))


def update_subject_effects(state, data, params, rng, update_tau=True):
    """Conjugate draws of eps_i (xi_i = b_i + eps_i) and of tau2_eps."""
    R = data.z - data.b[:, None] - state.theta()[data.t - 1]
    p = data.p
    mean, var = normal_posterior(0.0, params.tau2_eps, p, R.sum(axis=1), params.sigma2)
    state.eps = mean + math.sqrt(var) * rng.standard_normal(data.n)
    if update_tau:
        a, b = ig_posterior(*params.priors.tau2_eps_ig, data.n, float(np.sum(state.eps ** 2)))
        params.tau2_eps = draw_inv_gamma(a, b, rng)
    return state


def _logit(x):
    return math.log(x) - math.log1p(-x)


def _expit(y):
    return 1.0 / (1.0 + math.exp(-y)) if y >= 0 else math.exp(y) / (1.0 + math.exp(y))


def rho_gamma_logpost(g, s, e, eta, rho, gamma):
    """Log conditional density of (rho, gamma) under uniform priors (-inf off-support)."""
    if not (0.0 < rho < 1.0 and 0.0 < gamma < 1.0):
        return -np.inf
    if eta > 0.0 and not eta < -1.0 / math.log(gamma):
        return -np.inf
    r = effective_affiliations(e, eta, gamma)
    out = transition_loglik(g, s, r, rho, gamma)
    if eta > 0.0 and e.size:
        # normaliser of the eta prior truncated at -1/log(gamma)
        out -= math.log(gamma) / e.size
    return out


def _alpha_logpost(state, params, which, alpha):
    if not alpha > 0:
        return -np.inf
    a0, b0 = params.priors.alpha_gamma
    d = 0.0 if which == 1 else params.d2
    acts = state.active_tables()
    pdps = state.tab_pdp[acts]
    out = (a0 - 1.0) * math.log(alpha) - b0 * alpha
    for g in (0, 1):
        pdp = 2 * g + (which - 1)
        out += log_eppf(state.tab_n[acts[pdps == pdp]], d, alpha)
    return out


def update_scalars(state, data, params, rng, fixed=(), scales=None, accepts=None):
    """sigma2, mu_G, tau2_G, idle pool values, beta, alpha1, alpha2, rho, gamma."""
    scales = {} if scales is None else scales
    if "sigma2" not in fixed:
        R = residuals(state, data)
        a, b = ig_posterior(*params.priors.sigma2_ig, R.size, float(np.sum(R * R)))
        params.sigma2 = draw_inv_gamma(a, b, rng)
    acts = state.active_tables()
    m, _ = _pool_counts(state, acts)
    occ = m > 0
    if "pool" not in fixed:
        zo = state.zeta[occ]
        if "mu_G" not in fixed:
            m0, v0 = params.priors.mu_G_normal
            mean, var = normal_posterior(m0, v0, zo.size, float(zo.sum()), params.tau2_G)
            params.mu_G = mean + math.sqrt(var) * rng.standard_normal()
        if "tau2_G" not in fixed:
            a, b = ig_posterior(*params.priors.tau2_G_ig, zo.size, float(np.sum((zo - params.mu_G) ** 2)))
            params.tau2_G = draw_inv_gamma(a, b, rng)
        idle = ~occ
        state.zeta[idle] = params.mu_G + math.sqrt(params.tau2_G) * rng.standard_normal(int(idle.sum()))
    if "beta" not in fixed:
        a0, b0 = params.priors.beta_gamma
        V = state.V[:-1]
        params.beta = rng.gamma(a0 + V.size, 1.0 / (b0 - np.sum(np.log1p(-np.minimum(V, 1 - 1e-16)))))
    for which in (1, 2):
        name = f"alpha{which}"
        if name in fixed:
            continue
        y0 = math.log(getattr(params, name))
        lf = lambda y: _alpha_logpost(state, params, which, math.exp(y)) + y
        y1, _, acc = rw_metropolis(lf, y0, scales.get(name, 1.0), rng)
        setattr(params, name, math.exp(y1))
        if accepts is not None:
            accepts[name] = accepts.get(name, 0) + int(acc)
    e = data.e
    for name in ("rho", "gamma"):
        if name in fixed:
            continue

        def lf(y, name=name):
            val = _expit(y)
            if not 0.0 < val < 1.0:
                return -np.inf
            rho = val if name == "rho" else params.rho
            gamma = val if name == "gamma" else params.gamma
            return rho_gamma_logpost(state.g, state.s, e, params.eta, rho, gamma) + math.log(val) + math.log1p(-val)

        y1, _, acc = rw_metropolis(lf, _logit(getattr(params, name)), scales.get(name, 0.5), rng)
        setattr(params, name, _expit(y1))
        if accepts is not None:
            accepts[name] = accepts.get(name, 0) + int(acc)
    return params


# ---------------------------------------------------------------------------
# eta and d2 mixture moves


def _edge_logmass(g, s, r, rho, gamma):
    """Sum over edges of log F*_{s_{j-1}}(g_j); ``r`` may be (..., p-1)."""
    rp = 1.0 - rho
    sp = (np.asarray(s)[:-1] == 1)
    gn = (np.asarray(g)[1:] == 1)
    ratio = r / gamma
    f1 = np.where(sp, rp + rho * ratio, rp - rp * ratio)
    with np.errstate(divide="ignore"):
        lf = np.where(gn, np.log(f1), np.log1p(-f1))
    return lf.sum(axis=-1)


class EtaConditional:
    """Two-component conditional of eta given every other variable.

    Works in ``u = exp(-b/eta)`` with ``b`` the mean scaled gap; under the
    truncated IG(1, b) component ``u`` is uniform on ``(0, gamma**b)``.
    """

    def __init__(self, g, s, e, params, nodes=128):
        self.g, self.s, self.e = g, s, np.asarray(e, dtype=float)
        self.rho, self.gamma = params.rho, params.gamma
        self.b = 1.0 / self.e.size if self.e.size else 1.0
        self.u_max = self.gamma ** self.b if self.gamma < 1.0 else 1.0
        pi0 = params.priors.eta_point_mass
        self.ll0 = float(_edge_logmass(g, s, np.zeros(self.e.size), self.rho, self.gamma)) if self.e.size else 0.0
        x, w = gauss_legendre(nodes)
        self.u = 0.5 * self.u_max * (x + 1.0)
        self.logwu = np.log(0.5 * w)  # weights of the uniform density on (0, u_max)
        self.ll = self.loglik(self.u)
        self.log_odds = math.log((1 - pi0) / pi0) + _lse(self.ll + self.logwu) - self.ll0

    def affiliations(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        r = np.exp(np.log(u)[:, None] * (self.e[None, :] / self.b))
        return np.minimum(r, AFFILIATION_CAP * self.gamma)

    def loglik(self, u):
        if self.e.size == 0:
            return np.zeros(np.atleast_1d(u).size)
        return _edge_logmass(self.g, self.s, self.affiliations(u), self.rho, self.gamma)

    @property
    def prob_positive(self):
        return _expit(self.log_odds)

    def eta_of(self, u):
        return -self.b / math.log(u)

    def u_of(self, eta):
        return math.exp(-self.b / eta)

    def sample(self, eta, rng):
        if rng.random() >= self.prob_positive:
            return 0.0
        if eta > 0.0:
            u0 = min(self.u_of(eta), self.u_max * (1 - 1e-12))
        else:
            lw = self.ll + self.logwu
            pr = np.exp(lw - _lse(lw))
            u0 = float(self.u[min(int(np.searchsorted(np.cumsum(pr), rng.random() * pr.sum())), pr.size - 1)])
        lf = lambda u: float(self.loglik(u)[0]) if 0.0 < u < self.u_max else -np.inf
        u1 = slice_sample(lf, u0, 0.1 * self.u_max, 0.0, self.u_max, rng)
        return self.eta_of(u1)


def update_eta_mixture(state, data, params, rng, nodes=128, sample=True):
    """Trans-dimensional eta move; returns the log conditional odds of eta > 0."""
    cond = EtaConditional(state.g, state.s, data.e, params, nodes=nodes)
    if sample:
        params.eta = cond.sample(params.eta, rng)
    return cond.log_odds


def _diff_partition(state):
    acts = state.active_tables()
    pdps = state.tab_pdp[acts]
    return [state.tab_n[acts[pdps == 1]], state.tab_n[acts[pdps == 3]]]


def d2_log_partition(parts, d, alpha2):
    return sum(log_eppf(c, d, alpha2) for c in parts)


def update_d2_mixture(state, params, rng, nodes=64):
    """Trans-dimensional d2 move between the DP point mass and U(0, 1)."""
    parts = _diff_partition(state)
    pi0 = params.priors.d2_point_mass
    x, w = gauss_legendre(nodes)
    dn = 0.5 * (x + 1.0)
    ll = sum(log_eppf_grid(c, dn, params.alpha2) for c in parts) + np.zeros(nodes)
    ll0 = d2_log_partition(parts, 0.0, params.alpha2)
    log_odds = math.log((1 - pi0) / pi0) + _lse(ll + np.log(0.5 * w)) - ll0
    if rng.random() >= _expit(log_odds):
        params.d2 = 0.0
        return log_odds
    if params.d2 > 0.0:
        d0 = params.d2
    else:
        lw = ll + np.log(w)
        pr = np.exp(lw - _lse(lw))
        d0 = float(dn[min(int(np.searchsorted(np.cumsum(pr), rng.random() * pr.sum())), nodes - 1)])
    lf = lambda d: d2_log_partition(parts, d, params.alpha2) if 0.0 < d < 1.0 else -np.inf
    params.d2 = slice_sample(lf, d0, 0.1, 0.0, 1.0, rng)
    return log_odds


# ---------------------------------------------------------------------------
# initialisation


def initial_params(data, s):
    v = _view(data)
    zb = v.zb
    tmeans = (v.onehot @ zb) / v.nt[:, None]
    resid = zb - tmeans[data.t - 1]
    return ModelHyperParams(
        rho=float(np.clip(np.mean(s == 2), 0.02, 0.5)),
        gamma=0.5,
        eta=0.0,
        d2=0.0,
        alpha1=1.0,
        alpha2=1.0,
        beta=1.0,
        mu_G=float(zb.mean()),
        tau2_G=float(max(np.var(tmeans), 1e-2)),
        sigma2=float(max(np.sum(resid ** 2) / max(resid.size - tmeans.size, 1), 1e-4)),
        tau2_eps=0.1,
    )


def initial_state(data, config, rng, params=None):
    """ANOVA-thresholded states, one table per occupied (g, s), atoms drawn from their conditional."""
    v = _view(data)
    try:
        pv = probe_pvalues(v.zb, data.t)
        s = np.where(pv < 0.05, 2, 1)
    except DomainError:
        s = np.ones(data.p, dtype=np.int64)
    if params is None:
        params = initial_params(data, s)
    H = config.H_G
    zeta = np.sort(rng.normal(params.mu_G, math.sqrt(params.tau2_G), size=H))
    V = rng.beta(1.0, params.beta, size=H)
    V[-1] = 1.0
    T = v.T
    atoms = {(1, 1, 0): [0] * T, (2, 2, 0): [0] + [1] * (T - 1), (1, 2, 0): [0] + [1] * (T - 1), (2, 1, 0): [0] * T}
    st = ChainState.from_labels(s, s, [0] * data.p, atoms, zeta, V, eps=np.zeros(data.n))
    update_atoms(st, data, params, rng, backend=config.backend, update_pool=False)
    return st, params


# ---------------------------------------------------------------------------
# trace


TRACE_SCALARS = (
    "q", "q1", "q2", "eta", "d2", "sigma2", "tau2_eps", "rho", "gamma", "beta",
    "mu_G", "tau2_G", "alpha1", "alpha2", "loglik", "eta_log_odds", "d2_log_odds",
)


class Trace:
    """Kept iterations of a chain.

    ``s_bits`` stores each snapshot's indicator ``s_j == 2`` packed eight
    probes per byte.  ``theta_sum``/``theta_count`` accumulate the probe
    effects over snapshots in which the probe is differential.
    """

    def __init__(self, p, T):
        self.p = p
        self.T = T
        self.iters = []
        self.scalars = {k: [] for k in TRACE_SCALARS}
        self.s_bits = []
        self.theta_sum = np.zeros((T, p))
        self.theta_count = np.zeros(p, dtype=np.int64)

    def __len__(self):
        return len(self.iters)

    def record(self, it, state, params, loglik, eta_log_odds, d2_log_odds):
        q1, q2 = state.q_by_state()
        vals = dict(q=state.q, q1=q1, q2=q2, loglik=loglik, eta_log_odds=eta_log_odds,
                    d2_log_odds=d2_log_odds)
        for k in TRACE_SCALARS:
            self.scalars[k].append(float(vals[k]) if k in vals else float(getattr(params, k)))
        self.iters.append(int(it))
        diff = state.s == 2
        self.s_bits.append(np.packbits(diff.astype(np.uint8)))
        self.theta_sum[:, diff] += state.theta()[:, diff]
        self.theta_count += diff

    def s_matrix(self):
        """(kept, p) array of states in {1, 2}."""
        if not self.s_bits:
            return np.zeros((0, self.p), dtype=np.int64)
        bits = np.unpackbits(np.vstack(self.s_bits), axis=1, count=self.p)
        return bits.astype(np.int64) + 1

    def column(self, name):
        return np.asarray(self.scalars[name], dtype=float)

    def theta_means(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.theta_sum / self.theta_count[None, :]

    def equals(self, other):
        if self.iters != other.iters or self.p != other.p:
            return False
        if any(self.scalars[k] != other.scalars[k] for k in TRACE_SCALARS):
            return False
        return (np.array_equal(self.s_matrix(), other.s_matrix())
                and np.array_equal(self.theta_sum, other.theta_sum)
                and np.array_equal(self.theta_count, other.theta_count))


# ---------------------------------------------------------------------------
# sampler


class Sampler:
    """Stateful chain; ``run`` advances it, ``checkpoint`` freezes it."""

    def __init__(self, data, config, params=None, state=None, rng=None):
        self.data = data
        self.config = config
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        if state is None:
            state, params = initial_state(data, config, self.rng, params)
        elif params is None:
            raise StateError("a supplied state needs supplied params")
        self.state = state
        self.params = params
        self.iteration = 0
        self.scales = dict(config.proposal_scales)
        self.accepts = {k: 0 for k in self.scales}
        self.window = 0
        self.trace = Trace(data.p, data.T)
        self.last_eta_log_odds = float("nan")
        self.last_d2_log_odds = float("nan")

    def _guard(self, name, *values):
        for v in values:
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite value after {name} update at iteration {self.iteration + 1}")

    def step(self):
        cfg = self.config
        fixed = set(cfg.fixed)
        st, pr, rng, data = self.state, self.params, self.rng, self.data
        update_allocation_sweep(st, data, pr, rng, backend=cfg.backend)
        if "atoms" not in fixed:
            update_atoms(st, data, pr, rng, backend=cfg.backend, update_pool="pool" not in fixed,
                         H_max=cfg.H_G_max)
            self._guard("atoms", st.zeta, st.V)
        if "eps" not in fixed:
            update_subject_effects(st, data, pr, rng, update_tau="tau2_eps" not in fixed)
            self._guard("subject-effect", st.eps, pr.tau2_eps)
        update_scalars(st, data, pr, rng, fixed=fixed, scales=self.scales, accepts=self.accepts)
        self._guard("scalar", pr.sigma2, pr.mu_G, pr.tau2_G, pr.beta, pr.alpha1, pr.alpha2, pr.rho, pr.gamma)
        if "eta" not in fixed:
            self.last_eta_log_odds = update_eta_mixture(st, data, pr, rng, nodes=cfg.eta_nodes)
            self._guard("eta", pr.eta, self.last_eta_log_odds)
        if "d2" not in fixed:
            self.last_d2_log_odds = update_d2_mixture(st, pr, rng, nodes=cfg.d2_nodes)
            self._guard("d2", pr.d2)
        self.iteration += 1
        if cfg.debug:
            st.check()
            pr.validate()
        if cfg.adapt and self.iteration <= cfg.burn_in:
            self._adapt()
        it = self.iteration
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            if "eta" in fixed:
                self.last_eta_log_odds = update_eta_mixture(st, data, pr, rng, nodes=cfg.eta_nodes, sample=False)
            ll = log_likelihood(st, data, pr)
            self._guard("log-likelihood", ll)
            self.trace.record(it, st, pr, ll, self.last_eta_log_odds, self.last_d2_log_odds)

    def _adapt(self, every=50, target=0.44):
        if self.iteration % every:
            return
        self.window += 1
        step = min(0.5, 1.0 / math.sqrt(self.window))
        for k in self.scales:
            rate = self.accepts.get(k, 0) / every
            self.scales[k] = float(min(max(self.scales[k] * math.exp(step * (rate - target)), 1e-3), 50.0))
            self.accepts[k] = 0

    def checkpoint(self):
        return sampler_to_bytes(self)

    @classmethod
    def from_checkpoint(cls, blob, data, n_iter=None):
        return sampler_from_bytes(blob, data, n_iter=n_iter)

    def run(self, until=None, progress=None):
        until = self.config.n_iter if until is None else min(until, self.config.n_iter)
        while self.iteration < until:
            self.step()
            if progress is not None:
                progress(self)
        return self.trace


def run_chain(data, config, init_strategy="anova", params=None, state=None):
    """Run a full chain and return its Trace."""
    if init_strategy != "anova" and state is None:
        raise DomainError(f"unknown init strategy {init_strategy!r}")
    return Sampler(data, config, params=params, state=state).run()


# ---------------------------------------------------------------------------
# checkpointing

_STATE_FIELDS = ("g", "s", "tab", "tab_pdp", "tab_n", "tab_atom", "active", "pos", "nact",
                 "pdp_n", "pdp_K", "zeta", "V", "eps")


def data_fingerprint(data):
    h = hashlib.sha256()
    for a in (data.z, data.t, data.e, data.b):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def sampler_to_bytes(sm):
    arrays = {f"state.{k}": getattr(sm.state, k) for k in _STATE_FIELDS}
    tr = sm.trace
    arrays["trace.iters"] = np.asarray(tr.iters, dtype=np.int64)
    for k in TRACE_SCALARS:
        arrays[f"trace.{k}"] = np.asarray(tr.scalars[k], dtype=float)
    nbytes = (tr.p + 7) // 8
    arrays["trace.s_bits"] = np.vstack(tr.s_bits) if tr.s_bits else np.zeros((0, nbytes), np.uint8)
    arrays["trace.theta_sum"] = tr.theta_sum
    arrays["trace.theta_count"] = tr.theta_count
    meta = {
        "config": sm.config.to_dict(),
        "params": sm.params.to_dict(),
        "iteration": sm.iteration,
        "scales": sm.scales,
        "accepts": sm.accepts,
        "window": sm.window,
        "rng": sm.rng.bit_generator.state,
        "last_log_odds": [sm.last_eta_log_odds, sm.last_d2_log_odds],
        "data": data_fingerprint(sm.data),
    }
    return checkpoint.encode(arrays, meta)


def sampler_from_bytes(blob, data, n_iter=None):
    """Rebuild a Sampler from ``sampler_to_bytes`` output; ``n_iter`` may extend the run."""
    arrays, meta = checkpoint.decode(blob)
    if meta["data"] != data_fingerprint(data):
        raise StateError("checkpoint was written for a different dataset")
    cfg = SamplerConfig.from_dict(meta["config"])
    if n_iter is not None:
        cfg.n_iter = int(n_iter)
        cfg.validate()
    state = ChainState(**{k: arrays[f"state.{k}"] for k in _STATE_FIELDS})
    params = ModelHyperParams.from_dict(meta["params"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    sm = Sampler(data, cfg, params=params, state=state, rng=rng)
    sm.iteration = int(meta["iteration"])
    sm.scales = {k: float(v) for k, v in meta["scales"].items()}
    sm.accepts = {k: int(v) for k, v in meta["accepts"].items()}
    sm.window = int(meta["window"])
    sm.last_eta_log_odds, sm.last_d2_log_odds = (float(x) for x in meta["last_log_odds"])
    tr = sm.trace
    tr.iters = arrays["trace.iters"].tolist()
    for k in TRACE_SCALARS:
        tr.scalars[k] = arrays[f"trace.{k}"].tolist()
    tr.s_bits = list(arrays["trace.s_bits"])
    tr.theta_sum = arrays["trace.theta_sum"]
    tr.theta_count = arrays["trace.theta_count"]
    return sm
