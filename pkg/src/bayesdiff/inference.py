"""Posterior summaries: differential probabilities, FDR selection, Bayes factor bounds."""
from dataclasses import dataclass
import math

import numpy as np
from scipy import stats

from .errors import DomainError, QueryError, StateError


def posterior_diff_prob(s_draws):
    """Fraction of draws with s_j == 2 for each probe; ``s_draws`` is (draws, p) or a Trace."""
    if hasattr(s_draws, "s_matrix"):
        s_draws = s_draws.s_matrix()
    s_draws = np.asarray(s_draws)
    if s_draws.ndim != 2 or s_draws.shape[0] == 0:
        raise StateError("need a non-empty (draws, p) array of states")
    return np.mean(s_draws == 2, axis=0)


@dataclass
class FdrSelection:
    selected: np.ndarray
    n_selected: int
    order: np.ndarray
    fdr_curve: np.ndarray
    q0: float

    @property
    def estimated_fdr(self):
        return 0.0 if self.n_selected == 0 else float(self.fdr_curve[self.n_selected - 1])


def bayes_fdr_select(omega, q0=0.05):
    """Largest top-b set (by descending probability) whose mean null probability is < q0."""
    omega = np.asarray(omega, dtype=float)
    if not 0.0 < q0 < 1.0:
        raise DomainError(f"q0 must lie in (0, 1), got {q0}")
    if omega.ndim != 1 or np.any((omega < 0) | (omega > 1)):
        raise DomainError("probabilities must be a vector in [0, 1]")
    order = np.argsort(-omega, kind="stable")
    curve = np.cumsum(1.0 - omega[order]) / np.arange(1, omega.size + 1)
    ok = np.flatnonzero(curve < q0)
    b = int(ok[-1]) + 1 if ok.size else 0
    selected = np.zeros(omega.size, dtype=bool)
    selected[order[:b]] = True
    return FdrSelection(selected, b, order, curve, q0)


def false_discovery_proportion(selected, truth):
    selected = np.asarray(selected, dtype=bool)
    if not selected.any():
        return 0.0
    return float(np.mean(np.asarray(truth)[selected] != 2))


def batch_means_ci(x, n_batches=20, level=0.95):
    """Mean and batch-means confidence interval of a correlated series."""
    x = np.asarray(x, dtype=float)
    n_batches = min(n_batches, x.size)
    if n_batches < 2:
        m = float(x.mean()) if x.size else float("nan")
        return m, float("nan"), float("nan")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    m = float(x.mean())
    half = stats.t.ppf(0.5 + level / 2, n_batches - 1) * means.std(ddof=1) / math.sqrt(n_batches)
    return m, m - half, m + half


FAVORED = ("eta_positive", "eta_zero")
CLIP_EPS = 1e-12


@dataclass
class BayesFactorBound:
    value: float
    favored: str
    ci: tuple
    n_draws: int
    n_clipped: int = 0
    interval_method: str = "batch-means (20 batches, t quantile)"


def logbf_lower_bound(source, favored="eta_positive", eps=CLIP_EPS):
    """Jensen lower bound on the log Bayes factor of one eta component against the other.

    ``source`` is a Trace (its logged conditional log-odds of eta > 0 are used
    directly, so no clipping is needed) or a vector of conditional
    probabilities P[eta > 0 | rest], which are clipped into [eps, 1 - eps].
    The bound for ``eta_zero`` is the negative of the one for ``eta_positive``.
    """
    if favored not in FAVORED:
        raise DomainError(f"favored must be one of {FAVORED}")
    n_clipped = 0
    if hasattr(source, "column"):
        lo = source.column("eta_log_odds")
        if lo.size == 0 or np.any(np.isnan(lo)):
            raise StateError("trace holds no logged eta conditionals")
    else:
        prob = np.asarray(source, dtype=float)
        if prob.size == 0 or np.any(np.isnan(prob)):
            raise StateError("no logged eta conditionals")
        clipped = np.clip(prob, eps, 1.0 - eps)
        n_clipped = int(np.count_nonzero(clipped != prob))
        lo = np.log(clipped) - np.log1p(-clipped)
    if favored == "eta_zero":
        lo = -lo
    m, a, b = batch_means_ci(lo)
    return BayesFactorBound(m, favored, (a, b), int(lo.size), n_clipped)


@dataclass
class PairwiseContrast:
    probe: int
    pair: tuple
    difference: float
    degenerate: bool

    @property
    def higher(self):
        """Treatment with the larger posterior mean (None when degenerate)."""
        if self.degenerate:
            return None
        return self.pair[1] if self.difference > 0 else self.pair[0]


def pairwise_effect_summary(theta_sum, theta_count, detected):
    """Largest posterior-mean treatment contrast for each detected probe.

    Means use only the draws where the probe was differential.  Pairs are
    1-based ``(t, t')`` with ``t < t'``; ``difference = mean[t'] - mean[t]``;
    argmax ties go to the lexicographically first pair.  Returns a dict
    keyed by 0-based probe index.
    """
    theta_sum = np.asarray(theta_sum, dtype=float)
    count = np.asarray(theta_count)
    T = theta_sum.shape[0]
    iu, ju = np.triu_indices(T, k=1)  # lexicographic pair order
    out = {}
    for j in np.flatnonzero(np.asarray(detected, dtype=bool)):
        if count[j] == 0:
            out[int(j)] = PairwiseContrast(int(j), (0, 0), float("nan"), True)
            continue
        mean = theta_sum[:, j] / count[j]
        d = mean[ju] - mean[iu]
        k = int(np.argmax(np.abs(d)))
        out[int(j)] = PairwiseContrast(int(j), (int(iu[k]) + 1, int(ju[k]) + 1), float(d[k]), bool(d[k] == 0))
    return out


def contrast_for(contrasts, j):
    if j not in contrasts:
        raise QueryError(f"probe {j} was not detected")
    return contrasts[j]


@dataclass
class PosteriorSummary:
    omega: np.ndarray
    fdr_curve: np.ndarray
    b_star: int
    detected: np.ndarray
    logbf_bound: BayesFactorBound
    pairwise: dict
    q0: float


def summarize(trace, q0=0.05):
    omega = posterior_diff_prob(trace)
    sel = bayes_fdr_select(omega, q0)
    lo = trace.column("eta_log_odds")
    bound = logbf_lower_bound(trace, "eta_positive" if lo.mean() >= 0 else "eta_zero")
    pairs = pairwise_effect_summary(trace.theta_sum, trace.theta_count, sel.selected)
    return PosteriorSummary(omega, sel.fdr_curve, sel.n_selected, sel.selected, bound, pairs, q0)


def split_rhat(chains):
    """Split-chain potential scale reduction for a list of equal-length 1-D draws."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = c.size // 2
        if h < 2:
            return float("nan")
        halves += [c[:h], c[h: 2 * h]]
    x = np.vstack(halves)
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))
