"""Per-probe frequentist baselines and ROC evaluation."""
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import rankdata

from .errors import DomainError, InputError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _groups(column, t):
    column = np.asarray(column, dtype=float)
    t = np.asarray(t)
    if column.shape != t.shape:
        raise DomainError("values and labels must have equal length")
    labels = np.unique(t)
    return column, t, labels


def f_statistic(column, t):
    """One-way ANOVA F and its degrees of freedom (df_between, df_within)."""
    column, t, labels = _groups(column, t)
    k = labels.size
    N = column.size
    sizes = np.array([np.count_nonzero(t == g) for g in labels])
    if k < 2 or np.any(sizes < 2) or N <= k:
        raise DomainError("ANOVA needs >= 2 groups with >= 2 observations each")
    grand = column.mean()
    means = np.array([column[t == g].mean() for g in labels])
    ssb = float(np.sum(sizes * (means - grand) ** 2))
    ssw = float(sum(np.sum((column[t == g] - m) ** 2) for g, m in zip(labels, means)))
    df1, df2 = k - 1, N - k
    if ssw == 0.0:
        return (0.0 if ssb == 0.0 else np.inf), df1, df2
    return (ssb / df1) / (ssw / df2), df1, df2


def anova_pvalue(column, t):
    """Upper-tail F probability via the regularised incomplete beta function."""
    F, df1, df2 = f_statistic(column, t)
    if F == 0.0:
        return 1.0
    if np.isinf(F):
        return 0.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * F)))


def kruskal_wallis(column, t):
    """Tie-corrected Kruskal-Wallis H and its p-value (chi-square, k - 1 df)."""
    column, t, labels = _groups(column, t)
    k = labels.size
    N = column.size
    sizes = np.array([np.count_nonzero(t == g) for g in labels])
    if k < 2 or np.any(sizes < 1) or N <= k:
        raise DomainError("Kruskal-Wallis needs >= 2 non-empty groups")
    ranks = rankdata(column)
    rsum = np.array([ranks[t == g].sum() for g in labels])
    H = 12.0 / (N * (N + 1)) * np.sum(rsum ** 2 / sizes) - 3.0 * (N + 1)
    _, tie_counts = np.unique(column, return_counts=True)
    corr = 1.0 - np.sum(tie_counts ** 3 - tie_counts) / (N ** 3 - N)
    if corr <= 0.0:
        return 0.0, 1.0
    H /= corr
    H = max(H, 0.0)
    return float(H), float(special.gammaincc((k - 1) / 2.0, H / 2.0))


def kruskal_wallis_pvalue(column, t):
    return kruskal_wallis(column, t)[1]


def probe_pvalues(z, t, method="anova"):
    fn = {"anova": anova_pvalue, "kruskal": kruskal_wallis_pvalue}[method]
    return np.array([fn(z[:, j], t) for j in range(z.shape[1])])


# ---------------------------------------------------------------------------
# ROC


def _roc_counts(scores, positive):
    """Cumulative (fp, tp) integer counts at each distinct threshold, plus N and P."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape:
        raise InputError("scores and truth must have equal length")
    P = int(positive.sum())
    N = positive.size - P
    if P == 0 or N == 0:
        raise InputError("ROC needs both differential and non-differential probes")
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    pos_sorted = positive[order]
    tp = np.cumsum(pos_sorted)
    fp = np.cumsum(~pos_sorted)
    last_of_tie = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    return np.r_[0, fp[last_of_tie]], np.r_[0, tp[last_of_tie]], N, P


def roc_points(scores, positive):
    """ROC vertices sweeping a threshold over distinct scores (ties enter together)."""
    fp, tp, N, P = _roc_counts(scores, positive)
    return fp / N, tp / P


def exact_auc(scores, positive):
    """Full trapezoidal AUC from integer counts, so it is exactly (2 C + ties) / (2 P N)."""
    fp, tp, N, P = _roc_counts(scores, positive)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * P * N)


def partial_auc(fpr, tpr, max_fpr):
    """Area under the ROC polyline for FPR in [0, max_fpr], interpolating at the cutoff."""
    fpr = np.asarray(fpr)
    tpr = np.asarray(tpr)
    keep = fpr <= max_fpr
    x = fpr[keep]
    y = tpr[keep]
    if x[-1] < max_fpr:
        i = int(np.searchsorted(fpr, max_fpr, side="right"))
        x0, x1, y0, y1 = fpr[i - 1], fpr[i], tpr[i - 1], tpr[i]
        y_cut = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0)
        x = np.r_[x, max_fpr]
        y = np.r_[y, y_cut]
    return float(_trapezoid(y, x))


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    auc20: float
    auc10: float
    scores: np.ndarray = field(default=None, repr=False)


def roc_and_auc(scores, truth):
    """ROC curve and the AUC family for detection scores against true states.

    ``truth`` holds states in {1, 2} (2 = differential).  ``auc20``/``auc10``
    are the areas over FPR <= 0.2 / 0.1 rescaled by 5 / 10.
    """
    truth = np.asarray(truth)
    fpr, tpr = roc_points(scores, truth == 2)
    return RocResult(
        fpr=fpr,
        tpr=tpr,
        auc=exact_auc(scores, truth == 2),
        auc20=5.0 * partial_auc(fpr, tpr, 0.2),
        auc10=10.0 * partial_auc(fpr, tpr, 0.1),
        scores=np.asarray(scores, dtype=float),
    )


def concordance_auc(scores, truth):
    """Mann-Whitney pair-counting AUC (ties count one half)."""
    scores = np.asarray(scores, dtype=float)
    pos = scores[np.asarray(truth) == 2]
    neg = scores[np.asarray(truth) != 2]
    diff = pos[:, None] - neg[None, :]
    return int(2 * np.sum(diff > 0) + np.sum(diff == 0)) / (2 * diff.size)


def vertical_average(rocs, grid=None):
    """Mean TPR of several ROC curves on a common FPR grid."""
    grid = np.linspace(0.0, 1.0, 201) if grid is None else np.asarray(grid)
    tprs = []
    for r in rocs:
        # at a vertical segment np.interp returns the upper end
        tprs.append(np.interp(grid, r.fpr, r.tpr))
    return grid, np.mean(tprs, axis=0)
