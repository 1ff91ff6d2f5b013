"""Core types and closed-form mathematics of the two-group / two-state Sticky PDP.

Groups ``g`` and states ``s`` take values in {1, 2}; state 1 is the
non-differential state (all treatment effects equal), state 2 the
differential one.
"""
from dataclasses import dataclass, field, asdict, fields
import math

import numpy as np

from .errors import DomainError, InputError, InvariantError, StateError

TRANSFORMS = ("identity", "logit", "log1p")

# Upper bound on r/gamma used by the sampler and simulator. exp(-e/eta) can
# exceed gamma on very short gaps even when eta < -1/log(gamma); capping keeps
# the group mass function valid without making any transition absorbing.
AFFILIATION_CAP = 0.95


# ---------------------------------------------------------------------------
# transforms


def apply_transform(x, kind="identity"):
    """Elementwise platform transform ``z(x)``."""
    x = np.asarray(x, dtype=float)
    if kind == "identity":
        return x.copy()
    if kind == "logit":
        bad = ~((x > 0.0) & (x < 1.0))
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DomainError(f"logit transform needs 0 < x < 1; x{list(idx)} = {x[idx]!r}")
        return np.log(x) - np.log1p(-x)
    if kind == "log1p":
        bad = ~(x >= 0.0)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DomainError(f"log1p transform needs x >= 0; x{list(idx)} = {x[idx]!r}")
        return np.log1p(x)
    raise DomainError(f"unknown transform {kind!r}")


def inverse_transform(z, kind="identity"):
    z = np.asarray(z, dtype=float)
    if kind == "identity":
        return z.copy()
    if kind == "logit":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "log1p":
        return np.expm1(z)
    raise DomainError(f"unknown transform {kind!r}")


def scale_distances(gaps):
    gaps = np.asarray(gaps, dtype=float)
    if gaps.ndim != 1 or gaps.size == 0:
        raise InputError("need at least one inter-probe distance")
    if not np.all(np.isfinite(gaps)) or np.any(gaps <= 0):
        raise InputError("inter-probe distances must be finite and > 0")
    return gaps / gaps.sum()


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Dataset:
    """Measurements on ``n`` samples x ``p`` probes with treatment labels.

    ``e`` holds the ``p - 1`` gaps scaled to sum to one; ``raw_gaps`` keeps
    them in original units for reporting.
    """

    x: np.ndarray
    t: np.ndarray
    e: np.ndarray
    b: np.ndarray = None
    transform_kind: str = "identity"
    z: np.ndarray = None
    raw_gaps: np.ndarray = None
    probe_ids: list = None
    sample_ids: list = None
    positions: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise InputError("x must be an n x p matrix")
        n, p = self.x.shape
        if p < 2:
            raise InputError(f"need p >= 2 probes, got {p}")
        if not np.all(np.isfinite(self.x)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(self.x))[0])
            raise InputError(f"non-finite measurement at (row, col) = {bad}")
        t = np.asarray(self.t)
        if t.shape != (n,) or not np.all(np.equal(np.mod(t, 1), 0)):
            raise InputError("t must be n integer treatment labels")
        self.t = t.astype(np.int64)
        T = int(self.t.max())
        if self.t.min() < 1 or len(np.unique(self.t)) != T:
            raise InputError("treatment labels must cover 1..T with every label present")
        if T < 2:
            raise InputError("differential analysis needs T >= 2 treatments")
        if self.transform_kind not in TRANSFORMS:
            raise InputError(f"unknown transform {self.transform_kind!r}")
        if self.raw_gaps is None:
            self.raw_gaps = np.asarray(self.e, dtype=float).copy()
        self.raw_gaps = np.asarray(self.raw_gaps, dtype=float)
        if self.raw_gaps.shape != (p - 1,):
            raise InputError(f"expected {p - 1} inter-probe distances, got {self.raw_gaps.size}")
        self.e = scale_distances(self.raw_gaps)
        self.b = np.zeros(n) if self.b is None else np.asarray(self.b, dtype=float)
        if self.b.shape != (n,):
            raise InputError("b must have one offset per sample")
        if self.z is None:
            self.z = apply_transform(self.x, self.transform_kind)
        self.z = np.asarray(self.z, dtype=float)
        if self.probe_ids is None:
            self.probe_ids = [f"probe{j + 1}" for j in range(p)]
        if self.sample_ids is None:
            self.sample_ids = [f"sample{i + 1}" for i in range(n)]
        if len(self.probe_ids) != p or len(self.sample_ids) != n:
            raise InputError("id lists do not match matrix shape")
        if self.positions is None:
            self.positions = np.concatenate([[0.0], np.cumsum(self.raw_gaps)])

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def T(self):
        return int(self.t.max())

    @classmethod
    def from_positions(cls, x, t, positions, **kw):
        positions = np.asarray(positions, dtype=float)
        gaps = np.diff(positions)
        if np.any(gaps <= 0):
            j = int(np.argmax(gaps <= 0))
            raise InputError(f"probe positions must be strictly increasing (probe {j + 2})")
        return cls(x=x, t=t, e=gaps, raw_gaps=gaps, positions=positions, **kw)


@dataclass
class PriorSettings:
    """Hyperpriors for the sampled scalars (shape, rate pairs)."""

    sigma2_ig: tuple = (2.0, 1.0)
    tau2_eps_ig: tuple = (2.0, 1.0)
    tau2_G_ig: tuple = (2.0, 1.0)
    mu_G_normal: tuple = (0.0, 10.0)  # mean, variance
    alpha_gamma: tuple = (1.0, 1.0)
    beta_gamma: tuple = (1.0, 1.0)
    eta_point_mass: float = 0.5
    d2_point_mass: float = 0.5


@dataclass
class ModelHyperParams:
    rho: float = 0.1
    gamma: float = 0.9
    eta: float = 0.0
    d2: float = 0.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    beta: float = 1.0
    mu_G: float = 0.0
    tau2_G: float = 1.0
    sigma2: float = 1.0
    tau2_eps: float = 0.1
    d1: float = 0.0
    priors: PriorSettings = field(default_factory=PriorSettings)

    @property
    def rho_prime(self):
        return 1.0 - self.rho

    def eta_upper(self):
        """Truncation point ``-1/log(gamma)`` of the eta prior (inf when gamma == 1)."""
        return math.inf if self.gamma >= 1.0 else -1.0 / math.log(self.gamma)

    def validate(self):
        if not 0.0 < self.rho < 1.0:
            raise InvariantError(f"rho={self.rho} outside (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise InvariantError(f"gamma={self.gamma} outside (0, 1]")
        if self.eta < 0.0:
            raise InvariantError(f"eta={self.eta} < 0")
        if self.eta > 0.0 and self.gamma < 1.0 and not self.eta < self.eta_upper():
            raise InvariantError(f"eta={self.eta} violates eta < -1/log(gamma)={self.eta_upper()}")
        if self.d1 != 0.0:
            raise InvariantError("d1 is fixed at 0")
        if not 0.0 <= self.d2 < 1.0:
            raise InvariantError(f"d2={self.d2} outside [0, 1)")
        for name in ("alpha1", "alpha2", "beta", "tau2_G", "sigma2", "tau2_eps"):
            if not getattr(self, name) > 0.0:
                raise InvariantError(f"{name} must be > 0")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        pri = d.pop("priors", None)
        pri = PriorSettings(**{k: tuple(v) if isinstance(v, list) else v for k, v in pri.items()}) if pri else PriorSettings()
        names = {f.name for f in fields(cls)}
        return cls(priors=pri, **{k: v for k, v in d.items() if k in names})


def state_of_effects(theta):
    """Differential state of a T-vector of effects: 1 if all equal else 2."""
    theta = np.asarray(theta)
    return 1 if np.all(theta == theta[0]) else 2


@dataclass(frozen=True)
class AtomValue:
    value: np.ndarray
    state: int

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        object.__setattr__(self, "value", v)
        if self.state not in (1, 2) or state_of_effects(v) != self.state:
            raise InvariantError(f"atom {v} is inconsistent with declared state {self.state}")


@dataclass
class PsiPool:
    """Truncated discrete distribution G: support values and weights."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.values.shape != self.weights.shape or self.values.ndim != 1:
            raise StateError("pool values and weights must be 1-d arrays of equal length")

    @classmethod
    def from_pairs(cls, pairs):
        vals, wts = zip(*pairs) if pairs else ((), ())
        return cls(np.array(vals, dtype=float), np.array(wts, dtype=float))

    @classmethod
    def draw(cls, beta, mu, tau2, H, rng):
        """Realize ``G ~ DP(beta, N(mu, tau2))`` truncated at ``H`` atoms."""
        w = stick_weights(0.0, beta, H, rng)
        return cls(rng.normal(mu, math.sqrt(tau2), size=H), w)

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------------------
# transition algebra


def affiliation(e_prev, eta):
    """``exp(-e/eta)`` for eta > 0, 0 when eta == 0."""
    if not e_prev > 0:
        raise DomainError(f"distance must be positive, got {e_prev}")
    if eta < 0:
        raise DomainError(f"range parameter must be >= 0, got {eta}")
    if eta == 0:
        return 0.0
    return math.exp(-e_prev / eta)


def _check_rho_gamma(rho, gamma):
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")


def state_mass(g, rho, gamma):
    """(Q_g(1), Q_g(2)): state probabilities inside group ``g``."""
    _check_rho_gamma(rho, gamma)
    rp = 1.0 - rho
    if g == 1:
        q1 = rp + rho * gamma
    elif g == 2:
        q1 = rp - rp * gamma
    else:
        raise DomainError(f"group must be 1 or 2, got {g}")
    return q1, 1.0 - q1


def group_mass(s_prev, r, rho, gamma):
    """(F*(1), F*(2)): next-group probabilities given the previous state."""
    _check_rho_gamma(rho, gamma)
    if not 0.0 <= r < 1.0:
        raise DomainError(f"affiliation must lie in [0, 1), got {r}")
    ratio = r / gamma
    if ratio >= 1.0:
        raise InvariantError(f"r/gamma = {ratio} >= 1; group mass undefined")
    rp = 1.0 - rho
    if s_prev == 1:
        f1 = rp + rho * ratio
    elif s_prev == 2:
        f1 = rp - rp * ratio
    else:
        raise DomainError(f"state must be 1 or 2, got {s_prev}")
    return f1, 1.0 - f1


def persistence_prob(s, r, rho):
    """P(s_j = s | s_{j-1} = s) for affiliation ``r``."""
    if not 0.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    if not 0.0 <= r < 1.0:
        raise DomainError(f"affiliation must lie in [0, 1), got {r}")
    if s == 1:
        return (1.0 - rho) + rho * r
    if s == 2:
        return rho + (1.0 - rho) * r
    raise DomainError(f"state must be 1 or 2, got {s}")


def effective_affiliations(e, eta, gamma):
    """Vector of affiliations for the gaps ``e``, capped at ``AFFILIATION_CAP * gamma``."""
    e = np.asarray(e, dtype=float)
    if eta <= 0.0:
        return np.zeros_like(e)
    return np.minimum(np.exp(-e / eta), AFFILIATION_CAP * gamma)


def log_transition_tables(r, rho, gamma):
    """Log mass tables used by the sampler.

    Returns ``logF0[g]``, ``logQ[g, s]`` and ``logF[j, s_prev, g]`` (0-based
    labels), where row ``j`` of ``logF`` is the edge into probe ``j + 1``.
    """
    r = np.asarray(r, dtype=float)
    rp = 1.0 - rho
    logF0 = np.log([rp, rho])
    q11 = rp + rho * gamma
    q21 = rp - rp * gamma
    with np.errstate(divide="ignore"):
        logQ = np.log(np.array([[q11, 1.0 - q11], [q21, 1.0 - q21]]))
        ratio = r / gamma
        f1_s1 = rp + rho * ratio
        f1_s2 = rp - rp * ratio
        logF = np.empty((r.size, 2, 2))
        logF[:, 0, 0] = np.log(f1_s1)
        logF[:, 0, 1] = np.log1p(-f1_s1)
        logF[:, 1, 0] = np.log(f1_s2)
        logF[:, 1, 1] = np.log1p(-f1_s2)
    return logF0, logQ, logF


def transition_loglik(g, s, r, rho, gamma):
    """Log prior probability of label sequences ``g``, ``s`` (values in {1, 2})."""
    g = np.asarray(g) - 1
    s = np.asarray(s) - 1
    logF0, logQ, logF = log_transition_tables(r, rho, gamma)
    out = logF0[g[0]] + logQ[g, s].sum()
    if g.size > 1:
        out += logF[np.arange(g.size - 1), s[:-1], g[1:]].sum()
    return float(out)


# ---------------------------------------------------------------------------
# stick breaking and atoms


def weights_from_sticks(V):
    """Stick-breaking weights; the last component absorbs the remaining mass."""
    V = np.asarray(V, dtype=float).copy()
    V[-1] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rest = np.concatenate([[0.0], np.cumsum(np.log1p(-np.minimum(V[:-1], 1.0)))])
        w = V * np.exp(log_rest)
    w[~np.isfinite(w)] = 0.0
    return w


def stick_weights(d, alpha, H, rng):
    """Draw ``H`` truncated PDP stick-breaking weights with discount ``d`` and mass ``alpha``."""
    if not 0.0 <= d < 1.0:
        raise DomainError(f"discount must lie in [0, 1), got {d}")
    if not alpha > -d:
        raise DomainError(f"mass must exceed -d, got alpha={alpha}, d={d}")
    if H < 1:
        raise DomainError("truncation level must be >= 1")
    h = np.arange(1, H + 1)
    V = rng.beta(1.0 - d, alpha + h * d)
    return weights_from_sticks(V)


def sample_nondiff_atom(pool, rng, T=2):
    """Draw ``psi ~ G`` and return the all-equal atom ``psi * 1``."""
    if len(pool) == 0:
        raise StateError("empty psi pool")
    u = rng.choice(len(pool), p=pool.weights / pool.weights.sum())
    return AtomValue(np.full(T, pool.values[u]), 1)


def sample_diff_atom(pool, T, rng, max_tries=100_000):
    """Draw T coordinates iid from G, redrawing until not all are equal."""
    if T < 2:
        raise DomainError("differential atoms need T >= 2")
    if np.unique(pool.values[pool.weights > 0]).size < 2:
        raise StateError("pool needs >= 2 support points with positive weight")
    w = pool.weights / pool.weights.sum()
    for _ in range(max_tries):
        vals = pool.values[rng.choice(len(pool), size=T, p=w)]
        if np.any(vals != vals[0]):
            return AtomValue(vals, 2)
    raise StateError("differential atom rejection sampler did not terminate")
