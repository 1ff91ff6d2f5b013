"""Synthetic datasets drawn from the generative model."""
from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .errors import DomainError, InputError
from .mcmc import pdp_predictive_weights
from .model import (
    Dataset,
    ModelHyperParams,
    apply_transform,
    effective_affiliations,
    inverse_transform,
    log_transition_tables,
    scale_distances,
    weights_from_sticks,
)

DISTANCE_MODELS = ("lognormal_mimic", "uniform", "from_file")

# the four simulation scenarios: (sigma2, eta)
SCENARIOS = {
    "low_noise_high_corr": (0.64, 0.004),
    "low_noise_no_corr": (0.64, 0.0),
    "high_noise_high_corr": (1.44, 0.004),
    "high_noise_no_corr": (1.44, 0.0),
}


def reference_params(sigma2=0.64, eta=0.004):
    """Hyperparameters of the reference simulation study for a given noise and range."""
    return ModelHyperParams(
        rho=0.1, gamma=0.9, eta=eta, d2=0.33, alpha1=20.0, alpha2=20.0, beta=20.0,
        mu_G=0.0, tau2_G=1.0, sigma2=sigma2, tau2_eps=0.35 ** 2,
    )


@dataclass
class SimSpec:
    p: int = 500
    T: int = 5
    n_per_treatment: int = 4
    params: ModelHyperParams = field(default_factory=reference_params)
    distance_model: str = "lognormal_mimic"
    log_gap_sd: float = 1.0
    distances: np.ndarray = None
    H_G: int = 200
    transform: str = "identity"

    def __post_init__(self):
        if self.p < 2 or self.T < 2 or self.n_per_treatment < 1:
            raise DomainError("need p >= 2, T >= 2 and at least one sample per treatment")
        if self.distance_model not in DISTANCE_MODELS:
            raise DomainError(f"unknown distance model {self.distance_model!r}")
        if self.distance_model == "from_file":
            if self.distances is None or len(self.distances) != self.p - 1:
                raise InputError("from_file distances need exactly p - 1 gaps")
        self.params.validate()

    @classmethod
    def scenario(cls, name, **kw):
        sigma2, eta = SCENARIOS[name]
        return cls(params=reference_params(sigma2, eta), **kw)

    def to_dict(self):
        d = asdict(self)
        d["params"] = self.params.to_dict()
        if self.distances is not None:
            d["distances"] = np.asarray(self.distances, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["params"] = ModelHyperParams.from_dict(d["params"])
        if d.get("distances") is not None:
            d["distances"] = np.asarray(d["distances"], dtype=float)
        return cls(**d)


@dataclass
class SimTruth:
    g: np.ndarray
    s: np.ndarray
    allocation: np.ndarray
    theta: np.ndarray
    eps: np.ndarray
    pool_values: np.ndarray
    pool_weights: np.ndarray
    raw_gaps: np.ndarray

    @property
    def diff_fraction(self):
        return float(np.mean(self.s == 2))


def generate_distances(spec, rng):
    if spec.distance_model == "uniform":
        return np.ones(spec.p - 1)
    if spec.distance_model == "from_file":
        return np.asarray(spec.distances, dtype=float)
    return np.exp(spec.log_gap_sd * rng.standard_normal(spec.p - 1))


def replicate_rngs(seed, n):
    """Independent generators for ``n`` replicates of a study."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _markov_labels(p, r, rho, gamma, rng):
    logF0, logQ, logF = log_transition_tables(r, rho, gamma)
    F0, Q, F = np.exp(logF0), np.exp(logQ), np.exp(logF)
    g = np.empty(p, dtype=np.int64)
    s = np.empty(p, dtype=np.int64)
    u = rng.random((p, 2))
    g[0] = 1 + int(u[0, 0] >= F0[0])
    for j in range(p):
        if j > 0:
            g[j] = 1 + int(u[j, 0] >= F[j - 1, s[j - 1] - 1, 0])
        s[j] = 1 + int(u[j, 1] >= Q[g[j] - 1, 0])
    return g, s


def simulate_dataset(spec, rng):
    """Draw one dataset and its ground truth; returns ``(Dataset, SimTruth)``."""
    pr = spec.params
    p, T = spec.p, spec.T
    raw = generate_distances(spec, rng)
    e = scale_distances(raw)
    r = effective_affiliations(e, pr.eta, pr.gamma)
    V = rng.beta(1.0, pr.beta, size=spec.H_G)
    w = weights_from_sticks(V)
    zeta = rng.normal(pr.mu_G, math.sqrt(pr.tau2_G), size=spec.H_G)
    g, s = _markov_labels(p, r, pr.rho, pr.gamma, rng)

    tables = {pdp: [] for pdp in range(4)}  # each entry: [count, atom values]
    alloc = np.empty(p, dtype=np.int64)
    theta = np.empty((T, p))
    n_tables = 0
    ids = {}
    for j in range(p):
        pdp = 2 * (g[j] - 1) + (s[j] - 1)
        d, alpha = (0.0, pr.alpha1) if s[j] == 1 else (pr.d2, pr.alpha2)
        tabs = tables[pdp]
        if tabs:
            probs = pdp_predictive_weights([t[0] for t in tabs], d, alpha)
            k = int(rng.choice(len(probs), p=probs))
        else:
            k = 0
        if k == len(tabs):
            if s[j] == 1:
                vals = np.full(T, zeta[rng.choice(spec.H_G, p=w)])
            else:
                while True:
                    idx = rng.choice(spec.H_G, size=T, p=w)
                    if np.any(idx != idx[0]):
                        break
                vals = zeta[idx]
            tabs.append([0, vals])
            ids[(pdp, k)] = n_tables
            n_tables += 1
        tabs[k][0] += 1
        theta[:, j] = tabs[k][1]
        alloc[j] = ids[(pdp, k)]

    t = np.repeat(np.arange(1, T + 1), spec.n_per_treatment)
    n = t.size
    eps = rng.normal(0.0, math.sqrt(pr.tau2_eps), size=n)
    z = eps[:, None] + theta[t - 1] + rng.normal(0.0, math.sqrt(pr.sigma2), size=(n, p))
    x = inverse_transform(z, spec.transform)
    data = Dataset(x=x, t=t, e=raw, transform_kind=spec.transform)
    _, first = np.unique(alloc, return_index=True)
    relabel = np.empty(n_tables, dtype=np.int64)
    relabel[alloc[np.sort(first)]] = np.arange(1, n_tables + 1)
    truth = SimTruth(g=g, s=s, allocation=relabel[alloc], theta=theta, eps=eps,
                     pool_values=zeta, pool_weights=w, raw_gaps=raw)
    return data, truth


__all__ = [
    "SCENARIOS", "SimSpec", "SimTruth", "apply_transform", "generate_distances",
    "reference_params", "replicate_rngs", "simulate_dataset",
]
