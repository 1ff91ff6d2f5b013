import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesdiff.errors import DomainError, InputError, InvariantError, StateError
from bayesdiff.model import (
    AFFILIATION_CAP,
    AtomValue,
    Dataset,
    ModelHyperParams,
    PsiPool,
    affiliation,
    apply_transform,
    effective_affiliations,
    group_mass,
    inverse_transform,
    log_transition_tables,
    persistence_prob,
    sample_diff_atom,
    sample_nondiff_atom,
    state_mass,
    state_of_effects,
    stick_weights,
    transition_loglik,
    weights_from_sticks,
)

unit = st.floats(0.001, 0.999)


# ---------------------------------------------------------------- affiliation

def test_affiliation_values():
    assert affiliation(1 / 499, 0.004) == pytest.approx(math.exp(-0.5 / 0.998), abs=1e-15)
    assert 0.605 < affiliation(1 / 499, 0.004) < 0.606
    assert affiliation(0.5, 0.0) == 0.0
    assert affiliation(0.01, 0.01) == pytest.approx(0.36787944117144233, rel=1e-15)


def test_affiliation_domain():
    with pytest.raises(DomainError):
        affiliation(0.0, 0.1)
    with pytest.raises(DomainError):
        affiliation(0.1, -1.0)


@given(st.floats(1e-4, 0.5), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
def test_affiliation_monotone(e, a, b):
    lo, hi = sorted((a, b))
    assert affiliation(e, lo) <= affiliation(e, hi)
    assert affiliation(e, hi) <= affiliation(e / 2, hi)


def test_effective_affiliation_is_capped():
    r = effective_affiliations(np.array([1e-9, 0.5]), 0.1, 0.8)
    assert r[0] == pytest.approx(AFFILIATION_CAP * 0.8)
    assert r[1] == pytest.approx(math.exp(-5.0))
    assert np.all(effective_affiliations(np.array([0.1, 0.2]), 0.0, 0.9) == 0.0)


# ------------------------------------------------------- mass functions

def test_state_mass_examples():
    assert state_mass(1, 0.1, 0.9) == pytest.approx((0.99, 0.01))
    assert state_mass(2, 0.1, 0.9) == pytest.approx((0.09, 0.91))
    assert state_mass(1, 0.5, 1e-12) == pytest.approx((0.5, 0.5))
    with pytest.raises(DomainError):
        state_mass(1, 1.0, 0.5)
    with pytest.raises(DomainError):
        state_mass(3, 0.1, 0.5)


def test_group_mass_examples():
    assert group_mass(1, 0.6, 0.1, 0.9) == pytest.approx((0.9 + 0.1 * 0.6 / 0.9, 0.1 - 0.1 * 0.6 / 0.9))
    assert group_mass(1, 0.6, 0.1, 0.9)[0] == pytest.approx(0.96667, abs=1e-5)
    assert group_mass(2, 0.6, 0.1, 0.9) == pytest.approx((0.3, 0.7))
    assert group_mass(2, 0.0, 0.1, 0.9) == pytest.approx((0.9, 0.1))
    with pytest.raises(InvariantError):
        group_mass(1, 0.9, 0.1, 0.9)


def test_persistence_examples():
    assert persistence_prob(1, 0.6, 0.1) == pytest.approx(0.96)
    assert persistence_prob(2, 0.6, 0.1) == pytest.approx(0.64)
    assert persistence_prob(2, 0.0, 0.1) == pytest.approx(0.1)
    f = group_mass(1, 0.6, 0.1, 0.9)
    assert f[0] * 0.99 + f[1] * 0.09 == pytest.approx(0.96, abs=1e-12)


@given(unit, unit, st.floats(0.0, 0.999))
def test_composition_identity(rho, gamma, frac):
    r = frac * gamma
    for s in (1, 2):
        f = group_mass(s, r, rho, gamma)
        comp = f[0] * state_mass(1, rho, gamma)[s - 1] + f[1] * state_mass(2, rho, gamma)[s - 1]
        assert comp == pytest.approx(persistence_prob(s, r, rho), abs=1e-12)


@given(unit, unit, st.floats(0.0, 0.999))
def test_mass_validity(rho, gamma, frac):
    r = frac * gamma
    for pair in (state_mass(1, rho, gamma), state_mass(2, rho, gamma), group_mass(1, r, rho, gamma),
                 group_mass(2, r, rho, gamma)):
        assert all(0.0 <= x <= 1.0 for x in pair)
        assert sum(pair) == pytest.approx(1.0, abs=1e-15)
    assert state_mass(1, rho, gamma)[0] > 1 - rho > state_mass(2, rho, gamma)[0]


@given(st.floats(0.001, 0.499), st.floats(0.0, 0.9), st.floats(0.001, 0.09))
def test_persistence_monotone(rho, r, dr):
    for s in (1, 2):
        assert persistence_prob(s, r + dr, rho) > persistence_prob(s, r, rho)
    assert persistence_prob(2, r, rho) < persistence_prob(1, r, rho)


def test_log_tables_match_mass_functions(rng):
    rho, gamma = 0.2, 0.7
    r = rng.uniform(0, 0.9 * gamma, size=6)
    logF0, logQ, logF = log_transition_tables(r, rho, gamma)
    assert np.exp(logF0) == pytest.approx([0.8, 0.2])
    for g in (1, 2):
        assert np.exp(logQ[g - 1]) == pytest.approx(state_mass(g, rho, gamma), rel=1e-14)
    for j in range(r.size):
        for s in (1, 2):
            assert np.exp(logF[j, s - 1]) == pytest.approx(group_mass(s, r[j], rho, gamma), rel=1e-14)


def test_transition_loglik_direct():
    g = np.array([1, 2, 2, 1])
    s = np.array([1, 2, 1, 1])
    r = np.array([0.3, 0.1, 0.5])
    rho, gamma = 0.15, 0.8
    direct = math.log(1 - rho)
    for j in range(4):
        direct += math.log(state_mass(g[j], rho, gamma)[s[j] - 1])
        if j:
            direct += math.log(group_mass(s[j - 1], r[j - 1], rho, gamma)[g[j] - 1])
    assert transition_loglik(g, s, r, rho, gamma) == pytest.approx(direct, abs=1e-12)


# ------------------------------------------------------------ sticks, atoms

def test_degenerate_stick():
    w = weights_from_sticks(np.array([1.0, 0.3, 0.5]))
    assert np.array_equal(w, [1.0, 0.0, 0.0])


@given(st.floats(0.0, 0.95), st.floats(0.01, 30.0), st.integers(1, 60), st.integers(0, 2**32))
def test_stick_weights_simplex(d, alpha, H, seed):
    w = stick_weights(d, alpha, H, np.random.default_rng(seed))
    assert w.shape == (H,)
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_stick_weight_means(rng):
    n = 20000
    w1 = np.array([stick_weights(0.0, 1.0, 5, rng)[0] for _ in range(n)])
    se = math.sqrt(1 / 12 / n)
    assert abs(w1.mean() - 0.5) < 3 * se
    d, a, H = 0.33, 20.0, 4
    V = rng.beta(1 - d, a + np.arange(1, H + 1) * d, size=(n, H))
    for h in range(1, H + 1):
        mean = (1 - d) / (1 - d + a + d * h)
        assert abs(V[:, h - 1].mean() - mean) < 3 * V[:, h - 1].std() / math.sqrt(n)


def test_stick_domain():
    with pytest.raises(DomainError):
        stick_weights(1.0, 1.0, 5, np.random.default_rng(0))
    with pytest.raises(DomainError):
        stick_weights(0.5, -0.6, 5, np.random.default_rng(0))


def test_nondiff_atoms(rng):
    a = sample_nondiff_atom(PsiPool.from_pairs([(2.5, 1.0)]), rng, T=4)
    assert np.array_equal(a.value, [2.5] * 4) and a.state == 1
    pool = PsiPool.from_pairs([(0.0, 0.5), (1.0, 0.5)])
    draws = np.array([sample_nondiff_atom(pool, rng, T=3).value for _ in range(4000)])
    assert np.all(draws == draws[:, :1])
    assert abs(draws[:, 0].mean() - 0.5) < 3 * 0.5 / math.sqrt(4000)
    with pytest.raises(StateError):
        sample_nondiff_atom(PsiPool(np.array([]), np.array([])), rng)


def test_diff_atoms_T2(rng):
    pool = PsiPool.from_pairs([(0.0, 0.5), (1.0, 0.5)])
    draws = np.array([sample_diff_atom(pool, 2, rng).value for _ in range(4000)])
    assert set(map(tuple, draws)) == {(0.0, 1.0), (1.0, 0.0)}
    assert abs(draws[:, 0].mean() - 0.5) < 3 * 0.5 / math.sqrt(4000)


def test_diff_atoms_T5_one_odd(rng):
    pool = PsiPool.from_pairs([(0.0, 0.5), (1.0, 0.5)])
    n = 6000
    draws = np.array([sample_diff_atom(pool, 5, rng).value for _ in range(n)])
    ones = draws.sum(axis=1)
    frac = np.mean((ones == 1) | (ones == 4))
    assert abs(frac - 10 / 30) < 3 * math.sqrt(10 / 30 * 20 / 30 / n)
    assert all(state_of_effects(v) == 2 for v in draws)


def test_diff_atom_acceptance_rate(rng):
    w = np.array([0.6, 0.3, 0.1])
    pool = PsiPool(np.array([0.0, 1.0, 2.0]), w)
    T, n = 3, 20000
    acc = np.mean([len(set(rng.choice(3, size=T, p=w))) > 1 for _ in range(n)])
    target = 1 - np.sum(w ** T)
    assert abs(acc - target) < 3 * math.sqrt(target * (1 - target) / n)
    assert sample_diff_atom(pool, T, rng).state == 2


def test_diff_atom_single_support(rng):
    with pytest.raises(StateError):
        sample_diff_atom(PsiPool.from_pairs([(1.0, 1.0)]), 3, rng)
    with pytest.raises(StateError):
        sample_diff_atom(PsiPool(np.array([1.0, 2.0]), np.array([1.0, 0.0])), 3, rng)


def test_atom_value_invariants():
    with pytest.raises(InvariantError):
        AtomValue(np.array([1.0, 2.0]), 1)
    with pytest.raises(InvariantError):
        AtomValue(np.array([1.0, 1.0]), 2)


# ------------------------------------------------------------ hyperparams

def test_hyperparam_invariants():
    ModelHyperParams(eta=0.004, gamma=0.9).validate()
    with pytest.raises(InvariantError):
        ModelHyperParams(eta=20.0, gamma=0.9).validate()
    with pytest.raises(InvariantError):
        ModelHyperParams(d1=0.1).validate()
    with pytest.raises(InvariantError):
        ModelHyperParams(d2=1.0).validate()
    p = ModelHyperParams(rho=0.3)
    assert p.rho + p.rho_prime == 1.0
    assert ModelHyperParams.from_dict(p.to_dict()) == p


# ------------------------------------------------------------ transforms, dataset

def test_transforms():
    assert apply_transform(np.array([0.5]), "logit")[0] == 0.0
    assert apply_transform(np.array([0.0]), "log1p")[0] == 0.0
    with pytest.raises(DomainError, match=r"\[1, 0\]"):
        apply_transform(np.array([[0.5], [1.2]]), "logit")
    with pytest.raises(DomainError):
        apply_transform(np.array([-1.0]), "log1p")


@given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=20))
def test_logit_roundtrip(xs):
    x = np.array(xs)
    assert np.allclose(inverse_transform(apply_transform(x, "logit"), "logit"), x, atol=1e-12, rtol=0)


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=20))
def test_log1p_roundtrip(xs):
    x = np.array(xs)
    assert np.allclose(inverse_transform(apply_transform(x, "log1p"), "log1p"), x, rtol=1e-12, atol=1e-12)


def _x(n=4, p=3):
    return np.arange(n * p, dtype=float).reshape(n, p)


def test_dataset_scaling():
    d = Dataset(x=_x(), t=[1, 1, 2, 2], e=[2.0, 6.0])
    assert d.e.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(d.e, [0.25, 0.75])
    assert np.array_equal(d.raw_gaps, [2.0, 6.0])
    assert (d.n, d.p, d.T) == (4, 3, 2)


@pytest.mark.parametrize("kw", [
    dict(x=np.zeros((4, 1)), t=[1, 1, 2, 2], e=[]),
    dict(x=_x(), t=[1, 1, 1, 1], e=[1.0, 1.0]),
    dict(x=_x(), t=[1, 1, 3, 3], e=[1.0, 1.0]),
    dict(x=_x(), t=[1, 1, 2, 2], e=[1.0, 0.0]),
    dict(x=_x(), t=[1, 1, 2, 2], e=[1.0]),
    dict(x=np.where(_x() == 5, np.nan, _x()), t=[1, 1, 2, 2], e=[1.0, 1.0]),
])
def test_dataset_rejects(kw):
    with pytest.raises(InputError):
        Dataset(**kw)


def test_dataset_from_positions():
    d = Dataset.from_positions(_x(), [1, 2, 1, 2], [10.0, 11.0, 14.0])
    assert np.allclose(d.e, [0.25, 0.75])
    with pytest.raises(InputError, match="probe 3"):
        Dataset.from_positions(_x(), [1, 2, 1, 2], [10.0, 11.0, 11.0])
