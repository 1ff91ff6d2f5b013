import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesdiff import kernels
from bayesdiff.mcmc import _kernel_args, initial_state, SamplerConfig
from bayesdiff.simulate import SimSpec, simulate_dataset


def _brute_new_table(M, logw):
    T, H = M.shape
    w = np.exp(logw)
    l1 = math.log(sum(w[h] * math.exp(M[:, h].sum()) for h in range(H)))
    num = 0.0
    for tup in itertools.product(range(H), repeat=T):
        if len(set(tup)) > 1:
            num += math.prod(w[a] for a in tup) * math.exp(sum(M[t, a] for t, a in enumerate(tup)))
    l2 = math.log(num) - math.log(1 - np.sum(w ** T))
    return l1, l2


@given(st.integers(2, 4), st.integers(2, 4), st.integers(0, 2**31))
def test_new_table_marginals_exact(T, H, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(T, H))
    w = rng.dirichlet(np.ones(H))
    logw = np.log(w)
    ln2 = math.log(1 - np.sum(w ** T))
    want = _brute_new_table(M, logw)
    got_np = kernels.new_table_logliks_np(M, logw, ln2)
    out = np.empty(2)
    kernels._new_table_logliks(M, logw, ln2, out)
    assert got_np == pytest.approx(want, abs=1e-10)
    assert tuple(out) == pytest.approx(want, abs=1e-10)


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_not_all_equal_law(backend):
    rng = np.random.default_rng(3)
    T, H = 3, 3
    logP = rng.normal(size=(T, H))
    P = np.exp(logP - np.log(np.exp(logP).sum(axis=1, keepdims=True)))
    tuples = [tup for tup in itertools.product(range(H), repeat=T) if len(set(tup)) > 1]
    target = np.array([math.prod(P[t, a] for t, a in enumerate(tup)) for tup in tuples])
    target /= target.sum()
    n = 40000
    U = rng.random((n, T))
    counts = dict.fromkeys(tuples, 0)
    for u in U:
        counts[tuple(kernels.draw_not_all_equal(logP, u, backend=backend))] += 1
    freq = np.array([counts[tup] for tup in tuples]) / n
    assert 0.5 * np.abs(freq - target).sum() < 0.015
    se = np.sqrt(target * (1 - target) / n)
    assert np.all(np.abs(freq - target) < 4.5 * se)


def test_not_all_equal_impossible():
    with np.errstate(divide="ignore"):
        logP = np.log(np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert kernels.draw_not_all_equal(logP, np.array([0.3, 0.7]), backend="numpy") is None
    assert kernels.draw_not_all_equal(logP, np.array([0.3, 0.7]), backend="numba") is None


def test_categorical_agree():
    w = np.array([0.0, 0.2, 0.0, 0.5, 0.3, 0.0])
    for u in np.linspace(0, 0.999999, 101):
        assert kernels._categorical(w, w.sum(), u) == kernels._categorical_np(w, u)
    assert kernels._categorical_np(w, 1.0) == 4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sweep_backends_identical(seed):
    rng = np.random.default_rng(seed)
    data, _ = simulate_dataset(SimSpec(p=80, T=4, n_per_treatment=3), rng)
    st0, params = initial_state(data, SamplerConfig(seed=seed), rng)
    params.eta = 0.01
    params.d2 = 0.3
    outs = []
    U = rng.random((data.p, data.T + 1))
    for backend in ("numba", "numpy"):
        st = st0.copy()
        a = _kernel_args(st, data, params)
        kernels.allocation_sweep(
            a["S1"], a["nt"], a["inv_s2"], a["zeta"], a["logw"], a["log_norm2"], a["logF0"],
            a["logQ"], a["logF"], a["alpha"], a["dsc"], st.g, st.s, st.tab, st.tab_pdp,
            st.tab_n, st.tab_atom, st.active, st.pos, st.nact, st.pdp_n, st.pdp_K, U, backend=backend)
        st.check()
        outs.append(st)
    a, b = outs
    for name in ("g", "s", "tab", "tab_pdp", "tab_n", "tab_atom", "active", "pos", "nact", "pdp_n", "pdp_K"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_probe_logweights_backends_agree(rng):
    data, _ = simulate_dataset(SimSpec(p=30, T=3, n_per_treatment=2), rng)
    st, params = initial_state(data, SamplerConfig(), rng)
    params.eta = 0.05
    a = _kernel_args(st, data, params)
    j = 7
    kernels._remove_probe_np(j, st.tab, st.tab_pdp, st.tab_n, st.active, st.pos, st.nact, st.pdp_n, st.pdp_K)
    nact = int(st.nact[0])
    args = (j, a["S1"], a["nt"], a["inv_s2"], a["zeta"], a["logw"], a["log_norm2"], a["logF0"],
            a["logQ"], a["logF"], a["alpha"], a["dsc"], st.g, st.s, st.tab_pdp, st.tab_n,
            st.tab_atom, st.active, nact, st.pdp_n, st.pdp_K)
    lw_np, M_np = kernels.probe_logweights_np(*args)
    M = np.empty_like(M_np)
    out = np.empty(nact + 4)
    kernels.probe_logweights_nb(*args, M, out)
    assert np.allclose(M, M_np, rtol=1e-13, atol=1e-12)
    assert np.allclose(out, lw_np, rtol=1e-12, atol=1e-10)
