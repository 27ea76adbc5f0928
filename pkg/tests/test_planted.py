import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldgm_mi.gibbs import gibbs_marginals, partition_function
from ldgm_mi.graphs import (DegreeDistribution, DegreeSequence, FactorGraph, SocketExhaustion,
                            WeightFamily, WeightFunction)
from ldgm_mi.ldgm import code_weight_family, exact_code_mi
from ldgm_mi.planted import (assign_weights, conditional_entropy_mc, nishimori_gap,
                             pin_graph, planted_code_mi_oracle, sample_pin_set,
                             sample_planted, tilted_probabilities, unweighted_graph)

LN2 = np.log(2.0)


def _agreeing_index(fam):
    # the parity weight that favours even parity has value 2 - 2 eta at all-(+1)
    return int(np.argmax([f.table.flat[0] for f in fam.functions]))


@pytest.mark.parametrize("eta", [0.1, 0.3])
def test_tilt_follows_the_channel(eta):
    fam = code_weight_family(3, eta)
    good = _agreeing_index(fam)
    sigma = np.array([0, 0, 1, 1])
    tilt = tilted_probabilities(fam, sigma, [(0, 1, 2), (0, 2, 3)])
    # (0,1,2) has odd parity in +-1 form, (0,2,3) even
    assert tilt[1, good] == pytest.approx(1 - eta)
    assert tilt[0, good] == pytest.approx(eta)


def test_tilt_uniform_at_half():
    fam = code_weight_family(2, 0.5)
    tilt = tilted_probabilities(fam, np.array([0, 1, 1]), [(0, 1), (1, 2)])
    assert np.allclose(tilt, fam.prior)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.sampled_from([2, 3]))
def test_tilt_rows_are_distributions(seed, nf, q):
    from ldgm_mi.graphs import Alphabet
    rng = np.random.default_rng(seed)
    fns = tuple(WeightFunction(rng.uniform(0.05, 1.95, size=(q, q))) for _ in range(nf))
    alpha = Alphabet((1, -1)) if q == 2 else Alphabet(tuple(range(q)))
    fam = WeightFamily(fns, rng.dirichlet(np.ones(nf)), alpha)
    nb = rng.integers(0, 5, size=(6, 2))
    tilt = tilted_probabilities(fam, rng.integers(0, q, size=5), nb)
    assert tilt.shape == (6, nf)
    assert np.all(tilt >= 0) and np.allclose(tilt.sum(axis=1), 1.0)


def test_assign_weights_frequencies():
    eta = 0.2
    fam = code_weight_family(2, eta)
    good = _agreeing_index(fam)
    G = FactorGraph(2, tuple((0, 1) for _ in range(20_000)))
    _, idx, _ = assign_weights(G, fam, np.array([0, 0]), seed=3)
    frac = np.mean(idx == good)
    assert abs(frac - (1 - eta)) < 4 * np.sqrt(eta * (1 - eta) / 20_000)


def test_pin_set_examples():
    assert sample_pin_set(10, 0.0, seed=1).pinset == ()
    with pytest.raises(ValueError):
        sample_pin_set(10, -1.0, seed=1)
    ps = sample_pin_set(10, 5.0, seed=2)
    assert 0.0 <= ps.theta <= 5.0
    assert all(0 <= x < 10 for x in ps.pinset)


def test_pin_set_mean_size():
    sizes = [len(sample_pin_set(50, 4.0, seed=s).pinset) for s in range(4000)]
    # E|U| = E[theta] = T/2
    assert abs(np.mean(sizes) - 2.0) < 0.15


def test_pin_set_single_variable():
    hits = np.mean([len(sample_pin_set(1, 1.0, seed=s).pinset) for s in range(4000)])
    assert abs(hits - 0.5) < 0.04


def test_pin_graph_limits():
    fam = code_weight_family(2, 0.2)
    inst = sample_planted(5, DegreeSequence([2, 2, 2, 1, 1]), 2, fam, exact=True, seed=4)
    G = inst.graph
    assert pin_graph(G, [], inst.truth) == G
    full = pin_graph(G, range(5), inst.truth)
    marg = gibbs_marginals(full).marginals
    assert np.array_equal(np.argmax(marg, axis=1), inst.truth.values)
    assert np.allclose(marg.max(axis=1), 1.0)


def test_pinned_partition_function_is_masked_sum():
    fam = code_weight_family(2, 0.3)
    inst = sample_planted(4, DegreeSequence([2, 2, 2, 2]), 2, fam, exact=True, seed=1)
    ref = np.array([1, 0, 0, 1])
    Z = 0.0
    for code in range(16):
        sigma = [(code >> x) & 1 for x in range(4)]
        if sigma[0] != ref[0] or sigma[2] != ref[2]:
            continue
        w = 1.0
        for c in inst.graph.checks:
            w *= c.weight.table[tuple(sigma[x] for x in c.neighborhood)]
        Z += w
    assert partition_function(pin_graph(inst.graph, [0, 2], ref)) == pytest.approx(Z, rel=1e-12)


@pytest.mark.parametrize("T", [0.0, 3.0])
def test_nishimori_small(T):
    fam = code_weight_family(2, 0.3)
    assert nishimori_gap(4, DegreeDistribution.point(2), 2, fam, 100, seed=5, T=T) < 1e-10


def test_nishimori_detects_asymmetric_family():
    # negative control: without SYM the Gibbs measure is not the posterior
    bumped = WeightFamily((WeightFunction(np.array([[1.9, 0.5], [0.5, 0.5]])),),
                          np.array([1.0]))
    gap = nishimori_gap(4, DegreeDistribution.point(2), 2, bumped, 20, seed=1, exact=True)
    assert gap > 1e-3


def test_unweighted_graph_redraws_on_exhaustion():
    D = DegreeDistribution.point(2)
    failing = None
    for s in range(200):
        try:
            unweighted_graph(4, D, 2, 0.01, 0.1, s, max_retries=0)
        except SocketExhaustion:
            failing = s
            break
    assert failing is not None
    G = unweighted_graph(4, D, 2, 0.01, 0.1, failing)
    assert np.all(G.variable_degrees() <= 2)
    # deterministic given the seed
    assert G == unweighted_graph(4, D, 2, 0.01, 0.1, failing)


def test_entropy_at_zero_information():
    D = DegreeDistribution.point(3)
    fam = code_weight_family(3, 0.5)
    h = conditional_entropy_mc(6, D, 3, fam, samples=10, seed=1, exact=True)
    assert h.value == pytest.approx(LN2, abs=1e-12)
    hc = conditional_entropy_mc(6, D, 3, fam, samples=10, seed=1, exact=True, inner="channel")
    assert hc.value == pytest.approx(LN2, abs=1e-12)


def test_oracle_noiseless_single_check():
    fam = code_weight_family(2, 0.0, strict=False)
    G = FactorGraph(2, ((0, 1),))
    assert planted_code_mi_oracle(G, fam) == pytest.approx(LN2, abs=1e-12)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.1, 0.25, 0.4]))
def test_channel_average_matches_exhaustive_oracle(seed, eta):
    # Walsh-Hadamard mutual information against enumeration over weights and truths
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    M = int(rng.integers(1, 6))
    nb = tuple(tuple(rng.choice(n, size=2, replace=False).tolist()) for _ in range(M))
    G = FactorGraph(n, nb)
    fam = code_weight_family(2, eta)
    via_transform = n * LN2 - exact_code_mi(G, eta, per_variable=False)
    assert via_transform == pytest.approx(planted_code_mi_oracle(G, fam), abs=1e-10)


def test_inner_channel_and_gibbs_agree():
    D = DegreeDistribution.point(3)
    fam = code_weight_family(3, 0.2)
    a = conditional_entropy_mc(6, D, 3, fam, samples=300, seed=2, exact=True)
    b = conditional_entropy_mc(6, D, 3, fam, samples=300, seed=3, exact=True, inner="channel")
    assert abs(a.value - b.value) <= 3 * np.hypot(a.stderr, b.stderr)


def test_inner_channel_rejects_other_families():
    bumped = WeightFamily((WeightFunction(np.full((2, 2), 1.0)),), np.array([1.0]))
    with pytest.raises(ValueError):
        conditional_entropy_mc(4, DegreeDistribution.point(2), 2, bumped, 2, inner="channel")
    with pytest.raises(ValueError):
        conditional_entropy_mc(4, DegreeDistribution.point(2), 2, code_weight_family(2, .2), 2,
                               inner="other")


def test_planted_instance_records_tilt():
    fam = code_weight_family(3, 0.1)
    inst = sample_planted(9, DegreeDistribution.point(3), 3, fam, exact=True, seed=8)
    assert inst.tilt.shape == (inst.graph.num_checks, 2)
    assert inst.graph.is_weighted
    assert np.allclose(inst.tilt.sum(axis=1), 1.0)
