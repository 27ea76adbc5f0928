import itertools
import warnings
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ldgm_mi.graphs import (SPINS, Alphabet, Check, DegreeDistribution, DegreeSequence,
                            FactorGraph, LayerPlan, RoundingWarning, SocketExhaustion,
                            SocketState, WeightFamily, WeightFunction, alpha_beta_plan,
                            configuration_model, constant_family, indicator_weight,
                            layered_model, sample_d_partition, sym_deviations,
                            tv_shift_distance, xi_of_family)
from ldgm_mi.ldgm import code_weight_family
from ldgm_mi.planted import unweighted_graph


# -- alphabet, weights, families ---------------------------------------------

def test_alphabet_rejects_bad_symbols():
    with pytest.raises(ValueError):
        Alphabet((1,))
    with pytest.raises(ValueError):
        Alphabet((0, 0))
    assert SPINS.q == 2 and SPINS.index(-1) == 1


def test_weight_function_range_is_enforced():
    with pytest.raises(ValueError):
        WeightFunction([[1.0, 2.0], [1.0, 1.0]])
    with pytest.raises(ValueError):
        WeightFunction([[0.0, 1.0], [1.0, 1.0]])
    w = WeightFunction([[0.0, 1.0], [1.0, 2.0]], strict=False)
    assert w(1, 1) == 2.0
    with pytest.raises(ValueError):
        WeightFunction([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])


def test_indicator_weight_is_non_strict():
    w = indicator_weight(3, 2)
    assert w.table.tolist() == [0.0, 0.0, 1.0] and not w.strict


@pytest.mark.parametrize("eta", [0.05, 0.2, 0.45])
def test_xi_code_family_k2(eta):
    assert xi_of_family(code_weight_family(2, eta)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_xi_constant_family(k):
    assert constant_family(k).xi == 1.0


def test_xi_hand_entered_family_matches_full_enumeration():
    a = np.array([[0.2, 1.5], [0.7, 1.1]])
    b = np.array([[1.9, 0.4], [0.3, 0.6]])
    fam = WeightFamily((WeightFunction(a), WeightFunction(b)), np.array([0.25, 0.75]),
                       Alphabet((0, 1)))
    total = sum(0.25 * a[i, j] + 0.75 * b[i, j] for i in range(2) for j in range(2))
    assert fam.xi == pytest.approx(total / 4, abs=1e-15)


def test_family_validation():
    w = WeightFunction(np.ones((2, 2)))
    with pytest.raises(ValueError):
        WeightFamily((w,), np.array([0.9]))
    with pytest.raises(ValueError):
        WeightFamily((w, WeightFunction(np.ones((2, 2, 2)))), np.array([0.5, 0.5]))


def test_sym_deviation_of_bumped_table():
    tab = np.ones((2, 2))
    tab[0, 1] = 1.5
    fam = WeightFamily((WeightFunction(tab), WeightFunction(np.ones((2, 2)))),
                       np.array([0.4, 0.6]))
    dev = sym_deviations(fam)
    # mean table is 1 everywhere except 1 + 0.4 * 0.5 at (0, 1); xi = 1 + 0.2 / 4
    assert dev[0, 1] == pytest.approx(0.2 - 0.05)
    assert dev[1, 1] == pytest.approx(-0.05)


# -- degree objects ----------------------------------------------------------

def test_degree_distribution_invariants():
    D = DegreeDistribution({1: 0.25, 3: 0.75})
    assert D.mean == pytest.approx(2.5)
    assert D.probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        DegreeDistribution({1: 0.5, 2: 0.4})
    with pytest.raises(ValueError):
        DegreeDistribution({-1: 1.0})


def test_size_biased_law():
    sb = DegreeDistribution({1: 0.5, 3: 0.5}).size_biased()
    assert sb.mass == pytest.approx({0: 0.25, 2: 0.75})


def test_d_partition_point_mass():
    d = sample_d_partition(4, DegreeDistribution.point(3), seed=0)
    assert d.degrees.tolist() == [3, 3, 3, 3] and not d.rounded


def test_d_partition_two_classes_random_order():
    D = DegreeDistribution({1: 0.5, 2: 0.5})
    seen = Counter(tuple(sample_d_partition(2, D, seed=s).degrees) for s in range(200))
    assert set(seen) == {(1, 2), (2, 1)}


def test_d_partition_rounding_is_flagged():
    with pytest.warns(RoundingWarning):
        d = sample_d_partition(3, DegreeDistribution({1: 0.5, 2: 0.5}), seed=0)
    assert d.rounded and d.n == 3
    assert sorted(d.degrees.tolist()) == [1, 1, 2]


def test_d_partition_random_vertex_degree_chi_square():
    D = DegreeDistribution({1: 0.3, 2: 0.5, 4: 0.2})
    rng = np.random.default_rng(0)
    draws = [sample_d_partition(10, D, seed=s).degrees[rng.integers(10)]
             for s in range(10_000)]
    obs = np.array([np.sum(np.array(draws) == l) for l in D.support])
    assert stats.chisquare(obs, 10_000 * D.probs).pvalue > 0.01


def test_socket_state_truncates():
    s = SocketState(np.array([2, 1, 0]))
    assert s.nu.tolist() == pytest.approx([2 / 3, 1 / 3, 0])
    clipped = s.advance(np.array([1, 3, 0]))
    assert s.remaining.tolist() == [1, 0, 0] and clipped.tolist() == [0, 2, 0]
    s.advance(np.array([1, 0, 0]))
    with pytest.raises(SocketExhaustion):
        s.nu


# -- factor graphs -----------------------------------------------------------

def test_factor_graph_validation():
    with pytest.raises(ValueError):
        FactorGraph(2, ((0, 2),))
    with pytest.raises(ValueError):
        FactorGraph(2, (), pins=((0, 2),))
    w = WeightFunction(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        FactorGraph(2, (Check((0, 1), w),))


def test_text_roundtrip():
    fam = code_weight_family(2, 0.3)
    G = FactorGraph(3, ((0, 1), (1, 2), (2, 2))).with_weights(
        [fam.functions[0], fam.functions[1], fam.functions[0]]).with_pins([(1, 0)])
    ids, tables = G.weight_registry()
    H = FactorGraph.from_text(G.to_text(ids), G.weights_json())
    assert H.neighborhoods() == G.neighborhoods() and H.pins == G.pins
    assert [c.weight for c in H.checks] == [c.weight for c in G.checks]


def test_text_header_count_checked():
    with pytest.raises(ValueError):
        FactorGraph.from_text("2 2 2\n0: 0 1\n")


# -- configuration model -----------------------------------------------------

def test_configuration_model_forced_graph():
    G = configuration_model([1, 1], 2, seed=0)
    assert sorted(G.neighborhoods()[0]) == [0, 1] and G.num_checks == 1


def _sequential_law(d, k):
    """Multiset-of-checks law by enumerating every sequential socket-draw path."""
    law = Counter()

    def rec(rem, drawn, p):
        if sum(rem) == 0:
            checks = tuple(sorted(tuple(sorted(drawn[i:i + k]))
                                  for i in range(0, len(drawn), k)))
            law[checks] += p
            return
        tot = sum(rem)
        for x, r in enumerate(rem):
            if r:
                nxt = list(rem)
                nxt[x] -= 1
                rec(nxt, drawn + [x], p * Fraction(r, tot))

    rec(list(d), [], Fraction(1))
    return law


def test_configuration_model_matches_path_enumeration():
    law = _sequential_law([2, 2], 2)
    assert law == {((0, 0), (1, 1)): Fraction(1, 3), ((0, 1), (0, 1)): Fraction(2, 3)}
    seen = Counter(tuple(sorted(tuple(sorted(c)) for c in
                                configuration_model([2, 2], 2, seed=s).neighborhoods()))
                   for s in range(3000))
    keys = sorted(law)
    obs = [seen[key] for key in keys]
    assert stats.chisquare(obs, [3000 * float(law[key]) for key in keys]).pvalue > 0.01


def test_configuration_model_larger_law():
    d = [2, 1, 1, 2]
    law = _sequential_law(d, 3)
    seen = Counter(tuple(sorted(tuple(sorted(c)) for c in
                                configuration_model(d, 3, seed=s).neighborhoods()))
                   for s in range(20_000))
    keys = sorted(law)
    assert set(seen) <= set(keys)
    obs = [seen[key] for key in keys]
    assert stats.chisquare(obs, [20_000 * float(law[key]) for key in keys]).pvalue > 0.01


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.integers(1, 4),
       st.integers(0, 2**31))
def test_configuration_model_realises_degrees(d, k, seed):
    pad = (-sum(d)) % k
    d = d + [pad] if pad else d
    G = configuration_model(d, k, seed)
    assert G.variable_degrees().tolist() == d
    assert G.num_checks == sum(d) // k


def test_configuration_model_divisibility():
    with pytest.raises(ValueError):
        configuration_model([1, 1, 1], 2, seed=0)


# -- layered model and plan ---------------------------------------------------

def test_layered_empty_plan():
    assert layered_model([2, 2], np.zeros(3, dtype=int), 2, seed=0).num_checks == 0


def test_layered_single_layer_law():
    seen = Counter(layered_model([1, 1], [1], 2, seed=s).neighborhoods()[0]
                   for s in range(4000))
    pairs = list(itertools.product(range(2), repeat=2))
    assert set(seen) == set(pairs)
    assert stats.chisquare([seen[p] for p in pairs]).pvalue > 0.01


def test_layered_truncation_update():
    # first layer may draw a vertex twice; the second layer must only see
    # what is left after (delta - nabla)_+
    for s in range(50):
        G = layered_model([3, 1, 1, 1], [2, 1], 2, seed=s)
        first = np.bincount(np.ravel(G.neighborhoods()[:2]), minlength=4)
        remaining = np.maximum(np.array([3, 1, 1, 1]) - first, 0)
        for x in G.neighborhoods()[2]:
            assert remaining[x] > 0


def test_layered_exhaustion_reports_partial_graph():
    with pytest.raises(SocketExhaustion) as err:
        layered_model([1, 1], [1, 1], 2, seed=0)
    assert err.value.layer == 2 and err.value.partial.num_checks == 1


def test_layered_check_count_matches_plan():
    d = DegreeSequence([3] * 300)
    plan = alpha_beta_plan(d, 3, 0.1, 0.1, seed=1)
    G = layered_model(d, plan, 3, seed=1)
    assert G.num_checks == plan.total
    assert G.variable_degrees().max() <= 3 + 3 * 3


def test_plan_smax():
    assert alpha_beta_plan([3] * 4, 3, 0.0, 1.0, seed=0).s_max == 4
    assert alpha_beta_plan([3] * 4, 3, 0.999999, 0.1, seed=0).s_max == 0
    means = [alpha_beta_plan([3] * 4, 3, 0.5, 0.01, seed=s) for s in range(200)]
    assert all(p.s_max == 200 for p in means)
    counts = np.concatenate([p.counts for p in means])
    # Poisson(0.01) over 40000 layers: mean within 4 standard errors
    assert abs(counts.mean() - 0.01) < 4 * np.sqrt(0.01 / counts.size)


def test_plan_rejects_bad_parameters():
    with pytest.raises(ValueError):
        alpha_beta_plan([3], 3, 1.0, 0.1, seed=0)
    with pytest.raises(ValueError):
        alpha_beta_plan([3], 3, 0.1, 0.0, seed=0)


def test_layered_degree_law_approaches_D():
    D = DegreeDistribution({2: 0.5, 3: 0.5})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RoundingWarning)
        G = unweighted_graph(10_000, D, 3, 0.01, 0.01, seed=3)
    emp = Counter(G.variable_degrees().tolist())
    support = set(emp) | {2, 3}
    tv = 0.5 * sum(abs(emp[l] / G.n - D.mass.get(l, 0.0)) for l in support)
    assert tv < 0.05


# -- TV of shifted socket laws -----------------------------------------------

def test_tv_shift_example():
    assert tv_shift_distance([2, 1, 1], [1, 0, 0]) == pytest.approx(1 / 6)
    assert tv_shift_distance([2, 1, 1], [0, 0, 0]) == 0.0


@given(st.lists(st.integers(1, 6), min_size=2, max_size=8), st.data())
def test_tv_shift_matches_l1(delta, data):
    c = data.draw(st.lists(st.integers(0, 3), min_size=len(delta), max_size=len(delta)))
    delta, c = np.array(delta), np.array(c)
    shifted = np.maximum(delta - c, 0)
    if shifted.sum() == 0:
        return
    l1 = 0.5 * np.abs(delta / delta.sum() - shifted / shifted.sum()).sum()
    assert tv_shift_distance(delta, c) == pytest.approx(l1, abs=1e-12)


def test_layer_plan_total():
    assert LayerPlan(np.array([1, 0, 2]), 0.1, 0.1, 3).total == 3
