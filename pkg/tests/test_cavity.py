import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ldgm_mi.cavity import (CLIP, Estimate, MeanConstraintError, Population, SolverSettings,
                            b_functional, big_lambda, channel_term_general,
                            closed_form_forest, edge_lambda, gamma_correction, ks_distance,
                            mi_predict_general, pd_step, solve_sup)
from ldgm_mi.graphs import (Alphabet, DegreeDistribution, WeightFamily, WeightFunction,
                            constant_family)
from ldgm_mi.ldgm import channel_term_codes, code_weight_family, l_functional

LN2 = np.log(2.0)
D3 = DegreeDistribution.point(3)
D0 = DegreeDistribution.point(0)


def test_big_lambda_values():
    assert big_lambda(0.0) == 0.0
    assert big_lambda(1.0) == 0.0
    assert big_lambda(2.0) == pytest.approx(2 * LN2)
    assert np.allclose(big_lambda(np.array([0.0, np.e])), [0.0, np.e])
    with pytest.raises(ValueError):
        big_lambda(-0.1)


def test_population_validation():
    with pytest.raises(ValueError):
        Population(np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        Population(np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        Population(np.zeros(3), np.array([0.5, 0.5, 0.5]))
    p = Population.frozen(5)
    assert p.N == 5 and abs(p.mean_theta()) < 1e-15
    assert np.allclose(p.measures().sum(axis=1), 1.0)


def test_mean_check():
    Population.uniform_spread(1000, 1).check_mean()
    with pytest.raises(MeanConstraintError):
        Population(np.full(10, 0.3)).check_mean()
    with pytest.raises(MeanConstraintError):
        b_functional(D3, code_weight_family(3, 0.2), Population(np.full(10, 0.3)), 100)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.booleans())
def test_population_csv_round_trip(thetas, weighted):
    w = np.arange(1, len(thetas) + 1, dtype=float)
    p = Population(np.array(thetas), w / w.sum() if weighted else None)
    back = Population.from_csv(p.to_csv(), weighted=weighted)
    assert np.array_equal(back.members, p.members)
    if weighted:
        assert np.allclose(back.weights, p.weights, rtol=1e-15)


def test_general_population_csv_round_trip():
    m = np.random.default_rng(0).dirichlet(np.ones(3), size=7)
    p = Population(m)
    assert np.array_equal(Population.from_csv(p.to_csv(), code=False).members, p.members)


@pytest.mark.parametrize("q", [2, 3, 4])
def test_b_without_checks_is_log_alphabet(q):
    fam = constant_family(3, q)
    pop = Population.uniform_measures(50, q)
    est = b_functional(D0, fam, pop, 1000, seed=1)
    assert est == (np.log(q), 0.0)


@pytest.mark.parametrize("eta", [0.05, 0.2, 0.45])
def test_b_on_uniform_messages_is_ln2(eta):
    est = b_functional(D3, code_weight_family(3, eta), Population.delta_zero(100), 5000, seed=4)
    assert est.value == pytest.approx(LN2, abs=1e-13)


@pytest.mark.parametrize("k,eta", [(2, 0.1), (3, 0.2), (3, 0.35)])
def test_b_matches_code_functional(k, eta):
    # two independent implementations of the same functional on the code family
    D = DegreeDistribution({2: 0.5, 3: 0.5})
    pop = Population.uniform_spread(4000, 7)
    b = b_functional(D, code_weight_family(k, eta), pop, 200_000, seed=1)
    lf = l_functional(k, D, eta, pop, 200_000, seed=2)
    assert abs(b.value - lf.value) <= 3 * np.hypot(b.stderr, lf.stderr) + 1e-12


def test_b_exchangeable_under_permutation(monkeypatch):
    fam = code_weight_family(3, 0.2)
    pop = Population.uniform_spread(300, 3)
    perm = np.random.default_rng(5).permutation(pop.N)
    shuffled = pop.permuted(perm)
    inverse = np.argsort(perm)
    original = Population.sample_indices

    def mapped(self, rng, size):
        idx = original(self, rng, size)
        return inverse[idx] if self is shuffled else idx

    before = b_functional(D3, fam, pop, 20_000, seed=8)
    monkeypatch.setattr(Population, "sample_indices", mapped)
    after = b_functional(D3, fam, shuffled, 20_000, seed=8)
    assert after == before


def test_b_permutation_statistically_invariant():
    fam = code_weight_family(3, 0.3)
    pop = Population.uniform_spread(2000, 3)
    a = b_functional(D3, fam, pop, 50_000, seed=1)
    b = b_functional(D3, fam, pop.permuted(np.arange(pop.N)[::-1]), 50_000, seed=2)
    assert abs(a.value - b.value) <= 4 * np.hypot(a.stderr, b.stderr)


@pytest.mark.parametrize("seed", [0, 1, 17])
def test_forest_identity_paired_seeds(seed):
    D = DegreeDistribution({1: 0.3, 4: 0.7})
    fam = code_weight_family(3, 0.15)
    pop = Population.uniform_spread(1000, seed)
    b = b_functional(D, fam, pop, 5000, seed=seed)
    cf = closed_form_forest(D, fam, pop, 5000, seed=seed)
    el = edge_lambda(fam, pop, 5000, seed=seed)
    coef = (fam.k - 1) / (fam.k * fam.xi) * D.mean
    assert b.value == cf.value - coef * el.value


def test_gamma_correction():
    fam = code_weight_family(3, 0.2)
    pop = Population.uniform_spread(1000, 2)
    assert gamma_correction(1, 0.0, 0.1, fam, pop, 2000, seed=1) == Estimate(0.0, 0.0)
    half = gamma_correction(1, 0.5, 0.1, fam, pop, 2000, seed=1)
    full = gamma_correction(1, 1.0, 0.1, fam, pop, 2000, seed=1)
    assert full.value == pytest.approx(2 * half.value, rel=1e-13)
    assert gamma_correction(2, 0.0, 0.1, fam, pop, 2000, seed=1).value == pytest.approx(
        full.value, rel=1e-13)
    uni = gamma_correction(3, 0.5, 0.1, fam, Population.delta_zero(10), 2000, seed=1)
    assert uni.value == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        gamma_correction(0, 0.5, 0.1, fam, pop)


@pytest.mark.parametrize("k", [2, 3, 4])
@pytest.mark.parametrize("eta", [0.1, 0.3])
def test_channel_term_general_on_code_family(k, eta):
    D = DegreeDistribution({2: 0.4, 5: 0.6})
    got = channel_term_general(D, code_weight_family(k, eta))
    assert got == pytest.approx(channel_term_codes(k, D, eta, "full"), rel=1e-12)


def test_channel_term_zero_points():
    assert channel_term_general(D0, code_weight_family(3, 0.2)) == 0.0
    assert channel_term_general(D3, code_weight_family(2, 0.5)) == pytest.approx(0.0, abs=1e-15)


def test_pd_delta_zero_fixed_point():
    pop = Population.delta_zero(500)
    new = pd_step(pop, 3, D3, 0.2, seed=1)
    assert np.all(new.members == 0.0)


def test_pd_noiseless_frozen_stays_frozen():
    new = pd_step(Population.frozen(1000), 3, D3, 0.0, seed=2)
    assert np.all(np.abs(new.members) == CLIP)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.49), st.sampled_from([2, 3]))
def test_pd_code_mean_exactly_zero(seed, eta, k):
    new = pd_step(Population.uniform_spread(501, seed), k, D3, eta, seed=seed)
    assert new.N == 501
    # exactly symmetric, so the mean is zero up to summation rounding
    m = np.sort(new.members)
    assert np.array_equal(m, -m[::-1])
    assert abs(new.mean_theta()) < 1e-15


def test_pd_general_mean_uniform():
    rng = np.random.default_rng(0)
    tables = rng.uniform(0.2, 1.8, size=(2, 3, 3))
    # symmetrise so that the mean table is constant
    tables = np.stack([tables[0], 2.0 - tables[0]])
    fam = WeightFamily(tuple(WeightFunction(t) for t in tables), np.array([0.5, 0.5]),
                       Alphabet((0, 1, 2)))
    pop = Population(rng.dirichlet(np.ones(3), size=400))
    for i in range(3):
        pop = pd_step(pop, 2, D3, fam, seed=i)
    assert np.allclose(pop.mean_measure(), 1 / 3, atol=1e-12)


def test_pd_stalls_without_checks():
    pop = Population.uniform_spread(100, 0)
    out, info = pd_step(pop, 3, D0, 0.2, seed=0, return_info=True)
    assert info["stalled"] and out is pop


def test_pd_code_and_general_forms_agree():
    # planted-gauge update versus the tilted rejection update on the same family
    pop = Population.uniform_spread(20_000, 11)
    a = pd_step(pop, 3, D3, 0.2, seed=1).thetas()
    g = pd_step(pop, 3, D3, code_weight_family(3, 0.2), seed=2)
    b, wb = g.thetas(), g.probs
    assert abs(np.mean(a ** 2) - wb @ b ** 2) < 0.01
    assert abs(np.mean(np.abs(a)) - wb @ np.abs(b)) < 0.01


def test_pd_damping_validation():
    with pytest.raises(ValueError):
        pd_step(Population.delta_zero(10), 3, D3, 0.2, damping=1.0)


def test_ks_distance():
    x = np.array([0.0, 1.0, 2.0])
    assert ks_distance(x, x) == 0.0
    assert ks_distance(x, x + 10) == 1.0
    assert ks_distance(np.array([0.0, 1.0]), np.array([0.0])) == 0.5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=30),
       st.lists(st.integers(-5, 5), min_size=1, max_size=30))
def test_ks_distance_matches_scipy(a, b):
    a, b = np.array(a, float), np.array(b, float)
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)


def test_solver_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(N=1)
    with pytest.raises(ValueError):
        SolverSettings(tolerance=0.0)
    with pytest.raises(ValueError):
        SolverSettings(mesh=("delta0", "bogus"))
    assert SolverSettings().to_json()["mesh"] == ["delta0", "frozen", "uniform"]


SMALL = SolverSettings(N=400, iterations=20, patience=3, mc_samples=4000, eval_rounds=2,
                       seed=1)


def test_solve_sup_zero_information():
    sup, _, diag = solve_sup(3, D3, 0.5, SMALL)
    assert sup.value == pytest.approx(LN2, abs=1e-12)
    assert len(diag["runs"]) == 3


def test_solve_sup_without_checks():
    sup, _, diag = solve_sup(3, D0, 0.2, SMALL)
    assert sup.value == pytest.approx(LN2, abs=1e-14)
    assert diag["all_converged"]


def test_solve_sup_deterministic():
    a = solve_sup(3, D3, 0.2, SMALL)[0]
    b = solve_sup(3, D3, 0.2, SMALL)[0]
    assert a == b


def test_mi_predict_general_rejects_sym_violation():
    bumped = WeightFamily((WeightFunction(np.array([[1.5, 0.5], [1.0, 1.0]])),),
                          np.array([1.0]))
    with pytest.raises(ValueError, match="SYM"):
        mi_predict_general(D3, bumped, SMALL)


def test_mi_predict_general_zero_point():
    est = mi_predict_general(D3, code_weight_family(3, 0.5), SMALL, pos_samples=1000)
    assert est.value == pytest.approx(0.0, abs=1e-12)
