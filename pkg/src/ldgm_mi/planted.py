"""Teacher-student sampling, pinning and exact conditional entropies.

The teacher draws a uniform ground truth ``sigma*``, an unweighted graph,
and then each check weight from the tilted law

    P[psi_a = psi] = p(psi) psi(sigma*(da)) / sum_psi' p(psi') psi'(sigma*(da)).

Pinning picks ``theta ~ U[0, T]`` once per graph and includes every
variable independently with probability ``theta / n``; pinned variables
get an indicator factor copying a reference assignment.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cavity import Estimate
from .gibbs import (Assignment, _digits, _normalise, entropy_of, graph_log_weights,
                    log_weight_vector)
from .graphs import (DegreeDistribution, DegreeSequence, FactorGraph, SocketExhaustion,
                     WeightFamily, alpha_beta_plan, configuration_model, layered_model,
                     sample_d_partition)
from .rng import as_generator, child_seed


@dataclass(frozen=True)
class PinningSpec:
    T: float
    theta: float
    pinset: tuple
    reference: Assignment | None = None

    def pins(self):
        if self.reference is None:
            raise ValueError("no reference assignment attached")
        return tuple((x, int(self.reference.values[x])) for x in self.pinset)


@dataclass(frozen=True)
class PlantedInstance:
    truth: Assignment
    graph: FactorGraph
    family: WeightFamily
    weight_index: np.ndarray  # index into family.functions per check
    tilt: np.ndarray          # (M, len(family)) tilted probabilities used for each check
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.n


def tilted_probabilities(family: WeightFamily, sigma, neighborhoods) -> np.ndarray:
    """Per-check law ``p(psi) psi(sigma(da)) / sum_psi' p(psi') psi'(sigma(da))``."""
    nb = np.asarray(neighborhoods, dtype=np.int64).reshape(-1, family.k)
    if len(nb) == 0:
        return np.zeros((0, len(family.functions)))
    vals = np.stack([f.evaluate(np.asarray(sigma)[nb]) for f in family.functions], axis=1)
    w = vals * family.prior
    return w / w.sum(axis=1, keepdims=True)


def unweighted_graph(n: int, D, k: int, alpha: float | None, beta: float | None, seed,
                     exact: bool = False, max_retries: int = 1000) -> FactorGraph:
    """Configuration model (``exact``) or the (alpha, beta) layered approximation.

    The layered graph only exists when no layer runs out of sockets; a failed
    attempt is redrawn (plan and graph) from a derived seed, so the result is
    a draw conditioned on success.  ``max_retries=0`` propagates the failure.
    """
    if isinstance(D, DegreeDistribution):
        d = sample_d_partition(n, D, child_seed(seed, "degrees"))
    else:
        d = D if isinstance(D, DegreeSequence) else DegreeSequence(D)
        if d.n != n:
            raise ValueError("degree sequence length differs from n")
    if exact:
        return configuration_model(d, k, child_seed(seed, "graph"))
    for attempt in range(max_retries + 1):
        s = seed if attempt == 0 else child_seed(seed, "retry", attempt)
        plan = alpha_beta_plan(d, k, alpha, beta, child_seed(s, "plan"))
        try:
            return layered_model(d, plan, k, child_seed(s, "graph"))
        except SocketExhaustion:
            if attempt == max_retries:
                raise


def assign_weights(G: FactorGraph, family: WeightFamily, sigma, seed):
    """Draw every check weight from the tilted law at ``sigma``."""
    rng = as_generator(seed, "weights")
    tilt = tilted_probabilities(family, sigma, G.neighborhoods())
    u = rng.random(len(tilt))
    idx = (u[:, None] > np.cumsum(tilt, axis=1)).sum(axis=1)
    idx = np.minimum(idx, len(family.functions) - 1)
    weighted = G.with_weights([family.functions[i] for i in idx])
    return weighted, idx, tilt


def sample_planted(n: int, D, k: int, family: WeightFamily, alpha: float | None = 0.01,
                   beta: float | None = 0.1, seed=0, exact: bool = False) -> PlantedInstance:
    """Ground truth, unweighted graph and tilted weights (teacher-student model).

    ``D`` is a :class:`DegreeDistribution` (a random D-partition is drawn) or
    an explicit degree sequence.  ``exact`` switches from the (alpha, beta)
    approximation to the exact configuration model.
    """
    if family.k != k:
        raise ValueError("family arity differs from k")
    rng = as_generator(seed, "truth")
    truth = rng.integers(0, family.q, size=n)
    G = unweighted_graph(n, D, k, alpha, beta, seed, exact)
    weighted, idx, tilt = assign_weights(G, family, truth, child_seed(seed, "tilt"))
    meta = {"n": n, "k": k, "alpha": alpha, "beta": beta, "exact": exact}
    return PlantedInstance(Assignment(truth, family.q), weighted, family, idx, tilt, meta)


def sample_pin_set(n: int, T: float, seed) -> PinningSpec:
    """``theta ~ U[0, T]``, then each variable joins ``U`` w.p. ``theta / n``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    rng = as_generator(seed, "pins")
    theta = float(rng.uniform(0.0, T)) if T > 0 else 0.0
    inc = rng.random(n) < (theta / n if n else 0.0)
    return PinningSpec(float(T), theta, tuple(np.nonzero(inc)[0].tolist()))


def pin_graph(G: FactorGraph, U, reference) -> FactorGraph:
    """Add indicator factors copying ``reference`` on ``U``; checks are untouched."""
    ref = reference.values if isinstance(reference, Assignment) else np.asarray(reference)
    return G.with_pins((int(x), int(ref[x])) for x in U)


def pin_instance(inst: PlantedInstance, T: float, seed) -> PlantedInstance:
    """Pin a planted instance to its own ground truth."""
    ps = sample_pin_set(inst.n, T, seed)
    G = pin_graph(inst.graph, ps.pinset, inst.truth)
    meta = dict(inst.meta, T=T, theta=ps.theta, pins=len(ps.pinset))
    return PlantedInstance(inst.truth, G, inst.family, inst.weight_index, inst.tilt, meta)


def posterior_log_weights(inst: PlantedInstance, cap=None) -> np.ndarray:
    """Exact ``log P[sigma* = sigma | G* = G]`` up to a constant, from the sampling law.

    Uses the full tilt ratio of every chosen weight (not the shortcut
    ``P ~ psi_G``), a uniform prior, and the pins as observed values.
    """
    fam = inst.family
    tabs = fam.tables
    denom = np.tensordot(fam.prior, tabs, axes=1)  # sum_psi' p(psi') psi'(tau)
    with np.errstate(divide="ignore"):
        logs = [np.log(fam.prior[i] * tabs[i]) - np.log(denom)
                for i in range(len(fam.functions))]
    factors = [(c.neighborhood, logs[i]) for c, i in zip(inst.graph.checks, inst.weight_index)]
    return log_weight_vector(inst.n, fam.q, factors, inst.graph.pins, cap)


def nishimori_gap_instance(inst: PlantedInstance, cap=None) -> float:
    post, _ = _normalise(posterior_log_weights(inst, cap))
    gibbs, _ = _normalise(graph_log_weights(inst.graph, cap))
    return float(0.5 * np.abs(post - gibbs).sum())


def nishimori_gap(n: int, D, k: int, family: WeightFamily, samples: int = 100, seed=0,
                  T: float = 0.0, alpha: float = 0.01, beta: float = 0.1,
                  exact: bool = False, cap=None) -> float:
    """Largest TV distance between exact posterior and Gibbs measure over sampled graphs."""
    gap = 0.0
    for i in range(samples):
        s = child_seed(seed, "nishimori", i)
        inst = sample_planted(n, D, k, family, alpha, beta, s, exact)
        if T > 0:
            inst = pin_instance(inst, T, child_seed(s, "pin"))
        gap = max(gap, nishimori_gap_instance(inst, cap))
    return gap


def planted_entropies(n: int, D, k: int, family: WeightFamily, samples: int, seed=0,
                      T: float = 0.0, alpha: float | None = 0.01, beta: float | None = 0.1,
                      exact: bool = False, cap=None) -> np.ndarray:
    """Exact ``H(mu_G)`` for ``samples`` independent planted graphs."""
    out = np.empty(samples)
    for i in range(samples):
        s = child_seed(seed, "entropy", i)
        inst = sample_planted(n, D, k, family, alpha, beta, s, exact)
        if T > 0:
            inst = pin_instance(inst, T, child_seed(s, "pin"))
        mu, _ = _normalise(graph_log_weights(inst.graph, cap))
        out[i] = entropy_of(mu)
    return out


def channel_averaged_entropies(n: int, D, k: int, eta: float, samples: int, seed=0,
                               alpha: float | None = 0.01, beta: float | None = 0.1,
                               exact: bool = False, cap: int = 22) -> np.ndarray:
    """``H(sigma* | G*)`` per unweighted graph, averaged exactly over the weights.

    Only for the parity family: given the unweighted graph the weights are
    the codeword seen through BSC(eta), so the weight-averaged entropy is
    ``n ln 2 - I(X; Y)`` with ``I`` from :func:`ldgm.exact_code_mi`.
    """
    from .ldgm import exact_code_mi
    out = np.empty(samples)
    for i in range(samples):
        s = child_seed(seed, "entropy", i)
        G = unweighted_graph(n, D, k, alpha, beta, child_seed(s, "graph_only"), exact)
        if n > cap or G.num_checks > cap:
            raise ValueError(f"n={n} or M={G.num_checks} exceeds the enumeration cap {cap}")
        out[i] = n * np.log(2.0) - exact_code_mi(G, eta, per_variable=False, cap=2 * cap)
    return out


def conditional_entropy_mc(n: int, D, k: int, family: WeightFamily, samples: int = 100,
                           seed=0, T: float = 0.0, alpha: float | None = 0.01,
                           beta: float | None = 0.1, exact: bool = False,
                           cap=None, inner: str = "gibbs") -> Estimate:
    """``H(sigma* | G*) / n`` as mean +- stderr over planted graphs.

    ``inner='gibbs'`` draws complete planted graphs and takes the exact
    entropy of each Gibbs measure (by the Nishimori identity this is the
    posterior entropy of ``sigma*``).  ``inner='channel'`` (parity family,
    no pins) draws only the unweighted graph and averages exactly over the
    ground truth and the weights, which removes the weight noise from the
    outer average.  ``MI/n = ln q - value``.
    """
    if inner == "gibbs":
        h = planted_entropies(n, D, k, family, samples, seed, T, alpha, beta, exact, cap)
    elif inner == "channel":
        from .ldgm import code_family_eta
        eta = code_family_eta(family)
        if eta is None or T > 0:
            raise ValueError("channel averaging needs the parity family and T = 0")
        h = channel_averaged_entropies(n, D, k, eta, samples, seed, alpha, beta, exact,
                                       cap or 22)
    else:
        raise ValueError("inner must be 'gibbs' or 'channel'")
    h = h / n
    se = float(h.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return Estimate(float(h.mean()), se)


def mi_per_n(H: Estimate, q: int = 2) -> Estimate:
    return Estimate(float(np.log(q) - H.value), H.stderr)


def planted_code_mi_oracle(inst_graph: FactorGraph, family: WeightFamily) -> float:
    """Expected entropy of ``mu_G`` over weights for a fixed unweighted graph.

    Exhaustive over ground truths and weight choices; usable only for a
    handful of variables and checks.  Returns ``H(sigma* | G*)`` in nats.
    """
    n, q = inst_graph.n, family.q
    dig = _digits(n, q)
    M = inst_graph.num_checks
    nf = len(family.functions)
    total = 0.0
    for choice in np.ndindex(*(nf,) * M):
        G = inst_graph.with_weights([family.functions[i] for i in choice])
        logw = graph_log_weights(G)
        # P[weights] = sum_sigma q^-n prod_a p(psi_a) psi_a(sigma(da)) / denom
        tabs = family.tables
        denom = np.tensordot(family.prior, tabs, axes=1)
        logp = np.zeros(q ** n)
        for c, i in zip(inst_graph.checks, choice):
            idx = np.zeros(q ** n, dtype=np.int64)
            for x in c.neighborhood:
                idx = idx * q + dig[:, x]
            with np.errstate(divide="ignore"):
                logp += np.log(family.prior[i] * tabs[i].ravel()[idx] / denom.ravel()[idx])
        pw = float(np.exp(logp).sum() / q ** n)
        if pw > 0:
            mu, _ = _normalise(logw)
            total += pw * entropy_of(mu)
    return total
