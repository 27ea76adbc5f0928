"""Exact Gibbs computations on small factor graphs by full enumeration.

Assignments are enumerated as integer codes ``0..q^n-1``; variable ``x`` of
code ``c`` is the digit ``(c // q**x) % q``.  Everything is done in log space
so that boundary tables with zero entries (and pins) are handled as ``-inf``.
Beyond the enumeration cap a single-site heat-bath sampler gives
approximate answers; those are flagged and carry no exactness guarantee.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .graphs import FactorGraph
from .rng import as_generator

DEFAULT_CAP = 22
CHUNK = 1 << 16


class EnumerationCapError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    values: np.ndarray
    q: int = 2

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 1 or np.any(v < 0) or np.any(v >= self.q):
            raise ValueError("assignment entries must be symbol indices in [0, q)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return len(self.values)

    def code(self) -> int:
        return int(np.sum(self.values * self.q ** np.arange(self.n)))


@dataclass(frozen=True)
class GibbsSummary:
    logZ: float
    marginals: np.ndarray
    entropy: float

    def to_json(self) -> str:
        return json.dumps({"logZ": self.logZ, "entropy": self.entropy,
                           "marginals": np.asarray(self.marginals).tolist()})


@lru_cache(maxsize=4)
def _digits(n: int, q: int) -> np.ndarray:
    codes = np.arange(q ** n, dtype=np.int64)
    out = np.empty((q ** n, n), dtype=np.int8)
    for x in range(n):
        out[:, x] = (codes // q ** x) % q
    out.setflags(write=False)
    return out


def all_assignments(n: int, q: int = 2) -> np.ndarray:
    """``(q^n, n)`` array of symbol indices in code order."""
    return _digits(n, q)


def _check_cap(n: int, q: int, cap: int | None):
    cap = DEFAULT_CAP if cap is None else cap
    # the cap is stated for q = 2; for larger alphabets compare state counts
    if q ** n > 2 ** cap:
        raise EnumerationCapError(f"q^n = {q}^{n} exceeds the enumeration cap 2^{cap}")


def log_weight_vector(n: int, q: int, factors: Sequence, pins: Sequence = (),
                      cap: int | None = None) -> np.ndarray:
    """``sum_a log f_a(sigma(da))`` for every assignment, ``-inf`` where a pin fails.

    ``factors`` is a sequence of ``(neighbourhood, log_table)`` pairs.
    """
    _check_cap(n, q, cap)
    dig = _digits(n, q)
    logw = np.zeros(q ** n)
    for nb, lt in factors:
        lt = np.asarray(lt, dtype=float)
        idx = np.zeros(q ** n, dtype=np.int64)
        for x in nb:
            idx = idx * q + dig[:, x]
        logw += lt.ravel()[idx]
    for x, s in pins:
        logw[dig[:, x] != s] = -np.inf
    return logw


def _log_table(t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(t)


def graph_log_weights(G: FactorGraph, cap: int | None = None) -> np.ndarray:
    if not G.is_weighted:
        raise ValueError("Gibbs computations need a weight on every check")
    cache = {}
    factors = []
    for c in G.checks:
        key = id(c.weight)
        if key not in cache:
            cache[key] = _log_table(c.weight.table)
        factors.append((c.neighborhood, cache[key]))
    return log_weight_vector(G.n, G.q, factors, G.pins, cap)


def _normalise(logw: np.ndarray):
    m = np.max(logw)
    if not np.isfinite(m):
        raise ValueError("all assignments have zero weight")
    w = np.exp(logw - m)
    s = w.sum()
    return w / s, float(m + np.log(s))


def partition_function(G: FactorGraph, cap: int | None = None) -> float:
    """``Z(G)``; see :func:`log_partition_function` for the log."""
    logw = graph_log_weights(G, cap)
    m = np.max(logw)
    return float(np.exp(m) * np.exp(logw - m).sum())


def log_partition_function(G: FactorGraph, cap: int | None = None) -> float:
    return _normalise(graph_log_weights(G, cap))[1]


def gibbs_measure(G: FactorGraph, cap: int | None = None) -> np.ndarray:
    """Probability of every assignment code under ``mu_G``."""
    return _normalise(graph_log_weights(G, cap))[0]


def entropy_of(mu: np.ndarray) -> float:
    p = mu[mu > 0]
    return float(-np.sum(p * np.log(p)))


def marginals_of(mu: np.ndarray, n: int, q: int) -> np.ndarray:
    dig = _digits(n, q)
    out = np.empty((n, q))
    for x in range(n):
        out[x] = np.bincount(dig[:, x], weights=mu, minlength=q)
    return out


def summary_from_log_weights(logw: np.ndarray, n: int, q: int) -> GibbsSummary:
    mu, logZ = _normalise(logw)
    return GibbsSummary(logZ, marginals_of(mu, n, q), entropy_of(mu))


def gibbs_marginals(G: FactorGraph, cap: int | None = None) -> GibbsSummary:
    return summary_from_log_weights(graph_log_weights(G, cap), G.n, G.q)


def gibbs_expectation(G: FactorGraph, f: Callable, cap: int | None = None,
                      vectorized: bool = True) -> float:
    """``<f>_G``; ``f`` maps a ``(batch, n)`` array of symbol indices to values.

    With ``vectorized=False`` it is called once per assignment instead.
    """
    mu = gibbs_measure(G, cap)
    dig = _digits(G.n, G.q)
    keep = mu > 0
    sigmas = dig[keep]
    if vectorized:
        vals = np.asarray(f(sigmas), dtype=float)
    else:
        vals = np.array([f(s) for s in sigmas], dtype=float)
    return float(mu[keep] @ vals)


def pair_marginals(mu: np.ndarray, n: int, q: int) -> np.ndarray:
    """``P[sigma_x = a, sigma_y = b]`` as an ``(n, n, q, q)`` array."""
    dig = _digits(n, q)
    joint = np.zeros((n * q, n * q))
    cols = np.arange(n) * q
    for lo in range(0, len(mu), CHUNK):
        d = dig[lo:lo + CHUNK]
        h = np.zeros((len(d), n * q))
        h[np.arange(len(d))[:, None], cols + d] = 1.0
        joint += (h * mu[lo:lo + CHUNK, None]).T @ h
    return joint.reshape(n, q, n, q).transpose(0, 2, 1, 3)


def _symmetry_from_samples(samples: np.ndarray, ell: int, q: int) -> float:
    samples = np.asarray(samples, dtype=np.int64)
    S, n = samples.shape
    marg = np.stack([np.bincount(samples[:, x], minlength=q) / S for x in range(n)])
    total = 0.0
    for tup in itertools.product(range(n), repeat=ell):
        code = np.zeros(S, dtype=np.int64)
        for x in tup:
            code = code * q + samples[:, x]
        joint = np.bincount(code, minlength=q ** ell) / S
        prod = marg[tup[0]]
        for x in tup[1:]:
            prod = np.multiply.outer(prod, marg[x])
        total += 0.5 * np.abs(joint - prod.ravel()).sum()
    return total / n ** ell


def symmetry_metric(G: FactorGraph, ell: int = 2, samples: np.ndarray | None = None,
                    cap: int | None = None) -> float:
    """``n^-l sum_{x_1..x_l} TV(mu_{x_1..x_l}, mu_{x_1} x .. x mu_{x_l})``.

    The sum runs over all ordered tuples, repeated indices included.  Pass
    ``samples`` (rows of symbol indices) to use empirical marginals instead
    of exact enumeration.
    """
    if ell < 2:
        raise ValueError("ell must be at least 2")
    if samples is not None:
        return _symmetry_from_samples(samples, ell, G.q)
    n, q = G.n, G.q
    mu = gibbs_measure(G, cap)
    if ell == 2:
        joint = pair_marginals(mu, n, q)
        diag = joint[np.arange(n), np.arange(n)]
        marg = diag.diagonal(axis1=1, axis2=2)
        prod = marg[:, None, :, None] * marg[None, :, None, :]
        return float(0.5 * np.abs(joint - prod).sum() / n ** 2)
    dig = _digits(n, q)
    keep = mu > 0
    marg = marginals_of(mu, n, q)
    total = 0.0
    for tup in itertools.product(range(n), repeat=ell):
        code = np.zeros(int(keep.sum()), dtype=np.int64)
        for x in tup:
            code = code * q + dig[keep, x]
        joint = np.bincount(code, weights=mu[keep], minlength=q ** ell)
        prod = marg[tup[0]]
        for x in tup[1:]:
            prod = np.multiply.outer(prod, marg[x])
        total += 0.5 * np.abs(joint - prod.ravel()).sum()
    return total / n ** ell


def heat_bath_samples(G: FactorGraph, n_samples: int, seed, sweeps: int = 50,
                      thin: int = 1, init=None) -> np.ndarray:
    """Approximate samples from ``mu_G`` by single-site heat-bath updates.

    Meant for graphs beyond the enumeration cap; no exactness contract.
    """
    rng = as_generator(seed, "heat_bath")
    n, q = G.n, G.q
    incident = [[] for _ in range(n)]
    for a, c in enumerate(G.checks):
        for pos, x in enumerate(c.neighborhood):
            incident[x].append((a, pos))
    pinned = dict(G.pins)
    sigma = rng.integers(0, q, size=n) if init is None else np.array(init, dtype=np.int64)
    for x, s in pinned.items():
        sigma[x] = s
    out = np.empty((n_samples, n), dtype=np.int64)

    def sweep():
        for x in range(n):
            if x in pinned:
                continue
            logp = np.zeros(q)
            for a, pos in incident[x]:
                c = G.checks[a]
                for s in range(q):
                    sigma[x] = s
                    v = c.weight.table[tuple(sigma[list(c.neighborhood)])]
                    logp[s] += np.log(v) if v > 0 else -np.inf
            p = np.exp(logp - logp.max())
            sigma[x] = rng.choice(q, p=p / p.sum())

    for _ in range(sweeps):
        sweep()
    for i in range(n_samples):
        for _ in range(thin):
            sweep()
        out[i] = sigma
    return out
