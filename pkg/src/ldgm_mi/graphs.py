"""Alphabets, weight families, degree objects and random factor graphs.

Three generators produce unweighted graphs:

* :func:`configuration_model` realises a degree sequence exactly by drawing
  sockets one at a time,
* :func:`layered_model` adds batches of i.i.d. neighbourhoods layer by layer
  and only updates the socket counts between layers,
* :func:`alpha_beta_plan` chooses the Poisson layer sizes that turn the
  layered model into the multi-Poisson approximation of the configuration
  model.

Variables are indexed ``0..n-1`` and symbols by their position in the alphabet.
Neighbourhoods are ordered tuples and may repeat a variable.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rng import as_generator

log = logging.getLogger(__name__)

SUM_TOL = 1e-12


class RoundingWarning(UserWarning):
    """Class sizes ``n*D(l)`` were not integral and had to be rounded."""


class SocketExhaustion(RuntimeError):
    """The layered process ran out of sockets before its layers were used up.

    The graph built so far is attached as ``partial`` and the failing layer
    (1-based) as ``layer``.
    """

    def __init__(self, message, partial=None, layer=None):
        super().__init__(message)
        self.partial = partial
        self.layer = layer


# ---------------------------------------------------------------------------
# alphabet and weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Alphabet:
    symbols: tuple

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if len(self.symbols) < 2:
            raise ValueError("an alphabet needs at least two symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be distinct")

    @property
    def q(self) -> int:
        return len(self.symbols)

    def index(self, symbol) -> int:
        return self.symbols.index(symbol)

    def __len__(self):
        return self.q


#: The spin alphabet of the codes; index 0 is +1 and index 1 is -1.
SPINS = Alphabet((1, -1))


def spin_values(q: int = 2) -> np.ndarray:
    """Spin value of each symbol index of :data:`SPINS`."""
    return np.array([1.0, -1.0])[:q]


class WeightFunction:
    """A weight table ``psi: Omega^k -> (0, 2)`` stored as a ``(q,)*k`` array."""

    def __init__(self, table, name: str | None = None, strict: bool = True):
        table = np.array(table, dtype=float)
        if table.ndim < 1 or len(set(table.shape)) != 1:
            raise ValueError("weight table must have shape (q,)*k")
        if strict and not (np.all(table > 0.0) and np.all(table < 2.0)):
            raise ValueError(f"weight {name or ''} has entries outside (0, 2)")
        if not strict and not (np.all(table >= 0.0) and np.all(table <= 2.0)):
            raise ValueError(f"weight {name or ''} has entries outside [0, 2]")
        table.setflags(write=False)
        self.table = table
        self.name = name
        self.strict = strict

    @property
    def arity(self) -> int:
        return self.table.ndim

    @property
    def q(self) -> int:
        return self.table.shape[0]

    def __call__(self, *symbols) -> float:
        return float(self.table[tuple(symbols)])

    def evaluate(self, idx: np.ndarray) -> np.ndarray:
        """Evaluate on an integer array whose last axis holds the k symbols."""
        idx = np.asarray(idx)
        return self.table[tuple(idx[..., j] for j in range(self.arity))]

    def __eq__(self, other):
        return (isinstance(other, WeightFunction)
                and self.table.shape == other.table.shape
                and np.array_equal(self.table, other.table))

    def __hash__(self):
        return hash((self.table.shape, self.table.tobytes()))

    def __repr__(self):
        return f"WeightFunction({self.name!r}, arity={self.arity}, q={self.q})"


def indicator_weight(q: int, symbol: int) -> WeightFunction:
    """Unary pin weight ``tau -> 1{tau == symbol}`` (lives in [0, 2], not (0, 2))."""
    t = np.zeros(q)
    t[symbol] = 1.0
    return WeightFunction(t, name=f"pin{symbol}", strict=False)


@dataclass(frozen=True)
class WeightFamily:
    """A finite family of k-ary weight functions with prior ``p``.

    ``xi`` is the normaliser ``q^-k * sum_tau E_p[psi(tau)]``.
    """

    functions: tuple
    prior: np.ndarray
    alphabet: Alphabet = SPINS
    xi: float = field(init=False)

    def __post_init__(self):
        fns = tuple(self.functions)
        if not fns:
            raise ValueError("a weight family needs at least one function")
        prior = np.asarray(self.prior, dtype=float)
        if prior.shape != (len(fns),) or np.any(prior < 0):
            raise ValueError("prior must be a probability vector over the functions")
        if abs(prior.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"prior sums to {prior.sum()!r}, not 1")
        k = fns[0].arity
        for f in fns:
            if f.arity != k or f.q != self.alphabet.q:
                raise ValueError("all weight functions must share arity and alphabet")
        prior = prior.copy()
        prior.setflags(write=False)
        object.__setattr__(self, "functions", fns)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "xi", xi_of_family(self))

    @property
    def k(self) -> int:
        return self.functions[0].arity

    @property
    def q(self) -> int:
        return self.alphabet.q

    @property
    def tables(self) -> np.ndarray:
        """Stacked tables, shape ``(len(functions),) + (q,)*k``."""
        return np.stack([f.table for f in self.functions])

    def mean_table(self) -> np.ndarray:
        """``E_p[psi(tau)]`` for every ``tau``."""
        return np.tensordot(self.prior, self.tables, axes=1)

    def sample(self, rng, size=None):
        return rng.choice(len(self.functions), size=size, p=self.prior)


def xi_of_family(family: WeightFamily) -> float:
    tables = np.stack([f.table for f in family.functions])
    mean = np.tensordot(np.asarray(family.prior, float), tables, axes=1)
    return float(mean.sum() / mean.size)


def sym_deviations(family: WeightFamily) -> np.ndarray:
    """``E_p[psi(sigma)] - xi`` for every ``sigma`` in ``Omega^k``."""
    return family.mean_table() - family.xi


def constant_family(k: int, q: int = 2, value: float = 1.0) -> WeightFamily:
    alphabet = SPINS if q == 2 else Alphabet(tuple(range(q)))
    return WeightFamily((WeightFunction(np.full((q,) * k, value), name="const"),),
                        np.array([1.0]), alphabet)


# ---------------------------------------------------------------------------
# degrees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegreeDistribution:
    """Finite-support degree law ``D``."""

    mass: Mapping[int, float]

    def __post_init__(self):
        mass = {int(l): float(p) for l, p in dict(self.mass).items() if float(p) != 0.0}
        if not mass:
            raise ValueError("degree distribution is empty")
        if any(l < 0 for l in mass) or any(p < 0 for p in mass.values()):
            raise ValueError("degrees and probabilities must be non-negative")
        total = sum(mass.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"degree probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "mass", dict(sorted(mass.items())))

    @classmethod
    def point(cls, degree: int) -> "DegreeDistribution":
        return cls({degree: 1.0})

    @property
    def support(self) -> np.ndarray:
        return np.array(list(self.mass), dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array(list(self.mass.values()))

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def max_degree(self) -> int:
        return int(self.support.max())

    def sample(self, rng, size=None):
        return rng.choice(self.support, size=size, p=self.probs)

    def size_biased(self) -> "DegreeDistribution":
        """Excess-degree law ``l - 1`` with probability ``l D(l) / E[gamma]``."""
        m = self.mean
        if m == 0:
            raise ValueError("size-biased law undefined for E[gamma] = 0")
        return DegreeDistribution({l - 1: l * p / m for l, p in self.mass.items() if l > 0})

    def to_json(self) -> dict:
        return {str(l): p for l, p in self.mass.items()}


@dataclass(frozen=True)
class DegreeSequence:
    degrees: np.ndarray
    rounded: bool = False

    def __post_init__(self):
        d = np.array(self.degrees, dtype=np.int64)
        if d.ndim != 1:
            raise ValueError("degree sequence must be a vector")
        if np.any(d < 0):
            raise ValueError("degrees must be non-negative")
        d.setflags(write=False)
        object.__setattr__(self, "degrees", d)

    @property
    def n(self) -> int:
        return len(self.degrees)

    @property
    def total(self) -> int:
        return int(self.degrees.sum())

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0


@dataclass
class SocketState:
    """Remaining sockets ``delta_s`` during a layered/sequential construction."""

    remaining: np.ndarray
    layer: int = 1

    @property
    def total(self) -> int:
        return int(self.remaining.sum())

    @property
    def nu(self) -> np.ndarray:
        t = self.remaining.sum()
        if t <= 0:
            raise SocketExhaustion("no sockets left", layer=self.layer)
        return self.remaining / t

    def advance(self, drawn_counts: np.ndarray) -> np.ndarray:
        """Apply ``delta <- (delta - nabla)_+``; returns the clipped amounts."""
        new = self.remaining - drawn_counts
        clipped = np.maximum(-new, 0)
        self.remaining = np.maximum(new, 0)
        self.layer += 1
        return clipped


def sample_d_partition(n: int, D: DegreeDistribution, seed) -> DegreeSequence:
    """Uniform random assignment of degrees with class sizes ``n*D(l)``.

    Non-integral class sizes are rounded by the largest-remainder rule so they
    still add up to ``n``; the result is flagged and a warning issued.
    """
    rng = as_generator(seed, "d_partition")
    raw = n * D.probs
    sizes = np.floor(raw + 1e-9).astype(np.int64)
    rounded = bool(np.any(np.abs(raw - np.round(raw)) > 1e-9))
    short = n - int(sizes.sum())
    if short > 0:
        rem = raw - sizes
        order = np.lexsort((D.support, -rem))  # ties: smaller degree first
        sizes[order[:short]] += 1
    if rounded:
        warnings.warn(f"n*D(l) not integral for n={n}; class sizes rounded to "
                      f"{dict(zip(D.support.tolist(), sizes.tolist()))}", RoundingWarning,
                      stacklevel=2)
    degrees = np.repeat(D.support, sizes)
    return DegreeSequence(rng.permutation(degrees), rounded=rounded)


# ---------------------------------------------------------------------------
# factor graphs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    neighborhood: tuple
    weight: WeightFunction | None = None

    @property
    def arity(self) -> int:
        return len(self.neighborhood)


@dataclass(frozen=True)
class FactorGraph:
    """Variables ``0..n-1``, checks with ordered neighbourhoods, unary pins.

    ``pins`` holds ``(variable, symbol_index)`` pairs; a pin acts as the
    indicator factor ``1{sigma_x = symbol}``.
    """

    n: int
    checks: tuple = ()
    pins: tuple = ()
    q: int = 2

    def __post_init__(self):
        checks = tuple(c if isinstance(c, Check) else Check(tuple(c)) for c in self.checks)
        for c in checks:
            nb = tuple(int(x) for x in c.neighborhood)
            if not nb or min(nb) < 0 or max(nb) >= self.n:
                raise ValueError(f"neighbourhood {nb} outside [0, {self.n})")
            if c.weight is not None and (c.weight.arity != len(nb) or c.weight.q != self.q):
                raise ValueError(f"weight arity/alphabet does not match check {nb}")
            object.__setattr__(c, "neighborhood", nb)
        pins = tuple((int(x), int(s)) for x, s in self.pins)
        for x, s in pins:
            if not (0 <= x < self.n and 0 <= s < self.q):
                raise ValueError(f"invalid pin ({x}, {s})")
        object.__setattr__(self, "checks", checks)
        object.__setattr__(self, "pins", pins)

    @property
    def num_checks(self) -> int:
        return len(self.checks)

    @property
    def is_weighted(self) -> bool:
        return all(c.weight is not None for c in self.checks)

    def neighborhoods(self) -> list:
        return [c.neighborhood for c in self.checks]

    def neighborhood_array(self) -> np.ndarray:
        """``(M, k)`` array; only for graphs whose checks share one arity."""
        if not self.checks:
            return np.zeros((0, 0), dtype=np.int64)
        return np.array(self.neighborhoods(), dtype=np.int64)

    def variable_degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for c in self.checks:
            for x in c.neighborhood:
                deg[x] += 1
        return deg

    def with_weights(self, weights: Sequence[WeightFunction]) -> "FactorGraph":
        if len(weights) != len(self.checks):
            raise ValueError("need one weight per check")
        return FactorGraph(self.n, tuple(Check(c.neighborhood, w)
                                         for c, w in zip(self.checks, weights)),
                           self.pins, self.q)

    def unweighted(self) -> "FactorGraph":
        return FactorGraph(self.n, tuple(Check(c.neighborhood) for c in self.checks),
                           (), self.q)

    def with_pins(self, pins: Iterable) -> "FactorGraph":
        return FactorGraph(self.n, self.checks, self.pins + tuple(pins), self.q)

    def add_checks(self, checks: Iterable) -> "FactorGraph":
        return FactorGraph(self.n, self.checks + tuple(checks), self.pins, self.q)

    # -- text format ---------------------------------------------------------

    def to_text(self, weight_ids: Mapping | None = None) -> str:
        """Line format: header ``n k |F|``, ``a: x1 .. xk [weight-id]``, ``pin: x s``.

        ``weight_ids`` maps :class:`WeightFunction` objects to ids; without it
        weights are numbered in order of first appearance (see
        :meth:`weight_registry`).
        """
        if weight_ids is None:
            weight_ids = self.weight_registry()[0]
        k = max((c.arity for c in self.checks), default=0)
        lines = [f"{self.n} {k} {len(self.checks)}"]
        for a, c in enumerate(self.checks):
            row = f"{a}: " + " ".join(map(str, c.neighborhood))
            if c.weight is not None:
                row += f" [{weight_ids[c.weight]}]"
            lines.append(row)
        for x, s in self.pins:
            lines.append(f"pin: {x} {s}")
        return "\n".join(lines) + "\n"

    def weight_registry(self):
        """``(weight -> id, id -> table-as-nested-list)`` for the graph's weights."""
        ids, tables = {}, {}
        for c in self.checks:
            if c.weight is not None and c.weight not in ids:
                wid = c.weight.name if (c.weight.name and c.weight.name not in tables) \
                    else f"w{len(ids)}"
                ids[c.weight] = wid
                tables[wid] = c.weight.table.tolist()
        return ids, tables

    def weights_json(self) -> str:
        return json.dumps(self.weight_registry()[1], sort_keys=True)

    @classmethod
    def from_text(cls, text: str, weights: Mapping | str | None = None, q: int = 2):
        """Inverse of :meth:`to_text`; ``weights`` maps ids to tables (or JSON)."""
        if isinstance(weights, str):
            weights = json.loads(weights)
        weights = {wid: WeightFunction(t, name=wid, strict=False)
                   for wid, t in (weights or {}).items()}
        lines = [l.strip() for l in text.strip().splitlines() if l.strip()]
        n, _, m = (int(v) for v in lines[0].split())
        checks, pins = [], []
        for line in lines[1:]:
            head, rest = line.split(":", 1)
            if head.strip() == "pin":
                x, s = rest.split()
                pins.append((int(x), int(s)))
                continue
            parts = rest.split()
            w = None
            if parts and parts[-1].startswith("["):
                wid = parts.pop()[1:-1]
                if wid not in weights:
                    raise ValueError(f"unknown weight id {wid!r}")
                w = weights[wid]
            checks.append(Check(tuple(int(v) for v in parts), w))
        if len(checks) != m:
            raise ValueError(f"header announces {m} checks, found {len(checks)}")
        return cls(n, tuple(checks), tuple(pins), q)


@dataclass(frozen=True)
class LayerPlan:
    counts: np.ndarray
    alpha: float
    beta: float
    s_max: int

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _as_degrees(d) -> np.ndarray:
    return d.degrees if isinstance(d, DegreeSequence) else np.asarray(d, dtype=np.int64)


def configuration_model(d, k: int, seed) -> FactorGraph:
    """Exact configuration model: draw sockets sequentially from ``nu_s``.

    Drawing a variable with probability proportional to its remaining
    sockets and decrementing is the same law as reading off a uniformly
    random permutation of the socket list, which is how it is done here.
    Every block of ``k`` consecutive draws forms one check.
    """
    degrees = _as_degrees(d)
    total = int(degrees.sum())
    if total % k:
        raise ValueError(f"sum of degrees {total} is not divisible by k={k}")
    rng = as_generator(seed, "configuration_model")
    sockets = rng.permutation(np.repeat(np.arange(len(degrees)), degrees))
    return FactorGraph(len(degrees), tuple(map(tuple, sockets.reshape(-1, k).tolist())))


def layered_model(d, plan, k: int, seed) -> FactorGraph:
    """Layered model: ``m_s`` i.i.d. neighbourhoods from ``nu_s^{(x)k}`` per layer.

    Socket counts are updated once per layer with ``(delta - nabla)_+``.
    Raises :class:`SocketExhaustion` (partial graph attached) when a layer
    needs neighbours but no sockets are left.
    """
    degrees = _as_degrees(d)
    counts = plan.counts if isinstance(plan, LayerPlan) else np.asarray(plan, dtype=np.int64)
    if np.any(np.asarray(counts) < 0):
        raise ValueError("layer counts must be non-negative")
    rng = as_generator(seed, "layered_model")
    n = len(degrees)
    state = SocketState(degrees.astype(np.int64).copy())
    nbs = []
    for s, m in enumerate(counts, start=1):
        m = int(m)
        if m == 0:
            state.layer += 1
            continue
        tot = state.remaining.sum()
        if tot == 0:
            raise SocketExhaustion(f"sockets exhausted in layer {s}",
                                   partial=FactorGraph(n, tuple(nbs)), layer=s)
        draws = rng.choice(n, size=(m, k), p=state.remaining / tot)
        nbs.extend(map(tuple, draws.tolist()))
        state.advance(np.bincount(draws.ravel(), minlength=n))
    return FactorGraph(n, tuple(nbs))


def alpha_beta_plan(d, k: int, alpha: float, beta: float, seed) -> LayerPlan:
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if beta <= 0:
        raise ValueError("beta must be positive")
    total = int(_as_degrees(d).sum())
    s_max = int(np.floor((1.0 - alpha) * total / (beta * k) + 1e-9))
    rng = as_generator(seed, "alpha_beta_plan")
    return LayerPlan(rng.poisson(beta, size=s_max), alpha, beta, s_max)


def tv_shift_distance(delta, c) -> float:
    """``TV(nu, nu')`` for ``nu ~ delta`` and ``nu' ~ (delta - c)_+``."""
    delta = np.asarray(delta, dtype=float)
    shifted = np.maximum(delta - np.asarray(c, dtype=float), 0.0)
    if delta.sum() <= 0 or shifted.sum() <= 0:
        raise ValueError("degenerate socket vector")
    nu, nu2 = delta / delta.sum(), shifted / shifted.sum()
    return float(np.maximum(nu - nu2, 0.0).sum())
