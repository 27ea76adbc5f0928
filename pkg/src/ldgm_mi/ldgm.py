"""LDGM codes over a binary symmetric channel.

Message bits and spins are identified by ``spin = 1 - 2*bit``, which is also
the symbol index convention of :data:`graphs.SPINS`.  A codeword bit is the
mod-2 sum of its ``k`` message bits; the channel flips each codeword bit
independently with probability ``eta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cavity import (Estimate, MeanConstraintError, Population, SolverSettings, _mean_se,
                     _tau_digits, big_lambda, solve_sup)
from .graphs import (SPINS, DegreeDistribution, FactorGraph, WeightFamily, WeightFunction,
                     sym_deviations)
from .rng import as_generator

ENUM_CAP = 26


def binary_entropy(eta: float) -> float:
    """``h(eta)`` in nats."""
    return float(-sum(p * np.log(p) for p in (eta, 1.0 - eta) if p > 0))


def parity_table(k: int) -> np.ndarray:
    """``prod_i sigma_i`` over symbol indices, shape ``(2,)*k``."""
    spins = np.array([1.0, -1.0])
    t = spins
    for _ in range(k - 1):
        t = np.multiply.outer(t, spins)
    return t


def code_weight_family(k: int, eta: float, strict: bool = True) -> WeightFamily:
    """``psi_s(sigma) = 1 + s (1 - 2 eta) prod_i sigma_i`` for ``s = +-1``, uniform prior.

    ``strict=False`` allows ``eta`` in ``{0, 1}`` where the tables touch 0 and 2.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if strict and not 0.0 < eta < 1.0:
        raise ValueError("eta must lie strictly inside (0, 1)")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    par = parity_table(k)
    c = 1.0 - 2.0 * eta
    fns = (WeightFunction(1.0 + c * par, name="psi+1", strict=strict),
           WeightFunction(1.0 - c * par, name="psi-1", strict=strict))
    return WeightFamily(fns, np.array([0.5, 0.5]), SPINS)


def code_family_eta(family: WeightFamily):
    """Noise level if ``family`` is the parity family of some ``eta``, else ``None``."""
    if len(family.functions) != 2 or family.q != 2 or not np.allclose(family.prior, 0.5):
        return None
    par = parity_table(family.k)
    t0, t1 = family.functions[0].table, family.functions[1].table
    c = float(np.mean((t0 - 1.0) * par))
    if np.allclose(t0, 1.0 + c * par, atol=1e-12) and np.allclose(t1, 1.0 - c * par, atol=1e-12):
        return (1.0 - c) / 2.0
    return None


@dataclass(frozen=True)
class ChannelSpec:
    eta: float

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie strictly inside (0, 1)")

    def sample_j(self, rng, size=None):
        """Channel signs ``J = 1 - 2 Be(eta)``."""
        return np.where(rng.random(size) < self.eta, -1.0, 1.0)


@dataclass(frozen=True)
class CodeInstance:
    graph: FactorGraph
    message: np.ndarray
    codeword: np.ndarray

    def __post_init__(self):
        if not np.array_equal(encode(self.graph, self.message), np.asarray(self.codeword)):
            raise ValueError("codeword does not match the parities of the message")


def encode(G: FactorGraph, message) -> np.ndarray:
    msg = np.asarray(message, dtype=np.int64)
    if msg.shape != (G.n,):
        raise ValueError("message length must equal n")
    if G.num_checks == 0:
        return np.zeros(0, dtype=np.int64)
    nb = G.neighborhood_array()
    return msg[nb].sum(axis=1) % 2


def encode_transmit(G: FactorGraph, message, eta: float, seed):
    """Codeword ``x = A xi (mod 2)`` and its image through BSC(eta)."""
    x = encode(G, message)
    rng = as_generator(seed, "bsc")
    flips = (rng.random(len(x)) < eta).astype(np.int64)
    return x, (x + flips) % 2


def _fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform along a length-2^m vector."""
    a = a.copy()
    h = 1
    n = len(a)
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1)
        h *= 2
    return a.reshape(n)


@lru_cache(maxsize=4)
def _popcount(m: int) -> np.ndarray:
    s = np.arange(2 ** m, dtype=np.int64)
    w = np.zeros(2 ** m, dtype=np.int64)
    for b in range(m):
        w += (s >> b) & 1
    w.setflags(write=False)
    return w


def exact_code_mi(G: FactorGraph, eta: float, per_variable: bool = True,
                  cap: int = ENUM_CAP) -> float:
    """``I(X; Y)`` for a uniform message through the code and BSC(eta), in nats.

    ``H(Y)`` is computed exactly: the output law is the XOR-convolution of
    the codeword histogram with the i.i.d. noise law, done in the Walsh
    domain where the noise transform is ``(1-2eta)^{|s|}``.  Returns
    ``I/n`` unless ``per_variable`` is false.
    """
    n, M = G.n, G.num_checks
    if n + M > cap:
        raise ValueError(f"n + M = {n + M} exceeds the enumeration cap {cap}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if M == 0:
        return 0.0
    codes = np.arange(2 ** n, dtype=np.int64)
    words = np.zeros(2 ** n, dtype=np.int64)
    for j, nb in enumerate(G.neighborhoods()):
        bit = np.zeros(2 ** n, dtype=np.int64)
        for x in nb:
            bit ^= (codes >> x) & 1
        words |= bit << j
    hist = np.bincount(words, minlength=2 ** M).astype(float) / 2 ** n
    py = _fwht(_fwht(hist) * (1.0 - 2.0 * eta) ** _popcount(M)) / 2 ** M
    py = np.clip(py, 0.0, None)
    p = py[py > 0]
    hy = float(-np.sum(p * np.log(p)))
    mi = hy - M * binary_entropy(eta)
    mi = max(mi, 0.0) if abs(mi) < 1e-12 else mi
    return mi / n if per_variable else mi


def check_sym(family: WeightFamily) -> float:
    """``max_sigma |E_p[psi(sigma)] - xi|``."""
    return float(np.max(np.abs(sym_deviations(family))))


def check_pos_moments(k: int, eta: float, pop: Population, pop2: Population,
                      l_max: int = 10) -> list:
    """``E[((1-2eta)s)^l] (X_l^k + (k-1) Y_l^k - k X_l Y_l^{k-1})`` for ``l = 1..l_max``."""
    c = 1.0 - 2.0 * eta
    th, th2 = pop.thetas(), pop2.thetas()
    w, w2 = pop.probs, pop2.probs
    out = []
    for l in range(1, l_max + 1):
        if l % 2:
            out.append(0.0)
            continue
        X, Y = float(w @ th ** l), float(w2 @ th2 ** l)
        out.append(c ** l * (X ** k + (k - 1) * Y ** k - k * X * Y ** (k - 1)))
    return out


def check_pos_general(family: WeightFamily, pi: Population, pi2: Population,
                      mc_samples: int = 100_000, seed=0, batch: int = 65536) -> Estimate:
    """Monte Carlo of ``E[Lambda(A) + (k-1) Lambda(A') - k Lambda(A_mix)]``.

    ``A`` contracts ``psi`` with ``mu_1..mu_k`` from ``pi``, ``A'`` with
    ``mu'_1..mu'_k`` from ``pi2`` and ``A_mix`` with ``mu_1, mu'_2..mu'_k``.
    The three terms share draws; each keeps its own marginal law.
    """
    k, q = family.k, family.q
    dig = _tau_digits(k, q)
    tabs = family.tables
    rng = as_generator(seed, "check_pos_general")
    m1, m2 = pi.measures(), pi2.measures()
    vals = []
    for lo in range(0, mc_samples, batch):
        B = min(batch, mc_samples - lo)
        psi = tabs[family.sample(rng, B)].reshape(B, -1)
        a = m1[pi.sample_indices(rng, (B, k))]
        b = m2[pi2.sample_indices(rng, (B, k))]
        mix = b.copy()
        mix[:, 0] = a[:, 0]

        def contract(mus):
            prod = np.ones((B, dig.shape[0]))
            for j in range(k):
                prod *= mus[:, j, dig[:, j]]
            return (psi * prod).sum(axis=1)

        vals.append(big_lambda(contract(a)) + (k - 1) * big_lambda(contract(b))
                    - k * big_lambda(contract(mix)))
    return Estimate(*_mean_se(np.concatenate(vals)))


def l_functional(k: int, D: DegreeDistribution, eta: float, pop: Population,
                 mc_samples: int = 100_000, seed=0, hard_signs: bool = False,
                 tol: float = 1e-3) -> Estimate:
    """The code functional

        1/2 E[Lambda(sum_{sigma=+-1} prod_{a<=gamma} (1 + J_a sigma prod_{j<k} theta_{a,j}))]
        - (k-1)/k E[gamma] E[Lambda(1 + J prod_{j<=k} theta_j)].

    By default ``J`` is the soft channel value ``(1-2eta)(1-2Be(eta))``;
    ``hard_signs=True`` uses the bare signs ``1-2Be(eta)`` instead.
    """
    th = pop.thetas()
    if abs(pop.probs @ th) > tol:
        raise MeanConstraintError("population of thetas must have mean zero")
    rng = as_generator(seed, "l_functional")
    scale = 1.0 if hard_signs else 1.0 - 2.0 * eta

    def J(size):
        return scale * np.where(rng.random(size) < eta, -1.0, 1.0)

    first = []
    counts = rng.multinomial(mc_samples, D.probs)
    for gamma, cnt in zip(D.support.tolist(), counts.tolist()):
        if cnt == 0:
            continue
        if gamma == 0:
            first.append(np.full(cnt, 0.5 * big_lambda(2.0)))
            continue
        t = th[pop.sample_indices(rng, (cnt, gamma, k - 1))].prod(axis=2)
        u = J((cnt, gamma)) * t
        plus = np.prod(1.0 + u, axis=1)
        minus = np.prod(1.0 - u, axis=1)
        first.append(0.5 * big_lambda(np.clip(plus, 0, None) + np.clip(minus, 0, None)))
    m1, s1 = _mean_se(np.concatenate(first))
    coef = (k - 1) / k * D.mean
    if coef == 0:
        return Estimate(m1, s1)
    t = th[pop.sample_indices(rng, (mc_samples, k))].prod(axis=1)
    m2, s2 = _mean_se(big_lambda(np.clip(1.0 + J(mc_samples) * t, 0, None)))
    return Estimate(m1 - coef * m2, float(np.hypot(s1, coef * s2)))


def channel_term_codes(k: int, D: DegreeDistribution, eta: float,
                       constant: str = "half") -> float:
    """Channel term ``(E[gamma]/(2k)) (ln 2 - h(eta))``; ``constant='full'`` drops the 1/2."""
    base = D.mean / k * (np.log(2.0) - binary_entropy(eta))
    if constant == "half":
        return 0.5 * base
    if constant == "full":
        return base
    raise ValueError("constant must be 'half' or 'full'")


def mi_predict_codes(k: int, D: DegreeDistribution, eta: float,
                     settings: SolverSettings | None = None, constant: str = "half",
                     return_parts: bool = False):
    """Predicted ``lim I/n = -sup L + channel term + ln 2``.

    The sup is searched by population dynamics (see :func:`cavity.solve_sup`).
    ``constant`` selects between the two channel-term normalisations, see
    :func:`channel_term_codes`.
    """
    settings = settings or SolverSettings()
    sup, arg, diag = solve_sup(k, D, eta, settings)
    chan = channel_term_codes(k, D, eta, constant)
    est = Estimate(float(-sup.value + chan + np.log(2.0)), sup.stderr)
    if return_parts:
        return est, {"sup": sup, "channel": chan, "argmax": arg, "diagnostics": diag}
    return est


def mi_predictions_codes(k: int, D: DegreeDistribution, eta: float,
                         settings: SolverSettings | None = None) -> dict:
    """Both channel-term variants from one sup search."""
    settings = settings or SolverSettings()
    sup, arg, diag = solve_sup(k, D, eta, settings)
    base = -sup.value + np.log(2.0)
    return {"half": Estimate(float(base + channel_term_codes(k, D, eta, "half")), sup.stderr),
            "full": Estimate(float(base + channel_term_codes(k, D, eta, "full")), sup.stderr),
            "sup": sup, "diagnostics": diag}


# ---------------------------------------------------------------------------
# generator files
# ---------------------------------------------------------------------------

def code_to_text(G: FactorGraph) -> str:
    """``n M k`` header plus one neighbour tuple per codeword bit."""
    k = max((c.arity for c in G.checks), default=0)
    lines = [f"{G.n} {G.num_checks} {k}"]
    lines += [" ".join(map(str, c.neighborhood)) for c in G.checks]
    return "\n".join(lines) + "\n"


def code_from_text(text: str) -> FactorGraph:
    lines = [l.split() for l in text.strip().splitlines() if l.strip()]
    n, M, k = (int(v) for v in lines[0])
    rows = [tuple(int(v) for v in l) for l in lines[1:]]
    if len(rows) != M or any(len(r) != k for r in rows):
        raise ValueError("code file does not match its header")
    return FactorGraph(n, tuple(rows))
