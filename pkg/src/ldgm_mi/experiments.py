"""Coupling of the layered and exact graph processes, and the interpolation ensemble.

Both experiments need many socket draws from ``nu_s ~ delta_s``.  They run
in small numba kernels that maintain a Fenwick tree over the socket counts.
All randomness comes from pre-drawn Philox uniforms, so results are a pure
function of the seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .cavity import Estimate, Population, _draw_measures, _messages, _tau_digits
from .graphs import (Check, DegreeDistribution, DegreeSequence, FactorGraph, SocketExhaustion,
                     WeightFamily, WeightFunction, alpha_beta_plan, sample_d_partition)
from .planted import sample_pin_set, tilted_probabilities
from .rng import as_generator, child_seed


# ---------------------------------------------------------------------------
# Fenwick tree kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _fw_build(vals):
    n = vals.shape[0]
    tree = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        tree[i + 1] += vals[i]
        j = i + 1 + ((i + 1) & -(i + 1))
        if j <= n:
            tree[j] += tree[i + 1]
    return tree


@numba.njit(cache=True)
def _fw_add(tree, i, delta):
    n = tree.shape[0] - 1
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & -j


@numba.njit(cache=True)
def _fw_find(tree, target):
    """Smallest index whose prefix sum exceeds ``target`` (0 <= target < total)."""
    n = tree.shape[0] - 1
    pos = 0
    step = 1
    while step * 2 <= n:
        step *= 2
    rem = target
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= rem:
            pos = nxt
            rem -= tree[nxt]
        step //= 2
    return pos


@numba.njit(cache=True)
def _draw(tree, total, u):
    t = np.int64(u * total)
    if t >= total:
        t = total - 1
    return _fw_find(tree, t)


@numba.njit(cache=True)
def _layered_kernel(deg, kary, unary, k, U):
    """Layered draws: per layer ``kary[s]`` k-tuples and ``unary[s]`` singletons.

    Returns (k-ary neighbourhoods, unary targets, clip events, failed layer or -1).
    """
    n = deg.shape[0]
    delta = deg.copy()
    tree = _fw_build(delta)
    total = delta.sum()
    nk = kary.sum()
    nu = unary.sum()
    nb = np.empty((nk, k), dtype=np.int64)
    tg = np.empty(nu, dtype=np.int64)
    drawn = np.zeros(n, dtype=np.int64)
    touched = np.empty(k * nk + nu, dtype=np.int64)
    ia = 0
    ib = 0
    iu = 0
    clips = 0
    for s in range(kary.shape[0]):
        need = kary[s] * k + unary[s]
        if need == 0:
            continue
        if total <= 0:
            return nb[:ia], tg[:ib], clips, s
        nt = 0
        for a in range(kary[s]):
            for j in range(k):
                x = _draw(tree, total, U[iu])
                iu += 1
                nb[ia, j] = x
                if drawn[x] == 0:
                    touched[nt] = x
                    nt += 1
                drawn[x] += 1
            ia += 1
        for b in range(unary[s]):
            x = _draw(tree, total, U[iu])
            iu += 1
            tg[ib] = x
            ib += 1
            if drawn[x] == 0:
                touched[nt] = x
                nt += 1
            drawn[x] += 1
        for i in range(nt):
            x = touched[i]
            new = delta[x] - drawn[x]
            if new < 0:
                clips += 1
                new = 0
            _fw_add(tree, x, new - delta[x])
            total += new - delta[x]
            delta[x] = new
            drawn[x] = 0
    return nb, tg, clips, -1


@numba.njit(cache=True)
def _coupling_kernel(deg, layers, k, U):
    """Draw-by-draw maximal coupling of the layered and the sequential process.

    ``U`` holds three uniforms per approximate draw.  Returns
    (approx nbhds, exact nbhds of paired checks, remaining exact sockets,
    differing checks, clip events, mismatched draws, failed layer or -1).
    """
    n = deg.shape[0]
    dA = deg.copy()
    dE = deg.copy()
    tree = _fw_build(dA)
    TA = dA.sum()
    TE = dE.sum()
    MA = layers.sum()
    ME = TE // k
    anb = np.empty((MA, k), dtype=np.int64)
    enb = np.empty((min(MA, ME), k), dtype=np.int64)
    drawn = np.zeros(n, dtype=np.int64)
    touched = np.empty(k * MA, dtype=np.int64)
    ia = 0
    iu = 0
    diff = 0
    clips = 0
    mism = 0
    for s in range(layers.shape[0]):
        m = layers[s]
        if m == 0:
            continue
        if TA <= 0:
            return anb[:ia], enb[:min(ia, ME)], dE, diff, clips, mism, s
        nt = 0
        for a in range(m):
            paired = ia < ME
            differs = False
            for j in range(k):
                x = _draw(tree, TA, U[iu, 0])
                anb[ia, j] = x
                if drawn[x] == 0:
                    touched[nt] = x
                    nt += 1
                drawn[x] += 1
                if paired:
                    pA = dA[x] / TA
                    pE = dE[x] / TE
                    if U[iu, 1] * pA < pE:
                        y = x
                    else:
                        tv = 0.0
                        for v in range(n):
                            r = dE[v] / TE - dA[v] / TA
                            if r > 0:
                                tv += r
                        target = U[iu, 2] * tv
                        y = -1
                        acc = 0.0
                        last = -1
                        for v in range(n):
                            r = dE[v] / TE - dA[v] / TA
                            if r > 0:
                                last = v
                                acc += r
                                if acc > target:
                                    y = v
                                    break
                        if y < 0:
                            y = last
                    if y != x:
                        differs = True
                        mism += 1
                    enb[ia, j] = y
                    dE[y] -= 1
                    TE -= 1
                iu += 1
            if not paired or differs:
                diff += 1
            ia += 1
        for i in range(nt):
            x = touched[i]
            new = dA[x] - drawn[x]
            if new < 0:
                clips += 1
                new = 0
            _fw_add(tree, x, new - dA[x])
            TA += new - dA[x]
            dA[x] = new
            drawn[x] = 0
    return anb, enb[:min(ia, ME)], dE, diff, clips, mism, -1


# ---------------------------------------------------------------------------
# coupling experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingReport:
    n: int
    alpha: float
    beta: float
    differing_checks: int
    truncation_events: int
    seeds: dict
    approx_checks: int = 0
    exact_checks: int = 0
    completion_checks: int = 0
    mismatched_draws: int = 0
    exhausted: bool = False

    def __post_init__(self):
        if self.differing_checks < 0:
            raise ValueError("C_F must be non-negative")
        if self.differing_checks > max(self.approx_checks, self.exact_checks):
            raise ValueError("C_F exceeds the check count")


def _degrees(n, D, seed):
    if isinstance(D, DegreeDistribution):
        return sample_d_partition(n, D, child_seed(seed, "degrees"))
    d = D if isinstance(D, DegreeSequence) else DegreeSequence(D)
    if d.n != n:
        raise ValueError("degree sequence length differs from n")
    return d


def coupled_generate(n: int, D, k: int, alpha: float, beta: float, seed,
                     on_exhaustion: str = "raise"):
    """Approximate and exact graphs from shared randomness.

    Check ``i`` of the layered graph and check ``i`` of the configuration
    model are built draw by draw from a maximal coupling of ``nu_s`` (frozen
    within the layer) and the current exact socket law.  ``C_F`` counts
    paired checks whose ordered neighbourhoods differ, plus layered checks
    without an exact partner.  Exact checks beyond the layered count are
    completion checks, reported separately.

    If the layered process runs out of sockets, ``on_exhaustion='raise'``
    raises :class:`SocketExhaustion`; ``'count'`` keeps the partial graph and
    counts every planned but unbuilt check as differing (none of them can
    have an exact partner, the exact process runs dry first).
    """
    if on_exhaustion not in ("raise", "count"):
        raise ValueError("on_exhaustion must be 'raise' or 'count'")
    d = _degrees(n, D, seed)
    if d.total % k:
        raise ValueError(f"sum of degrees {d.total} is not divisible by k={k}")
    plan = alpha_beta_plan(d, k, alpha, beta, child_seed(seed, "plan"))
    counts = np.asarray(plan.counts, dtype=np.int64)
    rng = as_generator(seed, "coupling")
    U = rng.random((int(counts.sum()) * k, 3))
    anb, enb, dE, diff, clips, mism, fail = _coupling_kernel(
        d.degrees.astype(np.int64), counts, k, U)
    approx_g = FactorGraph(n, tuple(map(tuple, anb.tolist())))
    unbuilt = 0
    if fail >= 0:
        if on_exhaustion == "raise":
            raise SocketExhaustion(f"layered process exhausted in layer {fail + 1}",
                                   partial=approx_g, layer=fail + 1)
        unbuilt = int(counts[fail:].sum())
    rest = as_generator(seed, "completion").permutation(np.repeat(np.arange(n), dE))
    exact = np.vstack([enb, rest.reshape(-1, k)]) if len(rest) else enb
    exact_g = FactorGraph(n, tuple(map(tuple, exact.tolist())))
    rep = CouplingReport(n, alpha, beta, int(diff) + unbuilt, int(clips), {"seed": seed},
                         approx_checks=len(anb) + unbuilt, exact_checks=len(exact),
                         completion_checks=len(rest) // k, mismatched_draws=int(mism),
                         exhausted=fail >= 0)
    return approx_g, exact_g, rep


@dataclass(frozen=True)
class ScalingResult:
    slope: float
    stderr: float
    ci: tuple
    rows: list = field(default_factory=list)

    @property
    def ci_contains_zero(self) -> bool:
        return self.ci[0] <= 0.0 <= self.ci[1]


def coupling_rows(n_grid, reps, alpha, beta, D, k, seed, on_exhaustion: str = "resample",
                  max_retries: int = 100):
    """Per-n means of ``C_F`` (CSV rows) and the raw samples.

    ``on_exhaustion='resample'`` redraws a repetition whose layered process
    ran dry (the layered graph is only defined on success) and reports how
    many redraws were needed; ``'count'`` keeps such runs, see
    :func:`coupled_generate`.
    """
    if on_exhaustion not in ("resample", "count"):
        raise ValueError("on_exhaustion must be 'resample' or 'count'")
    rows, xs, ys = [], [], []
    for n in n_grid:
        cf, tr, ex = [], [], 0
        for r in range(reps):
            for attempt in range(max_retries):
                s = child_seed(seed, "rep", n, r) if attempt == 0 else \
                    child_seed(seed, "rep", n, r, "retry", attempt)
                try:
                    mode = "count" if on_exhaustion == "count" else "raise"
                    _, _, rep = coupled_generate(int(n), D, k, alpha, beta, s, on_exhaustion=mode)
                except SocketExhaustion:
                    ex += 1
                    continue
                ex += on_exhaustion == "count" and rep.exhausted
                break
            else:
                raise SocketExhaustion(f"n={n}: {max_retries} consecutive exhaustions")
            cf.append(rep.differing_checks)
            tr.append(rep.truncation_events)
        cf = np.array(cf, dtype=float)
        rows.append({"n": int(n), "alpha": alpha, "beta": beta, "mean_CF": float(cf.mean()),
                     "stderr": float(cf.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
                     "truncations": float(np.mean(tr)), "exhausted": int(ex)})
        xs.extend([n] * reps)
        ys.extend(cf.tolist())
    return rows, np.array(xs, dtype=float), np.array(ys)


def regression_slope(x, y, level: float = 0.95) -> tuple:
    """Least-squares slope, its stderr and a t-based confidence interval."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.ptp(x) == 0:
        raise ValueError("need at least two distinct x values")
    res = stats.linregress(x, y)
    se = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    tq = stats.t.ppf(0.5 + level / 2, max(len(x) - 2, 1))
    return float(res.slope), se, (float(res.slope - tq * se), float(res.slope + tq * se))


def coupling_scaling_stat(n_grid, reps: int, alpha: float, beta: float, D, k: int,
                          seed, on_exhaustion: str = "resample") -> ScalingResult:
    """Regress ``C_F`` on ``n`` over all repetitions."""
    rows, xs, ys = coupling_rows(n_grid, reps, alpha, beta, D, k, seed, on_exhaustion)
    slope, se, ci = regression_slope(xs, ys)
    return ScalingResult(slope, se, ci, rows)


# ---------------------------------------------------------------------------
# interpolation ensemble
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterpolationPoint:
    s: int
    t: float
    T: float = 0.0
    pop: Population | None = None

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be a positive layer index")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if self.T < 0:
            raise ValueError("T must be non-negative")


@dataclass(frozen=True)
class PinnedGraph:
    """Interpolation graph: k-ary checks, unary checks with their own tables, pins."""

    n: int
    family: WeightFamily
    kary_nb: np.ndarray
    kary_psi: np.ndarray
    unary_var: np.ndarray
    unary_tables: np.ndarray
    pins: tuple
    reference: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def num_kary(self) -> int:
        return len(self.kary_nb)

    @property
    def num_unary(self) -> int:
        return len(self.unary_var)

    def to_factor_graph(self) -> FactorGraph:
        fam = self.family
        checks = [(tuple(nb), fam.functions[i]) for nb, i in zip(self.kary_nb.tolist(),
                                                                 self.kary_psi.tolist())]
        checks += [((int(x),), WeightFunction(t, name=f"u{j}"))
                   for j, (x, t) in enumerate(zip(self.unary_var.tolist(), self.unary_tables))]
        return FactorGraph(self.n, tuple(Check(nb, w) for nb, w in checks), self.pins, fam.q)

    def log_partition(self, cap=None) -> float:
        """``ln Z``; closed product form when there are no k-ary checks."""
        if self.num_kary:
            from .gibbs import log_partition_function
            return log_partition_function(self.to_factor_graph(), cap)
        q = self.family.q
        logs = np.zeros((self.n, q))
        np.add.at(logs, self.unary_var, np.log(self.unary_tables))
        for x, s in self.pins:
            keep = logs[x, s]
            logs[x] = -np.inf
            logs[x, s] = keep
        m = logs.max(axis=1, keepdims=True)
        return float(np.sum(m[:, 0] + np.log(np.exp(logs - m).sum(axis=1))))


def interpolation_counts(s_max: int, point: InterpolationPoint, beta: float, rng):
    """Layer vectors ``m`` (k-ary) and ``gamma`` (unary groups of k)."""
    s, t = point.s, point.t
    if s > max(s_max, 1):
        raise ValueError(f"s={s} exceeds s_max={s_max}")
    X = rng.poisson(beta, size=s_max)
    Xp = rng.poisson(beta * t)
    Xpp = rng.poisson(beta * (1.0 - t))
    m = np.zeros(s_max, dtype=np.int64)
    g = np.zeros(s_max, dtype=np.int64)
    if s_max == 0:
        return m, g
    m[:s - 1] = X[:s - 1]
    m[s - 1] = Xp
    g[s - 1] = Xpp
    g[s:] = X[s:]
    return m, g


def unary_weights(family: WeightFamily, pop: Population, targets, rng, batch: int = 1 << 15):
    """Unary tables ``sigma -> sum_tau psi(..sigma at i..) prod_{h != i} mu_h(tau_h)``.

    ``(psi, i, mu)`` is drawn from ``p x U[k] x pi^k`` tilted by the table's
    value at the target symbol, by rejection with acceptance ``value / 2``.
    """
    k, q = family.k, family.q
    dig = _tau_digits(k, q)
    tabs = family.tables
    targets = np.asarray(targets, dtype=np.int64)
    out = np.empty((len(targets), q))
    pending = np.arange(len(targets))
    while len(pending):
        B = min(len(pending), batch)
        idx = pending[:B]
        h = rng.integers(0, k, size=B)
        psi = family.sample(rng, B)
        mus = _draw_measures(pop, rng, (B, k))
        msg = _messages(tabs[psi], mus, h, dig, q)
        ok = rng.random(B) < msg[np.arange(B), targets[idx]] / 2.0
        out[idx[ok]] = msg[ok]
        pending = np.concatenate([idx[~ok], pending[B:]])
    return out


def interpolation_sample(n: int, D, k: int, family: WeightFamily, point: InterpolationPoint,
                         seed, alpha: float = 0.01, beta: float = 0.1) -> PinnedGraph:
    """Draw a pinned interpolation graph at layer ``s`` and time ``t``.

    Layers before ``s`` carry Poisson(beta) k-ary checks, layer ``s`` carries
    Poisson(t beta) k-ary checks and k*Poisson((1-t) beta) unary checks,
    later layers k*Poisson(beta) unary checks.  Weights are tilted towards a
    uniform reference assignment, which is then copied onto a random pin set.
    """
    if family.k != k:
        raise ValueError("family arity differs from k")
    pop = point.pop
    d = _degrees(n, D, seed)
    total = d.total
    s_max = int(np.floor((1.0 - alpha) * total / (beta * k) + 1e-9))
    rng = as_generator(seed, "interpolation")
    m, g = interpolation_counts(s_max, point, beta, rng)
    U = rng.random(int(m.sum()) * k + int(g.sum()) * k)
    nb, tg, clips, fail = _layered_kernel(d.degrees.astype(np.int64), m, g * k, k, U)
    if fail >= 0:
        raise SocketExhaustion(f"sockets exhausted in layer {fail + 1}", layer=fail + 1)
    ref = as_generator(seed, "reference").integers(0, family.q, size=n)
    wrng = as_generator(seed, "interpolation_weights")
    tilt = tilted_probabilities(family, ref, nb)
    u = wrng.random(len(tilt))
    psi = np.minimum((u[:, None] > np.cumsum(tilt, axis=1)).sum(axis=1),
                     len(family.functions) - 1)
    if len(tg):
        if pop is None:
            raise ValueError("unary checks need a population")
        tables = unary_weights(family, pop, ref[tg], wrng)
    else:
        tables = np.zeros((0, family.q))
    pinspec = sample_pin_set(n, point.T, child_seed(seed, "pins"))
    pins = tuple((x, int(ref[x])) for x in pinspec.pinset)
    meta = {"s": point.s, "t": point.t, "T": point.T, "s_max": s_max, "clips": int(clips),
            "theta": pinspec.theta}
    return PinnedGraph(n, family, nb, psi, tg, tables, pins, ref, meta)


def interpolation_free_energy(n: int, D, k: int, family: WeightFamily,
                              point: InterpolationPoint, samples: int, seed,
                              alpha: float = 0.01, beta: float = 0.1,
                              max_retries: int = 100):
    """Mean +- stderr of ``ln Z / n`` over independent interpolation graphs.

    A draw whose layered process runs out of sockets is redrawn from a
    derived seed (the graph is only defined on success).  Returns the
    estimate and the number of redraws.
    """
    vals = np.empty(samples)
    redraws = 0
    for i in range(samples):
        for attempt in range(max_retries + 1):
            s = child_seed(seed, "forest", i, attempt)
            try:
                g = interpolation_sample(n, D, k, family, point, s, alpha, beta)
                break
            except SocketExhaustion:
                redraws += 1
                if attempt == max_retries:
                    raise
        vals[i] = g.log_partition() / n
    se = float(vals.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return Estimate(float(vals.mean()), se), redraws
