"""Command-line front end.

    ldgm-mi VERB --config spec.json [--seed S] [--out DIR] [--bits] [verb options]

Exit status: 0 success, 1 invalid input, 2 a numerical contract failed.
Every output file starts with (CSV, text) or contains (JSON) the resolved
spec and seed.  Entropies and MI are stored in nats; ``--bits`` only changes
the printed summary.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cavity, experiments, gibbs, graphs, ldgm, planted
from .cavity import Population, SolverSettings
from .rng import child_seed

log = logging.getLogger("ldgm_mi")

VERBS = ("ensemble-sample", "mi-predict", "mi-exact", "mi-sweep", "check-sym", "check-pos",
         "check-nishimori", "couple", "interpolate", "pd-solve")
OUTPUT_ENV = "LDGM_MI_OUTPUT_DIR"


class SpecError(ValueError):
    """Invalid configuration; the message names the offending field."""


class ContractFailure(RuntimeError):
    pass


SOLVER_KEYS = {f.name for f in fields(SolverSettings)}


@dataclass
class EnsembleSpec:
    n: int
    k: int
    D: dict
    family: object = "ldgm"
    eta: float | None = None
    alpha: float = 0.01
    beta: float = 0.1
    T: float = 0.0
    seed: int = 0
    solver: dict = field(default_factory=dict)
    output: str | None = None
    samples: int = 100
    exact: bool = False
    mc_samples: int = 100_000

    def degree_distribution(self) -> graphs.DegreeDistribution:
        return graphs.DegreeDistribution({int(l): p for l, p in self.D.items()})

    def weight_family(self, eta: float | None = None) -> graphs.WeightFamily:
        if self.family == "ldgm":
            return ldgm.code_weight_family(self.k, self.eta if eta is None else eta)
        tabs = [graphs.WeightFunction(t, name=f"w{i}")
                for i, t in enumerate(self.family["tables"])]
        q = tabs[0].q
        alphabet = graphs.SPINS if q == 2 else graphs.Alphabet(tuple(range(q)))
        return graphs.WeightFamily(tuple(tabs), np.array(self.family["prior"]), alphabet)

    def solver_settings(self, **over) -> SolverSettings:
        d = dict(self.solver)
        d.setdefault("seed", child_seed(self.seed, "solver"))
        d.update(over)
        if "mesh" in d:
            d["mesh"] = tuple(d["mesh"])
        return SolverSettings(**d)

    def resolved(self) -> dict:
        d = asdict(self)
        d["solver"] = self.solver_settings().to_json()
        return d


def _require(cond, fieldname, msg):
    if not cond:
        raise SpecError(f"{fieldname}: {msg}")


def parse_spec(text: str) -> EnsembleSpec:
    """Validate a JSON spec and fill defaults (alpha=0.01, beta=0.1, T=0, N=10^4)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"config: not valid JSON ({e})") from None
    _require(isinstance(raw, dict), "config", "must be a JSON object")
    known = {f.name for f in fields(EnsembleSpec)}
    unknown = sorted(set(raw) - known)
    _require(not unknown, unknown[0] if unknown else "", "unknown field")
    for name in ("n", "k", "D"):
        _require(name in raw, name, "required field missing")
    spec = EnsembleSpec(**raw)
    _require(isinstance(spec.n, int) and spec.n >= 1, "n", "must be a positive integer")
    _require(isinstance(spec.k, int) and spec.k >= 2, "k", "must be an integer >= 2")
    _require(isinstance(spec.D, dict) and spec.D, "D", "must be a non-empty mapping")
    try:
        mass = {int(l): float(p) for l, p in spec.D.items()}
    except (TypeError, ValueError):
        raise SpecError("D: keys must be integer degrees and values probabilities") from None
    _require(all(l >= 0 and p >= 0 for l, p in mass.items()), "D", "negative entry")
    _require(abs(sum(mass.values()) - 1.0) <= 1e-9, "D",
             f"probabilities sum to {sum(mass.values())!r}, not 1")
    if spec.family == "ldgm":
        _require(spec.eta is not None, "eta", "required for the ldgm family")
        _require(isinstance(spec.eta, (int, float)) and 0.0 < spec.eta < 1.0, "eta",
                 f"must lie strictly inside (0, 1), got {spec.eta!r}")
    else:
        _require(isinstance(spec.family, dict) and set(spec.family) == {"tables", "prior"},
                 "family", "must be 'ldgm' or an object with 'tables' and 'prior'")
        try:
            fam = spec.weight_family()
        except ValueError as e:
            raise SpecError(f"family: {e}") from None
        _require(fam.k == spec.k, "family", "table arity differs from k")
    _require(0.0 <= spec.alpha < 1.0, "alpha", "must lie in [0, 1)")
    _require(spec.beta > 0, "beta", "must be positive")
    _require(spec.T >= 0, "T", "must be non-negative")
    _require(isinstance(spec.seed, int), "seed", "must be an integer")
    _require(isinstance(spec.samples, int) and spec.samples >= 1, "samples",
             "must be a positive integer")
    _require(isinstance(spec.mc_samples, int) and spec.mc_samples >= 2, "mc_samples",
             "must be an integer >= 2")
    _require(isinstance(spec.solver, dict), "solver", "must be an object")
    bad = sorted(set(spec.solver) - SOLVER_KEYS)
    _require(not bad, f"solver.{bad[0]}" if bad else "solver", "unknown field")
    try:
        spec.solver_settings()
    except (TypeError, ValueError) as e:
        raise SpecError(f"solver: {e}") from None
    return spec


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _header(spec: EnsembleSpec, verb: str, extra=None) -> str:
    meta = {"verb": verb, "spec": spec.resolved()}
    if extra:
        meta["options"] = extra
    return "# " + json.dumps(meta, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def _write_json(path: Path, spec, verb, payload, extra=None):
    doc = {"verb": verb, "spec": spec.resolved(), "options": extra or {}, "result": payload}
    _write(path, json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n")


def parse_grid(text: str) -> list:
    """``a:b:step`` inclusive of ``b`` (within float tolerance), or a comma list."""
    if ":" in text:
        a, b, st = (float(v) for v in text.split(":"))
        if st <= 0 or b < a:
            raise SpecError(f"grid {text!r}: need start <= stop and step > 0")
        m = int(math.floor((b - a) / st + 1e-9))
        return [round(a + i * st, 12) for i in range(m + 1)]
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------

PLANTED_COLUMNS = ["n", "k", "eta", "alpha", "beta", "T", "samples", "H_per_n", "stderr",
                   "MI_per_n"]


def _entropy_row(spec, eta, method, seed):
    D = spec.degree_distribution()
    fam = spec.weight_family(eta)
    if method == "exact":
        vals = []
        for i in range(spec.samples):
            G = planted.unweighted_graph(spec.n, D, spec.k, spec.alpha, spec.beta,
                                         child_seed(seed, "graph", i), spec.exact)
            if spec.n + G.num_checks > ldgm.ENUM_CAP:
                raise SpecError(f"n: n + M = {spec.n + G.num_checks} exceeds the exact "
                                f"enumeration cap {ldgm.ENUM_CAP}")
            vals.append(ldgm.exact_code_mi(G, eta))
        v = np.array(vals)
        mi = float(v.mean())
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        H = float(np.log(2.0) - mi)
    else:
        est = planted.conditional_entropy_mc(spec.n, D, spec.k, fam, spec.samples, seed,
                                             spec.T, spec.alpha, spec.beta, spec.exact)
        H, se, mi = est.value, est.stderr, float(np.log(fam.q) - est.value)
    return {"n": spec.n, "k": spec.k, "eta": eta, "alpha": spec.alpha, "beta": spec.beta,
            "T": spec.T, "samples": spec.samples, "H_per_n": H, "stderr": se, "MI_per_n": mi}


def _require_ldgm(spec, verb):
    if spec.family != "ldgm":
        raise SpecError(f"family: {verb} needs the ldgm family")


def cmd_mi_exact(spec, args, out):
    _require_ldgm(spec, "mi-exact")
    row = _entropy_row(spec, spec.eta, args.method, child_seed(spec.seed, "mi-exact"))
    opts = {"method": args.method}
    _write(out / "mi-exact.csv", _header(spec, "mi-exact", opts) +
           _csv_text(PLANTED_COLUMNS, [row]))
    return f"MI/n = {_unit(row['MI_per_n'], args)} +- {_unit(row['stderr'], args)}"


def cmd_mi_sweep(spec, args, out):
    _require_ldgm(spec, "mi-sweep")
    grid = parse_grid(args.eta)
    for e in grid:
        if not 0.0 < e < 1.0:
            raise SpecError(f"eta: grid value {e} outside (0, 1)")
    rows = [_entropy_row(spec, e, args.method, child_seed(spec.seed, "mi-sweep", i))
            for i, e in enumerate(grid)]
    opts = {"eta": args.eta, "method": args.method}
    _write(out / "mi-sweep.csv", _header(spec, "mi-sweep", opts) +
           _csv_text(PLANTED_COLUMNS, rows))
    return f"{len(rows)} grid points written"


def cmd_mi_predict(spec, args, out):
    D = spec.degree_distribution()
    settings = spec.solver_settings()
    if spec.family == "ldgm":
        res = ldgm.mi_predictions_codes(spec.k, D, spec.eta, settings)
        payload = {"prediction_half": res["half"].value, "prediction_full": res["full"].value,
                   "stderr": res["sup"].stderr, "sup": res["sup"].value,
                   "converged": res["diagnostics"]["all_converged"]}
        val = res[args.constant].value if args.constant != "both" else None
        summary = (f"I/n prediction (half) = {_unit(res['half'].value, args)}, "
                   f"(full) = {_unit(res['full'].value, args)}")
        if val is not None:
            summary = f"I/n prediction ({args.constant}) = {_unit(val, args)}"
    else:
        est, parts = cavity.mi_predict_general(D, spec.weight_family(), settings,
                                               return_parts=True)
        payload = {"prediction": est.value, "stderr": est.stderr, "sup": parts["sup"].value,
                   "channel": parts["channel"],
                   "converged": parts["diagnostics"]["all_converged"]}
        summary = f"I/n prediction = {_unit(est.value, args)}"
    _write_json(out / "mi-predict.json", spec, "mi-predict", payload,
                {"constant": args.constant})
    return summary


def cmd_check_sym(spec, args, out):
    dev = ldgm.check_sym(spec.weight_family())
    _write_json(out / "check-sym.json", spec, "check-sym", {"max_deviation": dev})
    if dev > args.tol:
        raise ContractFailure(f"SYM violated: max deviation {dev:.3g}")
    return f"SYM max deviation = {dev:.3g}"


def _test_populations(spec, q):
    """Two fixed probe populations: code form for q = 2, Dirichlet measures otherwise."""
    N = spec.solver_settings().N
    rng = np.random.Generator(np.random.Philox(child_seed(spec.seed, "pos", "b")))
    if q == 2:
        a = Population.uniform_spread(N, child_seed(spec.seed, "pos", "a"))
        b = Population.symmetrized(rng.beta(0.5, 0.5, size=N // 2) * 2 - 1)
        return a, b
    return (Population(rng.dirichlet(np.ones(q), size=N)),
            Population(rng.dirichlet(np.full(q, 0.5), size=N)))


def cmd_check_pos(spec, args, out):
    fam = spec.weight_family()
    a, b = _test_populations(spec, fam.q)
    payload = {}
    failed = []
    if spec.family == "ldgm":
        mom = ldgm.check_pos_moments(spec.k, spec.eta, a, b, args.l_max)
        payload["moments"] = mom
        if min(mom) < -1e-9:
            failed.append("moment condition")
    est = ldgm.check_pos_general(fam, a, b,
                                 spec.mc_samples, child_seed(spec.seed, "pos", "mc"))
    payload["general"] = {"estimate": est.value, "stderr": est.stderr}
    _write_json(out / "check-pos.json", spec, "check-pos", payload, {"l_max": args.l_max})
    if est.value < -3 * est.stderr:
        failed.append("Monte Carlo estimate below -3 sigma")
    if failed:
        raise ContractFailure("POS violated: " + ", ".join(failed))
    return f"POS estimate = {est.value:.4g} +- {est.stderr:.2g}"


def cmd_check_nishimori(spec, args, out):
    gap = planted.nishimori_gap(spec.n, spec.degree_distribution(), spec.k,
                                spec.weight_family(), spec.samples,
                                child_seed(spec.seed, "nishimori"), spec.T, spec.alpha,
                                spec.beta, spec.exact)
    _write_json(out / "check-nishimori.json", spec, "check-nishimori", {"max_tv_gap": gap})
    if gap > args.tol:
        raise ContractFailure(f"Nishimori gap {gap:.3g} exceeds {args.tol}")
    return f"max TV(posterior, Gibbs) = {gap:.3g}"


def cmd_couple(spec, args, out):
    grid = [int(v) for v in parse_grid(args.n_grid)] if args.n_grid else [spec.n]
    D = spec.degree_distribution()
    seed = child_seed(spec.seed, "couple")
    if len(grid) > 1:
        res = experiments.coupling_scaling_stat(grid, args.reps, spec.alpha, spec.beta, D,
                                                spec.k, seed)
        rows = res.rows
        summary = f"slope = {res.slope:.3g} +- {res.stderr:.2g}, 95% CI {res.ci}"
    else:
        rows, _, _ = experiments.coupling_rows(grid, args.reps, spec.alpha, spec.beta, D,
                                               spec.k, seed)
        summary = f"mean C_F = {rows[0]['mean_CF']:.4g} +- {rows[0]['stderr']:.2g}"
    cols = ["n", "alpha", "beta", "mean_CF", "stderr", "truncations"]
    opts = {"n_grid": args.n_grid, "reps": args.reps}
    _write(out / "couple.csv", _header(spec, "couple", opts) + _csv_text(cols, rows))
    return summary


def cmd_interpolate(spec, args, out):
    fam = spec.weight_family()
    pop = Population.uniform_spread(spec.solver_settings().N, child_seed(spec.seed, "pop"))
    point = experiments.InterpolationPoint(args.s, args.t, spec.T, pop)
    est, redraws = experiments.interpolation_free_energy(
        spec.n, spec.degree_distribution(), spec.k, fam, point, spec.samples,
        child_seed(spec.seed, "interpolate"), spec.alpha, spec.beta)
    row = {"n": spec.n, "s": args.s, "t": args.t, "T": spec.T, "samples": spec.samples,
           "logZ_per_n": est.value, "stderr": est.stderr, "redraws": redraws}
    _write(out / "interpolate.csv", _header(spec, "interpolate", {"s": args.s, "t": args.t}) +
           _csv_text(list(row), [row]))
    return f"E[logZ]/n = {est.value:.6g} +- {est.stderr:.2g}"


def cmd_pd_solve(spec, args, out):
    D = spec.degree_distribution()
    channel = spec.eta if spec.family == "ldgm" else spec.weight_family()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", cavity.NotConvergedWarning)
        est, pop, diag = cavity.solve_sup(spec.k, D, channel, spec.solver_settings())
    _write(out / "pd-solve-population.csv", _header(spec, "pd-solve") + pop.to_csv())
    _write_json(out / "pd-solve.json", spec, "pd-solve",
                {"sup": est.value, "stderr": est.stderr, "diagnostics": diag,
                 "warnings": [str(w.message) for w in caught]})
    return f"sup B = {est.value:.6g} +- {est.stderr:.2g}"


def cmd_ensemble_sample(spec, args, out):
    inst = planted.sample_planted(spec.n, spec.degree_distribution(), spec.k,
                                  spec.weight_family(), spec.alpha, spec.beta,
                                  child_seed(spec.seed, "ensemble"), spec.exact)
    G = inst.graph
    if spec.T > 0:
        inst = planted.pin_instance(inst, spec.T, child_seed(spec.seed, "ensemble", "pins"))
        G = inst.graph
    ids, tables = G.weight_registry()
    _write(out / "graph.txt", _header(spec, "ensemble-sample") + G.to_text(ids))
    _write(out / "weights.json", json.dumps(tables, sort_keys=True) + "\n")
    _write(out / "truth.csv", _header(spec, "ensemble-sample") +
           "\n".join(str(int(graphs.SPINS.symbols[v]) if G.q == 2 else int(v))
                     for v in inst.truth.values) + "\n")
    return f"sampled graph with n={G.n}, |F|={G.num_checks}, pins={len(G.pins)}"


COMMANDS = {
    "ensemble-sample": cmd_ensemble_sample, "mi-predict": cmd_mi_predict,
    "mi-exact": cmd_mi_exact, "mi-sweep": cmd_mi_sweep, "check-sym": cmd_check_sym,
    "check-pos": cmd_check_pos, "check-nishimori": cmd_check_nishimori,
    "couple": cmd_couple, "interpolate": cmd_interpolate, "pd-solve": cmd_pd_solve,
}


def _unit(x, args):
    return f"{x / math.log(2):.6g} bits" if getattr(args, "bits", False) else f"{x:.6g} nats"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldgm-mi", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="verb", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON ensemble spec")
    common.add_argument("--seed", type=int, help="overrides the spec seed")
    common.add_argument("--out", help=f"output directory (default: spec output, ${OUTPUT_ENV}, .)")
    common.add_argument("--bits", action="store_true", help="print MI in bits")
    for verb in VERBS:
        sp = sub.add_parser(verb, parents=[common])
        if verb in ("mi-exact", "mi-sweep"):
            sp.add_argument("--method", choices=("exact", "planted"), default="exact")
        if verb == "mi-sweep":
            sp.add_argument("--eta", required=True, help="grid a:b:step (inclusive) or list")
        if verb == "mi-predict":
            sp.add_argument("--constant", choices=("half", "full", "both"), default="both")
        if verb == "check-sym":
            sp.add_argument("--tol", type=float, default=1e-12)
        if verb == "check-nishimori":
            sp.add_argument("--tol", type=float, default=1e-9)
        if verb == "check-pos":
            sp.add_argument("--l-max", type=int, default=10)
        if verb == "couple":
            sp.add_argument("--n-grid", help="grid of n values a:b:step or list")
            sp.add_argument("--reps", type=int, default=50)
        if verb == "interpolate":
            sp.add_argument("--s", type=int, default=1)
            sp.add_argument("--t", type=float, default=0.0)
    return p


def run_command(verb: str, spec: EnsembleSpec, args) -> tuple:
    """Dispatch one verb; returns ``(exit status, summary line)``."""
    out = Path(args.out or spec.output or os.environ.get(OUTPUT_ENV) or ".")
    try:
        return 0, COMMANDS[verb](spec, args, out)
    except ContractFailure as e:
        return 2, f"contract failure: {e}"
    except graphs.SocketExhaustion as e:
        return 2, f"graph construction failed: {e}"
    except (SpecError, gibbs.EnumerationCapError) as e:
        return 1, f"invalid input: {e}"
    except ValueError as e:
        return 1, f"invalid input: {e}"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        spec = parse_spec(text)
        if args.seed is not None:
            spec.seed = args.seed
    except (OSError, SpecError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 1
    status, summary = run_command(args.verb, spec, args)
    print(f"{args.verb}: {summary}", file=sys.stdout if status == 0 else sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
