"""Batch command-line front end.

Every result-producing invocation writes a manifest next to its primary
output; replaying a manifest (optionally with a different --threads) must
reproduce the result files byte for byte. Exit codes: 0 success, 1
validation or usage error, 2 completed with a tripped numeric guard
(truncation tail exceeded, exploded trajectories) and partial results
written.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, exact, limits, montecarlo, pgf
from .environment import GenerationSchedule, build_model, preset_model, preset_names
from .laws import LawSpec, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_GUARD = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _write_csv(path: Path, header, rows, preamble: str | None = None):
    lines = []
    if preamble:
        lines.append(preamble)
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _manifest_path(primary: Path) -> Path:
    return primary.with_name(primary.name + ".manifest.json")


def _write_manifest(args, outputs: list[Path]):
    primary = outputs[0]
    manifest = {
        "tool": "bpvei",
        "version": __version__,
        "subcommand": args.subcommand,
        "argv": args.canonical_argv,
        "threads": getattr(args, "threads", 1),
        "outputs": [str(p.resolve()) for p in outputs],
    }
    _write_json(_manifest_path(primary), manifest)


def _abspath_argv(argv: list[str]) -> list[str]:
    """Resolve path-valued options so a manifest replays from any directory."""
    out = list(argv)
    pathish = {"--out", "--out-dir", "--offspring"}
    for i, tok in enumerate(out):
        if tok in pathish and i + 1 < len(out):
            val = out[i + 1]
            if tok != "--offspring" or os.path.exists(val):
                out[i + 1] = os.path.abspath(val)
        elif tok == "--model" and i + 1 < len(out) and not out[i + 1].startswith("preset:"):
            out[i + 1] = os.path.abspath(out[i + 1])
    return out


def _strip_threads(argv: list[str]) -> list[str]:
    out = []
    skip = False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--threads":
            skip = True
            continue
        if tok.startswith("--threads="):
            continue
        out.append(tok)
    return out


def _load_offspring(value: str):
    text = value
    if not value.lstrip().startswith(("[", "{")):
        text = Path(value).read_text()
    obj = json.loads(text)
    if isinstance(obj, dict):
        return LawSpec.from_json(obj)
    return GenerationSchedule.from_json(obj)


def _load_model(args):
    src = args.model
    if src.startswith("preset:"):
        name = src.split(":", 1)[1]
        offspring = _load_offspring(args.offspring) if getattr(args, "offspring", None) else None
        return preset_model(name, offspring)
    return build_model(json.loads(Path(src).read_text()))


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_validate(args) -> int:
    model = _load_model(args)
    print(f"ok: model {model.name!r} validated"
          f" ({len(model.offspring.stages)} offspring stages,"
          f" {len(model.immigration.stages)} immigration stages)")
    return EXIT_OK


def _cmd_pgf(args) -> int:
    model = _load_model(args)
    if args.mode == "compose":
        curve = pgf.compose_curve(model, args.k, args.n, args.grid)
    else:
        curve = pgf.process_curve(model, args.n, args.grid)
    out = Path(args.out)
    _write_csv(out, ["s", "value", "k", "n"], curve.rows())
    _write_manifest(args, [out])
    return EXIT_OK


def _cmd_oracle(args) -> int:
    model = _load_model(args)
    pmf = exact.propagate(model, args.n, cutoff=args.cutoff, tail_tol=args.tail_tol)
    nonzero = np.nonzero(pmf.probs)[0]
    end = int(nonzero.max()) + 1 if len(nonzero) else 1
    rows = [(k, pmf.probs[k]) for k in range(end)]
    out = Path(args.out)
    _write_csv(out, ["k", "prob"], rows,
               preamble=f"# tail={_fmt(pmf.tail)},cutoff={pmf.cutoff},n={pmf.horizon}")
    _write_manifest(args, [out])
    if pmf.tail_exceeded:
        print("warning: tail tolerance exceeded at the cutoff cap", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def _cmd_moments(args) -> int:
    model = _load_model(args)
    table = analysis.moment_table(model, args.horizon)
    rows = []
    for n in range(args.horizon + 1):
        params = (table.m[n], table.sigma2[n], table.alpha[n], table.beta2[n],
                  table.mu[n], table.nu[n]) if n < args.horizon else (None,) * 6
        rows.append((n, *params, table.mean[n], table.variance[n], table.variance_expanded[n]))
    out = Path(args.out)
    _write_csv(out, ["n", "m", "sigma2", "alpha", "beta2", "mu", "nu",
                     "mean", "variance", "variance_expanded"], rows)
    _write_manifest(args, [out])
    return EXIT_GUARD if table.overflowed else EXIT_OK


def _cmd_criticality(args) -> int:
    model = _load_model(args)
    horizons = _parse_int_list(args.horizons)
    report = analysis.criticality_classify(model, horizons)
    out = Path(args.out)
    rows = zip(report.horizons, report.partial_sums, report.inv_mu, report.ratios)
    _write_csv(out, ["horizon", "partial_sum", "inv_mu", "ratio"], rows)
    verdict = out.with_name(out.stem + ".verdict.json")
    _write_json(verdict, {
        "verdict": report.verdict,
        "vacuous": report.vacuous,
        "growth_ratio": None if math.isnan(report.growth_ratio) else report.growth_ratio,
        "increment_exponent": None if math.isnan(report.increment_exponent) else report.increment_exponent,
    })
    _write_manifest(args, [out, verdict])
    return EXIT_OK


def _cmd_extinction(args) -> int:
    model = _load_model(args)
    report = analysis.extinction_conditions(model, args.horizon)
    q = report.q
    gaps = [pgf.compose_gap(model, -1, n, 1.0) for n in range(args.horizon + 1)]
    terms = analysis.no_return_terms(model, args.horizon)
    partial = np.cumsum(terms)
    rows = [(n, gaps[n], terms[n], partial[n], q.bounds[n]) for n in range(args.horizon + 1)]
    out = Path(args.out)
    _write_csv(out, ["n", "composite_gap", "term", "partial_sum", "q_lower_bound"], rows)
    verdict = out.with_name(out.stem + ".verdict.json")
    _write_json(verdict, {
        "verdict": report.verdict,
        "condition1": report.condition1,
        "condition2": report.condition2,
        "partial_sum_total": report.partial_sum_total,
        "tail_bound": report.tail_bound,
        "tail_route": report.tail_route,
        "increment_exponent": None if math.isnan(report.increment_exponent) else report.increment_exponent,
        "q_hat": q.q_hat,
        "q_certified": q.certified,
    })
    _write_manifest(args, [out, verdict])
    return EXIT_OK


def _cmd_simulate(args) -> int:
    model = _load_model(args)
    record = _parse_int_list(args.record) if args.record else [args.horizon]
    out = Path(args.out)
    if args.engine == "decomposition":
        n = max(record)
        sample = montecarlo.decomposition_sample(model, n, args.reps, args.seed,
                                                 threads=args.threads)
        if args.raw:
            out.write_text("\n".join(_fmt(v) for v in sample.values) + "\n")
        else:
            _write_csv(out, ["rep", "n", "z"],
                       ((i, n, v) for i, v in enumerate(sample.values)))
        _write_manifest(args, [out])
        return EXIT_GUARD if sample.exploded else EXIT_OK
    samples = montecarlo.checkpoint_samples(model, record, args.reps, args.seed,
                                            threads=args.threads)
    exploded = samples[record[0]].exploded
    if args.raw:
        n = max(record)
        out.write_text("\n".join(_fmt(v) for v in samples[n].values) + "\n")
    else:
        rows = []
        for n in sorted(set(record)):
            rows.extend((i, n, v) for i, v in enumerate(samples[n].values))
        _write_csv(out, ["rep", "n", "z"], rows)
    _write_manifest(args, [out])
    return EXIT_GUARD if exploded else EXIT_OK


def _cmd_survival(args) -> int:
    model = _load_model(args)
    config = montecarlo.SimConfig(horizon=args.horizon, reps=args.reps, seed=args.seed,
                                  threads=args.threads)
    curve = montecarlo.survival_curve(model, config)
    out = Path(args.out)
    _write_csv(out, ["n", "estimate", "stderr", "R"],
               zip(curve.ns, curve.p_hat, curve.stderr, [curve.reps] * len(curve.ns)))
    _write_manifest(args, [out])
    return EXIT_GUARD if curve.exploded else EXIT_OK


def _cmd_figure1(args) -> int:
    outputs = []
    exploded = 0
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in ("example_b", "example_c"):
        model = preset_model(name)
        config = montecarlo.SimConfig(horizon=args.horizon, reps=args.reps, seed=args.seed,
                                      threads=args.threads)
        curve = montecarlo.survival_curve(model, config)
        reference = pgf.survival_exact_curve(model, args.horizon)
        rows = [(n, curve.p_hat[n], curve.stderr[n], reference[n])
                for n in range(1, args.horizon + 1)]
        path = outdir / f"figure1_{name}.csv"
        _write_csv(path, ["n", "p_hat", "stderr", "exact"], rows)
        outputs.append(path)
        exploded += curve.exploded
    _write_manifest(args, outputs)
    return EXIT_GUARD if exploded else EXIT_OK


def _cmd_gamma_limit(args) -> int:
    model = _load_model(args)
    ns = _parse_int_list(args.n)
    lambdas = _parse_float_list(args.lambdas)
    reports = limits.verify_gamma_limit(model, ns, args.reps, args.seed,
                                        lambdas=lambdas, threads=args.threads)
    out = Path(args.out)
    rows = []
    for rep in reports:
        if not rep.probes:
            rows.append((rep.n, rep.ks, None, None, None, None))
        for probe in rep.probes:
            rows.append((rep.n, rep.ks, probe.lam, probe.value, probe.target, probe.stderr))
    _write_csv(out, ["n", "ks", "lambda", "empirical", "target", "stderr"], rows)
    report_path = out.with_name(out.stem + ".json")
    _write_json(report_path, [rep.to_json() for rep in reports])
    _write_manifest(args, [out, report_path])
    return EXIT_OK


def _cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    threads = args.threads if args.threads is not None else manifest.get("threads", 1)
    argv += ["--threads", str(threads)]
    return main(argv)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub, model=True, out=True):
    if model:
        sub.add_argument("--model", required=True,
                         help=f"preset:NAME ({', '.join(preset_names())}) or a model JSON file")
        sub.add_argument("--offspring", default=None,
                         help="offspring schedule (JSON or file) completing preset:example_a")
    sub.add_argument("--seed", type=int, default=1)
    sub.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sub.add_argument("--format", choices=("csv", "json"), default="csv")
    if out:
        sub.add_argument("--out", required=True, help="primary output path")


def _build_parser() -> _Parser:
    parser = _Parser(prog="bpvei", description=__doc__)
    parser.add_argument("--version", action="version", version=f"bpvei {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("validate", help="validate a model configuration")
    _add_common(p, out=False)
    p.set_defaults(func=_cmd_validate)

    p = subs.add_parser("pgf", help="emit a composed or process p.g.f. curve")
    _add_common(p)
    p.add_argument("--mode", choices=("compose", "process"), default="compose")
    p.add_argument("--k", type=int, default=-1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--grid", type=int, default=101)
    p.set_defaults(func=_cmd_pgf)

    p = subs.add_parser("oracle", help="exact truncated pmf of the generation-n population")
    _add_common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--cutoff", type=int, default=exact.DEFAULT_CUTOFF)
    p.add_argument("--tail-tol", type=float, default=exact.DEFAULT_TAIL_TOL)
    p.set_defaults(func=_cmd_oracle)

    p = subs.add_parser("moments", help="closed-form moment table")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=20)
    p.set_defaults(func=_cmd_moments)

    p = subs.add_parser("criticality", help="critical-regime classification")
    _add_common(p)
    p.add_argument("--horizons", default="64,128,256,512")
    p.set_defaults(func=_cmd_criticality)

    p = subs.add_parser("extinction", help="extinction-criterion evaluation")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=200)
    p.set_defaults(func=_cmd_extinction)

    p = subs.add_parser("simulate", help="raw trajectory endpoint samples")
    _add_common(p)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--record", default=None, help="comma-separated checkpoint generations")
    p.add_argument("--engine", choices=("direct", "decomposition"), default="direct")
    p.add_argument("--raw", action="store_true", help="one value per line at the last checkpoint")
    p.set_defaults(func=_cmd_simulate)

    p = subs.add_parser("survival", help="Monte Carlo survival curve")
    _add_common(p)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=1000)
    p.set_defaults(func=_cmd_survival)

    p = subs.add_parser("figure1", help="survival curves for the two contrast models")
    _add_common(p, model=False, out=False)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=1000)
    p.set_defaults(func=_cmd_figure1)

    p = subs.add_parser("gamma-limit", help="gamma limit-law verification")
    _add_common(p)
    p.add_argument("--n", default="250,500,1000,2000", help="comma-separated generations")
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--lambdas", default="0.5,1,2")
    p.set_defaults(func=_cmd_gamma_limit)

    p = subs.add_parser("replay", help="re-run a previously emitted manifest")
    p.add_argument("manifest")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_replay)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.subcommand != "replay":
        args.canonical_argv = _strip_threads(_abspath_argv(list(argv)))
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
