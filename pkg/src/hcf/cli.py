"""Command-line driver: generate cascades, learn the model, predict, evaluate, rank, mitigate.

Each subcommand writes its outputs plus one ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""
import argparse
import json
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .dcsim import generate_dataset, read_traces, write_traces
from .diffusion import celf_top_k, simulate_cascades
from .features import (FeatureSpec, LINE_FEATURES, PAIR_FEATURES, features_for_grid,
                       read_feature_csv, write_feature_csv)
from .grid_io import read_grid_case, validate_balance, write_grid_case
from .metrics import (DEFAULT_TOP_FRACTION, cascade_sizes, distribution_error,
                      failure_distribution, probability_error, size_histogram)
from .model import (DEFAULT_B, DEFAULT_EXPORT_THRESHOLD, DEFAULT_LAMBDA, HcfModel,
                    check_concavity, lipschitz_bound, load_model, probability_matrix,
                    read_pmat_csv, sample_complexity_bound, save_model, write_pmat_csv)
from .optimizer import OptimizerConfig, maximize_likelihood
from .samples import compile_samples, covering_probability, encode_cascades

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _prob(text):
    try:
        val = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a probability: {text!r}") from None
    if not 0 < val < 1:
        raise argparse.ArgumentTypeError(f"probability must be in (0, 1): {text!r}")
    return val


def _ids(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids: {text!r}") from None


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out, args, inputs, started):
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command") and k not in inputs}
    _dump({
        "command": args.command,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "flags": {k: (list(v) if isinstance(v, tuple) else v) for k, v in flags.items()},
        "rng_seed": getattr(args, "seed", None),
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "wall_time_s": round(time.time() - started, 3),
    }, Path(out) / "manifest.json")


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _default_bins(sizes, width=15):
    top = int(sizes.max()) if sizes.size else 0
    return list(range(0, max(top, 1) + width, width))


def _write_hist(rows, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,mass\n")
        for lo, hi, m in rows:
            fh.write(f"{lo!r},{hi!r},{m!r}\n")


# ----------------------------------------------------------------- commands

def cmd_gen(args):
    grid = read_grid_case(args.grid)
    bal = validate_balance(grid)
    if not bal.balanced:
        raise ValueError(f"grid is not balanced (surplus {bal.surplus:.6g})")
    traces = generate_dataset(grid, args.runs, args.fail_prob, args.seed, args.alpha)
    out = _outdir(args)
    write_traces(traces, out / "traces.jsonl")
    return {"grid": args.grid}


def cmd_features(args):
    grid = read_grid_case(args.grid)
    if args.spec:
        spec = FeatureSpec.from_json(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    else:
        spec = FeatureSpec(args.line_features, args.pair_features)
    feats, spec = features_for_grid(grid, spec)
    out = _outdir(args)
    write_feature_csv(feats, out / "features.csv")
    _dump(spec.to_json(), out / "feature_spec.json")
    return {"grid": args.grid, "spec": args.spec}


def cmd_train(args):
    traces = read_traces(args.traces)
    feats = read_feature_csv(args.features)
    spec = FeatureSpec.from_json(json.loads(Path(args.spec).read_text(encoding="utf-8")))
    if tuple(spec.names) != tuple(feats.names):
        raise ValueError("feature spec does not match the feature file columns")
    samples = encode_cascades(traces, feats.line_ids)
    if samples.m == 0:
        raise ValueError("traces yield no samples")
    cs = compile_samples(samples, feats.line_ids)
    init = HcfModel(np.zeros(spec.d), spec, args.lam, args.B)
    cfg = OptimizerConfig(args.memory, args.max_iters, args.grad_tol, args.f_tol, args.restarts, args.seed)
    model, report = maximize_likelihood(cs, feats, init, cfg)
    conc = check_concavity(model, feats, cs)
    p_cover, cover_lb = covering_probability(feats.n, samples.m)
    out = _outdir(args)
    save_model(model, out / "model.json")
    _dump(report.to_json(), out / "convergence.json")
    _dump({
        "n_samples": samples.m,
        "n_sample_keys": len(samples),
        "n_positive": sum(samples.positives.values()),
        "max_activators": samples.V,
        "concavity": conc.status,
        "max_phi_positive_pairs": conc.max_phi,
        "lipschitz_bound": lipschitz_bound(samples.V, args.lam),
        "covering_probability": p_cover,
        "covering_lower_bound": cover_lb,
    }, out / "diagnostics.json")
    return {"traces": args.traces, "features": args.features, "spec": args.spec}


def cmd_pmat(args):
    model = load_model(args.model)
    feats = read_feature_csv(args.features)
    pm = probability_matrix(model, feats)
    out = _outdir(args)
    write_pmat_csv(pm, out / "pmat.csv")
    write_pmat_csv(pm, out / "diffusion_graph.csv", threshold=args.threshold)
    return {"model": args.model, "features": args.features}


def cmd_simulate(args):
    pm = read_pmat_csv(args.pmat)
    if args.seeds_from:
        seed_sets = [sorted(tr.generations[0]) for tr in read_traces(args.seeds_from)]
    elif args.seeds:
        seed_sets = [args.seeds] * args.runs
    else:
        raise UsageError("give --seeds or --seeds-from")
    traces = simulate_cascades(pm, seed_sets, args.seed)
    out = _outdir(args)
    write_traces(traces, out / "traces.jsonl")
    return {"pmat": args.pmat, "seeds_from": args.seeds_from}


def cmd_eval(args):
    out = _outdir(args)
    report = {}
    if args.pmat_a or args.pmat_b:
        if not (args.pmat_a and args.pmat_b):
            raise UsageError("--pmat-a and --pmat-b go together")
        a, b = read_pmat_csv(args.pmat_a), read_pmat_csv(args.pmat_b)
        report["probability_error"] = {m: probability_error(a, b, m) for m in ("absolute", "relative")}
    if args.traces_a or args.traces_b:
        if not (args.traces_a and args.traces_b):
            raise UsageError("--traces-a and --traces-b go together")
        ta, tb = read_traces(args.traces_a), read_traces(args.traces_b)
        universe = set().union(*(t.failed for t in ta + tb))
        da = failure_distribution(ta, not args.include_initial, universe)
        db = failure_distribution(tb, not args.include_initial, universe)
        report["distribution_error"] = {
            m: distribution_error(da, db, m, args.top_frac) for m in ("absolute", "relative")}
        report["distribution_error_all_lines"] = {
            m: distribution_error(da, db, m, None) for m in ("absolute", "relative")}
        report["top_fraction"] = args.top_frac
        sa, sb = cascade_sizes(ta), cascade_sizes(tb)
        report["mean_size"] = {"a": float(sa.mean()), "b": float(sb.mean())}
        bins = args.bins or _default_bins(np.r_[sa, sb])
        _write_hist(size_histogram(ta, bins), out / "histogram_a.csv")
        _write_hist(size_histogram(tb, bins), out / "histogram_b.csv")
    if not report:
        raise UsageError("give --traces-a/--traces-b and/or --pmat-a/--pmat-b")
    _dump(report, out / "eval.json")
    print(json.dumps(report, sort_keys=True))
    return {"traces_a": args.traces_a, "traces_b": args.traces_b,
            "pmat_a": args.pmat_a, "pmat_b": args.pmat_b}


def cmd_rank(args):
    pm = read_pmat_csv(args.pmat)
    if args.k > pm.n:
        raise ValueError(f"k exceeds line count ({args.k} > {pm.n})")
    ranked = celf_top_k(pm, args.k, args.runs, args.seed)
    out = _outdir(args)
    with (out / "ranked.csv").open("w", encoding="utf-8") as fh:
        fh.write("rank,line_id,marginal_spread\n")
        for r, (lid, gain) in enumerate(ranked, start=1):
            fh.write(f"{r},{lid},{gain!r}\n")
    return {"pmat": args.pmat}


def _read_ranked(path):
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    return [int(r.split(",")[1]) for r in rows if r.strip()]


def cmd_mitigate(args):
    grid = read_grid_case(args.grid)
    chosen = _read_ranked(args.ranked)
    if args.top is not None:
        chosen = chosen[:args.top]
    if not chosen:
        raise ValueError("no lines to reinforce")
    better = grid.with_capacity_factor(chosen, args.factor)
    before = generate_dataset(grid, args.runs, args.fail_prob, args.seed, args.alpha)
    after = generate_dataset(better, args.runs, args.fail_prob, args.seed, args.alpha)
    out = _outdir(args)
    write_grid_case(better, out / "grid_mitigated.case.csv")
    write_traces(before, out / "traces_before.jsonl")
    write_traces(after, out / "traces_after.jsonl")
    sb, sa = cascade_sizes(before), cascade_sizes(after)
    bins = args.bins or _default_bins(np.r_[sb, sa])
    hb, ha = size_histogram(before, bins), size_histogram(after, bins)
    _write_hist(hb, out / "histogram_before.csv")
    _write_hist(ha, out / "histogram_after.csv")
    summary = {
        "reinforced_lines": chosen,
        "capacity_factor": args.factor,
        "mean_size_before": float(sb.mean()) if sb.size else 0.0,
        "mean_size_after": float(sa.mean()) if sa.size else 0.0,
        "bins": [[lo, hi] for lo, hi, _ in hb],
        "mass_before": [m for *_, m in hb],
        "mass_after": [m for *_, m in ha],
    }
    _dump(summary, out / "mitigation.json")
    print(json.dumps({k: summary[k] for k in ("mean_size_before", "mean_size_after")}))
    return {"grid": args.grid, "ranked": args.ranked}


def cmd_theory(args):
    report = {
        "sample_complexity": sample_complexity_bound(args.epsilon, args.delta, args.d, args.V,
                                                     args.lam, args.B),
        "lipschitz_bound": lipschitz_bound(args.V, args.lam),
    }
    if args.lines is not None:
        n_samples = args.samples if args.samples is not None else 21 * args.lines
        p, lb = covering_probability(args.lines, n_samples)
        report["covering_probability"] = {"lines": args.lines, "samples": n_samples,
                                          "p_cover": p, "lower_bound": lb}
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        _dump(report, _outdir(args) / "theory.json")
    return {}


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="hcf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hcf {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", help="simulate DC cascades on a grid")
    s.add_argument("grid")
    s.add_argument("--out", required=True)
    s.add_argument("--runs", type=int, default=1000)
    s.add_argument("--fail-prob", type=_prob, default=1 / 516)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("features", help="extract normalized pair features")
    s.add_argument("grid")
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="fitted feature_spec.json to reuse (transfer)")
    s.add_argument("--line-features", type=_names, default=LINE_FEATURES)
    s.add_argument("--pair-features", type=_names, default=PAIR_FEATURES)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="fit theta by maximum likelihood")
    s.add_argument("--traces", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    s.add_argument("--B", type=float, default=DEFAULT_B)
    s.add_argument("--memory", type=int, default=10)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--grad-tol", type=float, default=1e-6)
    s.add_argument("--f-tol", type=float, default=1e-10)
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("pmat", help="compute the diffusion probability matrix")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=DEFAULT_EXPORT_THRESHOLD)
    s.set_defaults(func=cmd_pmat)

    s = sub.add_parser("simulate", help="Monte Carlo IC cascades on a probability matrix")
    s.add_argument("--pmat", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=_ids, help="comma-separated seed line ids")
    s.add_argument("--seeds-from", help="traces file whose initial failures seed each run")
    s.add_argument("--runs", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval", help="distribution / probability errors")
    s.add_argument("--out", required=True)
    s.add_argument("--traces-a", help="model-side traces")
    s.add_argument("--traces-b", help="data-side traces")
    s.add_argument("--pmat-a")
    s.add_argument("--pmat-b")
    s.add_argument("--top-frac", type=float, default=DEFAULT_TOP_FRACTION)
    s.add_argument("--include-initial", action="store_true")
    s.add_argument("--bins", type=_floats)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("rank", help="CELF ranking of critical lines")
    s.add_argument("--pmat", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--runs", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("mitigate", help="reinforce ranked lines and regenerate cascades")
    s.add_argument("--grid", required=True)
    s.add_argument("--ranked", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--top", type=int)
    s.add_argument("--factor", type=float, default=2.0)
    s.add_argument("--runs", type=int, default=1000)
    s.add_argument("--fail-prob", type=_prob, default=1 / 516)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bins", type=_floats)
    s.set_defaults(func=cmd_mitigate)

    s = sub.add_parser("theory", help="sample-complexity, Lipschitz and covering figures")
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--d", type=int, default=25)
    s.add_argument("--V", type=int, default=5)
    s.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    s.add_argument("--B", type=float, default=DEFAULT_B)
    s.add_argument("--lines", type=int)
    s.add_argument("--samples", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_theory)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        inputs = args.func(args)
    except UsageError as exc:
        print(f"hcf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"hcf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hcf {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA
    if getattr(args, "out", None):
        _write_manifest(args.out, args, inputs, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
