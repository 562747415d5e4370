"""Command-line interface.

Subcommands: ``estimate`` and ``test`` emit JSON reports; ``scree``,
``simulate``, and ``submod`` emit tab-separated tables with a leading comment
line that echoes the resolved configuration. Results go to stdout (or
``--out``); logs go to stderr. Exit codes: 0 success, 2 validation error,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

from .data import bound_check, load_csv
from .errors import CcamaxError, NumericalError, ValidationError
from .greedy import scree_increments, submodularity_probe
from .moments import Tolerances
from .simulate import ModelSpec, run_monte_carlo_cell
from .stream import StreamConfig, estimate, test_null

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_TARGETS = {"root": "root_pillai", "square": "pillai"}

log = logging.getLogger("ccamax")


def _add_data_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--x", required=True, help="CSV file holding the X block")
    ap.add_argument("--y", required=True, help="CSV file holding the Y block")
    ap.add_argument(
        "--no-header",
        action="store_true",
        help="the CSV files carry no header line (labels are synthesized)",
    )


def _add_stream_flags(ap: argparse.ArgumentParser, reorderings: int) -> None:
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--stride", type=int, default=20)
    ap.add_argument("--ell-frac", dest="ell_frac", type=float, default=0.5,
                    help="burn-in prefix as a fraction of n (ell = ceil(frac*n))")
    ap.add_argument("--reorderings", type=int, default=reorderings)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--selector", choices=("greedy", "full"), default="greedy")
    ap.add_argument("--target", choices=("root", "square"), default="root")
    ap.add_argument("--ridge", type=float, default=None,
                    help="diagonal covariance ridge (default 0, env-overridable)")


def _add_out_flag(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--out", default=None, help="write the result here instead of stdout")


def _tolerances(args) -> Tolerances:
    overrides = {}
    if getattr(args, "ridge", None) is not None:
        overrides["ridge"] = args.ridge
    return Tolerances.from_env(**overrides)


def _stream_config(args, n: int, tol: Tolerances) -> StreamConfig:
    if not 0.0 < args.ell_frac < 1.0:
        raise ValidationError("--ell-frac must lie in (0, 1)")
    return StreamConfig(
        ell=math.ceil(args.ell_frac * n),
        stride=args.stride,
        alpha=args.alpha,
        reorderings=args.reorderings,
        seed=args.seed,
        selector=args.selector,
        target=_TARGETS[args.target],
        tolerances=tol,
    )


def _config_echo(args, tol: Tolerances | None = None) -> dict:
    echo = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("func",)
    }
    if tol is not None:
        echo["tolerances"] = {
            "spd_condition_cap": tol.spd_condition_cap,
            "tau_floor": tol.tau_floor,
            "sigma_floor": tol.sigma_floor,
            "ridge": tol.ridge,
        }
    return echo


def _load_pair(args):
    data = load_csv(args.x, args.y, header=not args.no_header)
    for warning in bound_check(data):
        log.warning(warning)
    return data


def _check_sizes(args, data) -> None:
    if not 1 <= args.sx <= data.p:
        raise ValidationError(f"--sx {args.sx} outside 1..{data.p}")
    if not 1 <= args.sy <= data.q:
        raise ValidationError(f"--sy {args.sy} outside 1..{data.q}")


def _run_estimate(args):
    data = _load_pair(args)
    _check_sizes(args, data)
    tol = _tolerances(args)
    cfg = _stream_config(args, data.n, tol)
    return estimate(
        data, args.sx, args.sy, cfg, config_echo=_config_echo(args, tol)
    )


def cmd_estimate(args) -> str:
    return _run_estimate(args).to_json() + "\n"


def cmd_test(args) -> str:
    report = _run_estimate(args)
    decision = test_null(report, args.alpha)
    payload = decision.to_dict()
    payload["report"] = report.to_dict()
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _tsv(lines, echo: dict) -> str:
    head = "# config: " + json.dumps(echo, sort_keys=True)
    return "\n".join([head, *lines]) + "\n"


def cmd_scree(args) -> str:
    data = _load_pair(args)
    tol = _tolerances(args)
    records = scree_increments(data, args.max_steps, tol=tol)
    lines = ["step\tside\tindex\tvalue"]
    for rec in records:
        lines.append(f"{rec.step}\t{rec.side}\t{rec.index + 1}\t{rec.increment!r}")
    return _tsv(lines, _config_echo(args, tol))


def cmd_submod(args) -> str:
    data = _load_pair(args)
    tol = _tolerances(args)
    diffs = submodularity_probe(
        data, args.size1, args.size2, args.probes, args.seed, tol=tol
    )
    lines = ["step\tside\tindex\tvalue"]
    for i, v in enumerate(diffs, start=1):
        lines.append(f"{i}\tXY\tprobe{i}\t{float(v)!r}")
    return _tsv(lines, _config_echo(args, tol))


def cmd_simulate(args) -> str:
    spec = ModelSpec(kind=args.model, p=args.p, q=args.q, tau=args.tau, n=args.n)
    tol = _tolerances(args)
    cfg = _stream_config(args, spec.n, tol)
    result = run_monte_carlo_cell(
        spec, args.s, args.reps, cfg, seed=args.seed, n_jobs=args.jobs
    )
    if args.raw:
        with open(args.raw, "w", encoding="utf-8") as fh:
            for i, rec in enumerate(result.raw):
                fh.write(json.dumps({"rep": i, **rec}, sort_keys=True) + "\n")
    echo = _config_echo(args, tol)
    echo["tau_true"] = result.tau_true
    header = (
        "model\tp\tq\ts\ttau\tn_reps\treject_rate\tcoverage\t"
        "mean_tau_hat\tsd_tau_hat\tfailures"
    )
    row = "\t".join(
        [
            spec.kind,
            str(spec.p),
            str(spec.q),
            str(args.s),
            repr(spec.tau),
            str(result.n_reps),
            repr(result.reject_rate),
            repr(result.coverage),
            repr(result.mean_tau_hat),
            repr(result.sd_tau_hat),
            str(result.failures),
        ]
    )
    return _tsv([header, row], echo)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccamax",
        description=(
            "Post-selection tests and confidence intervals for the maximal "
            "root-Pillai trace of paired variable subsets."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="point estimate with confidence interval")
    _add_data_flags(est)
    est.add_argument("--sx", type=int, required=True)
    est.add_argument("--sy", type=int, required=True)
    _add_stream_flags(est, reorderings=10)
    _add_out_flag(est)
    est.set_defaults(func=cmd_estimate)

    tst = sub.add_parser("test", help="one-sided test of no association")
    _add_data_flags(tst)
    tst.add_argument("--sx", type=int, required=True)
    tst.add_argument("--sy", type=int, required=True)
    _add_stream_flags(tst, reorderings=10)
    _add_out_flag(tst)
    tst.set_defaults(func=cmd_test)

    scr = sub.add_parser("scree", help="greedy trace increments for a scree plot")
    _add_data_flags(scr)
    scr.add_argument("--max-steps", dest="max_steps", type=int, default=60)
    scr.add_argument("--ridge", type=float, default=None)
    _add_out_flag(scr)
    scr.set_defaults(func=cmd_scree)

    sim = sub.add_parser("simulate", help="Monte Carlo rejection/coverage harness")
    sim.add_argument("--model", choices=("N", "A1", "A2"), required=True)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--q", type=int, required=True)
    sim.add_argument("--tau", type=float, default=0.0)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--s", type=int, required=True)
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument("--raw", default=None, help="also write per-replication JSON lines here")
    sim.add_argument("--jobs", type=int, default=1, help="parallel replications")
    _add_stream_flags(sim, reorderings=1)
    _add_out_flag(sim)
    sim.set_defaults(func=cmd_simulate)

    smd = sub.add_parser("submod", help="diminishing-returns probe of the objective")
    _add_data_flags(smd)
    smd.add_argument("--size1", type=int, default=5)
    smd.add_argument("--size2", type=int, default=6)
    smd.add_argument("--probes", type=int, default=100)
    smd.add_argument("--seed", type=int, default=0)
    smd.add_argument("--ridge", type=float, default=None)
    _add_out_flag(smd)
    smd.set_defaults(func=cmd_submod)

    return parser


def _emit(payload: str, args) -> None:
    out = getattr(args, "out", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


def _emit_error(exc: Exception, code: int) -> int:
    payload = {
        "error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    }
    sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        payload = args.func(args)
    except ValidationError as exc:
        return _emit_error(exc, EXIT_VALIDATION)
    except NumericalError as exc:
        return _emit_error(exc, EXIT_NUMERICAL)
    except CcamaxError as exc:
        return _emit_error(exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _emit_error(exc, EXIT_IO)
    _emit(payload, args)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
