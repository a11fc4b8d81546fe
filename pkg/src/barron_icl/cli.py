"""Command line entry point: ``barron-icl <subcommand> --config cfg.json``.

Exit codes are 0 on success, 1 for bad input (including usage errors) and 2
for runtime failures. Errors are written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys

from . import features as feat
from . import harness
from . import lasso
from . import transformer as tr
from .errors import BarronICLError, ConfigError, ValidationError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it through our own codes
    def error(self, message):
        raise _UsageError(message)


def _parser():
    p = _Parser(prog="barron-icl", description="In-context Lasso transformers over ramp features.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "bank": "emit the feature bank as JSON",
        "solve": "run ISTA on a sampled task and emit the trajectory CSV",
        "build": "emit the constructed transformer weights as JSON",
        "episode": "run one end-to-end episode and emit its report as JSON",
        "verify": "check every emulation bound on one episode and print a table",
        "sweep": "risk estimates over a parameter grid, as CSV",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override the data seed (the bank seed for `bank`)")
        s.add_argument("--out", help="write here instead of stdout")
        if name == "sweep":
            s.add_argument("--grid", action="append", default=[], help="axis=v1,v2,... (repeatable)")
            s.add_argument("--workers", type=int, help="parallel cells")
    return p


@contextlib.contextmanager
def _output(path, stdout):
    if path is None:
        yield stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _data_seed(config, args):
    return config.seeds[0] if args.seed is None else args.seed


def _cmd_bank(config, args, out):
    seed = config.bank_seed if args.seed is None else args.seed
    bank = feat.make_feature_bank(config.spec, config.n, config.tau_ff, seed)
    json.dump(bank.to_dict(), out)
    out.write("\n")


def _cmd_solve(config, args, out):
    bank = harness._bank(config)
    _, (X, y), _ = harness.generate_task(
        config.spec, config.member_seed, config.N, config.d, config.sigma,
        _data_seed(config, args), config.x_dist, config.noise,
    )
    problem = lasso.LassoProblem(feat.feature_matrix(bank, X), y, config.penalty, config.step)
    traj = lasso.run_ista(problem, (config.L - 1) // 2)
    best = lasso.lasso_objective(problem, lasso.oracle_solve(problem, tol=harness.ORACLE_TOL))
    traj.to_csv(out, reference_objective=best)


def _cmd_build(config, args, out):
    weights = harness._weights(config, harness._bank(config))
    json.dump(weights.to_dict(), out)
    out.write("\n")


def _cmd_episode(config, args, out):
    report = harness.run_episode(config, data_seed=_data_seed(config, args))
    json.dump(report.to_dict(), out, sort_keys=True)
    out.write("\n")


def _cmd_verify(config, args, out):
    bank = harness._bank(config)
    _, (X, y), xq = harness.generate_task(
        config.spec, config.member_seed, config.N, config.d, config.sigma,
        _data_seed(config, args), config.x_dist, config.noise,
    )
    lam, eta = config.penalty, config.step
    weights = harness._weights(config, bank)
    H_L, trace = tr.forward(weights, tr.init_hidden(X, y, xq, config.n), trace=True)
    problem = tr.problem_from_state(trace[2], eta, lam)
    report = tr.emulation_gap(trace, problem, eta, lam, config.tau)
    gap, gap_bound, allowance, readout_ok = tr.readout_check(H_L, config.tau)

    def mark(ok):
        return "pass" if ok else "FAIL"

    # bounds are exact-arithmetic; the +round column is the float64 evaluation allowance
    out.write(
        f"{'t':>4}  {'|e_t|inf':>10}  {'bound':>10}  {'+round':>9}  {'':4}  "
        f"{'y_hat gap':>10}  {'bound':>10}  {'+round':>9}\n"
    )
    for row in report.rows():
        out.write(
            f"{row['t']:>4}  {row['e_inf']:10.3e}  {row['e_bound']:10.3e}  {row['e_roundoff']:9.2e}  "
            f"{mark(row['e_ok']):4}  {row['y_hat_gap']:10.3e}  {row['y_hat_bound']:10.3e}  "
            f"{row['y_hat_roundoff']:9.2e}  {mark(row['y_hat_ok'])}\n"
        )
    out.write(f"readout gap {gap:.3e}  bound {gap_bound:.3e}  +round {allowance:.2e}  {mark(readout_ok)}\n")
    ok = report.all_ok and readout_ok
    out.write(f"emulation bounds: {'all pass' if ok else 'some FAIL'} (tau={config.tau:g}, max e={report.max_e:.3e})\n")


def _cmd_sweep(config, args, out):
    grid = harness.parse_grid(args.grid)
    if not grid:
        raise ConfigError("sweep needs at least one --grid axis=values")
    if args.seed is not None:
        config = config.replace(seeds=(args.seed,))
    if args.out:
        harness.sweep(config, grid, out_path=args.out, workers=args.workers)
    else:
        harness.sweep(config, grid, stream=out, workers=args.workers)


_COMMANDS = {
    "bank": _cmd_bank,
    "solve": _cmd_solve,
    "build": _cmd_build,
    "episode": _cmd_episode,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
}


def _fail(code, kind, message, stderr):
    stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    return code


def main(argv=None, stdout=None, stderr=None):
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = _parser().parse_args(argv)
    except _UsageError as exc:
        return _fail(1, "UsageError", exc, stderr)
    try:
        config = harness.load_config(args.config)
        if args.command == "sweep":
            _cmd_sweep(config, args, stdout)
        else:
            with _output(args.out, stdout) as out:
                _COMMANDS[args.command](config, args, out)
    except ValidationError as exc:
        return _fail(1, type(exc).__name__, exc, stderr)
    except BarronICLError as exc:
        return _fail(2, type(exc).__name__, exc, stderr)
    except (OSError, ValueError, ArithmeticError) as exc:
        return _fail(2, type(exc).__name__, exc, stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
