"""Command-line interface: ``glmresid {fit,residuals,gof,simulate,qq}``.

Exit codes: 0 success, 1 usage error, 2 data or domain error,
3 numerical failure (e.g. IRLS non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import gof
from .exceptions import (
    ConvergenceError,
    DomainError,
    GLMResidError,
    NumericalError,
    RankDeficientError,
)
from .family import get_family
from .glm import ModelSpec, irls_fit
from .link import get_link
from .residuals import density_adjusted, density_pearson, residual_set
from .simulate import SimConfig, run_simulation, write_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(full):
    spec = ".17g" if full else ".4g"

    def f(v):
        if isinstance(v, (float, np.floating)):
            return format(float(v), spec)
        return str(v)

    return f


def read_csv(path, response=None):
    """Read a numeric CSV with header; returns ``(names, columns)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise DomainError(f"{path}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric value ({exc})") from None
    if data.shape[1] != len(header):
        raise DomainError(f"{path}: rows do not match header width")
    if response is not None and response not in header:
        raise DomainError(f"{path}: no column named {response!r}")
    return header, data


def _model_from_args(args):
    header, data = read_csv(args.data, args.response)
    j = header.index(args.response)
    y = data[:, j]
    X = np.delete(data, j, axis=1)
    names = [h for h in header if h != args.response]
    if not args.no_intercept:
        X = np.column_stack([np.ones(len(y)), X])
        names = ["(intercept)"] + names
    fam = get_family(args.family)
    spec = ModelSpec(fam, get_link(args.link, fam), X, phi=args.phi)
    fit = irls_fit(spec, y, phi_method=args.estimate_phi or "moment")
    return names, spec, fit


def _write_table(out, header, rows, fmt):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


def cmd_fit(args, out):
    names, spec, fit = _model_from_args(args)
    fmt = _fmt(args.full_precision)
    _write_table(out, ["term", "estimate", "bias"],
                 zip(names, fit.beta_hat, fit.bias_beta), fmt)
    out.write(f"# phi_hat={fmt(fit.phi_hat)} iterations={fit.iterations} deviance={fmt(fit.deviance)}\n")
    _write_table(out, ["obs", "mu_hat", "weight", "z_ii", "bias_eta"],
                 zip(range(1, spec.n + 1), fit.mu_hat, fit.weights, fit.z_diag, fit.bias_eta),
                 fmt)
    return EXIT_OK


def cmd_residuals(args, out):
    _, spec, fit = _model_from_args(args)
    rs = residual_set(fit)
    fmt = _fmt(args.full_precision)
    dest = open(args.out, "w", encoding="utf-8") if args.out else out
    try:
        _write_table(
            dest,
            ["obs", "y", "mu_hat", "pearson", "corrected", "adjusted", "rho_at_R", "z_ii", "bias_eta"],
            zip(range(1, spec.n + 1), fit.y, fit.mu_hat, rs.pearson, rs.corrected,
                rs.adjusted, rs.rho_at_r, fit.z_diag, fit.bias_eta),
            fmt,
        )
    finally:
        if dest is not out:
            dest.close()
    if args.density_out:
        fam = fit.family
        probs = np.linspace(0.001, 0.999, args.grid_points)
        rows = []
        for i in range(spec.n):
            xs = fam.residual_ppf(probs, fit.mu_hat[i], fit.phi)
            fe = fam.residual_pdf(xs, fit.mu_hat[i], fit.phi)
            fr = density_pearson(fit, i, xs, clamp=args.clamp_densities)
            sigma = 1.0 / np.sqrt(fit.phi)
            fa = density_adjusted(fit, i, xs / sigma, clamp=args.clamp_densities)
            rows.extend(zip([i + 1] * len(xs), xs, fe, fr, xs / sigma, fa))
        with open(args.density_out, "w", encoding="utf-8") as fh:
            _write_table(fh, ["obs", "x", "f_true", "f_pearson", "x_adjusted", "f_adjusted"],
                         rows, fmt)
    return EXIT_OK


def cmd_gof(args, out):
    header, data = read_csv(args.data)
    for col in filter(None, (args.column, args.against)):
        if col not in header:
            raise DomainError(f"{args.data}: no column named {col!r}")
    a = data[:, header.index(args.column)]
    fmt = _fmt(args.full_precision)
    if args.against:
        b = data[:, header.index(args.against)]
        rows = [("ks", gof.ks_two_sample(a, b)), ("ad", gof.ad_two_sample(a, b))]
    else:
        fam = get_family(args.dist)
        if args.phi is None:
            raise UsageError("gof: --phi is required with --dist")
        mu = args.mu if args.mu is not None else 1.0
        if fam.token == "inverse_gaussian" and args.mu is None:
            raise UsageError("gof: --mu is required for the inverse_gaussian residual law")
        cdf = lambda x: fam.residual_cdf(x, mu, args.phi)  # noqa: E731
        rows = [("ks", gof.ks_one_sample(a, cdf)), ("ad", gof.ad_one_sample(a, cdf))]
    _write_table(out, ["statistic", "value"], rows, fmt)
    return EXIT_OK


def cmd_simulate(args, out):
    cfg = SimConfig.from_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.use_true_phi:
        overrides["use_true_phi"] = True
    if args.n_jobs is not None:
        overrides["n_jobs"] = args.n_jobs
    if overrides:
        cfg = SimConfig(**{**cfg.__dict__, **overrides})
    report = run_simulation(cfg)
    paths = write_report(report, args.out)
    for p in paths:
        out.write(p + "\n")
    return EXIT_OK


QQ_KINDS = ("pearson", "corrected", "adjusted")


def cmd_qq(args, out):
    cols, header = [], ["rank"]
    for kind in QQ_KINDS:
        path = os.path.join(args.dir, f"qq_{kind}.csv")
        _, data = read_csv(path)
        cols.append(data)
        header += [f"theoretical_{kind}", f"empirical_{kind}"]
    n = cols[0].shape[0]
    if any(c.shape[0] != n for c in cols):
        raise DomainError("QQ files have different lengths")
    fmt = _fmt(args.full_precision)
    dest = open(args.out, "w", encoding="utf-8") if args.out else out
    try:
        rows = (
            [k + 1] + [v for c in cols for v in c[k]] for k in range(n)
        )
        _write_table(dest, header, rows, fmt)
    finally:
        if dest is not out:
            dest.close()
    return EXIT_OK


def _family_token(token):
    try:
        return get_family(token).token
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _link_token(token):
    key = token.strip().lower()
    if key == "canonical":
        return key
    try:
        return get_link(key).token
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _model_args(p):
    p.add_argument("--data", required=True, help="CSV file with header")
    p.add_argument("--response", required=True, help="name of the response column")
    p.add_argument("--family", required=True, type=_family_token,
                   help="normal | gamma | inverse_gaussian")
    p.add_argument("--link", required=True, type=_link_token,
                   help="identity | log | reciprocal | inverse_square | canonical")
    p.add_argument("--no-intercept", action="store_true")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--phi", type=float, help="known precision parameter")
    g.add_argument("--estimate-phi", choices=("moment", "ml"), help="precision estimator")


def _global_flags(default):
    common = _Parser(add_help=False)
    common.add_argument("--json-errors", action="store_true", default=default,
                        help="emit errors as JSON on stderr")
    common.add_argument("--full-precision", action="store_true", default=default,
                        help="print numbers with 17 significant digits")
    return common


def build_parser():
    parser = _Parser(prog="glmresid", description=__doc__.splitlines()[0],
                     parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _global_flags(argparse.SUPPRESS)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[common])

    p = add("fit", "fit a GLM and print coefficients and leverages")
    _model_args(p)

    p = add("residuals", "Pearson, corrected and adjusted residuals as CSV")
    _model_args(p)
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.add_argument("--density-out", help="also write density expansions on a grid")
    p.add_argument("--grid-points", type=int, default=201)
    p.add_argument("--clamp-densities", action="store_true",
                   help="truncate negative expansion densities at zero")

    p = add("gof", "K-S and A-D distances")
    p.add_argument("--data", required=True)
    p.add_argument("--column", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--against", help="second column (two-sample statistics)")
    g.add_argument("--dist", type=_family_token,
                   help="true-residual law token (one-sample statistics)")
    p.add_argument("--phi", type=float)
    p.add_argument("--mu", type=float, help="mean (inverse_gaussian only)")

    p = add("simulate", "run the Monte Carlo study")
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--use-true-phi", action="store_true")
    p.add_argument("--n-jobs", type=int)

    p = add("qq", "merge QQ files from a simulate output directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--out")
    return parser


COMMANDS = {
    "fit": cmd_fit,
    "residuals": cmd_residuals,
    "gof": cmd_gof,
    "simulate": cmd_simulate,
    "qq": cmd_qq,
}


def _report(args_json, code, exc, err):
    if args_json:
        err.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    else:
        err.write(f"glmresid: error: {exc}\n")
    return code


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    argv = list(sys.argv[1:] if argv is None else argv)
    json_errors = "--json-errors" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        if not json_errors:
            err.write(parser.format_usage())
        return _report(json_errors, EXIT_USAGE, exc, err)
    except (ConvergenceError, NumericalError) as exc:
        return _report(json_errors, EXIT_NUMERIC, exc, err)
    except (DomainError, RankDeficientError, GLMResidError, OSError, ValueError) as exc:
        return _report(json_errors, EXIT_DATA, exc, err)


if __name__ == "__main__":
    sys.exit(main())
