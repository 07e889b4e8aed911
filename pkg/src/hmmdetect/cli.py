"""Command-line front end.

Every CSV artifact starts with ``#`` comment lines holding a run manifest:
subcommand, arguments, seed, tool version and the full content of each config
file read. Schedule details (thread count) and the wall-clock timestamp are
left out of the embedded header so that reruns are byte-identical; they go to
the ``<out>.manifest.json`` sidecar instead when ``--out`` is given.

Exit codes: 0 success, 1 numeric or validation failure, 2 usage error or
missing input file.
"""

import argparse
import csv
import datetime
import io
import json
import math
import sys

import numpy as np

from . import __version__
from ._streams import trial_rng
from .detectors import (CusumDetector, DetectorConfig, QuasiStationaryDist, ShiryaevDetector,
                        SRPDetector, estimate_quasi_stationary, run_to_alarm)
from .exceptions import EstimationError, ValidationError
from .harness import arl_run, calibrate_threshold, compare_rules, delay_run
from .hmm import ChangeScenario, HmmParams, sample_changed_path
from .renewal import DelayConstants, estimate_constants

EST_COLUMNS = ("rule", "b", "gamma", "omega", "mean", "se", "trials", "censored", "seed",
               "excluded", "lower_bound")


class UsageError(Exception):
    pass


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"input file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None


def parse_model_spec(path):
    """Load a model file (HmmParams) or a scenario file (ChangeScenario)."""
    spec = _read_json(path)
    if not isinstance(spec, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    if "pre" in spec or "post" in spec:
        return ChangeScenario.from_dict(spec)
    return HmmParams.from_dict(spec)


class _Run:
    """Collects the manifest and writes CSV output with it embedded."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.configs = {}

    def load(self, path):
        obj = parse_model_spec(path)
        self.configs[path] = _read_json(path)
        return obj

    def load_json(self, path):
        data = _read_json(path)
        self.configs[path] = data
        return data

    def manifest(self):
        argv, skip = [], False
        for a in self.argv:
            if skip:
                skip = False
                continue
            if a in ("--threads", "--out"):
                skip = True
                continue
            if a.startswith(("--threads=", "--out=")):
                continue
            argv.append(a)
        return {"subcommand": self.args.command, "argv": argv,
                "seed": getattr(self.args, "seed", None), "version": __version__,
                "configs": self.configs}

    def emit(self, header, rows):
        buf = io.StringIO()
        for key, value in self.manifest().items():
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True, separators=(',', ':'))}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.write(buf.getvalue())

    def write(self, text):
        out = getattr(self.args, "out", None)
        if out is None:
            sys.stdout.write(text)
            return
        with open(out, "w") as fh:
            fh.write(text)
        side = dict(self.manifest())
        side.update(timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
                    threads=getattr(self.args, "threads", 1), outputs=[out])
        with open(out + ".manifest.json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)


def _f(x):
    return repr(float(x))


def _pair(run, args):
    """(pre, post, scenario) from --scenario or --model [--post]."""
    path = args.scenario or args.model
    if path is None:
        raise UsageError("one of --scenario or --model is required")
    obj = run.load(path)
    if isinstance(obj, ChangeScenario):
        return obj.pre, obj.post, obj
    if args.post is None:
        raise UsageError("--model holds a single model; give --post as well or use --scenario")
    post = run.load(args.post)
    sc = ChangeScenario(obj, post)
    return obj, post, sc


def _config(run, args):
    psi = None
    init = "zero"
    if getattr(args, "psi", None):
        psi = QuasiStationaryDist.from_dict(run.load_json(args.psi))
        init = "quasi_stationary"
    p = args.p if args.rule == "shiryaev" else None
    return DetectorConfig(args.rule, args.log_b, p, init, psi)


def _est_row(rule, b, gamma, omega, est):
    return [rule, _f(b), "" if gamma is None else _f(gamma), omega, _f(est.mean),
            _f(est.std_error), est.trials, est.censored, est.seed, est.excluded,
            int(est.lower_bound)]


def _trial_rows(batch, rule, b, seed):
    for t, n, o in zip(batch.trials, batch.stop, batch.overshoot):
        cens = n == 0
        yield [int(t), rule, _f(b), "" if cens else int(n), int(cens), "" if cens else _f(o),
               seed]


TRIAL_COLUMNS = ("trial", "rule", "b", "N", "censored", "overshoot", "seed")


def cmd_simulate(run, args):
    sc = run.load(args.scenario)
    if isinstance(sc, HmmParams):
        sc = ChangeScenario(sc, sc)
    if args.omega is not None:
        sc = sc.with_omega(args.omega)
    path = sample_changed_path(sc, args.horizon, trial_rng(args.seed, 0), args.seed)
    rows = [[t, _f(x), int(h)] for t, (x, h) in enumerate(zip(path.observations, path.hidden))]
    run.emit(("t", "xi", "hidden"), rows)


def cmd_detect(run, args):
    pre, post, sc = _pair(run, args)
    if args.omega is not None:
        sc = sc.with_omega(args.omega)
    cfg = _config(run, args)
    if args.observations:
        xs = np.loadtxt(args.observations, delimiter=",", ndmin=1)
        run.configs[args.observations] = xs.tolist()
        cls = {"srp": SRPDetector, "cusum": CusumDetector, "shiryaev": ShiryaevDetector}[cfg.rule]
        kw = {"p": cfg.p} if cfg.rule == "shiryaev" else {}
        if cfg.rule == "srp":
            kw["psi"] = cfg.psi
        det = cls(pre, post, cfg.log_b, seed=args.seed, **kw).fit()
        path = det.transform(xs)[0]
        n = int(det.predict(xs)[0])
        over = "" if n == 0 else _f(path[n - 1] - cfg.log_b)
        run.emit(TRIAL_COLUMNS, [[0, cfg.rule, _f(cfg.log_b), n or "", int(n == 0), over,
                                  args.seed]])
        return
    cap = args.cap or int(math.ceil(50 * math.exp(cfg.log_b))) + (
        0 if math.isinf(sc.omega) else int(sc.omega))
    rep = run_to_alarm(sc, cfg, cap, args.seed, args.trial)
    run.emit(TRIAL_COLUMNS, [rep.csv_row()])


def cmd_arl(run, args):
    pre, post, _ = _pair(run, args)
    cfg = _config(run, args)
    est, batch = arl_run(pre, post, cfg, args.trials, args.seed, args.cap, args.threads)
    if args.per_trial:
        run.emit(TRIAL_COLUMNS, _trial_rows(batch, cfg.rule, cfg.log_b, args.seed))
    else:
        run.emit(EST_COLUMNS, [_est_row(cfg.rule, cfg.log_b, None, "inf", est)])


def cmd_delay(run, args):
    pre, post, sc = _pair(run, args)
    if args.omega is not None:
        sc = sc.with_omega(args.omega)
    if math.isinf(sc.omega):
        raise UsageError("delay needs a finite change point (--omega or scenario omega)")
    cfg = _config(run, args)
    est, batch = delay_run(sc, cfg, args.trials, args.seed, args.cap, args.threads)
    if args.per_trial:
        run.emit(TRIAL_COLUMNS, _trial_rows(batch, cfg.rule, cfg.log_b, args.seed))
    else:
        run.emit(EST_COLUMNS, [_est_row(cfg.rule, cfg.log_b, None, int(sc.omega), est)])


def cmd_calibrate(run, args):
    pre, post, _ = _pair(run, args)
    p = args.p if args.rule == "shiryaev" else None
    res = calibrate_threshold(pre, post, args.rule, args.gamma, args.budget, args.seed, p=p,
                              tol=args.tol, threads=args.threads)
    rows = [_est_row(args.rule, res.log_b, args.gamma, "inf", res.arl) + [int(res.converged)]]
    run.emit(EST_COLUMNS + ("converged",), rows)


def cmd_constants(run, args):
    pre, post, _ = _pair(run, args)
    c = estimate_constants(pre, post, args.seed, trials=args.trials,
                           replicates=args.replicates, n_probes=args.probes,
                           tol=args.tol, check=not args.no_check, variant=args.variant)
    c.meta["manifest"] = run.manifest()
    c.to_json(args.out_constants)
    rows = [[k, _f(getattr(c, k)), _f(getattr(c, s))] for k, s in (
        ("k10", "k10_se"), ("k01", "k01_se"), ("rho", "rho_se"), ("mean_eta", "eta_se"),
        ("integral_mplus", "integral_se"), ("delta_init", "delta_init_se"))]
    rows.append(["max_residual", _f(c.max_residual), ""])
    run.emit(("constant", "value", "se"), rows)


def cmd_approx(run, args):
    try:
        data = run.load_json(args.constants)
    except UsageError:
        raise UsageError(f"constants file {args.constants} not found; "
                         "run the 'constants' subcommand first") from None
    try:
        consts = DelayConstants(**data)
    except TypeError as exc:
        raise ValidationError(f"{args.constants} is not a constants file: {exc}") from None
    rows = [[_f(b), _f(consts.approx_delay(b)), _f(consts.k10), _f(consts.k10_se)]
            for b in args.log_b]
    run.emit(("b", "approx_delay", "k10", "k10_se"), rows)


def cmd_compare(run, args):
    scenarios = {}
    for path in args.scenario:
        obj = run.load(path)
        if not isinstance(obj, ChangeScenario):
            raise UsageError(f"{path}: compare needs scenario files")
        scenarios[path] = obj
    table = compare_rules(scenarios, args.rules, args.gamma, args.trials, args.seed,
                          omegas=tuple(args.omegas), budget=args.budget, p=args.p,
                          threads=args.threads)
    run.emit(table.COLUMNS, table.to_rows())


def cmd_quasistat(run, args):
    pre, post, _ = _pair(run, args)
    psi = estimate_quasi_stationary(pre, post, args.log_b, args.particles, args.steps, args.seed)
    data = psi.to_dict()
    data["manifest"] = run.manifest()
    with open(args.out_psi, "w") as fh:
        json.dump(data, fh, sort_keys=True)
    w = np.asarray(psi.weights)
    mean = float(w @ psi.support)
    sd = float(math.sqrt(w @ (psi.support - mean) ** 2))
    run.emit(("log_b", "particles", "burn_in", "mean_r", "sd_r", "absorption_rate"),
             [[_f(psi.log_b), psi.particles, psi.burn_in, _f(mean), _f(sd),
               _f(psi.absorption_rate)]])


def build_parser():
    ap = argparse.ArgumentParser(prog="hmmdetect", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, pair=True, rule=True):
        if seed:
            p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", help="CSV output path (default stdout)")
        p.add_argument("--threads", type=int, default=1)
        if pair:
            p.add_argument("--scenario", help="scenario JSON (pre/post/omega)")
            p.add_argument("--model", help="pre-change model JSON, or a scenario JSON")
            p.add_argument("--post", help="post-change model JSON when --model is a model")
        if rule:
            p.add_argument("--rule", choices=("srp", "cusum", "shiryaev"), required=True)
            p.add_argument("--log-b", type=float, required=True)
            p.add_argument("--p", type=float, default=0.01, help="Shiryaev prior parameter")
            p.add_argument("--psi", help="quasi-stationary start JSON from 'quasistat'")
            p.add_argument("--cap", type=int)
        return p

    p = common(sub.add_parser("simulate", help="sample a path"), pair=False, rule=False)
    p.add_argument("--scenario", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--omega", type=int)
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("detect", help="run one detector to alarm"))
    p.add_argument("--omega", type=int)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--observations", help="comma/newline separated observations to scan")
    p.set_defaults(func=cmd_detect)

    p = common(sub.add_parser("arl", help="ARL to false alarm"))
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--per-trial", action="store_true")
    p.set_defaults(func=cmd_arl)

    p = common(sub.add_parser("delay", help="conditional detection delay"))
    p.add_argument("--omega", type=int)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--per-trial", action="store_true")
    p.set_defaults(func=cmd_delay)

    p = common(sub.add_parser("calibrate", help="threshold for a target ARL"), rule=False)
    p.add_argument("--rule", choices=("srp", "cusum", "shiryaev"), required=True)
    p.add_argument("--p", type=float, default=0.01)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--budget", type=int, required=True, help="trials per probe")
    p.add_argument("--tol", type=float, default=0.05)
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("constants", help="estimate delay-expansion constants"),
               rule=False)
    p.add_argument("--out-constants", required=True, help="constants JSON to write")
    p.add_argument("--trials", type=int, default=4000)
    p.add_argument("--replicates", type=int, default=2000)
    p.add_argument("--probes", type=int, default=50)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--variant", choices=("mplus", "crossing"), default="mplus")
    p.add_argument("--no-check", action="store_true", help="do not fail on Poisson residuals")
    p.set_defaults(func=cmd_constants)

    p = common(sub.add_parser("approx", help="second-order delay approximation"), seed=False,
               pair=False, rule=False)
    p.add_argument("--constants", required=True)
    p.add_argument("--log-b", type=float, nargs="+", required=True)
    p.set_defaults(func=cmd_approx)

    p = common(sub.add_parser("compare", help="calibrate rules and tabulate delays"),
               pair=False, rule=False)
    p.add_argument("--scenario", nargs="+", required=True)
    p.add_argument("--rules", nargs="+", choices=("srp", "cusum", "shiryaev"), required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--omegas", type=int, nargs="+", default=[1, 10, 50])
    p.add_argument("--p", type=float, default=0.01)
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("quasistat", help="quasi-stationary start distribution"),
               rule=False)
    p.add_argument("--log-b", type=float, required=True)
    p.add_argument("--particles", type=int, default=10_000)
    p.add_argument("--steps", type=int)
    p.add_argument("--out-psi", required=True, help="JSON file for the distribution")
    p.set_defaults(func=cmd_quasistat)
    return ap


def dispatch(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = _Run(args, argv)
    try:
        args.func(run, args)
    except UsageError as exc:
        print(f"hmmdetect {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, EstimationError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"hmmdetect {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
