"""Command line: ``ppann {gen,train,eval,verify,repro}``.

Option precedence is built-in default < ``--config`` INI section < explicit flag.
The effective options are written to ``config.ini`` in every output directory.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 numerical failure, 4 verification failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time

import numpy as np

from . import calib, matgen, pann, picnn, verify
from .errors import DomainError, NumericalError, SolverError

log = logging.getLogger("ppann")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3, 4

# average log10 MSE (calibration, test) of the four kept restarts, per case and type
REFERENCE_STUDY1 = {
    ("A", "Type1"): (-4.54, -3.60), ("B", "Type1"): (-4.44, -2.69), ("C", "Type1"): (-5.24, -2.43),
    ("A", "Type2"): (-4.55, -3.70), ("B", "Type2"): (-3.26, -2.96), ("C", "Type2"): (-4.31, -2.12),
    ("A", "Type3"): (-5.42, -5.97), ("B", "Type3"): (-4.74, -3.45), ("C", "Type3"): (-4.13, -3.61),
}
REFERENCE_VECTOR = {"mean_kept": (-4.37, -3.23), "best": (-5.18, -3.69)}

ISO_CHECK_MU = 2.4


class UsageError(Exception):
    pass


class VerificationFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- options -----------------------------------------------------------------------

_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _bool(text):
    if isinstance(text, bool):
        return text
    try:
        return _BOOL[str(text).strip().lower()]
    except KeyError:
        raise UsageError(f"not a boolean: {text!r}") from None


# name: (converter, default); shared options apply to every command
SHARED = {"seed": (int, 0), "out": (str, "out"), "workers": (int, 1)}
OPTIONS = {
    "gen": {"study": (str, "I"), "case": (str, "A"), "mixed": (str, "kinematic")},
    "train": {"arch": (str, "Type1"), "study": (str, "I"), "case": (str, "A"),
              "mixed": (str, "kinematic"), "data": (str, ""), "epochs": (int, 7000),
              "lr": (float, 0.002), "restarts": (int, 5), "optimizer": (str, "auto"),
              "normalize_stress": (str, "auto"), "ablate_normalisation": (_bool, False),
              "init": (str, "glorot")},
    "eval": {"model": (str, ""), "data": (str, ""), "study": (str, "I"), "case": (str, "A"),
             "mixed": (str, "kinematic")},
    "verify": {"model": (str, ""), "samples": (int, 64), "ablate_normalisation": (_bool, False)},
    "repro": {"study": (str, "I"), "cases": (str, "A,B,C"), "archs": (str, "auto"),
              "epochs": (int, 7000), "restarts": (int, 5), "optimizer": (str, "auto"),
              "samples": (int, 64), "mixed": (str, "kinematic")},
}


def _add_options(p, command):
    p.add_argument("--config", default=None, help="INI file; section named after the command")
    for name, (conv, default) in {**SHARED, **OPTIONS[command]}.items():
        flag = "--" + name.replace("_", "-")
        if conv is _bool:
            p.add_argument(flag, dest=name, action="store_const", const=True, default=None,
                           help=f"(default {default})")
        else:
            p.add_argument(flag, dest=name, type=conv, default=None, help=f"(default {default})")


def build_parser():
    p = _Parser(prog="ppann", description="Parametrised polyconvex PANN toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    helps = {"gen": "write calibration/test CSVs", "train": "calibrate a model",
             "eval": "score a model on data", "verify": "run the property suite",
             "repro": "gen, train, eval and verify end to end"}
    for name, text in helps.items():
        _add_options(sub.add_parser(name, help=text), name)
    return p


def effective_options(args):
    """Merge defaults, the config file section and explicit flags."""
    table = {**SHARED, **OPTIONS[args.command]}
    opts = {k: d for k, (_, d) in table.items()}
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError:
            raise
        except configparser.Error as exc:
            raise UsageError(f"cannot parse config file: {exc}") from None
        for section in ("common", args.command):
            if not cp.has_section(section):
                continue
            for key, value in cp.items(section):
                if key not in table:
                    raise UsageError(f"unknown option {key!r} in section [{section}]")
                try:
                    opts[key] = table[key][0](value)
                except ValueError:
                    raise UsageError(f"bad value for {key!r}: {value!r}") from None
    for key in table:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    return opts


def write_config(opts, out_dir, command):
    cp = configparser.ConfigParser()
    cp[command] = {k: str(v) for k, v in opts.items()}
    with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)


def _check_choice(value, choices, name):
    if value not in choices:
        raise UsageError(f"invalid {name} {value!r}; choose from {', '.join(choices)}")
    return value


def _study(value):
    aliases = {"I": "I", "1": "I", "II": "II", "2": "II", "vector": "vector"}
    if str(value) not in aliases:
        raise UsageError(f"invalid study {value!r}; choose from I, II, vector")
    return aliases[str(value)]


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _fmt(x):
    return "%.17g" % x


# -- gen ------------------------------------------------------------------------------


def _datasets(study, case, mixed):
    return matgen.build(study, "calib", case, mixed), matgen.build(study, "test", case, mixed)


def cmd_gen(opts):
    study = _study(opts["study"])
    case = _check_choice(opts["case"], ("A", "B", "C"), "case")
    _check_choice(opts["mixed"], matgen.MIXED_MODES, "mixed")
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    cal, test = _datasets(study, case, opts["mixed"])
    matgen.write_csv(cal, os.path.join(out, "calib.csv"))
    matgen.write_csv(test, os.path.join(out, "test.csv"))
    write_config(opts, out, "gen")
    print(f"wrote {len(cal)} calibration and {len(test)} test tuples to {out}")
    return EXIT_OK


def _load_data(opts, study):
    """Calibration/test sets from ``--data`` if given, else generated in memory."""
    if opts["data"]:
        cal = matgen.read_csv(os.path.join(opts["data"], "calib.csv"))
        test = matgen.read_csv(os.path.join(opts["data"], "test.csv"))
        return cal, test
    return _datasets(study, opts["case"], opts["mixed"])


# -- train ----------------------------------------------------------------------------


def _train_config(opts, study):
    optimizer = opts["optimizer"]
    if optimizer == "auto":
        optimizer = "quasi-newton" if study == "vector" else "adam"
    _check_choice(optimizer, ("adam", "quasi-newton"), "optimizer")
    ns = opts["normalize_stress"]
    normalize = study == "vector" if ns == "auto" else _bool(ns)
    _check_choice(opts.get("init", "glorot"), picnn.INIT_SCHEMES, "init")
    try:
        return calib.TrainConfig(optimizer=optimizer, learning_rate=opts.get("lr", 0.002),
                                 epochs=opts["epochs"], seed=opts["seed"],
                                 restarts=opts["restarts"], normalize_stress=normalize,
                                 study=study,
                                 normalisation=not opts.get("ablate_normalisation", False),
                                 init=opts.get("init", "glorot"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _picnn_config(arch, study):
    _check_choice(arch, tuple(k.value for k in picnn.Kind), "arch")
    return picnn.default_config(arch, 2 if study == "vector" else 1)


def train_to_dir(config, cal, test, pconfig, out, workers=1):
    """Train, then write report, loss history, timings and one model file per restart."""
    os.makedirs(out, exist_ok=True)
    report, models = calib.train(config, cal, test, pconfig, workers)
    _write_text(os.path.join(out, "report.txt"), report.metrics_text())
    _write_text(os.path.join(out, "loss.csv"), report.loss_csv())
    _write_text(os.path.join(out, "timing.txt"),
                "".join(f"restart.{r.index}.wall_time = {r.wall_time:.3f}\n"
                        for r in report.restarts))
    for r, m in zip(report.restarts, models):
        pann.save(m, os.path.join(out, f"model_r{r.index}.txt"))
    ok = [r for r in report.restarts if r.status == "ok"]
    if not ok:
        raise NumericalError("every restart aborted: " + "; ".join(r.note for r in report.restarts))
    best = models[report.restarts.index(report.best)]
    pann.save(best, os.path.join(out, "model.txt"))
    return report, models, best


def cmd_train(opts):
    study = _study(opts["study"])
    _check_choice(opts["case"], ("A", "B", "C"), "case")
    _check_choice(opts["mixed"], matgen.MIXED_MODES, "mixed")
    config = _train_config(opts, study)
    pconfig = _picnn_config(opts["arch"], study)
    cal, test = _load_data(opts, study)
    if cal.y_dim != pconfig.y_dim:
        raise UsageError(f"data has {cal.y_dim} parameters, {opts['arch']} expects {pconfig.y_dim}")
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    write_config(opts, out, "train")
    report, _, _ = train_to_dir(config, cal, test, pconfig, out, opts["workers"])
    for r in report.restarts:
        flag = " (excluded)" if r.excluded else ""
        print(f"restart {r.index} seed {r.seed}: {r.status} calib {r.calib_log10_mse:.3f} "
              f"test {r.test_log10_mse:.3f}{flag}")
    if report.kept():
        print(f"mean of kept: calib {report.mean_calib_log10_mse:.3f} "
              f"test {report.mean_test_log10_mse:.3f}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------


def evaluate_to_dir(model, cal, test, out):
    os.makedirs(out, exist_ok=True)
    lines = [f"calib.log10_mse = {_fmt(calib.unweighted_log10_mse(model, cal))}",
             f"test.log10_mse = {_fmt(calib.unweighted_log10_mse(model, test))}",
             f"calib.log10_mse_physical = {_fmt(calib.unweighted_log10_mse(model, cal, True))}",
             f"test.log10_mse_physical = {_fmt(calib.unweighted_log10_mse(model, test, True))}"]
    _write_text(os.path.join(out, "metrics.txt"), "\n".join(lines) + "\n")
    tcols = [f"t{k + 1}" for k in range(test.y_dim)]
    rows = [",".join(["t_id"] + tcols + ["mse", "log10_mse"])]
    for tid, tv, mse in calib.per_t_mse(model, test):
        rows.append(",".join([str(tid)] + [_fmt(v) for v in tv]
                             + [_fmt(mse), _fmt(calib.safe_log10(mse))]))
    _write_text(os.path.join(out, "per_t_mse.csv"), "\n".join(rows) + "\n")
    for name, ds in (("calib", cal), ("test", test)):
        P = model.stress(ds.F, ds.t).P
        comps = [f"{i}{j}" for i in range(1, 4) for j in range(1, 4)]
        head = (["path", "t_id", "point"] + tcols + [f"F{c}" for c in comps]
                + [f"P{c}_data" for c in comps] + [f"P{c}_model" for c in comps])
        key = ds.path_id * 100000 + ds.t_id
        _, first = np.unique(key, return_index=True)
        starts = np.zeros(len(ds), dtype=int)
        starts[np.sort(first)] = 1
        grp = np.cumsum(starts) - 1
        group_start = np.flatnonzero(starts)
        point = np.arange(len(ds)) - group_start[grp]
        body = np.column_stack([ds.t, ds.F.reshape(-1, 9), ds.P.reshape(-1, 9), P.reshape(-1, 9)])
        out_rows = [",".join(head)]
        for k in range(len(ds)):
            out_rows.append(",".join([matgen.LOAD_PATHS[ds.path_id[k]], str(ds.t_id[k]),
                                      str(point[k])] + [_fmt(v) for v in body[k]]))
        _write_text(os.path.join(out, f"stress_paths_{name}.csv"), "\n".join(out_rows) + "\n")
    return lines


def cmd_eval(opts):
    if not opts["model"]:
        raise UsageError("eval needs --model")
    model = pann.load(opts["model"])
    study = "vector" if model.y_dim == 2 else _study(opts["study"])
    cal, test = _load_data(opts, study)
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    write_config(opts, out, "eval")
    for line in evaluate_to_dir(model, cal, test, out):
        print(line)
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------


def verify_to_dir(model, out, seed=0, samples=64):
    os.makedirs(out, exist_ok=True)
    suite = verify.run_suite(model, verify.ProbeConfig(n_samples=samples, seed=seed))
    _write_text(os.path.join(out, "verify.txt"), suite.to_text())
    return suite


def cmd_verify(opts):
    if not opts["model"]:
        raise UsageError("verify needs --model")
    model = pann.load(opts["model"])
    if opts["ablate_normalisation"]:
        model = verify.make_mutant(model, "normalisation")
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    write_config(opts, out, "verify")
    suite = verify_to_dir(model, out, opts["seed"], opts["samples"])
    for r in suite.reports:
        tag = "PASS" if r.passed else ("FAIL" if r.name in suite.required else "fail (informative)")
        print(f"{r.name:14s} {tag:20s} worst {r.violation:.3e}")
    if not suite.passed:
        raise VerificationFailed("required property check failed")
    return EXIT_OK


# -- repro ----------------------------------------------------------------------------


def normalisation_violation(model, t):
    P = model.stress(np.eye(3), np.atleast_1d(np.asarray(t, dtype=float))).P
    return float(np.max(np.abs(P)))


def iso_curve_spread(model, mu=ISO_CHECK_MU, gamma=matgen.CONTROL_RANGES["mixed"][1],
                     mixed="kinematic"):
    """Relative spread (max - min) / mean|.| of predicted P11 along one iso-curve.

    Each sample is evaluated at the most deformed point of its own mixed path,
    which is the same F for every sample unless the sides are stress-free.
    """
    ts = matgen.iso_curve(mu)
    if mixed == "kinematic":
        F = np.broadcast_to(matgen.mixed_F(gamma), (len(ts), 3, 3))
    else:
        F = np.array([matgen.solve_mixed(matgen.material("print", t), gamma) for t in ts])
    P11 = model.stress(F, ts).P[:, 0, 0]
    return float((P11.max() - P11.min()) / np.mean(np.abs(P11)))


def _repro_study1(opts, out, archs, cases):
    rows = ["case,arch,calib_mean_kept,test_mean_kept,calib_reference,test_reference,"
            "excluded_restart,verify_passed"]
    for case in cases:
        cal, test = _datasets("I", case, opts["mixed"])
        data_dir = os.path.join(out, case, "data")
        os.makedirs(data_dir, exist_ok=True)
        matgen.write_csv(cal, os.path.join(data_dir, "calib.csv"))
        matgen.write_csv(test, os.path.join(data_dir, "test.csv"))
        for arch in archs:
            d = os.path.join(out, case, arch)
            config = _train_config({**opts, "normalize_stress": "auto"}, "I")
            report, _, best = train_to_dir(config, cal, test, _picnn_config(arch, "I"), d,
                                           opts["workers"])
            evaluate_to_dir(best, cal, test, d)
            suite = verify_to_dir(best, d, opts["seed"], opts["samples"])
            excluded = [r.index for r in report.restarts if r.excluded]
            ref = REFERENCE_STUDY1.get((case, arch), (float("nan"), float("nan")))
            rows.append(f"{case},{arch},{report.mean_calib_log10_mse:.3f},"
                        f"{report.mean_test_log10_mse:.3f},{ref[0]:.2f},{ref[1]:.2f},"
                        f"{'/'.join(map(str, excluded)) or '-'},{suite.passed}")
            print(rows[-1], flush=True)
    return rows


def _repro_study2(opts, out):
    cal, test = _datasets("II", "A", opts["mixed"])
    rows = ["variant,calib_log10_mse,test_log10_mse,max_abs_P_identity_t0.5,normalisation_check"]
    for variant, ablate in (("with_normalisation", False), ("ablated", True)):
        o = {**opts, "ablate_normalisation": ablate, "restarts": 1, "normalize_stress": "auto"}
        config = _train_config(o, "II")
        report, _, best = train_to_dir(config, cal, test, _picnn_config("Type1", "II"),
                                       os.path.join(out, variant), opts["workers"])
        evaluate_to_dir(best, cal, test, os.path.join(out, variant))
        rep = verify.check_normalisation(best, verify.ProbeConfig(seed=opts["seed"]))
        r = report.restarts[0]
        rows.append(f"{variant},{r.calib_log10_mse:.3f},{r.test_log10_mse:.3f},"
                    f"{normalisation_violation(best, 0.5):.6e},{rep.passed}")
        print(rows[-1], flush=True)
    return rows


def _repro_vector(opts, out, arch):
    cal, test = _datasets("vector", "A", opts["mixed"])
    d = os.path.join(out, arch)
    config = _train_config({**opts, "normalize_stress": "auto"}, "vector")
    report, _, best = train_to_dir(config, cal, test, _picnn_config(arch, "vector"), d,
                                   opts["workers"])
    evaluate_to_dir(best, cal, test, d)
    suite = verify_to_dir(best, d, opts["seed"], opts["samples"])
    b = report.best
    spread = iso_curve_spread(best, mixed=opts["mixed"])
    rows = ["quantity,calib,test,calib_reference,test_reference",
            f"mean_kept,{report.mean_calib_log10_mse:.3f},{report.mean_test_log10_mse:.3f},"
            f"{REFERENCE_VECTOR['mean_kept'][0]:.2f},{REFERENCE_VECTOR['mean_kept'][1]:.2f}",
            f"best,{b.calib_log10_mse:.3f},{b.test_log10_mse:.3f},"
            f"{REFERENCE_VECTOR['best'][0]:.2f},{REFERENCE_VECTOR['best'][1]:.2f}",
            f"best_restart,{b.index},,,",
            f"excluded_restart,{'/'.join(str(r.index) for r in report.restarts if r.excluded)},,,",
            f"monotonicity_passed,{suite['monotonicity'].passed},,,",
            f"verify_passed,{suite.passed},,,",
            f"iso_curve_p11_spread_mu{ISO_CHECK_MU},{spread:.6e},,,"]
    for r in rows[1:]:
        print(r, flush=True)
    return rows


def cmd_repro(opts):
    study = _study(opts["study"])
    out = os.path.join(opts["out"], f"study_{study}")
    os.makedirs(out, exist_ok=True)
    write_config(opts, out, "repro")
    archs = opts["archs"]
    if study == "I":
        archs = ["Type1", "Type2", "Type3"] if archs == "auto" else archs.split(",")
        cases = [_check_choice(c, ("A", "B", "C"), "case") for c in opts["cases"].split(",")]
        rows = _repro_study1(opts, out, archs, cases)
    elif study == "II":
        rows = _repro_study2(opts, out)
    else:
        arch = "Type1M" if archs == "auto" else archs
        rows = _repro_vector(opts, out, arch)
    _write_text(os.path.join(out, "summary.csv"), "\n".join(rows) + "\n")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify,
            "repro": cmd_repro}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = effective_options(args)
        if opts["workers"] < 1:
            raise UsageError("--workers must be >= 1")
        start = time.perf_counter()
        code = COMMANDS[args.command](opts)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - start)
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, SolverError, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
