"""Command-line front end: ``lsl {simulate,audit,verify,predict}``.

Exit codes: 0 success, 1 a verify check failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from lsl import mc, theory, verify
from lsl.audit import audit
from lsl.dists import ZERO, normal, parse_scheme
from lsl.forward import InputSpec, load_image_csv
from lsl.netgen import ConvArch, FCArch, ResidualArch, arch_to_dict, load_arch
from lsl.rng import U64_MAX

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

# theory_var_lo/hi bound E[M_j^2]; theory_mean_lo/hi bracket E[M_j]
PREDICT_COLUMNS = ("layer", "n_layer", "theory_mean", "theory_var_lo", "theory_var_hi",
                   "theory_mean_lo", "theory_mean_hi")


class InputError(Exception):
    pass


def _u64(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError(f"must be an unsigned 64-bit integer, got {text}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_real(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v >= 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be finite and >= 0, got {text}")
    return v


def _input_kind(text: str) -> str:
    if text in ("ones", "sphere", "constant", "checkerboard") or (text.startswith("file:") and len(text) > 5):
        return text
    raise argparse.ArgumentTypeError(f"expected ones, sphere, constant, checkerboard or file:PATH, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsl", description="Length statistics of randomly initialized ReLU nets.")
    sub = p.add_subparsers(dest="verb", required=True, metavar="{simulate,audit,verify,predict}")

    def common(sp, arch_required=True):
        sp.add_argument("--arch", required=arch_required, metavar="PATH", help="architecture JSON")
        sp.add_argument("--init", default="he-normal", metavar="NAME",
                        help="init scheme, e.g. he-normal, glorot-uniform, scaled:2.0[:base]")
        sp.add_argument("--bias-var", type=_nonneg_real, default=0.0, metavar="REAL",
                        help="variance of Gaussian biases (0 = no bias)")
        sp.add_argument("--out", metavar="PATH", help="output file (default stdout)")

    sim = sub.add_parser("simulate", help="Monte Carlo length statistics")
    common(sim)
    sim.add_argument("--trials", type=_positive_int, default=1000, metavar="N")
    sim.add_argument("--seed", type=_u64, default=0, metavar="U64")
    sim.add_argument("--precision", choices=("f32", "f64"), default="f64")
    sim.add_argument("--input", type=_input_kind, default="sphere", metavar="KIND",
                     help="ones, sphere, constant, checkerboard or file:PATH")
    sim.add_argument("--norm", choices=("m0", "unit"), default="m0")
    sim.add_argument("--resample-input", action="store_true", help="draw a fresh sphere input per trial")
    sim.add_argument("--sampler", choices=mc.SAMPLERS, default="full")
    sim.add_argument("--shards", type=_positive_int, default=1, metavar="K")
    sim.add_argument("--format", choices=("csv", "json"), default="csv")

    pred = sub.add_parser("predict", help="closed-form predictions and bounds")
    common(pred)
    pred.add_argument("--format", choices=("csv", "json"), default="csv")

    aud = sub.add_parser("audit", help="FM1/FM2 risk report")
    common(aud)
    aud.add_argument("--format", choices=("text", "json"), default="text")

    ver = sub.add_parser("verify", help="statistical self-checks against theory")
    ver.add_argument("--suite", choices=verify.SUITES + ("all",), default="all")
    ver.add_argument("--seed", type=_u64, default=1, metavar="U64")
    ver.add_argument("--trials", type=_positive_int, default=None, metavar="N",
                     help="override the suite's default trial count")
    ver.add_argument("--out", metavar="PATH")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


# -- helpers -----------------------------------------------------------------

def _load(args):
    try:
        arch = load_arch(args.arch)
    except OSError as exc:
        raise InputError(f"cannot read {args.arch}: {exc.strerror or exc}") from exc
    except ValueError as exc:  # includes JSONDecodeError
        raise InputError(f"{args.arch}: {exc}") from exc
    bias = normal(args.bias_var) if args.bias_var > 0 else ZERO
    try:
        scheme = parse_scheme(args.init, bias)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    return arch, scheme


def _input_spec(args, arch) -> InputSpec:
    kind = args.input
    if not kind.startswith("file:"):
        return InputSpec(kind, args.norm)
    path = kind[5:]
    try:
        if isinstance(arch, ConvArch):
            values = load_image_csv(path).ravel()
        else:
            values = np.loadtxt(path, delimiter=",", ndmin=1).ravel()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return InputSpec("explicit", args.norm, tuple(float(v) for v in values))


def _emit(text: str, out: str | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc.strerror or exc}") from exc


def predict_rows(arch, scheme) -> list[dict]:
    """Theory columns per layer; cells that do not apply are None."""
    widths = arch.layer_widths
    rows = [dict.fromkeys(PREDICT_COLUMNS) for _ in widths]
    for j, row in enumerate(rows):
        row["layer"], row["n_layer"] = j, widths[j]
    if isinstance(arch, ResidualArch):
        eta = np.asarray(arch.scales)
        critical = np.max(np.abs(theory.layer_kappas(arch, scheme) - 1)) <= theory.KAPPA_TOL
        if np.all((eta > 0) & (eta < 1)) and critical and scheme.bias.is_zero:
            b = theory.resnet_growth_bounds(arch.scales, arch.width)
            for j, row in enumerate(rows):
                row["theory_mean_lo"], row["theory_mean_hi"] = b.lower[j], b.upper[j]
        return rows
    pred = theory.predict_mean_fc(arch, scheme)
    for j, row in enumerate(rows):
        row["theory_mean"] = row["theory_mean_lo"] = row["theory_mean_hi"] = pred.mean[j]
    if isinstance(arch, FCArch):
        try:
            vb = theory.variance_bounds_fc(arch, scheme)
        except ValueError:
            return rows
        for j, row in enumerate(rows):
            row["theory_var_lo"], row["theory_var_hi"] = vb.lower[j], vb.upper[j]
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    return mc._fmt(v)


def predict_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICT_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in PREDICT_COLUMNS])
    return buf.getvalue()


def predict_json(rows, arch, scheme) -> str:
    doc = {
        "arch": arch_to_dict(arch),
        "scheme": scheme.label,
        "rows": [{k: (mc._num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- verbs -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    arch, scheme = _load(args)
    try:
        plan = mc.TrialPlan(arch, scheme, _input_spec(args, arch), args.trials, args.seed,
                            args.precision, args.sampler, args.resample_input)
        stats = mc.run_sharded(plan, args.shards)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    _emit(stats.to_csv() if args.format == "csv" else stats.to_json(), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    arch, scheme = _load(args)
    try:
        rows = predict_rows(arch, scheme)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    _emit(predict_csv(rows) if args.format == "csv" else predict_json(rows, arch, scheme), args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    arch, scheme = _load(args)
    try:
        report = audit(arch, scheme)
    except (ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc
    _emit(report.to_text() if args.format == "text" else report.to_json(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify.run_suite(args.suite, args.seed, args.trials)
    _emit(verify.table(checks), args.out)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "predict": cmd_predict, "audit": cmd_audit, "verify": cmd_verify}


def run(args: argparse.Namespace) -> int:
    try:
        return COMMANDS[args.verb](args)
    except InputError as exc:
        print(f"lsl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2 already
        return int(exc.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
