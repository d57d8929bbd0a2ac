"""Command-line driver.

Exit status: 0 on success, 1 on input errors (unreadable file, parse or
validation errors, bad arguments), 2 when a well-formed kernel cannot be
lifted or a candidate does not match.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import frontend, icode, lifter, report, spl
from . import knowledge_base as kbase

EXIT_OK, EXIT_INPUT, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not sizes:
        raise argparse.ArgumentTypeError("at least one size is required")
    return sizes


def _levels(text: str) -> tuple[str, ...]:
    levels = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [lv for lv in levels if lv not in report.LEVELS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown emit levels {bad}; choose from {', '.join(report.LEVELS)}")
    return levels


def read_source(path: str) -> tuple[str, str]:
    """Text of ``path``; ``corpus:NAME`` reads a kernel shipped with the package."""
    if path.startswith("corpus:"):
        res = resources.files("semlift").joinpath("corpus").joinpath(path.split(":", 1)[1])
        return str(res), res.read_text(encoding="utf-8")
    return path, Path(path).read_text(encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semlift", description="Lift KernelC kernels to SPL and a transform specification.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    lift = sub.add_parser("lift", help="lift a kernel and report every stage")
    lift.add_argument("file")
    lift.add_argument("--entry")
    lift.add_argument("--emit", type=_levels, default=report.LEVELS, help="comma-separated report levels")
    lift.add_argument("--sizes", type=_sizes, default=lifter.LiftConfig().probe_sizes, help="probe sizes")
    lift.add_argument("--tol", type=float, default=1e-10)
    lift.add_argument("--json", action="store_true")
    lift.add_argument("--plot", metavar="DIR", help="also write matrix and deviation figures to DIR")

    verify = sub.add_parser("verify", help="compare a kernel against a candidate SPL expression")
    verify.add_argument("file")
    verify.add_argument("--spl", required=True)
    verify.add_argument("--sizes", type=_sizes, required=True)
    verify.add_argument("--entry")
    verify.add_argument("--tol", type=float, default=1e-10)
    verify.add_argument("--json", action="store_true")

    selftest = sub.add_parser("selftest", help="check the built-in algebraic identities")
    selftest.add_argument("--json", action="store_true")
    return p


def cmd_lift(args) -> int:
    try:
        path, text = read_source(args.file)
    except OSError as exc:
        print(f"error: cannot read {args.file}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        config = lifter.LiftConfig(entry=args.entry, emit=args.emit, probe_sizes=args.sizes, tolerance=args.tol)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    trace = lifter.lift_source(text, path, config)
    doc = report.build_report(trace, path, text, config)
    if args.plot:
        from . import plotting

        oracle = None
        if trace.program is not None:
            try:
                oracle = lifter.KernelOracle(trace.program, trace.entry)
            except icode.IcodeError:
                oracle = None
        written = plotting.write_figures(trace, oracle, args.plot, Path(path).stem, config.tolerance)
        doc["figures"] = [str(p) for p in written]
    sys.stdout.write(report.to_json(doc) + "\n" if args.json else report.render_text(doc, config.emit))
    if "figures" in doc and not args.json:
        for f in doc["figures"]:
            print(f"figure: {f}")
    if trace.input_error:
        return EXIT_INPUT
    return EXIT_OK if trace.ok else EXIT_FAIL


def cmd_verify(args) -> int:
    bad = [s for s in args.sizes if not icode.is_power_of_two(s) or s < 2]
    if bad:
        print(f"error: sizes {bad} violate the constraint {icode.SIZE_CONSTRAINT}", file=sys.stderr)
        return EXIT_INPUT
    try:
        path, text = read_source(args.file)
        candidate = spl.parse_spl(args.spl)
        unit = frontend.parse_kernel_source(text, path)
        errors = [d for d in frontend.validate_kernel(unit) if d.severity == "error"]
        if errors:
            raise frontend.KernelError("; ".join(str(d) for d in errors))
        entry = args.entry or unit.default_entry()
        program = frontend.lower_to_icode(unit, entry)
        oracle = lifter.KernelOracle(program, entry)
    except (OSError, spl.SPLError, frontend.KernelError, icode.IcodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rows = []
    for n in args.sizes:
        mat = oracle.matrix(n)
        try:
            _, dev = lifter.equivalence_match(mat, candidate, n, args.tol, oracle.fn.size_param)
        except spl.SPLError as exc:
            rows.append({"size": n, "deviation": None, "error": str(exc)})
            continue
        rows.append({"size": n, "deviation": dev})
    passed = all(r["deviation"] is not None and r["deviation"] <= args.tol for r in rows)
    if args.json:
        doc = {"source": report.source_digest(path, text), "entry": entry, "candidate": spl.to_text(candidate),
               "tolerance": args.tol, "checks": rows, "passed": passed}
        print(json.dumps(doc, indent=2))
    else:
        print(f"candidate: {spl.to_text(candidate)}")
        print(f"{'size':>6} {'deviation':>12}  result")
        for r in rows:
            ok = r["deviation"] is not None and r["deviation"] <= args.tol
            dev = "n/a" if r["deviation"] is None else f"{r['deviation']:.3g}"
            extra = f"  ({r['error']})" if "error" in r else ""
            print(f"{r['size']:>6} {dev:>12}  {'pass' if ok else 'FAIL'}{extra}")
    return EXIT_OK if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# Self test
# ---------------------------------------------------------------------------


def _interleave(x: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(x))
    out[0::2], out[1::2] = x.real, x.imag
    return out


def selftest_checks() -> list[dict]:
    checks = []

    def record(name, dev, tol):
        checks.append({"name": name, "deviation": dev, "tolerance": tol, "passed": bool(dev <= tol)})

    for m, k in [(2, 2), (2, 4), (4, 2), (2, 8), (4, 4)]:
        lhs = spl.evaluate(spl.DFT(spl.size(m * k)))
        try:
            rhs = spl.evaluate(spl.cooley_tukey(m, k))
            dev = float(np.max(np.abs(lhs - rhs)))
        except Exception as exc:  # a broken table must still yield a row
            dev = float("inf")
            checks.append({"name": f"evaluation error {exc}", "deviation": dev, "tolerance": 0, "passed": False})
        record(f"DFT({m * k}) = Cooley-Tukey m={m} k={k}", dev, 1e-10)
    for n in (4, 8, 16):
        for m in [d for d in range(1, n + 1) if n % d == 0]:
            prod = spl.stride_permutation(n, m) @ spl.stride_permutation(n, n // m)
            record(f"L({n},{m}) L({n},{n // m}) = I({n})", float(np.max(np.abs(prod - np.eye(n)))), 0.0)
    rng = np.random.default_rng(7)
    exprs = [spl.DFT(spl.size(4)), spl.L(spl.size(8), spl.size(2)), spl.T(spl.size(8), spl.size(4))]
    for e in exprs:
        a = spl.evaluate(e)
        x = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
        dev = float(np.max(np.abs(spl.eval_rc(e) @ _interleave(x) - _interleave(a @ x))))
        record(f"RC({spl.to_text(e)}) acts on interleaved vectors", dev, 1e-12)
    a, b = exprs[0], spl.compose(spl.L(spl.size(4), spl.size(2)), spl.T(spl.size(4), spl.size(2)))
    dev = float(np.max(np.abs(spl.eval_rc(spl.compose(a, b)) - spl.eval_rc(a) @ spl.eval_rc(b))))
    record("RC(A B) = RC(A) RC(B)", dev, 1e-12)
    kb = kbase.KnowledgeBase()
    try:
        sections = _builtin_templates()
        for t in sections:
            devs = kbase.validate_template(t)
            record(f"template {t.name}", max(d for _, d in devs), kbase.VALIDATION_TOL)
        for t in sections:
            kb.register_template(t)
    except kbase.TemplateError as exc:
        checks.append({"name": f"knowledge base: {exc}", "deviation": float("inf"), "tolerance": 0, "passed": False})
    return checks


def _builtin_templates() -> list[kbase.RuleTemplate]:
    import configparser

    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(kbase.builtin_text())
    return [kbase.template_from_section(name, parser[name]) for name in parser.sections()]


def cmd_selftest(args) -> int:
    checks = selftest_checks()
    passed = all(c["passed"] for c in checks)
    if args.json:
        rows = [{**c, "deviation": None if c["deviation"] == float("inf") else c["deviation"]} for c in checks]
        print(json.dumps({"checks": rows, "passed": passed}, indent=2))
    else:
        width = max(len(c["name"]) for c in checks)
        for c in checks:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<{width}}  {c['deviation']:.3g}")
        print(f"{sum(c['passed'] for c in checks)}/{len(checks)} identities hold")
    return EXIT_OK if passed else EXIT_FAIL


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and on bad arguments
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    handler = {"lift": cmd_lift, "verify": cmd_verify, "selftest": cmd_selftest}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
