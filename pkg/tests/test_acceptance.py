"""One test per acceptance criterion; each prints a PASS/FAIL summary line."""

import json
import random
import re
import time

import numpy as np
import pytest

from semlift import cli, icode, lifter, sigma_spl, spl

from conftest import (
    MUTANTS, corpus_path, corpus_text, dft_reference, interleaved, lower, stride_kernel, stride_move, stride_reference,
)

GROUPED_SIGMA = "ISum(j, n/2, ISum(i, 4, Scat(2j + (i mod 2)) * Gath(4j + i)))"
RECURRENCE = "M(n) = RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * Tensor(I(2), M(n/2)) * RC(L(n, 2))"
CLOSED_FORM = "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * RC(Tensor(I(2), F(n/2))) * RC(L(n, 2))"
SPEC = "DFT_n : C^n → C^n, recursive Cooley-Tukey, m=2, k=n/2"
POSITIVE = ("fft_recursive.c", "axpy.c", "copy.c", "stride_perm.c")


@pytest.fixture()
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail

    return emit


def _quiet(capsys, argv):
    code = cli.main(argv)
    return code, capsys.readouterr().out


def test_criterion_1_fft_reproduction(capsys, report):
    start = time.perf_counter()
    code, text = _quiet(capsys, ["lift", corpus_path("fft_recursive.c")])
    trace = lifter.lift_source(corpus_text("fft_recursive.c"))
    elapsed = time.perf_counter() - start
    parts = {
        "a": GROUPED_SIGMA in text and trace.sigma["loop at line 9"] == GROUPED_SIGMA,
        "b": "RC(L(n, 2))" in text and "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2))" in text
        and [s.output_text for s in trace.steps[:3]][::2] == ["RC(L(n, 2))", "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2))"],
        "c": RECURRENCE in text and trace.equation.render() == RECURRENCE,
        "d": spl.normalize(trace.closed.expr) == spl.normalize(spl.parse_spl(CLOSED_FORM)) and CLOSED_FORM in text,
        "e": SPEC in text and trace.specification.text == SPEC,
    }
    ok = code == 0 and all(parts.values()) and elapsed < 5.0
    report(1, ok, f"parts {''.join(k for k, v in parts.items() if v)} match, exit {code}, {elapsed:.2f}s (< 5s)")


def test_criterion_2_oracle_equivalence(fft_program, report):
    start = time.perf_counter()
    worst = 0.0
    for n in (2, 4, 8, 16, 32):
        mat = icode.extract_linear_matrix(fft_program, None, "data", ["data"], n)
        worst = max(worst, float(np.max(np.abs(mat - spl.eval_rc(spl.DFT(spl.size(n)))))))
        # the evaluator itself is held to numpy's FFT
        worst = max(worst, float(np.max(np.abs(mat - interleaved(dft_reference(n))))))
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-9 and elapsed < 10.0, f"max deviation {worst:.3g} (<= 1e-9) over n=2..32, {elapsed:.2f}s (< 10s)")


def test_criterion_3_cooley_tukey(report):
    devs = {}
    for m, k in [(2, 2), (2, 4), (4, 2), (2, 8), (4, 4)]:
        rhs = spl.evaluate(spl.cooley_tukey(m, k))
        devs[(m, k)] = max(
            float(np.max(np.abs(rhs - spl.evaluate(spl.DFT(spl.size(m * k)))))),
            float(np.max(np.abs(rhs - dft_reference(m * k)))),
        )
    worst = max(devs.values())
    report(3, worst <= 1e-10, f"max deviation {worst:.3g} (<= 1e-10) over {len(devs)} (m,k) pairs")


def test_criterion_4_stride_permutations(report):
    inverse_ok = all(
        np.array_equal(spl.stride_permutation(n, m) @ spl.stride_permutation(n, n // m), np.eye(n))
        for n in (4, 8, 16)
        for m in range(1, n + 1)
        if n % m == 0
    )
    rng = random.Random(4)
    recovered = 0
    for _ in range(100):
        m, kind, src = stride_kernel(rng)
        probes = (2 * m, 4 * m, 8 * m)
        cand = lifter.recognize_stride_permutation(stride_move(src, probes), probes)
        if cand is not None and all(
            np.array_equal(spl.evaluate(cand, n), stride_reference(n, m if kind == "gather" else n // m))
            for n in probes
        ):
            recovered += 1
    false = 0
    for perturb in ("perm", "dup"):
        for _ in range(50):
            m, _, src = stride_kernel(rng, perturb)
            probes = (2 * m, 4 * m, 8 * m)
            try:
                move = stride_move(src, probes)
            except sigma_spl.OverlapError:
                continue
            false += lifter.recognize_stride_permutation(move, probes) is not None
    ok = inverse_ok and recovered == 100 and false == 0
    report(4, ok, f"L inverses exact: {inverse_ok}; recovered {recovered}/100 strides; {false} false matches in 100 perturbed loops")


def _interleave(x):
    out = np.empty(2 * len(x))
    out[0::2], out[1::2] = x.real, x.imag
    return out


def test_criterion_5_rc(report):
    f4, l82, t84 = spl.DFT(spl.size(4)), spl.L(spl.size(8), spl.size(2)), spl.T(spl.size(8), spl.size(4))
    exprs = [f4, l82, t84, spl.compose(l82, t84), spl.compose(t84, l82, t84), spl.Tensor(spl.I(spl.size(2)), f4)]
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        for e in exprs:
            a = spl.evaluate(e)
            x = rng.standard_normal(a.shape[1]) + 1j * rng.standard_normal(a.shape[1])
            worst = max(worst, float(np.max(np.abs(spl.eval_rc(spl.RC(e)) @ _interleave(x) - _interleave(a @ x)))))
    report(5, worst <= 1e-12, f"max deviation {worst:.3g} (<= 1e-12) over 20 vectors x {len(exprs)} exprs")


def test_criterion_6_axpy(report):
    rows = []
    for alpha in (0.0, 1.0, 2.5):
        program = lower(corpus_text("axpy.c").replace("2.5", repr(alpha)))
        closed = lifter.lift_multilinear(program)
        shape_ok = closed.text == f"Augment(I(n), Scale({alpha!r}, I(n)))"
        dev = 0.0
        for n in (4, 8):
            mat = icode.extract_linear_matrix(program, None, "y", ["y", "x"], n)
            dev = max(dev, float(np.max(np.abs(mat - spl.evaluate(closed.expr, n)))))
        rows.append((alpha, shape_ok, dev))
    ok = all(s and d <= 1e-12 for _, s, d in rows)
    report(6, ok, "; ".join(f"alpha={a}: form {'ok' if s else 'WRONG'}, deviation {d:.3g}" for a, s, d in rows))


def test_criterion_7_mutants(report):
    outcomes = []
    for name in MUTANTS:
        trace = lifter.lift_source(corpus_text(name), name)
        stages = sorted({f.stage for f in trace.failures})
        spec = trace.specification.text if trace.specification else None
        outcomes.append((name, stages, spec))
    ok = all(stages and spec != SPEC for _, stages, spec in outcomes)
    report(7, ok, ", ".join(f"{n.removeprefix('fft_').removesuffix('_mutant.c')}->{'/'.join(s)}" for n, s, _ in outcomes))


def test_criterion_8_determinism_and_contract(capsys, report):
    strip = lambda t: re.sub(r'"timestamp": "[^"]*"', "", t)  # noqa: E731
    stable = all(
        strip(_quiet(capsys, ["lift", corpus_path(name), "--json"])[1])
        == strip(_quiet(capsys, ["lift", corpus_path(name), "--json"])[1])
        for name in POSITIVE + MUTANTS[:2]
    )
    codes = {name: _quiet(capsys, ["lift", corpus_path(name)])[0] for name in POSITIVE + MUTANTS}
    contract = all(codes[n] == 0 for n in POSITIVE) and all(codes[n] == 2 for n in MUTANTS)
    contract &= _quiet(capsys, ["lift", corpus_path("missing.c")])[0] == 1
    code, out = _quiet(capsys, ["selftest", "--json"])
    selftest = code == 0 and json.loads(out)["passed"]
    report(8, stable and contract and selftest, f"stable JSON: {stable}; exit contract: {contract}; selftest: {selftest}")
