import random

import numpy as np
import pytest

from semlift import icode, lifter, sigma_spl, spl
from semlift.lifter import LiftConfig, LiftError

from conftest import MUTANTS, corpus_text, dft_reference, interleaved, lower, stride_kernel, stride_move, stride_reference

CLOSED_FORM = "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * RC(Tensor(I(2), F(n/2))) * RC(L(n, 2))"
RECURRENCE = "M(n) = RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * Tensor(I(2), M(n/2)) * RC(L(n, 2))"
SPEC = "DFT_n : C^n → C^n, recursive Cooley-Tukey, m=2, k=n/2"


@pytest.fixture(scope="module")
def trace(fft_source):
    return lifter.lift_source(fft_source, "fft_recursive.c")


def test_fft_lifts(trace):
    assert trace.ok and trace.failures == []
    assert [s.rule for s in trace.steps] == [
        "interleaved-complex", "recursive-call", "twiddle-butterfly", "recursive-equation"
    ]
    assert [s.output_text for s in trace.steps[:3]] == [
        "RC(L(n, 2))", "Tensor(I(2), Hole(M, n/2))", "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2))"
    ]


def test_fft_gather_regroups_into_blocks(trace):
    assert trace.sigma == {"loop at line 9": "ISum(j, n/2, ISum(i, 4, Scat(2j + (i mod 2)) * Gath(4j + i)))"}
    assert trace.steps[0].note == "scatter blocks: even for i in [0, 2), odd for i in [2, 4)"


def test_fft_equation_closed_form_and_spec(trace):
    assert trace.equation.render() == RECURRENCE
    assert trace.base_case["matched"] == "RC(F(2))"
    assert trace.closed.text == CLOSED_FORM
    assert trace.specification.text == SPEC
    assert trace.closed.assurance_level == "computer-algebra"


def test_evidence_covers_base_and_induction_sizes(trace):
    ev = trace.closed.evidence
    assert [(e["check"], e["size"]) for e in ev] == [("base", 2), ("induction", 4), ("induction", 8), ("induction", 16)]
    assert all(e["deviation"] <= 1e-10 for e in ev)


@pytest.mark.parametrize("size", [2, 4, 8, 16, 32])
def test_closed_form_equals_numpy_dft(trace, size):
    assert np.max(np.abs(spl.evaluate(trace.closed.expr, size) - interleaved(dft_reference(size)))) <= 1e-10


def test_trials_record_every_recognizer(trace):
    loop9 = [(t.recognizer, t.outcome) for t in trace.trials if t.fragment == "loop at line 9"]
    assert loop9 == [("identity", "no-match"), ("stride-permutation", "no-match"), ("interleaved-complex", "committed")]


def test_lifting_is_deterministic(fft_source, trace):
    again = lifter.lift_source(fft_source, "fft_recursive.c")
    assert [s.to_dict() for s in again.steps] == [s.to_dict() for s in trace.steps]
    assert again.closed.text == trace.closed.text and again.closed.evidence == trace.closed.evidence


def test_committed_steps_recheck_against_fragment_oracle(fft_program, trace):
    # independent re-check: every fragment step reproduces the kernel's own fragment
    program = icode.unroll_constant_loops(fft_program, 8)
    oracle = lifter.KernelOracle(program, "fft_recursive")
    frags = lifter.split_fragments(program.function())
    by_label = {f.label: f for f in frags}
    for step in trace.steps[:3]:
        frag = by_label[step.fragment]
        for n in (4, 8):
            mat = oracle.fragment(frag.stmts, frag.reads, frag.writes, n)
            expect = lifter.eval_with_holes(step.output, {"n": n}, lambda h: oracle.matrix(h.size.value({"n": n})))
            assert np.max(np.abs(mat - np.real(expect))) <= 1e-10


def test_step_product_equals_kernel(fft_program, trace):
    oracle = lifter.KernelOracle(fft_program, "fft_recursive")
    for n in (4, 8, 16):
        prod = np.eye(2 * n)
        for step in trace.steps[:3]:
            m = lifter.eval_with_holes(step.output, {"n": n}, lambda h: oracle.matrix(h.size.value({"n": n})))
            prod = np.real(m) @ prod
        assert np.max(np.abs(prod - interleaved(dft_reference(n)))) <= 1e-10


# -- stride permutations --------------------------------------------------


def test_random_stride_loops_recover_the_stride():
    rng = random.Random(20240501)
    for _ in range(100):
        m, kind, src = stride_kernel(rng)
        probes = (2 * m, 4 * m, 8 * m)
        cand = lifter.recognize_stride_permutation(stride_move(src, probes), probes)
        expect = "L(n, %d)" % m if kind == "gather" else ("L(n, n/%d)" % m)
        assert cand is not None and spl.to_text(cand) == expect, src
        for n in probes:
            stride = m if kind == "gather" else n // m
            assert np.array_equal(spl.evaluate(cand, n), stride_reference(n, stride))


@pytest.mark.parametrize("perturb", ["perm", "dup"])
def test_perturbed_stride_loops_never_match(perturb):
    rng = random.Random(7 if perturb == "perm" else 11)
    for _ in range(100):
        m, _, src = stride_kernel(rng, perturb)
        probes = (2 * m, 4 * m, 8 * m)
        try:
            move = stride_move(src, probes)
        except sigma_spl.OverlapError:
            continue  # duplicate write targets never reach the recognizer
        assert lifter.recognize_stride_permutation(move, probes) is None, src


def test_stride_kernel_lifts_end_to_end():
    trace = lifter.lift_source(corpus_text("stride_perm.c"))
    assert trace.ok and trace.closed.text == "L(n, 2)"
    assert trace.specification.text == "permutation L(n, 2)"


def test_copy_lifts_to_identity():
    trace = lifter.lift_source(corpus_text("copy.c"))
    assert trace.closed.text == "I(n)" and trace.specification.text == "Id_n"


def test_interleaved_detection_pairs_re_im():
    src = "void k(double* y, double* x, int n) { for (int i = 0; i < n; ++i) { y[2 * i] = x[2 * i]; y[2 * i + 1] = x[2 * i + 1]; } }"
    move = stride_move(src, (4, 8, 16))
    pairing = lifter.detect_interleaved_complex(move, (4, 8, 16))
    assert pairing is not None and len(pairing.pairs) == 1
    # re and im swapped: still a permutation, but not an interleaved one
    swapped = src.replace("y[2 * i] = x[2 * i]", "y[2 * i] = x[2 * i + 1]").replace(
        "y[2 * i + 1] = x[2 * i + 1]", "y[2 * i + 1] = x[2 * i]")
    assert lifter.detect_interleaved_complex(stride_move(swapped, (4, 8, 16)), (4, 8, 16)) is None


# -- arithmetic idioms ----------------------------------------------------


def test_zero_angle_butterfly_has_no_twiddle(fft_source):
    trace = lifter.lift_source(fft_source.replace("-2.0 * M_PI", "0.0 * M_PI"))
    butterfly = next(s for s in trace.steps if s.rule == "twiddle-butterfly")
    assert butterfly.output_text == "RC(Tensor(F(2), I(n/2)))"
    # without twiddles the recursion is not a DFT, which induction exposes
    assert [f.stage for f in trace.failures] == ["induction"]


def test_flipped_angle_candidate_is_rejected_with_deviation(fft_source):
    trace = lifter.lift_source(fft_source.replace("-2.0 * M_PI", "+2.0 * M_PI"))
    rejected = [t for t in trace.trials if t.outcome == "rejected"]
    assert [t.recognizer for t in rejected] == ["twiddle-butterfly"]
    assert "deviates by 2" in rejected[0].reason
    assert not trace.ok and trace.failures[0].deviations == [(4, 2.0), (8, 2.0), (16, 2.0)]


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
def test_axpy_lifts_to_augmented_identity(alpha):
    src = corpus_text("axpy.c").replace("2.5", repr(alpha))
    closed = lifter.lift_multilinear(lower(src))
    assert closed.text == f"Augment(I(n), Scale({alpha!r}, I(n)))"
    for n in (4, 8):
        assert np.max(np.abs(spl.evaluate(closed.expr, n) - np.hstack([np.eye(n), alpha * np.eye(n)]))) <= 1e-12


def test_non_multilinear_kernel_is_not_lifted_as_such():
    with pytest.raises(LiftError):
        lifter.lift_multilinear(lower(corpus_text("copy.c")))


# -- closing the recursion ------------------------------------------------


def test_lift_function_returns_the_equation(fft_program):
    eq = lifter.lift_function(fft_program)
    assert eq.render() == RECURRENCE and eq.arity == 2 and eq.width == 2


def test_identity_is_not_a_valid_base_case(fft_program):
    oracle = lifter.KernelOracle(fft_program, "fft_recursive")
    ok, dev = lifter.equivalence_match(oracle.matrix(2), spl.parse_spl("RC(I(n))"), 2, 1e-10, "n")
    assert not ok and dev == 2.0  # F(2) - I(2) = [[0, 1], [1, -2]]


def test_induction_requires_two_sizes(fft_program):
    eq = lifter.lift_function(fft_program)
    oracle = lifter.KernelOracle(fft_program, "fft_recursive").matrix
    head = spl.parse_spl("RC(F(n))")
    with pytest.raises(ValueError):
        lifter.close_by_induction(eq, head, [], oracle)
    with pytest.raises(ValueError):
        lifter.close_by_induction(eq, head, [2, 4], oracle)


def test_induction_with_wrong_head_fails(fft_program):
    eq = lifter.lift_function(fft_program)
    oracle = lifter.KernelOracle(fft_program, "fft_recursive").matrix
    result = lifter.close_by_induction(eq, spl.parse_spl("RC(I(n))"), [4, 8], oracle)
    assert isinstance(result, lifter.Failure) and result.stage == "induction"


def test_config_validation():
    with pytest.raises(ValueError):
        LiftConfig(probe_sizes=(4, 6))
    with pytest.raises(ValueError):
        LiftConfig(tolerance=0.0)
    assert LiftConfig(probe_sizes=(16, 4, 8, 4)).probe_sizes == (4, 8, 16)


def test_too_few_probe_sizes_fail_cleanly(fft_source):
    trace = lifter.lift_source(fft_source, config=LiftConfig(probe_sizes=(4,)))
    assert [f.stage for f in trace.failures] == ["induction"]


@pytest.mark.parametrize("name", MUTANTS)
def test_mutants_fail(name):
    trace = lifter.lift_source(corpus_text(name), name)
    assert not trace.ok and trace.failures
    assert trace.specification is None


def test_data_dependent_branch_is_a_frontend_failure():
    src = "void k(double* x, int n) { for (int i = 0; i < n; ++i) { if (x[i] > 0) x[i] = 0; } }"
    trace = lifter.lift_source(src)
    assert [f.stage for f in trace.failures] == ["frontend"] and trace.input_error


def test_nonlinear_kernel_fails_linearity():
    src = "void k(double* y, double* x, int n) { for (int i = 0; i < n; ++i) y[i] = x[i] * x[i]; }"
    trace = lifter.lift_source(src)
    assert [f.stage for f in trace.failures] == ["linearity"]
