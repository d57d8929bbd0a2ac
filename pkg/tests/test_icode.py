from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlift import icode
from semlift.icode import IndexExpr, InterpreterError

from conftest import corpus_text, dft_reference, interleaved, lower

n, i, j = IndexExpr.var("n"), IndexExpr.var("i"), IndexExpr.var("j")


@pytest.mark.parametrize(
    "expr, text",
    [
        (j.scale(4) + i, "4j + i"),
        (n.div(2), "n/2"),
        (j.scale(2) + n + 1, "2j + n + 1"),
        (IndexExpr.lit(0), "0"),
        (j.scale(2).with_mod(i, 2), "2j + (i mod 2)"),
    ],
)
def test_index_render(expr, text):
    assert expr.render(["j", "i"]) == text


def test_index_arithmetic():
    e = (i + n.div(2)).scale(2)
    assert e.coeff("n") == 1 and e.coeff("i") == 2
    assert e.evaluate({"i": 3, "n": 8}) == 14
    assert (e - e).is_constant() and (e - e).constant_value() == 0
    assert e.substitute({"i": IndexExpr.lit(1)}).render() == "n + 2"


def test_index_rejects_non_integer_values():
    with pytest.raises(icode.IcodeError):
        n.div(4).evaluate({"n": 2})


def test_division_only_by_powers_of_two():
    with pytest.raises(icode.IcodeError):
        n.div(3)


@st.composite
def affine(draw):
    coeffs = {v: Fraction(draw(st.integers(-4, 4))) for v in ("i", "j")}
    return IndexExpr._build(coeffs, Fraction(draw(st.integers(-8, 8))))


@given(affine(), affine(), st.integers(0, 20), st.integers(0, 20))
def test_index_addition_is_pointwise(a, b, vi, vj):
    env = {"i": vi, "j": vj}
    assert (a + b).evaluate(env) == a.evaluate(env) + b.evaluate(env)
    assert (a - b).evaluate(env) == a.evaluate(env) - b.evaluate(env)


def test_base_case_matrix(fft_program):
    # n = 2: columns are the kernel applied to the four basis vectors
    mat = icode.extract_linear_matrix(fft_program, None, "data", ["data"], 2)
    expect = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, -1, 0], [0, 1, 0, -1]], dtype=float)
    assert np.array_equal(mat, expect)


@pytest.mark.parametrize("size", [2, 4, 8, 16])
def test_oracle_is_the_interleaved_dft(fft_program, size):
    mat = icode.extract_linear_matrix(fft_program, None, "data", ["data"], size)
    assert np.max(np.abs(mat - interleaved(dft_reference(size)))) <= 1e-12


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_invocation_count(fft_program, k):
    stats = {}
    size = 2**k
    icode.interpret(fft_program, None, {"data": [0.0] * (2 * size)}, size, stats=stats)
    assert stats["invocations"] == 2 ** (k + 1) - 1


@pytest.mark.parametrize("size", [0, 1, 3, 6, 12])
def test_sizes_must_be_powers_of_two(fft_program, size):
    with pytest.raises(InterpreterError):
        icode.interpret(fft_program, None, {"data": [0.0] * (2 * max(size, 1))}, size)


def test_out_of_bounds_access_faults():
    program = lower("void k(double* y, double* x, int n) { for (int i = 0; i < n; ++i) y[i] = x[i]; }")
    with pytest.raises(InterpreterError):
        icode.interpret(program, None, {"y": [0.0] * 4, "x": [0.0] * 2}, 4)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 4, 8]), st.integers(0, 2**32 - 1))
def test_fft_is_linear(fft_program, size, seed):
    dev = icode.check_linearity(fft_program, None, ["data"], ["data"], size, np.random.default_rng(seed))
    assert dev <= 1e-9


def test_axpy_matrix_is_augmented_identity():
    program = lower(corpus_text("axpy.c"))
    mat = icode.extract_linear_matrix(program, None, "y", ["y", "x"], 4)
    assert np.array_equal(mat, np.hstack([np.eye(4), 2.5 * np.eye(4)]))


UNROLL_SRC = """
void k(double* y, double* x, int n) {
    for (int i = 0; i < n / 4; ++i) {
        for (int r = 0; r < 4; ++r) {
            double t = x[4 * i + r];
            y[4 * i + r] = t + t;
        }
    }
}
"""


@pytest.mark.parametrize("size", [4, 8, 16])
def test_unrolling_preserves_results(size):
    program = lower(UNROLL_SRC)
    unrolled = icode.unroll_constant_loops(program, 4)
    inner = unrolled.function().body[0]
    assert not any(isinstance(s, icode.Loop) for s in inner.body)
    assert len(inner.body) == 8
    rng = np.random.default_rng(size)
    arrays = {"y": [0.0] * size, "x": list(rng.standard_normal(size))}
    assert icode.interpret(program, None, arrays, size) == icode.interpret(unrolled, None, arrays, size)


def test_unrolled_temporaries_are_renamed():
    unrolled = icode.unroll_constant_loops(lower(UNROLL_SRC), 4)
    defs = [s.name for s in icode.walk(unrolled.function().body) if isinstance(s, icode.Def)]
    assert defs == ["t_r0", "t_r1", "t_r2", "t_r3"]
