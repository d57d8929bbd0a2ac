import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semlift import frontend, icode
from semlift.frontend import KernelSyntaxError, UnsupportedConstruct

from conftest import corpus_text


def test_fft_parses_one_function(fft_source):
    unit = frontend.parse_kernel_source(fft_source)
    assert [f.name for f in unit.functions] == ["fft_recursive"]
    fn = unit.functions[0]
    assert fn.array_params == ("data",) and fn.size_param == "n"


def test_m_pi_is_a_literal(fft_source):
    text = frontend.format_unit(frontend.parse_kernel_source(fft_source))
    assert "M_PI" not in text
    assert "3.14159265358979323846" in text


@pytest.mark.parametrize(
    "name",
    ["fft_recursive.c", "axpy.c", "copy.c", "stride_perm.c", "fft_guard_mutant.c"],
)
def test_canonical_print_round_trips(name):
    unit = frontend.parse_kernel_source(corpus_text(name))
    once = frontend.format_unit(unit)
    again = frontend.format_unit(frontend.parse_kernel_source(once))
    assert once == again
    assert frontend.parse_kernel_source(once).functions == unit.functions


def test_unbraced_loop_body():
    unit = frontend.parse_kernel_source(
        "void k(double* y, double* x, int n) { for (int i = 0; i < n; ++i) y[i] = x[i]; }"
    )
    assert len(unit.functions[0].body) == 1


@pytest.mark.parametrize(
    "src, construct",
    [
        ("void k(double* x, int n) { for (int i = 0; i < n; ++i) { if (x[i] > 0) x[i] = 0; } }", "conditional"),
        ("void k(double* x, int n) { while (n) { } }", "while"),
        ("void k(double* x, int n) { for (int i = 0; i < n; ++i) x[i % 2] = 1.0; }", "%"),
        ("void k(double* x, int n) { for (int i = 0; i <= n; ++i) x[i] = 1.0; }", "<="),
        ("void k(double* x, int n) { for (int i = 0; i < n; i += 2) x[i] = 1.0; }", ""),
        ("void k(double* x, int n) { for (int i = 0; i < n; ++i) x[i * i] = 1.0; }", ""),
    ],
)
def test_rejects_constructs_outside_the_subset(src, construct):
    with pytest.raises(UnsupportedConstruct) as info:
        frontend.parse_kernel_source(src)
    assert construct in str(info.value)
    assert info.value.line == 1


def test_syntax_error_reports_position():
    with pytest.raises(KernelSyntaxError) as info:
        frontend.parse_kernel_source("void k(double* x int n) {}")
    err = info.value
    assert (err.line, err.column) == (1, 18)
    assert err.expected == "')'" and err.found == "int"


def test_default_entry_is_the_uncalled_function():
    src = """
    void leaf(double* x, int n) { for (int i = 0; i < n; ++i) x[i] = x[i]; }
    void top(double* x, int n) { leaf(x, n / 2); }
    """
    unit = frontend.parse_kernel_source(src)
    assert unit.default_entry() == "top"


def test_fft_validates_clean(fft_source):
    assert frontend.validate_kernel(frontend.parse_kernel_source(fft_source)) == []


def test_missing_free_is_a_warning():
    src = corpus_text("fft_recursive.c").replace("free(even);", "")
    diags = frontend.validate_kernel(frontend.parse_kernel_source(src))
    assert [(d.severity, d.message) for d in diags] == [("warning", "array 'even' not deallocated")]


def test_unused_temporary_is_a_warning():
    src = "void k(double* y, double* x, int n) { for (int i = 0; i < n; ++i) { double t = x[i]; y[i] = x[i]; } }"
    diags = frontend.validate_kernel(frontend.parse_kernel_source(src))
    assert [d.severity for d in diags] == ["warning"]
    assert "'t'" in diags[0].message


@pytest.mark.parametrize(
    "old, new, fragment",
    [
        ("fft_recursive(even, n / 2);", "fft_recursive(even, n - 1);", "divided by a power of two"),
        ("fft_recursive(odd, n / 2);", "fft_recursive(odd, odd, n / 2);", "passes 3 arguments"),
        ("free(odd);", "free(odd); free(odd);", "freed twice"),
    ],
)
def test_validation_errors(fft_source, old, new, fragment):
    unit = frontend.parse_kernel_source(fft_source.replace(old, new))
    errors = [d for d in frontend.validate_kernel(unit) if d.severity == "error"]
    assert errors and fragment in errors[0].message


def test_lowering_records_extents(fft_program):
    fn = fft_program.function()
    assert fn.params == ("data",)
    assert fn.locals == ("even", "odd")
    assert fn.guard == 1


def _arrays(values, size):
    return {"data": list(values[:size])}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 8]), st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16))
def test_lowering_preserves_results_bitwise(fft_source, n, values):
    unit = frontend.parse_kernel_source(fft_source)
    program = frontend.lower_to_icode(unit)
    arrays = _arrays(values, 2 * n)
    direct = frontend.run_source(unit, "fft_recursive", arrays, n)
    lowered = icode.interpret(program, "fft_recursive", arrays, n)
    assert direct["data"] == lowered["data"]  # exact, not approximate


def test_run_source_base_case_is_a_two_point_dft(fft_source):
    unit = frontend.parse_kernel_source(fft_source)
    out = frontend.run_source(unit, "fft_recursive", {"data": [1.0, 2.0, 3.0, 4.0]}, 2)
    assert out["data"] == [4.0, 6.0, -2.0, -2.0]
    assert not any(math.isnan(v) for v in out["data"])
