import json
import re

import numpy as np
import pytest

from semlift import cli, spl

from conftest import MUTANTS, corpus_path

CLOSED_FORM = "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * RC(Tensor(I(2), F(n/2))) * RC(L(n, 2))"
POSITIVE = ("fft_recursive.c", "axpy.c", "copy.c", "stride_perm.c")


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("name", POSITIVE)
def test_positive_corpus_exits_zero(capsys, name):
    assert run(capsys, "lift", corpus_path(name))[0] == 0


@pytest.mark.parametrize("name", MUTANTS)
def test_mutants_exit_two(capsys, name):
    code, out, _ = run(capsys, "lift", corpus_path(name))
    assert code == 2
    assert "recursive Cooley-Tukey" not in out


def test_corpus_prefix(capsys):
    assert run(capsys, "lift", "corpus:copy.c")[0] == 0


def test_input_errors_exit_one(capsys, tmp_path):
    assert run(capsys, "lift", str(tmp_path / "missing.c"))[0] == 1
    bad = tmp_path / "bad.c"
    bad.write_text("void k(double* x int n) {}")
    code, _, _ = run(capsys, "lift", str(bad))
    assert code == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "verify", corpus_path("copy.c"))[0] == 1
    assert run(capsys, "lift", corpus_path("copy.c"), "--sizes", "4,6")[0] == 1


def test_golden_fft_strings(capsys):
    code, out, _ = run(capsys, "lift", corpus_path("fft_recursive.c"))
    assert code == 0
    for s in (
        "RC(L(n, 2))",
        "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2))",
        "ISum(j, n/2, ISum(i, 4, Scat(2j + (i mod 2)) * Gath(4j + i)))",
        "M(n) = RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * Tensor(I(2), M(n/2)) * RC(L(n, 2))",
        CLOSED_FORM,
        "DFT_n : C^n → C^n, recursive Cooley-Tukey, m=2, k=n/2",
        "verified at sizes",
    ):
        assert s in out


def test_emit_selects_sections(capsys):
    _, out, _ = run(capsys, "lift", corpus_path("fft_recursive.c"), "--emit", "spec")
    assert "DFT_n" in out and "Sigma-SPL" not in out
    assert run(capsys, "lift", corpus_path("fft_recursive.c"), "--emit", "bogus")[0] == 1


def _strip_timestamp(text):
    return re.sub(r'"timestamp": "[^"]*"', '"timestamp": ""', text)


@pytest.mark.parametrize("name", ["fft_recursive.c", "fft_sign_mutant.c"])
def test_json_is_stable(capsys, name):
    _, a, _ = run(capsys, "lift", corpus_path(name), "--json")
    _, b, _ = run(capsys, "lift", corpus_path(name), "--json")
    assert _strip_timestamp(a) == _strip_timestamp(b)


def test_json_contract(capsys):
    _, out, _ = run(capsys, "lift", corpus_path("fft_recursive.c"), "--json")
    doc = json.loads(out)
    assert {"source", "entry", "stages", "equation", "closed_spl", "specification", "failures", "timestamp"} <= set(doc)
    assert doc["closed_spl"] == CLOSED_FORM and doc["failures"] == []
    stage = doc["stages"][0]
    assert {"rule", "input", "output", "checks"} <= set(stage)
    assert all({"size", "deviation"} == set(c) for c in stage["checks"])


def test_json_failure_lists_deviations(capsys):
    code, out, _ = run(capsys, "lift", corpus_path("fft_sign_mutant.c"), "--json")
    doc = json.loads(out)
    assert code == 2 and doc["status"] != "ok"
    assert doc["failures"][0]["deviations"][0] == {"size": 4, "deviation": 2.0}


@pytest.mark.parametrize(
    "candidate, sizes, code",
    [(CLOSED_FORM, "4,8", 0), ("RC(F(n))", "2,4,8,16", 0), ("RC(L(n, 2))", "4,8", 2), (CLOSED_FORM, "4,6", 1), ("F(", "4", 1)],
)
def test_verify(capsys, candidate, sizes, code):
    assert run(capsys, "verify", corpus_path("fft_recursive.c"), "--spl", candidate, "--sizes", sizes)[0] == code


def test_verify_json_reports_large_deviation(capsys):
    code, out, _ = run(capsys, "verify", corpus_path("fft_recursive.c"), "--spl", "RC(L(n, 2))", "--sizes", "4", "--json")
    doc = json.loads(out)
    assert code == 2 and not doc["passed"] and doc["checks"][0]["deviation"] >= 1.0


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0 and "FAIL" not in out
    code, out, _ = run(capsys, "selftest", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["passed"] and len(doc["checks"]) >= 20


def test_selftest_catches_a_corrupted_twiddle_table(capsys, monkeypatch):
    good = spl.twiddle_entries

    def corrupted(n, k):
        vals = np.array(good(n, k))
        vals[-1] = -vals[-1]
        return vals

    monkeypatch.setattr(spl, "twiddle_entries", corrupted)
    code, out, _ = run(capsys, "selftest")
    assert code != 0 and "FAIL" in out


def test_plot_writes_figures(capsys, tmp_path):
    code, out, _ = run(capsys, "lift", corpus_path("fft_recursive.c"), "--plot", str(tmp_path))
    assert code == 0
    written = sorted(p.name for p in tmp_path.iterdir())
    assert written == ["fft_recursive_deviations.png", "fft_recursive_matrices.png"]
    assert all((tmp_path / w).stat().st_size > 0 for w in written)
    assert "figure:" in out
