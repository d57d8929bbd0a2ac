import numpy as np
import pytest

from semlift import knowledge_base as kbase
from semlift import spl
from semlift.knowledge_base import KnowledgeBase, TemplateError

CLOSED = "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2)) * RC(Tensor(I(2), F(n/2))) * RC(L(n, 2))"

WRONG = """
[broken]
head = F(n)
body = Tensor(F(m), I(k)) * Tensor(I(m), F(k)) * L(n, m)
constraints = n = m*k; m >= 2; k >= 1
validate = m=2, k=2
"""


@pytest.fixture(scope="module")
def kb():
    return kbase.builtin()


def test_builtin_order(kb):
    assert kb.names() == ["cooley-tukey", "dft", "identity", "axpy", "stride-permutation", "twiddle"]


def test_every_builtin_validates(kb):
    for t in kb:
        devs = kbase.validate_template(t)
        assert devs and max(d for _, d in devs) <= kbase.VALIDATION_TOL


def test_cooley_tukey_template_is_checked_against_numpy():
    # the validation uses the library evaluator; cross-check one instance independently
    t = next(iter(kbase.builtin()))
    body = spl.evaluate(t.body, bindings={"m": 2, "k": 4, "n": 8})
    assert np.max(np.abs(body - np.fft.fft(np.eye(8), axis=0))) <= 1e-10


def test_template_without_twiddle_is_rejected():
    with pytest.raises(TemplateError, match="fails validation"):
        KnowledgeBase().load_text(WRONG)


def test_duplicate_names_are_rejected():
    kb = KnowledgeBase()
    kb.load_text(kbase.builtin_text())
    with pytest.raises(TemplateError, match="duplicate"):
        kb.register_template(next(iter(kbase.builtin())))


def test_template_needs_validations():
    text = "[x]\nhead = I(n)\nbody = I(n)\n"
    with pytest.raises(TemplateError, match="no validation"):
        KnowledgeBase().load_text(text)


def test_template_needs_a_body():
    with pytest.raises(TemplateError, match="body"):
        KnowledgeBase().load_text("[x]\nhead = I(n)\n")


def test_closed_fft_form_names_the_dft(kb):
    res = kb.match_specification(spl.parse_spl(CLOSED))
    assert res.text == "DFT_n : C^n → C^n, recursive Cooley-Tukey, m=2, k=n/2"
    assert res.transform_name == "DFT_n" and res.template == "cooley-tukey"
    assert res.bindings == {"m": "2", "k": "n/2"}
    assert not res.fallback


def test_real_domain_without_rc(kb):
    res = kb.match_specification(spl.parse_spl("Tensor(F(2), I(n/2)) * Diag(n, n/2) * Tensor(I(2), F(n/2)) * L(n, 2)"))
    assert res.signature == "DFT_n : R^n → R^n"


@pytest.mark.parametrize(
    "text, expect, fallback",
    [
        ("I(n)", "Id_n", False),
        ("RC(I(n))", "Id_n", False),
        ("L(n, 2)", "permutation L(n, 2)", True),
        ("Augment(I(n), Scale(2.5, I(n)))", "axpy: [I_n | 2.5·I_n]", False),
        ("F(n)", "DFT_n : R^n → R^n, definition", False),
        ("Diag(n, n/2)", "twiddle diagonal Diag(n, n/2)", True),
    ],
)
def test_matches(kb, text, expect, fallback):
    res = kb.match_specification(spl.parse_spl(text))
    assert res.text == expect and res.fallback is fallback


def test_no_match_returns_none(kb):
    assert kb.match_specification(spl.parse_spl("Tensor(F(2), F(n))")) is None
    assert kbase.operator_name(spl.parse_spl("RC(RC(F(2)))")) == "operator RC(RC(F(2)))"


def test_match_ignores_how_rc_is_distributed(kb):
    hoisted = "RC(Tensor(F(2), I(n/2)) * Diag(n, n/2) * Tensor(I(2), F(n/2)) * L(n, 2))"
    a = kb.match_specification(spl.parse_spl(CLOSED))
    b = kb.match_specification(spl.parse_spl(hoisted))
    assert a.to_dict() == b.to_dict()


def test_registration_order_is_priority():
    kb = KnowledgeBase()
    fallback = "[any-l]\nhead = L(n, m)\nbody = L(n, m)\nconstraints = m | n\nvalidate = n=4, m=2\nsummary = first\n"
    kb.load_text(fallback)
    kb.load_text(fallback.replace("any-l", "other").replace("first", "second"))
    assert kb.match_specification(spl.parse_spl("L(n, 2)")).text == "first"


def test_divisibility_is_checked_from_the_smallest_size(kb):
    expr = spl.parse_spl("L(n, 8)")
    assert kb.match_specification(expr) is None  # n = 2 is not a multiple of 8
    assert kb.match_specification(expr, n_min=8).text == "permutation L(n, 8)"
