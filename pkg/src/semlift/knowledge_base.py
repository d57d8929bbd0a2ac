"""Named transform templates and matching of closed SPL against them."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from . import spl
from .spl import Constraint, Size, SPLExpr

VALIDATION_TOL = 1e-10


class TemplateError(Exception):
    pass


def _axpy_matrix(n: int, a: float) -> np.ndarray:
    eye = np.eye(n)
    return np.hstack([eye, a * eye])


# heads that are not SPL operators are defined directly
DEFINITIONS: dict[str, Callable[..., np.ndarray]] = {"axpy": _axpy_matrix}


@dataclass(frozen=True)
class RuleTemplate:
    name: str
    head: str
    body: SPLExpr
    constraints: tuple[Constraint, ...] = ()
    validations: tuple[dict, ...] = ()
    transform: str = ""
    signature: str = ""
    algorithm: str = ""
    summary: str = ""
    provenance: str = ""
    kind: str = "factorization"

    def metavariables(self) -> list[str]:
        """Metavariables in order of first appearance in the body."""
        text = spl.to_text(self.body)
        names: list[str] = []
        for tok in re.findall(r"[A-Za-z_]\w*", text):
            if tok in ("F", "I", "L", "Diag", "Tensor", "RC", "Augment", "Scale", "Hole", "T"):
                continue
            if tok not in names:
                names.append(tok)
        return names


@dataclass
class SpecificationResult:
    transform_name: str
    signature: str
    algorithm_name: str
    bindings: dict[str, str]
    assurance_level: str
    evidence: list = field(default_factory=list)
    template: str = ""
    text: str = ""
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "transform": self.transform_name,
            "signature": self.signature,
            "algorithm": self.algorithm_name,
            "bindings": dict(self.bindings),
            "template": self.template,
            "text": self.text,
            "fallback": self.fallback,
            "assurance": self.assurance_level,
        }


def _complete_bindings(t: RuleTemplate, given: Mapping[str, object]) -> dict:
    bind = dict(given)
    for c in t.constraints:
        if c.op == "=" and len(c.lhs) == 1 and c.lhs[0] not in bind:
            value = 1
            for f in c.rhs:
                value *= int(f) if f.isdigit() else bind[f]
            bind[c.lhs[0]] = value
    return bind


def _head_matrix(t: RuleTemplate, bind: Mapping[str, object]) -> np.ndarray:
    m = re.fullmatch(r"\s*([A-Za-z_]\w*)\((.*)\)\s*", t.head)
    if m and m.group(1) in DEFINITIONS:
        args = [bind[a.strip()] for a in m.group(2).split(",")]
        return DEFINITIONS[m.group(1)](*args)
    return spl.evaluate(spl.parse_spl(t.head), bindings=bind)


def validate_template(t: RuleTemplate) -> list[tuple[dict, float]]:
    """Head-vs-body deviation at every validation instantiation."""
    out = []
    for given in t.validations:
        bind = _complete_bindings(t, given)
        sizes = {k: Size(Fraction(v)) for k, v in bind.items() if isinstance(v, int)}
        for c in t.constraints:
            if not spl.check_constraint(c, sizes):
                raise TemplateError(f"{t.name}: instantiation {given} violates {c}")
        head = _head_matrix(t, bind)
        body = spl.evaluate(t.body, bindings=bind)
        if head.shape != body.shape:
            out.append((bind, float("inf")))
        else:
            out.append((bind, float(np.max(np.abs(head - body), initial=0.0))))
    return out


class KnowledgeBase:
    """Ordered template store; registration order is matching priority."""

    def __init__(self):
        self.templates: list[RuleTemplate] = []

    def __iter__(self):
        return iter(self.templates)

    def __len__(self) -> int:
        return len(self.templates)

    def names(self) -> list[str]:
        return [t.name for t in self.templates]

    def register_template(self, t: RuleTemplate) -> str:
        if t.name in self.names():
            raise TemplateError(f"duplicate template name {t.name!r}")
        if not t.validations:
            raise TemplateError(f"template {t.name!r} has no validation instantiations")
        for bind, dev in validate_template(t):
            if not dev <= VALIDATION_TOL:
                raise TemplateError(f"template {t.name!r} fails validation at {bind}: deviation {dev:.3g}")
        self.templates.append(t)
        return t.name

    def load_text(self, text: str) -> list[str]:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",))
        parser.optionxform = str
        parser.read_string(text)
        return [self.register_template(template_from_section(name, parser[name])) for name in parser.sections()]

    def match_specification(self, closed, n_min: int = 2) -> SpecificationResult | None:
        """First template whose body matches the closed expression.

        A single outer ``RC`` is stripped and reported as a complex domain.
        Constraints must hold for every size from ``n_min`` up.
        """
        expr = getattr(closed, "expr", closed)
        expr = spl.normalize(expr)
        domain = "R"
        if isinstance(expr, spl.RC):
            expr, domain = expr.inner, "C"
        for t in self.templates:
            bind = spl.structural_match(expr, t.body, t.constraints, n_min)
            if bind is None:
                continue
            return _result(t, bind, domain, closed)
        return None


def template_from_section(name: str, section: Mapping[str, str]) -> RuleTemplate:
    try:
        body = spl.parse_spl(section["body"])
        head = section["head"]
    except KeyError as exc:
        raise TemplateError(f"template {name!r} lacks {exc.args[0]!r}") from None
    constraints = tuple(Constraint.parse(c) for c in _split(section.get("constraints", "")))
    validations = tuple(_parse_binding(v) for v in _split(section.get("validate", "")))
    return RuleTemplate(
        name=name,
        head=head,
        body=body,
        constraints=constraints,
        validations=validations,
        transform=section.get("transform", name),
        signature=section.get("signature", ""),
        algorithm=section.get("algorithm", ""),
        summary=section.get("summary", "{signature}"),
        provenance=section.get("provenance", ""),
        kind=section.get("kind", "factorization"),
    )


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(";") if p.strip()]


def _parse_binding(text: str) -> dict:
    out: dict = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        value = value.strip()
        out[key.strip()] = int(value) if re.fullmatch(r"-?\d+", value) else float(value)
    return out


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _result(t: RuleTemplate, bind: dict, domain: str, closed) -> SpecificationResult:
    shown = {k: _format_value(v) for k, v in bind.items()}
    listed = {
        k: shown[k]
        for k in t.metavariables()
        if k in bind and not (isinstance(bind[k], Size) and bind[k] == Size(Fraction(1), k))
    }
    signature = t.signature.replace("{D}", domain)
    binding_text = ", ".join(f"{k}={v}" for k, v in listed.items())
    fields = {**shown, "signature": signature, "algorithm": t.algorithm, "bindings": binding_text}
    text = t.summary.format(**fields).rstrip(", ")
    evidence = list(getattr(closed, "evidence", []) or [])
    return SpecificationResult(
        transform_name=t.transform,
        signature=signature,
        algorithm_name=t.algorithm,
        bindings=listed,
        assurance_level=getattr(closed, "assurance_level", "structural"),
        evidence=evidence,
        template=t.name,
        text=text,
        fallback=t.kind == "fallback",
    )


def builtin_text() -> str:
    return resources.files("semlift").joinpath("data/builtin.kb").read_text(encoding="utf-8")


def builtin() -> KnowledgeBase:
    kb = KnowledgeBase()
    kb.load_text(builtin_text())
    return kb


def match_specification(closed, kb: KnowledgeBase | None = None, n_min: int = 2) -> SpecificationResult | None:
    return (kb or builtin()).match_specification(closed, n_min)


def operator_name(expr: SPLExpr) -> str:
    """Last-resort description when no template matches."""
    return f"operator {spl.to_text(spl.normalize(expr))}"
