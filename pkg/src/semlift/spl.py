"""SPL operator expressions: construction, text syntax, dense evaluation,
normalization and structural template matching.

Compositions are stored in written order; the rightmost factor is applied
first, as in ordinary matrix products.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import reduce
from typing import Mapping, Sequence, Union

import numpy as np


class SPLError(Exception):
    pass


class DimensionError(SPLError):
    pass


class SPLSyntaxError(SPLError):
    pass


# ---------------------------------------------------------------------------
# Sizes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Size:
    """``coeff * var`` (or a literal when ``var`` is None)."""

    coeff: Fraction
    var: str | None = None

    @staticmethod
    def of(value: "Size | int | str") -> "Size":
        if isinstance(value, Size):
            return value
        if isinstance(value, int):
            return Size(Fraction(value))
        return parse_size(value)

    def value(self, bindings: Mapping[str, int]) -> int:
        if self.var is None:
            v = self.coeff
        else:
            if self.var not in bindings:
                raise SPLError(f"size variable {self.var!r} is unbound")
            v = self.coeff * bindings[self.var]
        if v.denominator != 1 or v < 1:
            raise SPLError(f"size {self} is not a positive integer under {dict(bindings)}")
        return int(v)

    def __mul__(self, other: "Size") -> "Size":
        other = Size.of(other)
        if self.var is not None and other.var is not None:
            raise SPLError(f"product {self} * {other} is not a monomial size")
        return Size(self.coeff * other.coeff, self.var or other.var)

    def __truediv__(self, other: "Size") -> "Size":
        other = Size.of(other)
        if other.var is not None and other.var != self.var:
            raise SPLError(f"cannot divide {self} by {other}")
        if other.var is not None:
            return Size(self.coeff / other.coeff)
        return Size(self.coeff / other.coeff, self.var)

    def __str__(self) -> str:
        c = self.coeff
        if self.var is None:
            return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
        head = self.var if c.numerator == 1 else f"{c.numerator}*{self.var}"
        return head if c.denominator == 1 else f"{head}/{c.denominator}"


def parse_size(text: str) -> Size:
    tokens = re.findall(r"\d+|[A-Za-z_]\w*|[*/]", text.replace(" ", ""))
    if "".join(tokens) != text.replace(" ", ""):
        raise SPLSyntaxError(f"bad size {text!r}")
    out = Size(Fraction(1))
    op = "*"
    for tok in tokens:
        if tok in ("*", "/"):
            op = tok
            continue
        factor = Size(Fraction(int(tok))) if tok.isdigit() else Size(Fraction(1), tok)
        out = out * factor if op == "*" else out / factor
    return out


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DFT:
    size: Size


@dataclass(frozen=True)
class I:  # noqa: E742 - the operator's conventional name
    size: Size


@dataclass(frozen=True)
class L:
    """Stride permutation: input ``i*m + j`` goes to output ``j*k + i`` (size = m*k)."""

    size: Size
    stride: Size


@dataclass(frozen=True)
class T:
    """Twiddle diagonal: entry ``j*k + l`` is ``w_size^(j*l)``."""

    size: Size
    block: Size


@dataclass(frozen=True)
class Diag:
    values: tuple[complex, ...]


@dataclass(frozen=True)
class Tensor:
    left: "SPLExpr"
    right: "SPLExpr"


@dataclass(frozen=True)
class Compose:
    factors: tuple["SPLExpr", ...]


@dataclass(frozen=True)
class RC:
    inner: "SPLExpr"


@dataclass(frozen=True)
class Augment:
    left: "SPLExpr"
    right: "SPLExpr"


@dataclass(frozen=True)
class Scale:
    scalar: Union[float, str]
    inner: "SPLExpr"


@dataclass(frozen=True)
class Hole:
    """Unknown operator ``name`` at ``size``; ``width`` real slots per element."""

    name: str
    size: Size
    width: int = 2


SPLExpr = Union[DFT, I, L, T, Diag, Tensor, Compose, RC, Augment, Scale, Hole]


def compose(*factors: SPLExpr) -> SPLExpr:
    flat: list[SPLExpr] = []
    for f in factors:
        flat.extend(f.factors if isinstance(f, Compose) else [f])
    return flat[0] if len(flat) == 1 else Compose(tuple(flat))


def children(expr: SPLExpr) -> tuple[SPLExpr, ...]:
    if isinstance(expr, (Tensor, Augment)):
        return (expr.left, expr.right)
    if isinstance(expr, Compose):
        return expr.factors
    if isinstance(expr, (RC, Scale)):
        return (expr.inner,)
    return ()


def rebuild(expr: SPLExpr, kids: Sequence[SPLExpr]) -> SPLExpr:
    if isinstance(expr, Tensor):
        return Tensor(*kids)
    if isinstance(expr, Augment):
        return Augment(*kids)
    if isinstance(expr, Compose):
        return Compose(tuple(kids))
    if isinstance(expr, RC):
        return RC(kids[0])
    if isinstance(expr, Scale):
        return Scale(expr.scalar, kids[0])
    return expr


def contains(expr: SPLExpr, kind: type) -> bool:
    return isinstance(expr, kind) or any(contains(c, kind) for c in children(expr))


def substitute_holes(expr: SPLExpr, fill) -> SPLExpr:
    """Replace every ``Hole`` by ``fill(hole)``."""
    if isinstance(expr, Hole):
        return fill(expr)
    kids = children(expr)
    return rebuild(expr, [substitute_holes(k, fill) for k in kids]) if kids else expr


# ---------------------------------------------------------------------------
# Text syntax
# ---------------------------------------------------------------------------


def _scalar_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, complex):
        return repr(value)
    return repr(float(value))


def to_text(expr: SPLExpr) -> str:
    """Canonical text form; ``T`` prints as ``Diag(n, k)``."""
    if isinstance(expr, DFT):
        return f"F({expr.size})"
    if isinstance(expr, I):
        return f"I({expr.size})"
    if isinstance(expr, L):
        return f"L({expr.size}, {expr.stride})"
    if isinstance(expr, T):
        return f"Diag({expr.size}, {expr.block})"
    if isinstance(expr, Diag):
        return f"Diag([{', '.join(_scalar_text(v) for v in expr.values)}])"
    if isinstance(expr, Tensor):
        return f"Tensor({to_text(expr.left)}, {to_text(expr.right)})"
    if isinstance(expr, Compose):
        return " * ".join(to_text(f) for f in expr.factors)
    if isinstance(expr, RC):
        return f"RC({to_text(expr.inner)})"
    if isinstance(expr, Augment):
        return f"Augment({to_text(expr.left)}, {to_text(expr.right)})"
    if isinstance(expr, Scale):
        return f"Scale({_scalar_text(expr.scalar)}, {to_text(expr.inner)})"
    if isinstance(expr, Hole):
        extra = "" if expr.width == 2 else f", {expr.width}"
        return f"Hole({expr.name}, {expr.size}{extra})"
    raise SPLError(f"unknown expression {expr!r}")


_SPL_TOKEN = re.compile(r"\s*(?:(?P<num>-?\d+\.\d*(?:[eE][-+]?\d+)?|-?\d+(?:[eE][-+]?\d+)?|-?\.\d+)|(?P<id>[A-Za-z_]\w*)|(?P<op>[()\[\],*/+-]))")


class _SPLParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _SPL_TOKEN.match(text, pos)
            if not m:
                raise SPLSyntaxError(f"unexpected character {text[pos]!r} at {pos} in {text!r}")
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind)))
            pos = m.end()
        self.tokens.append(("eof", ""))
        self.pos = 0

    def peek(self) -> tuple[str, str]:
        return self.tokens[self.pos]

    def take(self, value: str | None = None) -> str:
        kind, tok = self.tokens[self.pos]
        if value is not None and tok != value:
            raise SPLSyntaxError(f"expected {value!r}, found {tok or 'end of input'!r} in {self.text!r}")
        self.pos += 1
        return tok

    def parse(self) -> SPLExpr:
        expr = self.expr()
        if self.peek()[0] != "eof":
            raise SPLSyntaxError(f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return expr

    def expr(self) -> SPLExpr:
        factors = [self.operator()]
        while self.peek()[1] == "*":
            self.take()
            factors.append(self.operator())
        return factors[0] if len(factors) == 1 else Compose(tuple(factors))

    def size(self) -> Size:
        parts = []
        while self.peek()[0] != "eof" and self.peek()[1] not in (",", ")"):
            parts.append(self.take())
        if not parts:
            raise SPLSyntaxError(f"missing size in {self.text!r}")
        return parse_size("".join(parts))

    def scalar(self):
        kind, tok = self.peek()
        if kind == "num":
            self.take()
            return float(tok)
        if kind == "id":
            self.take()
            return tok
        raise SPLSyntaxError(f"expected a scalar, found {tok!r} in {self.text!r}")

    def operator(self) -> SPLExpr:
        kind, name = self.peek()
        if kind != "id":
            raise SPLSyntaxError(f"expected an operator, found {name or 'end of input'!r} in {self.text!r}")
        self.take()
        self.take("(")
        if name in ("F", "DFT"):
            out = DFT(self.size())
        elif name == "I":
            out = I(self.size())
        elif name == "L":
            a = self.size()
            self.take(",")
            out = L(a, self.size())
        elif name in ("Diag", "T"):
            if self.peek()[1] == "[":
                self.take("[")
                values = []
                while self.peek()[1] != "]":
                    values.append(self.scalar())
                    if self.peek()[1] == ",":
                        self.take()
                self.take("]")
                out = Diag(tuple(values))
            else:
                a = self.size()
                self.take(",")
                out = T(a, self.size())
        elif name in ("Tensor", "Augment"):
            a = self.expr()
            self.take(",")
            b = self.expr()
            out = Tensor(a, b) if name == "Tensor" else Augment(a, b)
        elif name == "RC":
            out = RC(self.expr())
        elif name == "Scale":
            s = self.scalar()
            self.take(",")
            out = Scale(s, self.expr())
        elif name == "Hole":
            hole_name = self.take()
            self.take(",")
            size = self.size()
            width = 2
            if self.peek()[1] == ",":
                self.take()
                width = int(self.take())
            out = Hole(hole_name, size, width)
        else:
            raise SPLSyntaxError(f"unknown operator {name!r} in {self.text!r}")
        self.take(")")
        return out


def parse_spl(text: str) -> SPLExpr:
    """Parse the canonical text syntax (``F`` and ``DFT`` are aliases)."""
    return _SPLParser(text).parse()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def omega(size: int, exponent: int) -> complex:
    """``exp(-2*pi*i*exponent/size)`` with the exponent reduced mod size."""
    e = exponent % size
    angle = -2.0 * math.pi * e / size
    return complex(math.cos(angle), math.sin(angle))


def dft_matrix(size: int) -> np.ndarray:
    return np.array([[omega(size, k * l) for l in range(size)] for k in range(size)], dtype=complex)


def stride_permutation(size: int, stride: int) -> np.ndarray:
    if stride < 1 or size % stride:
        raise DimensionError(f"L({size}, {stride}): stride must divide the size")
    k = size // stride
    out = np.zeros((size, size))
    for i in range(k):
        for j in range(stride):
            out[j * k + i, i * stride + j] = 1.0
    return out


def twiddle_entries(size: int, block: int) -> np.ndarray:
    if block < 1 or size % block:
        raise DimensionError(f"T({size}, {block}): block must divide the size")
    return np.array([omega(size, j * l) for j in range(size // block) for l in range(block)], dtype=complex)


def rc_matrix(mat: np.ndarray) -> np.ndarray:
    """Interleaved real form: each entry a+bi becomes [[a, -b], [b, a]]."""
    re_part, im_part = np.real(mat), np.imag(mat)
    return np.kron(re_part, np.eye(2)) + np.kron(im_part, np.array([[0.0, -1.0], [1.0, 0.0]]))


def _bindings(n: int | None, bindings: Mapping[str, int] | None) -> dict:
    out = dict(bindings or {})
    if n is not None:
        out.setdefault("n", n)
    return out


def evaluate(expr: SPLExpr, n: int | None = None, bindings: Mapping | None = None) -> np.ndarray:
    """Dense matrix of ``expr``; ``RC`` sub-terms come out as real matrices."""
    env = _bindings(n, bindings)

    def ev(e: SPLExpr) -> np.ndarray:
        if isinstance(e, DFT):
            return dft_matrix(e.size.value(env))
        if isinstance(e, I):
            return np.eye(e.size.value(env), dtype=complex)
        if isinstance(e, L):
            return stride_permutation(e.size.value(env), e.stride.value(env)).astype(complex)
        if isinstance(e, T):
            return np.diag(twiddle_entries(e.size.value(env), e.block.value(env)))
        if isinstance(e, Diag):
            return np.diag(np.array(e.values, dtype=complex))
        if isinstance(e, Tensor):
            return np.kron(ev(e.left), ev(e.right))
        if isinstance(e, Compose):
            mats = [ev(f) for f in e.factors]
            for a, b in zip(mats, mats[1:]):
                if a.shape[1] != b.shape[0]:
                    raise DimensionError(f"cannot compose {a.shape} with {b.shape} in {to_text(e)}")
            return reduce(np.matmul, mats)
        if isinstance(e, RC):
            return rc_matrix(ev(e.inner)).astype(complex)
        if isinstance(e, Augment):
            a, b = ev(e.left), ev(e.right)
            if a.shape[0] != b.shape[0]:
                raise DimensionError(f"Augment of {a.shape} and {b.shape}: row counts differ")
            return np.hstack([a, b])
        if isinstance(e, Scale):
            s = e.scalar
            if isinstance(s, str):
                if s not in env:
                    raise SPLError(f"scalar {s!r} is unbound")
                s = env[s]
            return s * ev(e.inner)
        if isinstance(e, Hole):
            raise SPLError(f"cannot evaluate the unknown operator {to_text(e)}")
        raise SPLError(f"unknown expression {e!r}")

    return ev(expr)


def eval_spl(expr: SPLExpr, n: int | None = None, bindings: Mapping | None = None) -> np.ndarray:
    return evaluate(expr, n, bindings)


def eval_rc(expr: SPLExpr, n: int | None = None, bindings: Mapping | None = None) -> np.ndarray:
    """Real interleaved matrix of a complex operator (``RC`` is added if missing)."""
    target = expr if isinstance(expr, RC) else RC(expr)
    return np.real(evaluate(target, n, bindings))


def as_real_operator(expr: SPLExpr, shape: tuple[int, int], n: int | None = None, bindings=None) -> np.ndarray:
    """Real matrix of ``expr`` acting on real kernel data of the given shape.

    Expressions whose own dimensions match ``shape`` are taken as real
    operators; those with half the dimensions are read as complex operators
    on interleaved data.
    """
    mat = evaluate(expr, n, bindings)
    if mat.shape == tuple(shape):
        if np.max(np.abs(np.imag(mat)), initial=0.0) > 1e-12:
            raise DimensionError(f"{to_text(expr)} is complex but was compared against real data")
        return np.real(mat)
    if (2 * mat.shape[0], 2 * mat.shape[1]) == tuple(shape) and not contains(expr, RC):
        return rc_matrix(mat)
    raise DimensionError(f"{to_text(expr)} has shape {mat.shape}, expected {tuple(shape)}")


def shape_of(expr: SPLExpr, n: int | None = None, bindings=None) -> tuple[int, int]:
    env = _bindings(n, bindings)
    if isinstance(expr, (DFT, I, L, T)):
        s = expr.size.value(env)
        return s, s
    if isinstance(expr, Diag):
        return len(expr.values), len(expr.values)
    if isinstance(expr, Tensor):
        a, b = shape_of(expr.left, n, env), shape_of(expr.right, n, env)
        return a[0] * b[0], a[1] * b[1]
    if isinstance(expr, Compose):
        shapes = [shape_of(f, n, env) for f in expr.factors]
        return shapes[0][0], shapes[-1][1]
    if isinstance(expr, RC):
        a = shape_of(expr.inner, n, env)
        return 2 * a[0], 2 * a[1]
    if isinstance(expr, Augment):
        a, b = shape_of(expr.left, n, env), shape_of(expr.right, n, env)
        return a[0], a[1] + b[1]
    if isinstance(expr, Scale):
        return shape_of(expr.inner, n, env)
    if isinstance(expr, Hole):
        s = expr.size.value(env) * expr.width
        return s, s
    raise SPLError(f"unknown expression {expr!r}")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _is_unit_identity(e: SPLExpr) -> bool:
    return isinstance(e, I) and e.size.var is None and e.size.coeff == 1


def hoist_rc(expr: SPLExpr) -> SPLExpr:
    """Pull ``RC`` out of ``Tensor(I(r), RC(A))``, bottom-up."""
    kids = children(expr)
    if kids:
        expr = rebuild(expr, [hoist_rc(k) for k in kids])
    if isinstance(expr, Tensor) and isinstance(expr.left, I) and isinstance(expr.right, RC):
        return RC(Tensor(expr.left, expr.right.inner))
    return expr


def normalize(expr: SPLExpr) -> SPLExpr:
    """Canonical form used for matching.

    Flattens compositions, drops ``I(1)`` tensor factors, hoists and fuses
    ``RC`` wrappers over all-RC compositions, folds nested scalings and
    canonicalizes explicit diagonals.
    """
    kids = children(expr)
    if kids:
        expr = rebuild(expr, [normalize(k) for k in kids])
    if isinstance(expr, Compose):
        flat: list[SPLExpr] = []
        for f in expr.factors:
            flat.extend(f.factors if isinstance(f, Compose) else [f])
        if len(flat) > 1 and all(isinstance(f, RC) for f in flat):
            return normalize(RC(compose(*[f.inner for f in flat])))
        return flat[0] if len(flat) == 1 else Compose(tuple(flat))
    if isinstance(expr, Tensor):
        if _is_unit_identity(expr.left):
            return expr.right
        if _is_unit_identity(expr.right):
            return expr.left
        if isinstance(expr.left, I) and isinstance(expr.right, RC):
            return RC(normalize(Tensor(expr.left, expr.right.inner)))
        return expr
    if isinstance(expr, Scale):
        if isinstance(expr.inner, Scale) and not isinstance(expr.scalar, str) and not isinstance(expr.inner.scalar, str):
            return Scale(float(expr.scalar) * float(expr.inner.scalar), expr.inner.inner)
        if not isinstance(expr.scalar, str):
            return Scale(float(expr.scalar), expr.inner)
        return expr
    if isinstance(expr, Diag):
        vals = tuple(complex(v) if isinstance(v, complex) and v.imag else float(np.real(v)) for v in expr.values)
        return Diag(vals)
    return expr


# ---------------------------------------------------------------------------
# Structural matching
# ---------------------------------------------------------------------------


def _match_size(pattern: Size, size: Size, bind: dict) -> bool:
    if pattern.var is None:
        return pattern == size
    want = size / Size(pattern.coeff)
    if pattern.var in bind:
        return bind[pattern.var] == want
    bind[pattern.var] = want
    return True


def _match(pattern: SPLExpr, expr: SPLExpr, bind: dict) -> bool:
    if type(pattern) is not type(expr):
        return False
    if isinstance(pattern, (DFT, I)):
        return _match_size(pattern.size, expr.size, bind)
    if isinstance(pattern, L):
        return _match_size(pattern.size, expr.size, bind) and _match_size(pattern.stride, expr.stride, bind)
    if isinstance(pattern, T):
        return _match_size(pattern.size, expr.size, bind) and _match_size(pattern.block, expr.block, bind)
    if isinstance(pattern, Diag):
        return pattern == expr
    if isinstance(pattern, Hole):
        return pattern.name == expr.name and pattern.width == expr.width and _match_size(pattern.size, expr.size, bind)
    if isinstance(pattern, Scale):
        if isinstance(pattern.scalar, str):
            if pattern.scalar in bind:
                if bind[pattern.scalar] != expr.scalar:
                    return False
            else:
                bind[pattern.scalar] = expr.scalar
        elif pattern.scalar != expr.scalar:
            return False
        return _match(pattern.inner, expr.inner, bind)
    pk, ek = children(pattern), children(expr)
    if len(pk) != len(ek):
        return False
    return all(_match(p, e, bind) for p, e in zip(pk, ek))


@dataclass(frozen=True)
class Constraint:
    lhs: tuple[str, ...]  # product of factors
    op: str  # = | >= | <= | divides
    rhs: tuple[str, ...]

    @staticmethod
    def parse(text: str) -> "Constraint":
        m = re.fullmatch(r"\s*(.+?)\s*(>=|<=|=|\|)\s*(.+?)\s*", text)
        if not m:
            raise SPLSyntaxError(f"bad constraint {text!r}")
        split = lambda s: tuple(p.strip() for p in s.split("*"))  # noqa: E731
        op = "divides" if m.group(2) == "|" else m.group(2)
        return Constraint(split(m.group(1)), op, split(m.group(3)))

    def __str__(self) -> str:
        op = "|" if self.op == "divides" else self.op
        return f"{'*'.join(self.lhs)} {op} {'*'.join(self.rhs)}"


def _product(factors: Sequence[str], bind: Mapping[str, Size]) -> Size:
    out = Size(Fraction(1))
    for f in factors:
        if f.isdigit():
            out = out * Size(Fraction(int(f)))
        elif f in bind:
            out = out * Size.of(bind[f])
        else:
            raise SPLError(f"constraint variable {f!r} is unbound")
    return out


def check_constraint(c: Constraint, bind: Mapping[str, Size], n_min: int = 2) -> bool:
    """Holds for every size ``>= n_min`` (sizes are monotone in the parameter)."""
    try:
        a, b = _product(c.lhs, bind), _product(c.rhs, bind)
    except SPLError:
        return False
    if c.op == "=":
        return a == b
    if c.op == "divides":
        try:
            q = b / a
        except SPLError:
            return False
        at_min = q.coeff * (n_min if q.var else 1)
        return at_min.denominator == 1 and at_min >= 1
    if a.var is not None and b.var is not None and a.var != b.var:
        return False
    var = a.var or b.var
    lo = {var: n_min} if var else {}
    av = a.coeff * (lo[a.var] if a.var else 1)
    bv = b.coeff * (lo[b.var] if b.var else 1)
    slope = (a.coeff if a.var else 0) - (b.coeff if b.var else 0)
    if c.op == ">=":
        return av >= bv and slope >= 0
    return av <= bv and slope <= 0


def structural_match(
    expr: SPLExpr,
    template: SPLExpr,
    constraints: Sequence[Constraint | str] = (),
    n_min: int = 2,
) -> dict | None:
    """Bindings under which ``template`` equals ``expr`` syntactically, or None."""
    bind: dict = {}
    if not _match(template, expr, bind):
        return None
    for c in constraints:
        c = Constraint.parse(c) if isinstance(c, str) else c
        if not check_constraint(c, bind, n_min):
            return None
    return bind


def instantiate(template: SPLExpr, bind: Mapping[str, Size | int | float]) -> SPLExpr:
    """Substitute metavariables in sizes and scalars."""

    def sz(s: Size) -> Size:
        if s.var is not None and s.var in bind:
            return Size(s.coeff) * Size.of(bind[s.var]) if not isinstance(bind[s.var], Size) else Size(s.coeff) * bind[s.var]
        return s

    e = template
    if isinstance(e, DFT):
        return DFT(sz(e.size))
    if isinstance(e, I):
        return I(sz(e.size))
    if isinstance(e, L):
        return L(sz(e.size), sz(e.stride))
    if isinstance(e, T):
        return T(sz(e.size), sz(e.block))
    if isinstance(e, Hole):
        return replace(e, size=sz(e.size))
    if isinstance(e, Scale):
        s = bind.get(e.scalar, e.scalar) if isinstance(e.scalar, str) else e.scalar
        return Scale(s, instantiate(e.inner, bind))
    kids = children(e)
    return rebuild(e, [instantiate(k, bind) for k in kids]) if kids else e


# convenience constructors used by the lifter and tests
def size(value) -> Size:
    return Size.of(value)


def cooley_tukey(m, k, n=None) -> SPLExpr:
    """``(F_m x I_k) T^n_k (I_m x F_k) L^n_m`` with ``n = m*k``."""
    m, k = Size.of(m), Size.of(k)
    n = Size.of(n) if n is not None else m * k
    return Compose((Tensor(DFT(m), I(k)), T(n, k), Tensor(I(m), DFT(k)), L(n, m)))
