"""Internal code: the loop-level IR, a concrete interpreter, and the
linear-operator oracle that every lifting step is checked against.

Index arithmetic is exact (rational coefficients, integral results
required). Scalar arithmetic follows C: integer operands stay integers,
anything touching a double is evaluated as an IEEE double in source order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np


class IcodeError(Exception):
    """Malformed or unsupported internal code."""


class InterpreterError(IcodeError):
    """Raised when executing a kernel faults (bad index, inexact division, ...)."""


def is_power_of_two(value: int) -> bool:
    return isinstance(value, int) and value >= 1 and value & (value - 1) == 0


# ---------------------------------------------------------------------------
# Index expressions
# ---------------------------------------------------------------------------


def _frac(value) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


@dataclass(frozen=True)
class IndexExpr:
    """Affine integer expression ``sum(coeff * var) + const [+ (sub mod m)]``.

    Coefficients are rationals so that ``n/2`` and ``2*(i + n/2)`` are both
    representable; evaluation must land on an integer, otherwise it faults.
    The optional modulus term only shows up in regrouped Sigma-SPL renderings.
    """

    terms: tuple[tuple[str, Fraction], ...] = ()
    const: Fraction = Fraction(0)
    mod: tuple["IndexExpr", int] | None = None

    @staticmethod
    def lit(value) -> "IndexExpr":
        return IndexExpr((), _frac(value))

    @staticmethod
    def var(name: str, coeff=1) -> "IndexExpr":
        coeff = _frac(coeff)
        return IndexExpr(((name, coeff),) if coeff else (), Fraction(0))

    @staticmethod
    def _build(coeffs: Mapping[str, Fraction], const, mod=None) -> "IndexExpr":
        terms = tuple(sorted((k, v) for k, v in coeffs.items() if v != 0))
        return IndexExpr(terms, _frac(const), mod)

    def coeffs(self) -> dict[str, Fraction]:
        return dict(self.terms)

    def coeff(self, name: str) -> Fraction:
        return self.coeffs().get(name, Fraction(0))

    @property
    def free_vars(self) -> frozenset[str]:
        names = {k for k, _ in self.terms}
        if self.mod is not None:
            names |= self.mod[0].free_vars
        return frozenset(names)

    def is_constant(self) -> bool:
        return not self.terms and self.mod is None

    def constant_value(self) -> int:
        if not self.is_constant() or self.const.denominator != 1:
            raise IcodeError(f"{self.render()} is not an integer constant")
        return int(self.const)

    def __add__(self, other) -> "IndexExpr":
        other = other if isinstance(other, IndexExpr) else IndexExpr.lit(other)
        if self.mod is not None and other.mod is not None:
            raise IcodeError("cannot add two modulus terms")
        coeffs = self.coeffs()
        for name, c in other.terms:
            coeffs[name] = coeffs.get(name, Fraction(0)) + c
        return IndexExpr._build(coeffs, self.const + other.const, self.mod or other.mod)

    __radd__ = __add__

    def __neg__(self) -> "IndexExpr":
        if self.mod is not None:
            raise IcodeError("cannot negate a modulus term")
        return IndexExpr(tuple((k, -v) for k, v in self.terms), -self.const)

    def __sub__(self, other) -> "IndexExpr":
        other = other if isinstance(other, IndexExpr) else IndexExpr.lit(other)
        return self + (-other)

    def __rsub__(self, other) -> "IndexExpr":
        return IndexExpr.lit(other) - self

    def scale(self, factor) -> "IndexExpr":
        factor = _frac(factor)
        if self.mod is not None and factor != 1:
            raise IcodeError("cannot scale a modulus term")
        return IndexExpr._build({k: v * factor for k, v in self.terms}, self.const * factor, self.mod)

    def __mul__(self, other) -> "IndexExpr":
        if isinstance(other, IndexExpr):
            if other.is_constant():
                return self.scale(other.const)
            if self.is_constant():
                return other.scale(self.const)
            raise IcodeError(f"product {self.render()} * {other.render()} is not affine")
        return self.scale(other)

    __rmul__ = __mul__

    def div(self, divisor: int) -> "IndexExpr":
        if not is_power_of_two(divisor):
            raise IcodeError(f"division by {divisor} is not a power-of-two division")
        return self.scale(Fraction(1, divisor))

    def with_mod(self, sub: "IndexExpr", modulus: int) -> "IndexExpr":
        return replace(self, mod=(sub, modulus))

    def substitute(self, mapping: Mapping[str, "IndexExpr | int"]) -> "IndexExpr":
        out = IndexExpr.lit(self.const)
        for name, c in self.terms:
            if name in mapping:
                value = mapping[name]
                value = value if isinstance(value, IndexExpr) else IndexExpr.lit(value)
                out = out + value.scale(c)
            else:
                out = out + IndexExpr.var(name, c)
        if self.mod is not None:
            out = replace(out, mod=(self.mod[0].substitute(mapping), self.mod[1]))
        return out

    def evaluate(self, env: Mapping[str, int]) -> int:
        total = self.const
        for name, c in self.terms:
            try:
                total += c * env[name]
            except KeyError:
                raise InterpreterError(f"unbound variable {name!r} in {self.render()}") from None
        if self.mod is not None:
            total += self.mod[0].evaluate(env) % self.mod[1]
        if total.denominator != 1:
            raise InterpreterError(f"inexact integer division in {self.render()} at {dict(env)}")
        return int(total)

    def render(self, order: Sequence[str] = ()) -> str:
        """Human-readable form such as ``4j + i`` or ``n/2``.

        ``order`` lists variables that should come first (outer loops first);
        remaining variables follow alphabetically.
        """
        rank = {name: i for i, name in enumerate(order)}
        terms = sorted(self.terms, key=lambda t: (rank.get(t[0], len(rank)), t[0]))
        parts: list[tuple[int, str]] = []
        for name, c in terms:
            sign = -1 if c < 0 else 1
            c = abs(c)
            num = "" if c.numerator == 1 else str(c.numerator)
            body = f"{num}{name}" if c.denominator == 1 else f"{num}{name}/{c.denominator}"
            parts.append((sign, body))
        if self.mod is not None:
            parts.append((1, f"({self.mod[0].render(order)} mod {self.mod[1]})"))
        if self.const != 0 or not parts:
            c = self.const
            text = str(abs(c.numerator)) if c.denominator == 1 else f"{abs(c.numerator)}/{c.denominator}"
            parts.append((-1 if c < 0 else 1, text))
        out = ""
        for i, (sign, body) in enumerate(parts):
            if i == 0:
                out = body if sign > 0 else f"-{body}"
            else:
                out += f" + {body}" if sign > 0 else f" - {body}"
        return out

    def __str__(self) -> str:
        return self.render()


# ---------------------------------------------------------------------------
# Scalar expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Read:
    array: str
    index: IndexExpr


@dataclass(frozen=True)
class Temp:
    name: str


@dataclass(frozen=True)
class Lit:
    value: Union[int, float]


@dataclass(frozen=True)
class Var:
    """Loop counter or size parameter used as a number."""

    name: str


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "ScalarExpr"
    right: "ScalarExpr"


@dataclass(frozen=True)
class Neg:
    operand: "ScalarExpr"


@dataclass(frozen=True)
class Intrinsic:
    name: str  # cos | sin
    arg: "ScalarExpr"


ScalarExpr = Union[Read, Temp, Lit, Var, Bin, Neg, Intrinsic]

INTRINSICS = {"cos": math.cos, "sin": math.sin}


def scalar_substitute(expr: ScalarExpr, ints: Mapping[str, int], temps: Mapping[str, str] = {}) -> ScalarExpr:
    """Replace integer variables by literals and rename temporaries."""
    if isinstance(expr, Read):
        return Read(expr.array, expr.index.substitute(ints))
    if isinstance(expr, Var):
        return Lit(ints[expr.name]) if expr.name in ints else expr
    if isinstance(expr, Temp):
        return Temp(temps.get(expr.name, expr.name))
    if isinstance(expr, Bin):
        return Bin(expr.op, scalar_substitute(expr.left, ints, temps), scalar_substitute(expr.right, ints, temps))
    if isinstance(expr, Neg):
        return Neg(scalar_substitute(expr.operand, ints, temps))
    if isinstance(expr, Intrinsic):
        return Intrinsic(expr.name, scalar_substitute(expr.arg, ints, temps))
    return expr


def scalar_reads(expr: ScalarExpr) -> list[Read]:
    if isinstance(expr, Read):
        return [expr]
    if isinstance(expr, Bin):
        return scalar_reads(expr.left) + scalar_reads(expr.right)
    if isinstance(expr, Neg):
        return scalar_reads(expr.operand)
    if isinstance(expr, Intrinsic):
        return scalar_reads(expr.arg)
    return []


def scalar_temps(expr: ScalarExpr) -> set[str]:
    if isinstance(expr, Temp):
        return {expr.name}
    if isinstance(expr, Bin):
        return scalar_temps(expr.left) | scalar_temps(expr.right)
    if isinstance(expr, Neg):
        return scalar_temps(expr.operand)
    if isinstance(expr, Intrinsic):
        return scalar_temps(expr.arg)
    return set()


def c_div(a, b):
    """C division: truncating for two ints, IEEE otherwise."""
    if isinstance(a, int) and isinstance(b, int):
        if b == 0:
            raise InterpreterError("integer division by zero")
        q = abs(a) // abs(b)
        return q if (a >= 0) == (b >= 0) else -q
    return a / b


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": c_div,
}


# ---------------------------------------------------------------------------
# Statements and programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Guard:
    """``if (size <= bound) return;``"""

    bound: int


@dataclass(frozen=True)
class Alloc:
    name: str
    extent: IndexExpr


@dataclass(frozen=True)
class Free:
    name: str


@dataclass(frozen=True)
class Def:
    """Single-assignment scalar temporary."""

    name: str
    value: ScalarExpr


@dataclass(frozen=True)
class Assign:
    array: str
    index: IndexExpr
    value: ScalarExpr


@dataclass(frozen=True)
class Loop:
    """Counted loop ``for var in range(trip)``."""

    var: str
    trip: IndexExpr
    body: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    callee: str
    arrays: tuple[str, ...]
    size: IndexExpr


Stmt = Union[Guard, Alloc, Free, Def, Assign, Loop, Call]


@dataclass(frozen=True)
class IcodeFunction:
    name: str
    params: tuple[str, ...]
    size_param: str
    body: tuple[Stmt, ...]

    @property
    def locals(self) -> tuple[str, ...]:
        return tuple(s.name for s in walk(self.body) if isinstance(s, Alloc))

    @property
    def arrays(self) -> tuple[str, ...]:
        """Parameters in declared order followed by locals in allocation order."""
        return self.params + self.locals

    @property
    def guard(self) -> int | None:
        for stmt in self.body:
            if isinstance(stmt, Guard):
                return stmt.bound
        return None


SIZE_CONSTRAINT = "n = 2^k, k >= 1"


@dataclass(frozen=True)
class IcodeProgram:
    functions: Mapping[str, IcodeFunction]
    entry: str
    size_constraint: str = SIZE_CONSTRAINT

    def function(self, name: str | None = None) -> IcodeFunction:
        name = name or self.entry
        try:
            return self.functions[name]
        except KeyError:
            raise IcodeError(f"no function named {name!r}") from None


def walk(stmts: Iterable[Stmt]):
    """Yield every statement, descending into loop bodies."""
    for stmt in stmts:
        yield stmt
        if isinstance(stmt, Loop):
            yield from walk(stmt.body)


def iter_index_exprs(stmts: Iterable[Stmt]):
    for stmt in walk(stmts):
        if isinstance(stmt, Loop):
            yield stmt.trip
        elif isinstance(stmt, Alloc):
            yield stmt.extent
        elif isinstance(stmt, Call):
            yield stmt.size
        if isinstance(stmt, Assign):
            yield stmt.index
        if isinstance(stmt, (Assign, Def)):
            for read in scalar_reads(stmt.value):
                yield read.index


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------


class _Return(Exception):
    pass


class Interpreter:
    """Executes icode with C evaluation order and IEEE double arithmetic.

    ``invocations`` counts every function entry, including calls that return
    immediately through the size guard.
    """

    def __init__(self, program: IcodeProgram, max_depth: int | None = None):
        self.program = program
        self.max_depth = max_depth
        self.invocations = 0

    def call(self, name: str, arrays: Mapping[str, list], n: int, depth: int = 1) -> None:
        fn = self.program.function(name)
        if self.max_depth is not None and depth > self.max_depth:
            raise InterpreterError(f"recursion depth {depth} exceeds {self.max_depth} in {name}")
        self.invocations += 1
        frame = _Frame(dict(arrays), {fn.size_param: n}, {}, fn.size_param)
        try:
            self.run(fn.body, frame, depth)
        except _Return:
            pass

    def run(self, stmts: Sequence[Stmt], frame: "_Frame", depth: int = 1) -> None:
        for stmt in stmts:
            self._exec(stmt, frame, depth)

    def _exec(self, stmt: Stmt, frame: "_Frame", depth: int) -> None:
        if isinstance(stmt, Assign):
            value = self._eval(stmt.value, frame)
            buf = frame.array(stmt.array)
            idx = self._index(stmt.array, stmt.index, frame, len(buf))
            buf[idx] = float(value)
        elif isinstance(stmt, Def):
            frame.temps[stmt.name] = self._eval(stmt.value, frame)
        elif isinstance(stmt, Loop):
            trip = stmt.trip.evaluate(frame.ints)
            saved = dict(frame.temps)
            for value in range(trip):
                frame.ints[stmt.var] = value
                self.run(stmt.body, frame, depth)
                frame.temps = dict(saved)
            frame.ints.pop(stmt.var, None)
        elif isinstance(stmt, Guard):
            if frame.ints[frame.size_param] <= stmt.bound:
                raise _Return()
        elif isinstance(stmt, Alloc):
            extent = stmt.extent.evaluate(frame.ints)
            if extent < 0:
                raise InterpreterError(f"negative allocation for {stmt.name}")
            frame.arrays[stmt.name] = [0.0] * extent
        elif isinstance(stmt, Free):
            frame.array(stmt.name)
            del frame.arrays[stmt.name]
        elif isinstance(stmt, Call):
            callee = self.program.function(stmt.callee)
            size = stmt.size.evaluate(frame.ints)
            passed = {p: frame.array(a) for p, a in zip(callee.params, stmt.arrays)}
            self.call(stmt.callee, passed, size, depth + 1)
        else:  # pragma: no cover - exhaustive over Stmt
            raise IcodeError(f"unknown statement {stmt!r}")

    def _index(self, array: str, index: IndexExpr, frame: "_Frame", extent: int) -> int:
        idx = index.evaluate(frame.ints)
        if not 0 <= idx < extent:
            raise InterpreterError(f"index {idx} out of extent {extent} for {array}[{index.render()}]")
        return idx

    def _eval(self, expr: ScalarExpr, frame: "_Frame"):
        if isinstance(expr, Read):
            buf = frame.array(expr.array)
            return buf[self._index(expr.array, expr.index, frame, len(buf))]
        if isinstance(expr, Bin):
            return _ARITH[expr.op](self._eval(expr.left, frame), self._eval(expr.right, frame))
        if isinstance(expr, Lit):
            return expr.value
        if isinstance(expr, Temp):
            try:
                return frame.temps[expr.name]
            except KeyError:
                raise InterpreterError(f"read of unassigned temporary {expr.name!r}") from None
        if isinstance(expr, Var):
            try:
                return frame.ints[expr.name]
            except KeyError:
                raise InterpreterError(f"unbound variable {expr.name!r}") from None
        if isinstance(expr, Neg):
            return -self._eval(expr.operand, frame)
        if isinstance(expr, Intrinsic):
            return INTRINSICS[expr.name](self._eval(expr.arg, frame))
        raise IcodeError(f"unknown scalar expression {expr!r}")


@dataclass
class _Frame:
    arrays: dict[str, list]
    ints: dict[str, int]
    temps: dict
    size_param: str

    def array(self, name: str) -> list:
        try:
            return self.arrays[name]
        except KeyError:
            raise InterpreterError(f"array {name!r} is not live") from None


def _check_size(n: int) -> None:
    if not is_power_of_two(n) or n < 2:
        raise InterpreterError(f"size {n} violates the constraint {SIZE_CONSTRAINT}")


def interpret(
    program: IcodeProgram,
    entry: str | None,
    arrays: Mapping[str, Sequence[float]],
    n: int,
    *,
    stats: dict | None = None,
) -> dict[str, list[float]]:
    """Run ``entry`` on copies of ``arrays`` and return the final parameter contents."""
    _check_size(n)
    entry = entry or program.entry
    fn = program.function(entry)
    missing = [p for p in fn.params if p not in arrays]
    if missing:
        raise InterpreterError(f"missing arrays for parameters {missing}")
    bufs = {p: [float(v) for v in arrays[p]] for p in fn.params}
    interp = Interpreter(program, max_depth=int(math.log2(n)) + 1)
    interp.call(entry, bufs, n)
    if stats is not None:
        stats["invocations"] = interp.invocations
    return bufs


def concrete_extents(program: IcodeProgram, entry: str, n: int) -> dict[str, int]:
    from .sigma_spl import range_analysis

    return {k: v.evaluate({program.function(entry).size_param: n}) for k, v in range_analysis(program, entry).items()}


def extract_linear_matrix(
    program: IcodeProgram,
    entry: str | None,
    output: str | Sequence[str],
    inputs: Sequence[str],
    n: int,
    extents: Mapping[str, int] | None = None,
) -> np.ndarray:
    """Matrix of the kernel as a map from the concatenated inputs to the outputs.

    Column ``c`` is the result of running the kernel on the ``c``-th standard
    basis vector of the concatenated input space (declared order).
    """
    entry = entry or program.entry
    fn = program.function(entry)
    outputs = [output] if isinstance(output, str) else list(output)
    extents = dict(extents) if extents is not None else concrete_extents(program, entry, n)
    layout = [(name, extents[name]) for name in inputs]
    columns = []
    for name, extent in layout:
        for slot in range(extent):
            arrays = {p: [0.0] * extents[p] for p in fn.params}
            arrays[name][slot] = 1.0
            result = interpret(program, entry, arrays, n)
            columns.append([v for o in outputs for v in result[o]])
    rows = sum(extents[o] for o in outputs)
    if not columns:
        return np.zeros((rows, 0))
    return np.array(columns, dtype=float).T


def fragment_matrix(
    program: IcodeProgram,
    entry: str,
    stmts: Sequence[Stmt],
    inputs: Sequence[str],
    outputs: Sequence[str],
    extents: Mapping[str, int],
    n: int,
) -> np.ndarray:
    """Oracle matrix of a statement sequence executed in isolation.

    Arrays not listed as inputs start zeroed; the result maps the concatenated
    inputs to the concatenated outputs.
    """
    fn = program.function(entry)
    names = list(dict.fromkeys(list(inputs) + list(outputs)))
    columns = []
    for name in inputs:
        for slot in range(extents[name]):
            frame = _Frame({a: [0.0] * extents[a] for a in names}, {fn.size_param: n}, {}, fn.size_param)
            frame.arrays[name][slot] = 1.0
            interp = Interpreter(program, max_depth=int(math.log2(max(n, 1))) + 2)
            try:
                interp.run(stmts, frame)
            except _Return:
                pass
            columns.append([v for o in outputs for v in frame.arrays[o]])
    rows = sum(extents[o] for o in outputs)
    if not columns:
        return np.zeros((rows, 0))
    return np.array(columns, dtype=float).T


def check_linearity(
    program: IcodeProgram,
    entry: str | None,
    outputs: Sequence[str],
    inputs: Sequence[str],
    n: int,
    rng: np.random.Generator,
    extents: Mapping[str, int] | None = None,
) -> float:
    """Max deviation of ``f(a*u + b*v) - (a*f(u) + b*f(v))`` on random data."""
    entry = entry or program.entry
    fn = program.function(entry)
    extents = dict(extents) if extents is not None else concrete_extents(program, entry, n)

    def run(vec: np.ndarray) -> np.ndarray:
        arrays = {p: [0.0] * extents[p] for p in fn.params}
        pos = 0
        for name in inputs:
            arrays[name] = list(vec[pos : pos + extents[name]])
            pos += extents[name]
        result = interpret(program, entry, arrays, n)
        return np.array([v for o in outputs for v in result[o]])

    size = sum(extents[name] for name in inputs)
    u, v = rng.standard_normal(size), rng.standard_normal(size)
    a, b = rng.standard_normal(2)
    return float(np.max(np.abs(run(a * u + b * v) - (a * run(u) + b * run(v))), initial=0.0))


# ---------------------------------------------------------------------------
# Unrolling
# ---------------------------------------------------------------------------


def _defined_temps(stmts: Sequence[Stmt]) -> set[str]:
    return {s.name for s in walk(stmts) if isinstance(s, Def)}


def _substitute_stmt(stmt: Stmt, ints: Mapping[str, int], temps: Mapping[str, str]) -> Stmt:
    if isinstance(stmt, Assign):
        return Assign(stmt.array, stmt.index.substitute(ints), scalar_substitute(stmt.value, ints, temps))
    if isinstance(stmt, Def):
        return Def(temps.get(stmt.name, stmt.name), scalar_substitute(stmt.value, ints, temps))
    if isinstance(stmt, Loop):
        body = tuple(_substitute_stmt(s, ints, temps) for s in stmt.body)
        return Loop(stmt.var, stmt.trip.substitute(ints), body, stmt.line)
    if isinstance(stmt, Call):
        return Call(stmt.callee, stmt.arrays, stmt.size.substitute(ints))
    if isinstance(stmt, Alloc):
        return Alloc(stmt.name, stmt.extent.substitute(ints))
    return stmt


def _unroll_block(stmts: Sequence[Stmt], max_trip: int) -> tuple[Stmt, ...]:
    out: list[Stmt] = []
    for stmt in stmts:
        if not isinstance(stmt, Loop):
            out.append(stmt)
            continue
        body = _unroll_block(stmt.body, max_trip)
        if stmt.trip.is_constant() and stmt.trip.constant_value() <= max_trip:
            defined = _defined_temps(body)
            for value in range(stmt.trip.constant_value()):
                renames = {t: f"{t}_{stmt.var}{value}" for t in defined}
                out.extend(_substitute_stmt(s, {stmt.var: value}, renames) for s in body)
        else:
            out.append(Loop(stmt.var, stmt.trip, body, stmt.line))
    return tuple(out)


def unroll_constant_loops(program: IcodeProgram, max_trip: int) -> IcodeProgram:
    """Replace every loop with a literal trip count ``<= max_trip`` by its iterations."""
    if max_trip < 1:
        raise ValueError("max_trip must be at least 1")
    functions = {
        name: replace(fn, body=_unroll_block(fn.body, max_trip)) for name, fn in program.functions.items()
    }
    return replace(program, functions=functions)
