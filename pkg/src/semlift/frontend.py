"""KernelC: a small C-like kernel language, parsed by recursive descent.

The grammar covers what straight-line numerical kernels need: a size guard,
scratch allocation through ``malloc``/``free``, counted ``for`` loops with
affine bounds, scalar temporaries, array stores, and calls (recursive ones
included). Everything else is rejected with the offending construct and
line named.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from . import icode
from .icode import IndexExpr, is_power_of_two

INTRINSICS = ("cos", "sin")
RUNTIME_CALLS = ("malloc", "free")


class KernelError(Exception):
    """Base class for front-end failures; carries the source line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class KernelSyntaxError(KernelError):
    def __init__(self, line: int, column: int, expected: str, found: str):
        self.column = column
        self.expected = expected
        self.found = found
        super().__init__(f"column {column}: expected {expected}, found {found!r}", line)


class UnsupportedConstruct(KernelError):
    def __init__(self, construct: str, line: int | None):
        self.construct = construct
        super().__init__(f"unsupported construct: {construct}", line)


class LoweringError(KernelError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    text: str
    value: Union[int, float] = field(compare=False)


@dataclass(frozen=True)
class Name:
    id: str


@dataclass(frozen=True)
class Index:
    array: str
    index: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class CallExpr:
    func: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class SizeofDouble:
    pass


Expr = Union[Num, Name, Index, BinOp, Unary, CallExpr, SizeofDouble]


@dataclass(frozen=True)
class GuardReturn:
    var: str
    bound: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class AllocStmt:
    name: str
    count: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ForStmt:
    var: str
    bound: Expr
    body: tuple["Statement", ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ScalarDecl:
    name: str
    value: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ArrayAssign:
    array: str
    index: Expr
    value: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CallStmt:
    name: str
    args: tuple[Expr, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class FreeStmt:
    name: str
    line: int = field(default=0, compare=False)


Statement = Union[GuardReturn, AllocStmt, ForStmt, ScalarDecl, ArrayAssign, CallStmt, FreeStmt]


@dataclass(frozen=True)
class KernelFunction:
    name: str
    array_params: tuple[str, ...]
    size_param: str
    body: tuple[Statement, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SourceUnit:
    functions: tuple[KernelFunction, ...]
    source_name: str = field(default="<string>", compare=False)

    def function(self, name: str) -> KernelFunction:
        for fn in self.functions:
            if fn.name == name:
                return fn
        raise KernelError(f"no function named {name!r}")

    def default_entry(self) -> str:
        if len(self.functions) == 1:
            return self.functions[0].name
        # the entry is the one function nobody else calls
        called = {
            s.name
            for fn in self.functions
            for s in _walk(fn.body)
            if isinstance(s, CallStmt) and s.name != fn.name
        }
        roots = [fn.name for fn in self.functions if fn.name not in called]
        if len(roots) != 1:
            raise KernelError("cannot infer the entry function; pass one explicitly")
        return roots[0]


def _walk(stmts):
    for stmt in stmts:
        yield stmt
        if isinstance(stmt, ForStmt):
            yield from _walk(stmt.body)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op>\+\+|--|<=|>=|==|!=|\+=|-=|\*=|/=|&&|\|\||->|[-+*/%<>=!&|^~?:;,(){}\[\].])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # int | float | ident | op | eof
    text: str
    line: int
    column: int


def _strip_comments(text: str) -> str:
    # keep newlines so line numbers stay right
    def blank(match: re.Match) -> str:
        return re.sub(r"[^\n]", " ", match.group(0))

    return re.sub(r"/\*.*?\*/|//[^\n]*", blank, text, flags=re.S)


def _preprocess(text: str) -> tuple[str, dict[str, Num]]:
    defines: dict[str, Num] = {}
    lines = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        stripped = line.strip()
        if stripped.startswith("#"):
            m_inc = re.fullmatch(r"#\s*include\s*[<\"][^>\"]+[>\"]", stripped)
            m_def = re.fullmatch(r"#\s*define\s+M_PI\s+(\S+)", stripped)
            if m_inc:
                pass
            elif m_def:
                literal = m_def.group(1)
                try:
                    defines["M_PI"] = Num(literal, float(literal))
                except ValueError:
                    raise UnsupportedConstruct(f"non-literal M_PI definition {literal!r}", lineno) from None
            else:
                raise UnsupportedConstruct(f"preprocessor directive {stripped!r}", lineno)
            lines.append("")
        else:
            lines.append(line)
    return "\n".join(lines), defines


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, col_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise KernelSyntaxError(line, pos - col_start + 1, "a token", text[pos])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            col_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(0), line, pos - col_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "<end of input>", line, pos - col_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Scope:
    def __init__(self, size_param: str, arrays: Sequence[str]):
        self.size_param = size_param
        self.arrays = set(arrays)
        self.loop_vars: list[str] = []
        self.temps: list[set[str]] = [set()]

    def is_temp(self, name: str) -> bool:
        return any(name in frame for frame in self.temps)


class Parser:
    def __init__(self, text: str, source_name: str = "<string>"):
        self.source_name = source_name
        body, self.defines = _preprocess(_strip_comments(text))
        self.tokens = tokenize(body)
        self.pos = 0
        self.scope: _Scope | None = None

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tok
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "ident")

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise KernelSyntaxError(self.tok.line, self.tok.column, repr(text), self.tok.text)
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            raise KernelSyntaxError(self.tok.line, self.tok.column, "an identifier", self.tok.text)
        return self.advance()

    def expect_int(self) -> int:
        if self.tok.kind != "int":
            raise KernelSyntaxError(self.tok.line, self.tok.column, "an integer literal", self.tok.text)
        return int(self.advance().text)

    # translation unit
    def parse_unit(self) -> SourceUnit:
        functions = []
        while self.tok.kind != "eof":
            functions.append(self.parse_function())
        if not functions:
            raise KernelSyntaxError(self.tok.line, self.tok.column, "a function definition", self.tok.text)
        unit = SourceUnit(tuple(functions), self.source_name)
        _resolve_calls(unit)
        return unit

    def parse_function(self) -> KernelFunction:
        if not self.at("void"):
            if self.tok.kind == "ident" and self.tok.text in ("int", "double", "float", "static", "inline"):
                raise UnsupportedConstruct(f"function returning {self.tok.text!r}", self.tok.line)
            raise KernelSyntaxError(self.tok.line, self.tok.column, "'void'", self.tok.text)
        line = self.advance().line
        name = self.expect_ident().text
        self.expect("(")
        arrays: list[str] = []
        size_param = None
        while True:
            if self.at("double"):
                self.advance()
                if not self.at("*"):
                    raise UnsupportedConstruct("scalar double parameter", self.tok.line)
                self.advance()
                if size_param is not None:
                    raise UnsupportedConstruct("array parameter after the size parameter", self.tok.line)
                arrays.append(self.expect_ident().text)
            elif self.at("int"):
                self.advance()
                if self.at("*"):
                    raise UnsupportedConstruct("integer array parameter", self.tok.line)
                if size_param is not None:
                    raise UnsupportedConstruct("more than one integer size parameter", self.tok.line)
                size_param = self.expect_ident().text
            else:
                raise KernelSyntaxError(self.tok.line, self.tok.column, "'double*' or 'int'", self.tok.text)
            if self.at(","):
                self.advance()
                continue
            self.expect(")")
            break
        if size_param is None:
            raise UnsupportedConstruct(f"function {name!r} without an integer size parameter", line)
        if len(set(arrays)) != len(arrays) or size_param in arrays:
            raise KernelError(f"duplicate parameter name in {name!r}", line)
        self.scope = _Scope(size_param, arrays)
        body = self.parse_block()
        self.scope = None
        return KernelFunction(name, tuple(arrays), size_param, body, line)

    def parse_block(self) -> tuple[Statement, ...]:
        self.expect("{")
        self.scope.temps.append(set())
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise KernelSyntaxError(self.tok.line, self.tok.column, "'}'", self.tok.text)
            stmts.append(self.parse_statement())
        self.advance()
        self.scope.temps.pop()
        return tuple(stmts)

    def parse_statement(self) -> Statement:
        tok = self.tok
        if tok.kind == "ident":
            word = tok.text
            if word == "if":
                return self.parse_guard()
            if word == "for":
                return self.parse_for()
            if word == "double":
                return self.parse_declaration()
            if word == "free":
                return self.parse_free()
            if word in ("while", "do", "switch", "goto", "else", "break", "continue", "return"):
                raise UnsupportedConstruct(f"{word!r} statement", tok.line)
            if word in ("int", "float", "long", "unsigned", "char", "short", "const", "static"):
                raise UnsupportedConstruct(f"declaration of type {word!r}", tok.line)
            if self.peek().text == "[":
                return self.parse_array_assign()
            if self.peek().text == "(":
                return self.parse_call()
            if self.peek().text in ("=", "+=", "-=", "*=", "/=", "++", "--"):
                raise UnsupportedConstruct(f"assignment to scalar {word!r} after declaration", tok.line)
        if tok.text == "{":
            raise UnsupportedConstruct("nested block", tok.line)
        raise KernelSyntaxError(tok.line, tok.column, "a statement", tok.text)

    def parse_guard(self) -> GuardReturn:
        line = self.advance().line
        self.expect("(")
        start = self.pos
        if self.tok.text == self.scope.size_param and self.peek().text == "<=" and self.peek(2).kind == "int":
            var = self.advance().text
            self.advance()
            bound = self.expect_int()
            if self.at(")") and self.peek().text == "return" and self.peek(2).text == ";":
                self.pos += 3
                return GuardReturn(var, bound, line)
        self.pos = start
        raise UnsupportedConstruct(
            "conditional other than 'if (SIZE <= INT) return;' (data-dependent or general branch)", line
        )

    def parse_declaration(self) -> Statement:
        line = self.advance().line
        if self.at("*"):
            self.advance()
            name = self.expect_ident().text
            self.expect("=")
            self.expect("(")
            self.expect("double")
            self.expect("*")
            self.expect(")")
            if not self.at("malloc"):
                raise UnsupportedConstruct("array declaration not initialised by malloc", line)
            self.advance()
            self.expect("(")
            size = self.parse_expr(allow_sizeof=True)
            self.expect(")")
            self.expect(";")
            count = _strip_sizeof(size, line)
            self.to_index(count, line)
            if name in self.scope.arrays or self.scope.is_temp(name):
                raise KernelError(f"redeclaration of {name!r}", line)
            self.scope.arrays.add(name)
            return AllocStmt(name, count, line)
        name = self.expect_ident().text
        if self.at("["):
            raise UnsupportedConstruct("fixed-size local array", line)
        self.expect("=")
        value = self.parse_scalar()
        self.expect(";")
        if name in self.scope.temps[-1] or name in self.scope.arrays:
            raise KernelError(f"redeclaration of {name!r}", line)
        self.scope.temps[-1].add(name)
        return ScalarDecl(name, value, line)

    def parse_for(self) -> ForStmt:
        line = self.advance().line
        self.expect("(")
        if not self.at("int"):
            raise UnsupportedConstruct("for-loop without an 'int' counter declaration", line)
        self.advance()
        var = self.expect_ident().text
        self.expect("=")
        if not (self.tok.kind == "int" and self.tok.text == "0" and self.peek().text == ";"):
            raise UnsupportedConstruct("for-loop lower bound other than 0", line)
        self.advance()
        self.expect(";")
        if self.tok.text != var:
            raise UnsupportedConstruct("for-loop condition not on the loop counter", line)
        self.advance()
        if not self.at("<"):
            raise UnsupportedConstruct(f"for-loop comparison {self.tok.text!r} (only '<' is accepted)", line)
        self.advance()
        bound = self.parse_expr()
        self.expect(";")
        if self.at("++") and self.peek().text == var:
            self.pos += 2
        elif self.tok.text == var and self.peek().text == "++":
            self.pos += 2
        else:
            raise UnsupportedConstruct("for-loop step other than +1", line)
        self.expect(")")
        if var in self.scope.loop_vars or var == self.scope.size_param or var in self.scope.arrays:
            raise KernelError(f"loop counter {var!r} shadows another name", line)
        # the bound is evaluated in the enclosing scope
        self.to_index(bound, line)
        self.scope.loop_vars.append(var)
        if self.at("{"):
            body = self.parse_block()
        else:
            self.scope.temps.append(set())
            body = (self.parse_statement(),)
            self.scope.temps.pop()
        self.scope.loop_vars.pop()
        return ForStmt(var, bound, body, line)

    def parse_free(self) -> FreeStmt:
        line = self.advance().line
        self.expect("(")
        name = self.expect_ident().text
        self.expect(")")
        self.expect(";")
        return FreeStmt(name, line)

    def parse_array_assign(self) -> ArrayAssign:
        tok = self.advance()
        if tok.text not in self.scope.arrays:
            raise KernelError(f"store to undeclared array {tok.text!r}", tok.line)
        self.expect("[")
        index = self.parse_expr()
        self.expect("]")
        if self.tok.text in ("+=", "-=", "*=", "/="):
            raise UnsupportedConstruct(f"compound assignment {self.tok.text!r}", tok.line)
        self.expect("=")
        value = self.parse_scalar()
        self.expect(";")
        self.to_index(index, tok.line)
        return ArrayAssign(tok.text, index, value, tok.line)

    def parse_call(self) -> CallStmt:
        tok = self.advance()
        if tok.text in INTRINSICS or tok.text == "malloc":
            raise UnsupportedConstruct(f"call to {tok.text!r} as a statement", tok.line)
        self.expect("(")
        args = []
        if not self.at(")"):
            while True:
                args.append(self.parse_expr())
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        self.expect(";")
        return CallStmt(tok.text, tuple(args), tok.line)

    # expressions
    def parse_scalar(self) -> Expr:
        line = self.tok.line
        expr = self.parse_expr()
        self.check_scalar(expr, line)
        return expr

    def parse_expr(self, allow_sizeof: bool = False) -> Expr:
        left = self.parse_term(allow_sizeof)
        while self.at("+") or self.at("-"):
            op = self.advance().text
            left = BinOp(op, left, self.parse_term(allow_sizeof))
        if self.tok.text in ("%", "<<", ">>", "&", "|", "^", "?", "<", ">", "==", "!=", "&&", "||"):
            raise UnsupportedConstruct(f"operator {self.tok.text!r}", self.tok.line)
        return left

    def parse_term(self, allow_sizeof: bool) -> Expr:
        left = self.parse_unary(allow_sizeof)
        while self.at("*") or self.at("/"):
            op = self.advance().text
            left = BinOp(op, left, self.parse_unary(allow_sizeof))
        if self.at("%"):
            raise UnsupportedConstruct("operator '%'", self.tok.line)
        return left

    def parse_unary(self, allow_sizeof: bool) -> Expr:
        if self.at("-"):
            self.advance()
            return Unary("-", self.parse_unary(allow_sizeof))
        if self.at("+"):
            self.advance()
            return self.parse_unary(allow_sizeof)
        return self.parse_primary(allow_sizeof)

    def parse_primary(self, allow_sizeof: bool) -> Expr:
        tok = self.tok
        if tok.kind in ("int", "float"):
            self.advance()
            return Num(tok.text, int(tok.text) if tok.kind == "int" else float(tok.text))
        if tok.text == "(":
            self.advance()
            if self.at("double") or self.at("int"):
                raise UnsupportedConstruct("type cast", tok.line)
            inner = self.parse_expr(allow_sizeof)
            self.expect(")")
            return inner
        if tok.kind == "ident":
            self.advance()
            if tok.text == "sizeof":
                if not allow_sizeof:
                    raise UnsupportedConstruct("sizeof outside malloc", tok.line)
                self.expect("(")
                self.expect("double")
                self.expect(")")
                return SizeofDouble()
            if tok.text == "M_PI":
                return self.defines.get("M_PI", Num(repr(math.pi), math.pi))
            if self.at("["):
                self.advance()
                index = self.parse_expr()
                self.expect("]")
                return Index(tok.text, index)
            if self.at("("):
                self.advance()
                args = []
                if not self.at(")"):
                    while True:
                        args.append(self.parse_expr())
                        if not self.at(","):
                            break
                        self.advance()
                self.expect(")")
                return CallExpr(tok.text, tuple(args))
            return Name(tok.text)
        raise KernelSyntaxError(tok.line, tok.column, "an expression", tok.text)

    # semantic checks during parsing
    def to_index(self, expr: Expr, line: int) -> IndexExpr:
        allowed = set(self.scope.loop_vars) | {self.scope.size_param}
        return index_of(expr, allowed, line)

    def check_scalar(self, expr: Expr, line: int) -> None:
        if isinstance(expr, Num):
            return
        if isinstance(expr, Name):
            if expr.id in self.scope.loop_vars or expr.id == self.scope.size_param or self.scope.is_temp(expr.id):
                return
            if expr.id in self.scope.arrays:
                raise UnsupportedConstruct(f"array {expr.id!r} used as a scalar", line)
            raise KernelError(f"undeclared identifier {expr.id!r}", line)
        if isinstance(expr, Index):
            if expr.array not in self.scope.arrays:
                raise KernelError(f"read from undeclared array {expr.array!r}", line)
            self.to_index(expr.index, line)
            return
        if isinstance(expr, BinOp):
            self.check_scalar(expr.left, line)
            self.check_scalar(expr.right, line)
            return
        if isinstance(expr, Unary):
            self.check_scalar(expr.operand, line)
            return
        if isinstance(expr, CallExpr):
            if expr.func not in INTRINSICS:
                raise UnsupportedConstruct(f"call to {expr.func!r} inside an expression", line)
            if len(expr.args) != 1:
                raise KernelError(f"{expr.func} takes one argument", line)
            self.check_scalar(expr.args[0], line)
            return
        raise UnsupportedConstruct(f"expression {expr!r}", line)


def _strip_sizeof(expr: Expr, line: int) -> Expr:
    if isinstance(expr, BinOp) and expr.op == "*":
        if isinstance(expr.right, SizeofDouble) and not _has_sizeof(expr.left):
            return expr.left
        if isinstance(expr.left, SizeofDouble) and not _has_sizeof(expr.right):
            return expr.right
    raise UnsupportedConstruct("malloc argument not of the form 'COUNT * sizeof(double)'", line)


def _has_sizeof(expr: Expr) -> bool:
    if isinstance(expr, SizeofDouble):
        return True
    if isinstance(expr, BinOp):
        return _has_sizeof(expr.left) or _has_sizeof(expr.right)
    if isinstance(expr, Unary):
        return _has_sizeof(expr.operand)
    return False


def index_of(expr: Expr, allowed: set[str], line: int | None = None) -> IndexExpr:
    """Convert an integer expression to an affine ``IndexExpr``."""
    if isinstance(expr, Num):
        if not isinstance(expr.value, int):
            raise UnsupportedConstruct(f"floating-point literal {expr.text} in an index", line)
        return IndexExpr.lit(expr.value)
    if isinstance(expr, Name):
        if expr.id not in allowed:
            raise UnsupportedConstruct(f"{expr.id!r} in an index or bound (only loop counters and the size)", line)
        return IndexExpr.var(expr.id)
    if isinstance(expr, Unary):
        return -index_of(expr.operand, allowed, line)
    if isinstance(expr, BinOp):
        left = index_of(expr.left, allowed, line)
        right = index_of(expr.right, allowed, line)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            if not (left.is_constant() or right.is_constant()):
                raise UnsupportedConstruct(f"non-affine product {format_expr(expr)}", line)
            return left * right
        if expr.op == "/":
            if not right.is_constant() or right.const.denominator != 1 or not is_power_of_two(int(right.const)):
                raise UnsupportedConstruct(f"division by non-power-of-two in {format_expr(expr)}", line)
            if int(right.const) == 1:
                return left
            return left.div(int(right.const))
    raise UnsupportedConstruct(f"non-affine index expression {format_expr(expr)}", line)


def _resolve_calls(unit: SourceUnit) -> None:
    names = {fn.name for fn in unit.functions}
    if len(names) != len(unit.functions):
        raise KernelError("duplicate function definition")
    for fn in unit.functions:
        for stmt in _walk(fn.body):
            if isinstance(stmt, CallStmt) and stmt.name not in names:
                raise KernelError(f"call to unknown function {stmt.name!r}", stmt.line)


def parse_kernel_source(text: str, source_name: str = "<string>") -> SourceUnit:
    """Parse KernelC text into a ``SourceUnit``."""
    return Parser(text, source_name).parse_unit()


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(expr: Expr, parent: int = 0) -> str:
    if isinstance(expr, Num):
        return expr.text
    if isinstance(expr, Name):
        return expr.id
    if isinstance(expr, Index):
        return f"{expr.array}[{format_expr(expr.index)}]"
    if isinstance(expr, Unary):
        inner = format_expr(expr.operand, 3)
        return f"-{inner}"
    if isinstance(expr, CallExpr):
        return f"{expr.func}({', '.join(format_expr(a) for a in expr.args)})"
    if isinstance(expr, SizeofDouble):
        return "sizeof(double)"
    prec = _PREC[expr.op]
    text = f"{format_expr(expr.left, prec)} {expr.op} {format_expr(expr.right, prec + 1)}"
    return f"({text})" if prec < parent else text


def format_unit(unit: SourceUnit) -> str:
    """Render a unit as canonical KernelC (re-parses to an equal unit)."""
    out = []
    for fn in unit.functions:
        params = [f"double* {p}" for p in fn.array_params] + [f"int {fn.size_param}"]
        out.append(f"void {fn.name}({', '.join(params)}) {{")
        out.extend(_format_block(fn.body, 1))
        out.append("}")
    return "\n".join(out) + "\n"


def _format_block(stmts, depth: int) -> list[str]:
    pad = "    " * depth
    lines = []
    for s in stmts:
        if isinstance(s, GuardReturn):
            lines.append(f"{pad}if ({s.var} <= {s.bound}) return;")
        elif isinstance(s, AllocStmt):
            lines.append(f"{pad}double* {s.name} = (double*)malloc({format_expr(s.count, 2)} * sizeof(double));")
        elif isinstance(s, ForStmt):
            lines.append(f"{pad}for (int {s.var} = 0; {s.var} < {format_expr(s.bound)}; ++{s.var}) {{")
            lines.extend(_format_block(s.body, depth + 1))
            lines.append(f"{pad}}}")
        elif isinstance(s, ScalarDecl):
            lines.append(f"{pad}double {s.name} = {format_expr(s.value)};")
        elif isinstance(s, ArrayAssign):
            lines.append(f"{pad}{s.array}[{format_expr(s.index)}] = {format_expr(s.value)};")
        elif isinstance(s, CallStmt):
            lines.append(f"{pad}{s.name}({', '.join(format_expr(a) for a in s.args)});")
        elif isinstance(s, FreeStmt):
            lines.append(f"{pad}free({s.name});")
    return lines


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "warning" | "error"
    message: str
    line: int | None = None
    function: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{self.severity}: {where}{self.message}"


def _size_argument(expr: Expr, size_param: str) -> IndexExpr | None:
    """Return the size argument if it is ``size / 2^k`` (k >= 1), else None."""
    try:
        idx = index_of(expr, {size_param})
    except (UnsupportedConstruct, icode.IcodeError):
        return None
    c = idx.coeff(size_param)
    if idx.const != 0 or len(idx.terms) != 1 or c.numerator != 1:
        return None
    if c.denominator < 2 or not is_power_of_two(c.denominator):
        return None
    return idx


def _scalar_names(expr: Expr) -> set[str]:
    if isinstance(expr, Name):
        return {expr.id}
    if isinstance(expr, Index):
        return _scalar_names(expr.index)
    if isinstance(expr, BinOp):
        return _scalar_names(expr.left) | _scalar_names(expr.right)
    if isinstance(expr, Unary):
        return _scalar_names(expr.operand)
    if isinstance(expr, CallExpr):
        return set().union(*(_scalar_names(a) for a in expr.args)) if expr.args else set()
    return set()


def validate_kernel(unit: SourceUnit) -> list[Diagnostic]:
    """Warnings and errors for a parsed unit; an empty list means lift-eligible."""
    diags: list[Diagnostic] = []
    by_name = {fn.name: fn for fn in unit.functions}
    for fn in unit.functions:
        allocated: dict[str, int] = {}
        freed: set[str] = set()
        temps: dict[str, int] = {}
        used: set[str] = set()
        for stmt in _walk(fn.body):
            if isinstance(stmt, AllocStmt):
                allocated[stmt.name] = stmt.line
            elif isinstance(stmt, FreeStmt):
                if stmt.name not in allocated:
                    diags.append(Diagnostic("error", f"free of {stmt.name!r} which was not allocated", stmt.line, fn.name))
                elif stmt.name in freed:
                    diags.append(Diagnostic("error", f"array {stmt.name!r} freed twice", stmt.line, fn.name))
                freed.add(stmt.name)
            elif isinstance(stmt, ScalarDecl):
                temps.setdefault(stmt.name, stmt.line)
                used |= _scalar_names(stmt.value)
            elif isinstance(stmt, ArrayAssign):
                used |= _scalar_names(stmt.value)
            elif isinstance(stmt, CallStmt):
                diags.extend(_check_call(stmt, fn, by_name[stmt.name]))
        for name, line in allocated.items():
            if name not in freed:
                diags.append(Diagnostic("warning", f"array {name!r} not deallocated", line, fn.name))
        for name, line in temps.items():
            if name not in used:
                diags.append(Diagnostic("warning", f"temporary {name!r} is never used", line, fn.name))
    return diags


def _check_call(stmt: CallStmt, caller: KernelFunction, callee: KernelFunction) -> list[Diagnostic]:
    out = []
    expected = len(callee.array_params) + 1
    if len(stmt.args) != expected:
        out.append(Diagnostic("error", f"call to {callee.name!r} passes {len(stmt.args)} arguments, expected {expected}", stmt.line, caller.name))
        return out
    arrays = stmt.args[:-1]
    names = []
    for arg in arrays:
        if not isinstance(arg, Name):
            out.append(Diagnostic("error", f"array argument {format_expr(arg)} is not a plain array name", stmt.line, caller.name))
        else:
            names.append(arg.id)
    if len(set(names)) != len(names):
        out.append(Diagnostic("error", f"aliasing: the same array is passed twice to {callee.name!r}", stmt.line, caller.name))
    if _size_argument(stmt.args[-1], caller.size_param) is None:
        out.append(
            Diagnostic(
                "error",
                f"size argument '{format_expr(stmt.args[-1])}' is not {caller.size_param} divided by a power of two",
                stmt.line,
                caller.name,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Lowering to icode
# ---------------------------------------------------------------------------


def _lower_scalar(expr: Expr, ints: set[str], temps: set[str]) -> icode.ScalarExpr:
    if isinstance(expr, Num):
        return icode.Lit(expr.value)
    if isinstance(expr, Name):
        return icode.Var(expr.id) if expr.id in ints else icode.Temp(expr.id)
    if isinstance(expr, Index):
        return icode.Read(expr.array, index_of(expr.index, ints))
    if isinstance(expr, BinOp):
        return icode.Bin(expr.op, _lower_scalar(expr.left, ints, temps), _lower_scalar(expr.right, ints, temps))
    if isinstance(expr, Unary):
        return icode.Neg(_lower_scalar(expr.operand, ints, temps))
    if isinstance(expr, CallExpr):
        return icode.Intrinsic(expr.func, _lower_scalar(expr.args[0], ints, temps))
    raise LoweringError(f"cannot lower expression {expr!r}")


def _lower_block(stmts, fn: KernelFunction, ints: set[str]) -> tuple[icode.Stmt, ...]:
    out: list[icode.Stmt] = []
    temps: set[str] = set()
    for s in stmts:
        if isinstance(s, GuardReturn):
            out.append(icode.Guard(s.bound))
        elif isinstance(s, AllocStmt):
            out.append(icode.Alloc(s.name, index_of(s.count, ints, s.line)))
        elif isinstance(s, FreeStmt):
            out.append(icode.Free(s.name))
        elif isinstance(s, ScalarDecl):
            if s.name in temps:
                raise LoweringError(f"temporary {s.name!r} assigned twice", s.line)
            out.append(icode.Def(s.name, _lower_scalar(s.value, ints, temps)))
            temps.add(s.name)
        elif isinstance(s, ArrayAssign):
            out.append(icode.Assign(s.array, index_of(s.index, ints, s.line), _lower_scalar(s.value, ints, temps)))
        elif isinstance(s, ForStmt):
            trip = index_of(s.bound, ints, s.line)
            body = _lower_block(s.body, fn, ints | {s.var})
            out.append(icode.Loop(s.var, trip, body, s.line))
        elif isinstance(s, CallStmt):
            arrays = tuple(a.id for a in s.args[:-1] if isinstance(a, Name))
            if len(arrays) != len(s.args) - 1:
                raise LoweringError("array arguments must be plain array names", s.line)
            if len(set(arrays)) != len(arrays):
                raise LoweringError(f"aliasing between array arguments of the call to {s.name!r}", s.line)
            size = _size_argument(s.args[-1], fn.size_param)
            if size is None:
                raise LoweringError(
                    f"size argument '{format_expr(s.args[-1])}' is not {fn.size_param} divided by a power of two", s.line
                )
            out.append(icode.Call(s.name, arrays, size))
    return tuple(out)


def lower_to_icode(unit: SourceUnit, entry: str | None = None) -> icode.IcodeProgram:
    """Lower every function of ``unit``; ``entry`` designates the lift target."""
    entry = entry or unit.default_entry()
    unit.function(entry)
    functions = {}
    for fn in unit.functions:
        body = _lower_block(fn.body, fn, {fn.size_param})
        functions[fn.name] = icode.IcodeFunction(fn.name, fn.array_params, fn.size_param, body)
    program = icode.IcodeProgram(functions, entry)
    from .sigma_spl import RangeError, range_analysis

    for name in functions:
        try:
            range_analysis(program, name)
        except RangeError as exc:
            raise LoweringError(str(exc)) from None
    return program


# ---------------------------------------------------------------------------
# Direct AST interpretation
# ---------------------------------------------------------------------------


class _AstReturn(Exception):
    pass


def run_source(unit: SourceUnit, entry: str, arrays: Mapping[str, Sequence[float]], n: int) -> dict[str, list[float]]:
    """Execute the AST directly; used to cross-check the lowering."""
    fn = unit.function(entry)
    bufs = {p: [float(v) for v in arrays[p]] for p in fn.array_params}
    _AstInterp(unit).call(fn, bufs, n)
    return bufs


class _AstInterp:
    def __init__(self, unit: SourceUnit):
        self.unit = unit

    def call(self, fn: KernelFunction, arrays: dict, n: int) -> None:
        env = {"arrays": dict(arrays), "vals": {fn.size_param: n}}
        try:
            self.block(fn.body, env)
        except _AstReturn:
            pass

    def block(self, stmts, env) -> None:
        for s in stmts:
            if isinstance(s, GuardReturn):
                if env["vals"][s.var] <= s.bound:
                    raise _AstReturn()
            elif isinstance(s, AllocStmt):
                env["arrays"][s.name] = [0.0] * self.int_value(s.count, env)
            elif isinstance(s, FreeStmt):
                del env["arrays"][s.name]
            elif isinstance(s, ScalarDecl):
                env["vals"][s.name] = self.value(s.value, env)
            elif isinstance(s, ArrayAssign):
                idx = self.int_value(s.index, env)
                buf = env["arrays"][s.array]
                if not 0 <= idx < len(buf):
                    raise icode.InterpreterError(f"index {idx} out of extent {len(buf)} for {s.array}")
                buf[idx] = float(self.value(s.value, env))
            elif isinstance(s, ForStmt):
                bound = self.int_value(s.bound, env)
                saved = dict(env["vals"])
                for i in range(bound):
                    env["vals"] = dict(saved)
                    env["vals"][s.var] = i
                    self.block(s.body, env)
                env["vals"] = saved
            elif isinstance(s, CallStmt):
                callee = self.unit.function(s.name)
                passed = {p: env["arrays"][a.id] for p, a in zip(callee.array_params, s.args[:-1])}
                self.call(callee, passed, self.int_value(s.args[-1], env))

    def int_value(self, expr: Expr, env) -> int:
        value = self._exact(expr, env)
        if value.denominator != 1:
            raise icode.InterpreterError(f"inexact integer division in {format_expr(expr)}")
        return int(value)

    def _exact(self, expr: Expr, env):
        from fractions import Fraction

        if isinstance(expr, Num):
            return Fraction(expr.value)
        if isinstance(expr, Name):
            return Fraction(env["vals"][expr.id])
        if isinstance(expr, Unary):
            return -self._exact(expr.operand, env)
        a, b = self._exact(expr.left, env), self._exact(expr.right, env)
        return {"+": a + b, "-": a - b, "*": a * b}.get(expr.op) if expr.op != "/" else a / b

    def value(self, expr: Expr, env):
        if isinstance(expr, Num):
            return expr.value
        if isinstance(expr, Name):
            return env["vals"][expr.id]
        if isinstance(expr, Index):
            buf = env["arrays"][expr.array]
            idx = self.int_value(expr.index, env)
            if not 0 <= idx < len(buf):
                raise icode.InterpreterError(f"index {idx} out of extent {len(buf)} for {expr.array}")
            return buf[idx]
        if isinstance(expr, Unary):
            return -self.value(expr.operand, env)
        if isinstance(expr, CallExpr):
            return icode.INTRINSICS[expr.func](self.value(expr.args[0], env))
        a, b = self.value(expr.left, env), self.value(expr.right, env)
        if expr.op == "/":
            return icode.c_div(a, b)
        return {"+": a + b, "-": a - b, "*": a * b}[expr.op]
