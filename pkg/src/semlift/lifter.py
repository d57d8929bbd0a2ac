"""Lift lowered kernels to SPL.

Each fragment of the entry function (a loop nest, a run of straight-line
stores, or a group of recursive calls) is handed to a fixed list of
recognizers. A recognizer proposes an SPL candidate and the candidate is
compared against the fragment's oracle matrix before it is committed. The
committed factors are composed in reverse program order. Recursive calls
leave a ``Hole``; such equations are closed by matching a base case and
checking the substituted equation at larger sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import icode, sigma_spl, spl
from . import knowledge_base as kbase
from .icode import Assign, Bin, Call, Def, IcodeProgram, IndexExpr, Intrinsic, Lit, Loop, Neg, Read, Temp, Var
from .sigma_spl import Atom, BasisOuterProduct, ISum, SigmaLift, Sum
from .spl import RC, DFT, Hole, Size, SPLExpr

PERMUTATION_TOL = 0.0
ASSURANCE = "computer-algebra"


class LiftError(Exception):
    """A kernel (or fragment) that no recognizer could lift."""


@dataclass
class LiftConfig:
    entry: str | None = None
    emit: tuple[str, ...] = ("sigma-spl", "spl", "equation", "spec", "trace")
    probe_sizes: tuple[int, ...] = sigma_spl.PROBE_SIZES
    tolerance: float = 1e-10
    output_format: str = "text"
    unroll_limit: int = 8

    def __post_init__(self):
        self.probe_sizes = tuple(sorted(set(int(s) for s in self.probe_sizes)))
        bad = [s for s in self.probe_sizes if not icode.is_power_of_two(s) or s < 2]
        if bad or not self.probe_sizes:
            raise ValueError(f"probe sizes must be powers of two >= 2, got {list(self.probe_sizes) or 'none'}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


# ---------------------------------------------------------------------------
# Trace records
# ---------------------------------------------------------------------------


@dataclass
class LiftStep:
    rule: str
    fragment: str
    input: str
    output: SPLExpr | None
    checks: list[tuple[int, float]] = field(default_factory=list)
    tolerance: float = 0.0
    note: str = ""

    @property
    def output_text(self) -> str:
        return "" if self.output is None else spl.to_text(self.output)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "fragment": self.fragment,
            "input": self.input,
            "output": self.output_text,
            "note": self.note,
            "tolerance": self.tolerance,
            "checks": [{"size": s, "deviation": d} for s, d in self.checks],
        }


@dataclass(frozen=True)
class RecursiveEquation:
    name: str
    size: Size
    rhs: SPLExpr
    arity: int
    width: int = 2

    def render(self) -> str:
        text = spl.to_text(self.rhs)
        for hole in _holes(self.rhs):
            text = text.replace(spl.to_text(hole), f"{hole.name}({hole.size})")
        return f"{self.name}({self.size}) = {text}"


@dataclass
class ClosedSPL:
    expr: SPLExpr
    assurance_level: str = ASSURANCE
    checked_sizes: list[int] = field(default_factory=list)
    evidence: list[dict] = field(default_factory=list)

    @property
    def text(self) -> str:
        return spl.to_text(self.expr)


@dataclass
class Failure:
    stage: str
    reason: str
    deviations: list[tuple[int, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "reason": self.reason,
            "deviations": [{"size": s, "deviation": d} for s, d in self.deviations],
        }


@dataclass
class Trial:
    fragment: str
    recognizer: str
    outcome: str  # committed | no-match | rejected
    reason: str = ""


INPUT_STAGES = ("frontend", "validate")


@dataclass
class LiftTrace:
    entry: str = ""
    steps: list[LiftStep] = field(default_factory=list)
    equation: RecursiveEquation | None = None
    base_case: dict | None = None
    closed: ClosedSPL | None = None
    specification: kbase.SpecificationResult | None = None
    failures: list[Failure] = field(default_factory=list)
    trials: list[Trial] = field(default_factory=list)
    sigma: dict[str, str] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)
    program: IcodeProgram | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return not self.failures and self.closed is not None

    @property
    def input_error(self) -> bool:
        return any(f.stage in INPUT_STAGES for f in self.failures)

    def fail(self, stage: str, reason: str, deviations=()) -> "LiftTrace":
        self.failures.append(Failure(stage, reason, list(deviations)))
        return self


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def _holes(expr: SPLExpr) -> list[Hole]:
    if isinstance(expr, Hole):
        return [expr]
    return [h for k in spl.children(expr) for h in _holes(k)]


def size_of_extent(extent: IndexExpr, size_param: str, divide: int = 1) -> Size:
    """An extent such as ``2n`` as an SPL size, optionally divided."""
    coeff = extent.coeff(size_param) / divide
    const = extent.const / divide
    others = extent.free_vars - {size_param}
    if others or extent.mod is not None or (coeff and const):
        raise LiftError(f"extent {extent} is not a multiple of {size_param}")
    return Size(Fraction(coeff), size_param) if coeff else Size(Fraction(const))


def max_dev(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b), initial=0.0))


def eval_with_holes(
    expr: SPLExpr,
    bindings: Mapping[str, int],
    fill: Callable[[Hole], np.ndarray],
) -> np.ndarray:
    """Dense matrix of ``expr`` where each ``Hole`` is supplied by ``fill``."""
    if not spl.contains(expr, Hole):
        return spl.evaluate(expr, bindings=bindings)
    if isinstance(expr, Hole):
        return fill(expr).astype(complex)
    if isinstance(expr, spl.Compose):
        mats = [eval_with_holes(f, bindings, fill) for f in expr.factors]
        out = mats[0]
        for m in mats[1:]:
            out = out @ m
        return out
    if isinstance(expr, spl.Tensor):
        return np.kron(eval_with_holes(expr.left, bindings, fill), eval_with_holes(expr.right, bindings, fill))
    raise LiftError(f"cannot evaluate a hole under {type(expr).__name__}")


def _real(mat: np.ndarray) -> np.ndarray:
    return np.real(mat) if np.iscomplexobj(mat) else mat


def equivalence_match(
    matrix: np.ndarray,
    candidate: SPLExpr,
    n: int,
    tol: float,
    size_param: str = "n",
) -> tuple[bool, float]:
    """Compare an oracle matrix with a candidate read as a real operator."""
    cand = spl.as_real_operator(candidate, matrix.shape, bindings={size_param: n})
    dev = max_dev(matrix, cand)
    return dev <= tol, dev


# ---------------------------------------------------------------------------
# Kernel-level oracle
# ---------------------------------------------------------------------------


def kernel_io(fn: icode.IcodeFunction) -> tuple[list[str], list[str]]:
    """(inputs, outputs): parameters read or written directly by the body."""
    reads, writes = sigma_spl.fragment_arrays(fn.body, fn.arrays)
    return [p for p in fn.params if p in reads], [p for p in fn.params if p in writes]


class KernelOracle:
    """Cached linear-operator matrices of a kernel at concrete sizes."""

    def __init__(self, program: IcodeProgram, entry: str):
        self.program, self.entry = program, entry
        self.fn = program.function(entry)
        self.inputs, self.outputs = kernel_io(self.fn)
        self.extents = sigma_spl.range_analysis(program, entry)
        self._cache: dict[int, np.ndarray] = {}

    def concrete(self, n: int) -> dict[str, int]:
        return {k: v.evaluate({self.fn.size_param: n}) for k, v in self.extents.items()}

    def matrix(self, n: int) -> np.ndarray:
        if n not in self._cache:
            self._cache[n] = icode.extract_linear_matrix(
                self.program, self.entry, self.outputs, self.inputs, n, self.concrete(n)
            )
        return self._cache[n]

    def fragment(self, stmts, inputs: Sequence[str], outputs: Sequence[str], n: int) -> np.ndarray:
        return icode.fragment_matrix(self.program, self.entry, stmts, inputs, outputs, self.concrete(n), n)


def base_case_matrix(program: IcodeProgram, entry: str, n0: int) -> np.ndarray:
    return KernelOracle(program, entry).matrix(n0)


# ---------------------------------------------------------------------------
# Permutation recognizers
# ---------------------------------------------------------------------------


def _is_permutation(mat: np.ndarray) -> bool:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        return False
    if not np.all((mat == 0) | (mat == 1)):
        return False
    return bool(np.all(mat.sum(axis=0) == 1) and np.all(mat.sum(axis=1) == 1))


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def _stride_for(mats: Mapping[int, np.ndarray], extent: IndexExpr, size_param: str, divide: int) -> SPLExpr | None:
    """Symbolic ``L(N, s)`` reproducing every matrix exactly, or None."""
    size = size_of_extent(extent, size_param, divide)
    fits: dict[int, set[int]] = {}
    for n, mat in mats.items():
        dim = mat.shape[0]
        fits[n] = {s for s in _divisors(dim) if np.array_equal(spl.stride_permutation(dim, s), mat)}
        if not fits[n]:
            return None
    dims = {n: mat.shape[0] for n, mat in mats.items()}
    literal = set.intersection(*fits.values())
    proper = sorted(s for s in literal if all(1 < s < dims[n] for n in dims))
    if proper:
        return spl.L(size, Size(Fraction(proper[0])))
    # stride proportional to the size: s = N/c with a literal c
    ratios = set.intersection(*({dims[n] // s for s in fits[n]} for n in fits))
    proper = sorted(c for c in ratios if all(1 < c < dims[n] for n in dims))
    if proper:
        return spl.L(size, size / Size(Fraction(proper[0])))
    if literal:
        return spl.L(size, Size(Fraction(min(literal))))
    return None


def _term_mats(term, shape_of: Callable[[int], tuple[int, int]], size_param: str, sizes) -> dict[int, np.ndarray]:
    return {n: sigma_spl.eval_sigma(term, n, size_param, shape=shape_of(n)) for n in sizes}


def recognize_identity(lift: SigmaLift, probe_sizes=sigma_spl.PROBE_SIZES) -> SPLExpr | None:
    if lift.out_extent != lift.in_extent:
        return None
    env = lambda n: {lift.size_param: n}  # noqa: E731
    for n in probe_sizes:
        e = lift.out_extent.evaluate(env(n))
        mat = sigma_spl.eval_sigma(lift.term, n, lift.size_param, shape=(e, e))
        if not np.array_equal(mat, np.eye(e)):
            return None
    return spl.I(size_of_extent(lift.out_extent, lift.size_param))


def recognize_real_stride(lift: SigmaLift, probe_sizes=sigma_spl.PROBE_SIZES) -> SPLExpr | None:
    if lift.out_extent != lift.in_extent:
        return None
    shape = lambda n: (lift.out_extent.evaluate({lift.size_param: n}),) * 2  # noqa: E731
    mats = _term_mats(lift.term, shape, lift.size_param, probe_sizes)
    if not all(_is_permutation(m) for m in mats.values()):
        return None
    return _stride_for(mats, lift.out_extent, lift.size_param, 1)


@dataclass(frozen=True)
class ComplexPairing:
    """Interleaved-complex view of a real move term."""

    term: sigma_spl.SigmaSPLTerm  # complex-index term of half extent
    pairs: tuple[tuple[BasisOuterProduct, BasisOuterProduct], ...]
    out_extent: IndexExpr
    in_extent: IndexExpr


def _pair_term(term, pairs: list) -> sigma_spl.SigmaSPLTerm | None:
    if isinstance(term, ISum):
        body = _pair_term(term.body, pairs)
        return None if body is None else ISum(term.var, term.trip, body)
    ops = [t for t in (term.terms if isinstance(term, Sum) else (term,))]
    if not all(isinstance(t, Atom) for t in ops):
        if isinstance(term, Sum):
            parts = [_pair_term(t, pairs) for t in term.terms]
            return None if any(p is None for p in parts) else Sum(tuple(parts))
        return None
    atoms_ = [t.op for t in ops]
    used: set[int] = set()
    out = []
    for a_idx, a in enumerate(atoms_):
        if a_idx in used:
            continue
        partner = None
        for b_idx, b in enumerate(atoms_):
            if b_idx in used or b_idx == a_idx:
                continue
            if b.scatter - a.scatter == IndexExpr.lit(1) and b.gather - a.gather == IndexExpr.lit(1):
                partner = b_idx
                break
        if partner is None:
            return None
        used |= {a_idx, partner}
        pairs.append((a, atoms_[partner]))
        out.append(
            Atom(
                BasisOuterProduct(
                    sigma_spl.halve(a.scatter),
                    sigma_spl.halve(a.gather),
                    sigma_spl.halve(a.out_extent),
                    sigma_spl.halve(a.in_extent),
                )
            )
        )
    return out[0] if len(out) == 1 and not isinstance(term, Sum) else Sum(tuple(out))


def detect_interleaved_complex(lift: SigmaLift, probe_sizes=sigma_spl.PROBE_SIZES) -> ComplexPairing | None:
    """Pair atoms ``(s, g)`` with ``(s+1, g+1)`` at even ``s``, ``g``.

    Succeeds only if the real term is exactly the interleaved form of the
    halved term at every probe size.
    """
    env = lambda n: {lift.size_param: n}  # noqa: E731
    for n in probe_sizes:
        if lift.out_extent.evaluate(env(n)) % 2 or lift.in_extent.evaluate(env(n)) % 2:
            return None
    pairs: list = []
    half = _pair_term(lift.term, pairs)
    if half is None:
        return None
    out_half, in_half = sigma_spl.halve(lift.out_extent), sigma_spl.halve(lift.in_extent)
    for n in probe_sizes:
        shape = (lift.out_extent.evaluate(env(n)), lift.in_extent.evaluate(env(n)))
        try:
            real = sigma_spl.eval_sigma(lift.term, n, lift.size_param, shape=shape)
            cplx = sigma_spl.eval_sigma(half, n, lift.size_param, shape=(shape[0] // 2, shape[1] // 2))
        except (icode.IcodeError, ValueError):
            return None
        if not np.array_equal(np.kron(cplx, np.eye(2)), real):
            return None
    return ComplexPairing(half, tuple(pairs), out_half, in_half)


def recognize_interleaved_stride(lift: SigmaLift, probe_sizes=sigma_spl.PROBE_SIZES) -> SPLExpr | None:
    if lift.out_extent != lift.in_extent:
        return None
    pairing = detect_interleaved_complex(lift, probe_sizes)
    if pairing is None:
        return None
    shape = lambda n: (pairing.out_extent.evaluate({lift.size_param: n}),) * 2  # noqa: E731
    mats = _term_mats(pairing.term, shape, lift.size_param, probe_sizes)
    if not all(_is_permutation(m) for m in mats.values()):
        return None
    inner = _stride_for(mats, lift.out_extent, lift.size_param, 2)
    return None if inner is None else RC(inner)


def recognize_stride_permutation(lift: SigmaLift, probe_sizes=sigma_spl.PROBE_SIZES) -> SPLExpr | None:
    """``L`` over the real index space, else ``RC(L)`` over interleaved pairs."""
    return recognize_real_stride(lift, probe_sizes) or recognize_interleaved_stride(lift, probe_sizes)


# ---------------------------------------------------------------------------
# Arithmetic idioms
# ---------------------------------------------------------------------------


def _scalar_value(expr, ints: Mapping[str, int], defs: Mapping[str, object]):
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Var):
        return ints[expr.name]
    if isinstance(expr, Temp):
        return _scalar_value(defs[expr.name], ints, defs)
    if isinstance(expr, Neg):
        return -_scalar_value(expr.operand, ints, defs)
    if isinstance(expr, Bin):
        a, b = _scalar_value(expr.left, ints, defs), _scalar_value(expr.right, ints, defs)
        return {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b, "/": lambda: icode.c_div(a, b)}[expr.op]()
    if isinstance(expr, Intrinsic):
        return icode.INTRINSICS[expr.name](_scalar_value(expr.arg, ints, defs))
    raise LiftError(f"{expr!r} has no value without array data")


@dataclass(frozen=True)
class Twiddle:
    coefficient: int  # c in theta = c*pi*i/n
    cos_temp: str
    sin_temp: str


def _resolve(expr, defs):
    while isinstance(expr, Temp) and expr.name in defs:
        expr = defs[expr.name]
    return expr


def find_twiddle(loop: Loop, size_param: str) -> tuple[Twiddle | None, str]:
    """Locate ``wr = cos(theta)``, ``wi = sin(theta)`` with ``theta = c*pi*i/n``."""
    defs = {s.name: s.value for s in loop.body if isinstance(s, Def)}
    trig = {name: v for name, v in defs.items() if isinstance(v, Intrinsic)}
    if not trig:
        return None, "no trigonometric temporaries"
    cos_names = [k for k, v in trig.items() if v.name == "cos"]
    sin_names = [k for k, v in trig.items() if v.name == "sin"]
    if len(cos_names) != 1 or len(sin_names) != 1:
        return None, "expected one cos(theta) and one sin(theta) temporary"
    wr, wi = cos_names[0], sin_names[0]
    theta = _resolve(trig[wr].arg, defs)
    if theta != _resolve(trig[wi].arg, defs):
        return None, "cos and sin take different angles"
    try:
        samples = [
            (i, n, float(_scalar_value(theta, {loop.var: i, size_param: n}, defs)))
            for n in (8, 16)
            for i in range(n // 2)
        ]
    except (LiftError, KeyError, ZeroDivisionError, icode.IcodeError) as exc:
        return None, f"angle is not a function of {loop.var} and {size_param}: {exc}"
    _, n1, v1 = samples[1]
    c = v1 * n1 / math.pi
    if abs(c - round(c)) > 1e-9 or round(c) % 2:
        return None, f"angle coefficient {c:.6g} is not an even integer multiple of pi*{loop.var}/{size_param}"
    c = int(round(c))
    for i, n, v in samples:
        if abs(v - c * math.pi * i / n) > 1e-12:
            return None, f"angle is not {c}*pi*{loop.var}/{size_param}"
    return Twiddle(c, wr, wi), ""


def recognize_twiddle_butterfly(
    loop: Loop,
    extents: Mapping[str, IndexExpr],
    order: Sequence[str],
    size_param: str = "n",
) -> tuple[SPLExpr | None, str]:
    """Propose ``RC((F(2) x I(k)) * Diag(2k, k))`` for a twiddle-and-butterfly loop.

    The proposal only reflects the loop's shape: a twiddle angle of the form
    ``c*pi*i/n`` (or none), and four stores per iteration at real offsets
    ``0, 1, h, h+1`` of one output array where ``h`` is half its extent. The
    caller must still check it against the loop's oracle.
    """
    if not isinstance(loop, Loop) or any(isinstance(s, Loop) for s in loop.body):
        return None, "not a single loop"
    stores = [s for s in loop.body if isinstance(s, Assign)]
    if len(stores) != 4 or len({s.array for s in stores}) != 1:
        return None, "expected four stores into one array"
    out = stores[0].array
    h = sigma_spl.halve(extents[out])
    base = min((s.index for s in stores), key=lambda e: e.const)
    offsets = {s.index - base for s in stores}
    if offsets != {IndexExpr.lit(0), IndexExpr.lit(1), h, h + 1}:
        return None, "stores are not a butterfly at offsets 0, 1, h, h+1"
    twiddle, reason = find_twiddle(loop, size_param)
    if twiddle is None and any(isinstance(s, Def) and isinstance(s.value, Intrinsic) for s in loop.body):
        return None, f"twiddle idiom: {reason}"
    n_c = size_of_extent(extents[out], size_param, 2)
    k = n_c / Size(Fraction(2))
    expected_trip = IndexExpr.var(size_param, k.coeff) if k.var else IndexExpr.lit(k.coeff)
    if loop.trip != expected_trip:
        return None, f"trip count {loop.trip} is not half the complex length {n_c}"
    butterfly = spl.Tensor(DFT(Size(Fraction(2))), spl.I(k))
    if twiddle is None or twiddle.coefficient == 0:
        return RC(butterfly), "no twiddle"
    return RC(spl.compose(butterfly, spl.T(n_c, k))), f"theta = {twiddle.coefficient}*pi*{loop.var}/{size_param}"


def _linear_terms(expr, coeff: float, out: dict) -> bool:
    """Accumulate ``{Read: coefficient}`` for a literal-weighted sum of reads."""
    if isinstance(expr, Read):
        out[expr] = out.get(expr, 0.0) + coeff
        return True
    if isinstance(expr, Neg):
        return _linear_terms(expr.operand, -coeff, out)
    if isinstance(expr, Bin) and expr.op in "+-":
        sign = 1.0 if expr.op == "+" else -1.0
        return _linear_terms(expr.left, coeff, out) and _linear_terms(expr.right, sign * coeff, out)
    if isinstance(expr, Bin) and expr.op == "*":
        if isinstance(expr.left, Lit):
            return _linear_terms(expr.right, coeff * float(expr.left.value), out)
        if isinstance(expr.right, Lit):
            return _linear_terms(expr.left, coeff * float(expr.right.value), out)
    if isinstance(expr, Bin) and expr.op == "/" and isinstance(expr.right, Lit) and isinstance(expr.right.value, float):
        return _linear_terms(expr.left, coeff / expr.right.value, out)
    return False


def weighted_sigma(loop: Loop, extents, order, size_param: str) -> SigmaLift | None:
    """Sigma-SPL with weighted atoms for a loop of literal-weighted sums of reads."""
    if any(isinstance(s, (Def, Loop)) for s in loop.body):
        return None
    reads, writes = sigma_spl.fragment_arrays([loop], order)
    shell = SigmaLift(Sum(()), tuple((a, extents[a]) for a in writes), tuple((a, extents[a]) for a in reads), size_param)
    out_off, in_off = shell.offsets("out"), shell.offsets("in")
    j = IndexExpr.var("j")
    atoms_ = []
    for stmt in loop.body:
        terms: dict = {}
        if not _linear_terms(stmt.value, 1.0, terms):
            return None
        scatter = out_off[stmt.array] + stmt.index.substitute({loop.var: j})
        for read, w in terms.items():
            gather = in_off[read.array] + read.index.substitute({loop.var: j})
            atoms_.append(Atom(BasisOuterProduct(scatter, gather, shell.out_extent, shell.in_extent, w)))
    body = atoms_[0] if len(atoms_) == 1 else Sum(tuple(atoms_))
    return SigmaLift(ISum("j", loop.trip, body), shell.outputs, shell.inputs, size_param)


def recognize_multilinear(lift: SigmaLift, probe_sizes) -> SPLExpr | None:
    """``Augment`` of scaled identities, one block per input array."""
    if len(lift.outputs) != 1:
        return None
    out_ext = lift.outputs[0][1]
    if any(e != out_ext for _, e in lift.inputs):
        return None
    weights: list[float] | None = None
    for n in probe_sizes:
        env = {lift.size_param: n}
        e = out_ext.evaluate(env)
        mat = sigma_spl.eval_sigma(lift.term, n, lift.size_param, shape=(e, e * len(lift.inputs)))
        ws = []
        for b in range(len(lift.inputs)):
            block = mat[:, b * e : (b + 1) * e]
            w = float(block[0, 0])
            if not np.array_equal(block, w * np.eye(e)):
                return None
            ws.append(w)
        if weights is not None and ws != weights:
            return None
        weights = ws
    size = size_of_extent(out_ext, lift.size_param)
    # the accumulator's unit block is a bare identity; other inputs keep their
    # scale even at 1 so the coefficient stays visible
    acc = lift.outputs[0][0]
    blocks = [
        spl.I(size) if w == 1.0 and name == acc else spl.Scale(w, spl.I(size))
        for (name, _), w in zip(lift.inputs, weights or [])
    ]
    if not blocks:
        return None
    expr = blocks[0]
    for b in blocks[1:]:
        expr = spl.Augment(expr, b)
    return expr


# ---------------------------------------------------------------------------
# Rendering icode fragments
# ---------------------------------------------------------------------------


def render_scalar(expr, order=()) -> str:
    if isinstance(expr, Read):
        return f"{expr.array}[{expr.index.render(order)}]"
    if isinstance(expr, (Temp, Var)):
        return expr.name
    if isinstance(expr, Lit):
        return repr(expr.value)
    if isinstance(expr, Neg):
        return f"-{render_scalar(expr.operand, order)}"
    if isinstance(expr, Intrinsic):
        return f"{expr.name}({render_scalar(expr.arg, order)})"
    return f"({render_scalar(expr.left, order)} {expr.op} {render_scalar(expr.right, order)})"


def render_fragment(stmts, order=()) -> str:
    parts = []
    for s in stmts:
        if isinstance(s, Loop):
            parts.append(f"for {s.var} < {s.trip.render(order)}: {{ {render_fragment(s.body, order)} }}")
        elif isinstance(s, Assign):
            parts.append(f"{s.array}[{s.index.render(order)}] = {render_scalar(s.value, order)}")
        elif isinstance(s, Def):
            parts.append(f"{s.name} = {render_scalar(s.value, order)}")
        elif isinstance(s, Call):
            parts.append(f"{s.callee}({', '.join(s.arrays)}, {s.size.render(order)})")
    return "; ".join(parts)


# ---------------------------------------------------------------------------
# Fragments
# ---------------------------------------------------------------------------


@dataclass
class Fragment:
    kind: str  # loop | straight | calls
    stmts: tuple
    label: str
    reads: list[str]
    writes: list[str]


def split_fragments(fn: icode.IcodeFunction) -> list[Fragment]:
    out: list[Fragment] = []
    pending: list = []
    pending_kind = None

    def flush():
        nonlocal pending, pending_kind
        if pending:
            out.append(_make_fragment(pending_kind, tuple(pending), fn))
        pending, pending_kind = [], None

    for stmt in fn.body:
        if isinstance(stmt, (icode.Guard, icode.Alloc, icode.Free)):
            continue
        if isinstance(stmt, Loop):
            flush()
            out.append(_make_fragment("loop", (stmt,), fn))
            continue
        kind = "calls" if isinstance(stmt, Call) else "straight"
        if kind != pending_kind:
            flush()
        pending_kind = kind
        pending.append(stmt)
    flush()
    return out


def _make_fragment(kind: str, stmts: tuple, fn: icode.IcodeFunction) -> Fragment:
    if kind == "calls":
        arrays = [a for c in stmts for a in c.arrays]
        rank = {a: i for i, a in enumerate(fn.arrays)}
        arrays = sorted(dict.fromkeys(arrays), key=lambda a: rank.get(a, len(rank)))
        label = "calls " + ", ".join(f"{c.callee}({', '.join(c.arrays)})" for c in stmts)
        return Fragment(kind, stmts, label, arrays, arrays)
    reads, writes = sigma_spl.fragment_arrays(stmts, fn.arrays)
    if kind == "loop":
        label = f"loop at line {stmts[0].line}" if stmts[0].line else f"loop over {stmts[0].var}"
    else:
        label = "straight-line stores"
    return Fragment(kind, stmts, label, reads, writes)


# ---------------------------------------------------------------------------
# The driver
# ---------------------------------------------------------------------------


RECOGNIZERS = ("identity", "stride-permutation", "interleaved-complex", "twiddle-butterfly", "multilinear")


class _Lifter:
    def __init__(self, program: IcodeProgram, entry: str, config: LiftConfig, trace: LiftTrace):
        self.program = program
        self.entry = entry
        self.config = config
        self.trace = trace
        self.fn = program.function(entry)
        self.sp = self.fn.size_param
        self.oracle = KernelOracle(program, entry)
        self.extents = self.oracle.extents
        self.order = self.fn.arrays
        self.n0 = sigma_spl.smallest_size(self.fn)
        self.probes = tuple(s for s in config.probe_sizes if s >= self.n0)
        self.tol = config.tolerance

    # -- fragment level -------------------------------------------------
    def fragment_oracle(self, frag: Fragment, n: int) -> np.ndarray:
        return self.oracle.fragment(frag.stmts, frag.reads, frag.writes, n)

    def check(self, frag: Fragment, cand: SPLExpr, tol: float) -> list[tuple[int, float]]:
        out = []
        for n in self.probes:
            mat = self.fragment_oracle(frag, n)
            try:
                _, dev = equivalence_match(mat, cand, n, tol, self.sp)
            except spl.SPLError:
                dev = math.inf
            out.append((n, dev))
        return out

    def commit(self, frag, rule, text, cand, tol, note="") -> LiftStep | None:
        checks = self.check(frag, cand, tol)
        if all(d <= tol for _, d in checks):
            self.trace.trials.append(Trial(frag.label, rule, "committed"))
            step = LiftStep(rule, frag.label, text, cand, checks, tol, note)
            self.trace.steps.append(step)
            return step
        worst = max(d for _, d in checks)
        self.trace.trials.append(
            Trial(frag.label, rule, "rejected", f"candidate {spl.to_text(cand)} deviates by {worst:.3g}")
        )
        self._rejections.append((rule, cand, checks))
        return None

    def lift_fragment(self, frag: Fragment) -> SPLExpr | None:
        self._rejections: list = []
        if frag.kind == "calls":
            return self.lift_calls(frag)
        move = None
        try:
            move = sigma_spl.lift_loop(list(frag.stmts), self.extents, self.order, self.sp, self.probes)
        except sigma_spl.NotAMove:
            move_reason = "fragment computes values, not a pure move"
        except (sigma_spl.OverlapError, sigma_spl.RangeError, icode.IcodeError) as exc:
            move_reason = str(exc)
        sigma_text = ""
        if move is not None:
            grouped = sigma_spl.regroup(move)
            sigma_text = grouped.render() if grouped else sigma_spl.render_sigma(move.term)
            note = ""
            if grouped and len(grouped.block_names) > 1:
                note = "scatter blocks: " + ", ".join(
                    f"{b} for {grouped.inner_var} in [{k * grouped.per_block}, {(k + 1) * grouped.per_block})"
                    for k, b in enumerate(grouped.block_names)
                )
            self.trace.sigma[frag.label] = sigma_text
        frag_text = render_fragment(frag.stmts)
        for rule in RECOGNIZERS:
            cand, reason, text, tol, note_r = None, "", sigma_text or frag_text, PERMUTATION_TOL, ""
            if rule in ("identity", "stride-permutation", "interleaved-complex"):
                if move is None:
                    self.trace.trials.append(Trial(frag.label, rule, "no-match", move_reason))
                    continue
                fn = {
                    "identity": recognize_identity,
                    "stride-permutation": recognize_real_stride,
                    "interleaved-complex": recognize_interleaved_stride,
                }[rule]
                cand = fn(move, self.probes)
                reason = "" if cand else "no exact match at the probe sizes"
                note_r = note
            elif rule == "twiddle-butterfly":
                if frag.kind != "loop":
                    self.trace.trials.append(Trial(frag.label, rule, "no-match", "not a loop"))
                    continue
                cand, reason = recognize_twiddle_butterfly(frag.stmts[0], self.extents, self.order, self.sp)
                text, tol = frag_text, self.tol
                if cand is not None:
                    note_r, reason = reason, ""
            else:
                w = weighted_sigma(frag.stmts[0], self.extents, self.order, self.sp) if frag.kind == "loop" else None
                if w is None:
                    self.trace.trials.append(Trial(frag.label, rule, "no-match", "not a weighted sum of reads"))
                    continue
                self.trace.sigma[frag.label] = sigma_spl.render_sigma(w.term)
                cand = recognize_multilinear(w, self.probes)
                text, tol = sigma_spl.render_sigma(w.term), self.tol
                reason = "" if cand else "blocks are not scaled identities"
            if cand is None:
                self.trace.trials.append(Trial(frag.label, rule, "no-match", reason))
                continue
            if self.commit(frag, rule, text, cand, tol, note_r):
                return cand
        detail = "; ".join(f"{t.recognizer}: {t.reason}" for t in self.trace.trials if t.fragment == frag.label)
        devs = []
        if self._rejections:
            devs = max(self._rejections, key=lambda r: max(d for _, d in r[2]))[2]
        self.trace.fail("lift", f"{frag.label} is unliftable ({detail})", devs)
        return None

    def lift_calls(self, frag: Fragment) -> SPLExpr | None:
        calls = frag.stmts

        def fail(why: str) -> None:
            self.trace.fail("lift", f"{frag.label}: {why}")
        if any(c.callee != self.entry for c in calls):
            return fail("only self-recursive calls are supported")
        if any(len(c.arrays) != 1 for c in calls):
            return fail("recursive calls must each take one array")
        arrays = [c.arrays[0] for c in calls]
        if len(set(arrays)) != len(arrays):
            return fail("recursive calls on overlapping subranges")
        if len({c.size for c in calls}) != 1:
            return fail("recursive calls on unequal sizes")
        sub = calls[0].size
        param = self.fn.params[0] if len(self.fn.params) == 1 else None
        if param is None:
            return fail("recursive kernels must take exactly one array")
        per_call = self.extents[param].substitute({self.sp: sub})
        if any(self.extents[a] != per_call for a in arrays):
            return fail("call arrays do not match the callee's extent at the call size")
        r = len(calls)
        s = size_of_extent(sub, self.sp)
        width_frac = self.extents[param].coeff(self.sp)
        if width_frac.denominator != 1 or self.extents[param].const:
            return fail(f"parameter extent {self.extents[param]} is not a whole multiple of {self.sp}")
        width = int(width_frac)
        expr = spl.Tensor(spl.I(Size(Fraction(r))), Hole("M", s, width))
        checks = []
        for n in self.probes:
            m = self.fragment_oracle(frag, n)
            sub_n = sub.evaluate({self.sp: n})
            if sub_n >= 2:
                sub_mat = self.oracle.matrix(sub_n)
            else:
                sub_mat = np.eye(self.extents[param].evaluate({self.sp: sub_n}))
            checks.append((n, max_dev(m, np.kron(np.eye(r), sub_mat))))
        step = LiftStep("recursive-call", frag.label, render_fragment(calls), expr, checks, self.tol,
                        f"{r} calls on disjoint blocks of {', '.join(arrays)}")
        if any(d > self.tol for _, d in checks):
            return fail("call group does not act as independent copies of the kernel")
        self.trace.trials.append(Trial(frag.label, "recursive-call", "committed"))
        self.trace.steps.append(step)
        return expr

    # -- whole function -------------------------------------------------
    def run(self) -> LiftTrace:
        trace = self.trace
        if not self.probes:
            return trace.fail("lift", f"no probe size reaches the base size {self.n0}")
        frags = split_fragments(self.fn)
        if not frags:
            return trace.fail("lift", "function body has no statements to lift")
        inputs, outputs = self.oracle.inputs, self.oracle.outputs
        if not outputs:
            return trace.fail("lift", "function writes none of its parameters")
        chain = [inputs] + [f.reads for f in frags[1:]]
        for frag, expect in zip(frags, chain):
            if set(frag.reads) != set(expect) and not (frag is frags[0] and not frag.reads):
                return trace.fail("lift", f"dataflow is not a chain: {frag.label} reads {frag.reads}, expected {expect}")
        if set(frags[-1].writes) != set(outputs):
            return trace.fail("lift", f"last fragment writes {frags[-1].writes}, expected {outputs}")
        self.linearity()
        if trace.failures:
            return trace
        factors = []
        for frag in frags:
            expr = self.lift_fragment(frag)
            if expr is None:
                return trace
            factors.append(expr)
        rhs = spl.compose(*reversed(factors))
        holes = _holes(rhs)
        if not holes:
            self.close_direct(rhs)
        else:
            self.close_recursive(rhs, holes)
        if trace.closed is not None and not trace.failures:
            self.specify()
        return trace

    def linearity(self) -> None:
        rng = np.random.default_rng(0)
        n = self.probes[0]
        try:
            dev = icode.check_linearity(
                self.program, self.entry, self.oracle.outputs, self.oracle.inputs, n, rng, self.oracle.concrete(n)
            )
        except icode.IcodeError as exc:
            self.trace.fail("linearity", str(exc))
            return
        if dev > 1e-9:
            self.trace.fail("linearity", f"kernel is not linear in its inputs (deviation {dev:.3g} at n={n})", [(n, dev)])

    def close_direct(self, expr: SPLExpr) -> None:
        evidence, checks = [], []
        for n in self.probes:
            mat = self.oracle.matrix(n)
            ok, dev = equivalence_match(mat, expr, n, self.tol, self.sp)
            checks.append((n, dev))
            evidence.append({"check": "composition", "size": n, "deviation": dev})
        if any(d > self.tol for _, d in checks):
            self.trace.fail("composition", "composed factors disagree with the kernel", checks)
            return
        self.trace.closed = ClosedSPL(expr, ASSURANCE, list(self.probes), evidence)

    def close_recursive(self, rhs: SPLExpr, holes: list[Hole]) -> None:
        trace = self.trace
        width = holes[0].width
        arity = sum(1 for _ in holes)
        r = arity
        for f in (rhs.factors if isinstance(rhs, spl.Compose) else (rhs,)):
            if isinstance(f, spl.Tensor) and isinstance(f.right, Hole):
                r = f.left.size.value({})
        eq = RecursiveEquation("M", Size(Fraction(1), self.sp), rhs, r, width)
        trace.equation = eq
        # the equation itself, with the kernel's own smaller matrices in the hole
        checks = []
        for n in self.probes:
            if n <= self.n0:
                continue
            env = {self.sp: n}
            filled = eval_with_holes(rhs, env, lambda h: self.oracle.matrix(h.size.value(env)))
            checks.append((n, max_dev(self.oracle.matrix(n), _real(filled))))
        trace.steps.append(LiftStep("recursive-equation", self.entry, "composed fragments", rhs, checks, self.tol,
                                    eq.render()))
        if any(d > self.tol for _, d in checks):
            trace.fail("equation", "recursive equation disagrees with the kernel", checks)
            return
        base = self.oracle.matrix(self.n0)
        head = None
        tried = []
        for cand in base_candidates(width, self.sp):
            try:
                ok, dev = equivalence_match(base, cand, self.n0, self.tol, self.sp)
            except spl.SPLError:
                continue
            tried.append((spl.to_text(spl.instantiate(cand, {self.sp: Size(Fraction(self.n0))})), dev))
            if ok:
                head = cand
                break
        trace.base_case = {
            "size": self.n0,
            "candidates": [{"candidate": c, "deviation": d} for c, d in tried],
            "matched": None if head is None else tried[-1][0],
        }
        if head is None:
            trace.fail(
                "base-case",
                f"base case at {self.sp}={self.n0} matches no known head ("
                + ", ".join(f"{c}: {d:.3g}" for c, d in tried) + ")",
                [(self.n0, min((d for _, d in tried), default=math.inf))],
            )
            return
        sizes = [s for s in self.probes if s > self.n0]
        if len(sizes) < 2:
            trace.fail("induction", "at least two check sizes above the base case are required")
            return
        result = close_by_induction(eq, head, sizes, self.oracle.matrix, self.tol, self.n0, self.sp)
        if isinstance(result, Failure):
            trace.failures.append(result)
            return
        trace.closed = result

    def specify(self) -> None:
        kb = kbase.builtin()
        result = kb.match_specification(self.trace.closed, self.n0)
        if result is None:
            self.trace.fail("knowledge-base", f"no template matches {kbase.operator_name(self.trace.closed.expr)}")
            return
        self.trace.specification = result


def base_candidates(width: int, size_param: str) -> list[SPLExpr]:
    n = Size(Fraction(1), size_param)
    if width == 2:
        return [RC(DFT(n)), RC(spl.I(n))]
    return [spl.I(n)]


def close_by_induction(
    eq: RecursiveEquation,
    head: SPLExpr,
    check_sizes: Sequence[int],
    oracle: Callable[[int], np.ndarray],
    tol: float = 1e-10,
    base_size: int = 2,
    size_param: str = "n",
) -> ClosedSPL | Failure:
    """Fill the holes with ``head`` and check the result against the kernel.

    ``head`` is written in terms of ``size_param`` (``RC(F(n))``) and is
    instantiated at each hole's size.
    """
    sizes = [s for s in check_sizes if s > base_size]
    if len(sizes) < 2:
        raise ValueError("induction needs at least two check sizes above the base case")
    filled = spl.substitute_holes(eq.rhs, lambda h: spl.instantiate(head, {size_param: h.size}))
    closed = spl.hoist_rc(filled)
    evidence = []
    base_mat = oracle(base_size)
    _, base_dev = equivalence_match(base_mat, head, base_size, tol, size_param)
    evidence.append({"check": "base", "size": base_size, "deviation": base_dev})
    for s in sizes:
        ok, dev = equivalence_match(oracle(s), closed, s, tol, size_param)
        evidence.append({"check": "induction", "size": s, "deviation": dev})
        if not ok:
            devs = [(e["size"], e["deviation"]) for e in evidence]
            return Failure("induction", f"substituted equation deviates by {dev:.3g} at {size_param}={s}", devs)
    return ClosedSPL(closed, ASSURANCE, [base_size] + sizes, evidence)


def run_lift(program: IcodeProgram, entry: str | None = None, config: LiftConfig | None = None) -> LiftTrace:
    """Lift ``entry``; every failure lands in the returned trace."""
    config = config or LiftConfig()
    entry = entry or config.entry or program.entry
    trace = LiftTrace(entry=entry)
    try:
        program.function(entry)
    except icode.IcodeError as exc:
        return trace.fail("validate", str(exc))
    unrolled = icode.unroll_constant_loops(program, config.unroll_limit)
    try:
        lifter = _Lifter(unrolled, entry, config, trace)
    except (sigma_spl.RangeError, icode.IcodeError) as exc:
        return trace.fail("range", str(exc))
    try:
        return lifter.run()
    except (icode.IcodeError, spl.SPLError, LiftError) as exc:
        return trace.fail("lift", f"{type(exc).__name__}: {exc}")


def lift_source(text: str, source_name: str = "<string>", config: LiftConfig | None = None) -> LiftTrace:
    """Parse, validate, lower and lift KernelC source."""
    from . import frontend

    config = config or LiftConfig()
    trace = LiftTrace(entry=config.entry or "")
    try:
        unit = frontend.parse_kernel_source(text, source_name)
    except frontend.KernelError as exc:
        return trace.fail("frontend", str(exc))
    diags = frontend.validate_kernel(unit)
    trace.diagnostics = [str(d) for d in diags]
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        return trace.fail("validate", "; ".join(str(d) for d in errors))
    entry = config.entry or unit.default_entry()
    trace.entry = entry
    try:
        program = frontend.lower_to_icode(unit, entry)
    except frontend.KernelError as exc:
        return trace.fail("validate", str(exc))
    result = run_lift(program, entry, config)
    result.diagnostics = trace.diagnostics
    result.program = program
    return result


def lift_function(program: IcodeProgram, entry: str | None = None, config: LiftConfig | None = None):
    """The recursive equation of a recursive kernel, or the closed form otherwise."""
    trace = run_lift(program, entry, config)
    lift_failures = [f for f in trace.failures if f.stage in ("lift", "range", "validate", "linearity")]
    if lift_failures:
        raise LiftError("; ".join(f.reason for f in lift_failures))
    if trace.equation is not None:
        return trace.equation
    if trace.closed is None:
        raise LiftError("; ".join(f.reason for f in trace.failures) or "no closed form")
    return trace.closed


def lift_multilinear(program: IcodeProgram, entry: str | None = None, config: LiftConfig | None = None) -> ClosedSPL:
    trace = run_lift(program, entry, config)
    if not trace.ok or not any(s.rule == "multilinear" for s in trace.steps):
        raise LiftError("unrecognized multilinear pattern: " + "; ".join(f.reason for f in trace.failures))
    return trace.closed
