"""Sigma-SPL: iterative sums of scatter/gather basis outer products.

A data-movement loop ``dst[f(j)] = src[g(j)]`` is the matrix
``sum_j e_{f(j)} e_{g(j)}^T`` over the concatenated destination and source
spaces. This module infers array extents, lifts move loops into that form,
evaluates terms densely and renders them as text.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

from . import icode
from .icode import Assign, IcodeProgram, IndexExpr, Loop, Read

ExtentMap = dict  # array name -> IndexExpr extent in real slots

PROBE_SIZES = (4, 8, 16)
_LOOP_NAMES = ("j", "k", "l", "p", "q", "r", "s", "t")


class RangeError(icode.IcodeError):
    """An access escapes its array, or an extent is not affine."""


class NotAMove(icode.IcodeError):
    """The loop contains arithmetic, not just array-to-array copies."""


class OverlapError(icode.IcodeError):
    """Two iterations write the same destination slot."""


# ---------------------------------------------------------------------------
# Range analysis
# ---------------------------------------------------------------------------


def smallest_size(fn: icode.IcodeFunction) -> int:
    """Smallest power-of-two size at which the body runs past the guard.

    Every ``n/d`` in the body must also divide exactly, so a kernel that uses
    ``n/4`` starts at 4 even without a guard.
    """
    guard = fn.guard
    denom = 1
    for expr in icode.iter_index_exprs(fn.body):
        denom = max(denom, expr.coeff(fn.size_param).denominator)
    n = 2
    while (guard is not None and n <= guard) or n % denom:
        n *= 2
    return n


def _bound(expr: IndexExpr, ranges: Sequence[tuple[str, IndexExpr]], maximize: bool) -> IndexExpr:
    # innermost loop first, so triangular bounds resolve correctly
    for var, trip in reversed(ranges):
        c = expr.coeff(var)
        if c == 0:
            continue
        take_high = (c > 0) == maximize
        expr = expr.substitute({var: trip - 1 if take_high else IndexExpr.lit(0)})
    return IndexExpr(expr.terms, expr.const)


def _nonneg_for_all(expr: IndexExpr, size_param: str, n_min: int) -> bool:
    extra = expr.free_vars - {size_param}
    if extra:
        raise RangeError(f"extent {expr.render()} depends on {sorted(extra)}")
    return expr.coeff(size_param) >= 0 and expr.evaluate({size_param: n_min}) >= 0


def _dominant(a: IndexExpr, b: IndexExpr, size_param: str, n_min: int) -> IndexExpr:
    if _nonneg_for_all(a - b, size_param, n_min):
        return a
    if _nonneg_for_all(b - a, size_param, n_min):
        return b
    raise RangeError(f"extent max({a.render()}, {b.render()}) is not expressible affinely")


def _accesses(stmts, ranges):
    for stmt in stmts:
        if isinstance(stmt, Loop):
            yield from _accesses(stmt.body, ranges + [(stmt.var, stmt.trip)])
        elif isinstance(stmt, (Assign, icode.Def)):
            if isinstance(stmt, Assign):
                yield stmt.array, stmt.index, ranges
            for read in icode.scalar_reads(stmt.value):
                yield read.array, read.index, ranges
        elif isinstance(stmt, icode.Call):
            yield stmt, None, ranges


def range_analysis(program: IcodeProgram, entry: str | None = None) -> ExtentMap:
    """Infer the extent (in real slots) of every parameter and local array.

    Extents are the smallest affine bound covering every access over the
    loop box for all sizes past the guard; allocations are cross-checked.
    """
    fn = program.function(entry)
    n, n_min = fn.size_param, smallest_size(fn)
    allocs = {s.name: s.extent for s in icode.walk(fn.body) if isinstance(s, icode.Alloc)}
    needed: dict[str, IndexExpr] = {}
    calls = []
    for array, index, ranges in _accesses(fn.body, []):
        if index is None:
            calls.append((array, ranges))
            continue
        if array not in fn.params and array not in allocs:
            raise RangeError(f"access to unknown array {array!r} in {fn.name}")
        low = _bound(index, ranges, maximize=False)
        if not _nonneg_for_all(low, n, n_min):
            raise RangeError(f"index {array}[{index.render()}] can be negative (minimum {low.render()})")
        high = _bound(index, ranges, maximize=True) + 1
        needed[array] = high if array not in needed else _dominant(needed[array], high, n, n_min)

    extents: ExtentMap = {}
    for p in fn.params:
        extents[p] = needed.get(p, IndexExpr.lit(0))

    for call, ranges in calls:
        callee = program.function(call.callee)
        callee_ext = extents if callee.name == fn.name else range_analysis(program, callee.name)
        for param, arg in zip(callee.params, call.arrays):
            required = callee_ext[param].substitute({callee.size_param: call.size})
            if arg in allocs:
                if not _nonneg_for_all(allocs[arg] - required, n, n_min):
                    raise RangeError(
                        f"call {call.callee}({arg}, {call.size.render()}) needs extent {required.render()} "
                        f"but {arg} holds {allocs[arg].render()}"
                    )
            elif arg in extents:
                extents[arg] = _dominant(extents[arg], required, n, n_min)

    for name, extent in allocs.items():
        if not _nonneg_for_all(extent - IndexExpr.lit(1), n, n_min):
            raise RangeError(f"allocation of {name!r} with extent {extent.render()} is empty")
        if name in needed and not _nonneg_for_all(extent - needed[name], n, n_min):
            raise RangeError(
                f"access to {name!r} reaches extent {needed[name].render()} beyond its allocation {extent.render()}"
            )
        extents[name] = extent
    return {name: extents[name] for name in fn.arrays}


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisOuterProduct:
    """``weight * e_scatter (out_extent x 1) * e_gather^T (1 x in_extent)``."""

    scatter: IndexExpr
    gather: IndexExpr
    out_extent: IndexExpr
    in_extent: IndexExpr
    weight: float | None = None


@dataclass(frozen=True)
class Atom:
    op: BasisOuterProduct


@dataclass(frozen=True)
class Sum:
    terms: tuple["SigmaSPLTerm", ...]


@dataclass(frozen=True)
class ISum:
    var: str
    trip: IndexExpr
    body: "SigmaSPLTerm"


SigmaSPLTerm = Union[Atom, Sum, ISum]


def atoms(term: SigmaSPLTerm) -> Iterator[BasisOuterProduct]:
    if isinstance(term, Atom):
        yield term.op
    elif isinstance(term, Sum):
        for t in term.terms:
            yield from atoms(t)
    else:
        yield from atoms(term.body)


def loop_vars(term: SigmaSPLTerm) -> list[str]:
    """ISum variables, outermost first."""
    if isinstance(term, ISum):
        return [term.var] + loop_vars(term.body)
    if isinstance(term, Sum):
        out: list[str] = []
        for t in term.terms:
            out += [v for v in loop_vars(t) if v not in out]
        return out
    return []


def instances(term: SigmaSPLTerm, env: Mapping[str, int]) -> Iterator[tuple[int, int, float]]:
    """Enumerate (scatter, gather, weight) over every iteration."""
    if isinstance(term, Atom):
        w = 1.0 if term.op.weight is None else term.op.weight
        yield term.op.scatter.evaluate(env), term.op.gather.evaluate(env), w
    elif isinstance(term, Sum):
        for t in term.terms:
            yield from instances(t, env)
    else:
        for value in range(term.trip.evaluate(env)):
            yield from instances(term.body, {**env, term.var: value})


def term_shape(term: SigmaSPLTerm, env: Mapping[str, int]) -> tuple[int, int] | None:
    for op in atoms(term):
        return op.out_extent.evaluate(env), op.in_extent.evaluate(env)
    return None


def eval_sigma(
    term: SigmaSPLTerm,
    n: int,
    size_param: str = "n",
    shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Dense matrix of a term at size ``n``."""
    env = {size_param: n}
    shape = shape or term_shape(term, env) or (0, 0)
    out = np.zeros(shape)
    rows, cols = shape
    for s, g, w in instances(term, env):
        if not (0 <= s < rows and 0 <= g < cols):
            raise RangeError(f"basis index ({s}, {g}) outside a {rows}x{cols} term at n={n}")
        out[s, g] += w
    return out


# ---------------------------------------------------------------------------
# Lifting move loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaLift:
    """A lifted fragment together with the layout of its concatenated spaces."""

    term: SigmaSPLTerm
    outputs: tuple[tuple[str, IndexExpr], ...]
    inputs: tuple[tuple[str, IndexExpr], ...]
    size_param: str

    def offsets(self, side: str) -> dict[str, IndexExpr]:
        layout = self.outputs if side == "out" else self.inputs
        out, pos = {}, IndexExpr.lit(0)
        for name, extent in layout:
            out[name] = pos
            pos = pos + extent
        return out

    @property
    def out_extent(self) -> IndexExpr:
        return sum((e for _, e in self.outputs), IndexExpr.lit(0))

    @property
    def in_extent(self) -> IndexExpr:
        return sum((e for _, e in self.inputs), IndexExpr.lit(0))


def fragment_arrays(stmts, order: Sequence[str]) -> tuple[list[str], list[str]]:
    """(read arrays, written arrays) of a statement list, in declaration order."""
    reads, writes = set(), set()
    for stmt in icode.walk(stmts):
        if isinstance(stmt, Assign):
            writes.add(stmt.array)
        if isinstance(stmt, (Assign, icode.Def)):
            reads |= {r.array for r in icode.scalar_reads(stmt.value)}
    rank = {name: i for i, name in enumerate(order)}
    key = lambda a: rank.get(a, len(rank))  # noqa: E731
    return sorted(reads, key=key), sorted(writes, key=key)


def lift_loop(
    fragment: Loop | Sequence[icode.Stmt],
    extents: ExtentMap,
    order: Sequence[str],
    size_param: str = "n",
    probe_sizes: Sequence[int] = PROBE_SIZES,
) -> SigmaLift:
    """Lift a nest of pure moves ``dst[f] = src[g]`` into a Sigma-SPL term.

    Loop counters are renamed j, k, l, ... from the outside in. Raises
    ``NotAMove`` if any statement computes, ``OverlapError`` if two
    iterations store to the same slot.
    """
    stmts = [fragment] if isinstance(fragment, Loop) else list(fragment)
    reads, writes = fragment_arrays(stmts, order)
    outputs = tuple((a, extents[a]) for a in writes)
    inputs = tuple((a, extents[a]) for a in reads)
    shell = SigmaLift(Sum(()), outputs, inputs, size_param)
    out_off, in_off = shell.offsets("out"), shell.offsets("in")
    out_ext, in_ext = shell.out_extent, shell.in_extent

    def lift_block(block, depth: int, renames: dict[str, IndexExpr]) -> SigmaSPLTerm:
        terms = []
        for stmt in block:
            if isinstance(stmt, Loop):
                var = _LOOP_NAMES[depth] if depth < len(_LOOP_NAMES) else f"j{depth}"
                inner = {**renames, stmt.var: IndexExpr.var(var)}
                body = lift_block(stmt.body, depth + 1, inner)
                terms.append(ISum(var, stmt.trip.substitute(renames), body))
            elif isinstance(stmt, Assign) and isinstance(stmt.value, Read):
                scatter = out_off[stmt.array] + stmt.index.substitute(renames)
                gather = in_off[stmt.value.array] + stmt.value.index.substitute(renames)
                terms.append(Atom(BasisOuterProduct(scatter, gather, out_ext, in_ext)))
            else:
                raise NotAMove(f"statement {stmt!r} is not an array-to-array move")
        return terms[0] if len(terms) == 1 and isinstance(terms[0], ISum) else Sum(tuple(terms))

    term = lift_block(stmts, 0, {})
    for n in probe_sizes:
        seen: set[int] = set()
        for s, _, _ in instances(term, {size_param: n}):
            if s in seen:
                raise OverlapError(f"slot {s} of the output space is written twice at n={n}")
            seen.add(s)
    return SigmaLift(term, outputs, inputs, size_param)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _render_atom(op: BasisOuterProduct, order: Sequence[str]) -> str:
    text = f"Scat({op.scatter.render(order)}) * Gath({op.gather.render(order)})"
    if op.weight is not None:
        text = f"{op.weight!r} * {text}"
    return text


def render_sigma(term: SigmaSPLTerm, order: Sequence[str] | None = None) -> str:
    """Canonical text, e.g. ``ISum(j, n/2, Sum(Scat(2j) * Gath(4j), ...))``."""
    order = list(order) if order is not None else loop_vars(term)
    if isinstance(term, Atom):
        return _render_atom(term.op, order)
    if isinstance(term, Sum):
        return f"Sum({', '.join(render_sigma(t, order) for t in term.terms)})"
    return f"ISum({term.var}, {term.trip.render(order)}, {render_sigma(term.body, order)})"


@dataclass(frozen=True)
class GroupedSum:
    """An ISum whose body was re-rolled into an inner constant-trip sum.

    Inner iteration ``i`` stores into block ``i // per_block`` of the output
    layout at local offset ``scatter`` (which may carry an ``i mod p`` term)
    and reads ``gather`` from the concatenated input space.
    """

    var: str
    trip: IndexExpr
    inner_var: str
    inner_trip: int
    per_block: int
    block_offsets: tuple[IndexExpr, ...]
    block_names: tuple[str, ...]
    scatter: IndexExpr
    gather: IndexExpr
    out_extent: IndexExpr
    in_extent: IndexExpr

    def render(self) -> str:
        order = [self.var, self.inner_var]
        body = f"Scat({self.scatter.render(order)}) * Gath({self.gather.render(order)})"
        return f"ISum({self.var}, {self.trip.render(order)}, ISum({self.inner_var}, {self.inner_trip}, {body}))"

    def evaluate(self, n: int, size_param: str = "n") -> np.ndarray:
        env = {size_param: n}
        out = np.zeros((self.out_extent.evaluate(env), self.in_extent.evaluate(env)))
        for j in range(self.trip.evaluate(env)):
            for i in range(self.inner_trip):
                local = {**env, self.var: j, self.inner_var: i}
                block = i // self.per_block
                s = self.block_offsets[block].evaluate(env) + self.scatter.evaluate(local)
                out[s, self.gather.evaluate(local)] += 1.0
        return out


def regroup(lift: SigmaLift) -> GroupedSum | None:
    """Re-roll an unrolled inner body into ``ISum(i, K, ...)`` when the atoms
    follow ``gather = g0 + d*i`` and a per-block local ``scatter = s0 + (i mod p)``."""
    term = lift.term
    if not isinstance(term, ISum) or not isinstance(term.body, Sum):
        return None
    ops = [t.op for t in term.body.terms if isinstance(t, Atom)]
    if len(ops) != len(term.body.terms) or len(ops) < 2:
        return None
    inner = "i" if term.var != "i" else "ii"
    step = ops[1].gather - ops[0].gather
    if not step.is_constant():
        return None
    for k, op in enumerate(ops):
        if op.gather - ops[0].gather != step.scale(k):
            return None
    # split atoms into destination blocks by output offset
    offsets = lift.offsets("out")
    names = [name for name, _ in lift.outputs]

    extents = dict(lift.outputs)

    def block_of(op: BasisOuterProduct) -> str | None:
        found = set()
        for n in PROBE_SIZES:
            env = {lift.size_param: n, term.var: 0}
            s = op.scatter.evaluate(env)
            for name in names:
                lo = offsets[name].evaluate(env)
                if lo <= s < lo + extents[name].evaluate(env):
                    found.add(name)
        return found.pop() if len(found) == 1 else None

    blocks = [block_of(op) for op in ops]
    if None in blocks:
        return None
    used = list(dict.fromkeys(blocks))
    per_block = len(ops) // len(used)
    if per_block * len(used) != len(ops) or blocks != [b for b in used for _ in range(per_block)]:
        return None
    base = ops[0].scatter - offsets[blocks[0]]
    for k, op in enumerate(ops):
        if op.scatter - offsets[blocks[k]] != base + (k % per_block):
            return None
    scatter = base.with_mod(IndexExpr.var(inner), per_block) if per_block > 1 else base
    gather = ops[0].gather + IndexExpr.var(inner, step.const)
    grouped = GroupedSum(
        term.var,
        term.trip,
        inner,
        len(ops),
        per_block,
        tuple(offsets[b] for b in used),
        tuple(used),
        scatter,
        gather,
        lift.out_extent,
        lift.in_extent,
    )
    return grouped


def sigma_from_matrix_check(lift: SigmaLift, oracle: np.ndarray, n: int) -> float:
    """Max deviation between the term and an oracle matrix at size ``n``."""
    mat = eval_sigma(lift.term, n, lift.size_param, shape=oracle.shape)
    return float(np.max(np.abs(mat - oracle), initial=0.0))


def halve(expr: IndexExpr) -> IndexExpr:
    return expr.scale(Fraction(1, 2))
