"""Finite-domain constraint solver: propagation plus branch-and-bound search.

Variables range over integer domains (bounds plus removed values).
Constraints provide two independent code paths: bounds-based propagation
used during search, and exact evaluation over complete assignments used by
the post-solve checker and by tests. Search is deterministic: variables in
declaration order (or smallest-domain-first when configured), values
ascending, wall-clock budget checked at every node expansion.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

FAIL = "fail"


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE_TIMEOUT = "feasibleTimeout"
    UNSAT = "unsat"


class Dom:
    """Immutable integer domain: [lo, hi] minus a set of removed values."""

    __slots__ = ("lo", "hi", "holes")

    def __init__(self, lo: int, hi: int, holes: frozenset[int] = frozenset()):
        if holes:
            holes = frozenset(h for h in holes if lo <= h <= hi)
            while lo <= hi and lo in holes:
                lo += 1
            while hi >= lo and hi in holes:
                hi -= 1
            holes = frozenset(h for h in holes if lo < h < hi)
        self.lo = lo
        self.hi = hi
        self.holes = holes

    @classmethod
    def of_values(cls, values: Sequence[int]) -> "Dom":
        vs = sorted(set(values))
        if not vs:
            return cls(0, -1)
        holes = frozenset(set(range(vs[0], vs[-1] + 1)) - set(vs))
        return cls(vs[0], vs[-1], holes)

    @property
    def empty(self) -> bool:
        return self.lo > self.hi

    @property
    def fixed(self) -> bool:
        return self.lo == self.hi

    @property
    def value(self) -> int:
        return self.lo

    def size(self) -> int:
        return 0 if self.empty else self.hi - self.lo + 1 - len(self.holes)

    def contains(self, v: int) -> bool:
        return self.lo <= v <= self.hi and v not in self.holes

    def values(self) -> Iterator[int]:
        for v in range(self.lo, self.hi + 1):
            if v not in self.holes:
                yield v

    def clamp(self, lo: Optional[int] = None, hi: Optional[int] = None) -> "Dom":
        nlo = self.lo if lo is None else max(self.lo, lo)
        nhi = self.hi if hi is None else min(self.hi, hi)
        if nlo == self.lo and nhi == self.hi:
            return self
        return Dom(nlo, nhi, self.holes)

    def without(self, v: int) -> "Dom":
        if not self.contains(v):
            return self
        return Dom(self.lo, self.hi, self.holes | {v})

    def __repr__(self) -> str:
        if self.empty:
            return "{}"
        if self.holes:
            return "{%s}" % ",".join(str(v) for v in self.values())
        return "[%d..%d]" % (self.lo, self.hi)


def floordiv(a: int, b: int) -> int:
    return a // b


def ceildiv(a: int, b: int) -> int:
    return -((-a) // b)


# ---- linear forms ----

@dataclass(frozen=True)
class Lin:
    """Integer linear form: sum of coef*var plus a constant."""

    terms: tuple[tuple[int, int], ...]  # (vid, coef), coef != 0
    const: int = 0

    def bounds(self, doms: list[Dom]) -> tuple[int, int]:
        lo = hi = self.const
        for vid, coef in self.terms:
            d = doms[vid]
            if coef > 0:
                lo += coef * d.lo
                hi += coef * d.hi
            else:
                lo += coef * d.hi
                hi += coef * d.lo
        return lo, hi

    def eval(self, vals: Sequence[int]) -> int:
        return self.const + sum(coef * vals[vid] for vid, coef in self.terms)

    def vids(self) -> tuple[int, ...]:
        return tuple(vid for vid, _ in self.terms)

    def render(self, names) -> str:
        parts = []
        for vid, coef in self.terms:
            if coef == 1:
                parts.append(names[vid])
            elif coef == -1:
                parts.append("-%s" % names[vid])
            else:
                parts.append("%d*%s" % (coef, names[vid]))
        if self.const or not parts:
            parts.append(str(self.const))
        return " + ".join(parts).replace("+ -", "- ")


def _abs_bounds(lo: int, hi: int) -> tuple[int, int]:
    if lo >= 0:
        return lo, hi
    if hi <= 0:
        return -hi, -lo
    return 0, max(-lo, hi)


class Constraint:
    kind = "abstract"

    def vids(self) -> tuple[int, ...]:
        raise NotImplementedError

    def propagate(self, doms: list[Dom]):
        """Return list of narrowed vids, or FAIL."""
        raise NotImplementedError

    def check(self, vals: Sequence[int]) -> bool:
        raise NotImplementedError

    def render(self, names) -> str:
        return self.kind


def _set_dom(doms: list[Dom], vid: int, new: Dom, changed: list[int]):
    if new.empty:
        return False
    old = doms[vid]
    if new.lo != old.lo or new.hi != old.hi or new.holes != old.holes:
        doms[vid] = new
        changed.append(vid)
    return True


class LinearCon(Constraint):
    """lin OP 0 with OP in {==, <=, !=}. sumDef constraints are the == form."""

    def __init__(self, lin: Lin, op: str, kind: Optional[str] = None):
        self.lin = lin
        self.op = op
        self.kind = kind or {"==": "linearEq", "<=": "linearLe", "!=": "linearNe"}[op]

    def vids(self):
        return self.lin.vids()

    def propagate(self, doms):
        lo, hi = self.lin.bounds(doms)
        changed: list[int] = []
        if self.op == "==":
            if lo > 0 or hi < 0:
                return FAIL
            for vid, coef in self.lin.terms:
                d = doms[vid]
                term_lo = coef * (d.lo if coef > 0 else d.hi)
                term_hi = coef * (d.hi if coef > 0 else d.lo)
                rest_lo, rest_hi = lo - term_lo, hi - term_hi
                # coef*x in [-rest_hi, -rest_lo]
                if coef > 0:
                    nd = d.clamp(ceildiv(-rest_hi, coef), floordiv(-rest_lo, coef))
                else:
                    nd = d.clamp(ceildiv(-rest_lo, coef), floordiv(-rest_hi, coef))
                if not _set_dom(doms, vid, nd, changed):
                    return FAIL
        elif self.op == "<=":
            if lo > 0:
                return FAIL
            if hi <= 0:
                return changed
            for vid, coef in self.lin.terms:
                d = doms[vid]
                term_lo = coef * (d.lo if coef > 0 else d.hi)
                rest_lo = lo - term_lo
                # coef*x <= -rest_lo
                if coef > 0:
                    nd = d.clamp(None, floordiv(-rest_lo, coef))
                else:
                    nd = d.clamp(ceildiv(-rest_lo, coef), None)
                if not _set_dom(doms, vid, nd, changed):
                    return FAIL
        else:  # !=
            if lo == hi == 0:
                return FAIL
            unfixed = [(vid, coef) for vid, coef in self.lin.terms if not doms[vid].fixed]
            if len(unfixed) == 1:
                vid, coef = unfixed[0]
                rest = self.lin.const + sum(c * doms[v].lo for v, c in self.lin.terms
                                            if doms[v].fixed)
                if rest % coef == 0:
                    nd = doms[vid].without(-rest // coef)
                    if not _set_dom(doms, vid, nd, changed):
                        return FAIL
        return changed

    def check(self, vals):
        v = self.lin.eval(vals)
        return {"==": v == 0, "<=": v <= 0, "!=": v != 0}[self.op]

    def render(self, names):
        return "%s: %s %s 0" % (self.kind, self.lin.render(names), self.op)


@dataclass(frozen=True)
class Cond:
    """Atomic condition lin OP rhs, optionally over |lin|."""

    lin: Lin
    op: str  # <,<=,>,>=,==,!=
    rhs: int
    absolute: bool = False

    def bounds(self, doms) -> tuple[int, int]:
        lo, hi = self.lin.bounds(doms)
        return _abs_bounds(lo, hi) if self.absolute else (lo, hi)

    def decide(self, doms) -> Optional[bool]:
        lo, hi = self.bounds(doms)
        if self.op == "<":
            return True if hi < self.rhs else (False if lo >= self.rhs else None)
        if self.op == "<=":
            return True if hi <= self.rhs else (False if lo > self.rhs else None)
        if self.op == ">":
            return True if lo > self.rhs else (False if hi <= self.rhs else None)
        if self.op == ">=":
            return True if lo >= self.rhs else (False if hi < self.rhs else None)
        if self.op == "==":
            if lo == hi == self.rhs:
                return True
            if self.rhs < lo or self.rhs > hi:
                return False
            return None
        if self.op == "!=":
            if lo == hi == self.rhs:
                return False
            if self.rhs < lo or self.rhs > hi:
                return True
            return None
        raise ValueError(self.op)

    def negated(self) -> "Cond":
        flip = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "==": "!=", "!=": "=="}
        return Cond(self.lin, flip[self.op], self.rhs, self.absolute)

    def holds(self, vals) -> bool:
        v = self.lin.eval(vals)
        if self.absolute:
            v = abs(v)
        return {"<": v < self.rhs, "<=": v <= self.rhs, ">": v > self.rhs,
                ">=": v >= self.rhs, "==": v == self.rhs, "!=": v != self.rhs}[self.op]

    def enforce(self, doms, changed) -> bool:
        """Prune domains so the condition must hold; False on wipeout."""
        # Normalize to bound restrictions on the linear form.
        op, rhs = self.op, self.rhs
        if op == "<":
            op, rhs = "<=", rhs - 1
        elif op == ">":
            op, rhs = ">=", rhs + 1
        if not self.absolute:
            if op == "<=":
                return self._bound_lin(doms, changed, hi=rhs)
            if op == ">=":
                return self._bound_lin(doms, changed, lo=rhs)
            if op == "==":
                return self._bound_lin(doms, changed, lo=rhs, hi=rhs)
            # != : prune only when a single variable remains
            return self._neq_lin(doms, changed, rhs)
        # |lin| cases: keep bounds-sound, prune what is unambiguous.
        lo, hi = self.lin.bounds(doms)
        if op == "<=":
            if rhs < 0:
                return False
            return self._bound_lin(doms, changed, lo=-rhs, hi=rhs)
        if op == ">=":
            if rhs <= 0:
                return True
            if hi < rhs:  # positive branch impossible
                return self._bound_lin(doms, changed, hi=-rhs)
            if lo > -rhs:  # negative branch impossible
                return self._bound_lin(doms, changed, lo=rhs)
            return True
        if op == "==":
            if rhs < 0:
                return False
            if hi < rhs:
                return self._bound_lin(doms, changed, lo=-rhs, hi=-rhs)
            if lo > -rhs:
                return self._bound_lin(doms, changed, lo=rhs, hi=rhs)
            return self._bound_lin(doms, changed, lo=-rhs, hi=rhs)
        # |lin| != rhs
        if rhs < 0:
            return True
        ok = self._neq_lin(doms, changed, rhs)
        return ok and self._neq_lin(doms, changed, -rhs)

    def _bound_lin(self, doms, changed, lo: Optional[int] = None,
                   hi: Optional[int] = None) -> bool:
        cur_lo, cur_hi = self.lin.bounds(doms)
        if lo is not None and cur_hi < lo:
            return False
        if hi is not None and cur_lo > hi:
            return False
        for vid, coef in self.lin.terms:
            d = doms[vid]
            term_lo = coef * (d.lo if coef > 0 else d.hi)
            term_hi = coef * (d.hi if coef > 0 else d.lo)
            new = d
            if hi is not None:
                rest_lo = cur_lo - term_lo
                bound = hi - rest_lo  # coef*x <= bound
                new = new.clamp(None, floordiv(bound, coef)) if coef > 0 \
                    else new.clamp(ceildiv(bound, coef), None)
            if lo is not None:
                rest_hi = cur_hi - term_hi
                bound = lo - rest_hi  # coef*x >= bound
                new = new.clamp(ceildiv(bound, coef), None) if coef > 0 \
                    else new.clamp(None, floordiv(bound, coef))
            if not _set_dom(doms, vid, new, changed):
                return False
        return True

    def _neq_lin(self, doms, changed, rhs: int) -> bool:
        unfixed = [(vid, coef) for vid, coef in self.lin.terms if not doms[vid].fixed]
        fixed_sum = self.lin.const + sum(c * doms[v].lo for v, c in self.lin.terms
                                         if doms[v].fixed)
        if not unfixed:
            return fixed_sum != rhs
        if len(unfixed) == 1:
            vid, coef = unfixed[0]
            if (rhs - fixed_sum) % coef == 0:
                return _set_dom(doms, vid, doms[vid].without((rhs - fixed_sum) // coef),
                                changed)
        return True


class ReifiedEquiv(Constraint):
    """cond1 holds if and only if cond2 holds."""

    kind = "reifiedEquiv"

    def __init__(self, cond1: Cond, cond2: Cond):
        self.cond1 = cond1
        self.cond2 = cond2

    def vids(self):
        return tuple(dict.fromkeys(self.cond1.lin.vids() + self.cond2.lin.vids()))

    def propagate(self, doms):
        changed: list[int] = []
        d1 = self.cond1.decide(doms)
        d2 = self.cond2.decide(doms)
        if d1 is not None and d2 is not None:
            return changed if d1 == d2 else FAIL
        if d1 is not None:
            cond = self.cond2 if d1 else self.cond2.negated()
            if not cond.enforce(doms, changed):
                return FAIL
        elif d2 is not None:
            cond = self.cond1 if d2 else self.cond1.negated()
            if not cond.enforce(doms, changed):
                return FAIL
        return changed

    def check(self, vals):
        return self.cond1.holds(vals) == self.cond2.holds(vals)

    def render(self, names):
        def c(cond):
            body = cond.lin.render(names)
            if cond.absolute:
                body = "|%s|" % body
            return "%s %s %d" % (body, cond.op, cond.rhs)
        return "reifiedEquiv: (%s) <=> (%s)" % (c(self.cond1), c(self.cond2))


class AbsBind(Constraint):
    """target = |lin|."""

    kind = "absValue"

    def __init__(self, target: int, lin: Lin):
        self.target = target
        self.lin = lin

    def vids(self):
        return (self.target,) + self.lin.vids()

    def propagate(self, doms):
        changed: list[int] = []
        lo, hi = self.lin.bounds(doms)
        alo, ahi = _abs_bounds(lo, hi)
        if not _set_dom(doms, self.target, doms[self.target].clamp(alo, ahi), changed):
            return FAIL
        t = doms[self.target]
        cond = Cond(self.lin, "<=", t.hi, absolute=True)
        if not cond._bound_lin(doms, changed, lo=-t.hi, hi=t.hi):
            return FAIL
        return changed

    def check(self, vals):
        return vals[self.target] == abs(self.lin.eval(vals))

    def render(self, names):
        return "absValue: %s = |%s|" % (names[self.target], self.lin.render(names))


class SumAbs(Constraint):
    """target = sum of |item| for items (variables), plus a fixed offset."""

    kind = "sumAbsDef"

    def __init__(self, target: int, items: Sequence[Lin], offset: int = 0):
        self.target = target
        self.items = tuple(items)
        self.offset = offset

    def vids(self):
        out = [self.target]
        for it in self.items:
            out.extend(it.vids())
        return tuple(dict.fromkeys(out))

    def _item_bounds(self, doms):
        return [_abs_bounds(*it.bounds(doms)) for it in self.items]

    def propagate(self, doms):
        changed: list[int] = []
        bounds = self._item_bounds(doms)
        lo = self.offset + sum(b[0] for b in bounds)
        hi = self.offset + sum(b[1] for b in bounds)
        if not _set_dom(doms, self.target, doms[self.target].clamp(lo, hi), changed):
            return FAIL
        t_hi = doms[self.target].hi
        for it, (blo, _) in zip(self.items, bounds):
            budget = t_hi - (lo - blo)  # |item| may use the slack above its minimum
            cond = Cond(it, "<=", budget, absolute=True)
            if not cond._bound_lin(doms, changed, lo=-budget, hi=budget):
                return FAIL
        return changed

    def check(self, vals):
        return vals[self.target] == self.offset + sum(abs(it.eval(vals))
                                                      for it in self.items)

    def render(self, names):
        return "sumAbsDef: %s = %d + sum |%s|" % (
            names[self.target], self.offset,
            "|, |".join(it.render(names) for it in self.items))


class CountDistinct(Constraint):
    """target = number of distinct values among item vars and fixed extras."""

    kind = "countDistinctDef"

    def __init__(self, target: int, items: Sequence[int], extras: Sequence[int] = ()):
        self.target = target
        self.items = tuple(items)
        self.extras = frozenset(extras)

    def vids(self):
        return (self.target,) + self.items

    def propagate(self, doms):
        changed: list[int] = []
        fixed = set(self.extras)
        unfixed = []
        for vid in self.items:
            if doms[vid].fixed:
                fixed.add(doms[vid].value)
            else:
                unfixed.append(vid)
        lb = len(fixed)
        # One extra value is needed when some var cannot reuse a used value.
        if any(all(not doms[v].contains(x) for x in fixed) for v in unfixed):
            lb += 1
        ub = len(fixed) + len(unfixed)
        if not _set_dom(doms, self.target, doms[self.target].clamp(lb, ub), changed):
            return FAIL
        t = doms[self.target]
        if t.hi == len(fixed) and unfixed and fixed:
            # all remaining vars must reuse already-used values
            for vid in unfixed:
                d = doms[vid]
                nd = Dom.of_values([v for v in d.values() if v in fixed])
                if not _set_dom(doms, vid, nd, changed):
                    return FAIL
        return changed

    def check(self, vals):
        distinct = set(self.extras) | {vals[v] for v in self.items}
        return vals[self.target] == len(distinct)

    def render(self, names):
        return "countDistinctDef: %s = #distinct(%s%s)" % (
            names[self.target], ",".join(names[v] for v in self.items),
            (";" + ",".join(map(str, sorted(self.extras)))) if self.extras else "")


class ScaledVariance(Constraint):
    """target = sum over items of (n*item - s)^2 where s = sum of items.

    n counts both variable items and fixed extras; equals n^3 times the
    population variance, so minimizing it minimizes the standard deviation.
    """

    kind = "scaledVarianceDef"

    def __init__(self, target: int, items: Sequence[int], extras: Sequence[int] = ()):
        self.target = target
        self.items = tuple(items)
        self.extras = tuple(extras)
        self.n = len(self.items) + len(self.extras)

    def vids(self):
        return (self.target,) + self.items

    def _member_bounds(self, doms):
        bounds = [(doms[v].lo, doms[v].hi) for v in self.items]
        bounds.extend((x, x) for x in self.extras)
        return bounds

    def propagate(self, doms):
        changed: list[int] = []
        n = self.n
        if n == 0:
            return (changed if _set_dom(doms, self.target,
                                        doms[self.target].clamp(0, 0), changed) else FAIL)
        bounds = self._member_bounds(doms)
        s_lo = sum(b[0] for b in bounds)
        s_hi = sum(b[1] for b in bounds)
        term_bounds = []
        for m_lo, m_hi in bounds:
            # n*m - s = (n-1)*m - (s - m); bound the two parts separately
            t_lo = (n - 1) * m_lo - (s_hi - m_hi)
            t_hi = (n - 1) * m_hi - (s_lo - m_lo)
            lo2, hi2 = _abs_bounds(t_lo, t_hi)
            term_bounds.append((lo2 * lo2, hi2 * hi2, t_lo, t_hi))
        total_lo = sum(t[0] for t in term_bounds)
        total_hi = sum(t[1] for t in term_bounds)
        if not _set_dom(doms, self.target,
                        doms[self.target].clamp(total_lo, total_hi), changed):
            return FAIL
        budget = doms[self.target].hi
        if n >= 2:
            for idx, vid in enumerate(self.items):
                sq_lo, _, t_lo, t_hi = term_bounds[idx]
                residual = budget - (total_lo - sq_lo)
                if residual < 0:
                    return FAIL
                r = math.isqrt(residual)
                new_t_lo = max(t_lo, -r)
                new_t_hi = min(t_hi, r)
                if new_t_lo > new_t_hi:
                    return FAIL
                # (n-1)*m = t + sum of the other members
                other_lo = s_lo - doms[vid].lo
                other_hi = s_hi - doms[vid].hi
                m_lo = ceildiv(new_t_lo + other_lo, n - 1)
                m_hi = floordiv(new_t_hi + other_hi, n - 1)
                if not _set_dom(doms, vid, doms[vid].clamp(m_lo, m_hi), changed):
                    return FAIL
        return changed

    def check(self, vals):
        members = [vals[v] for v in self.items] + list(self.extras)
        s = sum(members)
        n = len(members)
        return vals[self.target] == sum((n * m - s) ** 2 for m in members)

    def render(self, names):
        return "scaledVarianceDef: %s = sum (%d*m - S)^2 over {%s%s}" % (
            names[self.target], self.n, ",".join(names[v] for v in self.items),
            ("," + ",".join(map(str, self.extras))) if self.extras else "")


class MinMaxDef(Constraint):
    def __init__(self, target: int, items: Sequence[int], extras: Sequence[int],
                 is_min: bool):
        self.target = target
        self.items = tuple(items)
        self.extras = tuple(extras)
        self.is_min = is_min
        self.kind = "minDef" if is_min else "maxDef"

    def vids(self):
        return (self.target,) + self.items

    def propagate(self, doms):
        changed: list[int] = []
        los = [doms[v].lo for v in self.items] + list(self.extras)
        his = [doms[v].hi for v in self.items] + list(self.extras)
        if self.is_min:
            lo, hi = min(los), min(his)
        else:
            lo, hi = max(los), max(his)
        if not _set_dom(doms, self.target, doms[self.target].clamp(lo, hi), changed):
            return FAIL
        t = doms[self.target]
        for vid in self.items:
            nd = doms[vid].clamp(t.lo, None) if self.is_min \
                else doms[vid].clamp(None, t.hi)
            if not _set_dom(doms, vid, nd, changed):
                return FAIL
        return changed

    def check(self, vals):
        members = [vals[v] for v in self.items] + list(self.extras)
        got = min(members) if self.is_min else max(members)
        return vals[self.target] == got

    def render(self, names):
        fn = "min" if self.is_min else "max"
        return "%sDef: %s = %s(%s)" % (fn, names[self.target], fn,
                                       ",".join(names[v] for v in self.items))


class CondCon(Constraint):
    """A hard atomic condition (linear or absolute-value comparison)."""

    kind = "hardCond"

    def __init__(self, cond: Cond, kind: Optional[str] = None):
        self.cond = cond
        if kind:
            self.kind = kind

    def vids(self):
        return self.cond.lin.vids()

    def propagate(self, doms):
        decided = self.cond.decide(doms)
        if decided is False:
            return FAIL
        changed: list[int] = []
        if decided is None:
            if not self.cond.enforce(doms, changed):
                return FAIL
        return changed

    def check(self, vals):
        return self.cond.holds(vals)

    def render(self, names):
        body = self.cond.lin.render(names)
        if self.cond.absolute:
            body = "|%s|" % body
        return "%s: %s %s %d" % (self.kind, body, self.cond.op, self.cond.rhs)


class FalseCon(Constraint):
    """Recorded contradiction found during grounding."""

    kind = "contradiction"

    def __init__(self, reason: str):
        self.reason = reason

    def vids(self):
        return ()

    def propagate(self, doms):
        return FAIL

    def check(self, vals):
        return False

    def render(self, names):
        return "contradiction: %s" % self.reason


# ---- model and search ----

@dataclass
class FDVar:
    vid: int
    name: str
    decision: bool = False
    origin: Optional[tuple] = None


@dataclass
class Solution:
    status: SolveStatus
    assignment: Optional[dict[str, int]]
    objective_value: Optional[int]
    solve_millis: float
    nodes: int
    proven: bool
    trace: tuple[tuple[int, int], ...] = ()  # (node count, objective) per incumbent

    @property
    def ok(self) -> bool:
        return self.status is not SolveStatus.UNSAT and self.assignment is not None


class Model:
    def __init__(self, budget_millis: int = 10_000, branching: str = "declaration",
                 max_nodes: Optional[int] = None):
        self.vars: list[FDVar] = []
        self.domains: list[Dom] = []
        self.constraints: list[Constraint] = []
        self.objective: Optional[tuple[str, int]] = None  # ("minimize"|"maximize", vid)
        self.hint: Optional[dict[int, int]] = None
        self.budget_millis = budget_millis
        self.branching = branching
        self.max_nodes = max_nodes
        self._by_name: dict[str, int] = {}

    def add_var(self, name: str, dom: Dom, decision: bool = False,
                origin: Optional[tuple] = None) -> int:
        if name in self._by_name:
            raise ValueError("duplicate variable %s" % name)
        vid = len(self.vars)
        self.vars.append(FDVar(vid, name, decision, origin))
        self.domains.append(dom)
        self._by_name[name] = vid
        return vid

    def add_constraint(self, con: Constraint):
        self.constraints.append(con)

    def var_named(self, name: str) -> int:
        return self._by_name[name]

    @property
    def decision_vids(self) -> list[int]:
        return [v.vid for v in self.vars if v.decision]

    def check_assignment(self, vals: Sequence[int]) -> list[Constraint]:
        """Independent exact evaluation; returns violated constraints."""
        violated = [c for c in self.constraints if not c.check(vals)]
        for var, val in zip(self.vars, vals):
            if not self.domains[var.vid].contains(val):
                violated.append(FalseCon("value %d outside domain of %s"
                                         % (val, var.name)))
        return violated

    def dump(self) -> str:
        names = [v.name for v in self.vars]
        lines = ["model: %d vars, %d constraints" % (len(self.vars),
                                                     len(self.constraints))]
        for var in self.vars:
            marker = "decision" if var.decision else "derived"
            lines.append("var\t%s\t%r\t%s" % (var.name, self.domains[var.vid], marker))
        for con in self.constraints:
            lines.append("con\t%s" % con.render(names))
        if self.objective:
            lines.append("objective\t%s\t%s" % (self.objective[0],
                                                names[self.objective[1]]))
        return "\n".join(lines) + "\n"


class _Search:
    def __init__(self, model: Model):
        self.model = model
        self.doms = list(model.domains)
        self.adj: dict[int, list[int]] = {}
        for ci, con in enumerate(model.constraints):
            for vid in con.vids():
                self.adj.setdefault(vid, []).append(ci)
        self.trail: list[tuple[int, Dom]] = []
        self.nodes = 0

    def set_dom(self, vid: int, dom: Dom):
        self.trail.append((vid, self.doms[vid]))
        self.doms[vid] = dom

    def undo_to(self, mark: int):
        while len(self.trail) > mark:
            vid, old = self.trail.pop()
            self.doms[vid] = old

    def propagate(self, seeds: Optional[list[int]] = None) -> bool:
        queue: list[int] = []
        queued = set()
        if seeds is None:
            queue = list(range(len(self.model.constraints)))
            queued = set(queue)
        else:
            for vid in seeds:
                for ci in self.adj.get(vid, ()):
                    if ci not in queued:
                        queued.add(ci)
                        queue.append(ci)
        i = 0
        while i < len(queue):
            ci = queue[i]
            i += 1
            queued.discard(ci)
            con = self.model.constraints[ci]
            vids = con.vids()
            before = {vid: self.doms[vid] for vid in vids}
            result = con.propagate(self.doms)
            if result == FAIL:
                for vid, old in before.items():
                    self.doms[vid] = old
                return False
            for vid in dict.fromkeys(result):
                if self.doms[vid] is not before[vid]:
                    self.trail.append((vid, before[vid]))
                    for cj in self.adj.get(vid, ()):
                        if cj != ci and cj not in queued:
                            queued.add(cj)
                            queue.append(cj)
            if i > 10_000_000:
                raise RuntimeError("propagation runaway")
        return True


def solve(model: Model) -> Solution:
    t0 = time.monotonic()
    search = _Search(model)
    budget_s = model.budget_millis / 1000.0
    incumbent: Optional[list[int]] = None
    incumbent_obj: Optional[int] = None
    trace: list[tuple[int, int]] = []
    minimize = model.objective is None or model.objective[0] == "minimize"
    obj_vid = model.objective[1] if model.objective else None

    def better(a: int, b: int) -> bool:
        return a < b if minimize else a > b

    def result(proven: bool) -> Solution:
        millis = (time.monotonic() - t0) * 1000.0
        if incumbent is None:
            status = SolveStatus.UNSAT if proven else SolveStatus.FEASIBLE_TIMEOUT
            return Solution(status, None, None, millis, search.nodes, proven,
                            tuple(trace))
        status = SolveStatus.OPTIMAL if proven else SolveStatus.FEASIBLE_TIMEOUT
        assignment = {v.name: incumbent[v.vid] for v in model.vars}
        return Solution(status, assignment, incumbent_obj, millis, search.nodes,
                        proven, tuple(trace))

    if not search.propagate():
        millis = (time.monotonic() - t0) * 1000.0
        return Solution(SolveStatus.UNSAT, None, None, millis, 0, True, ())

    # Warm start: a (possibly partial) assignment hint is completed by
    # propagation and primes the branch-and-bound incumbent.
    if model.hint:
        mark = len(search.trail)
        ok = True
        for vid, val in model.hint.items():
            if not search.doms[vid].contains(val):
                ok = False
                break
            search.set_dom(vid, Dom(val, val))
        if ok and search.propagate(list(model.hint)):
            if all(d.fixed for d in search.doms):
                vals = [d.value for d in search.doms]
                if not model.check_assignment(vals):
                    incumbent = vals
                    if obj_vid is not None:
                        incumbent_obj = vals[obj_vid]
                        trace.append((0, incumbent_obj))
        search.undo_to(mark)

    decision_order = model.decision_vids or list(range(len(model.vars)))

    def pick() -> Optional[int]:
        if model.branching == "first_fail":
            best_vid, best_size = None, None
            for vid in decision_order:
                d = search.doms[vid]
                if not d.fixed:
                    s = d.size()
                    if best_size is None or s < best_size:
                        best_vid, best_size = vid, s
            if best_vid is not None:
                return best_vid
        else:
            for vid in decision_order:
                if not search.doms[vid].fixed:
                    return vid
        for var in model.vars:
            if not search.doms[var.vid].fixed:
                return var.vid
        return None

    def bound_ok() -> bool:
        """Clamp the objective below the incumbent; False when impossible."""
        if obj_vid is None or incumbent_obj is None:
            return True
        d = search.doms[obj_vid]
        nd = d.clamp(None, incumbent_obj - 1) if minimize \
            else d.clamp(incumbent_obj + 1, None)
        if nd.empty:
            return False
        if nd is not d:
            search.set_dom(obj_vid, nd)
            return search.propagate([obj_vid])
        return True

    frames: list[list] = []  # [vid, values, next index, trail mark]

    def descend() -> bool:
        """Advance the top frame to its next consistent value."""
        while frames:
            frame = frames[-1]
            vid, values, idx, mark = frame[0], frame[1], frame[2], frame[3]
            search.undo_to(mark)
            if idx >= len(values):
                frames.pop()
                continue
            frame[2] += 1
            search.nodes += 1
            val = values[idx]
            if not search.doms[vid].contains(val):
                continue
            search.set_dom(vid, Dom(val, val))
            if bound_ok() and search.propagate([vid]):
                return True
        return False

    if not bound_ok():
        return result(True)

    while True:
        if time.monotonic() - t0 > budget_s:
            return result(False)
        if model.max_nodes is not None and search.nodes >= model.max_nodes:
            return result(False)
        vid = pick()
        if vid is None:
            vals = [search.doms[v.vid].value for v in model.vars]
            if not model.check_assignment(vals):
                if obj_vid is None:
                    incumbent = vals
                    return result(True)
                obj = vals[obj_vid]
                if incumbent is None or better(obj, incumbent_obj):
                    incumbent = vals
                    incumbent_obj = obj
                    trace.append((search.nodes, obj))
            if not descend():
                return result(True)
            continue
        frames.append([vid, list(search.doms[vid].values()), 0, len(search.trail)])
        if not descend():
            return result(True)
