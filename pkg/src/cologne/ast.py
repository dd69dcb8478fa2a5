"""AST for Colog programs: goal/var declarations, rules, literals, terms.

All nodes are frozen dataclasses with structural equality; source positions
are carried on declarations and rules but excluded from comparisons so that
pretty-print/re-parse round trips compare equal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

AGG_FUNCS = ("SUM", "MIN", "MAX", "COUNT", "STDEV", "SUMABS", "UNIQUE")

COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=")
ARITH_OPS = ("+", "-", "*", "/")


class GoalKind(enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"
    SATISFY = "satisfy"


class Arrow(enum.Enum):
    DERIVE = "<-"
    CONSTRAIN = "->"


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    value: Union[int, str]

    def __str__(self) -> str:
        if isinstance(self.value, str):
            return '"%s"' % self.value
        return str(self.value)


@dataclass(frozen=True)
class ConstRef:
    """Named constant resolved from runtime configuration (e.g. max_migrates)."""

    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Term"
    right: "Term"

    def __str__(self) -> str:
        return "%s%s%s" % (_operand(self, self.left), self.op, _operand(self, self.right))


@dataclass(frozen=True)
class Neg:
    operand: "Term"

    def __str__(self) -> str:
        return "-%s" % _wrap(self.operand)


@dataclass(frozen=True)
class Abs:
    operand: "Term"

    def __str__(self) -> str:
        return "|%s|" % self.operand


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple["Term", ...]

    def __str__(self) -> str:
        return "%s(%s)" % (self.name, ",".join(str(a) for a in self.args))


@dataclass(frozen=True)
class Agg:
    """Aggregate marker in a rule-head argument position, e.g. SUM<C>."""

    fn: str
    var: Var

    def __str__(self) -> str:
        return "%s<%s>" % (self.fn, self.var.name)


Term = Union[Var, Const, ConstRef, BinOp, Neg, Abs, Func, Agg]

# Precedence used only for printing with minimal parentheses.
_PREC = {"==": 1, "!=": 1, "<": 1, "<=": 1, ">": 1, ">=": 1, "+": 2, "-": 2, "*": 3, "/": 3}


def _prec(t: Term) -> int:
    if isinstance(t, BinOp):
        return _PREC[t.op]
    return 9


def _operand(parent: BinOp, child: Term) -> str:
    # Left-associative: right child at equal precedence needs parens.
    need = _prec(child) < _PREC[parent.op] or (
        child is parent.right and _prec(child) == _PREC[parent.op]
    )
    return "(%s)" % child if need else str(child)


def _wrap(t: Term) -> str:
    return "(%s)" % t if isinstance(t, BinOp) else str(t)


@dataclass(frozen=True)
class AggSpec:
    fn: str
    over: str
    group_by: tuple[str, ...]
    position: int


@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple[Term, ...]
    located: bool = False  # first argument written @X

    def loc_var(self) -> Optional[str]:
        if self.located and self.args and isinstance(self.args[0], Var):
            return self.args[0].name
        return None

    def agg_spec(self) -> Optional[AggSpec]:
        for i, a in enumerate(self.args):
            if isinstance(a, Agg):
                group = tuple(
                    t.name for j, t in enumerate(self.args) if j != i and isinstance(t, Var)
                )
                return AggSpec(a.fn, a.var.name, group, i)
        return None

    @property
    def arity(self) -> int:
        return len(self.args)

    def __str__(self) -> str:
        parts = [str(a) for a in self.args]
        if self.located and parts:
            parts[0] = "@" + parts[0]
        return "%s(%s)" % (self.name, ",".join(parts))


@dataclass(frozen=True)
class BoolExpr:
    expr: Term

    def __str__(self) -> str:
        return str(self.expr)


Literal = Union[Predicate, BoolExpr]


@dataclass(frozen=True)
class Rule:
    label: str
    head: Predicate
    arrow: Arrow
    body: tuple[Literal, ...]
    line: int = field(default=0, compare=False)

    def body_predicates(self) -> Iterator[Predicate]:
        for lit in self.body:
            if isinstance(lit, Predicate):
                yield lit

    def body_exprs(self) -> Iterator[BoolExpr]:
        for lit in self.body:
            if isinstance(lit, BoolExpr):
                yield lit

    def __str__(self) -> str:
        body = ", ".join(str(b) for b in self.body)
        return "%s %s %s %s." % (self.label, self.head, self.arrow.value, body)


@dataclass(frozen=True)
class GoalDecl:
    kind: GoalKind
    attr: Optional[str]
    table: Optional[str]
    table_args: tuple[Term, ...] = ()
    located: bool = False
    line: int = field(default=0, compare=False)

    def __str__(self) -> str:
        if self.table is None:
            return "goal %s." % self.kind.value
        parts = [str(a) for a in self.table_args]
        if self.located and parts:
            parts[0] = "@" + parts[0]
        return "goal %s %s in %s(%s)." % (self.kind.value, self.attr, self.table,
                                          ",".join(parts))


@dataclass(frozen=True)
class VarDecl:
    var_table: str
    var_attrs: tuple[str, ...]
    bound_table: str
    bound_attrs: tuple[str, ...]
    located: bool = False
    domain: Optional[tuple[int, int]] = None
    line: int = field(default=0, compare=False)

    def solver_attrs(self) -> tuple[str, ...]:
        """Trailing attributes not present in the forall table."""
        return self.var_attrs[len(self.bound_attrs):]

    def solver_positions(self) -> tuple[int, ...]:
        return tuple(range(len(self.bound_attrs), len(self.var_attrs)))

    def __str__(self) -> str:
        va = list(self.var_attrs)
        ba = list(self.bound_attrs)
        if self.located:
            va[0] = "@" + va[0]
            ba[0] = "@" + ba[0]
        s = "var %s(%s) forall %s(%s)" % (
            self.var_table, ",".join(va), self.bound_table, ",".join(ba))
        if self.domain is not None:
            s += " in [%d,%d]" % self.domain
        return s + "."


@dataclass(frozen=True)
class Program:
    goal: Optional[GoalDecl]
    var_decls: tuple[VarDecl, ...]
    rules: tuple[Rule, ...]

    def rule(self, label: str) -> Rule:
        for r in self.rules:
            if r.label == label:
                return r
        raise KeyError(label)

    def var_decl_for(self, table: str) -> Optional[VarDecl]:
        for vd in self.var_decls:
            if vd.var_table == table:
                return vd
        return None

    @property
    def var_tables(self) -> frozenset[str]:
        return frozenset(vd.var_table for vd in self.var_decls)


def term_vars(t: Term) -> Iterator[str]:
    """All variable names appearing in a term."""
    if isinstance(t, Var):
        yield t.name
    elif isinstance(t, Agg):
        yield t.var.name
    elif isinstance(t, BinOp):
        yield from term_vars(t.left)
        yield from term_vars(t.right)
    elif isinstance(t, (Neg, Abs)):
        yield from term_vars(t.operand)
    elif isinstance(t, Func):
        for a in t.args:
            yield from term_vars(a)


def literal_vars(lit: Literal) -> Iterator[str]:
    if isinstance(lit, Predicate):
        for a in lit.args:
            yield from term_vars(a)
    else:
        yield from term_vars(lit.expr)


def pretty(program: Program) -> str:
    """Canonical source text; parsing it back yields an equal Program."""
    lines = []
    if program.goal is not None:
        lines.append(str(program.goal))
    for vd in program.var_decls:
        lines.append(str(vd))
    for r in program.rules:
        lines.append(str(r))
    return "\n".join(lines) + ("\n" if lines else "")
