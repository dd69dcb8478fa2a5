"""Grounding: instantiate solver rules against the store into a constraint model.

Every tuple of a var declaration's forall table yields decision variables
for the trailing solver attributes. Solver derivation rules are then
instantiated binding by binding, building a symbolic database whose tuples
mix concrete values and variable references; expressions over solver values
compile to defining constraints and fresh derived variables. Solver
constraint rules instantiate hard constraints for every match of their head
pattern and regular body atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Union

from .analysis import LocalizedProgram
from .ast import (
    Abs,
    Agg,
    Arrow,
    BinOp,
    Const,
    ConstRef,
    Func,
    GoalKind,
    Neg,
    Rule,
    Term,
    Var,
)
from .config import SolverConfig
from .datalog import Store, Tup, apply_expr, compute_agg, expr_ready, term_var_set
from .solver import (
    AbsBind,
    Cond,
    CondCon,
    CountDistinct,
    Dom,
    FalseCon,
    Lin,
    LinearCon,
    MinMaxDef,
    Model,
    ReifiedEquiv,
    ScaledVariance,
    Solution,
    SumAbs,
)

COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")


class GroundingError(Exception):
    pass


@dataclass(frozen=True)
class Sym:
    """Reference to a solver variable inside a symbolic tuple."""

    vid: int

    def __repr__(self) -> str:
        return "$%d" % self.vid


SymValue = Union[int, str, Sym]


@dataclass
class VarTableInfo:
    table: str
    key_len: int
    arity: int
    located: bool
    keys: dict[tuple, dict[int, int]] = field(default_factory=dict)  # key -> pos -> vid


@dataclass
class GroundModel:
    model: Model
    var_tables: dict[str, VarTableInfo]
    objective_vid: Optional[int]
    goal_table: Optional[str]
    goal_template: Optional[tuple[SymValue, ...]]
    symbolic: dict[str, list[tuple[SymValue, ...]]]

    @property
    def var_count(self) -> int:
        return len(self.model.vars)

    def solution_facts(self, solution: Solution) -> list[Tup]:
        """Var-table tuples (and the goal tuple) under a solved assignment."""
        if solution.assignment is None:
            return []
        by_vid = {self.model.var_named(name): value
                  for name, value in solution.assignment.items()}
        out = []
        for info in self.var_tables.values():
            for key in sorted(info.keys, key=_key_sort):
                positions = info.keys[key]
                values: list[SymValue] = list(key) + [0] * (info.arity - info.key_len)
                for pos, vid in positions.items():
                    values[pos] = by_vid[vid]
                out.append(Tup(info.table, tuple(values)))
        if self.goal_table is not None and self.goal_template is not None:
            values = tuple(by_vid[v.vid] if isinstance(v, Sym) else v
                           for v in self.goal_template)
            out.append(Tup(self.goal_table, values))
        return out


def _key_sort(key: tuple):
    return tuple((0, v, "") if isinstance(v, int) else (1, 0, v) for v in key)


# ---- linear forms over Fractions ----

@dataclass
class LinF:
    coeffs: dict[int, Fraction]
    const: Fraction

    @classmethod
    def constant(cls, c) -> "LinF":
        return cls({}, Fraction(c))

    @classmethod
    def of_sym(cls, sym: Sym) -> "LinF":
        return cls({sym.vid: Fraction(1)}, Fraction(0))

    def __add__(self, other: "LinF") -> "LinF":
        coeffs = dict(self.coeffs)
        for vid, c in other.coeffs.items():
            coeffs[vid] = coeffs.get(vid, Fraction(0)) + c
        return LinF({v: c for v, c in coeffs.items() if c}, self.const + other.const)

    def __sub__(self, other: "LinF") -> "LinF":
        return self + other.scale(Fraction(-1))

    def scale(self, factor: Fraction) -> "LinF":
        if factor == 0:
            return LinF.constant(0)
        return LinF({v: c * factor for v, c in self.coeffs.items()}, self.const * factor)

    @property
    def is_constant(self) -> bool:
        return not self.coeffs

    def denominator_lcm(self) -> int:
        import math
        den = self.const.denominator
        for c in self.coeffs.values():
            den = den * c.denominator // math.gcd(den, c.denominator)
        return den

    def to_lin(self) -> Lin:
        """Integer Lin; caller must have cleared denominators."""
        if self.denominator_lcm() != 1:
            raise GroundingError("fractional coefficients in integral context: %s" % self)
        terms = tuple(sorted(((v, int(c)) for v, c in self.coeffs.items())))
        return Lin(terms, int(self.const))

    def scaled_integral(self) -> "LinF":
        return self.scale(Fraction(self.denominator_lcm()))


class Grounder:
    def __init__(self, localized: LocalizedProgram, store: Store, cfg: SolverConfig):
        self.localized = localized
        self.annotated = localized.annotated
        self.program = localized.annotated.program
        self.store = store
        self.cfg = cfg
        self.model = Model(cfg.budget_millis, cfg.branching, cfg.max_nodes)
        self.symbolic: dict[str, list[tuple[SymValue, ...]]] = {}
        self._sym_seen: dict[str, set] = {}
        self.var_tables: dict[str, VarTableInfo] = {}
        self._aux = 0
        self.consts = dict(cfg.consts)

    # -- variable creation --

    def _fresh(self, name_hint: str, dom: Dom, decision: bool = False,
               origin: Optional[tuple] = None) -> int:
        self._aux += 1
        name = "%s#%d" % (name_hint, self._aux)
        return self.model.add_var(name, dom, decision, origin)

    def ground(self) -> GroundModel:
        self._ground_decision_vars()
        self._ground_derivations()
        self._ground_constraints()
        objective_vid, goal_table, goal_template = self._ground_goal()
        return GroundModel(self.model, self.var_tables, objective_vid,
                           goal_table, goal_template, self.symbolic)

    def _add_symbolic(self, pred: str, values: tuple[SymValue, ...]):
        seen = self._sym_seen.setdefault(pred, set())
        if values in seen:
            return
        seen.add(values)
        self.symbolic.setdefault(pred, []).append(values)

    def _ground_decision_vars(self):
        for vd in self.program.var_decls:
            domain_values = self.cfg.domain_for(vd.var_table, vd.domain)
            info = VarTableInfo(vd.var_table, len(vd.bound_attrs), len(vd.var_attrs),
                                vd.located)
            self.var_tables[vd.var_table] = info
            keys = sorted(self.store.visible(vd.bound_table), key=_key_sort)
            for key in keys:
                if domain_values is None:
                    raise GroundingError(
                        "no domain for solver variable table %s: declare `in [lo,hi]` "
                        "or configure domain.%s" % (vd.var_table, vd.var_table))
                positions: dict[int, int] = {}
                values: list[SymValue] = list(key)
                for pos in vd.solver_positions():
                    label = "%s(%s)" % (vd.var_table, ",".join(str(v) for v in key))
                    if len(vd.solver_positions()) > 1:
                        label += "." + vd.var_attrs[pos]
                    vid = self.model.add_var(label, Dom.of_values(domain_values),
                                             decision=True,
                                             origin=(vd.var_table, key, pos))
                    positions[pos] = vid
                    values.append(Sym(vid))
                info.keys[key] = positions
                self._add_symbolic(vd.var_table, tuple(values))
            # Materialized solutions for other keys stay visible to rules;
            # tuples for currently pending keys are shadowed by the variables.
            for values in sorted(self.store.visible(vd.var_table), key=_key_sort):
                if values[:info.key_len] not in info.keys:
                    self._add_symbolic(vd.var_table, tuple(values))

    # -- solver derivation rules --

    def _ground_derivations(self):
        rules = [r for r in self.localized.cop_rules() if r.arrow is Arrow.DERIVE]
        derived_by: dict[str, list[Rule]] = {}
        for r in rules:
            derived_by.setdefault(r.head.name, []).append(r)
        ready = set(self.var_tables)
        ready.update(t for t in self.annotated.solver_tables if t not in derived_by
                     and t not in self.var_tables)
        pending = list(rules)
        progressed = True
        while pending and progressed:
            progressed = False
            for rule in list(pending):
                needs = {p.name for p in rule.body_predicates()
                         if p.name in self.annotated.solver_tables}
                needs -= {rule.head.name}
                if needs <= ready:
                    self._instantiate_derive(rule)
                    pending.remove(rule)
                    progressed = True
                    remaining = {r.head.name for r in pending}
                    for table in derived_by:
                        if table not in remaining:
                            ready.add(table)
        if pending:
            raise GroundingError("cyclic solver derivations: %s"
                                 % ", ".join(r.label for r in pending))

    def _instantiate_derive(self, rule: Rule):
        spec = rule.head.agg_spec()
        groups: dict[tuple, list[SymValue]] = {}
        for env in self._sym_join(rule, constraint_mode=False):
            if spec is None:
                self._emit_plain_head(rule, env)
                continue
            key_parts = []
            for a in rule.head.args:
                if isinstance(a, Agg):
                    continue
                part = env[a.name] if isinstance(a, Var) else getattr(a, "value", None)
                if isinstance(part, Sym):
                    raise GroundingError("rule %s: aggregate grouped by solver "
                                         "attribute" % rule.label)
                key_parts.append(part)
            groups.setdefault(tuple(key_parts), []).append(env[spec.over])
        if spec is not None:
            for key in sorted(groups, key=_sym_key_sort):
                members = groups[key]
                value = self._aggregate(rule, spec.fn, members)
                out: list[SymValue] = []
                mi = iter(key)
                for a in rule.head.args:
                    out.append(value if isinstance(a, Agg) else next(mi))
                self._add_symbolic(rule.head.name, tuple(out))

    def _emit_plain_head(self, rule: Rule, env: dict):
        values = []
        for a in rule.head.args:
            if isinstance(a, Var):
                values.append(env[a.name])
            elif isinstance(a, Const):
                values.append(a.value)
            elif isinstance(a, ConstRef):
                values.append(_as_int(self.consts.get(a.name), a.name))
            else:
                raise GroundingError("unsupported head term %r in rule %s"
                                     % (a, rule.label))
        values = tuple(values)
        solver_pos = self.annotated.solver_attrs.get(rule.head.name, frozenset())
        key = tuple(v for i, v in enumerate(values) if i not in solver_pos)
        if any(isinstance(k, Sym) for k in key):
            raise GroundingError("rule %s: solver value in key position of %s"
                                 % (rule.label, rule.head.name))
        seen = self._sym_seen.setdefault(rule.head.name, set())
        if values in seen:
            return
        for existing in self.symbolic.get(rule.head.name, ()):
            ekey = tuple(v for i, v in enumerate(existing) if i not in solver_pos)
            if ekey == key:
                raise GroundingError(
                    "rule %s derives %s twice for key %r with different solver values"
                    % (rule.label, rule.head.name, key))
        self._add_symbolic(rule.head.name, values)

    def _aggregate(self, rule: Rule, fn: str, members: list[SymValue]) -> SymValue:
        syms = [m for m in members if isinstance(m, Sym)]
        consts = [m for m in members if not isinstance(m, Sym)]
        if any(isinstance(c, str) for c in consts):
            raise GroundingError("aggregate %s over non-integer values" % fn)
        if not syms:
            return int(compute_agg(fn, consts))
        if fn == "COUNT":
            return len(members)
        doms = self.model.domains
        label = "%s.%s" % (rule.head.name, fn.lower())
        if fn == "SUM":
            lo = sum(consts) + sum(doms[s.vid].lo for s in syms)
            hi = sum(consts) + sum(doms[s.vid].hi for s in syms)
            target = self._fresh(label, Dom(lo, hi))
            terms = _sum_terms(syms, extra=(target, -1))
            self.model.add_constraint(LinearCon(Lin(terms, sum(consts)), "==",
                                                kind="sumDef"))
            return Sym(target)
        if fn == "SUMABS":
            offset = sum(abs(c) for c in consts)
            lo = offset
            hi = offset + sum(max(abs(doms[s.vid].lo), abs(doms[s.vid].hi)) for s in syms)
            target = self._fresh(label, Dom(lo, hi))
            items = [Lin(((s.vid, 1),), 0) for s in syms]
            self.model.add_constraint(SumAbs(target, items, offset))
            return Sym(target)
        if fn == "UNIQUE":
            n = len(set(consts)) + len(syms)
            target = self._fresh(label, Dom(0, n))
            self.model.add_constraint(CountDistinct(target, [s.vid for s in syms],
                                                    consts))
            return Sym(target)
        if fn == "STDEV":
            n = len(members)
            span = sum(max(abs(doms[s.vid].lo), abs(doms[s.vid].hi)) for s in syms) \
                + sum(abs(c) for c in consts)
            target = self._fresh(label, Dom(0, (n * 2 * span) ** 2 * n))
            self.model.add_constraint(ScaledVariance(target, [s.vid for s in syms],
                                                     consts))
            return Sym(target)
        if fn in ("MIN", "MAX"):
            los = [doms[s.vid].lo for s in syms] + consts
            his = [doms[s.vid].hi for s in syms] + consts
            target = self._fresh(label, Dom(min(los), max(his)))
            self.model.add_constraint(MinMaxDef(target, [s.vid for s in syms], consts,
                                                is_min=(fn == "MIN")))
            return Sym(target)
        raise GroundingError("unsupported solver aggregate %s" % fn)

    # -- solver constraint rules --

    def _ground_constraints(self):
        for rule in self.localized.cop_rules():
            if rule.arrow is not Arrow.CONSTRAIN:
                continue
            for head_values in list(self.symbolic.get(rule.head.name, ())):
                env0, _ = _match_symbolic(rule.head.args, head_values, {},
                                          self.consts, allow_eq=False)
                if env0 is None:
                    continue
                # Constraints are added as a side effect, once per match of
                # the regular body atoms; no matches means no constraint.
                for _ in self._sym_join(rule, constraint_mode=True, env0=env0):
                    pass

    # -- joint body enumeration --

    def _sym_join(self, rule: Rule, constraint_mode: bool,
                  env0: Optional[dict] = None) -> Iterator[dict]:
        atoms = list(rule.body_predicates())
        exprs = [b.expr for b in rule.body_exprs()]

        def tuples_for(pred: str) -> list[tuple[SymValue, ...]]:
            if pred in self.symbolic or pred in self.annotated.solver_tables:
                return list(self.symbolic.get(pred, ()))
            return [t for t in self.store.visible(pred)]

        def recurse(i: int, env: dict, remaining: list[Term],
                    eqs: list) -> Iterator[tuple[dict, list]]:
            env, remaining, ok = self._run_exprs(rule, env, remaining, constraint_mode)
            if not ok:
                return
            if i == len(atoms):
                if remaining:
                    raise GroundingError("rule %s: unbound expression(s) %s"
                                         % (rule.label,
                                            ", ".join(str(e) for e in remaining)))
                yield env, eqs
                return
            atom = atoms[i]
            solver_atom = atom.name in self.annotated.solver_tables
            for values in tuples_for(atom.name):
                env2, new_eqs = _match_symbolic(atom.args, values, env, self.consts,
                                                allow_eq=constraint_mode and solver_atom)
                if env2 is None:
                    continue
                yield from recurse(i + 1, env2, list(remaining), eqs + new_eqs)

        for env, eqs in recurse(0, dict(env0 or {}), list(exprs), []):
            for a, b in eqs:
                self._add_equality(a, b)
            yield env

    def _run_exprs(self, rule: Rule, env: dict, remaining: list[Term],
                   constraint_mode: bool):
        progress = True
        while progress:
            progress = False
            for e in list(remaining):
                if not _sym_expr_ready(e, env):
                    continue
                bound_syms = any(isinstance(env.get(v), Sym) for v in term_var_set(e))
                if not bound_syms:
                    env2 = apply_expr(e, env, self.consts)
                    if env2 is None:
                        return env, remaining, False
                    env = env2
                else:
                    env2 = self._compile_expression(rule, e, env, constraint_mode)
                    if env2 is None:
                        return env, remaining, False
                    env = env2
                remaining = [x for x in remaining if x is not e]
                progress = True
        return env, remaining, True

    # -- expression compilation --

    def _compile_expression(self, rule: Rule, expr: Term, env: dict,
                            constraint_mode: bool) -> Optional[dict]:
        if not (isinstance(expr, BinOp) and expr.op in COMPARISONS):
            raise GroundingError("rule %s: unsupported solver expression %s"
                                 % (rule.label, expr))
        left_cmp = _is_comparison(expr.left)
        right_cmp = _is_comparison(expr.right)
        if expr.op == "==" and (left_cmp or right_cmp):
            if not (left_cmp and right_cmp):
                raise GroundingError("rule %s: equivalence needs comparisons on both "
                                     "sides: %s" % (rule.label, expr))
            return self._compile_reified(rule, expr, env)
        # definition: one unbound plain variable on either side of ==
        if expr.op == "==":
            for target, other in ((expr.left, expr.right), (expr.right, expr.left)):
                if isinstance(target, Var) and target.name not in env:
                    lin = self._linearize(rule, other, env)
                    env2 = dict(env)
                    env2[target.name] = self._define(rule, target.name, lin)
                    return env2
        if not constraint_mode:
            raise GroundingError(
                "rule %s: comparison %s over solver values cannot filter a "
                "derivation" % (rule.label, expr))
        cond = self._build_cond(rule, expr, env)
        decided = _decide_constant(cond)
        if decided is True:
            return env
        if decided is False:
            self.model.add_constraint(FalseCon("rule %s: %s" % (rule.label, expr)))
            return env
        self.model.add_constraint(self._cond_constraint(cond, rule))
        return env

    def _compile_reified(self, rule: Rule, expr: BinOp, env: dict) -> Optional[dict]:
        sides = [expr.left, expr.right]
        env = dict(env)
        conds = []
        for side in sides:
            assert isinstance(side, BinOp)
            free = [v for v in term_var_set(side) if v not in env]
            if free:
                # indicator definition: (C==k) with C unbound and k in {0,1}
                target, const_side = None, None
                for t, o in ((side.left, side.right), (side.right, side.left)):
                    if isinstance(t, Var) and t.name in free:
                        target, const_side = t, o
                if (target is None or side.op != "==" or len(free) != 1
                        or term_var_set(const_side) - env.keys()):
                    raise GroundingError("rule %s: cannot compile reified side %s"
                                         % (rule.label, side))
                k = self._linearize(rule, const_side, env)
                if not k.is_constant or k.const not in (0, 1):
                    raise GroundingError("rule %s: reified indicator must compare "
                                         "against 0 or 1: %s" % (rule.label, side))
                vid = self._fresh("%s.ind" % rule.label, Dom(0, 1))
                env[target.name] = Sym(vid)
            conds.append(self._build_cond(rule, side, env))
        decided = [_decide_constant(c) for c in conds]
        if decided[0] is not None and decided[1] is not None:
            if decided[0] != decided[1]:
                self.model.add_constraint(FalseCon("rule %s: %s" % (rule.label, expr)))
            return env
        self.model.add_constraint(ReifiedEquiv(conds[0], conds[1]))
        return env

    def _build_cond(self, rule: Rule, expr: Term, env: dict) -> Cond:
        assert isinstance(expr, BinOp) and expr.op in COMPARISONS
        left, right, op = expr.left, expr.right, expr.op
        absolute = False
        if isinstance(left, Abs) and not isinstance(right, Abs):
            lin_l = self._linearize(rule, left.operand, env)
            lin_r = self._linearize(rule, right, env)
            if not lin_r.is_constant:
                # |a| op b with variable b: expand via an auxiliary variable
                lin_l = LinF.of_sym(Sym(self._materialize_abs(rule, lin_l)))
            else:
                absolute = True
        elif isinstance(right, Abs) and not isinstance(left, Abs):
            lin_r = self._linearize(rule, right.operand, env)
            lin_l = self._linearize(rule, left, env)
            if not lin_l.is_constant:
                lin_r = LinF.of_sym(Sym(self._materialize_abs(rule, lin_r)))
            else:
                absolute = True
                left, right = right, left
                op = _flip_op(op)
                lin_l, lin_r = lin_r, lin_l
        else:
            lin_l = self._linearize(rule, left, env)
            lin_r = self._linearize(rule, right, env)
        if absolute:
            # |lin_l| op rhs-const
            diff = lin_l
            rhs = lin_r.const
            scale = diff.denominator_lcm() * rhs.denominator
            diff = diff.scale(Fraction(scale))
            rhs = rhs * scale
            return Cond(diff.to_lin(), op, int(rhs), absolute=True)
        diff = lin_l - lin_r
        diff = diff.scaled_integral()
        lin = diff.to_lin()
        return Cond(Lin(lin.terms, lin.const), op, 0)

    def _cond_constraint(self, cond: Cond, rule: Rule):
        if cond.absolute:
            return CondCon(cond)
        terms, const = cond.lin.terms, cond.lin.const - cond.rhs
        if cond.op in ("==", "!="):
            return LinearCon(Lin(terms, const), cond.op)
        if cond.op == "<=":
            return LinearCon(Lin(terms, const), "<=")
        if cond.op == "<":
            return LinearCon(Lin(terms, const + 1), "<=")
        negated = tuple((v, -c) for v, c in terms)
        if cond.op == ">=":
            return LinearCon(Lin(negated, -const), "<=")
        return LinearCon(Lin(negated, -const + 1), "<=")  # >

    def _materialize_abs(self, rule: Rule, lin: LinF) -> int:
        lin = lin.scaled_integral() if lin.denominator_lcm() != 1 else lin
        ilin = lin.to_lin()
        lo, hi = ilin.bounds(self.model.domains)
        alo = 0 if lo <= 0 <= hi else min(abs(lo), abs(hi))
        ahi = max(abs(lo), abs(hi))
        target = self._fresh("%s.abs" % rule.label, Dom(alo, ahi))
        self.model.add_constraint(AbsBind(target, ilin))
        return target

    def _define(self, rule: Rule, name: str, lin: LinF) -> SymValue:
        if lin.is_constant:
            if lin.const.denominator != 1:
                raise GroundingError("rule %s: fractional value for %s"
                                     % (rule.label, name))
            return int(lin.const)
        if len(lin.coeffs) == 1 and lin.const == 0:
            (vid, coef), = lin.coeffs.items()
            if coef == 1:
                return Sym(vid)  # plain alias
        scale = lin.denominator_lcm()
        scaled = lin.scale(Fraction(scale))
        ilin = scaled.to_lin()
        lo, hi = ilin.bounds(self.model.domains)
        if scale != 1:
            lo, hi = -((-lo) // scale), hi // scale  # value bounds of lin itself
        target = self._fresh("%s.%s" % (rule.label, name), Dom(lo, hi))
        terms = ilin.terms + ((target, -scale),)
        self.model.add_constraint(LinearCon(Lin(tuple(sorted(terms)), ilin.const), "=="))
        return Sym(target)

    def _add_equality(self, a: SymValue, b: SymValue):
        if isinstance(a, Sym) and isinstance(b, Sym):
            if a.vid == b.vid:
                return
            self.model.add_constraint(LinearCon(Lin(((a.vid, 1), (b.vid, -1)), 0), "=="))
        elif isinstance(a, Sym):
            self.model.add_constraint(LinearCon(Lin(((a.vid, 1),), -_as_int(b, "eq")),
                                                "=="))
        elif isinstance(b, Sym):
            self.model.add_constraint(LinearCon(Lin(((b.vid, 1),), -_as_int(a, "eq")),
                                                "=="))
        elif a != b:
            self.model.add_constraint(FalseCon("conflicting values %r vs %r" % (a, b)))

    def _linearize(self, rule: Rule, term: Term, env: dict) -> LinF:
        if isinstance(term, Const):
            if not isinstance(term.value, int):
                raise GroundingError("rule %s: string in arithmetic" % rule.label)
            return LinF.constant(term.value)
        if isinstance(term, ConstRef):
            value = self.consts.get(term.name)
            if value is None:
                raise GroundingError("rule %s: unknown constant %s"
                                     % (rule.label, term.name))
            return LinF.constant(value)
        if isinstance(term, Var):
            value = env.get(term.name)
            if value is None:
                raise GroundingError("rule %s: unbound variable %s in expression"
                                     % (rule.label, term.name))
            if isinstance(value, Sym):
                return LinF.of_sym(value)
            if isinstance(value, str):
                raise GroundingError("rule %s: string value in arithmetic"
                                     % rule.label)
            return LinF.constant(value)
        if isinstance(term, Neg):
            return self._linearize(rule, term.operand, env).scale(Fraction(-1))
        if isinstance(term, Abs):
            inner = self._linearize(rule, term.operand, env)
            if inner.is_constant:
                return LinF.constant(abs(inner.const))
            return LinF.of_sym(Sym(self._materialize_abs(rule, inner)))
        if isinstance(term, Func):
            lins = [self._linearize(rule, a, env) for a in term.args]
            if all(l.is_constant for l in lins):
                vals = [l.const for l in lins]
                if term.name == "max":
                    return LinF.constant(max(vals))
                if term.name == "min":
                    return LinF.constant(min(vals))
                raise GroundingError("rule %s: unknown function %s"
                                     % (rule.label, term.name))
            if term.name not in ("max", "min"):
                raise GroundingError("rule %s: unknown function %s"
                                     % (rule.label, term.name))
            vids, consts = [], []
            for l in lins:
                if l.is_constant:
                    consts.append(_frac_int(l.const, rule))
                else:
                    vids.append(self._materialize(rule, l))
            doms = self.model.domains
            los = [doms[v].lo for v in vids] + consts
            his = [doms[v].hi for v in vids] + consts
            is_min = term.name == "min"
            lo, hi = (min(los), min(his)) if is_min else (max(los), max(his))
            target = self._fresh("%s.%s" % (rule.label, term.name), Dom(lo, hi))
            self.model.add_constraint(MinMaxDef(target, vids, consts, is_min))
            return LinF.of_sym(Sym(target))
        if isinstance(term, BinOp):
            if term.op in COMPARISONS:
                raise GroundingError("rule %s: comparison nested in arithmetic: %s"
                                     % (rule.label, term))
            left = self._linearize(rule, term.left, env)
            right = self._linearize(rule, term.right, env)
            if term.op == "+":
                return left + right
            if term.op == "-":
                return left - right
            if term.op == "*":
                if left.is_constant:
                    return right.scale(left.const)
                if right.is_constant:
                    return left.scale(right.const)
                raise GroundingError("rule %s: nonlinear product of solver values: %s"
                                     % (rule.label, term))
            if term.op == "/":
                if right.is_constant and right.const != 0:
                    return left.scale(Fraction(1) / right.const)
                raise GroundingError("rule %s: division by solver value: %s"
                                     % (rule.label, term))
        raise GroundingError("rule %s: cannot linearize %s" % (rule.label, term))

    def _materialize(self, rule: Rule, lin: LinF) -> int:
        if len(lin.coeffs) == 1 and lin.const == 0:
            (vid, coef), = lin.coeffs.items()
            if coef == 1:
                return vid
        sym = self._define(rule, "aux", lin)
        if isinstance(sym, Sym):
            return sym.vid
        vid = self._fresh("%s.const" % rule.label, Dom(sym, sym))
        return vid

    # -- goal --

    def _ground_goal(self):
        goal = self.program.goal
        if goal is None or goal.table is None:
            return None, None, None
        matches = []
        for values in self.symbolic.get(goal.table, ()):
            env, _ = _match_symbolic(goal.table_args, values, {}, self.consts,
                                     allow_eq=False)
            if env is not None:
                matches.append((values, env))
        if not matches:
            return None, None, None
        if len(matches) > 1:
            raise GroundingError("goal table %s has %d tuples; objective is ambiguous"
                                 % (goal.table, len(matches)))
        values, env = matches[0]
        attr_value = env[goal.attr]
        if isinstance(attr_value, Sym):
            vid = attr_value.vid
        else:
            vid = self._fresh("objective.const", Dom(attr_value, attr_value))
        if goal.kind is not GoalKind.SATISFY:
            self.model.objective = (goal.kind.value, vid)
        return vid, goal.table, tuple(values)


def ground_model(localized: LocalizedProgram, store: Store, cfg: SolverConfig,
                 zero_hint: bool = True) -> GroundModel:
    """Ground solver rules against quiescent store state.

    With zero_hint, an all-zeros assignment of the decision variables is
    offered to the solver as a warm start whenever every decision domain
    contains zero (it is discarded if infeasible); this makes "change
    nothing" the baseline incumbent for migration-style problems.
    """
    grounder = Grounder(localized, store, cfg)
    gm = grounder.ground()
    model = gm.model
    decision = model.decision_vids
    if zero_hint and decision and all(model.domains[v].contains(0) for v in decision):
        model.hint = {v: 0 for v in decision}
    return gm


def compile_expression(rule: Rule, expr: Term, env: dict, grounder: Grounder,
                       constraint_mode: bool = False) -> Optional[dict]:
    """Compile one body expression; exposed for tests and tooling."""
    return grounder._compile_expression(rule, expr, env, constraint_mode)


# ---- helpers ----

def _sum_terms(syms: list[Sym], extra: tuple[int, int]) -> tuple[tuple[int, int], ...]:
    acc: dict[int, int] = {}
    for s in syms:
        acc[s.vid] = acc.get(s.vid, 0) + 1
    acc[extra[0]] = acc.get(extra[0], 0) + extra[1]
    return tuple(sorted((v, c) for v, c in acc.items() if c))


def _sym_key_sort(key: tuple):
    out = []
    for v in key:
        if isinstance(v, Sym):
            out.append((2, v.vid, ""))
        elif isinstance(v, int):
            out.append((0, v, ""))
        else:
            out.append((1, 0, v))
    return tuple(out)


def _flip_op(op: str) -> str:
    return {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "==", "!=": "!="}[op]


def _sym_expr_ready(expr: Term, env: dict) -> bool:
    """expr_ready extended with the reified-indicator definition pattern."""
    if expr_ready(expr, env):
        return True
    if (isinstance(expr, BinOp) and expr.op == "=="
            and _is_comparison(expr.left) and _is_comparison(expr.right)):
        free = term_var_set(expr) - env.keys()
        if len(free) == 1:
            name = next(iter(free))
            for side in (expr.left, expr.right):
                if not isinstance(side, BinOp):
                    continue
                for t, o in ((side.left, side.right), (side.right, side.left)):
                    if (isinstance(t, Var) and t.name == name
                            and not (term_var_set(o) - env.keys())):
                        return True
    return False


def _is_comparison(term: Term) -> bool:
    return isinstance(term, BinOp) and term.op in COMPARISONS


def _decide_constant(cond: Cond) -> Optional[bool]:
    if cond.lin.terms:
        return None
    value = cond.lin.const
    if cond.absolute:
        value = abs(value)
    return {"<": value < cond.rhs, "<=": value <= cond.rhs, ">": value > cond.rhs,
            ">=": value >= cond.rhs, "==": value == cond.rhs,
            "!=": value != cond.rhs}[cond.op]


def _as_int(value, what: str) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value
    if isinstance(value, Fraction) and value.denominator == 1:
        return int(value)
    raise GroundingError("expected integer for %s, got %r" % (what, value))


def _frac_int(value: Fraction, rule: Rule) -> int:
    if value.denominator != 1:
        raise GroundingError("rule %s: fractional constant where integer needed"
                             % rule.label)
    return int(value)


def _match_symbolic(args, values, env: dict, consts, allow_eq: bool):
    """Match pattern args against a symbolic tuple.

    Returns (env, equality pairs) or (None, []) on mismatch. Equality pairs
    arise when a bound value meets a different symbolic value and the caller
    allows equating them (constraint-rule bodies).
    """
    if len(args) != len(values):
        return None, []
    eqs: list[tuple] = []
    out = dict(env)
    for term, val in zip(args, values):
        if isinstance(term, Var):
            if term.name in out:
                bound = out[term.name]
                if bound == val:
                    continue
                sym_involved = isinstance(bound, Sym) or isinstance(val, Sym)
                if sym_involved and allow_eq:
                    eqs.append((bound, val))
                    continue
                if sym_involved:
                    raise GroundingError(
                        "join on solver attribute via variable %s" % term.name)
                return None, []
            out[term.name] = val
        elif isinstance(term, Const):
            if isinstance(val, Sym):
                if allow_eq:
                    eqs.append((term.value, val))
                    continue
                raise GroundingError("constant pattern against solver value")
            if term.value != val:
                return None, []
        elif isinstance(term, ConstRef):
            want = consts.get(term.name)
            if isinstance(val, Sym):
                if allow_eq:
                    eqs.append((_as_int(want, term.name), val))
                    continue
                raise GroundingError("constant pattern against solver value")
            if _as_int(want, term.name) != val:
                return None, []
        else:
            raise GroundingError("unsupported pattern term %r" % (term,))
    return out, eqs
