"""Syntax-level validation of parsed Colog programs.

check_program returns diagnostics (it never raises): range restriction on
rules, arity consistency per predicate, location-specifier well-formedness,
and goal/var declaration sanity.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ast import Agg, Arrow, BoolExpr, Predicate, Program, Rule, Var, literal_vars, term_vars


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    severity: str
    message: str

    def render(self, filename: str = "<input>") -> str:
        return "%s:%d:%d: %s: %s" % (filename, self.line, self.col, self.severity, self.message)


def _error(line: int, message: str) -> Diagnostic:
    return Diagnostic(line, 1, "error", message)


def check_program(program: Program) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    diags.extend(_check_arities(program))
    diags.extend(_check_locations(program))
    for rule in program.rules:
        diags.extend(_check_rule(rule))
    diags.extend(_check_goal(program))
    diags.extend(_check_var_decls(program))
    return diags


def _pred_occurrences(program: Program):
    for rule in program.rules:
        yield rule.head, rule.line
        for p in rule.body_predicates():
            yield p, rule.line
    if program.goal is not None and program.goal.table is not None:
        yield (Predicate(program.goal.table, program.goal.table_args,
                         program.goal.located), program.goal.line)
    for vd in program.var_decls:
        yield Predicate(vd.var_table, tuple(Var(a) for a in vd.var_attrs), vd.located), vd.line
        yield Predicate(vd.bound_table, tuple(Var(a) for a in vd.bound_attrs), vd.located), vd.line


def _check_arities(program: Program) -> list[Diagnostic]:
    diags = []
    seen: dict[str, int] = {}
    for pred, line in _pred_occurrences(program):
        if pred.name in seen:
            if seen[pred.name] != pred.arity:
                diags.append(_error(line, "arity mismatch: %s used with arity %d and %d"
                                    % (pred.name, seen[pred.name], pred.arity)))
        else:
            seen[pred.name] = pred.arity
    return diags


def _check_locations(program: Program) -> list[Diagnostic]:
    diags = []
    located: dict[str, bool] = {}
    for pred, line in _pred_occurrences(program):
        if pred.name in located:
            if located[pred.name] != pred.located:
                diags.append(_error(line, "predicate %s used both with and without a location "
                                    "specifier" % pred.name))
        else:
            located[pred.name] = pred.located
        if pred.located and not (pred.args and isinstance(pred.args[0], Var)):
            diags.append(_error(line, "location attribute of %s must be a variable" % pred.name))
    return diags


def _check_rule(rule: Rule) -> list[Diagnostic]:
    diags = []
    body_pred_vars = set()
    for p in rule.body_predicates():
        for a in p.args:
            body_pred_vars.update(term_vars(a))
    body_vars = set()
    for lit in rule.body:
        body_vars.update(literal_vars(lit))
    head_vars = set()
    for a in rule.head.args:
        head_vars.update(term_vars(a))

    agg_count = sum(1 for a in rule.head.args if isinstance(a, Agg))
    if agg_count > 1:
        diags.append(_error(rule.line, "rule %s: at most one aggregate per head" % rule.label))
    if agg_count and rule.arrow is Arrow.CONSTRAIN:
        diags.append(_error(rule.line, "rule %s: aggregate in constraint head" % rule.label))

    if rule.arrow is Arrow.DERIVE:
        missing = head_vars - body_vars
        if missing:
            diags.append(_error(rule.line, "unsafe rule %s: head variable%s %s missing from body"
                                % (rule.label, "s" if len(missing) > 1 else "",
                                   ", ".join(sorted(missing)))))
    else:
        # Constraint rules: body variables must be bound by the head pattern
        # or by a body predicate; expression-only variables are unbound.
        bound = head_vars | body_pred_vars
        for lit in rule.body:
            if isinstance(lit, BoolExpr):
                unbound = set(term_vars(lit.expr)) - bound
                if unbound:
                    diags.append(_error(rule.line, "rule %s: unbound variable%s %s in constraint "
                                        "body" % (rule.label, "s" if len(unbound) > 1 else "",
                                                  ", ".join(sorted(unbound)))))
    return diags


def _check_goal(program: Program) -> list[Diagnostic]:
    goal = program.goal
    if goal is None or goal.table is None:
        return []
    diags = []
    mentioned = {r.head.name for r in program.rules}
    for r in program.rules:
        mentioned.update(p.name for p in r.body_predicates())
    mentioned.update(vd.var_table for vd in program.var_decls)
    if goal.table not in mentioned:
        diags.append(_error(goal.line, "goal table %s does not appear in the program"
                            % goal.table))
    return diags


def _check_var_decls(program: Program) -> list[Diagnostic]:
    diags = []
    seen = set()
    for vd in program.var_decls:
        if vd.var_table in seen:
            diags.append(_error(vd.line, "duplicate var declaration for %s" % vd.var_table))
        seen.add(vd.var_table)
        prefix = vd.var_attrs[: len(vd.bound_attrs)]
        if prefix != vd.bound_attrs:
            diags.append(_error(vd.line, "var %s attributes must extend %s attributes"
                                % (vd.var_table, vd.bound_table)))
        elif not vd.solver_attrs():
            diags.append(_error(vd.line, "var %s declares no solver attributes beyond %s"
                                % (vd.var_table, vd.bound_table)))
        if vd.domain is not None and vd.domain[0] > vd.domain[1]:
            diags.append(_error(vd.line, "var %s: empty domain [%d,%d]"
                                % ((vd.var_table,) + vd.domain)))
    return diags
