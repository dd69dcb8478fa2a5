"""Static analysis of Colog programs.

Tags solver attributes and tables by least-fixpoint propagation from var
declarations, classifies rules (regular vs solver derivation vs solver
constraint), enforces solver-specific safety rules, and rewrites rules whose
bodies span multiple node locations into shippable fragment rules plus local
residual rules.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .ast import (
    Agg,
    Arrow,
    BoolExpr,
    Literal,
    Predicate,
    Program,
    Rule,
    Var,
    literal_vars,
    term_vars,
)
from .checks import Diagnostic, check_program


class AnalysisError(Exception):
    pass


class RuleClass(enum.Enum):
    REGULAR = "regular"
    SOLVER_DERIVATION = "solverDerivation"
    SOLVER_CONSTRAINT = "solverConstraint"


class ExecBucket(enum.Enum):
    ENGINE = "engine"          # evaluated incrementally over materialized tuples
    ENGINE_UPDATE = "update"   # event-style replacement of the matched head fact
    COP = "cop"                # instantiated into the constraint model


@dataclass(frozen=True)
class RuleInfo:
    klass: RuleClass
    distributed: bool = False  # body mentions more than one location variable
    remote_head: bool = False  # head location differs from the body location
    update: bool = False
    bucket: ExecBucket = ExecBucket.ENGINE


@dataclass(frozen=True)
class AnnotatedProgram:
    program: Program
    solver_attrs: dict[str, frozenset[int]]
    solver_tables: frozenset[str]
    rule_info: dict[str, RuleInfo] = field(default_factory=dict)
    event_tables: frozenset[str] = frozenset()
    diagnostics: tuple[Diagnostic, ...] = ()

    def is_solver_pos(self, pred: str, pos: int) -> bool:
        return pos in self.solver_attrs.get(pred, ())

    def info(self, label: str) -> RuleInfo:
        return self.rule_info[label]


def _body_loc_vars(rule: Rule) -> list[str]:
    seen = []
    for p in rule.body_predicates():
        lv = p.loc_var()
        if lv is not None and lv not in seen:
            seen.append(lv)
    return seen


def _is_update_rule(rule: Rule, var_tables: frozenset[str]) -> bool:
    """Self-referential rules triggered by a solver variable table.

    These replace the matched head fact when the trigger arrives (the
    trigger table behaves as a transient event stream), as opposed to
    ordinary recursion such as transitive closure. The self atom must live
    at the head's own location: a var-table head derived from the same
    table at another location is propagation, not an update.
    """
    if rule.arrow is not Arrow.DERIVE:
        return False
    self_atoms = [p for p in rule.body_predicates()
                  if p.name == rule.head.name and p.loc_var() == rule.head.loc_var()]
    if not self_atoms:
        return False
    others = {p.name for p in rule.body_predicates()} - {rule.head.name}
    return bool(others & var_tables)


def infer_solver_tables(program: Program) -> AnnotatedProgram:
    """Least-fixpoint tagging of solver attribute positions per predicate."""
    solver_attrs: dict[str, set[int]] = {}
    var_tables = program.var_tables
    for vd in program.var_decls:
        solver_attrs.setdefault(vd.var_table, set()).update(vd.solver_positions())

    update_labels = {r.label for r in program.rules if _is_update_rule(r, var_tables)}

    changed = True
    while changed:
        changed = False
        for rule in program.rules:
            if rule.arrow is not Arrow.DERIVE or rule.label in update_labels:
                continue
            tainted = _rule_taint(rule, solver_attrs)
            for pos, term in enumerate(rule.head.args):
                name = None
                if isinstance(term, Var):
                    name = term.name
                elif isinstance(term, Agg):
                    name = term.var.name
                if name is not None and name in tainted:
                    positions = solver_attrs.setdefault(rule.head.name, set())
                    if pos not in positions:
                        positions.add(pos)
                        changed = True

    frozen = {p: frozenset(s) for p, s in solver_attrs.items() if s}
    tables = frozenset(frozen)
    events = frozenset(
        t for t in var_tables
        if any(r.label in update_labels and
               t in {p.name for p in r.body_predicates()}
               for r in program.rules))
    return AnnotatedProgram(program, frozen, tables, event_tables=events)


def _rule_taint(rule: Rule, solver_attrs: dict[str, set[int]]) -> set[str]:
    """Variables in the rule body that depend on solver attributes."""
    tainted: set[str] = set()
    for p in rule.body_predicates():
        positions = solver_attrs.get(p.name, ())
        for i, term in enumerate(p.args):
            if i in positions and isinstance(term, Var):
                tainted.add(term.name)
    changed = True
    while changed:
        changed = False
        for b in rule.body_exprs():
            vs = set(term_vars(b.expr))
            if vs & tainted and not vs <= tainted:
                tainted |= vs
                changed = True
    return tainted


def classify_rules(annotated: AnnotatedProgram) -> AnnotatedProgram:
    """Fill per-rule class, distribution flags, and execution bucket."""
    program = annotated.program
    var_tables = program.var_tables
    info: dict[str, RuleInfo] = {}
    diags: list[Diagnostic] = []
    for rule in program.rules:
        touched = {rule.head.name} | {p.name for p in rule.body_predicates()}
        is_solver = bool(touched & annotated.solver_tables)
        if rule.arrow is Arrow.CONSTRAIN:
            klass = RuleClass.SOLVER_CONSTRAINT
            if not is_solver:
                diags.append(Diagnostic(rule.line, 1, "error",
                                        "constraint rule %s involves no solver table"
                                        % rule.label))
        elif is_solver:
            klass = RuleClass.SOLVER_DERIVATION
        else:
            klass = RuleClass.REGULAR

        body_locs = _body_loc_vars(rule)
        head_loc = rule.head.loc_var()
        if rule.arrow is Arrow.CONSTRAIN:
            # The head pattern reads the solver table at its own location,
            # so a constraint whose body lives elsewhere is distributed.
            span = set(body_locs) | ({head_loc} if head_loc else set())
            distributed = len(span) > 1
            remote_head = False
        else:
            distributed = len(body_locs) > 1
            remote_head = (head_loc is not None and bool(body_locs)
                           and head_loc not in body_locs)
        update = _is_update_rule(rule, var_tables)

        if update:
            bucket = ExecBucket.ENGINE_UPDATE
        elif klass is RuleClass.REGULAR:
            bucket = ExecBucket.ENGINE
        elif remote_head:
            # Solver-table heads shipped across nodes carry materialized
            # values; the receiving engine treats them as ordinary tuples.
            bucket = ExecBucket.ENGINE
        else:
            bucket = ExecBucket.COP
        info[rule.label] = RuleInfo(klass, distributed, remote_head, update, bucket)
    return replace(annotated, rule_info=info,
                   diagnostics=annotated.diagnostics + tuple(diags))


def check_safety(annotated: AnnotatedProgram) -> list[Diagnostic]:
    program = annotated.program
    diags: list[Diagnostic] = []
    for rule in program.rules:
        if rule.arrow is not Arrow.DERIVE:
            continue
        # Joins on solver attributes are rejected: they would require
        # enumerating solver values during relational evaluation.
        solver_occurrences: dict[str, int] = {}
        for p in rule.body_predicates():
            for i, term in enumerate(p.args):
                if isinstance(term, Var) and annotated.is_solver_pos(p.name, i):
                    solver_occurrences[term.name] = solver_occurrences.get(term.name, 0) + 1
        for name, count in solver_occurrences.items():
            if count > 1:
                diags.append(Diagnostic(rule.line, 1, "error",
                                        "rule %s joins on solver attribute %s"
                                        % (rule.label, name)))
    goal = program.goal
    if goal is not None and goal.table is not None:
        pos = next((i for i, a in enumerate(goal.table_args)
                    if isinstance(a, Var) and a.name == goal.attr), None)
        if pos is None or not annotated.is_solver_pos(goal.table, pos):
            diags.append(Diagnostic(goal.line, 1, "error",
                                    "goal not solver-dependent: %s.%s is a regular attribute"
                                    % (goal.table, goal.attr)))
    # A var-declared table may not also be derived at its own location: the
    # solver owns those tuples. Remote-headed propagation rules (shipping
    # materialized values) and update rules are fine.
    for rule in program.rules:
        if rule.arrow is not Arrow.DERIVE:
            continue
        ri = annotated.rule_info.get(rule.label)
        if rule.head.name in program.var_tables:
            if ri is None or not (ri.remote_head or ri.update):
                diags.append(Diagnostic(rule.line, 1, "error",
                                        "rule %s derives var table %s at its own location"
                                        % (rule.label, rule.head.name)))
    return diags


@dataclass(frozen=True)
class LocalizedProgram:
    annotated: AnnotatedProgram
    rules: tuple[Rule, ...]
    rule_info: dict[str, RuleInfo]
    tmp_tables: frozenset[str]
    pull_labels: frozenset[str]  # fragment rules evaluated on demand
    diagnostics: tuple[Diagnostic, ...] = ()

    def engine_rules(self) -> list[Rule]:
        return [r for r in self.rules
                if self.rule_info[r.label].bucket is not ExecBucket.COP
                and r.label not in self.pull_labels]

    def pull_rules(self) -> list[Rule]:
        return [r for r in self.rules if r.label in self.pull_labels]

    def cop_rules(self) -> list[Rule]:
        return [r for r in self.rules
                if self.rule_info[r.label].bucket is ExecBucket.COP]

    def update_labels(self) -> frozenset[str]:
        return frozenset(l for l, i in self.rule_info.items() if i.update)


def localize_program(annotated: AnnotatedProgram) -> LocalizedProgram:
    """Split rules whose bodies span several locations into fragment + residual.

    For each remote location group, body literals at that location become a
    new rule deriving a tmp predicate homed at the original rule's location;
    the residual rule joins the tmp table locally. Fragment rules born from
    solver rules are pulled on demand during link negotiation; those born
    from regular rules run continuously.
    """
    program = annotated.program
    out_rules: list[Rule] = []
    out_info: dict[str, RuleInfo] = dict(annotated.rule_info)
    tmp_tables: list[str] = []
    pull_labels: list[str] = []
    diags: list[Diagnostic] = []

    for rule in program.rules:
        info = annotated.rule_info[rule.label]
        if not info.distributed or info.update:
            out_rules.append(rule)
            continue
        home = rule.head.loc_var()
        body_locs = _body_loc_vars(rule)
        if home is None or (rule.arrow is Arrow.DERIVE and home not in body_locs):
            diags.append(Diagnostic(rule.line, 1, "error",
                                    "rule %s: cannot localize, head location %s not in body"
                                    % (rule.label, home)))
            out_rules.append(rule)
            continue
        remote_locs = [lv for lv in body_locs if lv != home]
        groups: dict[str, list[Literal]] = {lv: [] for lv in remote_locs}
        residual_body: list[Optional[Literal]] = []
        first_atom_slot: dict[str, int] = {}
        for lit in rule.body:
            if isinstance(lit, Predicate) and lit.loc_var() in groups:
                lv = lit.loc_var()
                groups[lv].append(lit)
                if lv not in first_atom_slot:
                    first_atom_slot[lv] = len(residual_body)
                    residual_body.append(None)  # placeholder for the tmp atom
            else:
                residual_body.append(lit)

        for k, lv in enumerate(remote_locs):
            frag = groups[lv]
            unshippable = [p.name for p in frag
                           if isinstance(p, Predicate)
                           and p.name in annotated.solver_tables
                           and p.name not in program.var_tables]
            if unshippable:
                diags.append(Diagnostic(rule.line, 1, "error",
                                        "rule %s: remote fragment at @%s references solver "
                                        "table(s) %s whose values exist only inside a "
                                        "constraint model" % (rule.label, lv,
                                                              ", ".join(unshippable))))
            tmp_name = "%s_tmp" % rule.label if len(remote_locs) == 1 \
                else "%s_tmp%d" % (rule.label, k + 1)
            frag_vars: list[str] = []
            for p in frag:
                for v in literal_vars(p):
                    if v != home and v not in frag_vars:
                        frag_vars.append(v)
            tmp_head = Predicate(tmp_name,
                                 (Var(home),) + tuple(Var(v) for v in frag_vars),
                                 located=True)
            tmp_rule = Rule(tmp_name, tmp_head, Arrow.DERIVE, tuple(frag), line=rule.line)
            is_pull = info.klass is not RuleClass.REGULAR
            if is_pull:
                pull_labels.append(tmp_name)
            elif home not in {v for p in frag for v in literal_vars(p)}:
                diags.append(Diagnostic(rule.line, 1, "error",
                                        "rule %s: fragment at @%s does not bind home "
                                        "location %s" % (rule.label, lv, home)))
            out_rules.append(tmp_rule)
            out_info[tmp_name] = RuleInfo(RuleClass.REGULAR, distributed=False,
                                          remote_head=True, bucket=ExecBucket.ENGINE)
            tmp_tables.append(tmp_name)
            residual_body[first_atom_slot[lv]] = tmp_head

        residual = Rule(rule.label, rule.head, rule.arrow,
                        tuple(lit for lit in residual_body if lit is not None),
                        line=rule.line)
        out_rules.append(residual)
        out_info[rule.label] = replace(info, distributed=False)

    return LocalizedProgram(annotated, tuple(out_rules), out_info,
                            frozenset(tmp_tables), frozenset(pull_labels),
                            tuple(diags))


def analyze(program: Program, *, localize: bool = True
            ) -> tuple[AnnotatedProgram, Optional[LocalizedProgram], list[Diagnostic]]:
    """Run the full pipeline; returns (annotated, localized, diagnostics)."""
    diags = list(check_program(program))
    annotated = classify_rules(infer_solver_tables(program))
    diags.extend(annotated.diagnostics)
    diags.extend(check_safety(annotated))
    localized = None
    if localize:
        localized = localize_program(annotated)
        diags.extend(localized.diagnostics)
    return annotated, localized, diags


def explain_annotations(annotated: AnnotatedProgram) -> str:
    """Tab-separated dump of attribute tags and rule classes."""
    lines = []
    preds: dict[str, int] = {}
    program = annotated.program
    for rule in program.rules:
        for p in [rule.head, *rule.body_predicates()]:
            preds.setdefault(p.name, p.arity)
    for vd in program.var_decls:
        preds.setdefault(vd.var_table, len(vd.var_attrs))
        preds.setdefault(vd.bound_table, len(vd.bound_attrs))
    for name in sorted(preds):
        for i in range(preds[name]):
            tag = "solver" if annotated.is_solver_pos(name, i) else "regular"
            lines.append("attr\t%s\t%d\t%s" % (name, i, tag))
    for rule in program.rules:
        info = annotated.rule_info.get(rule.label)
        if info is None:
            continue
        flags = []
        if info.distributed:
            flags.append("distributed")
        if info.remote_head:
            flags.append("remoteHead")
        if info.update:
            flags.append("update")
        lines.append("rule\t%s\t%s\t%s" % (rule.label, info.klass.value, ",".join(flags)))
    return "\n".join(lines) + "\n"


def register_program(store, localized: LocalizedProgram):
    """Install the engine-executable subset of a localized program in a store.

    Declares the catalog (including var and goal tables), registers delta
    rules, aggregate views, and update rules. Fragment rules marked for
    on-demand evaluation are not installed.
    """
    program = localized.annotated.program
    for vd in program.var_decls:
        store.declare(vd.var_table, len(vd.var_attrs), vd.located)
        store.declare(vd.bound_table, len(vd.bound_attrs), vd.located)
    if program.goal is not None and program.goal.table is not None:
        located = any(p.located for p in _goal_occurrences(program))
        store.declare(program.goal.table, len(program.goal.table_args), located)
    for rule in localized.rules:
        for p in [rule.head, *rule.body_predicates()]:
            store.declare(p.name, p.arity, p.located)
    store.register_rules(
        localized.engine_rules(),
        update_labels=localized.update_labels(),
        event_preds=localized.annotated.event_tables,
        var_tables=program.var_tables,
    )
    return store


def _goal_occurrences(program: Program) -> Iterable[Predicate]:
    goal = program.goal
    if goal is None or goal.table is None:
        return
    for rule in program.rules:
        if rule.head.name == goal.table:
            yield rule.head
        for p in rule.body_predicates():
            if p.name == goal.table:
                yield p
