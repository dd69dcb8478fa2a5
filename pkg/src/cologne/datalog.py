"""Materialized relational store with incremental bottom-up rule evaluation.

Inserts cascade through compiled delta rules with per-tuple derivation
counts (pipelined, one delta at a time, FIFO). Deletions use a
delete/re-derive pass so that recursive programs over cyclic data retract
correctly. Aggregate rules are maintained as per-group views: on any change
to a body predicate the view is recomputed and the per-group differences are
emitted as delete-old/insert-new pairs.

Two rule forms get special treatment:

* update rules (head predicate also in the body, triggered by a solver
  variable table): executed as event-style replacements of the matched head
  fact rather than monotone derivations;
* event predicates (solver variable tables consumed by update rules): their
  tuples fire rules once and are never stored.

Rule heads whose location attribute differs from the owning node are not
stored; they are emitted through an outbox (with retractions when stored
support disappears) for the runtime to deliver.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Optional, Union

from .ast import (
    Abs,
    Agg,
    BinOp,
    BoolExpr,
    Const,
    ConstRef,
    Func,
    Neg,
    Predicate,
    Rule,
    Term,
    Var,
)

log = logging.getLogger(__name__)

Value = Union[int, str]


class EngineError(Exception):
    pass


class FixpointBudgetExceeded(EngineError):
    pass


@dataclass(frozen=True)
class Tup:
    pred: str
    values: tuple[Value, ...]

    def __str__(self) -> str:
        return "%s(%s)" % (self.pred, ",".join(str(v) for v in self.values))


@dataclass(frozen=True)
class Delta:
    tup: Tup
    sign: int  # +1 insert, -1 delete

    def __str__(self) -> str:
        return "%s%s" % ("+" if self.sign > 0 else "-", self.tup)


def value_sort_key(values: Iterable[Value]):
    return tuple((0, v, "") if isinstance(v, int) else (1, 0, v) for v in values)


# ---- scalar expression evaluation ----

Number = Union[int, Fraction]


def trunc_div(a: int, b: int) -> int:
    """Integer division truncating toward zero."""
    if b == 0:
        raise EngineError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def eval_term(term: Term, env: dict[str, Value], consts: dict[str, Number]):
    """Evaluate a ground term to int/str/Fraction/bool."""
    if isinstance(term, Var):
        return env[term.name]
    if isinstance(term, Const):
        return term.value
    if isinstance(term, ConstRef):
        if term.name not in consts:
            raise EngineError("unknown constant %r" % term.name)
        return consts[term.name]
    if isinstance(term, Neg):
        return -_num(eval_term(term.operand, env, consts))
    if isinstance(term, Abs):
        return abs(_num(eval_term(term.operand, env, consts)))
    if isinstance(term, Func):
        args = [eval_term(a, env, consts) for a in term.args]
        if term.name == "max":
            return max(_num(a) for a in args)
        if term.name == "min":
            return min(_num(a) for a in args)
        raise EngineError("unknown function %r" % term.name)
    if isinstance(term, BinOp):
        left = eval_term(term.left, env, consts)
        right = eval_term(term.right, env, consts)
        op = term.op
        if op in ("==", "!="):
            eq = left == right
            return eq if op == "==" else not eq
        if op in ("<", "<=", ">", ">="):
            ln, rn = _num(left), _num(right)
            return {"<": ln < rn, "<=": ln <= rn, ">": ln > rn, ">=": ln >= rn}[op]
        ln, rn = _num(left), _num(right)
        if op == "+":
            return ln + rn
        if op == "-":
            return ln - rn
        if op == "*":
            return ln * rn
        if op == "/":
            if isinstance(ln, int) and isinstance(rn, int):
                return trunc_div(ln, rn)
            return Fraction(ln) / Fraction(rn)
    raise EngineError("cannot evaluate term %r" % (term,))


def _num(v) -> Number:
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (int, Fraction)):
        return v
    raise EngineError("expected a number, got %r" % (v,))


def _to_value(v) -> Value:
    """Coerce an evaluated expression result to a storable tuple value."""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, Fraction):
        # exact when integral; otherwise truncate toward zero
        return trunc_div(v.numerator, v.denominator)
    return v


def term_var_set(term: Term) -> frozenset[str]:
    from .ast import term_vars

    return frozenset(term_vars(term))


def apply_expr(expr: Term, env: dict[str, Value], consts) -> Optional[dict[str, Value]]:
    """Evaluate a body expression under env; assignments extend env.

    Returns the (possibly extended) env when the expression holds, or None
    when it evaluates to false. An equality with exactly one unbound plain
    variable on either side acts as an assignment.
    """
    if isinstance(expr, BinOp) and expr.op == "==":
        for target, other in ((expr.left, expr.right), (expr.right, expr.left)):
            if isinstance(target, Var) and target.name not in env:
                if term_var_set(other) <= env.keys():
                    value = _to_value(eval_term(other, env, consts))
                    env2 = dict(env)
                    env2[target.name] = value
                    return env2
                return None  # not ready; caller retries later
    result = eval_term(expr, env, consts)
    if not isinstance(result, bool):
        raise EngineError("body expression %s is not boolean" % expr)
    return env if result else None


def expr_ready(expr: Term, env: dict[str, Value]) -> bool:
    """Whether the expression can be evaluated (or used as an assignment) now."""
    free = term_var_set(expr) - env.keys()
    if not free:
        return True
    if isinstance(expr, BinOp) and expr.op == "==" and len(free) == 1:
        for target, other in ((expr.left, expr.right), (expr.right, expr.left)):
            if isinstance(target, Var) and target.name in free:
                if term_var_set(other) <= env.keys():
                    return True
    return False


# ---- aggregates ----

def compute_agg(fn: str, values: list[Value]):
    if fn in ("SUM", "SUMABS", "STDEV"):
        nums = [_num(v) if not isinstance(v, int) else v for v in values]
    if fn == "SUM":
        return sum(nums)
    if fn == "SUMABS":
        return sum(abs(v) for v in nums)
    if fn == "COUNT":
        return len(values)
    if fn == "MIN":
        return min(values)
    if fn == "MAX":
        return max(values)
    if fn == "UNIQUE":
        return len(set(values))
    if fn == "STDEV":
        n = len(nums)
        total = sum(nums)
        sq = sum(v * v for v in nums)
        variance = Fraction(n * sq - total * total, n * n)
        return int(math.isqrt(int(variance))) if variance >= 0 else 0
    raise EngineError("unknown aggregate %r" % fn)


# ---- compiled rules ----

@dataclass
class CompiledRule:
    label: str
    head: Predicate
    atoms: list[Predicate]
    exprs: list[Term]
    source: Rule

    def head_key(self):
        return self.head.name


@dataclass
class CompiledAggRule:
    label: str
    head: Predicate
    spec_fn: str
    agg_var: str
    agg_pos: int
    group_terms: list[tuple[int, Term]]  # (head position, term) excluding the agg slot
    atoms: list[Predicate]
    exprs: list[Term]
    source: Rule


@dataclass
class CompiledUpdateRule:
    label: str
    head: Predicate
    self_atom: Predicate
    trigger: Predicate
    other_atoms: list[Predicate]
    exprs: list[Term]
    source: Rule


class Store:
    """One node's tables plus the compiled dataflow over them."""

    def __init__(self, node_id: Optional[Value] = None, consts: Optional[dict] = None,
                 local_only: bool = False, max_derivations: int = 1_000_000):
        self.node_id = node_id
        self.local_only = local_only or node_id is None
        self.consts: dict[str, Number] = dict(consts or {})
        self.max_derivations = max_derivations
        self.catalog: dict[str, int] = {}
        self.located: dict[str, bool] = {}
        # per predicate: tuple values -> [base_count, derived_count]
        self.tables: dict[str, dict[tuple, list[int]]] = {}
        self.rules: list[CompiledRule] = []
        self.agg_rules: list[CompiledAggRule] = []
        self.update_rules: list[CompiledUpdateRule] = []
        self.event_preds: set[str] = set()
        self.agg_heads: set[str] = set()
        self._occ: dict[str, list[tuple[CompiledRule, int]]] = {}
        self._agg_consumers: dict[str, list[int]] = {}
        self._update_by_trigger: dict[str, list[CompiledUpdateRule]] = {}
        self._rules_by_head: dict[str, list[CompiledRule]] = {}
        self.pending: deque = deque()
        self.outbox: list[tuple[Value, Delta]] = []
        self.dropped: list[Tup] = []
        self.derivation_budget_used = 0

    # ---- catalog ----

    def declare(self, pred: str, arity: int, located: bool = False):
        if pred in self.catalog:
            if self.catalog[pred] != arity or self.located[pred] != located:
                raise EngineError("conflicting declaration for %s/%d" % (pred, arity))
            return
        self.catalog[pred] = arity
        self.located[pred] = located
        self.tables.setdefault(pred, {})

    def is_visible(self, pred: str, values: tuple) -> bool:
        entry = self.tables.get(pred, {}).get(values)
        return entry is not None and entry[0] + entry[1] > 0

    def visible(self, pred: str) -> Iterator[tuple]:
        for values, counts in self.tables.get(pred, {}).items():
            if counts[0] + counts[1] > 0:
                yield values

    def table_count(self, pred: str) -> int:
        return sum(1 for _ in self.visible(pred))

    def dump_table(self, pred: str) -> list[tuple]:
        return sorted(self.visible(pred), key=value_sort_key)

    def snapshot(self) -> dict[str, set[tuple]]:
        return {p: set(self.visible(p)) for p in self.tables if self.table_count(p)}

    # ---- registration ----

    def register_rules(self, rules: Iterable[Rule], *, update_labels: frozenset[str],
                       event_preds: frozenset[str], var_tables: frozenset[str]):
        self.event_preds.update(event_preds)
        for rule in rules:
            self._declare_rule_preds(rule)
            if rule.label in update_labels:
                self._register_update(rule, var_tables)
            elif rule.head.agg_spec() is not None:
                self._register_agg(rule)
            else:
                self._register_plain(rule)

    def _declare_rule_preds(self, rule: Rule):
        for pred in [rule.head, *rule.body_predicates()]:
            self.declare(pred.name, pred.arity, pred.located)

    def _register_plain(self, rule: Rule):
        if rule.head.name in self.agg_heads:
            raise EngineError("aggregate table %s has multiple defining rules"
                              % rule.head.name)
        atoms = list(rule.body_predicates())
        exprs = [b.expr for b in rule.body_exprs()]
        compiled = CompiledRule(rule.label, rule.head, atoms, exprs, rule)
        self.rules.append(compiled)
        self._rules_by_head.setdefault(rule.head.name, []).append(compiled)
        for i, atom in enumerate(atoms):
            self._occ.setdefault(atom.name, []).append((compiled, i))

    def _register_agg(self, rule: Rule):
        spec = rule.head.agg_spec()
        if rule.head.name in self.agg_heads or rule.head.name in self._rules_by_head:
            raise EngineError("aggregate table %s has multiple defining rules"
                              % rule.head.name)
        atoms = list(rule.body_predicates())
        for atom in atoms:
            if atom.name in self.event_preds:
                raise EngineError("rule %s: aggregate over event predicate %s"
                                  % (rule.label, atom.name))
        group_terms = [(i, t) for i, t in enumerate(rule.head.args) if not isinstance(t, Agg)]
        compiled = CompiledAggRule(
            rule.label, rule.head, spec.fn, spec.over, spec.position,
            group_terms, atoms, [b.expr for b in rule.body_exprs()], rule)
        idx = len(self.agg_rules)
        self.agg_rules.append(compiled)
        self.agg_heads.add(rule.head.name)
        for atom in atoms:
            self._agg_consumers.setdefault(atom.name, []).append(idx)

    def _register_update(self, rule: Rule, var_tables: frozenset[str]):
        self_atom = None
        trigger = None
        others = []
        for atom in rule.body_predicates():
            if atom.name == rule.head.name and self_atom is None:
                self_atom = atom
            elif atom.name in var_tables and trigger is None:
                trigger = atom
            else:
                others.append(atom)
        if self_atom is None or trigger is None:
            raise EngineError("rule %s is not a valid update rule" % rule.label)
        compiled = CompiledUpdateRule(rule.label, rule.head, self_atom, trigger, others,
                                      [b.expr for b in rule.body_exprs()], rule)
        self.update_rules.append(compiled)
        self._update_by_trigger.setdefault(trigger.name, []).append(compiled)

    # ---- external API ----

    def insert(self, tup: Tup):
        self.enqueue(Delta(tup, +1))

    def delete(self, tup: Tup):
        self.enqueue(Delta(tup, -1))

    def enqueue(self, delta: Delta):
        pred = delta.tup.pred
        if pred not in self.catalog:
            raise EngineError("unknown predicate %r" % pred)
        if len(delta.tup.values) != self.catalog[pred]:
            raise EngineError("arity mismatch for %s: got %d, want %d"
                              % (pred, len(delta.tup.values), self.catalog[pred]))
        kind = "event" if pred in self.event_preds else "base"
        self.pending.append((kind, delta))

    def apply_delta(self, delta: Delta) -> list[Delta]:
        """Apply one delta and run to fixpoint, returning the visible-set changes."""
        self.enqueue(delta)
        return self.run_to_fixpoint()

    def run_to_fixpoint(self) -> list[Delta]:
        changes: list[Delta] = []
        self.derivation_budget_used = 0
        while self.pending:
            kind, payload = self.pending.popleft()
            if kind == "base":
                self._process_base(payload, changes)
            elif kind == "event":
                if payload.sign < 0:
                    log.debug("retraction of event tuple %s ignored", payload.tup)
                    continue
                self._process_event(payload.tup, changes)
            elif kind == "vis+":
                self._fire_insert(payload, changes)
            elif kind == "vis-":
                self._fire_delete(payload, changes)
            elif kind == "agg":
                self._recompute_agg(payload, changes)
        return changes

    # ---- internals ----

    def _charge(self, amount: int = 1):
        self.derivation_budget_used += amount
        if self.derivation_budget_used > self.max_derivations:
            raise FixpointBudgetExceeded(
                "exceeded %d derivations; non-terminating program?" % self.max_derivations)

    def _counts(self, tup: Tup) -> list[int]:
        table = self.tables.setdefault(tup.pred, {})
        return table.setdefault(tup.values, [0, 0])

    def _process_base(self, delta: Delta, changes: list[Delta]):
        counts = self._counts(delta.tup)
        was_visible = counts[0] + counts[1] > 0
        if delta.sign > 0:
            counts[0] += 1
        else:
            if counts[0] == 0:
                log.debug("delete of absent base fact %s ignored", delta.tup)
                return
            counts[0] -= 1
        now_visible = counts[0] + counts[1] > 0
        if now_visible and not was_visible:
            self._fire_insert(delta.tup, changes)
        elif was_visible and not now_visible:
            self._fire_delete(delta.tup, changes)

    def _mark_aggs(self, pred: str):
        for idx in self._agg_consumers.get(pred, ()):
            if ("agg", idx) not in self.pending:
                self.pending.append(("agg", idx))

    def _emit(self, tup: Tup, sign: int):
        """Route a derived head tuple not owned by this node."""
        dst = tup.values[0]
        if self.local_only:
            kind = "event" if tup.pred in self.event_preds else "base"
            self.pending.append((kind, Delta(tup, sign)))
        else:
            self.outbox.append((dst, Delta(tup, sign)))

    def _head_is_remote(self, head: Predicate, tup: Tup) -> bool:
        if not self.located.get(tup.pred, False):
            return False
        if self.node_id is None:
            return False
        return tup.values[0] != self.node_id

    def _eval_head(self, head: Predicate, env: dict[str, Value]) -> Tup:
        values = []
        for term in head.args:
            if isinstance(term, Var):
                values.append(env[term.name])
            elif isinstance(term, Const):
                values.append(term.value)
            elif isinstance(term, ConstRef):
                values.append(_to_value(self.consts[term.name]))
            else:
                raise EngineError("unsupported head argument %r" % (term,))
        return Tup(head.name, tuple(values))

    # -- insert path --

    def _route_head(self, compiled: CompiledRule, head: Tup) -> bool:
        """Ship or re-enqueue a head tuple that is not stored here.

        Returns True when the tuple was routed (event or remote), False when
        the caller should store it as an ordinary derived tuple.
        """
        remote = self._head_is_remote(compiled.head, head)
        if head.pred in self.event_preds:
            if remote:
                self._emit(head, +1)
            else:
                self.pending.append(("event", Delta(head, +1)))
            return True
        if remote:
            self._emit(head, +1)
            return True
        return False

    def _fire_insert(self, tup: Tup, changes: list[Delta]):
        changes.append(Delta(tup, +1))
        self._fire_updates(tup, changes)
        for compiled, occ in self._occ.get(tup.pred, ()):
            for env in self._firings(compiled, occ, tup, mode="insert"):
                self._charge()
                head = self._eval_head(compiled.head, env)
                if self._route_head(compiled, head):
                    continue
                counts = self._counts(head)
                counts[1] += 1
                if counts[0] + counts[1] == 1:
                    self.pending.append(("vis+", head))
        self._mark_aggs(tup.pred)

    def _process_event(self, tup: Tup, changes: list[Delta]):
        """Event tuples fire consumers once and are never stored."""
        changes.append(Delta(tup, +1))
        self._fire_updates(tup, changes)
        for compiled, occ in self._occ.get(tup.pred, ()):
            for env in self._firings(compiled, occ, tup, mode="insert"):
                self._charge()
                head = self._eval_head(compiled.head, env)
                if not self._route_head(compiled, head):
                    raise EngineError("rule %s stores tuples derived from event %s"
                                      % (compiled.label, tup.pred))

    def _fire_updates(self, tup: Tup, changes: list[Delta]):
        for upd in self._update_by_trigger.get(tup.pred, ()):
            env = _match_atom(upd.trigger, tup.values, {}, self.consts)
            if env is None:
                continue
            for env2 in self._join(upd.other_atoms + [upd.self_atom], upd.exprs, env,
                                   self._visible_state()):
                self._charge()
                old = Tup(upd.head.name, tuple(
                    env2[a.name] if isinstance(a, Var) else a.value
                    for a in upd.self_atom.args))
                new = self._eval_head(upd.head, env2)
                if old == new:
                    continue
                self.pending.append(("base", Delta(old, -1)))
                self.pending.append(("base", Delta(new, +1)))

    # -- delete path (delete and re-derive) --

    def _fire_delete(self, tup: Tup, changes: list[Delta]):
        removed: dict[Tup, int] = {}
        worklist = deque([tup])
        overdeleted = {tup}
        # Phase 1: overdelete everything transitively supported by the seed.
        # Removal only propagates through tuples made invisible; tuples kept
        # visible by base facts are recounted but do not cascade.
        while worklist:
            cur = worklist.popleft()
            for compiled, occ in self._occ.get(cur.pred, ()):
                state = self._union_state(overdeleted)
                for env in self._firings(compiled, occ, cur, mode="scan", state=state):
                    self._charge()
                    head = self._eval_head(compiled.head, env)
                    if self._head_is_remote(compiled.head, head):
                        continue
                    if head.pred in self.agg_heads or head.pred in self.event_preds:
                        continue
                    counts = self.tables.get(head.pred, {}).get(head.values)
                    if counts is None or counts[1] == 0 or head in removed:
                        continue
                    removed[head] = counts[1]
                    counts[1] = 0
                    if counts[0] == 0 and head not in overdeleted:
                        overdeleted.add(head)
                        worklist.append(head)
        # Phase 2: re-derive members still supported without the removed set.
        gone = set(removed)
        changed = True
        while changed:
            changed = False
            for h in list(gone):
                if self._count_firings(h) > 0:
                    gone.discard(h)
                    self.tables[h.pred][h.values][1] = 1  # provisional; recounted below
                    changed = True
        for h in removed:
            if h not in gone:
                self.tables[h.pred][h.values][1] = self._count_firings(h)
        # Net removals: seed plus overdeleted tuples without remaining support.
        net = [tup] + sorted(
            (h for h in removed if h in gone and self.tables[h.pred][h.values][0] == 0),
            key=lambda t: (t.pred, value_sort_key(t.values)))
        net_set = set(net)
        for t in net:
            changes.append(Delta(t, -1))
        for t in net:
            self._ship_retractions(t, net_set)
            self._mark_aggs(t.pred)

    def _ship_retractions(self, tup: Tup, deleted: set[Tup]):
        """Emit retraction deltas for remote-headed firings the deletion kills."""
        for compiled, occ in self._occ.get(tup.pred, ()):
            state = self._delta_expansion_state(deleted, occ)
            for env in self._firings(compiled, occ, tup, mode="scan", state=state):
                head = self._eval_head(compiled.head, env)
                if self._head_is_remote(compiled.head, head):
                    self._emit(head, -1)

    def _count_firings(self, tup: Tup) -> int:
        total = 0
        for compiled in self._rules_by_head.get(tup.pred, ()):
            env0 = _match_atom(compiled.head, tup.values, {}, self.consts)
            if env0 is None:
                continue
            for env in self._join(compiled.atoms, compiled.exprs, env0,
                                  self._visible_state()):
                self._charge()
                if self._eval_head(compiled.head, env) == tup:
                    total += 1
        return total

    # -- aggregate views --

    def _recompute_agg(self, idx: int, changes: list[Delta]):
        rule = self.agg_rules[idx]
        groups: dict[tuple, list[Value]] = {}
        for env in self._join(rule.atoms, rule.exprs, {}, self._visible_state()):
            self._charge()
            key = tuple(
                env[t.name] if isinstance(t, Var) else t.value  # type: ignore[union-attr]
                for _, t in rule.group_terms)
            groups.setdefault(key, []).append(env[rule.agg_var])
        new_view: dict[tuple, Tup] = {}
        for key, values in groups.items():
            agg_value = _to_value(compute_agg(rule.spec_fn, values))
            out = [None] * len(rule.head.args)
            for (pos, _), kv in zip(rule.group_terms, key):
                out[pos] = kv
            out[rule.agg_pos] = agg_value
            new_view[key] = Tup(rule.head.name, tuple(out))
        old_tuples = {Tup(rule.head.name, v) for v in list(self.visible(rule.head.name))}
        # Only this rule maintains its head table, so diff directly.
        new_tuples = set(new_view.values())
        for t in sorted(old_tuples - new_tuples, key=lambda t: value_sort_key(t.values)):
            counts = self._counts(t)
            if counts[1] > 0:
                counts[1] = 0
                if counts[0] == 0:
                    self.pending.append(("vis-", t))
        for t in sorted(new_tuples - old_tuples, key=lambda t: value_sort_key(t.values)):
            counts = self._counts(t)
            if counts[1] == 0:
                counts[1] = 1
                if counts[0] == 0:
                    self.pending.append(("vis+", t))

    # -- join machinery --

    def _visible_state(self) -> Callable:
        def state(pred: str, _occ: int) -> Iterator[tuple]:
            return self.visible(pred)
        return state

    def _union_state(self, extra: set[Tup]) -> Callable:
        by_pred: dict[str, list[tuple]] = {}
        for t in extra:
            by_pred.setdefault(t.pred, []).append(t.values)

        def state(pred: str, _occ: int) -> Iterator[tuple]:
            seen = set()
            for v in self.visible(pred):
                seen.add(v)
                yield v
            for v in by_pred.get(pred, ()):
                if v not in seen:
                    yield v
        return state

    def _delta_expansion_state(self, deleted: set[Tup], pinned_occ: int) -> Callable:
        """Old state after the pinned occurrence, new state before it."""
        by_pred: dict[str, set[tuple]] = {}
        for t in deleted:
            by_pred.setdefault(t.pred, set()).add(t.values)

        def state(pred: str, occ: int) -> Iterator[tuple]:
            yield from self.visible(pred)
            if occ > pinned_occ:
                for v in by_pred.get(pred, ()):
                    if not self.is_visible(pred, v):
                        yield v
        return state

    def _firings(self, compiled: CompiledRule, occ: int, tup: Tup, mode: str,
                 state: Optional[Callable] = None) -> Iterator[dict[str, Value]]:
        """Bindings of the rule body with occurrence occ pinned to tup.

        In insert mode, later occurrences of the same predicate exclude the
        pinned tuple so each new binding fires exactly once.
        """
        env0 = _match_atom(compiled.atoms[occ], tup.values, {}, self.consts)
        if env0 is None:
            return
        if state is None:
            state = self._visible_state()
        if mode == "insert":
            base_state = state

            def state(pred: str, j: int) -> Iterator[tuple]:
                for v in base_state(pred, j):
                    if j > occ and pred == tup.pred and v == tup.values:
                        continue
                    yield v
        atoms = [a for i, a in enumerate(compiled.atoms) if i != occ]
        occ_ids = [i for i in range(len(compiled.atoms)) if i != occ]
        yield from self._join(atoms, compiled.exprs, env0, state, occ_ids=occ_ids)

    def _join(self, atoms: list[Predicate], exprs: list[Term], env0: dict[str, Value],
              state: Callable, occ_ids: Optional[list[int]] = None
              ) -> Iterator[dict[str, Value]]:
        if occ_ids is None:
            occ_ids = list(range(len(atoms)))

        def run_exprs(env, remaining):
            # Evaluate every expression that became ready; None means filtered out.
            progress = True
            while progress:
                progress = False
                for e in list(remaining):
                    if expr_ready(e, env):
                        env2 = apply_expr(e, env, self.consts)
                        if env2 is None:
                            return None, remaining
                        env = env2
                        remaining = [x for x in remaining if x is not e]
                        progress = True
            return env, remaining

        def recurse(i, env, remaining) -> Iterator[dict[str, Value]]:
            env, remaining = run_exprs(env, remaining)
            if env is None:
                return
            if i == len(atoms):
                if remaining:
                    raise EngineError("unbound expression(s) %s in rule body"
                                      % ", ".join(str(e) for e in remaining))
                yield env
                return
            atom = atoms[i]
            for values in state(atom.name, occ_ids[i]):
                env2 = _match_atom(atom, values, env, self.consts)
                if env2 is not None:
                    yield from recurse(i + 1, env2, remaining)

        yield from recurse(0, env0, list(exprs))

    def evaluate_rule_once(self, rule: Rule, prebound: Optional[dict[str, Value]] = None
                           ) -> list[Tup]:
        """One-shot evaluation of a rule body over current visible state."""
        atoms = list(rule.body_predicates())
        exprs = [b.expr for b in rule.body_exprs()]
        out = []
        seen = set()
        for env in self._join(atoms, exprs, dict(prebound or {}), self._visible_state()):
            head = self._eval_head(rule.head, env)
            if head not in seen:
                seen.add(head)
                out.append(head)
        return out

    def drain_outbox(self) -> list[tuple[Value, Delta]]:
        out = self.outbox
        self.outbox = []
        return out


def _match_atom(atom: Predicate, values: tuple, env: dict[str, Value],
                consts: dict) -> Optional[dict[str, Value]]:
    if len(atom.args) != len(values):
        return None
    out = None
    for term, val in zip(atom.args, values):
        if isinstance(term, Var):
            bound = (out or env).get(term.name, _MISSING)
            if bound is _MISSING:
                if out is None:
                    out = dict(env)
                out[term.name] = val
            elif bound != val:
                return None
        elif isinstance(term, Const):
            if term.value != val:
                return None
        elif isinstance(term, ConstRef):
            if _to_value(consts.get(term.name)) != val:
                return None
        else:
            raise EngineError("unsupported pattern term %r" % (term,))
    return out if out is not None else dict(env)


class _Missing:
    pass


_MISSING = _Missing()
