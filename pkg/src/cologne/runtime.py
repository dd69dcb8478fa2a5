"""Per-node engine: store, negotiation protocol, solving, solution application.

Each node owns a Store, reacts to timers and messages, and runs pairwise
link negotiation: the endpoint with the larger identifier proposes, pulls
remote fragments from its neighborhood, solves the local constraint
problem, materializes the solution, and mirrors the outcome to the peer.
A node takes part in at most one negotiation at a time; a busy peer answers
BUSY and the initiator retries on a later timer.

Wire format: each message is a sequence of length-prefixed records
``<len>:<pred>|<sign>|<v1>|<v2>|...`` where strings are double-quoted and
the length counts the UTF-8 bytes after the colon.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .analysis import LocalizedProgram
from .config import SolverConfig
from .datalog import Delta, EngineError, Store, Tup, Value, value_sort_key
from .grounder import GroundModel, GroundingError, ground_model
from .solver import Solution, SolveStatus, solve

log = logging.getLogger(__name__)

PROPOSE = "nego_propose"
ACCEPT = "nego_accept"
BUSY = "nego_busy"
FRAG_REQUEST = "nego_frag_request"
FRAG_REPLY = "nego_frag_reply"
DONE = "nego_done"
CONTROL_PREDS = (PROPOSE, ACCEPT, BUSY, FRAG_REQUEST, FRAG_REPLY, DONE)
INVOKE_SOLVER = "invokeSolver"


class SolutionRejected(Exception):
    """The independent checker refused a solution before materialization."""


@dataclass(frozen=True)
class Message:
    src: Value
    dst: Value
    payload: tuple[Delta, ...]

    def serialize(self) -> bytes:
        out = []
        for delta in self.payload:
            body = "|".join(
                [delta.tup.pred, "+" if delta.sign > 0 else "-"]
                + [_encode_value(v) for v in delta.tup.values])
            encoded = body.encode("utf-8")
            out.append(b"%d:%s" % (len(encoded), encoded))
        return b"".join(out)

    @property
    def byte_size(self) -> int:
        return len(self.serialize())

    @classmethod
    def parse(cls, src: Value, dst: Value, data: bytes) -> "Message":
        payload = []
        i = 0
        while i < len(data):
            j = data.index(b":", i)
            length = int(data[i:j])
            body = data[j + 1:j + 1 + length].decode("utf-8")
            i = j + 1 + length
            parts = _split_record(body)
            pred, sign = parts[0], parts[1]
            values = tuple(_decode_value(p) for p in parts[2:])
            payload.append(Delta(Tup(pred, values), +1 if sign == "+" else -1))
        return cls(src, dst, tuple(payload))


def _encode_value(v: Value) -> str:
    if isinstance(v, str):
        return '"%s"' % v.replace('"', '\\"')
    return str(v)


def _decode_value(text: str) -> Value:
    if text.startswith('"'):
        return text[1:-1].replace('\\"', '"')
    return int(text)


def _split_record(body: str) -> list[str]:
    parts = []
    cur = []
    in_str = False
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == '"' and (i == 0 or body[i - 1] != "\\"):
            in_str = not in_str
            cur.append(ch)
        elif ch == "|" and not in_str:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
        i += 1
    parts.append("".join(cur))
    return parts


@dataclass
class Timer:
    kind: str = "negotiation"


@dataclass
class SolverEvent:
    trigger: str = "explicit"  # periodic | tableUpdate | explicit


@dataclass
class EventResult:
    messages: list[Message] = field(default_factory=list)
    solve_millis: float = 0.0
    solved: bool = False
    objective: Optional[int] = None
    status: Optional[str] = None
    event: str = ""
    dropped: int = 0
    applied_solution: tuple[Tup, ...] = ()


@dataclass
class _Negotiation:
    peer: Value
    awaiting: set
    accepted: bool = False
    fragments: list[Delta] = field(default_factory=list)


class NodeRuntime:
    """Single node: event loop state, negotiation protocol, local solving."""

    def __init__(self, node_id: Value, localized: LocalizedProgram,
                 cfg: SolverConfig, seed: Union[int, str] = 0):
        from .analysis import register_program

        self.node_id = node_id
        self.localized = localized
        self.program = localized.annotated.program
        self.cfg = cfg
        self.store = Store(node_id=node_id, consts=dict(cfg.consts),
                           max_derivations=cfg.max_derivations)
        register_program(self.store, localized)
        for pred in CONTROL_PREDS:
            self.store.declare(pred, 2, located=True)
        self.store.declare(INVOKE_SOLVER, 0)
        self.rng = random.Random("%s/%s" % (seed, node_id))
        self.negotiated: set[Value] = set()
        self.unsat_links: set[Value] = set()
        self.busy = False
        self.active: Optional[_Negotiation] = None
        self.responding_to: Optional[Value] = None
        self.dropped_count = 0
        self._pull_tmp_preds = frozenset(
            r.head.name for r in localized.pull_rules())

    # ---- facts ----

    def load_facts(self, tuples: list[Tup]):
        for t in tuples:
            self.store.insert(t)
        self.store.run_to_fixpoint()

    def neighbors(self) -> list[Value]:
        if "link" not in self.store.catalog:
            return []
        out = []
        for values in self.store.visible("link"):
            if values[0] == self.node_id and values[1] != self.node_id:
                if values[1] not in out:
                    out.append(values[1])
        return sorted(out, key=lambda v: value_sort_key((v,)))

    def eligible_links(self) -> list[Value]:
        """Peers this node may initiate with: links where it has the larger id."""
        return [p for p in self.neighbors()
                if _greater(self.node_id, p)
                and p not in self.negotiated and p not in self.unsat_links]

    def wants_timer(self) -> bool:
        return self.active is not None or bool(self.eligible_links())

    # ---- event dispatch ----

    def handle_event(self, ev: Union[Message, Timer, SolverEvent]) -> EventResult:
        if isinstance(ev, Timer):
            return self.initiate_negotiation()
        if isinstance(ev, SolverEvent):
            return self.invoke_solver(ev)
        return self._handle_message(ev)

    # ---- negotiation (initiator side) ----

    def initiate_negotiation(self) -> EventResult:
        result = EventResult(event="timer")
        if self.busy or self.active is not None:
            return result
        eligible = self.eligible_links()
        if not eligible:
            return result
        peer = eligible[self.rng.randrange(len(eligible))]
        providers = [n for n in self.neighbors() if n != peer]
        self.busy = True
        self.active = _Negotiation(peer=peer, awaiting=set(providers) | {peer})
        result.event = "propose"
        result.messages.append(self._control(PROPOSE, peer))
        for z in providers:
            result.messages.append(self._control(FRAG_REQUEST, z))
        return result

    def _control(self, pred: str, dst: Value,
                 extra: tuple[Delta, ...] = ()) -> Message:
        marker = Delta(Tup(pred, (dst, self.node_id)), +1)
        return Message(self.node_id, dst, (marker,) + extra)

    def _fragments_for(self, requester: Value) -> tuple[Delta, ...]:
        """Evaluate on-demand fragment rules, homed at the requester."""
        out = []
        for rule in self.localized.pull_rules():
            home = rule.head.loc_var()
            tuples = self.store.evaluate_rule_once(rule, prebound={home: requester})
            out.extend(Delta(t, +1) for t in tuples if t.values[0] == requester)
        return tuple(out)

    # ---- message handling ----

    def _handle_message(self, msg: Message) -> EventResult:
        result = EventResult(event="data")
        if not msg.payload:
            return result
        head = msg.payload[0]
        kind = head.tup.pred
        if kind == PROPOSE:
            return self._on_propose(msg)
        if kind == ACCEPT:
            return self._on_accept(msg)
        if kind == BUSY:
            return self._on_busy(msg)
        if kind == FRAG_REQUEST:
            result.event = "frag_reply"
            result.messages.append(self._control(FRAG_REPLY, msg.src,
                                                 self._fragments_for(msg.src)))
            return result
        if kind == FRAG_REPLY:
            return self._on_frag_reply(msg)
        if kind == DONE:
            return self._on_done(msg)
        self._apply_payload(msg.payload, result)
        return result

    def _apply_payload(self, payload: tuple[Delta, ...], result: EventResult):
        applied = False
        for delta in payload:
            if delta.tup.pred in CONTROL_PREDS:
                continue
            if delta.tup.pred == INVOKE_SOLVER:
                self.store.run_to_fixpoint()
                inner = self.invoke_solver(SolverEvent("tableUpdate"))
                result.messages.extend(inner.messages)
                result.solve_millis += inner.solve_millis
                result.solved = result.solved or inner.solved
                result.objective = inner.objective
                continue
            try:
                self.store.enqueue(delta)
                applied = True
            except EngineError:
                log.warning("node %s: dropping tuple with unknown predicate %s",
                            self.node_id, delta.tup)
                self.dropped_count += 1
                result.dropped += 1
        if applied:
            self.store.run_to_fixpoint()
            result.messages.extend(self._flush_outbox())

    def _flush_outbox(self) -> list[Message]:
        grouped: dict[Value, list[Delta]] = {}
        for dst, delta in self.store.drain_outbox():
            grouped.setdefault(dst, []).append(delta)
        return [Message(self.node_id, dst, tuple(deltas))
                for dst, deltas in grouped.items()]

    def _on_propose(self, msg: Message) -> EventResult:
        result = EventResult(event="accept")
        if self.busy or self.active is not None:
            result.event = "busy"
            result.messages.append(self._control(BUSY, msg.src))
            return result
        self.busy = True
        self.responding_to = msg.src
        result.messages.append(self._control(ACCEPT, msg.src,
                                             self._fragments_for(msg.src)))
        return result

    def _on_busy(self, msg: Message) -> EventResult:
        result = EventResult(event="busy_abort")
        if self.active is not None and msg.src == self.active.peer:
            self.active = None
            self.busy = False
        return result

    def _on_accept(self, msg: Message) -> EventResult:
        result = EventResult(event="accept_recv")
        if self.active is None or msg.src != self.active.peer:
            return result
        self.active.accepted = True
        self.active.awaiting.discard(msg.src)
        self.active.fragments.extend(d for d in msg.payload
                                     if d.tup.pred not in CONTROL_PREDS)
        self._maybe_complete(result)
        return result

    def _on_frag_reply(self, msg: Message) -> EventResult:
        result = EventResult(event="frag_recv")
        if self.active is None:
            return result
        self.active.awaiting.discard(msg.src)
        self.active.fragments.extend(d for d in msg.payload
                                     if d.tup.pred not in CONTROL_PREDS)
        self._maybe_complete(result)
        return result

    def _on_done(self, msg: Message) -> EventResult:
        result = EventResult(event="done_recv")
        self._apply_payload(msg.payload, result)
        if self.responding_to == msg.src:
            self.responding_to = None
            self.busy = False
        self.negotiated.add(msg.src)
        return result

    # ---- solving ----

    def _maybe_complete(self, result: EventResult):
        nego = self.active
        if nego is None or not nego.accepted or nego.awaiting:
            return
        peer = nego.peer
        fragment_tuples = [d.tup for d in nego.fragments if d.sign > 0]
        for t in fragment_tuples:
            try:
                self.store.insert(t)
            except EngineError:
                self.dropped_count += 1
                result.dropped += 1
        set_link = Tup("setLink", (self.node_id, peer))
        self.store.insert(set_link)
        self.store.run_to_fixpoint()

        solved_ok = False
        try:
            inner = self.invoke_solver(SolverEvent("explicit"))
            result.solve_millis = inner.solve_millis
            result.objective = inner.objective
            result.status = inner.status
            result.solved = inner.solved
            result.applied_solution = inner.applied_solution
            solved_ok = inner.status not in (None, SolveStatus.UNSAT.value)
            outbound = inner.messages
        except (GroundingError, SolutionRejected) as exc:
            log.error("node %s: negotiation with %s failed: %s",
                      self.node_id, peer, exc)
            result.status = "error"
            outbound = []

        # Retract the negotiation scaffolding: the link trigger plus the
        # pulled fragment snapshots.
        self.store.delete(set_link)
        for t in fragment_tuples:
            self.store.delete(t)
        self.store.run_to_fixpoint()
        self.store.drain_outbox()  # scaffolding retractions stay local

        if solved_ok:
            self.negotiated.add(peer)
        else:
            self.unsat_links.add(peer)
        self.active = None
        self.busy = False
        result.event = "negotiate"

        # The peer unlocks on DONE; solution mirrors ride along.
        to_peer = tuple(d for m in outbound if m.dst == peer for d in m.payload)
        result.messages.append(self._control(DONE, peer, to_peer))
        result.messages.extend(m for m in outbound if m.dst != peer)

    def invoke_solver(self, ev: SolverEvent) -> EventResult:
        """Ground the current store state, solve, and materialize the solution."""
        result = EventResult(event="solve")
        if self.store.pending:
            self.store.run_to_fixpoint()
        gm = ground_model(self.localized, self.store, self.cfg)
        solution = solve(gm.model)
        result.solve_millis = solution.solve_millis
        result.status = solution.status.value
        result.solved = True
        if solution.status is SolveStatus.UNSAT or solution.assignment is None:
            self._clear_solution_facts(gm)
            self.store.run_to_fixpoint()
            result.event = "unsat"
            log.info("node %s: local model unsatisfiable", self.node_id)
            result.messages.extend(self._flush_outbox())
            return result
        result.objective = solution.objective_value
        deltas = self.apply_solution(solution, gm)
        result.applied_solution = tuple(t.tup for t in deltas if t.sign > 0)
        for d in deltas:
            self.store.enqueue(d)
        self.store.run_to_fixpoint()
        result.messages.extend(self._flush_outbox())
        return result

    def apply_solution(self, solution: Solution, gm: GroundModel) -> list[Delta]:
        """Validate a solution independently, then diff it against the store.

        Returns the deltas that materialize the solution: event tuples for
        transient variable tables, delete/insert pairs replacing prior
        solution facts otherwise.
        """
        if solution.assignment is None:
            return []
        vals = [solution.assignment[v.name] for v in gm.model.vars]
        violated = gm.model.check_assignment(vals)
        if violated:
            names = [v.name for v in gm.model.vars]
            raise SolutionRejected(
                "assignment violates %d constraint(s), e.g. %s"
                % (len(violated), violated[0].render(names)))
        deltas: list[Delta] = []
        events = self.localized.annotated.event_tables
        facts = gm.solution_facts(solution)
        for tup in facts:
            if tup.pred in events:
                deltas.append(Delta(tup, +1))
                continue
            key_len = (gm.var_tables[tup.pred].key_len
                       if tup.pred in gm.var_tables else len(tup.values) - 1)
            existing = [v for v in self.store.visible(tup.pred)
                        if v[:key_len] == tup.values[:key_len]]
            if list(existing) == [tup.values]:
                continue
            for old in existing:
                deltas.append(Delta(Tup(tup.pred, old), -1))
            deltas.append(Delta(tup, +1))
        return deltas

    def _clear_solution_facts(self, gm: GroundModel):
        for info in gm.var_tables.values():
            if info.table in self.localized.annotated.event_tables:
                continue
            for key in info.keys:
                for values in list(self.store.visible(info.table)):
                    if values[:info.key_len] == key:
                        self.store.delete(Tup(info.table, values))


def _greater(a: Value, b: Value) -> bool:
    return value_sort_key((a,)) > value_sort_key((b,))
