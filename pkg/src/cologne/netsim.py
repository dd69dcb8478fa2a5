"""Deterministic discrete-event simulator hosting per-node engines.

Virtual time is integer milliseconds. Events dispatch in timestamp order
with FIFO tie-breaking by insertion sequence, so a trace is a pure function
of (topology, program, facts, seed, duration). Solver wall-clock time maps
into virtual time through a configurable cost model; with a fixed cost the
simulation is bit-reproducible across machines.

Topology files: one directive per line, `node <id>`, `link <a> <b>
[latency=<ms>]`, optional `bandwidth <bits-per-sec>`; // comments.
"""

from __future__ import annotations

import heapq
import io
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from .analysis import LocalizedProgram, analyze
from .config import SolverConfig
from .datalog import Tup, Value, value_sort_key
from .parser import parse_program
from .runtime import EventResult, Message, NodeRuntime, Timer


class SimError(Exception):
    pass


@dataclass(frozen=True)
class LinkSpec:
    a: Value
    b: Value
    latency_ms: int = 1


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Value, ...]
    links: tuple[LinkSpec, ...]
    bandwidth_bps: Optional[int] = None

    def link_set(self) -> set[frozenset]:
        return {frozenset((l.a, l.b)) for l in self.links}

    def latency(self, a: Value, b: Value) -> int:
        for l in self.links:
            if {l.a, l.b} == {a, b}:
                return l.latency_ms
        raise KeyError((a, b))


def parse_topology(text: str) -> Topology:
    nodes: list[Value] = []
    links: list[LinkSpec] = []
    bandwidth = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node" and len(parts) == 2:
            nodes.append(_node_id(parts[1]))
        elif parts[0] == "link" and len(parts) in (3, 4):
            latency = 1
            if len(parts) == 4:
                if not parts[3].startswith("latency="):
                    raise SimError("line %d: expected latency=<ms>" % lineno)
                latency = int(parts[3].split("=", 1)[1])
            links.append(LinkSpec(_node_id(parts[1]), _node_id(parts[2]), latency))
        elif parts[0] == "bandwidth" and len(parts) == 2:
            bandwidth = int(parts[1])
        else:
            raise SimError("line %d: cannot parse %r" % (lineno, raw))
    topo = Topology(tuple(nodes), tuple(links), bandwidth)
    declared = set(topo.nodes)
    for l in topo.links:
        if l.a not in declared or l.b not in declared:
            raise SimError("link %s-%s references undeclared node" % (l.a, l.b))
    return topo


def format_topology(topo: Topology) -> str:
    lines = ["node %s" % n for n in topo.nodes]
    lines += ["link %s %s latency=%d" % (l.a, l.b, l.latency_ms) for l in topo.links]
    if topo.bandwidth_bps:
        lines.append("bandwidth %d" % topo.bandwidth_bps)
    return "\n".join(lines) + "\n"


def _node_id(text: str) -> Value:
    try:
        return int(text)
    except ValueError:
        return text


def random_topology(n: int, seed: Union[int, str], avg_degree: float = 3.0,
                    latency_ms: int = 1) -> Topology:
    """Connected random graph with about avg_degree*n/2 links."""
    rng = random.Random("topo/%s" % seed)
    nodes = list(range(1, n + 1))
    want = min(math.ceil(avg_degree * n / 2), n * (n - 1) // 2)
    links: set[tuple] = set()
    order = nodes[1:]
    rng.shuffle(order)
    connected = [nodes[0]]
    for node in order:
        peer = connected[rng.randrange(len(connected))]
        links.add((min(node, peer), max(node, peer)))
        connected.append(node)
    candidates = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1:]
                  if (a, b) not in links]
    rng.shuffle(candidates)
    for a, b in candidates:
        if len(links) >= want:
            break
        links.add((a, b))
    ordered = sorted(links)
    return Topology(tuple(nodes), tuple(LinkSpec(a, b, latency_ms)
                                        for a, b in ordered))


TRACE_HEADER = "# cologne-trace v1"
TRACE_COLUMNS = ("time", "node", "event", "objective", "solve_ms",
                 "msgs_out", "bytes_out")


@dataclass
class TraceRow:
    time: int
    node: Value
    event: str
    objective: Optional[int]
    solve_ms: int
    msgs_out: int
    bytes_out: int

    def csv(self) -> str:
        obj = "" if self.objective is None else str(self.objective)
        return "%d,%s,%s,%s,%d,%d,%d" % (self.time, self.node, self.event, obj,
                                         self.solve_ms, self.msgs_out, self.bytes_out)


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    bytes_dropped: int = 0
    msgs_sent: int = 0
    msgs_received: int = 0
    msgs_dropped: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(TRACE_HEADER + "\n")
        out.write(",".join(TRACE_COLUMNS) + "\n")
        for row in self.rows:
            out.write(row.csv() + "\n")
        return out.getvalue()

    def per_node_bytes(self) -> dict[Value, int]:
        acc: dict[Value, int] = {}
        for row in self.rows:
            acc[row.node] = acc.get(row.node, 0) + row.bytes_out
        return acc

    def events(self, kind: str) -> list[TraceRow]:
        return [r for r in self.rows if r.event == kind]


class Sim:
    """One network: engines, an event queue, and trace accounting."""

    def __init__(self, topology: Topology, localized: LocalizedProgram,
                 facts: list[Tup], cfg: SolverConfig, seed: Union[int, str]):
        self.topology = topology
        self.cfg = cfg
        self.seed = seed
        self.links = topology.link_set()
        self.nodes: dict[Value, NodeRuntime] = {}
        order = sorted(topology.nodes, key=lambda v: value_sort_key((v,)))
        for node_id in order:
            self.nodes[node_id] = NodeRuntime(node_id, localized, cfg, seed=seed)
        declared = set(topology.nodes)
        by_node: dict[Value, list[Tup]] = {n: [] for n in order}
        for t in facts:
            loc = t.values[0] if t.values else None
            if loc not in declared:
                raise SimError("fact %s located at undeclared node %r" % (t, loc))
            by_node[loc].append(t)
        for node_id in order:
            runtime = self.nodes[node_id]
            link_tuples = []
            if "link" in runtime.store.catalog:
                for l in topology.links:
                    if l.a == node_id:
                        link_tuples.append(Tup("link", (l.a, l.b)))
                    if l.b == node_id:
                        link_tuples.append(Tup("link", (l.b, l.a)))
            runtime.load_facts(link_tuples + by_node[node_id])
        self.now = 0
        self._seq = 0
        self._queue: list = []
        self.trace = Trace()
        timer = cfg.negotiation_timer_ms
        for i, node_id in enumerate(order):
            jitter = random.Random("jitter/%s/%s" % (seed, node_id)).randrange(timer)
            self._push(timer + jitter, ("timer", node_id))
        # Initial ships (continuous fragment rules over base facts).
        for node_id in order:
            for msg in self.nodes[node_id]._flush_outbox():
                self._send(0, msg)

    def _push(self, time_ms: int, item):
        heapq.heappush(self._queue, (time_ms, self._seq, item))
        self._seq += 1

    def _delay(self, msg: Message) -> int:
        latency = self.topology.latency(msg.src, msg.dst)
        if self.topology.bandwidth_bps:
            latency += math.ceil(msg.byte_size * 8 * 1000 / self.topology.bandwidth_bps)
        return latency

    def _send(self, at: int, msg: Message):
        size = msg.byte_size
        self.trace.bytes_sent += size
        self.trace.msgs_sent += 1
        if frozenset((msg.src, msg.dst)) not in self.links:
            self.trace.bytes_dropped += size
            self.trace.msgs_dropped += 1
            self.trace.rows.append(TraceRow(at, msg.src, "drop", None, 0, 0, size))
            return
        self._push(at + self._delay(msg), ("msg", msg))

    def _solve_cost(self, result: EventResult) -> int:
        if not result.solved:
            return 0
        if self.cfg.fixed_solve_cost_ms is not None:
            return self.cfg.fixed_solve_cost_ms
        return max(1, math.ceil(result.solve_millis))

    def _dispatch(self, result: EventResult, node_id: Value):
        cost = self._solve_cost(result)
        bytes_out = 0
        for msg in result.messages:
            bytes_out += msg.byte_size
            self._send(self.now + cost, msg)
        self.trace.rows.append(TraceRow(
            self.now, node_id, result.event or "idle", result.objective,
            cost if result.solved else 0, len(result.messages), bytes_out))

    def run_until(self, duration_ms: int) -> Trace:
        while self._queue and self._queue[0][0] <= duration_ms:
            time_ms, _, item = heapq.heappop(self._queue)
            assert time_ms >= self.now, "causality violation"
            self.now = time_ms
            kind = item[0]
            if kind == "timer":
                node_id = item[1]
                runtime = self.nodes[node_id]
                if runtime.wants_timer():
                    result = runtime.handle_event(Timer())
                    self._dispatch(result, node_id)
                    if runtime.wants_timer():
                        self._push(self.now + self.cfg.negotiation_timer_ms,
                                   ("timer", node_id))
            else:
                msg: Message = item[1]
                self.trace.bytes_received += msg.byte_size
                self.trace.msgs_received += 1
                runtime = self.nodes[msg.dst]
                result = runtime.handle_event(msg)
                self._dispatch(result, msg.dst)
        return self.trace

    def quiesced(self) -> bool:
        return not self._queue

    def negotiation_count(self) -> int:
        return len(self.trace.events("negotiate"))


def build_network(topology: Topology, program_source: Union[str, LocalizedProgram],
                  facts: list[Tup], seed: Union[int, str],
                  cfg: Optional[SolverConfig] = None) -> Sim:
    """Parse/analyze the program if needed and assemble a simulator."""
    cfg = cfg or SolverConfig()
    if isinstance(program_source, LocalizedProgram):
        localized = program_source
    else:
        program = parse_program(program_source)
        annotated, localized, diags = analyze(program)
        errors = [d for d in diags if d.severity == "error"]
        if errors:
            raise SimError("program has diagnostics: %s"
                           % "; ".join(d.message for d in errors))
    return Sim(topology, localized, facts, cfg, seed)
