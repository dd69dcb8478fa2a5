"""Cross-data-center migration scenario: instances, oracle, simulation driver.

Instances follow the evaluation setup: every data center has a resource
capacity of 60 units, current allocations per demand location are drawn
from 0..10 (scaled down if a node would exceed capacity), communication
cost between distinct sites is 50..100 (0 locally), per-link migration cost
is 10..20 (symmetric), and the operating cost is 10 everywhere.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from ..config import SolverConfig
from ..datalog import Tup, Value
from ..netsim import Sim, Topology, random_topology
from . import load_program

CAPACITY = 60
OPERATING_COST = 10


class OracleBudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class OracleResult:
    status: str  # "optimal" | "unsat"
    objective: Optional[int]
    assignment: dict
    enumerated: int


@dataclass
class FtsInstance:
    n: int
    links: tuple[tuple[int, int], ...]  # (a, b) with a < b
    capacity: int = CAPACITY
    cur: dict[tuple[int, int], int] = field(default_factory=dict)  # (node, loc) -> VMs
    comm: dict[tuple[int, int], int] = field(default_factory=dict)
    mig: dict[tuple[int, int], int] = field(default_factory=dict)  # keyed (a, b), a < b
    op: dict[int, int] = field(default_factory=dict)

    @property
    def nodes(self) -> list[int]:
        return list(range(1, self.n + 1))

    @property
    def locations(self) -> list[int]:
        return list(range(1, self.n + 1))

    def mig_cost(self, a: int, b: int) -> int:
        return self.mig[(min(a, b), max(a, b))]

    def neighbors(self, x: int) -> list[int]:
        out = [b for a, b in self.links if a == x] + [a for a, b in self.links if b == x]
        return sorted(out)

    def to_facts(self) -> list[Tup]:
        """Located facts for the distributed program (links come from topology)."""
        facts = []
        for x in self.nodes:
            facts.append(Tup("resource", (x, self.capacity)))
            facts.append(Tup("opCost", (x, self.op[x])))
            for d in self.locations:
                facts.append(Tup("dc", (x, d)))
                facts.append(Tup("curVm", (x, d, self.cur[(x, d)])))
                facts.append(Tup("commCost", (x, d, self.comm[(x, d)])))
            for y in self.neighbors(x):
                facts.append(Tup("migCost", (x, y, self.mig_cost(x, y))))
        return facts

    def topology(self, latency_ms: int = 1) -> Topology:
        from ..netsim import LinkSpec

        return Topology(tuple(self.nodes),
                        tuple(LinkSpec(a, b, latency_ms) for a, b in self.links))

    def solver_config(self, base: Optional[SolverConfig] = None) -> SolverConfig:
        cfg = base or SolverConfig()
        domains = dict(cfg.domains)
        domains.setdefault("migVm", tuple(range(-self.capacity, self.capacity + 1)))
        return cfg.with_overrides(domains=domains)

    def allocation_cost(self, alloc: dict[tuple[int, int], int]) -> int:
        """Operating plus communication cost of an allocation state."""
        total = 0
        for x in self.nodes:
            for d in self.locations:
                r = alloc[(x, d)]
                total += r * self.op[x] + r * self.comm[(x, d)]
        return total


def gen_fts_instance(n: int, seed: Union[int, str]) -> FtsInstance:
    if not 2 <= n <= 10:
        raise ValueError("n must be within 2..10")
    rng = random.Random("fts/%s/%d" % (seed, n))
    topo = random_topology(n, "fts/%s" % seed)
    links = tuple(sorted((min(l.a, l.b), max(l.a, l.b)) for l in topo.links))
    inst = FtsInstance(n=n, links=links)
    for x in inst.nodes:
        inst.op[x] = OPERATING_COST
        demands = {d: rng.randint(0, 10) for d in inst.locations}
        total = sum(demands.values())
        if total > inst.capacity:
            demands = {d: v * inst.capacity // total for d, v in demands.items()}
        for d in inst.locations:
            inst.cur[(x, d)] = demands[d]
            inst.comm[(x, d)] = 0 if x == d else rng.randint(50, 100)
    for a, b in links:
        inst.mig[(a, b)] = rng.randint(10, 20)
    return inst


def oracle_fts(inst: FtsInstance, migration_step: int = 1,
               budget: int = 10_000_000) -> OracleResult:
    """Exhaustive搜索 is not used: enumerate migration grids over all links.

    Variables are per (link, demand location) signed move counts in
    multiples of migration_step; capacity must hold afterwards at every
    node; the objective is operating + communication cost of the resulting
    allocation plus migration cost per unit moved.
    """
    axes = []
    for link in inst.links:
        for d in inst.locations:
            values = list(range(-inst.capacity, inst.capacity + 1, migration_step))
            if 0 not in values:
                values.append(0)
                values.sort()
            axes.append(((link, d), values))
    space = 1
    for _, values in axes:
        space *= len(values)
        if space > budget:
            raise OracleBudgetExceeded("enumeration of %d points exceeds budget"
                                       % space)
    best = None
    best_assign: dict = {}
    enumerated = 0
    keys = [k for k, _ in axes]
    for combo in itertools.product(*[values for _, values in axes]):
        enumerated += 1
        alloc = dict(inst.cur)
        mig_cost = 0
        for (link, d), m in zip(keys, combo):
            a, b = link
            alloc[(a, d)] -= m
            alloc[(b, d)] += m
            mig_cost += abs(m) * inst.mig[link]
        feasible = all(
            sum(alloc[(x, d)] for d in inst.locations) <= inst.capacity
            for x in inst.nodes)
        if not feasible:
            continue
        objective = inst.allocation_cost(alloc) + mig_cost
        if best is None or objective < best:
            best = objective
            best_assign = dict(zip(keys, combo))
    if best is None:
        return OracleResult("unsat", None, {}, enumerated)
    return OracleResult("optimal", best, best_assign, enumerated)


@dataclass
class FtsRun:
    sim: Sim
    inst: FtsInstance
    initial_cost: int
    cost_series: list[int]               # global cost after each negotiation
    negotiations: list[dict]             # node, peer, time, moves {(x,y,d): r}
    final_alloc: dict[tuple[int, int], int]
    mirror_log: list[dict]               # received mirrors per node

    @property
    def final_cost(self) -> int:
        return self.cost_series[-1] if self.cost_series else self.initial_cost


def run_fts_sim(inst: FtsInstance, seed: Union[int, str],
                cfg: Optional[SolverConfig] = None,
                duration_ms: int = 10_000_000) -> FtsRun:
    """Drive the distributed program over the instance until quiescence."""
    _, localized = load_program("fts")
    cfg = inst.solver_config(cfg)
    sim = Sim(inst.topology(), localized, inst.to_facts(), cfg, seed)
    sim.run_until(duration_ms)
    if not sim.quiesced():
        raise RuntimeError("simulation did not quiesce within %d ms" % duration_ms)

    alloc = dict(inst.cur)
    mig_total = 0
    series = []
    negotiations = []
    mirrors = []
    for time_ms, node, event, tuples in sim.solution_log:
        moves = {}
        for t in tuples:
            if t.pred != "migVm":
                continue
            x, y, d, r = t.values
            moves[(x, y, d)] = r
        if event == "negotiate":
            for (x, y, d), r in moves.items():
                alloc[(x, d)] -= r
                alloc[(y, d)] += r
                mig_total += abs(r) * inst.mig_cost(x, y)
            series.append(inst.allocation_cost(alloc) + mig_total)
            negotiations.append({"time": time_ms, "node": node, "moves": moves})
        elif moves:
            mirrors.append({"time": time_ms, "node": node, "moves": moves})

    final_alloc = {}
    for node_id, runtime in sim.nodes.items():
        for values in runtime.store.visible("curVm"):
            final_alloc[(values[0], values[1])] = values[2]
    return FtsRun(sim, inst, inst.allocation_cost(inst.cur), series, negotiations,
                  final_alloc, mirrors)
