"""Runtime configuration: solver budget, variable domains, named constants.

Config files are key=value lines with # or // comments. Recognized keys:

    budget_millis = 10000
    default_domain_lo = 0
    default_domain_hi = 1
    channels = 1,6,11            # fallback domain for channel variables
    branching = declaration      # or first_fail
    max_nodes = 100000           # optional deterministic search cap
    domain.migVm = -60..60       # per var-table domain override
    domain.assign = 1,2,3
    const.max_migrates = 3       # named constants referenced by programs
    const.F_mindiff = 1
    const.cost_thres = 0.95     # decimals become exact fractions
    negotiation_timer_ms = 5000
    fixed_solve_cost_ms = 5      # deterministic virtual solve cost
    max_derivations = 1000000

Domain resolution order for a solver variable: the var declaration's
`in [lo,hi]` annotation, then domain.<table>, then channels, then the
default_domain bounds. A variable with none of these is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Union

Number = Union[int, Fraction]


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SolverConfig:
    budget_millis: int = 10_000
    default_domain: Optional[tuple[int, int]] = None
    channels: tuple[int, ...] = ()
    domains: dict[str, tuple[int, ...]] = field(default_factory=dict)
    consts: dict[str, Number] = field(default_factory=dict)
    branching: str = "declaration"
    max_nodes: Optional[int] = None
    negotiation_timer_ms: int = 5000
    fixed_solve_cost_ms: Optional[int] = None
    max_derivations: int = 1_000_000

    def domain_for(self, table: str, decl_domain: Optional[tuple[int, int]]
                   ) -> Optional[tuple[int, ...]]:
        if decl_domain is not None:
            lo, hi = decl_domain
            return tuple(range(lo, hi + 1))
        if table in self.domains:
            return self.domains[table]
        if self.channels:
            return self.channels
        if self.default_domain is not None:
            lo, hi = self.default_domain
            return tuple(range(lo, hi + 1))
        return None

    def with_overrides(self, **kwargs) -> "SolverConfig":
        return replace(self, **kwargs)


def _parse_number(text: str) -> Number:
    text = text.strip()
    if "." in text:
        return Fraction(text)
    return int(text)


def _parse_value_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = int(lo_s), int(hi_s)
        if lo > hi:
            raise ConfigError("empty range %s" % text)
        return tuple(range(lo, hi + 1))
    return tuple(int(p) for p in text.split(",") if p.strip())


def parse_config(text: str, base: Optional[SolverConfig] = None) -> SolverConfig:
    cfg = base or SolverConfig()
    budget = cfg.budget_millis
    lo, hi = (cfg.default_domain or (None, None))
    channels = cfg.channels
    domains = dict(cfg.domains)
    consts = dict(cfg.consts)
    branching = cfg.branching
    max_nodes = cfg.max_nodes
    timer = cfg.negotiation_timer_ms
    fixed_cost = cfg.fixed_solve_cost_ms
    max_derivations = cfg.max_derivations

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split("//", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected key = value" % lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        try:
            if key == "budget_millis":
                budget = int(value)
            elif key == "default_domain_lo":
                lo = int(value)
            elif key == "default_domain_hi":
                hi = int(value)
            elif key == "channels":
                channels = _parse_value_list(value)
            elif key == "branching":
                if value not in ("declaration", "first_fail"):
                    raise ConfigError("line %d: unknown branching %r" % (lineno, value))
                branching = value
            elif key == "max_nodes":
                max_nodes = int(value) if value.lower() != "none" else None
            elif key == "negotiation_timer_ms":
                timer = int(value)
            elif key == "fixed_solve_cost_ms":
                fixed_cost = int(value) if value.lower() != "none" else None
            elif key == "max_derivations":
                max_derivations = int(value)
            elif key.startswith("domain."):
                domains[key[len("domain."):]] = _parse_value_list(value)
            elif key.startswith("const."):
                consts[key[len("const."):]] = _parse_number(value)
            else:
                raise ConfigError("line %d: unknown key %r" % (lineno, key))
        except ValueError as exc:
            raise ConfigError("line %d: %s" % (lineno, exc)) from exc

    default_domain = None
    if lo is not None or hi is not None:
        if lo is None or hi is None:
            raise ConfigError("default_domain_lo and default_domain_hi must both be set")
        default_domain = (lo, hi)
    return SolverConfig(budget, default_domain, channels, domains, consts, branching,
                        max_nodes, timer, fixed_cost, max_derivations)


def load_config(path: str) -> SolverConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
