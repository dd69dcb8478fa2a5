"""Shipped optimization scenarios: programs, generators, oracles, drivers."""

from __future__ import annotations

import importlib.resources

from ..analysis import AnnotatedProgram, LocalizedProgram, analyze
from ..parser import parse_program

PROGRAMS = (
    "acloud",
    "acloud_migrate_limit",
    "fts",
    "fts_limited",
    "channel_centralized",
    "channel_centralized_twohop",
    "channel_distributed",
)


def program_text(name: str) -> str:
    resource = importlib.resources.files("cologne") / "programs" / ("%s.clg" % name)
    return resource.read_text(encoding="utf-8")


def load_program(name: str) -> tuple[AnnotatedProgram, LocalizedProgram]:
    program = parse_program(program_text(name))
    annotated, localized, diags = analyze(program)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ValueError("program %s has diagnostics: %s"
                         % (name, "; ".join(d.message for d in errors)))
    return annotated, localized
