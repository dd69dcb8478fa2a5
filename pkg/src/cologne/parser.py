"""Lexer and recursive-descent parser for Colog source and fact files.

Grammar summary (see README for the full EBNF):

    program   := (goal | var | rule)*
    goal      := "goal" ("minimize"|"maximize"|"satisfy") [VAR "in" atom] ["."]
    var       := "var" atom "forall" atom ["in" "[" INT "," INT "]"] ["."]
    rule      := LABEL atom ("<-" | "->") literal ("," literal)* "."
    literal   := atom | expr
    atom      := lident "(" ["@"] arg ("," arg)* ")"
    arg       := AGGFN "<" VAR ">" | VAR | INT | STRING | lident
    expr      := comparison chain over +,-,*,/ with abs bars |e| and max(...)

Identifier conventions: names starting lowercase are predicates (before "(")
or named configuration constants (in term position); names starting uppercase
are variables, except that uppercase identifiers containing "_" (such as
F_mindiff) denote configuration constants. "//" starts a line comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

from .ast import (
    AGG_FUNCS,
    Abs,
    Agg,
    Arrow,
    BinOp,
    BoolExpr,
    Const,
    ConstRef,
    Func,
    GoalDecl,
    GoalKind,
    Literal,
    Neg,
    Predicate,
    Program,
    Rule,
    Term,
    Var,
    VarDecl,
)


class CologSyntaxError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__("%d:%d: %s" % (line, col, message))
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<arrow><-|->)
  | (?P<op2>==|!=|<=|>=)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z]\w*)
  | (?P<string>"[^"\n]*")
  | (?P<punct>[()@,.\[\]|<>=+\-*/])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"goal", "var", "forall", "in", "minimize", "maximize", "satisfy"}


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise CologSyntaxError("unexpected character %r" % source[pos], line, col)
        text = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            if kind == "punct" or kind == "op2" or kind == "arrow":
                tokens.append(Token(text, text, line, col))
            else:
                tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


def _is_variable(name: str) -> bool:
    # Uppercase-start identifiers are variables unless they contain "_",
    # which marks configuration constants such as F_mindiff.
    return name[0].isupper() and "_" not in name


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def peek(self, ahead: int = 1) -> Token:
        j = min(self.i + ahead, len(self.tokens) - 1)
        return self.tokens[j]

    def advance(self) -> Token:
        tok = self.cur
        if tok.kind != "eof":
            self.i += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.cur
        raise CologSyntaxError(message, tok.line, tok.col)

    def expect(self, kind: str) -> Token:
        if self.cur.kind != kind:
            self.error("expected %r, found %r" % (kind, self.cur.text or "end of input"))
        return self.advance()

    def at(self, kind: str) -> bool:
        return self.cur.kind == kind

    # ---- program level ----

    def parse_program(self) -> Program:
        goal: Optional[GoalDecl] = None
        var_decls: list[VarDecl] = []
        rules: list[Rule] = []
        labels: set[str] = set()
        while not self.at("eof"):
            tok = self.cur
            if tok.kind == "ident" and tok.text == "goal":
                decl = self.parse_goal()
                if goal is not None:
                    self.error("multiple goal declarations", tok)
                goal = decl
            elif tok.kind == "ident" and tok.text == "var":
                var_decls.append(self.parse_var_decl())
            elif tok.kind == "ident":
                rule = self.parse_rule()
                if rule.label in labels:
                    self.error("duplicate rule label %r" % rule.label, tok)
                labels.add(rule.label)
                rules.append(rule)
            else:
                self.error("expected declaration or rule, found %r" % tok.text)
        return Program(goal, tuple(var_decls), tuple(rules))

    def parse_goal(self) -> GoalDecl:
        start = self.expect("ident")
        kind_tok = self.expect("ident")
        try:
            kind = GoalKind(kind_tok.text)
        except ValueError:
            self.error("goal kind must be minimize, maximize or satisfy", kind_tok)
        attr = None
        table = None
        table_args: tuple[Term, ...] = ()
        located = False
        # satisfy goals may omit the objective clause; minimize/maximize may not.
        has_clause = kind != GoalKind.SATISFY or (
            self.at("ident")
            and _is_variable(self.cur.text)
            and self.peek().kind == "ident"
            and self.peek().text == "in"
        )
        if has_clause:
            attr_tok = self.expect("ident")
            if not _is_variable(attr_tok.text):
                self.error("goal attribute must be a variable", attr_tok)
            attr = attr_tok.text
            in_tok = self.expect("ident")
            if in_tok.text != "in":
                self.error("expected 'in'", in_tok)
            pred = self.parse_predicate(allow_agg=False)
            table = pred.name
            table_args = pred.args
            located = pred.located
            if not any(isinstance(a, Var) and a.name == attr for a in pred.args):
                self.error("goal attribute %s not an argument of %s" % (attr, table), attr_tok)
        if self.at("."):
            self.advance()
        return GoalDecl(kind, attr, table, table_args, located, line=start.line)

    def parse_var_decl(self) -> VarDecl:
        start = self.expect("ident")
        var_pred = self.parse_predicate(allow_agg=False)
        forall_tok = self.expect("ident")
        if forall_tok.text != "forall":
            self.error("expected 'forall'", forall_tok)
        bound_pred = self.parse_predicate(allow_agg=False)
        domain = None
        if self.at("ident") and self.cur.text == "in":
            self.advance()
            self.expect("[")
            lo = self.parse_signed_int()
            self.expect(",")
            hi = self.parse_signed_int()
            self.expect("]")
            domain = (lo, hi)
        if self.at("."):
            self.advance()
        for pred, which in ((var_pred, "var"), (bound_pred, "forall")):
            for a in pred.args:
                if not isinstance(a, Var):
                    self.error("%s table arguments must be variables" % which, start)
        return VarDecl(
            var_table=var_pred.name,
            var_attrs=tuple(a.name for a in var_pred.args),
            bound_table=bound_pred.name,
            bound_attrs=tuple(a.name for a in bound_pred.args),
            located=var_pred.located,
            domain=domain,
            line=start.line,
        )

    def parse_signed_int(self) -> int:
        sign = 1
        if self.at("-"):
            self.advance()
            sign = -1
        tok = self.expect("int")
        return sign * int(tok.text)

    def parse_rule(self) -> Rule:
        label_tok = self.expect("ident")
        if label_tok.text in _KEYWORDS:
            self.error("reserved word %r cannot label a rule" % label_tok.text, label_tok)
        head = self.parse_predicate(allow_agg=True)
        if self.cur.kind in ("<-", "->"):
            arrow = Arrow.DERIVE if self.cur.kind == "<-" else Arrow.CONSTRAIN
            self.advance()
        else:
            self.error("expected '<-' or '->'")
        body: list[Literal] = [self.parse_literal()]
        while self.at(","):
            self.advance()
            body.append(self.parse_literal())
        self.expect(".")
        return Rule(label_tok.text, head, arrow, tuple(body), line=label_tok.line)

    # ---- literals ----

    def parse_literal(self) -> Literal:
        if self.at("ident") and self.peek().kind == "(" and self.cur.text[0].islower():
            return self.parse_predicate(allow_agg=False)
        expr = self.parse_expr()
        return BoolExpr(expr)

    def parse_predicate(self, allow_agg: bool) -> Predicate:
        name_tok = self.expect("ident")
        if not name_tok.text[0].islower():
            self.error("predicate names start lowercase", name_tok)
        self.expect("(")
        located = False
        args: list[Term] = []
        first = True
        while not self.at(")"):
            if not first:
                self.expect(",")
            if first and self.at("@"):
                self.advance()
                located = True
            elif self.at("@"):
                self.error("location specifier @ allowed only on the first argument")
            args.append(self.parse_pred_arg(allow_agg))
            first = False
        self.expect(")")
        return Predicate(name_tok.text, tuple(args), located=located)

    def parse_pred_arg(self, allow_agg: bool) -> Term:
        tok = self.cur
        if tok.kind == "ident" and tok.text in AGG_FUNCS and self.peek().kind == "<":
            if not allow_agg:
                self.error("aggregate allowed only in rule heads", tok)
            self.advance()
            self.expect("<")
            var_tok = self.expect("ident")
            if not _is_variable(var_tok.text):
                self.error("aggregate must range over a variable", var_tok)
            self.expect(">")
            return Agg(tok.text, Var(var_tok.text))
        if tok.kind == "int":
            self.advance()
            return Const(int(tok.text))
        if tok.kind == "-" and self.peek().kind == "int":
            self.advance()
            return Const(-int(self.advance().text))
        if tok.kind == "string":
            self.advance()
            return Const(tok.text[1:-1])
        if tok.kind == "ident":
            self.advance()
            if _is_variable(tok.text):
                return Var(tok.text)
            return ConstRef(tok.text)
        self.error("expected predicate argument, found %r" % tok.text)

    # ---- expressions (precedence climbing) ----

    def parse_expr(self) -> Term:
        return self.parse_comparison()

    def parse_comparison(self) -> Term:
        left = self.parse_additive()
        while self.cur.kind in ("==", "!=", "<", "<=", ">", ">=", "="):
            op = self.advance().kind
            if op == "=":
                op = "=="
            right = self.parse_additive()
            left = BinOp(op, left, right)
        return left

    def parse_additive(self) -> Term:
        left = self.parse_multiplicative()
        while self.cur.kind in ("+", "-"):
            op = self.advance().kind
            right = self.parse_multiplicative()
            left = BinOp(op, left, right)
        return left

    def parse_multiplicative(self) -> Term:
        left = self.parse_unary()
        while self.cur.kind in ("*", "/"):
            op = self.advance().kind
            right = self.parse_unary()
            left = BinOp(op, left, right)
        return left

    def parse_unary(self) -> Term:
        if self.at("-"):
            self.advance()
            operand = self.parse_unary()
            if isinstance(operand, Const) and isinstance(operand.value, int):
                return Const(-operand.value)
            return Neg(operand)
        return self.parse_primary()

    def parse_primary(self) -> Term:
        tok = self.cur
        if tok.kind == "int":
            self.advance()
            return Const(int(tok.text))
        if tok.kind == "string":
            self.advance()
            return Const(tok.text[1:-1])
        if tok.kind == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if tok.kind == "|":
            self.advance()
            inner = self.parse_additive()
            self.expect("|")
            return Abs(inner)
        if tok.kind == "ident":
            self.advance()
            if self.at("(") and tok.text[0].islower():
                self.advance()
                args: list[Term] = []
                while not self.at(")"):
                    if args:
                        self.expect(",")
                    args.append(self.parse_expr())
                self.expect(")")
                return Func(tok.text, tuple(args))
            if _is_variable(tok.text):
                return Var(tok.text)
            return ConstRef(tok.text)
        self.error("expected expression, found %r" % (tok.text or "end of input"))


def parse_program(source: str) -> Program:
    """Parse Colog source text into a Program AST.

    Raises CologSyntaxError (with line/column) on malformed input, duplicate
    rule labels, or multiple goal declarations.
    """
    return _Parser(tokenize(source)).parse_program()


# ---- fact files ----

Value = Union[int, str]


@dataclass(frozen=True)
class Fact:
    pred: str
    values: tuple[Value, ...]
    located: bool = False

    def __str__(self) -> str:
        parts = []
        for i, v in enumerate(self.values):
            s = '"%s"' % v if isinstance(v, str) else str(v)
            if i == 0 and self.located:
                s = "@" + s
            parts.append(s)
        return "%s(%s)." % (self.pred, ",".join(parts))


def parse_facts(source: str) -> list[Fact]:
    """Parse a facts file: one `pred(v1,v2,...)` per line, // comments.

    Integers are unquoted; strings are quoted or bare lowercase identifiers.
    A leading @ on the first value marks the tuple's node location.
    """
    parser = _Parser(tokenize(source))
    facts = []
    while not parser.at("eof"):
        name_tok = parser.expect("ident")
        parser.expect("(")
        values: list[Value] = []
        located = False
        first = True
        while not parser.at(")"):
            if not first:
                parser.expect(",")
            if first and parser.at("@"):
                parser.advance()
                located = True
            tok = parser.advance()
            if tok.kind == "int":
                values.append(int(tok.text))
            elif tok.kind == "-":
                values.append(-int(parser.expect("int").text))
            elif tok.kind == "string":
                values.append(tok.text[1:-1])
            elif tok.kind == "ident":
                values.append(tok.text)
            else:
                parser.error("expected fact value, found %r" % tok.text, tok)
            first = False
        parser.expect(")")
        if parser.at("."):
            parser.advance()
        facts.append(Fact(name_tok.text, tuple(values), located=located))
    return facts


def format_facts(facts: list[Fact]) -> str:
    return "\n".join(str(f) for f in facts) + ("\n" if facts else "")
