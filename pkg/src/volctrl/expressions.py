"""Coefficient expression language: AST, recursive-descent parser, evaluator.

Problem coefficients (drift, diffusion, running cost, ...) are closed-form
expressions over declared scalar variables. The grammar is deliberately small:

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          right associative
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Functions: exp, abs, sqrt (one argument), min, max, pow (two arguments).
Evaluation either returns a finite float or raises; NaN never escapes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field


UNARY_OPS = ("neg", "exp", "abs", "sqrt")
BINARY_OPS = ("+", "-", "*", "/", "min", "max", "pow")

_FUNCTIONS = {"exp": 1, "abs": 1, "sqrt": 1, "min": 2, "max": 2, "pow": 2}


class ExpressionError(ValueError):
    """Base class for all expression failures."""


class ExpressionSyntaxError(ExpressionError):
    """Malformed expression text; `offset` is the byte offset of the problem."""

    def __init__(self, message: str, text: str, position: int):
        self.offset = len(text[:position].encode("utf-8"))
        super().__init__(f"{message} (byte offset {self.offset})")


class UnknownVariableError(ExpressionError):
    """Identifier outside the declared variable set; `name` is the offender."""

    def __init__(self, name: str, text: str, position: int):
        self.name = name
        self.offset = len(text[:position].encode("utf-8"))
        super().__init__(f"unknown variable '{name}' (byte offset {self.offset})")


class EvaluationError(ExpressionError):
    """Domain error or non-finite result during evaluation."""


@dataclass(frozen=True)
class Expression:
    """One node of a coefficient-expression tree.

    `op` is 'const', 'var', a unary op (neg, exp, abs, sqrt) or a binary op
    (+, -, *, /, min, max, pow). Structural equality is the dataclass one.
    """

    op: str
    value: float = 0.0
    name: str = ""
    args: tuple["Expression", ...] = field(default=())

    @staticmethod
    def constant(value: float) -> "Expression":
        v = float(value)
        if not math.isfinite(v):
            raise ExpressionError("constants must be finite")
        return Expression("const", value=v)

    @staticmethod
    def variable(name: str) -> "Expression":
        return Expression("var", name=name)

    def free_variables(self) -> frozenset[str]:
        if self.op == "var":
            return frozenset((self.name,))
        if self.op == "const":
            return frozenset()
        out: frozenset[str] = frozenset()
        for a in self.args:
            out = out | a.free_variables()
        return out

    def is_zero(self) -> bool:
        return self.op == "const" and self.value == 0.0

    def __str__(self) -> str:
        return to_text(self)


_TOKEN_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_TOKEN_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    # (kind, lexeme, char position); kinds: num ident op lparen rparen comma end
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c in " \t\r\n":
            i += 1
            continue
        m = _TOKEN_NUMBER.match(text, i)
        if m:
            tokens.append(("num", m.group(), i))
            i = m.end()
            continue
        m = _TOKEN_IDENT.match(text, i)
        if m:
            tokens.append(("ident", m.group(), i))
            i = m.end()
            continue
        if c in "+-*/^":
            tokens.append(("op", c, i))
        elif c == "(":
            tokens.append(("lparen", c, i))
        elif c == ")":
            tokens.append(("rparen", c, i))
        elif c == ",":
            tokens.append(("comma", c, i))
        else:
            raise ExpressionSyntaxError(f"unexpected character {c!r}", text, i)
        i += 1
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed_vars: frozenset[str]):
        self.text = text
        self.allowed = allowed_vars
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, what: str):
        tok = self.advance()
        if tok[0] != kind:
            raise ExpressionSyntaxError(f"expected {what}", self.text, tok[2])
        return tok

    def parse(self) -> Expression:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionSyntaxError("trailing input", self.text, tok[2])
        return e

    def expr(self) -> Expression:
        e = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            e = Expression(op, args=(e, self.term()))
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            e = Expression(op, args=(e, self.unary()))
        return e

    def unary(self) -> Expression:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.advance()
            return Expression("neg", args=(self.unary(),))
        return self.power()

    def power(self) -> Expression:
        e = self.atom()
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "^":
            self.advance()
            return Expression("pow", args=(e, self.unary()))
        return e

    def atom(self) -> Expression:
        tok = self.advance()
        kind, lexeme, pos = tok
        if kind == "num":
            return Expression("const", value=float(lexeme))
        if kind == "lparen":
            e = self.expr()
            self.expect("rparen", "')'")
            return e
        if kind == "ident":
            if self.peek()[0] == "lparen":
                if lexeme not in _FUNCTIONS:
                    raise ExpressionSyntaxError(f"unknown function '{lexeme}'", self.text, pos)
                self.advance()
                args = [self.expr()]
                while self.peek()[0] == "comma":
                    self.advance()
                    args.append(self.expr())
                self.expect("rparen", "')'")
                arity = _FUNCTIONS[lexeme]
                if len(args) != arity:
                    raise ExpressionSyntaxError(
                        f"'{lexeme}' takes {arity} argument(s), got {len(args)}", self.text, pos
                    )
                if lexeme == "pow":
                    return Expression("pow", args=tuple(args))
                return Expression(lexeme, args=tuple(args))
            if lexeme not in self.allowed:
                raise UnknownVariableError(lexeme, self.text, pos)
            return Expression("var", name=lexeme)
        if kind == "end":
            raise ExpressionSyntaxError("unexpected end of input", self.text, pos)
        raise ExpressionSyntaxError(f"unexpected token {lexeme!r}", self.text, pos)


def parse_expression(text: str, allowed_vars) -> Expression:
    """Parse `text` into an Expression over exactly the names in `allowed_vars`.

    The printed form of the result re-parses to a structurally identical tree.
    Raises ExpressionSyntaxError (with a byte offset) on malformed input and
    UnknownVariableError for identifiers outside `allowed_vars`.
    """
    return _Parser(text, frozenset(allowed_vars)).parse()


# Precedence levels used by the printer; higher binds tighter.
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "pow": 4}


def _prec(e: Expression) -> int:
    if e.op in ("const", "var"):
        return 5
    if e.op in ("exp", "abs", "sqrt", "min", "max"):
        return 5  # function call syntax, self-delimiting
    return _PREC[e.op]


def to_text(e: Expression) -> str:
    """Render an Expression; parse(to_text(e)) is structurally equal to e
    whenever e contains no negative constants (parsed trees never do)."""
    if e.op == "const":
        return repr(e.value)
    if e.op == "var":
        return e.name
    if e.op in ("exp", "abs", "sqrt"):
        return f"{e.op}({to_text(e.args[0])})"
    if e.op in ("min", "max"):
        return f"{e.op}({to_text(e.args[0])}, {to_text(e.args[1])})"
    if e.op == "neg":
        (a,) = e.args
        inner = to_text(a)
        if _prec(a) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    a, b = e.args
    left, right = to_text(a), to_text(b)
    if e.op in ("+", "-"):
        if _prec(a) < 1:
            left = f"({left})"
        if _prec(b) <= 1:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if e.op in ("*", "/"):
        if _prec(a) < 2:
            left = f"({left})"
        if _prec(b) <= 2:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if e.op == "pow":
        if _prec(a) < 5:
            left = f"({left})"
        if _prec(b) < 3:
            right = f"({right})"
        return f"{left} ^ {right}"
    raise ExpressionError(f"unprintable node {e.op!r}")


def eval_expression(e: Expression, bindings) -> float:
    """Evaluate at a name->float binding. Standard arithmetic; min/max are
    exact comparisons. Raises EvaluationError on missing bindings, division
    by zero, domain errors, and any non-finite intermediate."""
    v = _eval(e, bindings)
    if not math.isfinite(v):
        raise EvaluationError(f"non-finite result {v!r}")
    return v


def _eval(e: Expression, bindings) -> float:
    op = e.op
    if op == "const":
        return e.value
    if op == "var":
        try:
            return float(bindings[e.name])
        except KeyError:
            raise EvaluationError(f"missing binding for '{e.name}'") from None
    if op == "neg":
        return -_eval(e.args[0], bindings)
    if op == "exp":
        try:
            return math.exp(_eval(e.args[0], bindings))
        except OverflowError:
            raise EvaluationError("exp overflow") from None
    if op == "abs":
        return abs(_eval(e.args[0], bindings))
    if op == "sqrt":
        a = _eval(e.args[0], bindings)
        if a < 0.0:
            raise EvaluationError(f"sqrt of negative value {a!r}")
        return math.sqrt(a)
    a = _eval(e.args[0], bindings)
    b = _eval(e.args[1], bindings)
    if op == "+":
        r = a + b
    elif op == "-":
        r = a - b
    elif op == "*":
        r = a * b
    elif op == "/":
        if b == 0.0:
            raise EvaluationError("division by zero")
        r = a / b
    elif op == "min":
        r = min(a, b)
    elif op == "max":
        r = max(a, b)
    elif op == "pow":
        try:
            r = math.pow(a, b)
        except (ValueError, OverflowError) as exc:
            raise EvaluationError(f"pow domain error: {exc}") from None
    else:
        raise ExpressionError(f"unknown operator {e.op!r}")
    if not math.isfinite(r):
        raise EvaluationError(f"non-finite intermediate in '{op}'")
    return r


def to_source(e: Expression, var_map, array_mode: bool = False) -> str:
    """Render as Python source for generated kernels. `var_map` maps variable
    names to source snippets. Scalar mode targets numba-compatible math calls;
    array mode targets numpy ufuncs (callers must check finiteness after)."""
    if e.op == "const":
        return repr(e.value)
    if e.op == "var":
        try:
            return var_map[e.name]
        except KeyError:
            raise ExpressionError(f"no source binding for variable '{e.name}'") from None
    if e.op == "neg":
        return f"(-{to_source(e.args[0], var_map, array_mode)})"
    if e.op in ("exp", "sqrt"):
        fn = f"np.{e.op}" if array_mode else f"math.{e.op}"
        return f"{fn}({to_source(e.args[0], var_map, array_mode)})"
    if e.op == "abs":
        fn = "np.abs" if array_mode else "abs"
        return f"{fn}({to_source(e.args[0], var_map, array_mode)})"
    a = to_source(e.args[0], var_map, array_mode)
    if e.op in ("min", "max"):
        b = to_source(e.args[1], var_map, array_mode)
        fn = {"min": "np.minimum", "max": "np.maximum"}[e.op] if array_mode else e.op
        return f"{fn}({a}, {b})"
    b = to_source(e.args[1], var_map, array_mode)
    if e.op == "pow":
        return f"({a}) ** ({b})"
    return f"({a} {e.op} {b})"
