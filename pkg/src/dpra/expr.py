"""Infix expression language used inside model and plan files.

Grammar (lowest to highest precedence)::

    expr       := or_expr
    or_expr    := and_expr ("or" and_expr)*
    and_expr   := not_expr ("and" not_expr)*
    not_expr   := "not" not_expr | comparison
    comparison := arith (("<" | "<=" | ">" | ">=" | "==" | "!=") arith)?
    arith      := term (("+" | "-") term)*
    term       := unary (("*" | "/") unary)*
    unary      := "-" unary | primary
    primary    := NUMBER | "true" | "false" | NAME | NAME "(" args ")" | "(" expr ")"

``comp == STATE`` tests the discrete state of a component.  ``t`` is the
elapsed mission time.  Built-in functions: ``abs``, ``exp``, ``log``,
``sqrt``, ``min``, ``max`` and ``if(cond, a, b)``.

Expressions are parsed into an immutable AST.  The AST can be evaluated
directly against a name environment (:func:`eval_expression`) or compiled to
the flat stack bytecode consumed by the integration kernel
(:func:`compile_expression`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

__all__ = [
    "Node", "Num", "BoolLit", "Name", "Unary", "Binary", "Call",
    "ExpressionError", "ExprSyntaxError", "UnboundNameError", "ExprTypeError",
    "EvalError", "parse_expression", "unparse", "eval_expression",
    "Scope", "check_expression", "names_in", "depends_on_continuous",
    "compile_expression", "compile_python", "Op", "FUNCTIONS",
]


class ExpressionError(ValueError):
    """Base class for expression problems."""


class ExprSyntaxError(ExpressionError):
    def __init__(self, message: str, column: int, source: str = ""):
        self.column = column
        self.source = source
        super().__init__(f"{message} at column {column}")


class UnboundNameError(ExpressionError):
    pass


class ExprTypeError(ExpressionError):
    pass


class EvalError(ExpressionError):
    """Runtime failure: division by zero or a math domain error."""


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Node:
    pass


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class BoolLit(Node):
    value: bool


@dataclass(frozen=True)
class Name(Node):
    id: str
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Unary(Node):
    op: str
    operand: Node


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple
    col: int = field(default=0, compare=False)


# name -> (arity, result type rule)
FUNCTIONS = {
    "abs": 1, "exp": 1, "log": 1, "sqrt": 1,
    "min": 2, "max": 2, "if": 3,
}

KEYWORDS = {"and", "or", "not", "true", "false"}
COMPARISONS = ("<=", ">=", "==", "!=", "<", ">")

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|!=|[<>+\-*/(),])
""", re.VERBOSE)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos + 1, src)
        kind = m.lastgroup
        if kind != "ws":
            text = m.group(kind)
            if kind == "name" and text in KEYWORDS:
                kind = "kw"
            out.append((kind, text, pos + 1))
        pos = m.end()
    out.append(("eof", "", len(src) + 1))
    return out


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def accept(self, text):
        tok = self.peek()
        if tok[0] in ("op", "kw") and tok[1] == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        tok = self.peek()
        if not self.accept(text):
            found = tok[1] or "end of expression"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok[2], self.src)

    def parse(self) -> Node:
        node = self.or_expr()
        tok = self.peek()
        if tok[0] != "eof":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2], self.src)
        return node

    def or_expr(self):
        node = self.and_expr()
        while self.accept("or"):
            node = Binary("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self.accept("and"):
            node = Binary("and", node, self.not_expr())
        return node

    def not_expr(self):
        if self.accept("not"):
            return Unary("not", self.not_expr())
        return self.comparison()

    def comparison(self):
        node = self.arith()
        tok = self.peek()
        if tok[0] == "op" and tok[1] in COMPARISONS:
            self.take()
            node = Binary(tok[1], node, self.arith())
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] in COMPARISONS:
                raise ExprSyntaxError("chained comparison", nxt[2], self.src)
        return node

    def arith(self):
        node = self.term()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "+-":
                self.take()
                node = Binary(tok[1], node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            tok = self.peek()
            if tok[0] == "op" and tok[1] in "*/":
                self.take()
                node = Binary(tok[1], node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept("-"):
            return Unary("-", self.unary())
        return self.primary()

    def primary(self):
        kind, text, col = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "kw" and text in ("true", "false"):
            return BoolLit(text == "true")
        if kind == "name":
            if self.accept("("):
                args = []
                if not self.accept(")"):
                    args.append(self.or_expr())
                    while self.accept(","):
                        args.append(self.or_expr())
                    self.expect(")")
                if text not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {text!r}", col, self.src)
                if len(args) != FUNCTIONS[text]:
                    raise ExprSyntaxError(
                        f"{text}() takes {FUNCTIONS[text]} argument(s), got {len(args)}", col, self.src)
                return Call(text, tuple(args), col)
            return Name(text, col)
        if kind == "op" and text == "(":
            node = self.or_expr()
            self.expect(")")
            return node
        found = text or "end of expression"
        raise ExprSyntaxError(f"unexpected {found!r}", col, self.src)


def parse_expression(src: str) -> Node:
    """Parse *src* into an AST; raises :class:`ExprSyntaxError` with a column."""
    if not isinstance(src, str):
        raise ExprSyntaxError("expression must be a string", 1, str(src))
    return _Parser(src).parse()


_PREC = {"or": 1, "and": 2, "not": 3,
         "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4, "!=": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "neg": 7}


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def unparse(node: Node) -> str:
    """Canonical text for *node*; ``parse_expression(unparse(n)) == n``."""
    return _unparse(node, 0)


def _unparse(node, ctx):
    if isinstance(node, Num):
        text = _fmt_num(node.value)
        # negative literals only arise from constant folding by callers
        return f"({text})" if node.value < 0 else text
    if isinstance(node, BoolLit):
        return "true" if node.value else "false"
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_unparse(a, 0) for a in node.args)})"
    if isinstance(node, Unary):
        if node.op == "not":
            prec = _PREC["not"]
            text = f"not {_unparse(node.operand, prec)}"
        else:
            prec = _PREC["neg"]
            text = f"-{_unparse(node.operand, prec)}"
        return f"({text})" if prec < ctx else text
    if isinstance(node, Binary):
        prec = _PREC[node.op]
        if prec == 4:
            # comparisons do not chain: both operands must bind tighter
            left = _unparse(node.left, prec + 1)
            right = _unparse(node.right, prec + 1)
        else:
            # left-associative: the right operand needs strictly higher precedence
            left = _unparse(node.left, prec)
            right = _unparse(node.right, prec + 1)
        text = f"{left} {node.op} {right}"
        return f"({text})" if prec < ctx else text
    raise TypeError(f"not an expression node: {node!r}")


def names_in(node: Node) -> set:
    """All bare names referenced by *node* (variables, components, states)."""
    out = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Name):
            out.add(n.id)
        elif isinstance(n, Unary):
            stack.append(n.operand)
        elif isinstance(n, Binary):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.extend(n.args)
    return out


# ---------------------------------------------------------------------------
# direct evaluation

def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def eval_expression(node: Node, env: dict, expect: str | None = None):
    """Evaluate *node* against *env*.

    *env* maps continuous variable names to numbers (or booleans) and
    component names to their current state name.  ``expect`` may be
    ``"bool"`` or ``"num"`` to enforce the result type.
    """
    value = _ev(node, env)
    if expect == "bool" and not isinstance(value, bool):
        raise ExprTypeError(f"expected a boolean result, got {value!r}")
    if expect == "num" and not _is_num(value):
        raise ExprTypeError(f"expected a numeric result, got {value!r}")
    return value


def _lookup(name: Name, env):
    try:
        return env[name.id]
    except KeyError:
        raise UnboundNameError(f"unbound name {name.id!r}") from None


def _state_test(node: Binary, env):
    """Resolve ``comp == STATE`` when one side names a component."""
    for comp_side, state_side in ((node.left, node.right), (node.right, node.left)):
        if isinstance(comp_side, Name) and isinstance(env.get(comp_side.id), str):
            current = env[comp_side.id]
            if isinstance(state_side, Name) and not isinstance(env.get(state_side.id), str):
                return current == state_side.id
            other = _ev(state_side, env)
            if not isinstance(other, str):
                raise ExprTypeError(f"cannot compare component {comp_side.id!r} with {other!r}")
            return current == other
    return None


def _ev(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, BoolLit):
        return node.value
    if isinstance(node, Name):
        return _lookup(node, env)
    if isinstance(node, Unary):
        v = _ev(node.operand, env)
        if node.op == "not":
            if not isinstance(v, bool):
                raise ExprTypeError("'not' needs a boolean operand")
            return not v
        if not _is_num(v):
            raise ExprTypeError("unary '-' needs a numeric operand")
        return -v
    if isinstance(node, Binary):
        op = node.op
        if op in ("and", "or"):
            a = _ev(node.left, env)
            if not isinstance(a, bool):
                raise ExprTypeError(f"'{op}' needs boolean operands")
            if op == "and" and not a:
                return False
            if op == "or" and a:
                return True
            b = _ev(node.right, env)
            if not isinstance(b, bool):
                raise ExprTypeError(f"'{op}' needs boolean operands")
            return b
        if op in ("==", "!="):
            st = _state_test(node, env)
            if st is not None:
                return st if op == "==" else not st
            a, b = _ev(node.left, env), _ev(node.right, env)
            if isinstance(a, bool) != isinstance(b, bool):
                raise ExprTypeError(f"cannot compare {a!r} with {b!r}")
            return (a == b) if op == "==" else (a != b)
        a, b = _ev(node.left, env), _ev(node.right, env)
        if not (_is_num(a) and _is_num(b)):
            raise ExprTypeError(f"operator '{op}' needs numeric operands")
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise EvalError("division by zero")
            return a / b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        if op == ">=":
            return a >= b
    if isinstance(node, Call):
        if node.func == "if":
            c = _ev(node.args[0], env)
            if not isinstance(c, bool):
                raise ExprTypeError("if() condition must be boolean")
            return _ev(node.args[1] if c else node.args[2], env)
        args = [_ev(a, env) for a in node.args]
        if not all(_is_num(a) for a in args):
            raise ExprTypeError(f"{node.func}() needs numeric arguments")
        return _call(node.func, args)
    raise TypeError(f"not an expression node: {node!r}")


def _call(func, args):
    x = args[0]
    if func == "abs":
        return abs(x)
    if func == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return math.inf
    if func == "log":
        if x <= 0:
            raise EvalError("log of a non-positive value")
        return math.log(x)
    if func == "sqrt":
        if x < 0:
            raise EvalError("sqrt of a negative value")
        return math.sqrt(x)
    if func == "min":
        return min(x, args[1])
    if func == "max":
        return max(x, args[1])
    raise EvalError(f"unknown function {func}")


# ---------------------------------------------------------------------------
# static checking

@dataclass
class Scope:
    """Names visible to an expression: numeric variables and components."""
    variables: frozenset = frozenset()
    components: dict = field(default_factory=dict)   # name -> set of states


def check_expression(node: Node, scope: Scope) -> str:
    """Return ``"num"`` or ``"bool"``; raise on unknown names or type errors."""
    if isinstance(node, Num):
        return "num"
    if isinstance(node, BoolLit):
        return "bool"
    if isinstance(node, Name):
        if node.id in scope.variables:
            return "num"
        if node.id in scope.components:
            raise ExprTypeError(f"component {node.id!r} can only be compared with one of its states")
        raise UnboundNameError(f"reference to undeclared name {node.id!r}")
    if isinstance(node, Unary):
        t = check_expression(node.operand, scope)
        want = "bool" if node.op == "not" else "num"
        if t != want:
            raise ExprTypeError(f"operator '{node.op}' needs a {want} operand")
        return t
    if isinstance(node, Binary):
        op = node.op
        if op in ("==", "!="):
            for comp_side, state_side in ((node.left, node.right), (node.right, node.left)):
                if isinstance(comp_side, Name) and comp_side.id in scope.components:
                    states = scope.components[comp_side.id]
                    if not isinstance(state_side, Name) or state_side.id not in states:
                        shown = unparse(state_side)
                        raise UnboundNameError(
                            f"{shown!r} is not a state of component {comp_side.id!r}")
                    return "bool"
            a, b = check_expression(node.left, scope), check_expression(node.right, scope)
            if a != b:
                raise ExprTypeError(f"cannot compare {a} with {b}")
            return "bool"
        a, b = check_expression(node.left, scope), check_expression(node.right, scope)
        if op in ("and", "or"):
            if a != "bool" or b != "bool":
                raise ExprTypeError(f"'{op}' needs boolean operands")
            return "bool"
        if a != "num" or b != "num":
            raise ExprTypeError(f"operator '{op}' needs numeric operands")
        return "bool" if op in COMPARISONS else "num"
    if isinstance(node, Call):
        types = [check_expression(a, scope) for a in node.args]
        if node.func == "if":
            if types[0] != "bool":
                raise ExprTypeError("if() condition must be boolean")
            if types[1] != types[2]:
                raise ExprTypeError("if() branches must have the same type")
            return types[1]
        if any(t != "num" for t in types):
            raise ExprTypeError(f"{node.func}() needs numeric arguments")
        return "num"
    raise TypeError(f"not an expression node: {node!r}")


def depends_on_continuous(node: Node, continuous: set) -> bool:
    """True when *node* can change value while no discrete event happens."""
    return bool(names_in(node) & continuous)


# ---------------------------------------------------------------------------
# bytecode

class Op:
    CONST = 0
    LOAD = 1
    ADD = 2
    SUB = 3
    MUL = 4
    DIV = 5
    NEG = 6
    LT = 7
    LE = 8
    GT = 9
    GE = 10
    EQ = 11
    NE = 12
    NOT = 13
    JZK = 14     # jump if top == 0, keep it; else pop
    JNZK = 15    # jump if top != 0, keep it; else pop
    JZ = 16      # pop, jump if zero
    JMP = 17
    ABS = 18
    EXP = 19
    LOG = 20
    SQRT = 21
    MIN = 22
    MAX = 23


_BINOPS = {"+": Op.ADD, "-": Op.SUB, "*": Op.MUL, "/": Op.DIV,
           "<": Op.LT, "<=": Op.LE, ">": Op.GT, ">=": Op.GE,
           "==": Op.EQ, "!=": Op.NE}
_FUNCOPS = {"abs": Op.ABS, "exp": Op.EXP, "log": Op.LOG, "sqrt": Op.SQRT,
            "min": Op.MIN, "max": Op.MAX}


def compile_expression(node: Node, slots: dict, states: dict, consts: list) -> list:
    """Compile *node* into a list of ``(opcode, arg)`` pairs.

    ``slots`` maps variable and component names to environment slots;
    ``states`` maps component names to ``{state: code}``.  Constants are
    appended to the shared *consts* pool.  Jump targets are relative to the
    start of the returned program.  Booleans are encoded as 0.0 / 1.0.
    """
    code = []

    def const(v):
        consts.append(float(v))
        code.append((Op.CONST, len(consts) - 1))

    def emit(n):
        if isinstance(n, Num):
            const(n.value)
        elif isinstance(n, BoolLit):
            const(1.0 if n.value else 0.0)
        elif isinstance(n, Name):
            if n.id not in slots:
                raise UnboundNameError(f"unbound name {n.id!r}")
            code.append((Op.LOAD, slots[n.id]))
        elif isinstance(n, Unary):
            emit(n.operand)
            code.append((Op.NOT if n.op == "not" else Op.NEG, 0))
        elif isinstance(n, Binary):
            if n.op in ("and", "or"):
                emit(n.left)
                at = len(code)
                code.append((Op.JZK if n.op == "and" else Op.JNZK, -1))
                emit(n.right)
                code[at] = (code[at][0], len(code))
                return
            if n.op in ("==", "!="):
                for comp_side, state_side in ((n.left, n.right), (n.right, n.left)):
                    if isinstance(comp_side, Name) and comp_side.id in states:
                        code.append((Op.LOAD, slots[comp_side.id]))
                        const(states[comp_side.id][state_side.id])
                        code.append((_BINOPS[n.op], 0))
                        return
            emit(n.left)
            emit(n.right)
            code.append((_BINOPS[n.op], 0))
        elif isinstance(n, Call):
            if n.func == "if":
                emit(n.args[0])
                jz = len(code)
                code.append((Op.JZ, -1))
                emit(n.args[1])
                jmp = len(code)
                code.append((Op.JMP, -1))
                code[jz] = (Op.JZ, len(code))
                emit(n.args[2])
                code[jmp] = (Op.JMP, len(code))
                return
            for a in n.args:
                emit(a)
            code.append((_FUNCOPS[n.func], 0))
        else:
            raise TypeError(f"not an expression node: {n!r}")

    emit(node)
    return code


# ---------------------------------------------------------------------------
# Python closures over a slot-indexed environment

def _py_div(a, b):
    if b == 0.0:
        raise EvalError("division by zero")
    return a / b


def _py_exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _py_log(x):
    if x <= 0.0:
        raise EvalError("log of a non-positive value")
    return math.log(x)


def _py_sqrt(x):
    if x < 0.0:
        raise EvalError("sqrt of a negative value")
    return math.sqrt(x)


_PY_HELPERS = {
    "_div": _py_div, "_exp": _py_exp, "_log": _py_log, "_sqrt": _py_sqrt,
    "_abs": lambda x: -x if x < 0.0 else x,
    "_min": lambda a, b: a if a <= b else b,
    "_max": lambda a, b: a if a >= b else b,
    "__builtins__": {},
}


def python_source(node: Node, slots: dict, states: dict) -> str:
    """Python expression text over a list ``e`` laid out like the kernel env."""
    def py(n):
        if isinstance(n, Num):
            return repr(float(n.value))
        if isinstance(n, BoolLit):
            return "True" if n.value else "False"
        if isinstance(n, Name):
            if n.id not in slots:
                raise UnboundNameError(f"unbound name {n.id!r}")
            return f"e[{slots[n.id]}]"
        if isinstance(n, Unary):
            return f"(not {py(n.operand)})" if n.op == "not" else f"(-{py(n.operand)})"
        if isinstance(n, Binary):
            if n.op in ("==", "!="):
                for comp_side, state_side in ((n.left, n.right), (n.right, n.left)):
                    if isinstance(comp_side, Name) and comp_side.id in states:
                        code = float(states[comp_side.id][state_side.id])
                        return f"(e[{slots[comp_side.id]}] {n.op} {code!r})"
            if n.op == "/":
                return f"_div({py(n.left)}, {py(n.right)})"
            return f"({py(n.left)} {n.op} {py(n.right)})"
        if isinstance(n, Call):
            if n.func == "if":
                c, a, b = (py(x) for x in n.args)
                return f"({a} if {c} else {b})"
            return f"_{n.func}({', '.join(py(a) for a in n.args)})"
        raise TypeError(f"not an expression node: {n!r}")

    return py(node)


def compile_python(node: Node, slots: dict, states: dict):
    """Compile *node* to ``f(e)``; same arithmetic as the kernel bytecode."""
    return eval(f"lambda e: {python_source(node, slots, states)}", dict(_PY_HELPERS))
