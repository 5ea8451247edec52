"""A small language for per-class cell dynamics that are admissible by construction.

Each block defines the right-hand side for an input-isomorphism class of
cells. Inputs are only reachable through symmetric reducers over all inputs
of one arrow type, so cells of a class are bound to see the same function of
the same multiset of states. ``raw`` blocks unlock positional access and are
symmetrized over the cell's self-isomorphisms instead.

Blocks are compiled to Python functions via generated source; every name in
that source is either a helper from this module or a mangled user identifier
that passed the tokenizer.

Grammar (EBNF)::

    program   = { param | def | block } ;
    param     = "param" IDENT "=" [ "-" ] NUMBER ";" ;
    def       = "def" IDENT "(" [ IDENT { "," IDENT } ] ")" "=" expr ";" ;
    block     = [ "raw" ] "class" [ "type" | "cell" ] selector "{" { stmt } "}" ;
    selector  = IDENT | NUMBER | STRING ;
    stmt      = "let" IDENT "=" expr ";"
              | "dx" [ "[" INT "]" ] "=" expr ";"
              | "phi" "=" expr ";"                      (raw blocks)
              | "dir" "=" expr ";" ;                    (raw blocks)
    expr      = term { ( "+" | "-" ) term } ;
    term      = unary { ( "*" | "/" ) unary } ;
    unary     = ( "-" | "+" ) unary | power ;
    power     = postfix [ "^" unary ] ;
    postfix   = atom { "[" INT "]" } ;
    atom      = NUMBER | IDENT | IDENT "(" [ arg { "," arg } ] ")" | "(" expr ")" ;
    arg       = IDENT "->" expr | expr ;
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field as dc_field
from typing import Callable, Mapping, Sequence

import numpy as np

from .fields import Field, FieldEvaluationError, SymmetrizedField
from .network import TypedNetwork, input_classes


class DSLError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)
        self.line, self.col = line, col


class DSLSyntaxError(DSLError):
    pass


class AsymmetricConstructError(DSLError):
    pass


class UnknownArrowTypeError(DSLError):
    pass


# -- tokenizer ---------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>->|[-+*/^()\[\]{},;=])
""", re.VERBOSE)

KEYWORDS = {"param", "def", "class", "raw", "let", "type", "cell"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Token]:
    tokens, line, line_start, pos = [], 1, 0, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind, text = m.lastgroup, m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind == "ident" and text in KEYWORDS:
            tokens.append(Token("kw", text, line, col))
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# -- syntax tree ----------------------------------------------------------------------

@dataclass(frozen=True)
class Node:
    line: int
    col: int


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Name(Node):
    id: str


@dataclass(frozen=True)
class Lambda(Node):
    var: str
    body: Node


@dataclass(frozen=True)
class Call(Node):
    func: str
    args: tuple


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class Index(Node):
    target: Node
    index: int


@dataclass(frozen=True)
class Stmt:
    kind: str            # let | dx | phi | dir
    name: str | None     # let name
    component: int | None
    expr: Node
    line: int
    col: int


@dataclass(frozen=True)
class Block:
    raw: bool
    qualifier: str | None
    selector: str
    body: tuple[Stmt, ...]
    line: int
    col: int


@dataclass(frozen=True)
class FuncDef:
    name: str
    params: tuple[str, ...]
    body: Node
    line: int
    col: int


@dataclass
class Program:
    params: dict[str, float] = dc_field(default_factory=dict)
    defs: dict[str, FuncDef] = dc_field(default_factory=dict)
    blocks: list[Block] = dc_field(default_factory=list)


class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> DSLSyntaxError:
        tok = tok or self.tok
        found = tok.text or "end of input"
        return DSLSyntaxError(f"{msg} (found {found!r})", tok.line, tok.col)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            raise self.error(f"expected {what or text or kind}")
        return t

    def program(self) -> Program:
        prog = Program()
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("kw", "param"):
                name = self.expect("ident", what="parameter name").text
                self.expect("op", "=")
                sign = -1.0 if self.accept("op", "-") else 1.0
                value = sign * float(self.expect("number", what="number").text)
                self.expect("op", ";")
                if name in prog.params:
                    raise DSLError(f"parameter {name!r} defined twice", t.line, t.col)
                prog.params[name] = value
            elif self.accept("kw", "def"):
                name = self.expect("ident", what="function name").text
                self.expect("op", "(")
                params = []
                if not self.accept("op", ")"):
                    params.append(self.expect("ident", what="argument name").text)
                    while self.accept("op", ","):
                        params.append(self.expect("ident", what="argument name").text)
                    self.expect("op", ")")
                self.expect("op", "=")
                body = self.expr()
                self.expect("op", ";")
                if name in prog.defs or name in BUILTINS or name in REDUCERS:
                    raise DSLError(f"function {name!r} is already defined", t.line, t.col)
                prog.defs[name] = FuncDef(name, tuple(params), body, t.line, t.col)
            elif t.kind == "kw" and t.text in ("raw", "class"):
                prog.blocks.append(self.block())
            else:
                raise self.error("expected 'param', 'def' or 'class'")
        return prog

    def block(self) -> Block:
        start = self.tok
        raw = bool(self.accept("kw", "raw"))
        self.expect("kw", "class")
        qual = None
        if self.tok.kind == "kw" and self.tok.text in ("type", "cell"):
            qual = self.tok.text
            self.i += 1
        t = self.tok
        if t.kind == "string":
            sel = t.text[1:-1]
        elif t.kind in ("ident", "number"):
            sel = t.text
        else:
            raise self.error("expected a cell type or cell id")
        self.i += 1
        self.expect("op", "{")
        body = []
        while not self.accept("op", "}"):
            body.append(self.stmt(raw))
        return Block(raw, qual, sel, tuple(body), start.line, start.col)

    def stmt(self, raw: bool) -> Stmt:
        t = self.tok
        if self.accept("kw", "let"):
            name = self.expect("ident", what="variable name").text
            self.expect("op", "=")
            e = self.expr()
            self.expect("op", ";")
            return Stmt("let", name, None, e, t.line, t.col)
        name = self.expect("ident", what="'let', 'dx', 'phi' or 'dir'")
        if name.text == "dx":
            comp = None
            if self.accept("op", "["):
                comp = int(self.expect("number", what="component index").text)
                self.expect("op", "]")
            self.expect("op", "=")
            e = self.expr()
            self.expect("op", ";")
            return Stmt("dx", None, comp, e, t.line, t.col)
        if name.text in ("phi", "dir"):
            if not raw:
                raise DSLError(f"'{name.text}' is only allowed in raw blocks", t.line, t.col)
            self.expect("op", "=")
            e = self.expr()
            self.expect("op", ";")
            return Stmt(name.text, None, None, e, t.line, t.col)
        raise self.error("expected 'let', 'dx', 'phi' or 'dir'", name)

    def expr(self) -> Node:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok
            self.i += 1
            left = BinOp(op.line, op.col, op.text, left, self.term())
        return left

    def term(self) -> Node:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok
            self.i += 1
            left = BinOp(op.line, op.col, op.text, left, self.unary())
        return left

    def unary(self) -> Node:
        t = self.tok
        if self.accept("op", "-"):
            return Neg(t.line, t.col, self.unary())
        if self.accept("op", "+"):
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.postfix()
        t = self.tok
        if self.accept("op", "^"):
            return BinOp(t.line, t.col, "^", base, self.unary())
        return base

    def postfix(self) -> Node:
        node = self.atom()
        while self.tok.kind == "op" and self.tok.text == "[":
            t = self.tok
            self.i += 1
            idx = self.expect("number", what="integer index")
            if not idx.text.isdigit():
                raise self.error("index must be a nonnegative integer literal", idx)
            self.expect("op", "]")
            node = Index(t.line, t.col, node, int(idx.text))
        return node

    def atom(self) -> Node:
        t = self.tok
        if self.accept("number"):
            return Num(t.line, t.col, float(t.text))
        if self.accept("op", "("):
            e = self.expr()
            self.expect("op", ")")
            return e
        if self.accept("ident"):
            if self.accept("op", "("):
                args = []
                if not self.accept("op", ")"):
                    args.append(self.arg())
                    while self.accept("op", ","):
                        args.append(self.arg())
                    self.expect("op", ")")
                return Call(t.line, t.col, t.text, tuple(args))
            return Name(t.line, t.col, t.text)
        raise self.error("expected an expression")

    def arg(self) -> Node:
        t = self.tok
        if t.kind == "ident" and self.toks[self.i + 1].kind == "op" and self.toks[self.i + 1].text == "->":
            self.i += 2
            return Lambda(t.line, t.col, t.text, self.expr())
        return self.expr()


def parse_program(src: str) -> Program:
    return Parser(src).program()


# -- runtime helpers used by generated code -----------------------------------------

def _log(v):
    if np.any(np.asarray(v) <= 0):
        raise FieldEvaluationError("log of a nonpositive value")
    return np.log(v)


def _sqrt(v):
    if np.any(np.asarray(v) < 0):
        raise FieldEvaluationError("sqrt of a negative value")
    return np.sqrt(v)


def _div(a, b):
    if np.any(np.asarray(b) == 0):
        raise FieldEvaluationError("division by zero")
    return a / b


def _pow(a, b):
    if np.any(np.asarray(a) < 0) and not float(np.asarray(b).flat[0]).is_integer():
        raise FieldEvaluationError("non-integer power of a negative value")
    if np.any(np.asarray(a) == 0) and np.any(np.asarray(b) < 0):
        raise FieldEvaluationError("negative power of zero")
    return np.power(a, b)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _stack(vals):
    return np.array(vals, dtype=float)


def _fsum_cols(arr):
    if arr.ndim == 1:
        return math.fsum(arr)
    return np.array([math.fsum(col) for col in arr.T])


# Reductions are exact (fsum) or run over sorted values, so their result is a
# function of the multiset of inputs only, bit for bit.
def _agg_sum(vals):
    return _fsum_cols(_stack(vals))


def _agg_mean(vals):
    return _agg_sum(vals) / len(vals)


def _agg_prod(vals):
    arr = np.sort(_stack(vals), axis=0)
    out = arr[0].copy() if arr.ndim > 1 else float(arr[0])
    for v in arr[1:]:
        out = out * v
    return out


def _agg_p(k, vals):
    return _fsum_cols(np.sort(_stack(vals), axis=0) ** k)


def _agg_e(k, vals):
    arr = np.sort(_stack(vals), axis=0)
    e = [np.ones(arr.shape[1:]) if arr.ndim > 1 else 1.0] + [0.0] * k
    for v in arr:
        for j in range(k, 0, -1):
            e[j] = e[j] + v * e[j - 1]
    return e[k]


def _vec(*vals):
    return np.array([float(np.asarray(v).reshape(-1)[0]) for v in vals])


def _dot(a, b):
    return math.fsum(np.asarray(a, dtype=float).reshape(-1) * np.asarray(b, dtype=float).reshape(-1))


_RUNTIME = {
    "np": np, "math": math, "_log": _log, "_sqrt": _sqrt, "_div": _div, "_pow": _pow,
    "_sigmoid": _sigmoid, "_agg_sum": _agg_sum, "_agg_mean": _agg_mean, "_agg_prod": _agg_prod,
    "_agg_p": _agg_p, "_agg_e": _agg_e, "_vec": _vec, "_dot": _dot,
}

# name -> (arity, python callable name); all shape preserving
BUILTINS = {
    "sin": "np.sin", "cos": "np.cos", "tan": "np.tan", "tanh": "np.tanh", "sinh": "np.sinh",
    "cosh": "np.cosh", "exp": "np.exp", "atan": "np.arctan", "log": "_log", "sqrt": "_sqrt",
    "sigmoid": "_sigmoid",
}
REDUCERS = {"agg_sum", "agg_mean", "agg_prod", "agg_e", "agg_p"}
CONSTANTS = {"pi": math.pi}

# -- compiler -------------------------------------------------------------------------

Shape = int  # 0 for scalar, d for a length-d vector


def _join_shapes(a: Shape, b: Shape, node: Node) -> Shape:
    # scalars and length-1 vectors broadcast against anything
    if a == b or b == 0:
        return a
    if a == 0:
        return b
    if a == 1 or b == 1:
        return max(a, b)
    raise DSLError(f"dimension mismatch: {a} vs {b}", node.line, node.col)


@dataclass
class ClassInfo:
    cells: tuple[str, ...]
    rep: str
    dim: int
    slot_types: tuple[str, ...]          # arrow type of each explicit input, canonical order
    slot_dims: tuple[int, ...]
    type_order: tuple[str, ...]          # arrow types present, in first-appearance order

    def type_dim(self, t: str) -> int:
        return self.slot_dims[self.slot_types.index(t)]


def class_info(net: TypedNetwork, cells: Sequence[str]) -> ClassInfo:
    rep = cells[0]
    ins = net.inputs(rep)
    types = tuple(net.arrow(a).type for a in ins.arrows)
    dims = tuple(net.dim(t) for t in ins.tails)
    order = tuple(dict.fromkeys(types))
    return ClassInfo(tuple(cells), rep, net.dim(rep), types, dims, order)


class _Compiler:
    """Compiles one block for one class to a Python expression string."""

    def __init__(self, prog: Program, params: Mapping[str, float], info: ClassInfo,
                 raw: bool, arrow_types: set[str]):
        self.prog, self.params, self.info, self.raw = prog, params, info, raw
        self.arrow_types = arrow_types
        self.scopes: list[dict[str, tuple[str, Shape]]] = []
        self.def_stack: list[str] = []

    def lookup(self, name: str):
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        return None

    def resolve_arrow_type(self, name: str, node: Node) -> str:
        cands = [name] + ([name[:-3]] if name.endswith("_in") else [])
        for t in cands:
            if t in self.info.type_order:
                return t
        for t in cands:
            if t in self.arrow_types:
                raise UnknownArrowTypeError(
                    f"arrow type {t!r} does not occur among the inputs of class "
                    f"{{{', '.join(self.info.cells)}}}", node.line, node.col)
        raise UnknownArrowTypeError(f"unknown arrow type {name!r}", node.line, node.col)

    def expr(self, node: Node) -> tuple[str, Shape]:
        if isinstance(node, Num):
            return repr(node.value), 0
        if isinstance(node, Name):
            return self.name(node)
        if isinstance(node, Neg):
            code, shape = self.expr(node.operand)
            return f"(-{code})", shape
        if isinstance(node, BinOp):
            lc, ls = self.expr(node.left)
            rc, rs = self.expr(node.right)
            shape = _join_shapes(ls, rs, node)
            if node.op == "/":
                return f"_div({lc}, {rc})", shape
            if node.op == "^":
                if isinstance(node.right, Num) and node.right.value.is_integer() and node.right.value >= 0:
                    return f"({lc} ** {int(node.right.value)})", shape
                return f"_pow({lc}, {rc})", shape
            return f"({lc} {node.op} {rc})", shape
        if isinstance(node, Index):
            return self.index(node)
        if isinstance(node, Call):
            return self.call(node)
        if isinstance(node, Lambda):
            raise DSLError("a lambda is only allowed as the last argument of a reducer",
                           node.line, node.col)
        raise AssertionError(node)

    def name(self, node: Name) -> tuple[str, Shape]:
        hit = self.lookup(node.id)
        if hit is not None:
            return hit
        if node.id == "self":
            if self.def_stack:
                raise DSLError("'self' is not visible inside a def; pass it as an argument",
                               node.line, node.col)
            return "s", self.info.dim
        if node.id == "input":
            if not self.raw:
                raise AsymmetricConstructError(
                    "positional access to inputs is only allowed in raw blocks; "
                    "use a reducer such as agg_sum", node.line, node.col)
            raise DSLError("'input' must be indexed, as in input[0]", node.line, node.col)
        if node.id in self.params:
            return repr(float(self.params[node.id])), 0
        if node.id in CONSTANTS:
            return repr(CONSTANTS[node.id]), 0
        if node.id in self.arrow_types or node.id.endswith("_in") and node.id[:-3] in self.arrow_types:
            raise AsymmetricConstructError(
                f"arrow type {node.id!r} can only be used inside a symmetric reducer",
                node.line, node.col)
        raise DSLError(f"unknown name {node.id!r}", node.line, node.col)

    def index(self, node: Index) -> tuple[str, Shape]:
        tgt = node.target
        if isinstance(tgt, Name) and self.lookup(tgt.id) is None:
            if tgt.id == "input":
                if not self.raw:
                    raise AsymmetricConstructError(
                        "positional access to inputs is only allowed in raw blocks; "
                        "use a reducer such as agg_sum", node.line, node.col)
                n = len(self.info.slot_types)
                if node.index >= n:
                    raise DSLError(f"input[{node.index}] is outside the input set of class "
                                   f"{{{', '.join(self.info.cells)}}} ({n} inputs)",
                                   node.line, node.col)
                return f"X[{node.index}]", self.info.slot_dims[node.index]
            if tgt.id in self.arrow_types or tgt.id.endswith("_in") and tgt.id[:-3] in self.arrow_types:
                raise AsymmetricConstructError(
                    f"positional access to an individual input of type {tgt.id!r}",
                    node.line, node.col)
        code, shape = self.expr(tgt)
        if shape == 0:
            raise DSLError("cannot index a scalar", node.line, node.col)
        if node.index >= shape:
            raise DSLError(f"component {node.index} out of range for dimension {shape}",
                           node.line, node.col)
        return f"{code}[{node.index}]", 0

    def call(self, node: Call) -> tuple[str, Shape]:
        f, args = node.func, node.args
        if f in REDUCERS:
            return self.reducer(node)
        if any(isinstance(a, Lambda) for a in args):
            raise DSLError(f"{f}() does not take a lambda", node.line, node.col)
        if f in BUILTINS:
            if len(args) != 1:
                raise DSLError(f"{f}() takes 1 argument", node.line, node.col)
            code, shape = self.expr(args[0])
            return f"{BUILTINS[f]}({code})", shape
        if f == "vec":
            if not args:
                raise DSLError("vec() needs at least one component", node.line, node.col)
            codes = []
            for a in args:
                code, shape = self.expr(a)
                if shape > 1:
                    raise DSLError("vec() components must be scalars", a.line, a.col)
                codes.append(code)
            return f"_vec({', '.join(codes)})", len(codes)
        if f == "dot":
            if len(args) != 2:
                raise DSLError("dot() takes 2 arguments", node.line, node.col)
            (ac, ash), (bc, bsh) = self.expr(args[0]), self.expr(args[1])
            if ash != bsh:
                raise DSLError(f"dot() of dimensions {ash} and {bsh}", node.line, node.col)
            return f"_dot({ac}, {bc})", 0
        if f in self.prog.defs:
            d = self.prog.defs[f]
            if f in self.def_stack:
                raise DSLError(f"recursive definition of {f!r}", node.line, node.col)
            if len(args) != len(d.params):
                raise DSLError(f"{f}() takes {len(d.params)} argument(s), got {len(args)}",
                               node.line, node.col)
            compiled = [self.expr(a) for a in args]
            scope = {p: (f"A{len(self.def_stack)}_{p}", sh) for p, (_, sh) in zip(d.params, compiled)}
            self.def_stack.append(f)
            saved, self.scopes = self.scopes, [scope]
            try:
                body, shape = self.expr(d.body)
            finally:
                self.scopes = saved
                self.def_stack.pop()
            names = ", ".join(v[0] for v in scope.values())
            values = ", ".join(c for c, _ in compiled)
            return f"(lambda {names}: {body})({values})", shape
        raise DSLError(f"unknown function {f!r}", node.line, node.col)

    def reducer(self, node: Call) -> tuple[str, Shape]:
        f, args = node.func, list(node.args)
        k = None
        if f in ("agg_e", "agg_p"):
            if len(args) != 3 or not isinstance(args[0], Num) or not args[0].value.is_integer() \
                    or args[0].value < 1:
                raise DSLError(f"{f}(k, TYPE, u -> expr) needs a positive integer k",
                               node.line, node.col)
            k = int(args.pop(0).value)
        if len(args) != 2 or not isinstance(args[0], Name) or not isinstance(args[1], Lambda):
            raise DSLError(f"{f} expects (TYPE, u -> expr)", node.line, node.col)
        atype = self.resolve_arrow_type(args[0].id, args[0])
        lam = args[1]
        ti = self.info.type_order.index(atype)
        var = f"U{len(self.scopes)}_{lam.var}"
        self.scopes.append({lam.var: (var, self.info.type_dim(atype))})
        try:
            body, shape = self.expr(lam.body)
        finally:
            self.scopes.pop()
        vals = f"[{body} for {var} in I[{ti}]]"
        if k is not None:
            if k > self.info.slot_types.count(atype) and f == "agg_e":
                return "0.0", shape
            return f"_{f}({k}, {vals})", shape
        return f"_{f}({vals})", shape


def _check_output(shape: Shape, dim: int, node: Stmt) -> None:
    if shape not in (0, 1, dim):
        raise DSLError(f"right-hand side has dimension {shape}, cell state has {dim}",
                       node.line, node.col)


def _compile_block(prog: Program, params, block: Block, info: ClassInfo, arrow_types: set[str]):
    """Return ('dx', f(s, I)) or ('raw', phi(s, X), direction)."""
    comp = _Compiler(prog, params, info, block.raw, arrow_types)
    comp.scopes.append({})
    lines, dx_full, dx_parts, phi, direction = [], None, {}, None, None
    for st in block.body:
        if st.kind == "let":
            if st.name in ("self", "input") or st.name in params:
                raise DSLError(f"cannot rebind {st.name!r}", st.line, st.col)
            code, shape = comp.expr(st.expr)
            var = f"L_{st.name}_{len(lines)}"
            lines.append(f"    {var} = {code}")
            comp.scopes[0][st.name] = (var, shape)
        elif st.kind == "dx":
            if block.raw:
                raise DSLError("raw blocks define 'phi', not 'dx'", st.line, st.col)
            code, shape = comp.expr(st.expr)
            if st.component is None:
                if dx_full is not None or dx_parts:
                    raise DSLError("dx assigned more than once", st.line, st.col)
                _check_output(shape, info.dim, st)
                dx_full = code
            else:
                if dx_full is not None or st.component in dx_parts:
                    raise DSLError("dx assigned more than once", st.line, st.col)
                if st.component >= info.dim:
                    raise DSLError(f"dx[{st.component}] out of range for dimension {info.dim}",
                                   st.line, st.col)
                if shape > 1:
                    raise DSLError("dx[k] needs a scalar", st.line, st.col)
                dx_parts[st.component] = code
        elif st.kind == "phi":
            if phi is not None:
                raise DSLError("phi assigned more than once", st.line, st.col)
            code, shape = comp.expr(st.expr)
            if shape > 1:
                raise DSLError("phi must be scalar valued", st.line, st.col)
            phi = f"float(np.asarray({code}).reshape(-1)[0])"
        elif st.kind == "dir":
            code, shape = comp.expr(st.expr)
            _check_output(shape, info.dim, st)
            try:
                value = eval(code, dict(_RUNTIME), {})  # constant expression
            except NameError:
                raise DSLError("dir must be a constant expression", st.line, st.col) from None
            direction = np.broadcast_to(np.asarray(value, dtype=float), (info.dim,)).copy()
    where = f"class {block.selector!r} (line {block.line})"
    if block.raw:
        if phi is None:
            raise DSLError(f"raw {where} does not define phi", block.line, block.col)
        if direction is None:
            if info.dim != 1:
                raise DSLError(f"raw {where} needs 'dir' for dimension {info.dim}",
                               block.line, block.col)
            direction = np.ones(1)
        src = "def _phi(s, X):\n" + "\n".join(lines + [f"    return {phi}"]) + "\n"
        ns = dict(_RUNTIME)
        exec(compile(src, f"<dsl {where}>", "exec"), ns)
        return ("raw", ns["_phi"], direction)
    if dx_full is None and not dx_parts:
        raise DSLError(f"{where} does not define dx", block.line, block.col)
    if dx_parts:
        missing = sorted(set(range(info.dim)) - set(dx_parts))
        if missing:
            raise DSLError(f"{where}: dx components {missing} are not defined",
                           block.line, block.col)
        dx_full = f"_vec({', '.join(dx_parts[k] for k in range(info.dim))})"
    src = ("def _f(s, I):\n" + "\n".join(lines + [f"    return {dx_full}"]) + "\n")
    ns = dict(_RUNTIME)
    exec(compile(src, f"<dsl {where}>", "exec"), ns)
    return ("dx", ns["_f"])


class FieldSpec(Field):
    """Field compiled from DSL source; immutable once built."""

    def __init__(self, net: TypedNetwork, source: str, params: Mapping[str, float],
                 class_of: dict[str, ClassInfo], funcs: dict[str, Callable],
                 symmetrized: SymmetrizedField | None):
        super().__init__(net)
        self.source = source
        self.params = dict(params)
        self.class_of = class_of
        self._funcs = funcs
        self._sym = symmetrized
        # per cell: for each arrow type of its class (in class order), the input slots
        self._groups = {}
        for c in net.cell_ids:
            info = class_of[c]
            types = [net.arrow(a).type for a in net.inputs(c).arrows]
            self._groups[c] = tuple(tuple(i for i, t in enumerate(types) if t == at)
                                    for at in info.type_order)
        self._dims = {c: net.dim(c) for c in net.cell_ids}

    def local(self, c, x_c, inputs):
        f = self._funcs.get(c)
        try:
            if f is None:
                return self._sym.local(c, x_c, inputs)
            grouped = [[inputs[i] for i in g] for g in self._groups[c]]
            out = f(x_c, grouped)
        except FieldEvaluationError as exc:
            raise FieldEvaluationError(str(exc), c) from None
        if np.ndim(out) == 0 or np.shape(out) == (1,):
            return np.full(self._dims[c], float(np.asarray(out).reshape(-1)[0]))
        return np.asarray(out, dtype=float)


def _resolve_selector(net: TypedNetwork, block: Block) -> tuple[str, str]:
    types = {c.type for c in net.cells}
    if block.qualifier in (None, "type") and block.selector in types:
        return "type", block.selector
    if block.qualifier in (None, "cell") and net.has_cell(block.selector):
        return "cell", block.selector
    kind = block.qualifier or "cell type or cell"
    raise DSLError(f"unknown {kind} {block.selector!r}", block.line, block.col)


def parse_field(src: str, net: TypedNetwork, params: Mapping[str, float] | None = None) -> FieldSpec:
    """Compile DSL source against a network.

    ``params`` override ``param`` declarations (unknown names are an error).
    A block selecting a cell type applies to every input class of that type;
    a block selecting a cell applies to the whole class of that cell and
    takes precedence over a type block.
    """
    net.require_valid()
    prog = parse_program(src)
    values = dict(prog.params)
    for k, v in (params or {}).items():
        if k not in values:
            raise DSLError(f"unknown parameter {k!r}")
        values[k] = float(v)

    classes = input_classes(net)
    infos = [class_info(net, cls) for cls in classes]
    class_idx = {c: i for i, cls in enumerate(classes) for c in cls}
    by_type: dict[str, Block] = {}
    by_class: dict[int, Block] = {}
    for b in prog.blocks:
        kind, sel = _resolve_selector(net, b)
        if kind == "type":
            if sel in by_type:
                raise DSLError(f"cell type {sel!r} is defined twice", b.line, b.col)
            by_type[sel] = b
        else:
            i = class_idx[sel]
            if i in by_class:
                prev = by_class[i]
                raise DSLError(
                    f"conflicting definitions for class {{{', '.join(classes[i])}}} "
                    f"(also defined at line {prev.line})", b.line, b.col)
            by_class[i] = b

    missing = [cls for i, cls in enumerate(classes)
               if i not in by_class and net.cell_type(cls[0]) not in by_type]
    if missing:
        names = "; ".join("{" + ", ".join(cls) + "}" for cls in missing)
        raise DSLError(f"every cell class must be defined; missing: {names}")

    arrow_types = set(net.arrow_types)
    funcs, raw, directions = {}, {}, {}
    for i, info in enumerate(infos):
        block = by_class.get(i) or by_type[net.cell_type(info.rep)]
        compiled = _compile_block(prog, values, block, info, arrow_types)
        if compiled[0] == "dx":
            for c in info.cells:
                funcs[c] = compiled[1]
        else:
            raw[info.rep] = compiled[1]
            directions[info.rep] = compiled[2]
    sym = SymmetrizedField(net, raw, directions) if raw else None
    class_of = {c: infos[class_idx[c]] for c in net.cell_ids}
    return FieldSpec(net, src, values, class_of, funcs, sym)


def load_field(path, net: TypedNetwork, params: Mapping[str, float] | None = None) -> FieldSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_field(fh.read(), net, params)


# -- generated sources ------------------------------------------------------------------

def _selector(c: str) -> str:
    return 'cell "' + c + '"'


def _num(v: float) -> str:
    return repr(float(v))


def _affine(coefs, var: str, dim: int, bias: float) -> str:
    terms = [f"{_num(a)} * {var}[{j}]" for j, a in zip(range(dim), coefs)]
    return " + ".join(terms + [_num(bias)])


def random_field_source(net: TypedNetwork, rng: np.random.Generator, coupling: float = 1.0) -> str:
    """A random dissipative field: linear decay plus bounded saturating coupling.

    Orbits stay bounded (decay rate at least 1, bounded forcing), which keeps
    long integrations well conditioned.
    """
    parts = []
    for cls in input_classes(net):
        info = class_info(net, cls)
        rows = []
        for k in range(info.dim):
            lam = 1.0 + rng.random()
            terms = [f"-{_num(lam)} * self[{k}]",
                     f"{_num(rng.normal(scale=0.5))} * sin(self[{(k + 1) % info.dim}])",
                     _num(rng.normal(scale=0.5))]
            for t in info.type_order:
                d = info.type_dim(t)
                inner = _affine(rng.normal(size=d), "u", d, rng.normal(scale=0.3))
                w = coupling * rng.normal()
                terms.append(f"{_num(w)} * agg_sum({t}, u -> tanh({inner}))")
            rows.append(f"    dx[{k}] = " + " + ".join(terms) + ";")
        parts.append(f"class {_selector(info.rep)} {{\n" + "\n".join(rows) + "\n}")
    return "\n".join(parts) + "\n"


def bounded_perturbation_source(net: TypedNetwork, rng: np.random.Generator,
                                amplitude: float) -> str:
    """Random admissible field whose every component is bounded by ``eps``.

    Each component is ``eps * (w0 * tanh(...) + sum_T w_T * agg_mean(T, tanh(...)))``
    with ``|w0| + sum |w_T| = 1``; both tanh terms and their means lie in
    [-1, 1], which certifies the sup bound.
    """
    parts = [f"param eps = {_num(amplitude)};"]
    for cls in input_classes(net):
        info = class_info(net, cls)
        rows = []
        for k in range(info.dim):
            w = rng.normal(size=1 + len(info.type_order))
            w /= np.sum(np.abs(w))
            terms = [f"{_num(w[0])} * tanh({_affine(rng.normal(size=info.dim), 'self', info.dim, rng.normal())})"]
            for wt, t in zip(w[1:], info.type_order):
                d = info.type_dim(t)
                inner = _affine(rng.normal(size=d), "u", d, rng.normal())
                terms.append(f"{_num(wt)} * agg_mean({t}, u -> tanh({inner}))")
            rows.append(f"    dx[{k}] = eps * (" + " + ".join(terms) + ");")
        parts.append(f"class {_selector(info.rep)} {{\n" + "\n".join(rows) + "\n}")
    return "\n".join(parts) + "\n"
