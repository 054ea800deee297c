"""Differentiable soft-logic algebra and rule trees.

Operators over [0,1]: product conjunction a*b, probabilistic-sum disjunction
a+b-ab, complement 1-a, and a gated blend alpha*AND + (1-alpha)*OR whose gate
is the only learned quantity in a tree. Rule trees are fixed binary structures
over concept indices; evaluation caches node values so backprop is a single
exact chain-rule walk, and hardening provides the straight-through contract
used at decode time.

Disjunction is computed as a + b*(1-a), which is algebraically a+b-ab but
additionally satisfies OR(1,x)=1 and OR(0,x)=x bitwise.

Alternative operator families are available behind the same interface:
"minmax" (Godel min/max, alias "godel") and "lukasiewicz". Both have kinks;
the subgradient convention takes the left branch at ties.

Rule library text format, one rule per line (full-line # comments allowed):

    rule <id> "<name>" -> <template-id>[,<template-id>...] : <formula>

with formulas over named concepts:

    expr := name | NOT(expr) | AND(expr, expr) | OR(expr, expr)
          | BLEND(<alpha0>)(expr, expr)

The parser rejects unknown concept names and malformed syntax with 1-based
line/column positions.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConsistencyError,
    DimensionError,
    DomainError,
    ParseError,
    PreconditionError,
    StructureError,
)

FAMILIES = ("product", "minmax", "lukasiewicz", "godel")
DOMAIN_SLACK = 1e-9
GATE_CLIP = 1e-6    # keeps alpha strictly inside (0,1)


def _canon_family(family: str) -> str:
    if family not in FAMILIES:
        raise PreconditionError(f"unknown operator family {family!r}")
    return "minmax" if family == "godel" else family


def _check_unit(x: float, what: str = "operand") -> float:
    if not (-DOMAIN_SLACK <= x <= 1.0 + DOMAIN_SLACK):
        raise DomainError(f"{what} {x!r} outside [0,1]")
    return min(max(x, 0.0), 1.0)


# ---------------------------------------------------------------------------
# scalar operators
# ---------------------------------------------------------------------------

def t_and(a: float, b: float, family: str = "product") -> float:
    family = _canon_family(family)
    if family == "product":
        return a * b
    if family == "minmax":
        return min(a, b)
    return max(0.0, a + b - 1.0)


def t_or(a: float, b: float, family: str = "product") -> float:
    family = _canon_family(family)
    if family == "product":
        return a + b * (1.0 - a)
    if family == "minmax":
        return max(a, b)
    return min(1.0, a + b)


def t_not(a: float) -> float:
    return 1.0 - a


def _grad_and(a: float, b: float, family: str):
    if family == "product":
        return b, a
    if family == "minmax":
        return (1.0, 0.0) if a <= b else (0.0, 1.0)
    # lukasiewicz max(0, a+b-1): tie takes the constant (left) branch
    return (1.0, 1.0) if a + b - 1.0 > 0.0 else (0.0, 0.0)


def _grad_or(a: float, b: float, family: str):
    if family == "product":
        return 1.0 - b, 1.0 - a
    if family == "minmax":
        return (1.0, 0.0) if a >= b else (0.0, 1.0)
    # lukasiewicz min(1, a+b): tie takes the constant (left) branch
    return (1.0, 1.0) if a + b < 1.0 else (0.0, 0.0)


def node_blend(u: float, v: float, alpha: float, family: str = "product") -> float:
    """alpha-gated interpolation of conjunction and disjunction.

    d(blend)/d(alpha) = AND(u,v) - OR(u,v), which for the product family is
    2uv - u - v.
    """
    u = _check_unit(u, "blend left operand")
    v = _check_unit(v, "blend right operand")
    alpha = _check_unit(alpha, "blend gate")
    return alpha * t_and(u, v, family) + (1.0 - alpha) * t_or(u, v, family)


@dataclass(frozen=True)
class LogicOperator:
    """An operator tag: AND, OR, NOT, or BLEND carrying its gate value."""

    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ("AND", "OR", "NOT", "BLEND"):
            raise PreconditionError(f"unknown operator kind {self.kind!r}")
        if self.kind == "BLEND":
            if self.alpha is None:
                raise PreconditionError("BLEND requires a gate value")
            _check_unit(self.alpha, "blend gate")


def apply_operator(op: LogicOperator, a: float, b: float | None = None,
                   family: str = "product") -> float:
    family = _canon_family(family)
    a = _check_unit(a)
    if op.kind == "NOT":
        if b is not None:
            raise PreconditionError("NOT takes exactly one operand")
        return t_not(a)
    if b is None:
        raise PreconditionError(f"{op.kind} takes two operands")
    b = _check_unit(b)
    if op.kind == "AND":
        return t_and(a, b, family)
    if op.kind == "OR":
        return t_or(a, b, family)
    return node_blend(a, b, op.alpha, family)


# ---------------------------------------------------------------------------
# rule trees
# ---------------------------------------------------------------------------

def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class Node:
    """One rule-tree node; kind selects which fields are meaningful."""

    kind: str                      # "leaf" | "AND" | "OR" | "NOT" | "BLEND"
    concept: int | None = None     # leaf
    negated: bool = False          # leaf
    left: "Node | None" = None
    right: "Node | None" = None
    gate_raw: float = 0.0          # BLEND; unconstrained, alpha = sigmoid

    @property
    def alpha(self) -> float:
        a = _sigmoid(self.gate_raw)
        return min(max(a, GATE_CLIP), 1.0 - GATE_CLIP)

    def set_alpha(self, alpha0: float) -> None:
        alpha0 = min(max(_check_unit(alpha0, "gate"), GATE_CLIP), 1.0 - GATE_CLIP)
        self.gate_raw = _logit(alpha0)


def leaf(concept: int, negated: bool = False) -> Node:
    return Node(kind="leaf", concept=int(concept), negated=negated)


def and_(left: Node, right: Node) -> Node:
    return Node(kind="AND", left=left, right=right)


def or_(left: Node, right: Node) -> Node:
    return Node(kind="OR", left=left, right=right)


def not_(child: Node) -> Node:
    return Node(kind="NOT", left=child)


def blend(left: Node, right: Node, alpha0: float = 0.5) -> Node:
    n = Node(kind="BLEND", left=left, right=right)
    n.set_alpha(alpha0)
    return n


@dataclass
class RuleTree:
    """Fixed-topology rule over concepts; only the BLEND gates are learnable."""

    rule_id: int
    root: Node
    name: str = ""
    template_ids: tuple[int, ...] = ()

    def _preorder(self) -> list[Node]:
        out: list[Node] = []
        stack = [self.root]
        seen: set[int] = set()
        while stack:
            n = stack.pop()
            if id(n) in seen:
                raise StructureError(f"rule {self.rule_id}: node appears twice (tree not a tree)")
            seen.add(id(n))
            out.append(n)
            if n.kind == "leaf":
                if n.left is not None or n.right is not None:
                    raise StructureError(f"rule {self.rule_id}: leaf with children")
                continue
            if n.kind == "NOT":
                if n.left is None or n.right is not None:
                    raise StructureError(f"rule {self.rule_id}: NOT must have exactly one child")
                stack.append(n.left)
            else:
                if n.left is None or n.right is None:
                    raise StructureError(f"rule {self.rule_id}: {n.kind} needs two children")
                stack.append(n.right)
                stack.append(n.left)
        return out

    def nodes(self) -> list[Node]:
        return self._preorder()

    def gates(self) -> list[Node]:
        return [n for n in self._preorder() if n.kind == "BLEND"]

    def leaves(self) -> list[Node]:
        return [n for n in self._preorder() if n.kind == "leaf"]

    def validate(self, k: int) -> None:
        for n in self.leaves():
            if n.concept is None or not (0 <= n.concept < k):
                raise StructureError(
                    f"rule {self.rule_id}: leaf concept index {n.concept} outside [0, {k})")

    def gate_values(self) -> np.ndarray:
        return np.array([g.gate_raw for g in self.gates()], dtype=np.float64)

    def set_gate_values(self, raw: np.ndarray) -> None:
        gates = self.gates()
        if len(raw) != len(gates):
            raise DimensionError(f"rule {self.rule_id}: expected {len(gates)} gate values")
        for g, r in zip(gates, raw):
            g.gate_raw = float(r)


@dataclass
class TreeCache:
    """Node values from one evaluation, preorder; guards against reuse on other inputs."""

    values: list[float]
    k: int
    family: str
    rule_id: int
    node_count: int
    input_digest: bytes
    c_hat: np.ndarray


def _digest(c_hat: np.ndarray) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(c_hat, dtype=np.float64).tobytes(),
                           digest_size=16).digest()


def eval_rule_tree(tree: RuleTree, c_hat: np.ndarray,
                   family: str = "product") -> tuple[float, TreeCache]:
    """Bottom-up evaluation; returns (activation, cache of every node value)."""
    family = _canon_family(family)
    c_hat = np.asarray(c_hat, dtype=np.float64)
    if c_hat.ndim != 1:
        raise PreconditionError(f"concept vector must be 1-D, got shape {c_hat.shape}")
    for x in c_hat:
        _check_unit(float(x), "concept value")
    k = c_hat.shape[0]
    tree.validate(k)

    values: list[float] = []

    def rec(n: Node) -> float:
        idx = len(values)
        values.append(0.0)  # reserve preorder slot
        if n.kind == "leaf":
            val = 1.0 - float(c_hat[n.concept]) if n.negated else float(c_hat[n.concept])
        elif n.kind == "NOT":
            val = t_not(rec(n.left))
        else:
            u = rec(n.left)
            v = rec(n.right)
            if n.kind == "AND":
                val = t_and(u, v, family)
            elif n.kind == "OR":
                val = t_or(u, v, family)
            else:
                val = node_blend(u, v, n.alpha, family)
        values[idx] = val
        return val

    r = rec(tree.root)
    cache = TreeCache(values=values, k=k, family=family, rule_id=tree.rule_id,
                      node_count=len(values), input_digest=_digest(c_hat),
                      c_hat=c_hat.copy())
    return r, cache


def backprop_rule_tree(tree: RuleTree, cache: TreeCache, upstream: float,
                       c_hat: np.ndarray | None = None):
    """Exact gradients of upstream * r_j: returns (d/d c_hat, d/d alpha per gate).

    Gate gradients align with tree.gates() order (preorder). Leaves sharing a
    concept index accumulate. Pass the concept vector to assert the cache is
    not stale.
    """
    if cache.rule_id != tree.rule_id or cache.node_count != len(tree.nodes()):
        raise ConsistencyError("cache does not belong to this rule tree")
    if c_hat is not None and _digest(np.asarray(c_hat, dtype=np.float64)) != cache.input_digest:
        raise ConsistencyError("cache is stale: concept vector changed since evaluation")
    family = cache.family
    dc = np.zeros(cache.k, dtype=np.float64)
    dalpha: list[float] = []
    values = cache.values
    pos = 0

    def _subtree_size(n: Node) -> int:
        if n.kind == "leaf":
            return 1
        if n.kind == "NOT":
            return 1 + _subtree_size(n.left)
        return 1 + _subtree_size(n.left) + _subtree_size(n.right)

    def rec(n: Node, g: float) -> None:
        nonlocal pos
        pos += 1
        if n.kind == "leaf":
            dc[n.concept] += -g if n.negated else g
            return
        if n.kind == "NOT":
            rec(n.left, -g)
            return
        # children's cached values sit at fixed preorder offsets
        u = values[pos]
        v = values[pos + _subtree_size(n.left)]
        if n.kind == "AND":
            gu, gv = _grad_and(u, v, family)
        elif n.kind == "OR":
            gu, gv = _grad_or(u, v, family)
        else:
            a = n.alpha
            au, av = _grad_and(u, v, family)
            ou, ov = _grad_or(u, v, family)
            gu = a * au + (1.0 - a) * ou
            gv = a * av + (1.0 - a) * ov
            dalpha.append(g * (t_and(u, v, family) - t_or(u, v, family)))
        rec(n.left, g * gu)
        rec(n.right, g * gv)

    rec(tree.root, float(upstream))
    return dc, np.array(dalpha, dtype=np.float64)


def evaluate_rules(trees: list[RuleTree], c_hat: np.ndarray,
                   family: str = "product"):
    """Evaluate every rule on one concept vector: (activations, caches)."""
    acts = np.empty(len(trees), dtype=np.float64)
    caches = []
    for i, t in enumerate(trees):
        acts[i], cache = eval_rule_tree(t, c_hat, family)
        caches.append(cache)
    return acts, caches


# ---------------------------------------------------------------------------
# hardening (straight-through)
# ---------------------------------------------------------------------------

def harden(c_hat: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Threshold to {0,1} bits; the bit is 1 when c_hat >= tau (boundary in)."""
    if not 0.0 < tau < 1.0:
        raise PreconditionError(f"threshold must lie strictly in (0,1), got {tau}")
    c_hat = np.asarray(c_hat, dtype=np.float64)
    return (c_hat >= tau).astype(np.float64)


def harden_backward(upstream: np.ndarray) -> np.ndarray:
    """Straight-through contract: the gradient passes unchanged."""
    return np.asarray(upstream, dtype=np.float64)


# ---------------------------------------------------------------------------
# rule selection
# ---------------------------------------------------------------------------

def top_h_rules(activations: np.ndarray, h: int,
                rule_ids: list[int] | None = None) -> list[int]:
    """Ids of the h strongest activations, descending; ties go to the lower id."""
    values = np.asarray(activations, dtype=np.float64)
    r = values.shape[0]
    if not 1 <= h <= r:
        raise PreconditionError(f"h must lie in [1, {r}], got {h}")
    ids = list(range(r)) if rule_ids is None else list(rule_ids)
    if len(ids) != r:
        raise DimensionError("rule_ids length does not match activations")
    order = sorted(range(r), key=lambda i: (-values[i], ids[i]))
    return [ids[i] for i in order[:h]]


# ---------------------------------------------------------------------------
# rule library text format
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[0-9]+(?:\.[0-9]+)?|[(),]|\S")


class _FormulaParser:
    def __init__(self, text: str, concept_names: list[str], line: int, col_offset: int):
        self.text = text
        self.names = {name: i for i, name in enumerate(concept_names)}
        self.line = line
        self.col_offset = col_offset
        self.tokens: list[tuple[str, int]] = []  # (token, 0-based col within text)
        for m in _TOKEN_RE.finditer(text):
            self.tokens.append((m.group(0), m.start()))
        self.pos = 0

    def _col(self, tok_index: int) -> int:
        if tok_index < len(self.tokens):
            return self.col_offset + self.tokens[tok_index][1] + 1
        return self.col_offset + len(self.text) + 1

    def _fail(self, message: str, tok_index: int | None = None):
        raise ParseError(message, self.line, self._col(self.pos if tok_index is None else tok_index))

    def _peek(self) -> str | None:
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def _take(self, expected: str | None = None) -> str:
        tok = self._peek()
        if tok is None:
            self._fail("unexpected end of formula" +
                       (f", expected {expected!r}" if expected else ""))
        if expected is not None and tok != expected:
            self._fail(f"expected {expected!r}, found {tok!r}")
        self.pos += 1
        return tok

    def parse(self) -> Node:
        node = self._expr()
        if self._peek() is not None:
            self._fail(f"unexpected trailing token {self._peek()!r}")
        return node

    def _expr(self) -> Node:
        tok_index = self.pos
        tok = self._take()
        if tok == "NOT":
            self._take("(")
            inner = self._expr()
            self._take(")")
            if inner.kind == "leaf" and not inner.negated:
                inner.negated = True
                return inner
            return not_(inner)
        if tok in ("AND", "OR"):
            self._take("(")
            a = self._expr()
            self._take(",")
            b = self._expr()
            self._take(")")
            return and_(a, b) if tok == "AND" else or_(a, b)
        if tok == "BLEND":
            self._take("(")
            num_index = self.pos
            num = self._take()
            try:
                alpha0 = float(num)
            except ValueError:
                self._fail(f"BLEND gate must be a number, found {num!r}", num_index)
            if not 0.0 <= alpha0 <= 1.0:
                self._fail(f"BLEND gate {alpha0} outside [0,1]", num_index)
            self._take(")")
            self._take("(")
            a = self._expr()
            self._take(",")
            b = self._expr()
            self._take(")")
            return blend(a, b, alpha0)
        if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok):
            if tok not in self.names:
                self._fail(f"unknown concept name {tok!r}", tok_index)
            return leaf(self.names[tok])
        self._fail(f"unexpected token {tok!r}", tok_index)


def parse_formula(text: str, concept_names: list[str], line: int = 1,
                  col_offset: int = 0) -> Node:
    return _FormulaParser(text, concept_names, line, col_offset).parse()


_RULE_LINE_RE = re.compile(
    r'^\s*rule\s+(\d+)\s+"([^"]*)"\s*->\s*([0-9]+(?:\s*,\s*[0-9]+)*)\s*:\s*(.*\S)\s*$')


def parse_rule_library(text: str, concept_names: list[str]) -> list[RuleTree]:
    """Parse the rule-library text format; see the module docstring for grammar."""
    trees: list[RuleTree] = []
    seen_ids: set[int] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _RULE_LINE_RE.match(line)
        if not m:
            raise ParseError(
                'expected: rule <id> "<name>" -> <template ids> : <formula>',
                lineno, len(line) - len(line.lstrip()) + 1)
        rule_id = int(m.group(1))
        if rule_id in seen_ids:
            raise ParseError(f"duplicate rule id {rule_id}", lineno, m.start(1) + 1)
        seen_ids.add(rule_id)
        name = m.group(2)
        template_ids = tuple(int(t.strip()) for t in m.group(3).split(","))
        formula = m.group(4)
        root = parse_formula(formula, concept_names, line=lineno,
                             col_offset=m.start(4))
        trees.append(RuleTree(rule_id=rule_id, root=root, name=name,
                              template_ids=template_ids))
    return trees


def _format_node(n: Node, concept_names: list[str]) -> str:
    if n.kind == "leaf":
        name = concept_names[n.concept]
        return f"NOT({name})" if n.negated else name
    if n.kind == "NOT":
        return f"NOT({_format_node(n.left, concept_names)})"
    a = _format_node(n.left, concept_names)
    b = _format_node(n.right, concept_names)
    if n.kind == "BLEND":
        return f"BLEND({n.alpha!r})({a}, {b})"
    return f"{n.kind}({a}, {b})"


def format_rule_library(trees: list[RuleTree], concept_names: list[str]) -> str:
    lines = ["# rule library"]
    for t in trees:
        tids = ",".join(str(i) for i in t.template_ids)
        lines.append(f'rule {t.rule_id} "{t.name}" -> {tids} : '
                     f"{_format_node(t.root, concept_names)}")
    return "\n".join(lines) + "\n"
