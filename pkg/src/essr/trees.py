"""Symbolic expression trees for the genetic-programming engine.

Trees are nested tuples over the function set {+, *, /, exp, ln, sin, squ}
and the terminal set {1, c, x1..xn}. All surgery returns new trees; values
are never mutated in place.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "BINARY_OPS",
    "UNARY_OPS",
    "DEFAULT_FUNCTIONS",
    "Individual",
    "ParseError",
    "eval_tree",
    "eval_candidates",
    "count_nodes",
    "count_operators",
    "format_tree",
    "parse_tree",
    "infix",
    "random_tree",
    "list_nodes",
    "get_subtree",
    "replace_subtree",
    "constant_positions",
    "collapse_chains",
    "edit_individual",
    "linear_dependence_check",
    "DEPENDENCE_TOL",
    "MAX_NODES",
    "MAGNITUDE_LIMIT",
]

BINARY_OPS = ("+", "*", "/")
UNARY_OPS = ("exp", "ln", "sin", "squ")
DEFAULT_FUNCTIONS = BINARY_OPS + UNARY_OPS

MAX_NODES = 15
MAGNITUDE_LIMIT = 1e50
DEPENDENCE_TOL = 1e-8
# |den| below this (relative to the numerator) counts as a zero denominator
_ZERO_DEN = 1e-12


class ParseError(ValueError):
    def __init__(self, message: str, pos: int):
        self.pos = pos
        super().__init__(f"{message} (at position {pos})")


# ---------------------------------------------------------------------------
# evaluation


def _eval(tree, x, flags):
    kind = tree[0]
    if kind == "one":
        return np.ones(x.shape[0])
    if kind == "const":
        return np.full(x.shape[0], tree[1])
    if kind == "var":
        return x[:, tree[1]].astype(np.float64, copy=True)
    with np.errstate(all="ignore"):
        if kind in UNARY_OPS:
            a = _eval(tree[1], x, flags)
            if kind == "squ":
                v = a * a
            elif kind == "exp":
                v = np.exp(a)
            elif kind == "sin":
                v = np.sin(a)
            else:  # ln
                if flags is not None and (a < 0).any():
                    flags["ln_negative"] = True
                v = np.log(a)
        else:
            a = _eval(tree[1], x, flags)
            b = _eval(tree[2], x, flags)
            if kind == "+":
                v = a + b
            elif kind == "*":
                v = a * b
            else:  # /
                if flags is not None and (
                    np.abs(b) < _ZERO_DEN * (1.0 + np.abs(a))
                ).any():
                    flags["zero_denominator"] = True
                v = a / b
    if flags is not None and (
        not np.isfinite(v).all() or np.abs(v[np.isfinite(v)]).max(initial=0.0) > MAGNITUDE_LIMIT
    ):
        flags["magnitude"] = True
    return v


def eval_tree(tree, points: np.ndarray) -> np.ndarray:
    """Evaluate on (M, n) points; returns M values. Domain violations
    (ln of a non-positive value, division by zero, overflow) yield
    non-finite entries rather than raising."""
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    if squeeze:
        points = points[None, :]
    v = _eval(tree, points, None)
    return float(v[0]) if squeeze else v


def eval_with_flags(tree, points: np.ndarray):
    """Evaluate and report the editing-relevant domain flags."""
    points = np.asarray(points, dtype=np.float64)
    flags = {"ln_negative": False, "zero_denominator": False, "magnitude": False}
    return _eval(tree, points, flags), flags


def eval_candidates(candidates, points: np.ndarray) -> np.ndarray:
    """Evaluation matrix: one column per candidate."""
    points = np.asarray(points, dtype=np.float64)
    if len(candidates) == 0:
        return np.empty((points.shape[0], 0))
    return np.stack([_eval(t, points, None) for t in candidates], axis=1)


# ---------------------------------------------------------------------------
# structure


def count_nodes(tree) -> int:
    kind = tree[0]
    if kind in BINARY_OPS:
        return 1 + count_nodes(tree[1]) + count_nodes(tree[2])
    if kind in UNARY_OPS:
        return 1 + count_nodes(tree[1])
    return 1


def count_operators(tree) -> int:
    kind = tree[0]
    if kind in BINARY_OPS:
        return 1 + count_operators(tree[1]) + count_operators(tree[2])
    if kind in UNARY_OPS:
        return 1 + count_operators(tree[1])
    return 0


def list_nodes(tree):
    """Subtrees in preorder; index into this list addresses a node."""
    out = [tree]
    kind = tree[0]
    if kind in BINARY_OPS:
        out += list_nodes(tree[1]) + list_nodes(tree[2])
    elif kind in UNARY_OPS:
        out += list_nodes(tree[1])
    return out


def get_subtree(tree, index: int):
    return list_nodes(tree)[index]


def replace_subtree(tree, index: int, new):
    """New tree with the preorder-``index`` node replaced by ``new``."""

    def rec(node, i):
        if i == 0:
            return new, -1
        kind = node[0]
        if kind in BINARY_OPS:
            left, i2 = rec(node[1], i - 1)
            if i2 < 0:
                return (kind, left, node[2]), -1
            right, i3 = rec(node[2], i2)
            if i3 < 0:
                return (kind, node[1], right), -1
            return node, i3
        if kind in UNARY_OPS:
            child, i2 = rec(node[1], i - 1)
            if i2 < 0:
                return (kind, child), -1
            return node, i2
        return node, i - 1

    result, rem = rec(tree, index)
    if rem >= 0:
        raise IndexError(f"node index {index} out of range")
    return result


def constant_positions(tree):
    """Preorder indices of constant-slot nodes."""
    return [i for i, node in enumerate(list_nodes(tree)) if node[0] == "const"]


# ---------------------------------------------------------------------------
# text form


def format_tree(tree, var_names: Optional[Sequence[str]] = None) -> str:
    kind = tree[0]
    if kind == "one":
        return "1"
    if kind == "const":
        return f"c:{tree[1]!r}"
    if kind == "var":
        return var_names[tree[1]] if var_names else f"x{tree[1] + 1}"
    if kind in UNARY_OPS:
        return f"({kind} {format_tree(tree[1], var_names)})"
    return f"({kind} {format_tree(tree[1], var_names)} {format_tree(tree[2], var_names)})"


_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def parse_tree(text: str, var_names: Optional[Sequence[str]] = None):
    """Parse the canonical s-expression form produced by format_tree."""
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    if not tokens:
        raise ParseError("empty input", 0)
    names = {n: i for i, n in enumerate(var_names)} if var_names else None

    def atom(tok, at):
        if tok == "1":
            return ("one",)
        if tok.startswith("c:"):
            try:
                return ("const", float(tok[2:]))
            except ValueError:
                raise ParseError(f"bad constant {tok!r}", at) from None
        if names is not None:
            if tok in names:
                return ("var", names[tok])
        else:
            m = re.fullmatch(r"x(\d+)", tok)
            if m and int(m.group(1)) >= 1:
                return ("var", int(m.group(1)) - 1)
        raise ParseError(f"unknown terminal {tok!r}", at)

    def rec(i):
        tok, at = tokens[i]
        if tok == "(":
            if i + 1 >= len(tokens):
                raise ParseError("unterminated expression", at)
            op, op_at = tokens[i + 1]
            if op in BINARY_OPS:
                a, i2 = rec(i + 2)
                b, i3 = rec(i2)
                if i3 >= len(tokens) or tokens[i3][0] != ")":
                    raise ParseError(f"expected ')' after operands of {op!r}", op_at)
                return (op, a, b), i3 + 1
            if op in UNARY_OPS:
                a, i2 = rec(i + 2)
                if i2 >= len(tokens) or tokens[i2][0] != ")":
                    raise ParseError(f"expected ')' after operand of {op!r}", op_at)
                return (op, a), i2 + 1
            raise ParseError(f"unknown operator {op!r}", op_at)
        if tok == ")":
            raise ParseError("unexpected ')'", at)
        return atom(tok, at), i + 1

    tree, end = rec(0)
    if end != len(tokens):
        raise ParseError("trailing tokens", tokens[end][1])
    return tree


def infix(tree, var_names: Optional[Sequence[str]] = None, digits: int = 6) -> str:
    """Human-readable rendering; constants shown with ``digits`` significant
    figures."""
    kind = tree[0]
    if kind == "one":
        return "1"
    if kind == "const":
        return f"{tree[1]:.{digits}g}"
    if kind == "var":
        return var_names[tree[1]] if var_names else f"x{tree[1] + 1}"
    if kind == "squ":
        return f"({infix(tree[1], var_names, digits)})^2"
    if kind in UNARY_OPS:
        return f"{kind}({infix(tree[1], var_names, digits)})"
    a = infix(tree[1], var_names, digits)
    b = infix(tree[2], var_names, digits)
    return f"({a} {kind} {b})"


# ---------------------------------------------------------------------------
# random generation


def random_tree(
    n_vars: int,
    node_count: int,
    rng: np.random.Generator,
    functions: Sequence[str] = DEFAULT_FUNCTIONS,
    c_range: Tuple[float, float] = (-10.0, 10.0),
):
    """Random tree with exactly ``node_count`` nodes."""
    if node_count < 1:
        raise ValueError(f"node_count must be >= 1, got {node_count}")
    unary = [f for f in functions if f in UNARY_OPS]
    binary = [f for f in functions if f in BINARY_OPS]

    def terminal():
        # uniform over {1, c, x1..xn}
        pick = int(rng.integers(0, n_vars + 2))
        if pick == 0:
            return ("one",)
        if pick == 1:
            return ("const", float(rng.uniform(*c_range)))
        return ("var", pick - 2)

    def build(k):
        if k == 1:
            return terminal()
        if k == 2:
            if not unary:
                raise ValueError("node_count 2 requires a unary operator")
            return (unary[int(rng.integers(0, len(unary)))], build(1))
        ops = unary + binary
        op = ops[int(rng.integers(0, len(ops)))]
        if op in UNARY_OPS:
            return (op, build(k - 1))
        left = int(rng.integers(1, k - 1))  # uniform split in [1, k-2]
        return (op, build(left), build(k - 1 - left))

    return build(node_count)


# ---------------------------------------------------------------------------
# individuals and editing


@dataclass
class Individual:
    """GP genome: candidate trees plus their learned coefficients.

    ``coefficients`` has shape (n_candidates, n_targets) once fitted; a row
    of zeros means the candidate is inactive. ``loss`` and ``fitness`` are
    the values from the last evaluation.
    """

    candidates: Tuple
    coefficients: Optional[np.ndarray] = None
    loss: float = float("inf")
    fitness: float = float("inf")

    def with_candidates(self, candidates) -> "Individual":
        return replace(
            self,
            candidates=tuple(candidates),
            coefficients=None,
            loss=float("inf"),
            fitness=float("inf"),
        )

    def active_count(self) -> int:
        if self.coefficients is None:
            return 0
        return int((np.abs(self.coefficients) > 0).any(axis=1).sum())

    def operator_count(self) -> int:
        return sum(count_operators(t) for t in self.candidates)

    def node_count(self) -> int:
        return sum(count_nodes(t) for t in self.candidates)


def collapse_chains(tree):
    """Merge directly nested unary chains: sin(sin u) -> sin u and
    exp/ln chains of length three -> length two, bottom up."""
    kind = tree[0]
    if kind in BINARY_OPS:
        node = (kind, collapse_chains(tree[1]), collapse_chains(tree[2]))
    elif kind in UNARY_OPS:
        node = (kind, collapse_chains(tree[1]))
        while True:
            if node[0] == "sin" and node[1][0] == "sin":
                node = node[1]
                continue
            if node[0] in ("exp", "ln") and node[1][0] == node[0] and node[1][1][0] == node[0]:
                node = node[1]
                continue
            break
    else:
        node = tree
    return node


def linear_dependence_check(candidates, points: np.ndarray, tol: float = DEPENDENCE_TOL):
    """Greedy kept-index set: a candidate is dropped when its evaluation
    vector lies (numerically) in the span of the kept predecessors."""
    mat = eval_candidates(candidates, points)
    return _independent_columns(mat, tol)


def _independent_columns(mat: np.ndarray, tol: float):
    kept = []
    basis = []  # orthonormal, via modified Gram-Schmidt
    for j in range(mat.shape[1]):
        v = mat[:, j].astype(np.float64, copy=True)
        if not np.isfinite(v).all():
            # domain-violating candidates are judged by the later editing
            # rules, never used as anchors here
            kept.append(j)
            continue
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            continue
        for q in basis:
            v -= (q @ v) * q
        res = np.linalg.norm(v)
        if res < tol * norm0:
            continue
        kept.append(j)
        basis.append(v / res)
    return kept


def _fresh_candidate(n_vars, rng, functions, c_range, points):
    for _ in range(100):
        t = collapse_chains(random_tree(n_vars, 5, rng, functions, c_range))
        vals, flags = eval_with_flags(t, points)
        if not any(flags.values()) and np.abs(vals).max() > 0.0:
            return t
    return ("one",)


def edit_individual(
    ind: Individual,
    points: np.ndarray,
    rng: np.random.Generator,
    n_vars: int,
    functions: Sequence[str] = DEFAULT_FUNCTIONS,
    c_range: Tuple[float, float] = (-10.0, 10.0),
    tol: float = DEPENDENCE_TOL,
    max_nodes: int = MAX_NODES,
) -> Individual:
    """Post-operator cleanup, applied in order: size cap, unary-chain
    collapse, linear-dependence removal, then the ln-domain, zero-denominator
    and magnitude filters. An emptied individual is replaced by one fresh
    random candidate."""
    points = np.asarray(points, dtype=np.float64)
    cands = [t for t in ind.candidates if count_nodes(t) <= max_nodes]
    cands = [collapse_chains(t) for t in cands]
    kept = linear_dependence_check(cands, points, tol)
    cands = [cands[j] for j in kept]
    ok = []
    for t in cands:
        _, flags = eval_with_flags(t, points)
        if not any(flags.values()):
            ok.append(t)
    if not ok:
        ok = [_fresh_candidate(n_vars, rng, functions, c_range, points)]
    return ind.with_candidates(ok)
