"""Expression trees: evaluation, text forms, random generation, editing."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from essr.trees import (
    BINARY_OPS,
    DEFAULT_FUNCTIONS,
    UNARY_OPS,
    Individual,
    ParseError,
    collapse_chains,
    constant_positions,
    count_nodes,
    count_operators,
    edit_individual,
    eval_candidates,
    eval_tree,
    format_tree,
    get_subtree,
    infix,
    linear_dependence_check,
    list_nodes,
    parse_tree,
    random_tree,
    replace_subtree,
)

# sin(x1) + x2 * x3
TREE_A = ("+", ("sin", ("var", 0)), ("*", ("var", 1), ("var", 2)))
# 1 / (x1 + c)
TREE_B = ("/", ("one",), ("+", ("var", 0), ("const", 2.0368)))


def test_eval_example_trees():
    assert eval_tree(TREE_A, np.array([0.0, 2.0, 3.0])) == pytest.approx(6.0)
    assert eval_tree(TREE_B, np.array([1.0])) == pytest.approx(1.0 / 3.0368)


def test_eval_matrix_shape_and_values():
    pts = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
    mat = eval_candidates([TREE_A, ("one",)], pts)
    assert mat.shape == (2, 2)
    assert mat[0, 0] == pytest.approx(math.sin(1.0) + 1.0)
    np.testing.assert_array_equal(mat[:, 1], [1.0, 1.0])


def test_eval_domain_violations_are_nonfinite_not_raised():
    ln_neg = ("ln", ("var", 0))
    v = eval_tree(ln_neg, np.array([[-1.0], [1.0]]))
    assert np.isnan(v[0]) and v[1] == 0.0
    div0 = ("/", ("one",), ("var", 0))
    v = eval_tree(div0, np.array([[0.0]]))
    assert not np.isfinite(v[0])


def test_counts():
    assert count_nodes(TREE_A) == 6
    assert count_operators(TREE_A) == 3
    assert count_nodes(TREE_B) == 5
    assert count_operators(TREE_B) == 2
    assert count_nodes(("one",)) == 1
    assert count_operators(("const", 3.0)) == 0


def test_format_and_parse_canonical_forms():
    assert format_tree(TREE_A) == "(+ (sin x1) (* x2 x3))"
    assert parse_tree("(/ 1 (+ x1 c:2.0368))") == TREE_B
    assert parse_tree(format_tree(TREE_A)) == TREE_A
    # explicit variable names (jump-stage radial trees)
    t = parse_tree("(squ r)", var_names=("r",))
    assert t == ("squ", ("var", 0))
    assert format_tree(t, ("r",)) == "(squ r)"


def test_parse_errors_carry_positions():
    for text, _ in [("", 0), ("(boom x1)", 1), ("x0", 0), ("(+ x1)", 1),
                    ("(+ x1 x2) x3", 10), ("c:zap", 0), (")", 0)]:
        with pytest.raises(ParseError):
            parse_tree(text)


def test_infix_rendering():
    assert infix(TREE_A) == "(sin(x1) + (x2 * x3))"
    assert infix(("squ", ("var", 0))) == "(x1)^2"
    assert infix(("const", 2.0368)) == "2.0368"


@st.composite
def trees(draw, max_depth=4, n_vars=3):
    if max_depth == 0:
        k = draw(st.integers(0, 2))
        if k == 0:
            return ("one",)
        if k == 1:
            return ("const", draw(st.floats(-10, 10, allow_nan=False)))
        return ("var", draw(st.integers(0, n_vars - 1)))
    op = draw(st.sampled_from(DEFAULT_FUNCTIONS + ("leaf",)))
    if op == "leaf":
        return draw(trees(max_depth=0, n_vars=n_vars))
    if op in UNARY_OPS:
        return (op, draw(trees(max_depth=max_depth - 1, n_vars=n_vars)))
    return (
        op,
        draw(trees(max_depth=max_depth - 1, n_vars=n_vars)),
        draw(trees(max_depth=max_depth - 1, n_vars=n_vars)),
    )


@settings(max_examples=200, deadline=None)
@given(trees())
def test_format_parse_roundtrip(tree):
    assert parse_tree(format_tree(tree)) == tree


@settings(max_examples=100, deadline=None)
@given(trees())
def test_list_nodes_preorder_consistency(tree):
    nodes = list_nodes(tree)
    assert len(nodes) == count_nodes(tree)
    assert nodes[0] == tree
    for i in range(len(nodes)):
        assert get_subtree(tree, i) == nodes[i]


@settings(max_examples=100, deadline=None)
@given(trees(), st.integers(0, 1000))
def test_replace_subtree_with_itself_is_identity(tree, raw_index):
    n = count_nodes(tree)
    i = raw_index % n
    assert replace_subtree(tree, i, get_subtree(tree, i)) == tree


def test_replace_subtree_out_of_range():
    with pytest.raises(IndexError):
        replace_subtree(TREE_A, 6, ("one",))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10_000))
def test_random_tree_exact_node_count(k, seed):
    rng = np.random.default_rng(seed)
    t = random_tree(3, k, rng)
    assert count_nodes(t) == k


def test_random_tree_respects_function_subset():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = random_tree(2, 9, rng, functions=("+", "*", "exp"))
        ops = [n[0] for n in list_nodes(t) if n[0] in BINARY_OPS + UNARY_OPS]
        assert set(ops) <= {"+", "*", "exp"}


def test_random_tree_constants_within_range():
    rng = np.random.default_rng(1)
    for _ in range(100):
        t = random_tree(1, 7, rng, c_range=(-2.0, 3.0))
        for i in constant_positions(t):
            assert -2.0 <= get_subtree(t, i)[1] <= 3.0


def test_collapse_chains():
    assert collapse_chains(("sin", ("sin", ("var", 0)))) == ("sin", ("var", 0))
    triple_exp = ("exp", ("exp", ("exp", ("var", 0))))
    assert collapse_chains(triple_exp) == ("exp", ("exp", ("var", 0)))
    triple_ln = ("ln", ("ln", ("ln", ("var", 0))))
    assert collapse_chains(triple_ln) == ("ln", ("ln", ("var", 0)))
    # two-deep exp/ln chains are allowed
    double = ("exp", ("exp", ("var", 0)))
    assert collapse_chains(double) == double
    # collapse works below other operators
    nested = ("+", ("sin", ("sin", ("var", 0))), ("one",))
    assert collapse_chains(nested) == ("+", ("sin", ("var", 0)), ("one",))
    # quadruple chains collapse fully
    quad = ("sin",) * 1 + (("sin", ("sin", ("sin", ("var", 0)))),)
    assert collapse_chains(quad) == ("sin", ("var", 0))


def test_linear_dependence_check_against_rank_oracle():
    pts = np.linspace(-2, 2, 40)[:, None]
    cands = [
        ("var", 0),
        ("*", ("var", 0), ("const", 2.0)),  # dependent on x1
        ("squ", ("var", 0)),
        ("+", ("var", 0), ("squ", ("var", 0))),  # dependent on the first two
        ("one",),
    ]
    kept = linear_dependence_check(cands, pts)
    assert kept == [0, 2, 4]
    mat = eval_candidates([cands[j] for j in kept], pts)
    assert np.linalg.matrix_rank(mat, tol=1e-8) == len(kept)


def test_individual_counts():
    ind = Individual(candidates=(TREE_A, TREE_B))
    assert ind.node_count() == 11
    assert ind.operator_count() == 5
    assert ind.active_count() == 0  # not fitted yet
    ind.coefficients = np.array([[1.0], [0.0]])
    assert ind.active_count() == 1


def _edit(ind, pts, seed=0, **kw):
    return edit_individual(ind, pts, np.random.default_rng(seed), n_vars=1, **kw)


def test_edit_removes_oversized_candidates():
    big = ("+",) * 0 + ("+", ("var", 0), ("one",))
    for _ in range(7):
        big = ("+", big, ("one",))  # 17 nodes
    ind = Individual(candidates=(big, ("var", 0)))
    pts = np.linspace(0.5, 2, 20)[:, None]
    out = _edit(ind, pts)
    assert out.candidates == (("var", 0),)


def test_edit_removes_domain_violations():
    pts = np.linspace(-1, 1, 21)[:, None]
    ind = Individual(candidates=(("ln", ("var", 0)), ("var", 0)))
    out = _edit(ind, pts)
    assert out.candidates == (("var", 0),)
    ind2 = Individual(candidates=(("/", ("one",), ("var", 0)), ("var", 0)))
    out2 = _edit(ind2, pts)  # pts include 0 -> zero denominator
    assert out2.candidates == (("var", 0),)


def test_edit_removes_dependent_then_keeps_first():
    pts = np.linspace(0.5, 2, 20)[:, None]
    ind = Individual(candidates=(("var", 0), ("*", ("const", 3.0), ("var", 0))))
    out = _edit(ind, pts)
    assert out.candidates == (("var", 0),)


def test_edit_replaces_emptied_individual():
    pts = np.linspace(-1, 1, 21)[:, None]
    ind = Individual(candidates=(("ln", ("var", 0)),))
    out = _edit(ind, pts)
    assert len(out.candidates) == 1
    vals = eval_tree(out.candidates[0], pts)
    assert np.isfinite(vals).all()


def test_edit_idempotent_on_clean_individual():
    pts = np.linspace(0.5, 2, 20)[:, None]
    ind = Individual(candidates=(("var", 0), ("squ", ("var", 0)), ("one",)))
    once = _edit(ind, pts)
    twice = _edit(once, pts)
    assert once.candidates == twice.candidates
