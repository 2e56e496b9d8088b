from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import expr_oracle_mismatches, preorder
from rewritelab.dataset_io import TaskKind
from rewritelab.expr_rewrite import (AbstractRule, Binary, Const, ExprError, ExprGenConfig, GenerationError,
                                     ParseError, Unary, Var, apply_abstract_rule, depth, even_counts,
                                     find_match, gen_abstract_rule, gen_generalist_dataset, gen_random_tree,
                                     gen_specialist_dataset, get_at, ground_and_embed, instantiate, make_mixture,
                                     match, match_at, parse, parse_rule, render, render_pretty, size,
                                     SpecialistMixtureConfig, subtrees, variables)
from rewritelab.seeding import make_rng

a, b, c = Var("a"), Var("b"), Var("c")
x, y, t, k = Var("x"), Var("y"), Var("t"), Var("k")


def B(op, l, r):
    return Binary(op, l, r)


def sq(e):
    return B("^", e, Const(2))


DIFF_SQUARES = AbstractRule(B("-", sq(a), sq(b)), B("*", B("+", a, b), B("-", a, b)))
A_EXPR = B("+", B("*", Const(2), x), Const(5))          # 2x+5
B_EXPR = B("-", B("*", Const(3), y), Const(6))          # 3y-6
TAIL = B("-", Unary("log", B("*", Const(5), t)), Unary("cos", B("*", Const(4), k)))
WORKED_INPUT = B("+", B("^", B("-", sq(A_EXPR), sq(B_EXPR)), Const(3)), TAIL)


# -- worked example ------------------------------------------------------------------------

def test_worked_example():
    out = apply_abstract_rule(WORKED_INPUT, DIFF_SQUARES)
    assert out.applied
    expected = B("+", B("^", B("*", B("+", A_EXPR, B_EXPR), B("-", A_EXPR, B_EXPR)), Const(3)), TAIL)
    assert out.output == expected
    assert render(out.output) == ("((((((2*x)+5)+((3*y)-6))*(((2*x)+5)-((3*y)-6)))^3)"
                                  "+(log((5*t))-cos((4*k))))")
    # display form keeps the tree: writing "2x+5+3y−6" would reassociate the sum
    assert render_pretty(out.output) == "((2x+5+(3y−6))×(2x+5−(3y−6)))^3+(log(5t)−cos(4k))"


def test_worked_example_through_text():
    text = "((((((2*x)+5)^2)-(((3*y)-6)^2))^3)+(log((5*t))-cos((4*k))))"
    rule = parse_rule("((a^2)-(b^2))=((a+b)*(a-b))")
    assert parse(text) == WORKED_INPUT and rule.key() == DIFF_SQUARES.key()
    assert render(apply_abstract_rule(parse(text), rule).output) == render(apply_abstract_rule(WORKED_INPUT, DIFF_SQUARES).output)


def test_worked_example_is_a_grounding():
    host = B("+", B("^", Var("x"), Const(3)), TAIL)
    sigma0 = {"a": A_EXPR, "b": B_EXPR}
    hits = 0
    for seed in range(40):
        inst, target, sigma = ground_and_embed(DIFF_SQUARES, host, 2, make_rng(seed), ExprGenConfig(), sigma0)
        assert sigma == sigma0 and target == apply_abstract_rule(inst, DIFF_SQUARES).output
        hits += inst == WORKED_INPUT
    assert hits > 0


# -- match / instantiate -------------------------------------------------------------------

def test_match_examples():
    assert match(B("-", sq(A_EXPR), sq(B_EXPR)), DIFF_SQUARES.lhs) == {"a": A_EXPR, "b": B_EXPR}
    assert match(WORKED_INPUT, a) == {"a": WORKED_INPUT}
    assert match(Unary("log", B("*", Const(5), t)), DIFF_SQUARES.lhs) is None


def test_repeated_variable_consistency():
    aa = B("*", a, a)
    assert match(B("*", x, y), aa) is None
    assert match(B("*", x, x), aa) == {"a": x}
    assert match(B("*", B("+", x, y), B("+", y, x)), aa) is None  # structural, not algebraic


def test_instantiate_examples():
    got = instantiate(DIFF_SQUARES.rhs, {"a": A_EXPR, "b": B_EXPR})
    assert got == B("*", B("+", A_EXPR, B_EXPR), B("-", A_EXPR, B_EXPR))
    assert instantiate(DIFF_SQUARES.rhs, {"a": a, "b": b}) == DIFF_SQUARES.rhs
    with pytest.raises(ExprError, match="'c'"):
        instantiate(B("+", a, c), {"a": x})


def test_no_match_leaves_expr_unchanged():
    out = apply_abstract_rule(B("+", x, y), DIFF_SQUARES)
    assert not out.applied and out.output == B("+", x, y)


def test_two_disjoint_matches_only_first_rewritten():
    rule = AbstractRule(B("+", a, Const(1)), B("-", a, Const(1)))
    e = B("*", B("+", x, Const(1)), B("+", y, Const(1)))
    paths = [p for p, s in subtrees(e) if match_at(s, rule.lhs) is not None]
    assert paths == [(0,), (1,)]
    assert apply_abstract_rule(e, rule).output == B("*", B("-", x, Const(1)), B("+", y, Const(1)))


def test_outermost_before_inner():
    rule = AbstractRule(B("+", a, b), b)
    e = B("+", B("+", x, y), t)
    assert find_match(e, rule.lhs)[0] == ()
    assert apply_abstract_rule(e, rule).output == t


def test_rule_validation():
    with pytest.raises(ExprError):
        AbstractRule(a, b)
    with pytest.raises(ExprError, match="'b'"):
        AbstractRule(B("+", a, a), b)


def test_matcher_vs_exhaustive_enumeration():
    checked, bad = expr_oracle_mismatches()
    assert checked > 400_000 and bad == 0


# -- render / parse ------------------------------------------------------------------------

def test_render_parse_examples():
    e = B("-", sq(a), sq(b))
    assert render(e) == "((a^2)-(b^2))"
    assert parse("((a^2)-(b^2))") == e
    assert parse("(x^y)") == B("^", x, y)
    assert parse("x2") == Var("x2") and parse("neg((x+1))") == Unary("neg", B("+", x, Const(1)))


@pytest.mark.parametrize("text,pos", [("(x+", 3), ("(x)", 2), ("x+y", 1), ("foo(x)", 0), ("", 0), ("(x+y))", 5)])
def test_parse_errors_carry_position(text, pos):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.pos == pos


def test_roundtrip_1e4_random_trees():
    cfg = ExprGenConfig()
    rng = make_rng(17)
    for i in range(10_000):
        e = gen_random_tree(cfg, i % 7, rng)
        assert parse(render(e)) == e


@settings(max_examples=200, deadline=None)
@given(st.recursive(
    st.one_of(st.sampled_from([x, y, a]), st.integers(0, 99).map(Const)),
    lambda kids: st.one_of(
        st.tuples(st.sampled_from("+-*/^"), kids, kids).map(lambda p: Binary(*p)),
        st.tuples(st.sampled_from(["log", "cos", "sin", "neg"]), kids).map(lambda p: Unary(*p))),
    max_leaves=12))
def test_roundtrip_arbitrary_trees(e):
    assert parse(render(e)) == e


# -- generation ------------------------------------------------------------------------------

def test_depth_zero_is_leaf():
    rng = make_rng(1)
    for _ in range(50):
        assert isinstance(gen_random_tree(ExprGenConfig(), 0, rng), (Var, Const))


def test_exact_depth_and_size_bounds():
    cfg = ExprGenConfig(op_weights={"+": 1.0, "*": 1.0})
    rng = make_rng(2)
    for d in range(6):
        for _ in range(100):
            e = gen_random_tree(cfg, d, rng)
            assert depth(e) == d
            if d == 3:
                assert 4 <= size(e) <= 15


def test_pow_exponent_is_small_const():
    cfg = ExprGenConfig(op_weights={"^": 1.0, "+": 1.0})
    rng = make_rng(3)
    for _ in range(200):
        for _, s in subtrees(gen_random_tree(cfg, 4, rng)):
            if isinstance(s, Binary) and s.op == "^":
                assert isinstance(s.right, Const) and s.right.value >= 2


def test_operator_frequencies_match_weights():
    cfg = ExprGenConfig()
    rng = make_rng(4)
    counts = Counter()
    for _ in range(10_000):
        for _, s in subtrees(gen_random_tree(cfg, 3, rng)):
            if isinstance(s, (Binary, Unary)):
                counts[s.op] += 1
    n = sum(counts.values())
    total_w = sum(cfg.op_weights.values())
    for op, w in cfg.op_weights.items():
        p = w / total_w
        assert abs(counts[op] - n * p) < 3 * np.sqrt(n * p * (1 - p)), op


def test_abstract_rule_shapes():
    rng = make_rng(5)
    r = gen_abstract_rule(1, 1, 1, rng)
    assert variables(r.lhs) == ["a"] and set(variables(r.rhs)) <= {"a"}
    for n in (1, 2, 3, 4):
        r = gen_abstract_rule(n, 2 if n < 4 else 3, 2, rng)
        assert sorted(set(variables(r.lhs))) == ["a", "b", "c", "d"][:n]
        assert set(variables(r.rhs)) <= set(variables(r.lhs))
    assert parse_rule(DIFF_SQUARES.render()).key() == DIFF_SQUARES.key()


def test_thousand_rules_distinct():
    rng = make_rng(6)
    seen: set = set()
    rules = [gen_abstract_rule(int(rng.integers(1, 4)), 2, 2, rng, seen=seen) for _ in range(1000)]
    assert len({r.key() for r in rules}) == 1000


def test_ground_depth_zero():
    host = B("+", x, y)
    inst, target, sigma = ground_and_embed(DIFF_SQUARES, host, 0, make_rng(7))
    assert all(isinstance(v, (Var, Const)) for v in sigma.values())
    assert apply_abstract_rule(inst, DIFF_SQUARES).output == target


def test_ground_and_embed_self_consistency():
    cfg = ExprGenConfig(seed=8)
    rng = make_rng(8)
    rules = [gen_abstract_rule(int(rng.integers(1, 3)), 1 + i % 2, 1 + (i // 2) % 2, rng, cfg) for i in range(20)]
    done = i = 0
    while done < 1000:
        i += 1
        rule = rules[i % 20]
        try:
            inst, target, sigma = ground_and_embed(rule, gen_random_tree(cfg, 3, rng), 1 + i % 2, rng, cfg)
        except GenerationError:
            continue
        done += 1
        path, subst = find_match(inst, rule.lhs)
        assert subst == sigma
        assert apply_abstract_rule(inst, rule).output == target
        # locality: every node off the rewritten path is unchanged
        for p, node in preorder(inst):
            if p[:len(path)] != path and path[:len(p)] != p:
                assert get_at(target, p) == node
    assert i < 1100


def test_ground_rejects_shadowed_embedding():
    rule = AbstractRule(B("+", a, b), a)
    host = B("+", x, y)  # the host root always matches before any embedded copy
    with pytest.raises(GenerationError):
        ground_and_embed(rule, host, 0, make_rng(0), grounding={"a": x, "b": y}, max_retries=5)


# -- datasets ---------------------------------------------------------------------------------

def _self_consistent(examples):
    for ex in examples:
        rule = parse_rule(ex.instruction_text)
        out = apply_abstract_rule(parse(ex.input_text), rule)
        assert out.applied and render(out.output) == ex.target_text
        assert ex.task_kind is TaskKind.EXPR_REWRITE


def test_generalist_dataset():
    cfg = ExprGenConfig(depth=2, seed=3)
    d = gen_generalist_dataset(7, 100, cfg, test_rules=3, test_instances_per_rule=4)
    assert len(d.train) == 100 and len(d.test) == 12
    assert Counter(ex.rule_id for ex in d.train) == dict(enumerate(even_counts(100, 7)))
    assert not d.rule_ids("train") & d.rule_ids("test")
    assert not {ex.instruction_text for ex in d.train} & {ex.instruction_text for ex in d.test}
    _self_consistent(d.all_examples())
    assert gen_generalist_dataset(7, 100, cfg, 3, 4).train == d.train


def test_generalist_single_rule_budget():
    d = gen_generalist_dataset(1, 50_000, ExprGenConfig(depth=2, seed=1), test_rules=2, test_instances_per_rule=2)
    assert len(d.train) == 50_000 and d.rule_ids("train") == {0}
    _self_consistent(d.train[::500])


def test_specialist_dataset():
    cfg = ExprGenConfig(depth=3, seed=4)
    mix = make_mixture(3, 6, 60, 30, 1, 2, cfg, test_count=20)
    d = gen_specialist_dataset(mix, cfg)
    spec = {r.id for r in mix.spec_rules}
    assert len(d.train) == 90 and len(d.test) == 20
    assert all(ex.meta["d_p"] == 2 and ex.rule_id in spec for ex in d.test)
    assert all(ex.meta["d_p"] == 1 for ex in d.train)
    _self_consistent(d.all_examples())
    pure = gen_specialist_dataset(make_mixture(3, 0, 60, 0, 1, 2, cfg, 20), cfg)
    assert pure.rule_ids("train") == spec


def test_mixture_validation():
    r1, r2 = DIFF_SQUARES, AbstractRule(B("+", a, b), B("+", b, a), id=1)
    with pytest.raises(ExprError, match="overlap"):
        SpecialistMixtureConfig((r1,), (AbstractRule(r1.lhs, r1.rhs, 5),), 1, 1, 1, 2)
    with pytest.raises(ExprError, match="d_p_train"):
        SpecialistMixtureConfig((r1,), (r2,), 1, 1, 2, 2)
