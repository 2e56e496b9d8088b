"""Expression trees, abstract equational rules and the structural rewrite oracle.

Trees are immutable dataclasses, so ``==`` and ``hash`` are structural.
Inside a rule every :class:`Var` is a rule variable that matches any
subtree; in concrete expressions variables are ordinary leaves.  The two
namespaces never meet: rule variables are only ever replaced, never matched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence, Union

import numpy as np

from .dataset_io import Example, SplitDataset, TaskKind
from .seeding import make_rng
from .string_tasks import CapacityError, RewriteOutcome

BINARY_OPS = ("+", "-", "*", "/")
POW = "^"
UNARY_OPS = ("log", "cos", "sin", "neg")
RULE_VARS = ("a", "b", "c", "d")


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Var, Const, Unary, Binary]
Substitution = dict[str, Expr]
Path = tuple[int, ...]


def is_leaf(e: Expr) -> bool:
    return isinstance(e, (Var, Const))


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Unary):
        return (e.child,)
    return ()


def depth(e: Expr) -> int:
    kids = children(e)
    return 0 if not kids else 1 + max(depth(c) for c in kids)


def size(e: Expr) -> int:
    return 1 + sum(size(c) for c in children(e))


def variables(e: Expr) -> list[str]:
    """Variable names in pre-order of first occurrence."""
    out: list[str] = []
    for _, sub in subtrees(e):
        if isinstance(sub, Var) and sub.name not in out:
            out.append(sub.name)
    return out


def subtrees(e: Expr, path: Path = ()) -> Iterator[tuple[Path, Expr]]:
    """Pre-order (leftmost-outermost) walk yielding ``(path, subtree)``."""
    stack = [(path, e)]
    while stack:
        p, node = stack.pop()
        yield p, node
        kids = children(node)
        for i in reversed(range(len(kids))):
            stack.append((p + (i,), kids[i]))


def get_at(e: Expr, path: Path) -> Expr:
    for i in path:
        e = children(e)[i]
    return e


def replace_at(e: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    i, rest = path[0], path[1:]
    if isinstance(e, Binary):
        if i == 0:
            return Binary(e.op, replace_at(e.left, rest, new), e.right)
        return Binary(e.op, e.left, replace_at(e.right, rest, new))
    if isinstance(e, Unary):
        return Unary(e.op, replace_at(e.child, rest, new))
    raise ExprError(f"path {path} descends into a leaf")


# -- rules ------------------------------------------------------------------

@dataclass(frozen=True)
class AbstractRule:
    lhs: Expr
    rhs: Expr
    id: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.lhs, Var):
            raise ExprError("rule lhs must not be a bare variable")
        extra = set(variables(self.rhs)) - set(variables(self.lhs))
        if extra:
            raise ExprError(f"rhs variables not bound by lhs: {sorted(extra)}")

    def key(self) -> tuple[Expr, Expr]:
        return (self.lhs, self.rhs)

    def render(self) -> str:
        return f"{render(self.lhs)}={render(self.rhs)}"


def parse_rule(text: str, id: int = 0) -> AbstractRule:
    lhs, sep, rhs = text.partition("=")
    if not sep:
        raise ParseError("expected '='", len(text))
    return AbstractRule(parse(lhs), parse(rhs), id)


# -- matching and rewriting --------------------------------------------------

def _unify(pattern: Expr, e: Expr, subst: Substitution) -> bool:
    if isinstance(pattern, Var):
        bound = subst.get(pattern.name)
        if bound is None:
            subst[pattern.name] = e
            return True
        return bound == e
    if type(pattern) is not type(e):
        return False
    if isinstance(pattern, Const):
        return pattern.value == e.value
    if isinstance(pattern, Unary):
        return pattern.op == e.op and _unify(pattern.child, e.child, subst)
    return (
        pattern.op == e.op
        and _unify(pattern.left, e.left, subst)
        and _unify(pattern.right, e.right, subst)
    )


def match_at(e: Expr, pattern: Expr) -> Substitution | None:
    """Match ``pattern`` against the root of ``e`` only."""
    subst: Substitution = {}
    return subst if _unify(pattern, e, subst) else None


def find_match(e: Expr, pattern: Expr) -> tuple[Path, Substitution] | None:
    for path, sub in subtrees(e):
        subst = match_at(sub, pattern)
        if subst is not None:
            return path, subst
    return None


def match(e: Expr, pattern: Expr) -> Substitution | None:
    """Substitution for the first leftmost-outermost match, or ``None``."""
    found = find_match(e, pattern)
    return None if found is None else found[1]


def instantiate(side: Expr, subst: Substitution) -> Expr:
    if isinstance(side, Var):
        if side.name not in subst:
            raise ExprError(f"unbound rule variable {side.name!r}")
        return subst[side.name]
    if isinstance(side, Const):
        return side
    if isinstance(side, Unary):
        return Unary(side.op, instantiate(side.child, subst))
    return Binary(side.op, instantiate(side.left, subst), instantiate(side.right, subst))


def apply_abstract_rule(e: Expr, rule: AbstractRule) -> RewriteOutcome[Expr]:
    found = find_match(e, rule.lhs)
    if found is None:
        return RewriteOutcome(e, False)
    path, subst = found
    return RewriteOutcome(replace_at(e, path, instantiate(rule.rhs, subst)), True)


# -- rendering and parsing -----------------------------------------------------

def render(e: Expr) -> str:
    """Fully parenthesized canonical form, e.g. ``((a^2)-(b^2))``."""
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Unary):
        return f"{e.op}({render(e.child)})"
    return f"({render(e.left)}{e.op}{render(e.right)})"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_DISPLAY = {"*": "×", "-": "−", "/": "/", "+": "+", "^": "^"}


def render_pretty(e: Expr) -> str:
    """Human-oriented form with minimal parentheses and implicit products.

    Display only; datasets always use :func:`render`.
    """

    def go(node: Expr, parent_prec: int, right_side: bool) -> str:
        if isinstance(node, Var):
            return node.name
        if isinstance(node, Const):
            return str(node.value)
        if isinstance(node, Unary):
            if node.op == "neg":
                return "−" + go(node.child, 3, False)
            return f"{node.op}({go(node.child, 0, False)})"
        prec = _PREC[node.op]
        if node.op == "^":
            text = f"{go(node.left, prec + 1, False)}^{go(node.right, prec + 1, True)}"
        elif node.op == "*" and isinstance(node.left, Const) and isinstance(node.right, (Var, Unary)):
            text = f"{node.left.value}{go(node.right, prec, True)}"
        else:
            text = f"{go(node.left, prec, False)}{_DISPLAY[node.op]}{go(node.right, prec + (1 if node.op in '-/' else 0), True)}"
        if prec < parent_prec or (right_side and prec == parent_prec and node.op in "-/^"):
            return f"({text})"
        return text

    return go(e, 0, False)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r}, found {self.peek() or 'end of input'!r}", self.pos)
        self.pos += 1

    def parse(self) -> Expr:
        e = self.expr()
        if self.pos != len(self.text):
            raise ParseError(f"unexpected {self.peek()!r}", self.pos)
        return e

    def expr(self) -> Expr:
        e = self.atom()
        # Postfix "^int"; a general exponent is only legal as "(e^e)", handled in atom().
        while self.peek() == "^" and self.text[self.pos + 1:self.pos + 2].isdigit():
            self.pos += 1
            e = Binary("^", e, self.atom())
        return e

    def atom(self) -> Expr:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            left = self.expr()
            op = self.peek()
            if op == ")" and isinstance(left, Binary) and left.op == POW:
                # "(a^2)": the postfix power already consumed the exponent
                self.pos += 1
                return left
            if op not in BINARY_OPS and op != POW:
                raise ParseError(f"expected a binary operator, found {op or 'end of input'!r}", self.pos)
            self.pos += 1
            right = self.expr()
            self.expect(")")
            return Binary(op, left, right)
        if ch.isdigit():
            start = self.pos
            while self.peek().isdigit():
                self.pos += 1
            return Const(int(self.text[start:self.pos]))
        if ch.isalpha():
            start = self.pos
            while self.peek().isalpha():
                self.pos += 1
            word = self.text[start:self.pos]
            if word in UNARY_OPS:
                self.expect("(")
                child = self.expr()
                self.expect(")")
                return Unary(word, child)
            if len(word) != 1:
                raise ParseError(f"unknown function or malformed variable {word!r}", start)
            while self.peek().isdigit():
                self.pos += 1
            return Var(self.text[start:self.pos])
        raise ParseError(f"unexpected {ch or 'end of input'!r}", self.pos)


def parse(text: str) -> Expr:
    return _Parser(text).parse()


# -- random generation ---------------------------------------------------------

DEFAULT_OP_WEIGHTS = {
    "+": 3.0, "-": 3.0, "*": 3.0, "/": 1.0, "^": 1.0,
    "log": 0.5, "cos": 0.5, "sin": 0.5, "neg": 0.5,
}


@dataclass(frozen=True)
class ExprGenConfig:
    """Knobs for random trees, rules and dataset instances.

    ``leaf_prob`` is the chance that a child off the depth-defining path
    stops early at a leaf.  Rule shapes are drawn from the ``rule_*`` ranges.
    """

    depth: int = 3
    pattern_depth: int = 1
    leaf_var_names: tuple[str, ...] = ("x", "y", "z", "t", "k")
    const_range: tuple[int, int] = (1, 9)
    op_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_OP_WEIGHTS))
    leaf_prob: float = 0.3
    var_prob: float = 0.5
    pow_exponents: tuple[int, ...] = (2, 3)
    rule_vars: tuple[int, int] = (1, 3)
    rule_lhs_depth: tuple[int, int] = (1, 2)
    rule_rhs_depth: tuple[int, int] = (1, 2)
    groundings_per_rule: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.depth < 0 or self.pattern_depth < 0:
            raise ExprError("depths must be non-negative")
        unknown = set(self.op_weights) - set(BINARY_OPS) - {POW} - set(UNARY_OPS)
        if unknown:
            raise ExprError(f"unknown operators in op_weights: {sorted(unknown)}")
        if not any(w > 0 for w in self.op_weights.values()):
            raise ExprError("at least one operator needs positive weight")
        if set(self.leaf_var_names) & set(RULE_VARS):
            raise ExprError("expression variables must not reuse rule-variable names")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth, "pattern_depth": self.pattern_depth,
            "leaf_var_names": list(self.leaf_var_names), "const_range": list(self.const_range),
            "op_weights": dict(self.op_weights), "leaf_prob": self.leaf_prob,
            "var_prob": self.var_prob, "pow_exponents": list(self.pow_exponents),
            "rule_vars": list(self.rule_vars), "rule_lhs_depth": list(self.rule_lhs_depth),
            "rule_rhs_depth": list(self.rule_rhs_depth),
            "groundings_per_rule": self.groundings_per_rule, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExprGenConfig":
        d = dict(d)
        for key in ("leaf_var_names", "const_range", "pow_exponents", "rule_vars",
                    "rule_lhs_depth", "rule_rhs_depth"):
            d[key] = tuple(d[key])
        return cls(**d)


class _TreeSampler:
    def __init__(self, cfg: ExprGenConfig, rng: np.random.Generator,
                 leaf: Callable[[], Expr] | None = None):
        self.cfg = cfg
        self.rng = rng
        ops = [op for op, w in cfg.op_weights.items() if w > 0]
        w = np.array([cfg.op_weights[op] for op in ops], dtype=float)
        self.ops = ops
        self.p = w / w.sum()
        self.leaf = leaf or self.concrete_leaf

    def concrete_leaf(self) -> Expr:
        cfg, rng = self.cfg, self.rng
        if cfg.leaf_var_names and rng.random() < cfg.var_prob:
            return Var(cfg.leaf_var_names[int(rng.integers(len(cfg.leaf_var_names)))])
        lo, hi = cfg.const_range
        return Const(int(rng.integers(lo, hi + 1)))

    def op(self) -> str:
        return self.ops[int(self.rng.choice(len(self.ops), p=self.p))]

    def tree(self, d: int, exact: bool = True) -> Expr:
        """Tree of depth exactly ``d`` (``exact``) or at most ``d``."""
        if d == 0 or (not exact and self.rng.random() < self.cfg.leaf_prob):
            return self.leaf()
        op = self.op()
        if op in UNARY_OPS:
            return Unary(op, self.tree(d - 1, exact))
        if op == POW:
            exps = self.cfg.pow_exponents
            return Binary(POW, self.tree(d - 1, exact), Const(int(exps[int(self.rng.integers(len(exps)))])))
        if exact:
            spine_left = self.rng.random() < 0.5
            left = self.tree(d - 1, exact=spine_left)
            right = self.tree(d - 1, exact=not spine_left)
        else:
            left, right = self.tree(d - 1, False), self.tree(d - 1, False)
        return Binary(op, left, right)


def gen_random_tree(cfg: ExprGenConfig, d: int, rng: np.random.Generator) -> Expr:
    """Random concrete tree whose depth is exactly ``d``."""
    if d < 0:
        raise ExprError("depth must be >= 0")
    return _TreeSampler(cfg, rng).tree(d)


def canonicalize_vars(rule_lhs: Expr, rule_rhs: Expr) -> tuple[Expr, Expr]:
    """Rename rule variables to a, b, c, ... by first occurrence in the lhs."""
    names = variables(rule_lhs)
    mapping = {n: Var(RULE_VARS[i]) for i, n in enumerate(names)}
    return instantiate(rule_lhs, mapping), instantiate(rule_rhs, mapping)


def gen_abstract_rule(
    num_vars: int, lhs_depth: int, rhs_depth: int, rng: np.random.Generator,
    cfg: ExprGenConfig | None = None, seen: set | None = None, max_tries: int = 1000, id: int = 0,
) -> AbstractRule:
    """Random rule whose lhs uses all ``num_vars`` variables.

    Rules already in ``seen`` (by structural key) are rejected; the new key is
    added to ``seen``.
    """
    if not 1 <= num_vars <= len(RULE_VARS):
        raise ExprError(f"num_vars must be in 1..{len(RULE_VARS)}")
    if lhs_depth < 1:
        raise ExprError("lhs_depth must be >= 1 (a bare variable is not a rule)")
    cfg = cfg or ExprGenConfig()
    names = RULE_VARS[:num_vars]
    sampler = _TreeSampler(cfg, rng)

    def rule_leaf() -> Expr:
        # Mostly variables; an occasional constant keeps rules from being purely linear.
        if rng.random() < 0.85:
            return Var(names[int(rng.integers(num_vars))])
        lo, hi = cfg.const_range
        return Const(int(rng.integers(lo, hi + 1)))

    sampler.leaf = rule_leaf
    for _ in range(max_tries):
        lhs = sampler.tree(lhs_depth)
        if set(variables(lhs)) != set(names):
            continue
        rhs = sampler.tree(rhs_depth)
        if not set(variables(rhs)) <= set(names) or lhs == rhs:
            continue
        lhs, rhs = canonicalize_vars(lhs, rhs)
        key = (lhs, rhs)
        if seen is not None:
            if key in seen:
                continue
            seen.add(key)
        return AbstractRule(lhs, rhs, id)
    raise CapacityError(
        f"no new rule with {num_vars} vars, depths {lhs_depth}/{rhs_depth} after {max_tries} tries"
    )


def gen_rule_pool(n: int, cfg: ExprGenConfig, rng: np.random.Generator,
                  seen: set | None = None, first_id: int = 0) -> list[AbstractRule]:
    """``n`` structurally distinct rules with shapes drawn from the config ranges."""
    seen = set() if seen is None else seen
    out = []
    for i in range(n):
        lo_d, hi_d = cfg.rule_lhs_depth
        lhs_depth = int(rng.integers(lo_d, hi_d + 1))
        max_vars = min(cfg.rule_vars[1], 2 ** lhs_depth, len(RULE_VARS))
        num_vars = int(rng.integers(min(cfg.rule_vars[0], max_vars), max_vars + 1))
        rhs_depth = int(rng.integers(cfg.rule_rhs_depth[0], cfg.rule_rhs_depth[1] + 1))
        out.append(gen_abstract_rule(num_vars, lhs_depth, rhs_depth, rng, cfg, seen, id=first_id + i))
    return out


def _leaf_paths(e: Expr) -> list[Path]:
    """Leaves that may host a sub-expression (pow exponents excluded)."""
    out = []
    for path, sub in subtrees(e):
        if is_leaf(sub):
            if path and path[-1] == 1 and isinstance(get_at(e, path[:-1]), Binary) \
                    and get_at(e, path[:-1]).op == POW:
                continue
            out.append(path)
    return out


def draw_grounding(rule: AbstractRule, d_p: int, cfg: ExprGenConfig, rng: np.random.Generator) -> Substitution:
    sampler = _TreeSampler(cfg, rng)
    return {name: sampler.tree(d_p) for name in variables(rule.lhs)}


def ground_and_embed(
    rule: AbstractRule, host: Expr, d_p: int, rng: np.random.Generator,
    cfg: ExprGenConfig | None = None, grounding: Substitution | None = None, max_retries: int = 100,
) -> tuple[Expr, Expr, Substitution]:
    """Embed a grounded copy of ``rule.lhs`` at a random leaf of ``host``.

    Returns ``(instance, target, grounding)``.  Placements where the oracle
    would fire somewhere other than the embedded site are rejected.
    """
    cfg = cfg or ExprGenConfig()
    leaves = _leaf_paths(host)
    if not leaves:
        raise GenerationError("host has no usable leaf")
    for _ in range(max_retries):
        sigma = grounding if grounding is not None else draw_grounding(rule, d_p, cfg, rng)
        concrete = instantiate(rule.lhs, sigma)
        path = leaves[int(rng.integers(len(leaves)))]
        instance = replace_at(host, path, concrete)
        found = find_match(instance, rule.lhs)
        if found is None or found[0] != path:
            continue
        target = replace_at(instance, path, instantiate(rule.rhs, found[1]))
        return instance, target, sigma
    raise GenerationError(f"could not embed rule {rule.render()} without an earlier match")


# -- dataset builders ------------------------------------------------------------

_HOST, _GROUND, _RULES, _TEST = 11, 12, 13, 14


def _instances(
    rule: AbstractRule, count: int, d_p: int, cfg: ExprGenConfig, seed: int, tag: int,
    split: str, host_retries: int = 50,
) -> list[Example]:
    rng = make_rng(seed, tag, rule.id, d_p)
    groundings = None
    if cfg.groundings_per_rule:
        groundings = [draw_grounding(rule, d_p, cfg, rng) for _ in range(cfg.groundings_per_rule)]
    out = []
    instr = rule.render()
    for i in range(count):
        fixed = groundings[i % len(groundings)] if groundings else None
        for _ in range(host_retries):
            host = gen_random_tree(cfg, cfg.depth, rng)
            try:
                instance, target, _ = ground_and_embed(rule, host, d_p, rng, cfg, fixed, max_retries=10)
                break
            except GenerationError:
                continue
        else:
            raise GenerationError(f"rule {rule.id}: no valid host after {host_retries} attempts")
        meta = {"rule_id": rule.id, "is_noop": False, "split": split, "d": cfg.depth, "d_p": d_p}
        out.append(Example(TaskKind.EXPR_REWRITE, instr, render(instance), render(target), meta))
    return out


def even_counts(total: int, parts: int) -> list[int]:
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def gen_generalist_dataset(
    num_rules: int, instances_total: int, cfg: ExprGenConfig,
    test_rules: int = 20, test_instances_per_rule: int = 10,
) -> SplitDataset:
    """Training instances spread evenly over ``num_rules`` rules; tests use fresh rules."""
    if num_rules < 1:
        raise ExprError("num_rules must be >= 1")
    rng = make_rng(cfg.seed, _RULES)
    seen: set = set()
    rules = gen_rule_pool(num_rules + test_rules, cfg, rng, seen)
    train_rules, held_out = rules[:num_rules], rules[num_rules:]
    train: list[Example] = []
    for rule, n in zip(train_rules, even_counts(instances_total, num_rules)):
        train += _instances(rule, n, cfg.pattern_depth, cfg, cfg.seed, _HOST, "train")
    test: list[Example] = []
    for rule in held_out:
        test += _instances(rule, test_instances_per_rule, cfg.pattern_depth, cfg, cfg.seed, _TEST, "test")
    manifest = {
        "generator": "math",
        "seed": cfg.seed,
        "config": {"num_rules": num_rules, "instances_total": instances_total, "gen": cfg.to_dict(),
                   "test_rules": test_rules, "test_instances_per_rule": test_instances_per_rule},
        "rules": [r.render() for r in rules],
    }
    return SplitDataset(train, test, manifest)


@dataclass(frozen=True)
class SpecialistMixtureConfig:
    spec_rules: tuple[AbstractRule, ...]
    diver_rules: tuple[AbstractRule, ...]
    spec_count: int
    diver_count: int
    d_p_train: int
    d_p_test: int
    test_count: int = 200

    def __post_init__(self) -> None:
        if set(r.key() for r in self.spec_rules) & set(r.key() for r in self.diver_rules):
            raise ExprError("specialist and diversification rules overlap")
        ids = [r.id for r in self.spec_rules + self.diver_rules]
        if len(set(ids)) != len(ids):
            raise ExprError("rule ids must be unique across both pools")
        if not self.d_p_train < self.d_p_test:
            raise ExprError("need d_p_train < d_p_test")
        if not self.spec_rules:
            raise ExprError("need at least one specialist rule")
        if self.diver_count and not self.diver_rules:
            raise ExprError("diver_count > 0 needs diversification rules")


def make_mixture(
    n_spec: int, n_diver: int, spec_count: int, diver_count: int, d_p_train: int, d_p_test: int,
    cfg: ExprGenConfig, test_count: int = 200,
) -> SpecialistMixtureConfig:
    """Draw disjoint R_spec / R_diver pools from one seeded rule stream."""
    rng = make_rng(cfg.seed, _RULES)
    pool = gen_rule_pool(n_spec + n_diver, cfg, rng)
    return SpecialistMixtureConfig(tuple(pool[:n_spec]), tuple(pool[n_spec:]), spec_count,
                                   diver_count, d_p_train, d_p_test, test_count)


def gen_specialist_dataset(mix: SpecialistMixtureConfig, cfg: ExprGenConfig) -> SplitDataset:
    """Train on R_spec + R_diver at ``d_p_train``; test on R_spec at ``d_p_test``."""
    train: list[Example] = []
    for rule, n in zip(mix.spec_rules, even_counts(mix.spec_count, len(mix.spec_rules))):
        train += _instances(rule, n, mix.d_p_train, cfg, cfg.seed, _HOST, "train")
    if mix.diver_count:
        for rule, n in zip(mix.diver_rules, even_counts(mix.diver_count, len(mix.diver_rules))):
            train += _instances(rule, n, mix.d_p_train, cfg, cfg.seed, _HOST, "train")
    test: list[Example] = []
    for rule, n in zip(mix.spec_rules, even_counts(mix.test_count, len(mix.spec_rules))):
        test += _instances(rule, n, mix.d_p_test, cfg, cfg.seed, _TEST, "test")
    manifest = {
        "generator": "math-specialist",
        "seed": cfg.seed,
        "config": {
            "gen": cfg.to_dict(),
            "spec_rules": [[r.id, r.render()] for r in mix.spec_rules],
            "diver_rules": [[r.id, r.render()] for r in mix.diver_rules],
            "spec_count": mix.spec_count, "diver_count": mix.diver_count,
            "d_p_train": mix.d_p_train, "d_p_test": mix.d_p_test, "test_count": mix.test_count,
        },
    }
    return SplitDataset(train, test, manifest)


def mixture_from_manifest(config: dict) -> SpecialistMixtureConfig:
    spec = tuple(parse_rule(text, rid) for rid, text in config["spec_rules"])
    diver = tuple(parse_rule(text, rid) for rid, text in config["diver_rules"])
    return SpecialistMixtureConfig(spec, diver, config["spec_count"], config["diver_count"],
                                   config["d_p_train"], config["d_p_test"], config["test_count"])


def enumerate_trees(max_depth: int, leaves: Sequence[Expr], ops: Sequence[str]) -> list[Expr]:
    """Every tree of depth <= ``max_depth`` built from ``leaves`` and binary ``ops``."""
    level = list(leaves)
    for _ in range(max_depth):
        level = list(leaves) + [Binary(op, l, r) for op in ops for l in level for r in level]
    return level
