"""String-replacement oracle and dataset generators.

Covers basic replacement, conditional replacement with No-Op examples,
power-law instruction frequencies and constrained pattern families.  Every
generator is a pure function of its config; randomness comes from per-rule
sub-streams of the config seed (see :mod:`rewritelab.seeding`), so rule ``r``
always receives the same examples no matter how generation is sharded.
"""
from __future__ import annotations

import enum
import math
import string
from dataclasses import asdict, dataclass
from typing import Generic, Sequence, TypeVar

import numpy as np

from .dataset_io import Example, SplitDataset, TaskKind, render_rule
from .seeding import make_rng

T = TypeVar("T")

DEFAULT_ALPHABET = string.ascii_lowercase

# sub-stream tags
_RULES, _TRAIN, _TEST, _NOOP, _WEIGHTS = 1, 2, 3, 4, 5


class TaskConfigError(ValueError):
    pass


class CapacityError(TaskConfigError):
    """The alphabet cannot supply the requested number of distinct rules."""


class UnsatisfiableError(RuntimeError):
    """A pattern-avoiding input could not be produced."""


@dataclass(frozen=True)
class ReplaceRule:
    src: str
    dst: str

    def __post_init__(self) -> None:
        if not self.src:
            raise TaskConfigError("rule src must be non-empty")

    def render(self) -> str:
        return render_rule(self.src, self.dst)


@dataclass(frozen=True)
class RewriteOutcome(Generic[T]):
    output: T
    applied: bool


def apply_replace(text: str, rule: ReplaceRule) -> RewriteOutcome[str]:
    """Replace the leftmost occurrence of ``rule.src``; unchanged if absent."""
    if not rule.src:
        raise TaskConfigError("rule src must be non-empty")
    pos = text.find(rule.src)
    if pos < 0:
        return RewriteOutcome(text, False)
    return RewriteOutcome(text[:pos] + rule.dst + text[pos + len(rule.src):], True)


# -- configs ----------------------------------------------------------------

@dataclass(frozen=True)
class BasicTaskConfig:
    num_instructions: int = 1000
    examples_per_instruction: int = 1000
    input_len: int = 50
    pattern_len: int = 20
    dst_len_range: tuple[int, int] | None = None  # None -> (pattern_len, pattern_len)
    alphabet: str = DEFAULT_ALPHABET
    test_instructions: int = 100
    test_examples_per_instruction: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_instructions < 1 or self.examples_per_instruction < 1:
            raise TaskConfigError("num_instructions and examples_per_instruction must be >= 1")
        if self.test_instructions < 0 or self.test_examples_per_instruction < 0:
            raise TaskConfigError("test sizes must be non-negative")
        if not 1 <= self.pattern_len < self.input_len:
            raise TaskConfigError("need 1 <= pattern_len < input_len")
        lo, hi = self.dst_range
        if not 0 <= lo <= hi:
            raise TaskConfigError(f"bad dst_len_range {self.dst_len_range}")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise TaskConfigError("alphabet must be non-empty with distinct symbols")

    @property
    def dst_range(self) -> tuple[int, int]:
        if self.dst_len_range is None:
            return (self.pattern_len, self.pattern_len)
        return tuple(self.dst_len_range)  # type: ignore[return-value]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dst_len_range"] = list(self.dst_range)
        return d


@dataclass(frozen=True)
class NoOpConfig:
    base: BasicTaskConfig
    no_op_frac: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.no_op_frac <= 1.0:
            raise TaskConfigError("no_op_frac must lie in [0, 1]")


@dataclass(frozen=True)
class PowerLawConfig:
    alpha: float
    num_instructions: int
    total_examples: int

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise TaskConfigError("alpha must be > 0")
        if self.num_instructions < 1 or self.total_examples < 1:
            raise TaskConfigError("num_instructions and total_examples must be >= 1")


class Family(str, enum.Enum):
    REPEATED = "RepeatedChars"
    PERIODIC = "Periodic"
    MIRRORED = "Mirrored"


@dataclass(frozen=True)
class SemanticFamily:
    kind: Family
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise TaskConfigError("k must be >= 1")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- random strings -----------------------------------------------------------

def _random_rows(rng: np.random.Generator, alphabet: str, rows: int, length: int) -> np.ndarray:
    """``rows x length`` array of single-character strings."""
    letters = np.array(list(alphabet), dtype="<U1")
    return letters[rng.integers(0, len(alphabet), size=(rows, length))]


def _join_rows(chars: np.ndarray) -> list[str]:
    if chars.shape[1] == 0:
        return [""] * chars.shape[0]
    flat = np.ascontiguousarray(chars)
    return flat.view(f"<U{chars.shape[1]}").ravel().tolist()


def random_string(length: int, alphabet: str, rng: np.random.Generator) -> str:
    return _join_rows(_random_rows(rng, alphabet, 1, length))[0]


def _embed_batch(pattern: str, count: int, input_len: int, alphabet: str, rng: np.random.Generator) -> list[str]:
    if input_len < len(pattern):
        raise TaskConfigError(f"input_len {input_len} shorter than pattern {len(pattern)}")
    chars = _random_rows(rng, alphabet, count, input_len)
    starts = rng.integers(0, input_len - len(pattern) + 1, size=count)
    pat = np.array(list(pattern), dtype="<U1")
    cols = starts[:, None] + np.arange(len(pattern))[None, :]
    chars[np.arange(count)[:, None], cols] = pat
    return _join_rows(chars)


def gen_input_with_pattern(pattern: str, input_len: int, alphabet: str, rng: np.random.Generator) -> str:
    """Uniform random string with ``pattern`` written over a uniform window."""
    return _embed_batch(pattern, 1, input_len, alphabet, rng)[0]


def _corrupt(text: str, pattern: str, alphabet: str, rng: np.random.Generator) -> str | None:
    chars = list(text)
    budget = len(text) * max(1, len(pattern)) + 1
    s = text
    for _ in range(budget):
        pos = s.find(pattern)
        if pos < 0:
            return s
        j = pos + int(rng.integers(0, len(pattern)))
        choices = [c for c in alphabet if c != chars[j]]
        if not choices:
            return None
        chars[j] = choices[int(rng.integers(0, len(choices)))]
        s = "".join(chars)
    return None if pattern in s else s


def _avoiding_walk(pattern: str, input_len: int, alphabet: str, rng: np.random.Generator) -> str | None:
    """Left-to-right sampling through the pattern's KMP automaton.

    ``alive[n][q]`` says whether ``n`` more symbols can follow from state
    ``q`` without completing the pattern, so the walk never dead-ends.
    """
    m = len(pattern)
    fail = [0] * m
    for i in range(1, m):
        j = fail[i - 1]
        while j and pattern[i] != pattern[j]:
            j = fail[j - 1]
        fail[i] = j + (pattern[i] == pattern[j])

    def delta(q: int, c: str) -> int:
        while q and pattern[q] != c:
            q = fail[q - 1]
        return q + (pattern[q] == c)

    table = [[delta(q, c) for c in alphabet] for q in range(m)]
    alive = [[True] * m]
    for _ in range(input_len):
        prev = alive[-1]
        alive.append([any(t < m and prev[t] for t in row) for row in table])
    if not alive[input_len][0]:
        return None
    out, q = [], 0
    for left in range(input_len, 0, -1):
        ok = [i for i, t in enumerate(table[q]) if t < m and alive[left - 1][t]]
        i = ok[int(rng.integers(0, len(ok)))]
        out.append(alphabet[i])
        q = table[q][i]
    return "".join(out)


def gen_input_without_pattern(
    pattern: str, input_len: int, alphabet: str, rng: np.random.Generator, max_tries: int = 1000
) -> str:
    """Random string of ``input_len`` that does not contain ``pattern``.

    Rejection sampling first; if that fails, one character inside every
    remaining occurrence is flipped until none is left, and as a last resort
    the string is built symbol by symbol so that no occurrence can form.
    """
    if not pattern:
        raise UnsatisfiableError("every string contains the empty pattern")
    last = ""
    for _ in range(max_tries):
        last = random_string(input_len, alphabet, rng)
        if pattern not in last:
            return last
    fixed = _corrupt(last, pattern, alphabet, rng)
    if fixed is None:
        fixed = _avoiding_walk(pattern, input_len, alphabet, rng)
    if fixed is None:
        raise UnsatisfiableError(
            f"cannot build a length-{input_len} string over {alphabet!r} avoiding {pattern!r}"
        )
    return fixed


# -- rules ------------------------------------------------------------------

def _distinct_strings(
    count: int, length: int, alphabet: str, rng: np.random.Generator, exclude: set[str] = frozenset()
) -> list[str]:
    capacity = len(alphabet) ** length
    if count + len(exclude) > capacity:
        raise CapacityError(
            f"{count} distinct patterns of length {length} over {len(alphabet)} symbols "
            f"(capacity {capacity}, {len(exclude)} excluded)"
        )
    seen = set(exclude)
    out: list[str] = []
    if capacity <= 4 * (count + len(exclude)) and capacity <= 10**7:
        for idx in rng.permutation(capacity):
            digits = []
            v = int(idx)
            for _ in range(length):
                v, d = divmod(v, len(alphabet))
                digits.append(alphabet[d])
            s = "".join(reversed(digits))
            if s not in seen:
                seen.add(s)
                out.append(s)
                if len(out) == count:
                    break
        return out
    while len(out) < count:
        for s in _join_rows(_random_rows(rng, alphabet, 2 * (count - len(out)), length)):
            if s not in seen:
                seen.add(s)
                out.append(s)
                if len(out) == count:
                    break
    return out


def gen_rules(cfg: BasicTaskConfig) -> tuple[list[ReplaceRule], list[ReplaceRule]]:
    """Train and test rules; test srcs never coincide with train srcs."""
    rng = make_rng(cfg.seed, _RULES)
    n_train, n_test = cfg.num_instructions, cfg.test_instructions
    srcs = _distinct_strings(n_train + n_test, cfg.pattern_len, cfg.alphabet, rng)
    lo, hi = cfg.dst_range
    lens = rng.integers(lo, hi + 1, size=len(srcs))
    rules = [ReplaceRule(s, random_string(int(n), cfg.alphabet, rng)) for s, n in zip(srcs, lens)]
    return rules[:n_train], rules[n_train:]


def _basic_examples(
    rule: ReplaceRule, rule_id: int, count: int, cfg: BasicTaskConfig, rng: np.random.Generator,
    split: str, kind: TaskKind = TaskKind.BASIC_REPLACE, extra: dict | None = None,
) -> list[Example]:
    instr = rule.render()
    out = []
    for text in _embed_batch(rule.src, count, cfg.input_len, cfg.alphabet, rng):
        meta = {"rule_id": rule_id, "is_noop": False, "split": split}
        if extra:
            meta.update(extra)
        out.append(Example(kind, instr, text, apply_replace(text, rule).output, meta))
    return out


def _manifest(generator: str, **config) -> dict:
    return {"generator": generator, "config": config, "seed": config.get("base", config).get("seed")}


def gen_basic_dataset(cfg: BasicTaskConfig) -> SplitDataset:
    train_rules, test_rules = gen_rules(cfg)
    train: list[Example] = []
    for r, rule in enumerate(train_rules):
        train += _basic_examples(rule, r, cfg.examples_per_instruction, cfg,
                                 make_rng(cfg.seed, _TRAIN, r), "train")
    test: list[Example] = []
    for j, rule in enumerate(test_rules):
        rid = len(train_rules) + j
        test += _basic_examples(rule, rid, cfg.test_examples_per_instruction, cfg,
                                make_rng(cfg.seed, _TEST, rid), "test")
    return SplitDataset(train, test, _manifest("basic", base=cfg.to_dict()))


def _noop_positions(n_noop_rule: int, count: int, rng: np.random.Generator) -> set[int]:
    return set(rng.permutation(count)[:n_noop_rule].tolist())


def _noop_examples(
    rules: Sequence[ReplaceRule], first_id: int, per_rule: int, frac: float,
    cfg: BasicTaskConfig, split: str, tag: int,
) -> list[Example]:
    total = per_rule * len(rules)
    n_noop = round_half_up(frac * total)
    out: list[Example] = []
    for j, rule in enumerate(rules):
        rid = first_id + j
        rng = make_rng(cfg.seed, tag, rid)
        # No-Ops spread evenly over rules, remainder to the lowest rule ids.
        k = n_noop // len(rules) + (1 if j < n_noop % len(rules) else 0)
        noop_at = _noop_positions(k, per_rule, make_rng(cfg.seed, _NOOP, tag, rid))
        has_op = _basic_examples(rule, rid, per_rule - k, cfg, rng, split, TaskKind.COND_REPLACE)
        it = iter(has_op)
        instr = rule.render()
        for i in range(per_rule):
            if i in noop_at:
                text = gen_input_without_pattern(rule.src, cfg.input_len, cfg.alphabet, rng)
                meta = {"rule_id": rid, "is_noop": True, "split": split}
                out.append(Example(TaskKind.COND_REPLACE, instr, text, text, meta))
            else:
                out.append(next(it))
    return out


def gen_noop_dataset(cfg: NoOpConfig) -> SplitDataset:
    """Conditional replacement with exactly ``round(frac * total)`` No-Ops per split."""
    base = cfg.base
    train_rules, test_rules = gen_rules(base)
    train = _noop_examples(train_rules, 0, base.examples_per_instruction, cfg.no_op_frac, base, "train", _TRAIN)
    test = (
        _noop_examples(test_rules, len(train_rules), base.test_examples_per_instruction,
                       cfg.no_op_frac, base, "test", _TEST)
        if test_rules else []
    )
    return SplitDataset(train, test, _manifest("noop", base=base.to_dict(), no_op_frac=cfg.no_op_frac))


# -- power law --------------------------------------------------------------

def sample_powerlaw_weights(alpha: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the density ``alpha * x**(alpha - 1)`` on (0, 1] by inverse CDF."""
    if not alpha > 0:
        raise TaskConfigError("alpha must be > 0")
    u = 1.0 - rng.random(n)  # (0, 1]
    return u ** (1.0 / alpha)


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` that sums exactly; ties go to lower index."""
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(quotas)), -(quotas - counts)))
        counts[order[:short]] += 1
    return counts


def sample_powerlaw_counts(cfg: PowerLawConfig, rng: np.random.Generator) -> list[int]:
    w = sample_powerlaw_weights(cfg.alpha, cfg.num_instructions, rng)
    return largest_remainder(w / w.sum(), cfg.total_examples).tolist()


def gen_powerlaw_dataset(cfg: PowerLawConfig, base: BasicTaskConfig) -> SplitDataset:
    """Basic replacement where rule ``r`` gets ``counts[r]`` training examples.

    ``base.examples_per_instruction`` is ignored; ``cfg`` fixes I and N.
    """
    base = _with(base, num_instructions=cfg.num_instructions)
    counts = sample_powerlaw_counts(cfg, make_rng(base.seed, _WEIGHTS))
    train_rules, test_rules = gen_rules(base)
    train: list[Example] = []
    extra = {"alpha": cfg.alpha}
    for r, (rule, n) in enumerate(zip(train_rules, counts)):
        if n:
            train += _basic_examples(rule, r, n, base, make_rng(base.seed, _TRAIN, r), "train", extra=extra)
    test: list[Example] = []
    for j, rule in enumerate(test_rules):
        rid = len(train_rules) + j
        test += _basic_examples(rule, rid, base.test_examples_per_instruction, base,
                                make_rng(base.seed, _TEST, rid), "test", extra=extra)
    manifest = _manifest("powerlaw", base=base.to_dict(), alpha=cfg.alpha,
                         num_instructions=cfg.num_instructions, total_examples=cfg.total_examples)
    manifest["rule_counts"] = counts
    return SplitDataset(train, test, manifest)


def _with(cfg: BasicTaskConfig, **changes) -> BasicTaskConfig:
    d = asdict(cfg)
    d.update(changes)
    return BasicTaskConfig(**d)


# -- constrained families -----------------------------------------------------

def _unit_no_adjacent_repeat(unit_len: int, alphabet: str, rng: np.random.Generator) -> str:
    if len(alphabet) < 2 and unit_len > 1:
        raise TaskConfigError("RepeatedChars units of length > 1 need two or more symbols")
    out = [alphabet[int(rng.integers(0, len(alphabet)))]]
    while len(out) < unit_len:
        c = alphabet[int(rng.integers(0, len(alphabet)))]
        if c != out[-1]:
            out.append(c)
    return "".join(out)


def build_family_pattern(family: SemanticFamily, unit: str) -> str:
    k = family.k
    if family.kind is Family.REPEATED:
        return "".join(c * k for c in unit)
    if family.kind is Family.PERIODIC:
        return unit * k
    rev = unit[::-1]
    return "".join(unit if i % 2 == 0 else rev for i in range(k))


def gen_constrained_pattern(
    family: SemanticFamily, unit_len: int, alphabet: str, rng: np.random.Generator
) -> tuple[str, str]:
    """Returns ``(pattern, unit)``; the unit is kept so the family law stays checkable."""
    if unit_len < 1:
        raise TaskConfigError("unit_len must be >= 1")
    if family.kind is Family.REPEATED:
        unit = _unit_no_adjacent_repeat(unit_len, alphabet, rng)
    else:
        unit = random_string(unit_len, alphabet, rng)
    return build_family_pattern(family, unit), unit


def satisfies_family(pattern: str, family: SemanticFamily, unit: str) -> bool:
    if family.kind is Family.REPEATED:
        runs = []
        i = 0
        while i < len(pattern):
            j = i
            while j < len(pattern) and pattern[j] == pattern[i]:
                j += 1
            runs.append(j - i)
            i = j
        return bool(runs) and all(r == family.k for r in runs) and pattern[:: family.k] == unit
    return pattern == build_family_pattern(family, unit)


def family_unit_len(family: SemanticFamily, pattern_len: int) -> int:
    """Longest unit whose family pattern fits in ``pattern_len``."""
    return max(1, pattern_len // family.k)


def gen_constrained_dataset(
    train_families: Sequence[tuple[SemanticFamily, int]],
    test_families: Sequence[tuple[SemanticFamily, int]],
    base: BasicTaskConfig,
    dst_mode: str = "family",
) -> SplitDataset:
    """Rules whose srcs (and, by default, dsts) follow a constrained family.

    ``(family, count)`` pairs give the number of rules per family.  The unit
    length for each family is ``base.pattern_len // k``.  Test srcs and dsts
    are never used as a src or dst in training.
    """
    if dst_mode not in ("family", "random"):
        raise TaskConfigError("dst_mode must be 'family' or 'random'")
    for _, count in list(train_families) + list(test_families):
        if count < 1:
            raise TaskConfigError("family counts must be positive")
    rng = make_rng(base.seed, _RULES)
    used: set[str] = set()

    def draw_rules(families):
        rules = []
        for fam, count in families:
            unit_len = family_unit_len(fam, base.pattern_len)
            if fam.kind is Family.REPEATED:
                capacity = len(base.alphabet) * (len(base.alphabet) - 1) ** (unit_len - 1)
            else:
                capacity = len(base.alphabet) ** unit_len
            need = count * (2 if dst_mode == "family" else 1)
            if need + len(used) > capacity:
                raise CapacityError(f"{fam.kind.value}(k={fam.k}) cannot supply {count} fresh rules")
            made = 0
            misses = 0
            while made < count:
                src, unit = gen_constrained_pattern(fam, unit_len, base.alphabet, rng)
                if dst_mode == "family":
                    dst, dst_unit = gen_constrained_pattern(fam, unit_len, base.alphabet, rng)
                else:
                    dst, dst_unit = random_string(len(src), base.alphabet, rng), None
                if src in used or dst in used or src == dst:
                    misses += 1
                    if misses > 1000 * count + 10_000:
                        raise CapacityError(f"{fam.kind.value}(k={fam.k}): too many collisions")
                    continue
                if len(src) > base.input_len:
                    raise TaskConfigError(f"pattern length {len(src)} exceeds input_len {base.input_len}")
                used.update((src, dst))
                rules.append((ReplaceRule(src, dst), fam, unit, dst_unit))
                made += 1
        return rules

    train_rules = draw_rules(train_families)
    test_rules = draw_rules(test_families)

    def emit(rules, first_id, per_rule, split, tag):
        out = []
        for j, (rule, fam, unit, dst_unit) in enumerate(rules):
            rid = first_id + j
            extra = {"family": fam.kind.value, "k": fam.k, "unit": unit}
            if dst_unit is not None:
                extra["dst_unit"] = dst_unit
            out += _basic_examples(rule, rid, per_rule, base, make_rng(base.seed, tag, rid), split, extra=extra)
        return out

    train = emit(train_rules, 0, base.examples_per_instruction, "train", _TRAIN)
    test = emit(test_rules, len(train_rules), base.test_examples_per_instruction, "test", _TEST)
    manifest = _manifest(
        "semantic",
        base=base.to_dict(),
        train_families=[[f.kind.value, f.k, c] for f, c in train_families],
        test_families=[[f.kind.value, f.k, c] for f, c in test_families],
        dst_mode=dst_mode,
    )
    return SplitDataset(train, test, manifest)
