"""Markov algorithm interpreter.

A Markov algorithm is an ordered list of rewrite rules.  At every step the
first rule (by index) whose left-hand side occurs in the current sequence is
applied at its leftmost occurrence.  The run stops when a stop rule fires
(``Terminated``), when nothing matches (``Blocked``) or when the step budget
runs out (``StepLimit``).

Sequences are plain ``str`` objects; every code point is one symbol.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

DEFAULT_MAX_STEPS = 10_000


class MarkovError(ValueError):
    """Raised for malformed rules, algorithms or program files."""


@dataclass(frozen=True)
class MarkovRule:
    lhs: str
    rhs: str
    terminal: bool = False

    def __str__(self) -> str:
        arrow = "->." if self.terminal else "->"
        return f"{self.lhs or '_'} {arrow} {self.rhs}"


@dataclass(frozen=True)
class SchemaRule:
    """A rule whose sides may mention schema variables (e.g. ``x``, ``y``).

    All occurrences of one variable within the rule bind to the same letter.
    """

    lhs: str
    rhs: str
    terminal: bool = False
    variables: tuple[str, ...] = ()

    def used_variables(self) -> list[str]:
        """Variables occurring in the lhs, in declaration order."""
        return [v for v in self.variables if v in self.lhs]


@dataclass(frozen=True)
class MarkovAlgorithm:
    base_alphabet: tuple[str, ...]
    work_symbols: tuple[str, ...]
    rules: tuple[MarkovRule, ...]

    def __post_init__(self) -> None:
        overlap = set(self.base_alphabet) & set(self.work_symbols)
        if overlap:
            raise MarkovError(f"base alphabet and work symbols overlap: {sorted(overlap)}")
        alphabet = self.alphabet
        for i, rule in enumerate(self.rules):
            for ch in rule.lhs + rule.rhs:
                if ch not in alphabet:
                    raise MarkovError(f"rule {i + 1} ({rule}) uses undeclared symbol {ch!r}")
            if rule.lhs == "" and i != len(self.rules) - 1:
                raise MarkovError(f"rule {i + 1} has an empty lhs but is not the last rule")

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(self.base_alphabet) | frozenset(self.work_symbols)


class Status(enum.Enum):
    TERMINATED = "Terminated"
    BLOCKED = "Blocked"
    STEP_LIMIT = "StepLimit"


@dataclass(frozen=True)
class TraceEntry:
    rule_index: int
    position: int
    after: str


@dataclass(frozen=True)
class StepOutcome:
    next_seq: str
    rule_index: int
    position: int
    terminal_applied: bool


@dataclass(frozen=True)
class RunResult:
    final: str
    status: Status
    trace: tuple[TraceEntry, ...] = field(default_factory=tuple)


def expand_schema(
    rules: Sequence[SchemaRule | MarkovRule], base_alphabet: Sequence[str]
) -> list[MarkovRule]:
    """Replace each schema rule by its concrete instances.

    Instances are listed lexicographically: the first declared variable
    varies slowest, letters follow ``base_alphabet`` order.  Plain rules pass
    through unchanged.
    """
    if not base_alphabet:
        raise MarkovError("base alphabet must be non-empty")
    out: list[MarkovRule] = []
    for rule in rules:
        if isinstance(rule, MarkovRule):
            out.append(rule)
            continue
        variables = rule.used_variables()
        for ch in rule.rhs:
            if ch in rule.variables and ch not in variables:
                raise MarkovError(f"schema variable {ch!r} occurs in rhs but not in lhs")
        if not variables:
            out.append(MarkovRule(rule.lhs, rule.rhs, rule.terminal))
            continue
        for letters in itertools.product(base_alphabet, repeat=len(variables)):
            table = str.maketrans(dict(zip(variables, letters)))
            out.append(MarkovRule(rule.lhs.translate(table), rule.rhs.translate(table), rule.terminal))
    return out


def step(seq: str, algo: MarkovAlgorithm) -> StepOutcome | None:
    """Apply one rewrite; ``None`` means the algorithm is blocked."""
    for i, rule in enumerate(algo.rules):
        pos = seq.find(rule.lhs)
        if pos >= 0:
            nxt = seq[:pos] + rule.rhs + seq[pos + len(rule.lhs):]
            return StepOutcome(nxt, i, pos, rule.terminal)
    return None


def run(seq: str, algo: MarkovAlgorithm, max_steps: int = DEFAULT_MAX_STEPS) -> RunResult:
    if max_steps < 1:
        raise MarkovError("max_steps must be >= 1")
    trace: list[TraceEntry] = []
    current = seq
    for _ in range(max_steps):
        outcome = step(current, algo)
        if outcome is None:
            return RunResult(current, Status.BLOCKED, tuple(trace))
        current = outcome.next_seq
        trace.append(TraceEntry(outcome.rule_index, outcome.position, current))
        if outcome.terminal_applied:
            return RunResult(current, Status.TERMINATED, tuple(trace))
    # The budget is spent; a final blocked check keeps "Blocked" accurate.
    if step(current, algo) is None:
        return RunResult(current, Status.BLOCKED, tuple(trace))
    return RunResult(current, Status.STEP_LIMIT, tuple(trace))


# -- program files -----------------------------------------------------------

def _symbols(text: str) -> tuple[str, ...]:
    items = text.replace(",", " ").split()
    for item in items:
        if len(item) != 1:
            raise MarkovError(f"symbols must be single code points, got {item!r}")
    return tuple(items)


def parse_program(text: str) -> MarkovAlgorithm:
    """Parse the line-oriented rule format.

    ::

        alphabet: a b
        work: α β
        vars: x y
        αx -> xαβx
        α ->.
        _ -> α

    ``->.`` marks a stop rule, ``_`` is the empty lhs, ``#`` starts a comment.
    """
    base: tuple[str, ...] = ()
    work: tuple[str, ...] = ()
    variables: tuple[str, ...] = ()
    raw: list[tuple[int, str, str, bool]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head, sep, rest = line.partition(":")
        if sep and head.strip() in ("alphabet", "work", "vars"):
            syms = _symbols(rest)
            if head.strip() == "alphabet":
                base = syms
            elif head.strip() == "work":
                work = syms
            else:
                variables = syms
            continue
        if "->" not in line:
            raise MarkovError(f"line {lineno}: expected 'LHS -> RHS'")
        lhs, rhs = line.split("->", 1)
        terminal = rhs.startswith(".")
        if terminal:
            rhs = rhs[1:]
        lhs, rhs = lhs.strip(), rhs.strip()
        if lhs == "_":
            lhs = ""
        if rhs == "_":
            rhs = ""
        if " " in lhs or " " in rhs:
            raise MarkovError(f"line {lineno}: whitespace inside a rule side")
        raw.append((lineno, lhs, rhs, terminal))
    if not base:
        raise MarkovError("program declares no 'alphabet:' header")
    overlap = set(variables) & (set(base) | set(work))
    if overlap:
        raise MarkovError(f"schema variables clash with alphabet symbols: {sorted(overlap)}")
    rules: list[SchemaRule | MarkovRule] = []
    for lineno, lhs, rhs, terminal in raw:
        if any(ch in variables for ch in lhs + rhs):
            rules.append(SchemaRule(lhs, rhs, terminal, variables))
        else:
            rules.append(MarkovRule(lhs, rhs, terminal))
    return MarkovAlgorithm(base, work, tuple(expand_schema(rules, base)))


def load_program(path: str | Path) -> MarkovAlgorithm:
    return parse_program(Path(path).read_text(encoding="utf-8"))


REVERSE_CONCAT_PROGRAM = """\
# s -> s + reverse(s) over {a, b}
alphabet: a b
work: α β
vars: x y
αx -> xαβx
βxy -> yβx
αβx -> xα
α ->.
_ -> α
"""


def reverse_concat_algorithm() -> MarkovAlgorithm:
    """The five-rule algorithm mapping ``s`` to ``s + s[::-1]`` over ``{a, b}``."""
    return parse_program(REVERSE_CONCAT_PROGRAM)


def format_trace(result: RunResult, start: str) -> str:
    lines = []
    prev = start
    for entry in result.trace:
        lines.append(f"{prev} -> {entry.after}  (rule {entry.rule_index + 1} at {entry.position})")
        prev = entry.after
    lines.append(f"[{result.status.value}] {result.final}")
    return "\n".join(lines)
