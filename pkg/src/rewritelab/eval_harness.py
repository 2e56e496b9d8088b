"""Exact-match scoring with per-bucket breakdowns.

Anything that maps a list of prompts to an equally long list of completions
can be scored: an in-process model, the ground-truth oracle, or a pair of
text files produced by an external system.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import expr_rewrite as X
from .dataset_io import (END_MARKER, Example, PromptTemplate, TaskKind, format_prompt, parse_rule)
from .string_tasks import ReplaceRule, apply_replace

log = logging.getLogger(__name__)

ModelAdapter = Callable[[Sequence[str]], Sequence[str]]
BUCKET_KEYS = ("seen", "is_noop", "family", "k", "d_p")


class ProtocolError(ValueError):
    pass


def normalize(text: str, strict: bool = False) -> str:
    if strict:
        return text
    text = text.strip()
    if text.endswith(END_MARKER):
        text = text[: -len(END_MARKER)].rstrip()
    return text


def exact_match(prediction: str, target: str, strict: bool = False) -> bool:
    return normalize(prediction, strict) == normalize(target, strict)


@dataclass
class Metrics:
    overall_exact_match: float
    count: int
    buckets: dict[str, tuple[int, float]] = field(default_factory=dict)
    correct: list[bool] = field(default_factory=list, repr=False)

    def rows(self) -> list[tuple[str, int, float]]:
        return [("overall", self.count, self.overall_exact_match)] + [
            (key, n, acc) for key, (n, acc) in self.buckets.items()
        ]


def write_report(path: str | Path, metrics: Metrics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket_key", "count", "exact_match"])
        for key, n, acc in metrics.rows():
            w.writerow([key, n, f"{acc:.6f}"])


def _bucket_labels(ex: Example, train_rule_ids: set[int] | None) -> list[str]:
    labels = []
    if train_rule_ids is not None:
        labels.append(f"seen={'seen' if ex.meta.get('rule_id') in train_rule_ids else 'unseen'}")
    for key in BUCKET_KEYS[1:]:
        if ex.meta.get(key) is not None:
            labels.append(f"{key}={ex.meta[key]}")
    return labels


def score(examples: Sequence[Example], completions: Sequence[str], strict: bool = False,
          train_rule_ids: set[int] | None = None) -> Metrics:
    """Score aligned completions.  Buckets are keyed ``"<field>=<value>"``.

    Every bucket family partitions the examples that carry the field, so each
    family's counts sum to the number of such examples.
    """
    if len(completions) != len(examples):
        raise ProtocolError(f"adapter returned {len(completions)} completions for {len(examples)} prompts")
    if not examples:
        raise ProtocolError("test set is empty")
    correct = [exact_match(c, ex.target_text, strict) for c, ex in zip(completions, examples)]
    totals: Counter[str] = Counter()
    hits: Counter[str] = Counter()
    for ok, ex in zip(correct, examples):
        for label in _bucket_labels(ex, train_rule_ids):
            totals[label] += 1
            hits[label] += ok
    buckets = {label: (totals[label], hits[label] / totals[label]) for label in sorted(totals)}
    return Metrics(sum(correct) / len(correct), len(correct), buckets, correct)


def evaluate(adapter: ModelAdapter, test_set: Sequence[Example], template: PromptTemplate | None = None,
             strict: bool = False, train_rule_ids: set[int] | None = None) -> Metrics:
    prompts = [format_prompt(ex, template) for ex in test_set]
    completions = list(adapter(prompts))
    return score(test_set, completions, strict, train_rule_ids)


# -- oracle adapters ---------------------------------------------------------------

def solve(ex: Example) -> str:
    """Ground-truth completion computed from the instruction and input alone."""
    if ex.task_kind in (TaskKind.BASIC_REPLACE, TaskKind.COND_REPLACE):
        src, dst = parse_rule(ex.instruction_text)
        return apply_replace(ex.input_text, ReplaceRule(src, dst)).output
    if ex.task_kind is TaskKind.EXPR_REWRITE:
        rule = X.parse_rule(ex.instruction_text)
        return X.render(X.apply_abstract_rule(X.parse(ex.input_text), rule).output)
    if ex.task_kind is TaskKind.MARKOV:
        from .markov import parse_program, run

        return run(ex.input_text, parse_program(ex.instruction_text.replace(";", "\n"))).final
    raise ValueError(f"no oracle for {ex.task_kind}")


def _parse_prompt(prompt: str, template: PromptTemplate | None) -> tuple[str, str]:
    tpl = template or PromptTemplate()
    head, tail = tpl.fmt.split("{rule}")
    mid, end = tail.split("{input}")
    body = prompt[len(head):]
    if not prompt.startswith(head) or not body.endswith(end + tpl.cue):
        raise ProtocolError(f"prompt does not follow the template: {prompt!r}")
    body = body[: len(body) - len(end + tpl.cue)]
    rule, sep, inp = body.partition(mid)
    if not sep:
        raise ProtocolError(f"prompt does not follow the template: {prompt!r}")
    return rule, inp


def oracle_adapter(kind: TaskKind, template: PromptTemplate | None = None) -> ModelAdapter:
    """Adapter that re-derives the answer from the prompt text only."""

    def run(prompts: Sequence[str]) -> list[str]:
        out = []
        for p in prompts:
            rule, inp = _parse_prompt(p, template)
            out.append(solve(Example(kind, rule, inp, "")))
        return out

    return run


def corrupted_adapter(inner: ModelAdapter, frac: float, seed: int = 0) -> ModelAdapter:
    """Flip one character in exactly ``round(frac * n)`` completions."""

    def run(prompts: Sequence[str]) -> list[str]:
        outs = list(inner(prompts))
        rng = np.random.default_rng(seed)
        n_bad = int(np.floor(frac * len(outs) + 0.5))
        for i in rng.choice(len(outs), size=n_bad, replace=False):
            s = outs[int(i)]
            if not s:
                outs[int(i)] = "?"
                continue
            j = int(rng.integers(len(s)))
            outs[int(i)] = s[:j] + ("#" if s[j] != "#" else "%") + s[j + 1:]
        return outs

    return run


# -- external file protocol ---------------------------------------------------------

_ESCAPES = {"\\": "\\", "n": "\n", "r": "\r"}


def escape_line(text: str) -> str:
    """Escape backslash, newline, CR and other control characters (tab is kept)."""
    out = []
    for ch in text:
        if ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ord(ch) < 32 and ch != "\t":
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    return "".join(out)


def unescape_line(text: str, lineno: int) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text):
                raise ProtocolError(f"line {lineno}: dangling escape")
            nxt = text[i + 1]
            if nxt == "x":
                code = text[i + 2:i + 4]
                if len(code) != 2 or any(c not in "0123456789abcdefABCDEF" for c in code):
                    raise ProtocolError(f"line {lineno}: malformed \\x escape")
                out.append(chr(int(code, 16)))
                i += 4
                continue
            if nxt not in _ESCAPES:
                raise ProtocolError(f"line {lineno}: unknown escape \\{nxt}")
            out.append(_ESCAPES[nxt])
            i += 2
            continue
        if ord(ch) < 32 and ch != "\t":
            raise ProtocolError(f"line {lineno}: unescaped control character {ch!r}")
        out.append(ch)
        i += 1
    return "".join(out)


def write_prompts(path: str | Path, test_set: Sequence[Example], template: PromptTemplate | None = None) -> None:
    write_lines(path, (format_prompt(ex, template) for ex in test_set))


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(escape_line(line))
            fh.write("\n")


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        raw = fh.read()
    if raw and not raw.endswith("\n"):
        raise ProtocolError(f"{path}: last line is not newline-terminated")
    lines = raw.split("\n")[:-1] if raw else []
    return [unescape_line(line, i + 1) for i, line in enumerate(lines)]


def run_external(prompts_path: str | Path, completions_path: str | Path, test_set: Sequence[Example],
                 template: PromptTemplate | None = None, strict: bool = False,
                 train_rule_ids: set[int] | None = None) -> Metrics:
    prompts = read_lines(prompts_path)
    completions = read_lines(completions_path)
    if len(prompts) != len(test_set):
        raise ProtocolError(f"prompts file has {len(prompts)} lines, test set has {len(test_set)}")
    if len(completions) != len(prompts):
        raise ProtocolError(
            f"completions file has {len(completions)} lines for {len(prompts)} prompts "
            f"(first missing at line {min(len(completions), len(prompts)) + 1})"
        )
    for i, (p, ex) in enumerate(zip(prompts, test_set), start=1):
        if p != format_prompt(ex, template):
            raise ProtocolError(f"prompt line {i} does not match test example {i}")
    metrics = score(test_set, completions, strict, train_rule_ids)
    _order_check(prompts, completions, metrics)
    return metrics


def _order_check(prompts: Sequence[str], completions: Sequence[str], metrics: Metrics) -> None:
    """Warn when identical prompts received different completions.

    A deterministic system answers duplicate prompts identically, so a
    disagreement (or near-zero accuracy) hints that the file order was lost.
    """
    by_prompt: dict[str, str] = {}
    disagreements = 0
    for p, c in zip(prompts, completions):
        if p in by_prompt and by_prompt[p] != c:
            disagreements += 1
        by_prompt.setdefault(p, c)
    if disagreements:
        log.warning("%d duplicate prompts received different completions; completions may be out of order",
                    disagreements)
    if metrics.count >= 20 and metrics.overall_exact_match < 0.05:
        log.warning("exact match %.3f is near zero; check that completions follow prompt order",
                    metrics.overall_exact_match)
