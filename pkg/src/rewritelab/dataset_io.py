"""Example records, prompt templating and on-disk dataset layout.

A dataset directory holds ``train.jsonl``, ``test.jsonl`` and
``manifest.json``.  Each jsonl line is one object with keys ``task_kind``,
``instruction``, ``input``, ``target`` and ``meta``.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

FORMAT_VERSION = 1
END_MARKER = "<eos>"
RULE_ARROW = "->"


class DatasetError(ValueError):
    pass


class TaskKind(str, enum.Enum):
    BASIC_REPLACE = "BasicReplace"
    COND_REPLACE = "CondReplace"
    MARKOV = "Markov"
    EXPR_REWRITE = "ExprRewrite"


@dataclass
class Example:
    task_kind: TaskKind
    instruction_text: str
    input_text: str
    target_text: str
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def rule_id(self) -> int:
        return self.meta["rule_id"]

    def to_record(self) -> dict[str, Any]:
        return {
            "task_kind": self.task_kind.value,
            "instruction": self.instruction_text,
            "input": self.input_text,
            "target": self.target_text,
            "meta": self.meta,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "Example":
        return cls(
            TaskKind(rec["task_kind"]),
            rec["instruction"],
            rec["input"],
            rec["target"],
            dict(rec["meta"]),
        )


@dataclass
class SplitDataset:
    train: list[Example]
    test: list[Example]
    manifest: dict[str, Any] = field(default_factory=dict)

    def all_examples(self) -> list[Example]:
        return self.train + self.test

    def rule_ids(self, split: str) -> set[int]:
        return {ex.rule_id for ex in getattr(self, split)}


@dataclass(frozen=True)
class PromptTemplate:
    """``fmt`` holds ``{rule}`` and ``{input}``; the prompt ends with ``cue``.

    ``PromptTemplate("", "")`` is an empty customization and means the default.
    """

    fmt: str = "Rule: {rule}\nInput: {input}\n"
    cue: str = "Output:"

    def __post_init__(self) -> None:
        if not self.fmt and not self.cue:
            return
        if "{rule}" not in self.fmt or "{input}" not in self.fmt:
            raise DatasetError("template needs {rule} and {input} placeholders")
        if not self.cue:
            raise DatasetError("template needs a non-empty output cue")


DEFAULT_TEMPLATE = PromptTemplate()


def _resolve(tpl: PromptTemplate | None) -> PromptTemplate:
    if tpl is None or (not tpl.fmt and not tpl.cue):
        return DEFAULT_TEMPLATE
    return tpl


def _check_field(name: str, value: str, tpl: PromptTemplate) -> None:
    # Newlines delimit the template lines; cue text would make the split ambiguous.
    if "\n" in value or tpl.cue in value or END_MARKER in value:
        raise DatasetError(f"{name} collides with a template delimiter: {value!r}")


def format_prompt(ex: Example, tpl: PromptTemplate | None = None) -> str:
    """Evaluation prompt; ends exactly at the output cue."""
    tpl = _resolve(tpl)
    _check_field("instruction", ex.instruction_text, tpl)
    _check_field("input", ex.input_text, tpl)
    return tpl.fmt.format(rule=ex.instruction_text, input=ex.input_text) + tpl.cue


def format_training_text(ex: Example, tpl: PromptTemplate | None = None) -> str:
    tpl = _resolve(tpl)
    _check_field("target", ex.target_text, tpl)
    return format_prompt(ex, tpl) + ex.target_text + END_MARKER


def split_at_cue(text: str, tpl: PromptTemplate | None = None) -> tuple[str, str]:
    """Inverse of :func:`format_training_text`: returns ``(prompt, target)``."""
    tpl = _resolve(tpl)
    idx = text.rfind(tpl.cue)
    if idx < 0:
        raise DatasetError("output cue not found")
    cut = idx + len(tpl.cue)
    target = text[cut:]
    if target.endswith(END_MARKER):
        target = target[: -len(END_MARKER)]
    return text[:cut], target


def render_rule(src: str, dst: str) -> str:
    return f"{src}{RULE_ARROW}{dst}"


def parse_rule(text: str) -> tuple[str, str]:
    src, sep, dst = text.partition(RULE_ARROW)
    if not sep:
        raise DatasetError(f"not a rule: {text!r}")
    return src, dst


# -- serialization ----------------------------------------------------------

def _dump_line(ex: Example) -> str:
    return json.dumps(ex.to_record(), ensure_ascii=False, separators=(",", ":"))


def write_examples(path: Path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(_dump_line(ex))
            fh.write("\n")


def read_examples(path: Path) -> list[Example]:
    out: list[Example] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                out.append(Example.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}: line {lineno}: malformed record ({exc})") from exc
    return out


def write_dataset(path: str | Path, split: SplitDataset) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_examples(root / "train.jsonl", split.train)
    write_examples(root / "test.jsonl", split.test)
    manifest = {"format_version": FORMAT_VERSION, **split.manifest}
    manifest["counts"] = {"train": len(split.train), "test": len(split.test)}
    with open(root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | Path) -> dict[str, Any]:
    root = Path(path)
    with open(root / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported format_version {manifest.get('format_version')!r}")
    return manifest


def read_dataset(path: str | Path) -> SplitDataset:
    root = Path(path)
    manifest = read_manifest(root)
    manifest.pop("format_version")
    manifest.pop("counts", None)
    return SplitDataset(read_examples(root / "train.jsonl"), read_examples(root / "test.jsonl"), manifest)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_hashes(path: str | Path) -> dict[str, str]:
    root = Path(path)
    return {name: file_sha256(root / name) for name in ("train.jsonl", "test.jsonl", "manifest.json")}


# -- splitting --------------------------------------------------------------

def split_by_rule(examples: Sequence[Example], test_rule_ids: Iterable[int]) -> SplitDataset:
    """Move every example of ``test_rule_ids`` to the test split."""
    wanted = set(test_rule_ids)
    present = {ex.rule_id for ex in examples}
    missing = wanted - present
    if missing:
        raise DatasetError(f"test rule ids not present in examples: {sorted(missing)[:10]}")
    train: list[Example] = []
    test: list[Example] = []
    for ex in examples:
        is_test = ex.rule_id in wanted
        ex.meta["split"] = "test" if is_test else "train"
        (test if is_test else train).append(ex)
    return SplitDataset(train, test)


def holdout_rules(examples: Sequence[Example], frac: float, rng) -> SplitDataset:
    """Random rule-level holdout of ``round(frac * #rules)`` rules."""
    ids = sorted({ex.rule_id for ex in examples})
    n_test = int(round(frac * len(ids)))
    chosen = rng.choice(len(ids), size=n_test, replace=False) if n_test else []
    return split_by_rule(examples, [ids[i] for i in chosen])
