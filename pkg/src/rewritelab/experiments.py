"""Generator registry, experiment presets and provenance records."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any

from . import expr_rewrite as X
from . import string_tasks as S
from .dataset_io import SplitDataset, file_sha256, write_dataset
from .eval_harness import evaluate, write_report
from .tiny_transformer.train import TinyTransformer, TrainConfig, train

log = logging.getLogger(__name__)


def basic_config(d: dict) -> S.BasicTaskConfig:
    d = dict(d)
    if d.get("dst_len_range") is not None:
        d["dst_len_range"] = tuple(d["dst_len_range"])
    return S.BasicTaskConfig(**d)


def _families(items) -> list[tuple[S.SemanticFamily, int]]:
    return [(S.SemanticFamily(S.Family(kind), int(k)), int(count)) for kind, k, count in items]


def generate(generator: str, config: dict[str, Any]) -> SplitDataset:
    """Build a dataset from a generator name and its manifest ``config`` block."""
    if generator == "basic":
        return S.gen_basic_dataset(basic_config(config["base"]))
    if generator == "noop":
        return S.gen_noop_dataset(S.NoOpConfig(basic_config(config["base"]), config["no_op_frac"]))
    if generator == "powerlaw":
        cfg = S.PowerLawConfig(config["alpha"], config["num_instructions"], config["total_examples"])
        return S.gen_powerlaw_dataset(cfg, basic_config(config["base"]))
    if generator == "semantic":
        return S.gen_constrained_dataset(_families(config["train_families"]), _families(config["test_families"]),
                                         basic_config(config["base"]), config.get("dst_mode", "family"))
    if generator == "math":
        return X.gen_generalist_dataset(config["num_rules"], config["instances_total"],
                                        X.ExprGenConfig.from_dict(config["gen"]), config["test_rules"],
                                        config["test_instances_per_rule"])
    if generator == "math-specialist":
        gen = X.ExprGenConfig.from_dict(config["gen"])
        if "spec_rules" in config:
            mix = X.mixture_from_manifest(config)
        else:
            mix = X.make_mixture(config["n_spec"], config["n_diver"], config["spec_count"], config["diver_count"],
                                 config["d_p_train"], config["d_p_test"], gen, config.get("test_count", 200))
        return X.gen_specialist_dataset(mix, gen)
    raise ValueError(f"unknown generator {generator!r}")


def regenerate(manifest: dict[str, Any]) -> SplitDataset:
    return generate(manifest["generator"], manifest["config"])


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, ensure_ascii=False, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_run_record(out_dir: str | Path, argv: list[str], seed: int | None, config: Any,
                     artifacts: dict[str, str] | None = None) -> Path:
    """Write ``run.json``; its absence marks an interrupted or failed run."""
    out = Path(out_dir)
    if artifacts is None:
        artifacts = {
            str(p.relative_to(out)): file_sha256(p)
            for p in sorted(out.rglob("*")) if p.is_file() and p.name != "run.json"
        }
    from . import __version__

    record = {
        "argv": list(argv),
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "artifacts": artifacts,
        "version": __version__,
    }
    path = out / "run.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


# -- presets ------------------------------------------------------------------------
#
# A preset is pure data: a list of sweep points (each a generator + config),
# a model config, a train config and the name of the swept variable.  The mini
# presets are desk-scale analogues; the *-full presets use the original large-scale sizes
# (10^6 examples, 256-dim/6-layer/4-head model, 50 epochs) and are not meant for CPU.

def _basic(I, S_, input_len, pattern_len, test_rules=100, test_per=5, seed=0, **extra):
    return {"base": {"num_instructions": I, "examples_per_instruction": S_, "input_len": input_len,
                     "pattern_len": pattern_len, "dst_len_range": None, "alphabet": S.DEFAULT_ALPHABET,
                     "test_instructions": test_rules, "test_examples_per_instruction": test_per,
                     "seed": seed}, **extra}


def _phase_points(budget, Is, input_len, pattern_len, test_rules=100, test_per=5):
    return [{"label": I, "generator": "basic",
             "config": _basic(I, budget // I, input_len, pattern_len, test_rules, test_per)} for I in Is]


_MINI_MODEL = {"d_model": 64, "n_layers": 2, "n_heads": 2, "dropout": 0.0}
_FULL_MODEL = {"d_model": 256, "n_layers": 6, "n_heads": 4, "dropout": 0.0}
_MINI_TRAIN = {"epochs": 20, "batch_size": 64, "learning_rate": 1e-3, "eval_max_examples": 500}
_FULL_TRAIN = {"epochs": 50, "batch_size": 64, "learning_rate": 1e-3, "eval_max_examples": 1000}


def _math_gen(depth=2, pattern_depth=1, seed=0) -> dict:
    return X.ExprGenConfig(depth=depth, pattern_depth=pattern_depth, seed=seed).to_dict()


PRESETS: dict[str, dict[str, Any]] = {
    "phase-transition-mini": {
        "sweep_var": "I",
        "points": _phase_points(100_000, [10, 100, 1000], 20, 5),
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "phase-transition-smoke": {
        "sweep_var": "I",
        "points": _phase_points(64, [2, 8], 8, 2, test_rules=4, test_per=2),
        "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "dropout": 0.0},
        "train": {"epochs": 1, "batch_size": 16, "learning_rate": 1e-3, "eval_max_examples": 8},
    },
    "noop-mini": {
        "sweep_var": "I,no_op_frac",
        "points": [
            {"label": f"{I},{f}", "generator": "noop", "config": _basic(I, 100_000 // I, 20, 5, no_op_frac=f)}
            for I in (10, 100, 1000) for f in (0.1, 0.3, 0.5)
        ],
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "powerlaw-mini": {
        "sweep_var": "I,alpha",
        "points": [
            {"label": f"{I},{a}", "generator": "powerlaw",
             "config": {**_basic(I, 1, 20, 5), "alpha": a, "num_instructions": I, "total_examples": 100_000}}
            for I in (100, 1000) for a in (0.1, 0.2, 0.5, 1.0)
        ],
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "semantic-mini": {
        "sweep_var": "family,k_train",
        "points": [
            {"label": f"{fam},{k}", "generator": "semantic",
             "config": {**_basic(1, 100, 40, 12, test_per=5),
                        "train_families": [[fam, k, 1000]], "test_families": [[fam, 2, 100]],
                        "dst_mode": "family"}}
            for fam in ("RepeatedChars", "Periodic", "Mirrored") for k in (3, 4)
        ],
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "math-generalist-mini": {
        "sweep_var": "num_rules",
        "points": [
            {"label": n, "generator": "math",
             "config": {"num_rules": n, "instances_total": 20_000, "gen": _math_gen(),
                        "test_rules": 50, "test_instances_per_rule": 10}}
            for n in (5, 50, 500)
        ],
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "math-specialist-mini": {
        "sweep_var": "n_diver:n_spec",
        "points": [
            {"label": f"{nd}:{5}", "generator": "math-specialist",
             "config": {"n_spec": 5, "n_diver": nd, "spec_count": 10_000 - dc, "diver_count": dc,
                        "d_p_train": 1, "d_p_test": 2, "test_count": 500, "gen": _math_gen()}}
            for nd, dc in ((0, 0), (20, 2_000), (100, 5_000), (100, 8_000))
        ],
        "model": _MINI_MODEL, "train": _MINI_TRAIN,
    },
    "phase-transition-full": {
        "sweep_var": "I",
        "points": _phase_points(1_000_000, [100, 300, 500, 1000, 2000, 5000], 50, 20, 1000, 100),
        "model": _FULL_MODEL, "train": _FULL_TRAIN,
    },
    "phase-transition-full-100": {
        "sweep_var": "I",
        "points": _phase_points(1_000_000, [100, 300, 500, 1000, 2000, 5000], 100, 40, 1000, 100),
        "model": _FULL_MODEL, "train": _FULL_TRAIN,
    },
    "phase-transition-full-200": {
        "sweep_var": "I",
        "points": _phase_points(1_000_000, [100, 300, 500, 1000, 2000, 5000], 200, 50, 1000, 100),
        "model": _FULL_MODEL, "train": _FULL_TRAIN,
    },
    "semantic-full": {
        "sweep_var": "family,k_train",
        "points": [
            {"label": f"{fam},{k}", "generator": "semantic",
             "config": {**_basic(1, 100, 500, 60, test_per=10),
                        "train_families": [[fam, k, 10_000]], "test_families": [[fam, 2, 1000]],
                        "dst_mode": "family"}}
            for fam in ("RepeatedChars", "Periodic", "Mirrored") for k in (3, 4, 5)
        ],
        "model": _FULL_MODEL, "train": _FULL_TRAIN,
    },
}


def _seeded(config: dict, seed: int) -> dict:
    config = copy.deepcopy(config)
    if "base" in config:
        config["base"]["seed"] = seed
    if "gen" in config:
        config["gen"]["seed"] = seed
    return config


def resolve_preset(name: str, seed: int = 0) -> dict[str, Any]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    preset = copy.deepcopy(PRESETS[name])
    preset["name"] = name
    preset["seed"] = seed
    for point in preset["points"]:
        point["config"] = _seeded(point["config"], seed)
    preset["train"] = {**preset["train"], "seed": seed}
    return preset


def run_preset(name: str, out_dir: str | Path, seed: int = 0, argv: list[str] | None = None,
               point_filter: set[str] | None = None) -> list[dict[str, Any]]:
    """Generate, train and evaluate every sweep point; writes ``results.csv``."""
    preset = resolve_preset(name, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for point in preset["points"]:
        label = str(point["label"])
        if point_filter and label not in point_filter:
            continue
        point_dir = out / f"point_{label.replace(',', '_').replace(':', '-')}"
        row = run_point(point, preset["model"], preset["train"], point_dir)
        row = {preset["sweep_var"]: label, **row}
        rows.append(row)
        log.info("%s %s: unseen exact match %.4f", name, label, row["test_exact_match"])
        with open(out / "results.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    write_run_record(out, argv or ["preset", "run", name, "--seed", str(seed)], seed, preset)
    return rows


def run_point(point: dict, model_cfg: dict, train_cfg: dict, out_dir: Path) -> dict[str, Any]:
    data = generate(point["generator"], point["config"])
    write_dataset(out_dir / "data", data)
    model = TinyTransformer.for_examples(data.all_examples(), seed=train_cfg.get("seed", 0), **model_cfg)
    tc = TrainConfig(**train_cfg)
    result = train(model, data.train, tc, eval_set=data.test, out_dir=out_dir / "model")
    metrics = evaluate(model, data.test, train_rule_ids=data.rule_ids("train"))
    write_report(out_dir / "report.csv", metrics)
    return {
        "train_examples": len(data.train),
        "test_examples": len(data.test),
        "final_train_loss": result.log[-1].train_loss,
        "test_exact_match": metrics.overall_exact_match,
    }
