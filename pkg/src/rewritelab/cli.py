"""``rewritelab`` command line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from . import expr_rewrite as X
from . import string_tasks as S
from .dataset_io import DatasetError, dataset_hashes, read_dataset, write_dataset
from .eval_harness import (ProtocolError, evaluate, oracle_adapter, run_external, write_prompts,
                           write_report)
from .experiments import PRESETS, generate, run_preset, write_run_record
from .markov import MarkovError, format_trace, load_program, run as markov_run

log = logging.getLogger("rewritelab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _thread_limit():
    n = os.environ.get("REWRITELAB_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


# -- gen -----------------------------------------------------------------------------

def _base_from_args(a) -> dict:
    dst = None if a.dst_len is None else [a.dst_len[0], a.dst_len[1]]
    return {"num_instructions": a.instructions, "examples_per_instruction": a.per_instruction,
            "input_len": a.input_len, "pattern_len": a.pattern_len, "dst_len_range": dst,
            "alphabet": a.alphabet, "test_instructions": a.test_instructions,
            "test_examples_per_instruction": a.test_per_instruction, "seed": a.seed}


def _family_arg(text: str) -> list:
    try:
        kind, k, count = text.split(":")
        S.Family(kind)
        return [kind, int(k), int(count)]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected FAMILY:K:COUNT with FAMILY in {[f.value for f in S.Family]}, got {text!r}") from None


def _gen_config(a) -> tuple[str, dict]:
    kind = a.kind
    if kind == "basic":
        return "basic", {"base": _base_from_args(a)}
    if kind == "noop":
        return "noop", {"base": _base_from_args(a), "no_op_frac": a.no_op_frac}
    if kind == "powerlaw":
        total = a.total if a.total is not None else a.instructions * a.per_instruction
        return "powerlaw", {"base": _base_from_args(a), "alpha": a.alpha,
                            "num_instructions": a.instructions, "total_examples": total}
    if kind == "semantic":
        train = a.train_family or [["Periodic", 3, a.instructions]]
        test = a.test_family or [["Periodic", 2, a.test_instructions]]
        return "semantic", {"base": _base_from_args(a), "train_families": train, "test_families": test,
                            "dst_mode": a.dst_mode}
    gen = X.ExprGenConfig(depth=a.depth, pattern_depth=a.pattern_depth, seed=a.seed,
                          groundings_per_rule=a.groundings_per_rule).to_dict()
    if a.specialist:
        n_spec, n_diver = a.specialist
        return "math-specialist", {"n_spec": n_spec, "n_diver": n_diver, "spec_count": a.spec_count,
                                   "diver_count": a.diver_count, "d_p_train": a.pattern_depth,
                                   "d_p_test": a.test_pattern_depth, "test_count": a.test_count, "gen": gen}
    return "math", {"num_rules": a.rules, "instances_total": a.instances, "gen": gen,
                    "test_rules": a.test_rules, "test_instances_per_rule": a.test_per_rule}


def cmd_gen(a, argv) -> int:
    generator, config = _gen_config(a)
    data = generate(generator, config)
    write_dataset(a.out, data)
    write_run_record(a.out, argv, a.seed, {"generator": generator, "config": config})
    print(f"wrote {len(data.train)} train / {len(data.test)} test examples to {a.out}")
    return 0


# -- markov ------------------------------------------------------------------------------

def cmd_markov(a, argv) -> int:
    algo = load_program(a.program)
    result = markov_run(a.input, algo, a.max_steps)
    if a.trace:
        print(format_trace(result, a.input))
    else:
        print(result.final)
    return 0 if result.status.value != "StepLimit" else 2


# -- train / eval ------------------------------------------------------------------------

def cmd_train(a, argv) -> int:
    from .tiny_transformer.train import TinyTransformer, TrainConfig, train

    data = read_dataset(a.data)
    model = TinyTransformer.for_examples(data.all_examples(), d_model=a.d_model, n_layers=a.layers,
                                         n_heads=a.heads, dropout=a.dropout, seed=a.seed)
    tc = TrainConfig(learning_rate=a.lr, epochs=a.epochs, batch_size=a.batch, seed=a.seed,
                     weight_decay=a.weight_decay, mask_prompt=not a.no_mask_prompt,
                     checkpoint_every=a.checkpoint_every, eval_max_examples=a.eval_max)
    out = Path(a.out)
    train(model, data.train, tc, eval_set=data.test or None, out_dir=out,
          on_epoch=lambda e: print(f"epoch {e.epoch} loss {e.train_loss:.4f} "
                                   f"exact_match {e.eval_exact_match}", flush=True))
    write_run_record(out, argv, a.seed, {"model": model.cfg.to_dict(), "train": vars(tc),
                                         "data": dataset_hashes(a.data)})
    return 0


def cmd_eval(a, argv) -> int:
    data = read_dataset(a.data)
    test = data.test
    seen = data.rule_ids("train") if data.train else None
    if a.write_prompts:
        write_prompts(a.write_prompts, test)
        print(f"wrote {len(test)} prompts to {a.write_prompts}")
        if not (a.model or a.external or a.oracle):
            return 0
    if a.external:
        metrics = run_external(a.external[0], a.external[1], test, strict=a.strict, train_rule_ids=seen)
    elif a.model:
        from .tiny_transformer.train import load_checkpoint

        metrics = evaluate(load_checkpoint(a.model), test, strict=a.strict, train_rule_ids=seen)
    elif a.oracle:
        metrics = evaluate(oracle_adapter(test[0].task_kind), test, strict=a.strict, train_rule_ids=seen)
    else:
        raise UsageError("one of --model, --external or --oracle is required")
    for key, n, acc in metrics.rows():
        print(f"{key}\t{n}\t{acc:.4f}")
    if a.report:
        write_report(a.report, metrics)
    return 0


def cmd_gradcheck(a, argv) -> int:
    from .tiny_transformer.gradcheck import grad_check, micro_setup

    cfg, params, ids, mask = micro_setup(seed=a.seed, n_layers=a.layers, n_heads=a.heads, d_model=a.d_model)
    report = grad_check(cfg, params, ids, mask, tolerance=a.tolerance)
    print("\n".join(report.lines()))
    name, err = report.worst
    print(f"{'PASS' if report.passed else 'FAIL'} worst {name} {err:.3e} (tolerance {a.tolerance:g})")
    return 0 if report.passed else 2


# -- stats ----------------------------------------------------------------------------------

def dataset_stats(path) -> tuple[dict, list[tuple[int, int, int, float]]]:
    """Summary dict and sorted ``(rank, rule_id, count, proportion)`` rows for train."""
    data = read_dataset(path)
    counts = Counter(ex.rule_id for ex in data.train)
    total = sum(counts.values())
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    rows = [(rank, rid, n, n / total) for rank, (rid, n) in enumerate(ordered, start=1)]
    noop = sum(1 for ex in data.train if ex.meta.get("is_noop"))
    summary = {
        "train_examples": total, "test_examples": len(data.test), "train_rules": len(counts),
        "test_rules": len(data.rule_ids("test")), "noop_train": noop,
        "max_count": ordered[0][1] if ordered else 0, "min_count": ordered[-1][1] if ordered else 0,
        "rules_below_0.1pct": sum(1 for r in rows if r[3] < 0.001),
        "generator": data.manifest.get("generator"),
    }
    return summary, rows


def cmd_stats(a, argv) -> int:
    summary, rows = dataset_stats(a.input)
    if a.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for k, v in summary.items():
            print(f"{k}: {v}")
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            fh.write("rank,rule_id,count,proportion\n")
            for rank, rid, n, p in rows:
                fh.write(f"{rank},{rid},{n},{p:.10g}\n")
    return 0


# -- preset / replay ------------------------------------------------------------------------------

def cmd_preset(a, argv) -> int:
    if a.action == "list":
        for name, p in sorted(PRESETS.items()):
            print(f"{name}\t{p['sweep_var']}\t{len(p['points'])} points")
        return 0
    if not a.name:
        raise UsageError("preset run needs a NAME")
    only = set(a.points.split(",")) if a.points else None
    rows = run_preset(a.name, a.out or f"runs/{a.name}", a.seed, argv, only)
    for row in rows:
        print("\t".join(str(v) for v in row.values()))
    return 0


def cmd_replay(a, argv) -> int:
    """Re-run the argv stored in a run.json into a fresh directory and compare hashes."""
    record = json.loads(Path(a.run_json).read_text())
    old_argv = list(record["argv"])
    out_flag = "--out"
    if out_flag not in old_argv:
        raise UsageError("recorded run has no --out directory to replay")
    i = old_argv.index(out_flag)
    new_argv = old_argv[:i + 1] + [str(a.out)] + old_argv[i + 2:]
    code = main(new_argv)
    if code:
        return code
    fresh = json.loads((Path(a.out) / "run.json").read_text())
    ok = fresh["artifacts"] == record["artifacts"]
    for name in sorted(set(record["artifacts"]) | set(fresh["artifacts"])):
        same = record["artifacts"].get(name) == fresh["artifacts"].get(name)
        print(f"{'same' if same else 'DIFF'} {name}")
    print("REPRODUCED" if ok else "MISMATCH")
    return 0 if ok else 2


# -- parser ----------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rewritelab", description="Generate rewrite-task datasets, run Markov algorithms, "
                                               "train and evaluate a small transformer.")
    p.add_argument("--version", action="version", version=f"rewritelab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("kind", choices=["basic", "noop", "powerlaw", "semantic", "math"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instructions", type=int, default=100)
    g.add_argument("--per-instruction", type=int, default=100)
    g.add_argument("--input-len", type=int, default=50)
    g.add_argument("--pattern-len", type=int, default=20)
    g.add_argument("--dst-len", type=int, nargs=2, metavar=("MIN", "MAX"))
    g.add_argument("--alphabet", default=S.DEFAULT_ALPHABET)
    g.add_argument("--test-instructions", type=int, default=100)
    g.add_argument("--test-per-instruction", type=int, default=10)
    g.add_argument("--no-op-frac", type=float, default=0.1)
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--total", type=int, help="power-law example budget N (default I x S)")
    g.add_argument("--train-family", type=_family_arg, action="append", metavar="FAMILY:K:COUNT")
    g.add_argument("--test-family", type=_family_arg, action="append", metavar="FAMILY:K:COUNT")
    g.add_argument("--dst-mode", choices=["family", "random"], default="family")
    g.add_argument("--rules", type=int, default=10)
    g.add_argument("--instances", type=int, default=1000)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--pattern-depth", type=int, default=1)
    g.add_argument("--test-rules", type=int, default=20)
    g.add_argument("--test-per-rule", type=int, default=10)
    g.add_argument("--groundings-per-rule", type=int)
    g.add_argument("--specialist", type=int, nargs=2, metavar=("N_SPEC", "N_DIVER"))
    g.add_argument("--spec-count", type=int, default=1000)
    g.add_argument("--diver-count", type=int, default=0)
    g.add_argument("--test-pattern-depth", type=int, default=2)
    g.add_argument("--test-count", type=int, default=200)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("markov", help="run a Markov algorithm")
    m.add_argument("action", choices=["run"])
    m.add_argument("--program", required=True)
    m.add_argument("--input", required=True)
    m.add_argument("--max-steps", type=int, default=10_000)
    m.add_argument("--trace", action="store_true")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_markov)

    t = sub.add_parser("train", help="train the transformer on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--d-model", type=int, default=256)
    t.add_argument("--layers", type=int, default=6)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--eval-max", type=int, default=512)
    t.add_argument("--no-mask-prompt", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model, the oracle, or an external completions file")
    e.add_argument("--data", required=True)
    src = e.add_mutually_exclusive_group()
    src.add_argument("--model", metavar="CKPT")
    src.add_argument("--external", nargs=2, metavar=("PROMPTS", "COMPLETIONS"))
    src.add_argument("--oracle", action="store_true")
    e.add_argument("--write-prompts", metavar="FILE")
    e.add_argument("--report")
    e.add_argument("--strict", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--d-model", type=int, default=8)
    gc.add_argument("--layers", type=int, default=1)
    gc.add_argument("--heads", type=int, default=1)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("stats", help="per-rule counts of a dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--json", action="store_true")
    s.add_argument("--csv", help="write sorted per-rule proportions here")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_stats)

    pr = sub.add_parser("preset", help="list or run experiment presets")
    pr.add_argument("action", choices=["list", "run"])
    pr.add_argument("name", nargs="?")
    pr.add_argument("--out")
    pr.add_argument("--points", help="comma-separated subset of sweep labels")
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_preset)

    rp = sub.add_parser("replay", help="re-run a recorded run.json and verify identical artifacts")
    rp.add_argument("run_json")
    rp.add_argument("--out", required=True)
    rp.add_argument("--seed", type=int, default=0)
    rp.set_defaults(func=cmd_replay)
    return p


VALIDATION_ERRORS = (UsageError, S.TaskConfigError, X.ExprError, MarkovError, DatasetError, ProtocolError,
                     ValueError, KeyError, FileNotFoundError)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args, argv)
    except VALIDATION_ERRORS as exc:
        print(f"rewritelab: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"rewritelab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
