"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL ...`` line.  Criterion 5 is
the long-running tier: set ``REWRITELAB_LONG=1`` to run the
``phase-transition-mini`` preset inside the test, or point
``REWRITELAB_PHASE_RESULTS`` at the ``results.csv`` of a finished
``rewritelab preset run phase-transition-mini`` (its ``run.json`` is checked
against the preset definition).  Without either it is skipped.
"""
import csv
import json
import os
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from generators import all_generated
from oracles import expr_oracle_mismatches, markov_oracle_mismatches, string_oracle_mismatches
from rewritelab.cli import main
from rewritelab.dataset_io import TaskKind, format_prompt
from rewritelab.dataset_io import parse_rule as parse_replace_rule
from rewritelab.eval_harness import (corrupted_adapter, evaluate, oracle_adapter, read_lines, run_external,
                                     write_lines, write_prompts)
from rewritelab.experiments import config_hash, resolve_preset, run_preset
from rewritelab.expr_rewrite import apply_abstract_rule, parse, parse_rule, render, render_pretty
from rewritelab.markov import reverse_concat_algorithm, run
from rewritelab.seeding import make_rng
from rewritelab.string_tasks import (BasicTaskConfig, NoOpConfig, PowerLawConfig, ReplaceRule, apply_replace,
                                     gen_basic_dataset, gen_noop_dataset, sample_powerlaw_counts,
                                     sample_powerlaw_weights)
from rewritelab.tiny_transformer import model as M
from rewritelab.tiny_transformer.gradcheck import grad_check, micro_setup
from rewritelab.tiny_transformer.train import TinyTransformer, TrainConfig, exact_match_rate, train


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def _timed(fn):
    t0 = time.perf_counter()
    value = fn()
    return value, time.perf_counter() - t0


# -- 1 ------------------------------------------------------------------------------------

def test_criterion_1_worked_examples(report):
    checks = []
    r, t = _timed(lambda: apply_replace("mississippi", ReplaceRule("iss", "art")))
    checks.append(("mississippi", r.output == "martissippi" and r.applied, t))
    r, t = _timed(lambda: apply_replace("canada", ReplaceRule("iss", "art")))
    checks.append(("canada", r.output == "canada" and not r.applied, t))
    r, t = _timed(lambda: apply_replace("caaba", ReplaceRule("aa", "bac")))
    checks.append(("caaba", r.output == "cbacba", t))
    r, t = _timed(lambda: run("abb", reverse_concat_algorithm()))
    checks.append(("markov abb", r.final == "abbbba", t))
    text = "((((((2*x)+5)^2)-(((3*y)-6)^2))^3)+(log((5*t))-cos((4*k))))"
    r, t = _timed(lambda: apply_abstract_rule(parse(text), parse_rule("((a^2)-(b^2))=((a+b)*(a-b))")))
    checks.append(("diff of squares", r.applied
                   and render(r.output) == "((((((2*x)+5)+((3*y)-6))*(((2*x)+5)-((3*y)-6)))^3)"
                                           "+(log((5*t))-cos((4*k))))"
                   and render_pretty(r.output) == "((2x+5+(3y−6))×(2x+5−(3y−6)))^3+(log(5t)−cos(4k))", t))
    ok = all(good and t < 1.0 for _, good, t in checks)
    report(1, ok, "; ".join(f"{name}={'ok' if good else 'WRONG'} {t * 1e3:.1f}ms" for name, good, t in checks))


# -- 2 ------------------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence(report):
    t0 = time.perf_counter()
    s_bad = string_oracle_mismatches(100_000)
    e_checked, e_bad = expr_oracle_mismatches()
    m_checked, m_bad = markov_oracle_mismatches()
    dt = time.perf_counter() - t0
    ok = s_bad == 0 and e_bad == 0 and m_bad == 0 and m_checked == 127 and dt < 60
    report(2, ok, f"string 1e5 pairs mismatches={s_bad}; expr {e_checked} pairs mismatches={e_bad}; "
                  f"markov {m_checked} strings mismatches={m_bad}; {dt:.1f}s")


# -- 3 ------------------------------------------------------------------------------------

def test_criterion_3_dataset_statistics(report):
    t0 = time.perf_counter()
    notes, ok = [], True
    for frac in (0.1, 0.3, 0.5):
        d = gen_noop_dataset(NoOpConfig(BasicTaskConfig(num_instructions=100, examples_per_instruction=100,
                                                        input_len=20, pattern_len=5, test_instructions=10,
                                                        test_examples_per_instruction=10, seed=1), frac))
        n = sum(ex.meta["is_noop"] for ex in d.train)
        ok &= len(d.train) == 10_000 and n == round(frac * 10_000)
        notes.append(f"noop@{frac}={n}")
    disjoint, spec_contract = _disjointness(all_generated())
    ok &= disjoint and spec_contract
    notes.append(f"rule-disjoint={disjoint} specialist-contract={spec_contract}")
    for alpha in (0.2, 1.0, 2.0):
        w = sample_powerlaw_weights(alpha, 100_000, make_rng(9, int(alpha * 10)))
        p = stats.kstest(w, lambda x: np.clip(x, 0, 1) ** alpha).pvalue
        total = sum(sample_powerlaw_counts(PowerLawConfig(alpha, 100_000, 1_000_000), make_rng(2)))
        ok &= p > 0.01 and total == 1_000_000
        notes.append(f"KS(a={alpha}) p={p:.3f} sum={total}")
    d = gen_noop_dataset(NoOpConfig(BasicTaskConfig(num_instructions=100, examples_per_instruction=1000,
                                                    input_len=20, pattern_len=5, test_instructions=10,
                                                    test_examples_per_instruction=10, seed=0), 0.1))
    noop = sum(ex.meta["is_noop"] for ex in d.train)
    per_rule = Counter(ex.rule_id for ex in d.train if not ex.meta["is_noop"])
    ratio = noop / max(per_rule.values())
    ok &= noop == 10_000 and set(per_rule.values()) == {900} and abs(ratio - 11.1) < 0.1
    notes.append(f"noop-ratio noop={noop} per-rule={max(per_rule.values())} ratio={ratio:.2f}")
    dt = time.perf_counter() - t0
    report(3, ok and dt < 60, "; ".join(notes) + f"; {dt:.1f}s")


def _disjointness(generated):
    """Held-out generators must not share a rule between splits; the specialist
    mixture instead tests its own R_spec rules at a deeper pattern depth."""
    disjoint = True
    for name, d in generated.items():
        if name == "math-specialist":
            continue
        if d.train[0].task_kind is TaskKind.EXPR_REWRITE:
            train_rules = {ex.instruction_text for ex in d.train}
            test_rules = {ex.instruction_text for ex in d.test}
        else:
            train_rules = {parse_replace_rule(ex.instruction_text)[0] for ex in d.train}
            test_rules = {parse_replace_rule(ex.instruction_text)[0] for ex in d.test}
        disjoint &= not (train_rules & test_rules) and not (d.rule_ids("train") & d.rule_ids("test"))
    spec = generated["math-specialist"]
    d_train = {ex.meta["d_p"] for ex in spec.train}
    d_test = {ex.meta["d_p"] for ex in spec.test}
    contract = spec.rule_ids("test") <= spec.rule_ids("train") and max(d_train) < min(d_test)
    return disjoint, contract


# -- 4 ------------------------------------------------------------------------------------

def _tiny(n_rules, per_rule, seed):
    return gen_basic_dataset(BasicTaskConfig(num_instructions=n_rules, examples_per_instruction=per_rule,
                                             input_len=8, pattern_len=2, test_instructions=2,
                                             test_examples_per_instruction=4, seed=seed))


def test_criterion_4_trainer_gates(report, tmp_path):
    t0 = time.perf_counter()
    notes = []
    g = grad_check(*micro_setup(seed=0))
    worst = max(g.max_rel_error.values())
    notes.append(f"gradcheck worst={worst:.2e}")

    cfg = M.ModelConfig(vocab_size=11, max_seq_len=10, d_model=16, n_layers=2, n_heads=2)
    params = {k: np.zeros_like(v) for k, v in M.init_params(cfg, np.random.default_rng(0)).items()}
    ids = np.random.default_rng(1).integers(0, 11, (2, 10))
    loss, _ = M.cross_entropy(M.logits_only(params, cfg, ids), ids, np.ones_like(ids, dtype=bool))
    const_err = abs(loss - np.log(11))
    notes.append(f"constant-logit |loss-lnV|={const_err:.1e}")

    params = M.init_params(cfg, np.random.default_rng(2))
    base = M.logits_only(params, cfg, ids)
    causal = True
    for t in range(9):
        alt = ids.copy()
        alt[:, t + 1:] = (alt[:, t + 1:] + 1) % 11
        causal &= np.array_equal(M.logits_only(params, cfg, alt)[:, : t + 1], base[:, : t + 1])
    notes.append(f"causal={causal}")

    d = _tiny(4, 8, seed=2)
    m = TinyTransformer.for_examples(d.train, d_model=64, n_layers=2, n_heads=2, seed=0)
    train(m, d.train, TrainConfig(epochs=200, batch_size=8, seed=0, eval_max_examples=None))
    overfit = exact_match_rate(m, d.train)
    notes.append(f"overfit 32 ex EM={overfit:.3f}")

    d = _tiny(4, 8, seed=0)
    ckpts, losses = [], []
    for run_name in ("a", "b"):
        m = TinyTransformer.for_examples(d.all_examples(), d_model=32, n_layers=2, n_heads=2, dropout=0.1, seed=4)
        res = train(m, d.train, TrainConfig(epochs=3, batch_size=8, seed=4), eval_set=d.test,
                    out_dir=tmp_path / run_name)
        ckpts.append((tmp_path / run_name / "model.ckpt").read_bytes())
        losses.append([e.train_loss for e in res.log])
    identical = ckpts[0] == ckpts[1] and losses[0] == losses[1]
    notes.append(f"bit-identical retrain={identical}")

    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and const_err <= 1e-6 and causal and overfit == 1.0 and identical and dt < 300
    report(4, ok, "; ".join(notes) + f"; {dt:.1f}s")


# -- 5 ------------------------------------------------------------------------------------

PHASE_PRESET = "phase-transition-mini"


def _phase_rows(tmp_path):
    if os.environ.get("REWRITELAB_LONG") == "1":
        rows = run_preset(PHASE_PRESET, tmp_path / "phase", seed=0)
        return {str(r["I"]): float(r["test_exact_match"]) for r in rows}, "ran preset in-test"
    path = os.environ.get("REWRITELAB_PHASE_RESULTS")
    if not path:
        return None, None
    path = Path(path)
    record = json.loads((path.parent / "run.json").read_text())
    expected = config_hash(resolve_preset(PHASE_PRESET, record["seed"]))
    if record["config_hash"] != expected:
        raise AssertionError(f"{path} was not produced by the unmodified {PHASE_PRESET} preset")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["I"]: float(r["test_exact_match"]) for r in rows}, f"from {path}"


@pytest.mark.slow
def test_criterion_5_phase_transition(report, tmp_path, capsys):
    acc, source = _phase_rows(tmp_path)
    if acc is None:
        with capsys.disabled():
            print("\nCRITERION 5: SKIP long tier (set REWRITELAB_LONG=1 or REWRITELAB_PHASE_RESULTS)")
        pytest.skip("long-running tier not requested")
    gap = acc["1000"] - acc["10"]
    curve = " ".join(f"I={k}:{v:.3f}" for k, v in acc.items())
    report(5, gap >= 0.30, f"unseen EM {curve}; gap={gap * 100:.1f} points (need >= 30); {source}")


# -- 6 ------------------------------------------------------------------------------------

def test_criterion_6_harness_closure(report, tmp_path):
    t0 = time.perf_counter()
    notes, ok = [], True
    generated = all_generated(seed=5)
    for name, d in generated.items():
        em = evaluate(oracle_adapter(d.test[0].task_kind), d.test).overall_exact_match
        ok &= em == 1.0
        notes.append(f"oracle[{name}]={em:.3f}")
    big = gen_basic_dataset(BasicTaskConfig(num_instructions=10, examples_per_instruction=1, input_len=20,
                                            pattern_len=5, test_instructions=100,
                                            test_examples_per_instruction=100, seed=6))
    oracle = oracle_adapter(big.test[0].task_kind)
    em = evaluate(corrupted_adapter(oracle, 0.1, seed=1), big.test).overall_exact_match
    ok &= len(big.test) == 10_000 and abs(em - 0.90) <= 0.01
    notes.append(f"corrupt10% N={len(big.test)} EM={em:.4f}")
    same = True
    for name, d in generated.items():
        adapter = corrupted_adapter(oracle_adapter(d.test[0].task_kind), 0.2, seed=2)
        write_prompts(tmp_path / f"{name}.p", d.test)
        write_lines(tmp_path / f"{name}.c", adapter(read_lines(tmp_path / f"{name}.p")))
        ext = run_external(tmp_path / f"{name}.p", tmp_path / f"{name}.c", d.test)
        inproc = evaluate(adapter, d.test)
        same &= ext.correct == inproc.correct and ext.buckets == inproc.buckets
        same &= read_lines(tmp_path / f"{name}.p") == [format_prompt(ex) for ex in d.test]
    ok &= same
    notes.append(f"external==in-process={same}")
    dt = time.perf_counter() - t0
    report(6, ok and dt < 60, "; ".join(notes) + f"; {dt:.1f}s")


# -- 7 ------------------------------------------------------------------------------------

def _replay(run_json, out, capsys):
    code = main(["replay", str(run_json), "--out", str(out)])
    text = capsys.readouterr().out.strip().splitlines()
    return code == 0 and text[-1] == "REPRODUCED"


def test_criterion_7_reproducibility(report, tmp_path, capsys):
    notes = []
    gen = ["gen", "noop", "--instructions", "20", "--per-instruction", "10", "--input-len", "20",
           "--pattern-len", "5", "--no-op-frac", "0.3", "--seed", "11", "--out", str(tmp_path / "data")]
    assert main(gen) == 0
    notes.append(f"dataset={_replay(tmp_path / 'data' / 'run.json', tmp_path / 'data2', capsys)}")
    math = ["gen", "math", "--rules", "5", "--instances", "50", "--seed", "3", "--out", str(tmp_path / "math")]
    assert main(math) == 0
    notes.append(f"math dataset={_replay(tmp_path / 'math' / 'run.json', tmp_path / 'math2', capsys)}")
    tr = ["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "model"), "--d-model", "16",
          "--layers", "1", "--heads", "2", "--epochs", "2", "--batch", "16", "--dropout", "0.1",
          "--checkpoint-every", "1", "--seed", "11"]
    assert main(tr) == 0
    notes.append(f"checkpoints={_replay(tmp_path / 'model' / 'run.json', tmp_path / 'model2', capsys)}")
    ckpts = sorted(p.name for p in (tmp_path / "model2").glob("*.ckpt"))
    capsys.readouterr()
    report(7, all(n.endswith("True") for n in notes), "; ".join(notes) + f"; replayed {ckpts}")
