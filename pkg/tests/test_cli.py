import json
import shutil
import subprocess
from importlib import resources


from rewritelab import __version__
from rewritelab.cli import dataset_stats, main
from rewritelab.dataset_io import read_dataset
from rewritelab.eval_harness import evaluate, oracle_adapter
from rewritelab.experiments import generate
from rewritelab.markov import REVERSE_CONCAT_PROGRAM, parse_program, run

REVERSE = str(resources.files("rewritelab") / "programs" / "reverse.mkv")
GEN_SMALL = ["gen", "basic", "--instructions", "10", "--per-instruction", "5", "--seed", "7",
             "--input-len", "12", "--pattern-len", "3", "--test-instructions", "3", "--test-per-instruction", "2"]


def cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_markov_reverse_prints_abbbba(capsys):
    code, out, _ = cli(capsys, "markov", "run", "--program", REVERSE, "--input", "abb")
    assert code == 0 and out.strip() == "abbbba"


def test_shipped_program_matches_builtin():
    assert parse_program(open(REVERSE).read()) == parse_program(REVERSE_CONCAT_PROGRAM)


def test_markov_trace_and_step_limit(capsys):
    code, out, _ = cli(capsys, "markov", "run", "--program", REVERSE, "--input", "abb", "--trace")
    assert code == 0 and out.strip().splitlines()[-1].endswith("abbbba")
    code, _, _ = cli(capsys, "markov", "run", "--program", REVERSE, "--input", "abb", "--max-steps", "3")
    assert code == 2


def test_gen_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert cli(capsys, *GEN_SMALL, "--out", tmp_path / name)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert {"train.jsonl", "test.jsonl", "manifest.json", "run.json"} <= set(files)
    for f in ("train.jsonl", "test.jsonl", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rec_a = json.loads((tmp_path / "a" / "run.json").read_text())
    rec_b = json.loads((tmp_path / "b" / "run.json").read_text())
    assert rec_a["artifacts"] == rec_b["artifacts"] and rec_a["config_hash"] == rec_b["config_hash"]
    assert rec_a["seed"] == 7


def test_gen_seed_changes_output(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "a")
    argv = list(GEN_SMALL)
    argv[argv.index("7")] = "8"
    cli(capsys, *argv, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "b" / "train.jsonl").read_bytes()


def test_cli_output_equals_module_ops(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "d")
    data = read_dataset(tmp_path / "d")
    again = generate(data.manifest["generator"], data.manifest["config"])
    assert again.train == data.train and again.test == data.test
    code, out, _ = cli(capsys, "eval", "--data", tmp_path / "d", "--oracle")
    direct = evaluate(oracle_adapter(data.test[0].task_kind), data.test, train_rule_ids=data.rule_ids("train"))
    assert code == 0
    assert out.strip().splitlines() == [f"{k}\t{n}\t{acc:.4f}" for k, n, acc in direct.rows()]
    assert cli(capsys, "markov", "run", "--program", REVERSE, "--input", "ab")[1].strip() == \
        run("ab", parse_program(REVERSE_CONCAT_PROGRAM)).final


def test_stats_json(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "d")
    code, out, _ = cli(capsys, "stats", "--in", tmp_path / "d", "--json", "--csv", tmp_path / "s.csv")
    summary = json.loads(out)
    assert code == 0 and summary == json.loads(json.dumps(dataset_stats(tmp_path / "d")[0]))
    assert summary["train_examples"] == 50 and summary["train_rules"] == 10
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "rank,rule_id,count,proportion" and len(lines) == 11


def test_external_eval_roundtrip(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "d")
    cli(capsys, "eval", "--data", tmp_path / "d", "--write-prompts", tmp_path / "p.txt")
    data = read_dataset(tmp_path / "d")
    (tmp_path / "c.txt").write_text("".join(ex.target_text + "\n" for ex in data.test))
    code, out, _ = cli(capsys, "eval", "--data", tmp_path / "d", "--external", tmp_path / "p.txt",
                       tmp_path / "c.txt", "--report", tmp_path / "r.csv")
    assert code == 0 and out.splitlines()[0] == f"overall\t{len(data.test)}\t1.0000"
    assert (tmp_path / "r.csv").read_text().startswith("bucket_key,count,exact_match\n")


def test_exit_codes(tmp_path, capsys):
    assert cli(capsys, "no-such-command")[0] == 1
    assert cli(capsys, "gen", "basic", "--bogus-flag")[0] == 1
    code, _, err = cli(capsys, "gen", "basic", "--pattern-len", "30", "--input-len", "10", "--out", tmp_path / "x")
    assert code == 1 and "error" in err
    assert not (tmp_path / "x" / "run.json").exists()
    assert cli(capsys, "stats", "--in", tmp_path / "missing")[0] == 1
    (tmp_path / "bad.mkv").write_text("a -> b\n")  # no alphabet header
    assert cli(capsys, "markov", "run", "--program", tmp_path / "bad.mkv", "--input", "a")[0] == 1
    (tmp_path / "loop.mkv").write_text("alphabet: a\na -> a\n")
    assert cli(capsys, "markov", "run", "--program", tmp_path / "loop.mkv", "--input", "a", "--max-steps", "5")[0] == 2


def test_runtime_error_exit_2(tmp_path, capsys, monkeypatch):
    import rewritelab.cli as C

    monkeypatch.setattr(C, "markov_run", lambda *a, **k: (_ for _ in ()).throw(RuntimeError("boom")))
    code, _, err = cli(capsys, "markov", "run", "--program", REVERSE, "--input", "a")
    assert code == 2 and "boom" in err


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_console_script_installed():
    exe = shutil.which("rewritelab")
    assert exe, "console script not on PATH"
    out = subprocess.run([exe, "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"rewritelab {__version__}"


def test_gradcheck_command(capsys):
    code, out, _ = cli(capsys, "gradcheck", "--seed", "0")
    assert code == 0 and out.strip().splitlines()[-1].startswith("PASS")


def test_replay_gen_reproduces(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "a")
    code, out, _ = cli(capsys, "replay", tmp_path / "a" / "run.json", "--out", tmp_path / "b")
    assert code == 0 and out.strip().splitlines()[-1] == "REPRODUCED"


def test_train_eval_and_replay(tmp_path, capsys):
    cli(capsys, *GEN_SMALL, "--out", tmp_path / "d")
    train_argv = ["train", "--data", tmp_path / "d", "--out", tmp_path / "m", "--d-model", "16", "--layers", "1",
                  "--heads", "2", "--epochs", "2", "--batch", "8", "--seed", "3"]
    code, out, _ = cli(capsys, *train_argv)
    assert code == 0 and "epoch 2" in out
    assert (tmp_path / "m" / "model.ckpt").exists() and (tmp_path / "m" / "run.json").exists()
    code, out, _ = cli(capsys, "eval", "--data", tmp_path / "d", "--model", tmp_path / "m" / "model.ckpt")
    assert code == 0 and out.startswith("overall\t6\t")
    code, out, _ = cli(capsys, "replay", tmp_path / "m" / "run.json", "--out", tmp_path / "m2")
    assert code == 0 and out.strip().splitlines()[-1] == "REPRODUCED"


def test_preset_list_and_smoke(tmp_path, capsys):
    code, out, _ = cli(capsys, "preset", "list")
    assert code == 0 and "phase-transition-mini" in out
    code, out, _ = cli(capsys, "preset", "run", "phase-transition-smoke", "--out", tmp_path / "p", "--seed", "1")
    assert code == 0
    lines = (tmp_path / "p" / "results.csv").read_text().splitlines()
    assert lines[0].split(",")[:2] == ["I", "train_examples"] and len(lines) == 3
    assert (tmp_path / "p" / "run.json").exists()
    code, out, _ = cli(capsys, "replay", tmp_path / "p" / "run.json", "--out", tmp_path / "p2")
    assert code == 0 and out.strip().splitlines()[-1] == "REPRODUCED"


def test_preset_unknown(capsys, tmp_path):
    assert cli(capsys, "preset", "run", "nope", "--out", tmp_path)[0] == 1
