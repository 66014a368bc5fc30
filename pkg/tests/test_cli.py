import csv
import json

import pytest

from memoroid.cli import main

TINY = """\
task: repeat_previous
k: 1
episode_length: 6
model: {model}
batching: {batching}
{extra}batch_size: 32
hidden: 8
memory: 4
epochs_random: 5
epochs_train: {epochs}
eval_interval: 10
eval_episodes: 4
seeds: [0, 1]
output_dir: {out}
"""


def _config(path, out, model="lru", batching="tbb", extra="", epochs=20):
    path.write_text(TINY.format(model=model, batching=batching, extra=extra, epochs=epochs, out=out))
    return path


def test_verify_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "suites passed" in out


def test_verify_fault_injection_fails_associativity(capsys, tmp_path):
    assert main(["verify", "--inject-fault", "--filter", "scan", "--report", str(tmp_path / "r.json")]) == 1
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["schema"] == "memoroid.verify/1"
    status = {s["name"]: s["passed"] for s in report["suites"]}
    assert status["scan.associativity"] is False
    assert all(name.startswith("scan.") for name in status)


def test_verify_filter_and_unknown_filter(capsys):
    assert main(["verify", "--filter", "returns"]) == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("returns.")]
    assert len(lines) == 3
    assert main(["verify", "--filter", "no-such-suite"]) == 2


def test_bench_zero_trials(capsys):
    assert main(["bench-returns", "--max-len", "100", "--trials", "0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["schema"] == "memoroid.bench-returns/1" and report["results"] == []


def test_bench_outputs_identical_across_workers(tmp_path):
    args = ["bench-returns", "--max-len", "500", "--trials", "2", "--timesteps", "5000"]
    assert main(args + ["--workers", "1", "--output", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--workers", "8", "--output", str(tmp_path / "b.json")]) == 0
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    assert [r["digest"]["scan_w1"] for r in a["results"]] == [r["digest"]["scan_w8"] for r in b["results"]]
    assert all(err <= 1e-6 for r in a["results"] for err in r["max_rel_err"].values())


def test_bench_worker_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("MEMOROID_WORKERS", "3")
    assert main(["bench-returns", "--max-len", "50", "--trials", "1", "--output", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["config"]["workers"] == [3]


def test_bench_rejects_bad_arguments():
    assert main(["bench-returns", "--max-len", "0", "--trials", "1"]) == 2
    with pytest.raises(SystemExit) as err:
        main(["bench-returns", "--trials", "1"])
    assert err.value.code == 2


def test_train_same_seed_is_bitwise_identical(tmp_path):
    cfg = _config(tmp_path / "c.yaml", tmp_path / "unused")
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "7", "--output-dir", str(tmp_path / run)]) == 0
    # checkpoint.bin.json records output_dir, which differs between the two runs
    for name in ("metrics.jsonl", "summary.csv", "checkpoint.bin"):
        assert (tmp_path / "a/seed_7" / name).read_bytes() == (tmp_path / "b/seed_7" / name).read_bytes()
    assert not (tmp_path / "a/seed_0").exists()


def test_train_tbb_and_sbb_metric_files(tmp_path):
    tbb = _config(tmp_path / "tbb.yaml", tmp_path / "tbb")
    sbb = _config(tmp_path / "sbb.yaml", tmp_path / "sbb", batching="sbb", extra="segment_length: 1\n")
    assert main(["train", "--config", str(tbb)]) == 0
    assert main(["train", "--config", str(sbb)]) == 0
    for root in ("tbb", "sbb"):
        for seed in (0, 1):
            lines = (tmp_path / root / f"seed_{seed}" / "metrics.jsonl").read_text().splitlines()
            assert [json.loads(ln)["epoch"] for ln in lines] == [10, 20]


def test_train_config_error_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("task: repeat_previous\nbatching: sbb\nsegment_length: 0\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "segment_length" in capsys.readouterr().err
    bad.write_text("model: [unclosed\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_sensitivity_on_untrained_checkpoint(tmp_path, capsys):
    cfg = _config(tmp_path / "c.yaml", tmp_path / "run", model="ffm", epochs=0)
    assert main(["train", "--config", str(cfg), "--seed", "0"]) == 0
    capsys.readouterr()
    ckpt = tmp_path / "run/seed_0/checkpoint.bin"
    out = tmp_path / "sens.csv"
    assert main(["sensitivity", "--checkpoint", str(ckpt), "--episodes", "3", "--rml", "1",
                 "--output", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["schema"] == "memoroid.sensitivity/1"
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3 * 6
    for e in range(3):
        cum = [float(r["cumulative"]) for r in rows if r["episode"] == str(e)]
        assert all(a <= b for a, b in zip(cum, cum[1:])) and cum[-1] == 1.0
        assert [r["rml_marker"] for r in rows if r["episode"] == str(e)].count("1") == 1


def test_sensitivity_is_deterministic(tmp_path):
    cfg = _config(tmp_path / "c.yaml", tmp_path / "run", epochs=0)
    main(["train", "--config", str(cfg), "--seed", "0"])
    ckpt = str(tmp_path / "run/seed_0/checkpoint.bin")
    for name in ("a.csv", "b.csv"):
        main(["sensitivity", "--checkpoint", ckpt, "--episodes", "2", "--rml", "1", "--seed", "7",
              "--output", str(tmp_path / name)])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sensitivity_missing_checkpoint(tmp_path):
    assert main(["sensitivity", "--checkpoint", str(tmp_path / "none.bin"), "--episodes", "1", "--rml", "1"]) == 2
