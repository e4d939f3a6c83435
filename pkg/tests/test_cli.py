import json

import numpy as np
import pytest

from fatclip.cli import (
    SWEEP_HEADER,
    TRAJECTORY_HEADER,
    cmd_estimate_alpha,
    cmd_run,
    cmd_sweep,
    load_manifest,
    main,
)
from fatclip.config import parse_config


def _files(d):
    return sorted(p.name for p in d.iterdir())


def test_run_writes_documented_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--preset", "cauchy-convex", "--trials", "3", "--out", str(out),
                 "--set", "output.client_norms=true"]) == 0
    names = _files(out)
    assert [n for n in names if n.startswith("trajectory")] == [f"trajectory_trial{k:03d}.csv" for k in range(3)]
    assert "summary.jsonl" in names and len([n for n in names if n.startswith("client_norms")]) == 3
    for k in range(3):
        lines = (out / f"trajectory_trial{k:03d}.csv").read_text().splitlines()
        assert lines[0] == ",".join(TRAJECTORY_HEADER)
        assert len(lines) - 1 == 300
    summaries = [json.loads(l) for l in (out / "summary.jsonl").read_text().splitlines()]
    assert [s["trial"] for s in summaries] == [0, 1, 2]
    assert all("wall_clock_s" in s and s["weighted_output_loss"] is not None for s in summaries)
    norms = (out / "client_norms_trial000.csv").read_text().splitlines()
    assert norms[0] == "round,client,delta_norm,transmitted_norm" and len(norms) == 1 + 300 * 5


def test_run_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--preset", "cauchy-convex", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "trajectory_trial000.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory_trial000.csv").read_bytes()

    def strip(path):
        rows = [json.loads(l) for l in path.read_text().splitlines()]
        for r in rows:
            r.pop("wall_clock_s")
        return rows

    assert strip(tmp_path / "a" / "summary.jsonl") == strip(tmp_path / "b" / "summary.jsonl")


def test_gfedavg_fails_in_most_seeds(tmp_path):
    man = load_manifest(None, "cauchy-convex", ["algorithm=gfedavg", "output.trajectory=false"],
                        trials=20, out=str(tmp_path))
    summaries = cmd_run(man)
    assert sum(s["failed"] for s in summaries) > 10


def test_failures_still_exit_zero(tmp_path):
    assert main(["run", "--preset", "cauchy-convex", "--set", "algorithm=gfedavg", "--out", str(tmp_path)]) == 0


def test_config_file_and_errors(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset = cauchy-convex\nrounds = 20\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len((tmp_path / "o" / "trajectory_trial000.csv").read_text().splitlines()) == 21
    bad = tmp_path / "bad.cfg"
    bad.write_text("preset = cauchy-convex\nrounds = -1\n")
    assert main(["run", str(bad)]) == 2
    assert "rounds" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 3
    assert main(["run"]) == 2


def test_io_error_on_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--preset", "cauchy-convex", "--set", "rounds=2", "--out", str(blocker / "sub")]) == 3


def test_sweep_with_injected_power_law(tmp_path):
    man = parse_config(f"preset = cauchy-convex\noutput.dir = {tmp_path}\n")
    calls = []

    def runner(m):
        calls.append(m.config.T)
        return [(5.0 * m.config.T ** -0.75, False)] * 3

    rows = cmd_sweep(man, "T", [400, 100, 1600], runner)
    assert calls == [400, 100, 1600]
    assert [r["value"] for r in rows[:3]] == [400, 100, 1600]
    assert rows[-1]["kind"] == "fit" and rows[-1]["slope"] == pytest.approx(-0.75, abs=1e-12)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER) and len(lines) == 5


def test_sweep_axes_update_config(tmp_path):
    man = parse_config(f"preset = cauchy-convex\nparticipants = 3\noutput.dir = {tmp_path}\n")
    seen = []

    def runner(m):
        seen.append((m.config.m, m.config.n, m.config.K, m.config.noise, m.config.lambda_seq[0]))
        return [(1.0, True), (2.0, False)]

    rows = cmd_sweep(man, "m", [2, 5, 8], runner)
    assert [(s[0], s[1]) for s in seen] == [(2, 2), (5, 3), (8, 3)]
    assert rows[0]["median_error"] == 1.5 and rows[0]["success_rate"] == 0.5
    seen.clear()
    rows = cmd_sweep(man, "alpha", [0.5, 1.0, 1.5], runner)
    assert [s[3].alpha for s in seen] == [0.5, 1.0, 1.5] and all(s[3].family == "alpha_stable" for s in seen)
    assert all(r["kind"] == "point" for r in rows)
    seen.clear()
    cmd_sweep(man, "lambda", [1, 2, 3], runner)
    assert [s[4] for s in seen] == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        cmd_sweep(man, "T", [10, 20], runner)
    with pytest.raises(ValueError):
        cmd_sweep(man, "K", [1, 2.5, 3], runner)


def test_sweep_replans_schedule(tmp_path):
    man = parse_config(f"preset = alpha-sweep\nschedule = pi_strongly_convex\noutput.dir = {tmp_path}\n")
    lams = []

    def runner(m):
        lams.append(m.config.lambda_seq[0])
        return [(1.0 / m.config.T, False)]

    cmd_sweep(man, "T", [100, 200, 400], runner)
    assert lams == pytest.approx([(10 * T) ** (2 / 3) for T in (100, 200, 400)])


def test_alpha_sweep_completes_without_failure(tmp_path):
    for algorithm in ("fat_pi", "fat_pr"):
        man = load_manifest(None, "alpha-sweep", [f"algorithm={algorithm}"], trials=3, out=str(tmp_path))
        rows = cmd_sweep(man, "alpha", [0.5, 1.0, 1.5])
        assert len(rows) == 3 and all(r["success_rate"] == 1.0 for r in rows)


def test_estimate_alpha_from_files(tmp_path, capsys):
    gen = np.random.default_rng(0)
    for name, data, lo, hi in (("cauchy.csv", gen.standard_cauchy(200_000), 0.9, 1.1),
                               ("gauss.txt", gen.standard_normal(200_000), 1.9, 2.0)):
        path = tmp_path / name
        path.write_text("value\n" + "\n".join(repr(float(v)) for v in data) + "\n")
        assert main(["estimate-alpha", str(path)]) == 0
        report = json.loads(capsys.readouterr().out)
        assert lo <= report["alpha_hat"] <= hi and report["n_samples"] <= 200_000
    small = tmp_path / "small.csv"
    small.write_text("\n".join(["1.0"] * 10))
    assert main(["estimate-alpha", str(small)]) == 2
    assert "insufficient samples" in capsys.readouterr().err
    with pytest.raises(ValueError, match="insufficient samples"):
        cmd_estimate_alpha(np.ones(10))


def test_estimate_alpha_from_run(capsys, tmp_path):
    assert main(["estimate-alpha", "--preset", "cauchy-convex", "--set", "rounds=2000",
                 "--set", "algorithm=gfedavg", "--set", "divergence_cap=1e300", "--out", str(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_samples"] >= 10_000 and 0 < report["alpha_hat"] <= 2


def test_schedule_command(capsys):
    assert main(["schedule", "pi_nonconvex", "--m", "10", "--k", "5", "--t", "100", "--alpha", "2"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["lambda"] == pytest.approx(8.4090, abs=1e-4)
    assert main(["schedule", "pr_strongly_convex", "--m", "5", "--k", "2", "--t", "300", "--alpha", "1"]) == 2
