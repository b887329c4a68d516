import csv
import io
import json
import os

import pytest

from streamdse.cli import main

from conftest import device_path, fixture_path


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_dse_writes_artifacts(tmp_path, capsys):
    out = os.path.join(tmp_path, "out")
    code, stdout, _ = run_cli([
        "dse", "--model", fixture_path("long_skip"), "--device", device_path("zcu102"),
        "--batch", "1", "--out", out], capsys)
    assert code == 0
    for name in ("plan.json", "report.json", "audit.jsonl", "report.txt"):
        assert os.path.exists(os.path.join(out, name))
    assert "throughput" in stdout
    plan = json.load(open(os.path.join(out, "plan.json")))
    assert plan["model"] == "long_skip"
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["throughput_fps"] > 0


def test_missing_device_file_exits_2(tmp_path, capsys):
    code, _, stderr = run_cli([
        "dse", "--model", fixture_path("linear"), "--device", "/nonexistent/dev.json",
        "--out", os.path.join(tmp_path, "o")], capsys)
    assert code == 2
    assert "/nonexistent/dev.json" in stderr


def test_batch_zero_is_an_argument_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["dse", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
              "--batch", "0", "--out", os.path.join(tmp_path, "o")])
    assert exc.value.code == 2


def test_estimate_roundtrips_report(tmp_path, capsys):
    out = os.path.join(tmp_path, "out")
    run_cli(["dse", "--model", fixture_path("diamond"), "--device", device_path("zcu102"),
             "--out", out], capsys)
    report = json.load(open(os.path.join(out, "report.json")))
    code, stdout, _ = run_cli([
        "estimate", "--model", fixture_path("diamond"), "--device", device_path("zcu102"),
        "--plan", os.path.join(out, "plan.json")], capsys)
    assert code == 0
    assert json.loads(stdout) == report


def test_validate_linear_zero_depth_deviation(tmp_path, capsys):
    out = os.path.join(tmp_path, "out")
    run_cli(["dse", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
             "--out", out], capsys)
    code, stdout, stderr = run_cli([
        "validate", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
        "--plan", os.path.join(out, "plan.json"), "--frames", "3", "--block", "1"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    assert rows
    for row in rows:
        assert float(row["depth_dev_pct"]) == 0.0


def test_simulate_reports_cycles(tmp_path, capsys):
    out = os.path.join(tmp_path, "out")
    run_cli(["dse", "--model", fixture_path("diamond"), "--device", device_path("zcu102"),
             "--out", out], capsys)
    code, stdout, _ = run_cli([
        "simulate", "--model", fixture_path("diamond"), "--device", device_path("zcu102"),
        "--plan", os.path.join(out, "plan.json"), "--frames", "2", "--block", "1"], capsys)
    assert code == 0
    rows = json.loads(stdout)
    assert rows and rows[0]["total_cycles"] > 0


def test_sweep_batch_axis(tmp_path, capsys):
    code, stdout, _ = run_cli([
        "sweep", "--model", fixture_path("long_skip"), "--device", device_path("zcu102"),
        "--axis", "batch", "--batches", "1", "4", "16"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    shares = [float(r["reconfig_share_pct"]) for r in rows]
    assert shares == sorted(shares, reverse=True)
    assert all(s1 > s2 for s1, s2 in zip(shares, shares[1:]))


def test_sweep_ratio_without_evictions_is_flat(tmp_path, capsys):
    out = os.path.join(tmp_path, "out")
    run_cli(["dse", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
             "--out", out], capsys)
    code, stdout, _ = run_cli([
        "sweep", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
        "--axis", "ratio", "--plan", os.path.join(out, "plan.json"),
        "--multipliers", "1.0", "1.5"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    assert all(r["macs_per_sec"] == "flat" for r in rows)


def test_sweep_unknown_axis_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--model", fixture_path("linear"), "--device", device_path("zcu102"),
              "--axis", "voltage"])
    assert exc.value.code == 2


def test_codec_stats_csv(capsys):
    code, stdout, _ = run_cli(["codec-stats", "--samples", "4", "--words", "512"], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(stdout)))
    schemes = [r["scheme"] for r in rows]
    assert schemes == ["none", "rle", "huffman"]
    none_row = rows[0]
    assert float(none_row["mean_ratio"]) == 1.0


def test_dse_infeasible_exits_1(tmp_path, capsys):
    # a device too small for even a single vertex
    bad = os.path.join(tmp_path, "dev.json")
    doc = json.load(open(device_path("zcu102")))
    doc.update({"lut": 10, "dsp": 0, "bram18k": 1, "uram": 0})
    json.dump(doc, open(bad, "w"))
    code, _, stderr = run_cli([
        "dse", "--model", fixture_path("linear"), "--device", bad,
        "--out", os.path.join(tmp_path, "o")], capsys)
    assert code == 1
    assert "infeasible" in stderr.lower()
