import csv
import json
import subprocess
import sys

import pytest

from airgraph.cli import CSV_COLUMNS, main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_generate_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--nx", "8", "--seed", "3", "--out", str(a)]) == 0
    assert main(["generate", "--nx", "8", "--seed", "3", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["A.mtx", "b.txt", "coords.txt", "meta.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main(["generate", "--jitter", "0.9", "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nx": 8, "colour": "red"}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("[1, 2]")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_io_errors(tmp_path):
    assert main(["solve", "--problem", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.mtx"
    bad.write_text("not a matrix\n")
    assert main(["solve", "--problem", str(bad), "--out", str(tmp_path)]) == 3
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 3


def test_nonconvergence_exit(tmp_path):
    assert main(["solve", "--nx", "16", "--max-its", "2", "--out", str(tmp_path)]) == 1
    row = _rows(tmp_path / "runs.csv")[0]
    assert row["converged"] == "0" and row["its"] == "2"


def test_solve_defaults(tmp_path):
    assert main(["solve", "--out", str(tmp_path)]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["solve"]["converged"]
    assert stats["problem"]["n"] == 4 * 48 * 48
    rows = _rows(tmp_path / "runs.csv")
    assert list(rows[0]) == CSV_COLUMNS
    assert int(rows[0]["its"]) <= 18 and float(rows[0]["WUs"]) <= 100


def test_solve_appends_and_problem_file(tmp_path):
    prob = tmp_path / "prob"
    assert main(["generate", "--nx", "16", "--out", str(prob)]) == 0
    out = tmp_path / "out"
    assert main(["solve", "--problem", str(prob), "--out", str(out)]) == 0
    assert main(["solve", "--nx", "16", "--out", str(out)]) == 0
    rows = _rows(out / "runs.csv")
    assert len(rows) == 2
    # generated file and in-memory problem are the same system
    assert rows[0]["its"] == rows[1]["its"] and rows[0]["WUs"] == rows[1]["WUs"]


def test_cleanup_lowers_theta_vs_swap(tmp_path):
    common = ["--nx", "24", "--preset", "serial", "--seed", "0"]
    assert main(["solve", *common, "--cf", "pmisr-ddc", "--out", str(tmp_path)]) == 0
    assert main(["solve", *common, "--cf", "pmis-swap", "--out", str(tmp_path)]) == 0
    ddc, swap = _rows(tmp_path / "runs.csv")
    assert float(ddc["max_theta"]) < float(swap["max_theta"])
    assert float(ddc["max_theta"]) <= float(ddc["max_theta_split"])


def test_alpha_zero_flags_diagonal(tmp_path):
    common = ["--nx", "16", "--preset", "serial", "--out", str(tmp_path)]
    assert main(["solve", *common, "--alpha", "0.5"]) == 0
    assert main(["solve", *common, "--alpha", "0.0", "--cf", "pmisr"]) == 0
    mid, zero = _rows(tmp_path / "runs.csv")
    assert zero["aff_diagonal"] == "1" and mid["aff_diagonal"] == "0"
    assert int(zero["levels"]) > int(mid["levels"])
    assert float(zero["grid_comp"]) > float(mid["grid_comp"])


def test_report_outputs(tmp_path):
    assert main(["report", "--nx", "16", "--preset", "serial", "--ranks", "16",
                 "--out", str(tmp_path)]) == 0
    h = json.loads((tmp_path / "hierarchy.json").read_text())["hierarchy"]
    part = json.loads((tmp_path / "partition.json").read_text())
    levels = h["levels"]
    for i, lv in enumerate(levels):
        hist = _rows(tmp_path / f"hist_level{i}.csv")
        pre = sum(int(r["count_pre"]) for r in hist)
        post = sum(int(r["count_post"]) for r in hist)
        pts = _rows(tmp_path / f"cf_level{i}.csv")
        n_f = sum(r["label"] == "F" for r in pts)
        assert post == n_f
        assert pre >= post
    hist0 = _rows(tmp_path / "hist_level0.csv")
    top_pre = max(float(r["bin_hi"]) for r in hist0 if int(r["count_pre"]))
    top_post = max(float(r["bin_hi"]) for r in hist0 if int(r["count_post"]))
    assert top_post < top_pre
    assert part["initial_ranks"] == 16
    assert part["trigger_levels"] == [i for i, lv in enumerate(part["levels"]) if lv["triggered"]]


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "airgraph.cli", "generate", "--nx", "4",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "A.mtx").exists()


def test_argparse_rejects_unknown_cf():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--cf", "hmis"])
    assert exc.value.code == 2
