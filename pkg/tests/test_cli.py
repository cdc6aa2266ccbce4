import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from zcrit.cli import main
from zcrit.formats import InputError, parse_k

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


def sample(name: str) -> str:
    return str(SAMPLES / name)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_charge_eval_on_p1(capsys):
    code, out, _ = run(capsys, "charge-eval", "--charge", sample("k_stability_p1.json"), "--geometry", sample("p1.json"), "--k", "3")
    assert code == 0
    report = json.loads(out)
    assert report["values"][0]["z"] == {"re": "2/1", "im": "3/1"}
    assert report["classification"] == "admissible"


def test_stability_check_stable(capsys, tmp_path):
    code, out, _ = run(
        capsys, "stability-check", "--charge", sample("k_stability_p1.json"), "--geometry", sample("tc_p1_kink.json"),
        "--k", "1:20:1", "--out", str(tmp_path),
    )
    assert code == 0
    report = json.loads(out)
    assert report["verdict"] == "stable_along_tc" and report["bridge_holds"]
    assert (tmp_path / "report.json").read_text() == out
    assert (tmp_path / "pairing.csv").read_bytes().startswith(b"k,im_ratio,im_ratio_float\r\n")


def test_df_command(capsys):
    code, out, _ = run(capsys, "df", "--geometry", sample("tc_p1_kink.json"))
    assert code == 0
    assert json.loads(out)["df"] == "1/2"


def test_unstable_problem_exits_two(capsys):
    code, out, _ = run(capsys, "momentmap-solve", "--problem", sample("momentmap_unstable.json"))
    assert code == 2
    assert json.loads(out)["status"] == "hypothesis_failed"


def test_momentmap_solve_certifies(capsys):
    code, out, _ = run(capsys, "momentmap-solve", "--problem", sample("momentmap_benchmark.json"))
    assert code == 0
    report = json.loads(out)
    assert report["exact"]["certificate"]["passed"]
    assert report["exact"]["residual"] <= 1e-12


def test_malformed_json_reports_position(capsys):
    code, out, err = run(capsys, "charge-eval", "--charge", sample("malformed.json"), "--geometry", sample("p1.json"))
    assert code == 1 and out == ""
    assert "malformed.json:" in err and err.count(":") >= 3


@pytest.mark.parametrize(
    "argv",
    [
        ["charge-eval", "--geometry", "p1.json"],
        ["sweep", "--parameter", "epsilon", "--values", "", "--problem", "momentmap_benchmark.json"],
        ["sweep", "--parameter", "epsilon", "--values=-1,0.1", "--problem", "momentmap_benchmark.json"],
        ["charge-eval", "--charge", "k_stability_p1.json", "--geometry", "p1.json", "--k", "0"],
        ["solve-metric", "--charge", "k_stability_p1.json", "--geometry", "p1.json", "--grid", "-3"],
    ],
)
def test_bad_inputs_exit_one(capsys, argv):
    argv = [sample(a) if a.endswith(".json") else a for a in argv]
    code, _, err = run(capsys, *argv)
    assert code == 1 and err.startswith("error:")


def test_positivity_failure_exits_two(capsys, tmp_path):
    # strongly bumped profile: its curvature dips far below zero, so Re(e^{-i phase} Z~) < 0 at k = 1
    x = np.linspace(0.0, 1.0, 33)
    g = x - x * x
    initial = tmp_path / "initial.csv"
    initial.write_text("x,value\n" + "".join(f"{float(a)!r},{float(b)!r}\n" for a, b in zip(x, g + 24 * g * g)))
    code, out, _ = run(capsys, "solve-metric", "--charge", sample("k_stability_p1.json"), "--geometry", sample("p1.json"),
                       "--k", "1", "--grid", "33", "--initial", str(initial))
    assert code == 2
    assert json.loads(out)["status"] == "positivity_failed"


def test_solve_metric_writes_fields(capsys, tmp_path):
    code, out, _ = run(capsys, "solve-metric", "--charge", sample("dhym_p1xp1.json"), "--geometry", sample("p1xp1.json"),
                       "--k", "50,100", "--grid", "9", "--out", str(tmp_path))
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["field_k100_1.csv", "field_k50_1.csv", "report.json"]
    assert all(s["final_residual"] <= 1e-7 for s in json.loads(out)["solutions"])


def test_epsilon_sweep_slope(capsys):
    code, out, _ = run(capsys, "sweep", "--parameter", "epsilon", "--values", "1e-2,1e-3,1e-4",
                       "--problem", sample("momentmap_benchmark.json"), "--order", "2")
    assert code == 0
    assert json.loads(out)["loglog_slope"] >= 2.4


def test_k_sweep_keeps_order_with_threads(capsys, monkeypatch):
    argv = ["sweep", "--parameter", "k", "--values", "7,2,5,3", "--charge", sample("k_stability_p1.json"),
            "--geometry", sample("tc_p1_kink.json"), "--out"]
    monkeypatch.setenv("ZCRIT_THREADS", "1")
    outs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("ZCRIT_THREADS", threads)
        code, out, _ = run(capsys, *argv, f"/tmp/zcrit-sweep-{threads}")
        assert code == 0
        outs.append(Path(f"/tmp/zcrit-sweep-{threads}/sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    assert [row.split(b",")[0] for row in outs[0].split(b"\r\n")[1:5]] == [b"7/1", b"2/1", b"5/1", b"3/1"]


def test_repeated_runs_are_byte_identical():
    argv = [sys.executable, "-m", "zcrit.cli", "momentmap-solve", "--problem", sample("momentmap_benchmark.json")]
    first = subprocess.run(argv, capture_output=True, check=True).stdout
    second = subprocess.run(argv, capture_output=True, check=True).stdout
    assert first == second and first


def test_parse_k_forms():
    assert [str(k) for k in parse_k("1:2:1/2")] == ["1", "3/2", "2"]
    assert [str(k) for k in parse_k("3, 1/2")] == ["3", "1/2"]
    with pytest.raises(InputError):
        parse_k("")
    with pytest.raises(InputError):
        parse_k("5:1:1")
