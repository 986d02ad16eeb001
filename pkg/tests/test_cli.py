import csv
import json
from pathlib import Path

import numpy as np
import pytest

from reflectdim import cli
from reflectdim.errors import ValidationError

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SESSION = """
[session]
lambda = 1000
train_size = 17
packet_size_bytes = 1500
rate_min_bps = 0.5e9
rate_max_bps = 1.5e9
"""


def run_cli(*args):
    return cli.main([str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_parse_session_and_config():
    sc, cfg = cli.parse_scenario_text("[config]\nseed = 4\nmass_threshold = 0.995\n" + SESSION + "count = 3\n")
    assert len(sc) == 3
    assert sc.sessions[0].packet_size == 12000
    assert sc.total_lambda == 3000
    assert cfg == {"seed": 4, "mass_threshold": 0.995}


@pytest.mark.parametrize(
    "text, field",
    [
        ("[config]\nseed = 1\n", "sessions"),
        (SESSION + "colour = 3\n", "colour"),
        ("[config]\nfoo = 1\n" + SESSION, "foo"),
        (SESSION.replace("1000", "-5"), "lambda"),
        (SESSION.replace("17", "abc"), "train_size"),
        (SESSION.replace("rate_max_bps = 1.5e9\n", ""), "rate_max_bps"),
        ("[other]\n" + SESSION, "file"),
        ("lambda = 1\n" + SESSION, "file"),
    ],
)
def test_parse_errors(text, field):
    with pytest.raises(ValidationError) as exc:
        cli.parse_scenario_text(text)
    assert exc.value.field == field
    assert exc.value.exit_code == 1


def test_empty_session_list_exits_1(tmp_path, capsys):
    f = tmp_path / "s.ini"
    f.write_text("[config]\nseed = 1\n")
    assert run_cli("analyze", "--scenario", f) == 1
    assert "session" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path):
    assert run_cli("analyze", "--scenario", tmp_path / "nope.ini") == 1


def test_unstable_scenario_exits_2(capsys):
    assert run_cli("analyze", "--scenario", SCENARIOS / "unstable.ini") == 2
    assert "rho = 1.12" in capsys.readouterr().err


def test_unreachable_percentile_exits_3():
    assert run_cli("analyze", "--scenario", SCENARIOS / "pure_rho033.ini", "--percentiles", "99.9") == 3


@pytest.fixture(scope="module")
def analyzed(tmp_path_factory):
    out = tmp_path_factory.mktemp("analyze")
    assert run_cli("analyze", "--scenario", SCENARIOS / "pure_rho066.ini", "--out", out) == 0
    return out


def test_analyze_outputs(analyzed):
    names = {p.name for p in analyzed.iterdir()}
    assert {"service_pdf.csv", "occupancy.csv", "wait_pdf.csv", "wait_cdf.csv",
            "components.csv", "report.txt", "report.csv", "metadata.json"} <= names
    head, rows = read_csv(analyzed / "report.csv")
    row = dict(zip(head, rows[0]))
    assert int(row["i_max"]) == 7
    meta = json.loads((analyzed / "metadata.json").read_text())
    assert meta["seed"] == 1 and "PCG64" in meta["rng_algorithm"] and meta["version"]
    assert meta["grid_steps"] == 5000 and meta["k_steps"] == 10000
    assert b"\r" not in (analyzed / "wait_cdf.csv").read_bytes()


def test_quantiles_round_trip_from_cdf_csv(analyzed):
    head, rows = read_csv(analyzed / "report.csv")
    row = dict(zip(head, rows[0]))
    _, cdf_rows = read_csv(analyzed / "wait_cdf.csv")
    t = np.array([float(r[0]) for r in cdf_rows])
    c = np.array([float(r[2]) for r in cdf_rows])
    for p, key in ((0.95, "wait_p95_s"), (0.99, "wait_p99_s")):
        k = np.argmax(c >= p)
        q = t[k - 1] + (p - c[k - 1]) / (c[k] - c[k - 1]) * (t[k] - t[k - 1])
        assert q == pytest.approx(float(row[key]), rel=1e-9)
    _, occ = read_csv(analyzed / "occupancy.csv")
    Pi = np.array([float(r[2]) for r in occ])
    assert int(np.argmax(Pi >= 0.99)) == int(row["queue_p99"])


def test_analyze_is_byte_identical(analyzed, tmp_path):
    assert run_cli("analyze", "--scenario", SCENARIOS / "pure_rho066.ini", "--out", tmp_path) == 0
    for name in ("wait_cdf.csv", "components.csv", "report.csv", "occupancy.csv", "metadata.json"):
        assert (tmp_path / name).read_bytes() == (analyzed / name).read_bytes()


def test_cli_flags_override_file(tmp_path):
    assert run_cli("analyze", "--scenario", SCENARIOS / "pure_rho066.ini", "--out", tmp_path,
                   "--seed", 5, "--mass", 0.95, "--percentiles", "0.9") == 0
    head, rows = read_csv(tmp_path / "report.csv")
    row = dict(zip(head, rows[0]))
    assert int(row["i_max"]) < 7 and "wait_p90_s" in row
    assert json.loads((tmp_path / "metadata.json").read_text())["seed"] == 5


def test_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert run_cli("simulate", "--scenario", SCENARIOS / "pure_rho050.ini", "--arrivals", 1000,
                       "--seed", 7, "--out", tmp_path / d, "--samples") == 0
    for name in ("sim_summary.csv", "samples.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _, rows = read_csv(tmp_path / "a" / "samples.csv")
    assert len(rows) == 1000


def test_simulate_unstable_warns_and_runs(tmp_path, caplog):
    assert run_cli("simulate", "--scenario", SCENARIOS / "unstable.ini", "--arrivals", 2000,
                   "--out", tmp_path) == 0
    assert "unstable" in caplog.text
    assert (tmp_path / "sim_summary.csv").exists()


def test_simulate_utilization_pure_066(tmp_path):
    assert run_cli("simulate", "--scenario", SCENARIOS / "pure_rho066.ini", "--out", tmp_path) == 0
    _, rows = read_csv(tmp_path / "sim_summary.csv")
    s = {k: float(v) for k, v in rows}
    assert abs(s["utilization"] - 0.66) < 3 * s["se_utilization"]


def test_compare_passes_and_negative_control_fails(tmp_path, capsys):
    assert run_cli("compare", "--scenario", SCENARIOS / "pure_rho033.ini", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "overall: PASS" in out
    _, rows = read_csv(tmp_path / "comparison.csv")
    assert all(r[3] in ("true", "") for r in rows)
    run_cli("compare", "--scenario", SCENARIOS / "pure_rho033.ini", "--corrupt-pi")
    out = capsys.readouterr().out
    tv_line = next(line for line in out.splitlines() if line.startswith("tv_pi"))
    assert tv_line.endswith("FAIL") and "overall: FAIL" in out


def test_dimension_unsatisfiable_exits_4(capsys):
    code = run_cli("dimension", "--scenario", SCENARIOS / "pure_rho033.ini", "--lambda-min", 500,
                   "--lambda-max", 1000, "--lambda-steps", 2, "--wait-limit-ms", "0")
    assert code == 4
    assert "nearest miss" in capsys.readouterr().out


def test_dimension_needs_limits():
    assert run_cli("dimension", "--scenario", SCENARIOS / "pure_rho033.ini",
                   "--lambda-min", 500, "--lambda-max", 1000) == 1


@pytest.mark.parametrize(
    "scenario, lo, hi, limit, expected",
    [("gbps_lambda4000.ini", 3700, 4300, "3.3", 4000), ("mbps_lambda400.ini", 370, 430, "33.2", 400)],
)
def test_dimension_recovers_reference_intensity(tmp_path, scenario, lo, hi, limit, expected):
    # looser integral tolerance keeps the sweep quick; quantiles move far less than 5 %
    assert run_cli("dimension", "--scenario", SCENARIOS / scenario, "--lambda-min", lo, "--lambda-max", hi,
                   "--lambda-steps", 13, "--wait-limit-ms", limit, "--mc-tol", 0.05, "--out", tmp_path) == 0
    head, rows = read_csv(tmp_path / "dimension.csv")
    ok = [float(r[head.index("lambda_per_s")]) for r in rows if r[head.index("satisfied")] == "true"]
    assert max(ok) == pytest.approx(expected, rel=0.05)
