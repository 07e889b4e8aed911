import json
import subprocess
import sys

import numpy as np
import pytest

from hmmdetect.cli import dispatch
from hmmdetect.detectors import SRPDetector


def _run(argv, capsys):
    code = dispatch(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def test_arl_byte_identical_across_runs_and_threads(two_state, scenario_file, tmp_path, capsys):
    sc = scenario_file(two_state)
    outs = []
    for threads in (1, 1, 4):
        out = tmp_path / f"arl_{len(outs)}.csv"
        code, _, err = _run(["arl", "--scenario", sc, "--rule", "srp", "--log-b", "1.5",
                             "--trials", "5000", "--seed", "11", "--threads", str(threads),
                             "--per-trial", "--out", str(out)], capsys)
        assert code == 0, err
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    side = json.loads((tmp_path / "arl_2.csv.manifest.json").read_text())
    assert side["threads"] == 4 and "timestamp" in side


def test_manifest_embeds_config(two_state, scenario_file, capsys):
    sc = scenario_file(two_state)
    code, out, _ = _run(["arl", "--scenario", sc, "--rule", "cusum", "--log-b", "2",
                         "--trials", "100", "--seed", "1"], capsys)
    assert code == 0
    header = {line.split(":", 1)[0][2:]: json.loads(line.split(":", 1)[1])
              for line in out.splitlines() if line.startswith("#")}
    assert header["seed"] == 1 and header["subcommand"] == "arl"
    assert header["configs"][sc]["pre"] == two_state[0].to_dict()


def test_detect_observations_matches_api(two_state, scenario_file, tmp_path, capsys):
    xs = np.random.default_rng(4).normal(1.0, 1.0, size=80)
    obs = tmp_path / "xs.csv"
    np.savetxt(obs, xs, delimiter=",")
    code, out, _ = _run(["detect", "--scenario", scenario_file(two_state), "--rule", "srp",
                         "--log-b", "3", "--seed", "0", "--observations", str(obs)], capsys)
    assert code == 0
    row = _body(out)[1].split(",")
    n = SRPDetector(*two_state, log_b=3.0).fit().predict(xs)[0]
    assert int(row[3]) == n > 0


def test_simulate_rows(two_state, scenario_file, capsys):
    code, out, _ = _run(["simulate", "--scenario", scenario_file(two_state, omega=5),
                         "--horizon", "12", "--seed", "2"], capsys)
    assert code == 0
    body = _body(out)
    assert body[0] == "t,xi,hidden" and len(body) == 13


def test_quasistat_then_delay(two_state, scenario_file, tmp_path, capsys):
    sc = scenario_file(two_state, omega=3)
    psi = tmp_path / "psi.json"
    code, _, err = _run(["quasistat", "--scenario", sc, "--log-b", "2", "--particles", "500",
                         "--seed", "3", "--out-psi", str(psi)], capsys)
    assert code == 0, err
    code, out, err = _run(["delay", "--scenario", sc, "--rule", "srp", "--log-b", "2",
                           "--psi", str(psi), "--trials", "200", "--seed", "3"], capsys)
    assert code == 0, err
    assert _body(out)[1].startswith("srp,2.0,,3,")


def test_approx_without_constants_is_usage_error(tmp_path, capsys):
    code, _, err = _run(["approx", "--constants", str(tmp_path / "none.json"),
                         "--log-b", "6"], capsys)
    assert code == 2 and "constants" in err


def test_missing_input_file(capsys):
    code, _, _ = _run(["arl", "--scenario", "/nonexistent.json", "--rule", "srp",
                       "--log-b", "2", "--trials", "10", "--seed", "0"], capsys)
    assert code == 2


def test_missing_seed_is_usage_error(two_state, scenario_file, capsys):
    code, _, _ = _run(["arl", "--scenario", scenario_file(two_state), "--rule", "srp",
                       "--log-b", "2", "--trials", "10"], capsys)
    assert code == 2


def test_invalid_model_exits_one(two_state, scenario_file, tmp_path, capsys):
    spec = {"pre": two_state[0].to_dict(), "post": two_state[1].to_dict()}
    spec["pre"]["trans"] = [[0.5, 0.4], [0.2, 0.8]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(spec))
    code, _, err = _run(["arl", "--scenario", str(bad), "--rule", "srp", "--log-b", "2",
                         "--trials", "10", "--seed", "0"], capsys)
    assert code == 1 and "row 0" in err


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "hmmdetect.cli", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "calibrate" in res.stdout


@pytest.mark.parametrize("rule", ["srp", "cusum", "shiryaev"])
def test_detect_single_trial(rule, two_state, scenario_file, capsys):
    argv = ["detect", "--scenario", scenario_file(two_state, omega=10), "--rule", rule,
            "--log-b", "3", "--seed", "5"]
    first = _run(argv, capsys)
    assert first[0] == 0 and first == _run(argv, capsys)
