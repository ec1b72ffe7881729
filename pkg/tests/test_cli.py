import json
import subprocess
import sys

from wavedn.cli import main, build_parser, EXIT_OK, EXIT_VALIDATION


def _conf(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


def test_parser_has_all_subcommands():
    sub = next(a for a in build_parser()._actions if a.dest == "cmd")
    assert set(sub.choices) == {"validate", "forward", "response", "distance", "probe", "ray",
                                "reconstruct", "stability", "convergence"}


def test_validate_ok_and_failure(tmp_path, capsys):
    assert main(["validate", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["ok"] and rep["violations"] == []
    bad = _conf(tmp_path, {"geometry": {"r": 1.0, "T": 0.5, "omega_min": [-0.3, -0.3],
                                        "omega_max": [0.3, 0.3], "nx": 32}})
    assert main(["validate", "--config", bad, "--out", str(tmp_path)]) == EXIT_VALIDATION
    names = {v["name"] for v in json.loads(capsys.readouterr().out.splitlines()[-1])["violations"]}
    assert {"T > 2r", "T > 2*Diam(Omega)"} <= names


def test_broken_config_is_validation_failure(tmp_path):
    assert main(["distance", "--config", _conf(tmp_path, '{"oops"'),
                 "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_cfl_violation_exit_code(tmp_path):
    c = _conf(tmp_path, {"geometry": {"r": 2.0, "T": 4.5, "omega_min": [-0.6, -0.6],
                                      "omega_max": [0.6, 0.6], "nx": 48, "nt": 20}})
    assert main(["forward", "--config", c, "--out", str(tmp_path)]) == EXIT_VALIDATION


def test_distance(tmp_path, capsys):
    assert main(["distance", "--delta", "0.5", "--out", str(tmp_path)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert 0 < out["epsilon"] < 1 and out["regime"] == "lambda"


def test_ray(tmp_path, capsys):
    assert main(["ray", "--samples", "3", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "ray.json").read_text())
    assert len(rep["slices"]) == 3 and rep["max_rel_err"] <= 1e-6


def test_convergence(tmp_path):
    assert main(["convergence", "--cases", "free", "--levels", "17", "33", "65",
                 "--out", str(tmp_path)]) == EXIT_OK
    rows = json.loads((tmp_path / "convergence.json").read_text())
    assert rows[0]["case"] == "free" and 1.9 <= rows[0]["order"] <= 2.1


def test_stability_degenerate_ladder_is_deterministic(tmp_path):
    # a zero-only ladder exercises the CSV and fit plumbing without solves
    c = _conf(tmp_path, {"ladder": [0.0]})
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["stability", "--config", c, "--zero-wallclock", "--out", str(d)]) == EXIT_OK
        outs.append((d / "stability_lambda.csv").read_bytes())
        fit = json.loads((d / "fit_lambda.json").read_text())
        assert fit["statuses"] == ["degenerate"] and "error" in fit["fits"]["V"]
    assert outs[0] == outs[1]


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "wavedn.cli", "--version"], capture_output=True,
                         text=True, check=True).stdout
    assert out.strip()
