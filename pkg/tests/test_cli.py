import json

import pytest

from ahglue.cli import EXIT_CONFIG, EXIT_GATE, EXIT_NONCONVERGENCE, EXIT_OK, load_config, parse_grid, run
from ahglue.errors import ConfigError


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_parse_grid():
    assert parse_grid("32x48") == (32, 48)
    assert parse_grid([16, 16]) == (16, 16)
    for bad in ("0x4", "12", "axb", "300x300"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_schema_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        load_config("glue", _cfg(tmp_path, {"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config("glue", _cfg(tmp_path, {"tol": "small"}))
    assert load_config("kids")["b"] == 1.0


def test_glue_identical_metrics_zero_h(tmp_path):
    cfg = _cfg(tmp_path, {"g_hat": {"catalog": "hyperbolic", "params": {}}})
    code, rep = run(["glue", "--config", cfg, "--grid", "24x24"])
    assert code == EXIT_OK
    assert rep["solve"]["h_max"] == 0.0


def test_glue_large_bump_is_nonconvergence(tmp_path):
    cfg = _cfg(tmp_path, {"g_hat": {"catalog": "conformal_bump", "params": {"eps": 0.012}}})
    code, rep = run(["glue", "--config", cfg])
    assert code == EXIT_NONCONVERGENCE
    assert rep["error"]["type"] == "NonConvergenceError"


def test_report_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["kids", "--out", str(out), "--seed", "3"])[0] == EXIT_OK
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()
    assert json.loads((a / "report.json").read_text())["seed"] == 3


def test_kids_verdicts(tmp_path):
    code, rep = run(["kids"])
    assert code == EXIT_OK
    assert all(v["passed"] for v in rep["verdicts"])
    code, rep = run(["kids", "--config", _cfg(tmp_path, {"b": 3.0})])
    assert code == EXIT_OK
    assert {v["criterion"] for v in rep["verdicts"]} >= {"kernel_entry"}
    assert run(["kids", "--grid", "0x4"])[0] == EXIT_CONFIG


def test_verify_identities_gate(tmp_path):
    cfg = _cfg(tmp_path, {"identities": ["14VI14.5"], "resolutions": [33, 65, 129]})
    assert run(["verify-identities", "--config", cfg])[0] == EXIT_OK
    assert run(["verify-identities", "--config", cfg, "--fault", "stencil"])[0] == EXIT_GATE
    bad = _cfg(tmp_path, {"identities": ["nope"]}, "bad.json")
    assert run(["verify-identities", "--config", bad])[0] == EXIT_CONFIG


def test_ineq_sweeps(tmp_path):
    assert run(["ineq", "--config", _cfg(tmp_path, {"sweep": []})])[0] == EXIT_CONFIG
    cfg = _cfg(tmp_path, {"family": "hardy", "sweep": [{"b": 0.0}, {"b": 1.0}]}, "h.json")
    code, rep = run(["ineq", "--config", cfg, "--jobs", "2"])
    assert code == EXIT_OK
    assert [r["b"] for r in rep["rows"]] == [0.0, 1.0]
    assert rep["rows"][1]["constant"] < 0.1 * rep["rows"][0]["constant"]


def test_maskit(tmp_path):
    code, rep = run(["maskit"])
    assert code == EXIT_OK and rep["verdicts"][0]["passed"]
    assert run(["maskit", "--config", _cfg(tmp_path, {"tau2": 0.5})])[0] == EXIT_CONFIG


def test_sweep_lambda_single_value(tmp_path):
    code, rep = run(["sweep-lambda", "--config", _cfg(tmp_path, {"lams": [0.25]}), "--grid", "32x32"])
    assert code == EXIT_OK
    assert rep["verdicts"] == [] or all(v["criterion"] != "slope" for v in rep["verdicts"])
    assert len(rep["h_norm"]) == 1
