import json
import os
import subprocess
import sys

import numpy as np
import pytest

from chbsim import cli
from chbsim import config as cf

SMALL = """
geometry: {n_x_modes: 3, n_y_modes: 3}
noise: {bulk: {amplitude: 0.3}, boundary: {amplitude: 0.3}}
scheme: {dt: 0.002, n_steps: 20, decimate: 5}
experiment: {kind: single-path}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_empty_document_is_valid():
    cfg = cf.parse_config("")
    assert cfg.geometry.n_x_modes == 8 and cfg.params.robin_K == 1.0
    assert cf.validate(cfg) == []


def test_round_trip_and_hash():
    cfg = cf.parse_config(SMALL + "potentials: {resolvent_tolerance: 1e-13}\n")
    assert cfg.potentials.resolvent_tolerance == 1e-13
    text = cf.serialize_config(cfg)
    back = cf.parse_config(text)
    assert cf.serialize_config(back) == text
    assert cf.config_hash(back) == cf.config_hash(cfg)
    assert json.loads(text)["scheme"]["dt"] == 0.002


def test_zero_robin_message():
    with pytest.raises(cf.ConfigError) as exc:
        cf.parse_config("params: {robin_K: 0}")
    assert any("robin_K must be > 0 (paper treats only K>0)" in e for e in exc.value.errors)


def test_rho_at_most_half_rejected():
    with pytest.raises(cf.ConfigError) as exc:
        cf.parse_config("noise: {bulk: {rho: 0.4}}")
    assert any(e.startswith("noise.bulk.rho must be > 1/2") for e in exc.value.errors)


def test_all_errors_collected():
    doc = """
params: {eps: -1, bogus: 3}
scheme: {dt: "fast"}
noise: {n_modes: 0, coupling: weird}
experiment: {kind: nothing}
"""
    with pytest.raises(cf.ConfigError) as exc:
        cf.parse_config(doc)
    errs = "\n".join(exc.value.errors)
    for frag in ("params.bogus: unknown field", "params.eps", "scheme.dt", "noise.n_modes",
                 "noise.coupling", "experiment.kind"):
        assert frag in errs
    with pytest.raises(cf.ConfigError):
        cf.parse_config("[1, 2")


def test_expression_whitelist():
    assert cf.evaluate_expression("cos(x) + 1", x=np.array([0.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        cf.evaluate_expression("__import__('os')", x=0.0)
    with pytest.raises(cf.ConfigError):
        cf.parse_config("initial: {phi: 'open(x)'}")


def test_initial_data_trace_default():
    from chbsim import geometry as geo
    cfg = cf.parse_config(SMALL)
    basis = geo.build_basis(cf.make_geometry(cfg))
    a, b = cf.initial_coefficients(cfg, basis)
    assert np.allclose(b, geo.trace_coeffs(a, basis))


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("CHBSIM_OUTPUT_DIR", str(tmp_path / "out"))
    assert cli.main(["validate", write(tmp_path, SMALL)]) == 0
    assert cli.main(["validate", write(tmp_path, "params: {robin_K: 0}", "bad.yaml")]) == 2
    assert cli.main(["validate", str(tmp_path / "missing.yaml")]) == 2
    err = capsys.readouterr().err
    assert "robin_K must be > 0" in err


def test_single_path_run_writes_manifest(tmp_path, monkeypatch):
    out = tmp_path / "out"
    monkeypatch.setenv("CHBSIM_OUTPUT_DIR", str(out))
    assert cli.main(["run", write(tmp_path, SMALL)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    names = [e["file"] for e in man["files"]]
    assert "config.json" in names and "summary.json" in names
    import hashlib
    for e in man["files"]:
        data = (out / e["file"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == e["sha256"] and len(data) == e["bytes"]


def test_equilibrium_single_path_passes(tmp_path, monkeypatch):
    monkeypatch.setenv("CHBSIM_OUTPUT_DIR", str(tmp_path / "out"))
    doc = SMALL + "initial: {phi: '0.2'}\n" + "noise: {enabled: false}\n"
    doc = doc.replace("noise: {bulk: {amplitude: 0.3}, boundary: {amplitude: 0.3}}\n", "")
    assert cli.main(["run", write(tmp_path, doc)]) == 0
    rep = json.loads((tmp_path / "out" / "report_single_path.json").read_text())
    assert rep["checks"]
    paths = tmp_path / "out" / "paths"
    led = np.loadtxt(next(paths.glob("*.tsv")), comments="#")
    assert led.shape[0] == 21


def test_runs_are_byte_identical(tmp_path, monkeypatch):
    cfgp = write(tmp_path, SMALL)
    shas = []
    for d in ("o1", "o2"):
        monkeypatch.setenv("CHBSIM_OUTPUT_DIR", str(tmp_path / d))
        assert cli.main(["run", cfgp]) == 0
        shas.append((tmp_path / d / "manifest.json").read_bytes())
    assert shas[0] == shas[1]


def test_console_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "chbsim", "validate", write(tmp_path, SMALL)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("valid ")
