import json
import logging
from dataclasses import fields

import pytest

from torusflow.cli import main, read_csv
from torusflow.cone import StructureReport
from torusflow.config import load_json, parse_config, parse_config_dict
from torusflow.errors import ConfigError, FlowBreakdownError
from torusflow.presets import preset, preset_names

TINY = {
    "pipeline": "flow",
    "seed": 3,
    "geometry": {"n": 1, "K": 1, "resolutions": [8, 8]},
    "operator": {"family": "sigma_k_root"},
    "initial": {"kind": "modes", "terms": [{"amplitude": 0.01, "func": "sin", "axis": "x1"}]},
    "flow": {"integrator": "euler", "c_cfl": 1.0, "t_max": 2.0, "tol_osc": 1e-3, "sample_interval": 0.05},
}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


def test_minimal_config_defaults():
    rc = parse_config_dict({"geometry": {"n": 1, "K": 1, "resolutions": [4, 4]}})
    assert rc.pipeline == "flow" and rc.operator.k == 1 and rc.operator.m == 0
    assert rc.flow.integrator == "rk4" and rc.flow.c_cfl == 0.2


def test_json_syntax_error_has_position(tmp_path):
    p = write(tmp_path, '{"geometry": {"n": 1,\n  "K": }')
    with pytest.raises(ConfigError, match="line 2, column"):
        load_json(p)


@pytest.mark.parametrize(
    "patch,match",
    [
        ({"flow": {"c_cfl": 2.0}}, "c_cfl"),
        ({"flow": {"bogus": 1}}, r"flow\.bogus: unknown key"),
        ({"geometry": {"n": 1, "K": 1, "resolutions": [8]}}, "resolutions"),
        ({"geometry": {"n": 1, "K": 2, "resolutions": [8, 8]}}, "geometry"),
        ({"pipeline": "dance"}, "pipeline"),
        ({"initial": {"kind": "modes", "terms": [{"amplitude": 1, "axis": "z9"}]}}, "unknown axis"),
        ({"harnack": {"t1": 1.0, "t2": 0.5}}, "t1 < t2"),
        ({"data": {"X": {"kind": "twisted"}}}, "X kind"),
        ({"operator": {"family": "sigma_k_root", "k": 5}}, "operator"),
    ],
)
def test_config_errors(patch, match):
    raw = json.loads(json.dumps(TINY))
    raw.update(patch)
    with pytest.raises(ConfigError, match=match):
        parse_config_dict(raw)


def test_rank_warning(caplog):
    raw = {"geometry": {"n": 2, "K": 1, "resolutions": [4, 4, 4, 4]}, "operator": {"k": 2}, "data": {"X": {"kind": "scaled_identity", "c": 1.0}}}
    with caplog.at_level(logging.WARNING):
        parse_config_dict(raw)
    assert any("rank condition" in r.getMessage() and "(S0.2)" in r.getMessage() for r in caplog.records)
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        parse_config_dict(TINY)
    assert not caplog.records


def test_presets_parse():
    assert set(preset_names()) >= {"heat_baseline", "manufactured_sigma2", "harnack_heat_bump", "gauduchon_sigma2", "cone_sigma2_report"}
    for name in preset_names():
        rc = parse_config_dict(preset(name))
        assert rc.pipeline in ("flow", "harnack", "cone")
    with pytest.raises(ConfigError):
        preset("nope")
    a = preset("heat_baseline")
    a["seed"] = 99
    assert preset("heat_baseline")["seed"] == 0


def test_file_field_round_trip(tmp_path):
    from torusflow.torus import ScalarField, TorusGrid, write_snapshot
    import numpy as np

    g = TorusGrid(1, (8, 8))
    phi = ScalarField.from_function(g, lambda x, y: 0.01 * np.cos(2 * np.pi * x))
    write_snapshot(tmp_path / "phi0.csv", phi)
    raw = dict(TINY, initial={"kind": "file", "path": "phi0.csv"})
    rc = parse_config(write(tmp_path, raw))
    assert np.array_equal(rc.flow.phi0.values, phi.values)


def test_run_writes_complete_directory(tmp_path, capsys):
    cfg = write(tmp_path, TINY)
    out = tmp_path / "run"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    names = {f["name"] for f in manifest["files"]}
    assert {"config.json", "records.csv", "final_phibar.csv", "summary.json", "details.json"} <= names
    assert manifest["subcommand"] == "run" and manifest["seed"] == 3 and manifest["exit_code"] == 0
    assert manifest["failed_checks"] == []
    summary = json.loads((out / "summary.json").read_text())
    assert summary["termination"] == "converged" and summary["beta"] > 0
    header, cols = read_csv(out / "records.csv")
    assert header[0] == "t" and len(cols["t"]) >= 5
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".run.")]
    assert "PASS" in capsys.readouterr().out


def test_runs_are_deterministic(tmp_path):
    cfg = write(tmp_path, TINY)
    for d in ("a", "b"):
        assert main(["run", str(cfg), "--out", str(tmp_path / d)]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert [(f["name"], f["sha256"]) for f in ma["files"]] == [(f["name"], f["sha256"]) for f in mb["files"]]


def test_report(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", str(write(tmp_path, TINY)), "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out), "--plots", str(tmp_path / "plots")]) == 0
    text = capsys.readouterr().out
    assert "termination = converged" in text
    assert (tmp_path / "plots" / "omega.svg").exists()
    assert main(["report", str(tmp_path / "missing")]) == 3


def test_failed_checks_exit_2(tmp_path):
    raw = dict(TINY, flow=dict(TINY["flow"], t_max=0.1))
    out = tmp_path / "run"
    assert main(["run", str(write(tmp_path, raw)), "--out", str(out)]) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert "converged" in manifest["failed_checks"] and manifest["exit_code"] == 2
    assert main(["report", str(out)]) == 2


def test_config_error_exit_3(tmp_path, capsys):
    bad = write(tmp_path, dict(TINY, flow={"c_cfl": 3}))
    assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 3
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()
    assert main(["run"]) == 3
    assert main(["run", str(write(tmp_path, "{", "broken.json"))]) == 3


def test_inadmissible_initial_data_exit_3(tmp_path):
    raw = {
        "geometry": {"n": 2, "K": 1, "resolutions": [8, 8, 1, 1]},
        "operator": {"k": 2},
        "data": {"X": {"kind": "scaled_identity", "c": 0.01}},
        "initial": {"kind": "modes", "terms": [{"amplitude": 1.0, "func": "sin", "axis": "x1"}]},
    }
    assert main(["run", str(write(tmp_path, raw)), "--out", str(tmp_path / "x")]) == 3


def test_breakdown_exit_4(tmp_path, monkeypatch):
    import torusflow.pipelines as pipelines

    def explode(rc, with_harnack=True):
        raise FlowBreakdownError("no admissible step", t=0.3)

    monkeypatch.setattr(pipelines, "flow_pipeline", explode)
    out = tmp_path / "x"
    assert main(["run", str(write(tmp_path, TINY)), "--out", str(out)]) == 4
    # nothing half-written is left behind
    assert not out.exists()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".x.")]


def test_verify_cone_json(capsys, tmp_path):
    assert main(["verify-cone", "--n", "3", "--K", "2", "--k", "2", "--samples", "3000", "--out", str(tmp_path / "c")]) == 0
    cap = capsys.readouterr()
    payload = json.loads(cap.out)
    assert set(payload) == {f.name for f in fields(StructureReport)}
    assert payload["samples_used"] > 3000 and payload["seed"] == 12345
    assert "rank = 2" in cap.err
    report = json.loads((tmp_path / "c" / "cone_report.json").read_text())
    assert report["rank"] == 2 and report["gradient_ratio"]["c0"] > 0


def test_verify_cone_bad_structure(capsys):
    assert main(["verify-cone", "--n", "2", "--K", "3"]) == 3


def test_check_structure(capsys):
    assert main(["check-structure", "--n", "3", "--K", "2", "--k", "3", "--samples", "2000"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["all_pass"] is True and payload["euler_defect"] < 1e-10
    assert main(["check-structure", "--family", "linear_weights", "--weights", "1,2,3", "--samples", "500"]) == 2


def test_harnack_overrides(tmp_path):
    raw = {
        "geometry": {"n": 1, "K": 1, "resolutions": [8, 8]},
        "data": {"X": {"kind": "scaled_identity", "c": 1.0}, "psi": {"kind": "constant", "value": 1.0}},
        "harnack": {"u0": {"kind": "bump", "offset": 1.0, "amplitude": 0.5, "width": 0.3}, "c_cfl": 0.5, "snapshot_t": 0.0},
    }
    out = tmp_path / "h"
    code = main(["harnack", "--config", str(write(tmp_path, raw)), "--t1", "0.25", "--t2", "0.75", "--alpha", "1.4", "--out", str(out)])
    assert code == 0
    h = json.loads((out / "harnack.json").read_text())
    assert (h["t1"], h["t2"]) == (0.25, 0.75)
    assert h["ratio"] <= h["bound"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "harnack"
    assert json.loads((out / "config.json").read_text())["harnack"]["alpha"] == 1.4
    assert (out / "li_yau.csv").exists()
