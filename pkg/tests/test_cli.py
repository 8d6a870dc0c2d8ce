import hashlib
import json
import subprocess
import sys

import pytest

from lipdyn.cli import main

SADDLE = {"name": "saddle", "gamma": 0.05, "a": 2.0, "b": 0.5}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg) if not isinstance(cfg, str) else cfg)
    return str(path)


def _run(tmp_path, cfg, out="out", *extra):
    return main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / out), *extra])


def test_check_only_accepts_valid_config(tmp_path, capsys):
    cfg = {"pipeline": "split", "model": SADDLE, "seeds": {"sampling": 0}}
    assert _run(tmp_path, cfg, "out", "--check-only") == 0
    assert not (tmp_path / "out").exists()


def test_malformed_json_reports_line(tmp_path, capsys):
    assert _run(tmp_path, '{"pipeline": "split",\n "seeds": {}\n') == 1
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("cfg, field", [
    ({"pipeline": "split", "model": SADDLE}, "seeds.sampling"),
    ({"pipeline": "bogus", "model": SADDLE, "seeds": {"sampling": 0}}, "pipeline"),
    ({"pipeline": "split", "model": {"name": "nope"}, "seeds": {"sampling": 0}}, "model.name"),
    ({"pipeline": "split", "model": SADDLE, "seeds": {"sampling": 0}, "tolerances": {"x": 1}}, "tolerances.x"),
])
def test_missing_or_bad_fields_named(tmp_path, capsys, cfg, field):
    assert _run(tmp_path, cfg) == 1
    assert f"field {field}" in capsys.readouterr().err


def test_gap_violation_exits_with_error(tmp_path, capsys):
    cfg = {"pipeline": "split", "model": dict(SADDLE, b=1.2), "seeds": {"sampling": 0}}
    assert _run(tmp_path, cfg) == 1
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["error"].startswith("GapViolated")


def test_declared_split_constant_on_wrong_side(tmp_path):
    cfg = {"pipeline": "split", "model": SADDLE, "split": {"rho": 1.0, "b": 1.1}, "seeds": {"sampling": 0}}
    assert _run(tmp_path, cfg) == 1


def test_failed_check_exits_two(tmp_path):
    # gamma = 0.05 is weakly but not strongly hyperbolic for a=2, b=0.5
    cfg = {"pipeline": "certify", "model": SADDLE, "params": {"delta": 0.5}, "seeds": {"sampling": 0}}
    assert _run(tmp_path, cfg) == 2


def _manifold_cfg():
    return {"pipeline": "manifold", "model": SADDLE, "params": {"radius": 1.0, "grid_res": 51},
            "seeds": {"sampling": 0}}


def test_reruns_are_byte_identical(tmp_path):
    assert _run(tmp_path, _manifold_cfg(), "a") == 0
    assert _run(tmp_path, _manifold_cfg(), "b") == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_manifest_hashes_and_dat_match_json(tmp_path):
    assert _run(tmp_path, _manifold_cfg()) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    graph = json.loads((out / "unstable_graph.json").read_text())
    rows = [line.split() for line in (out / "unstable_graph.dat").read_text().splitlines()[1:]]
    xs = graph["grid"]["axes"][0]
    assert [float(r[0]) for r in rows] == xs
    assert [float(r[1]) for r in rows] == [v[0] for v in graph["values"]]
    assert [r[0] for r in rows] == [repr(x) for x in xs]


def test_seed_override_changes_config_hash(tmp_path):
    cfg = {"pipeline": "split", "model": SADDLE, "seeds": {"sampling": 0}}
    _run(tmp_path, cfg, "a")
    _run(tmp_path, cfg, "b", "--seed", "7")
    ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_sha256"]
    hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_sha256"]
    assert ha != hb


def test_transversal_and_nemytskii_pipelines(tmp_path):
    cfg = {"pipeline": "transversal", "model": SADDLE, "seeds": {"sampling": 0},
           "params": {"theta_slope": 0.2, "theta_offset": -0.1, "sigma_slope": 0.3, "sigma_offset": 0.01}}
    assert _run(tmp_path, cfg, "t") == 0
    y1 = json.loads((tmp_path / "t" / "intersection.json").read_text())["y1"][0]
    assert y1 == pytest.approx(-0.02 / 0.94, abs=1e-10)
    cfg = {"pipeline": "nemytskii", "seeds": {"sampling": 0},
           "params": {"f": {"kind": "affine", "a": 2.0, "b": 1.0}, "u0": 0.3, "s0": 0.7}}
    assert _run(tmp_path, cfg, "n") == 0


def test_morse_smale_pipeline_writes_dot(tmp_path):
    cfg = {"pipeline": "morse-smale", "model": {"name": "cubic", "h": 0.4}, "seeds": {"sampling": 0},
           "params": {"equilibria": [{"id": "0", "point": [0.0], "delta": 0.02},
                                     {"id": "+1", "point": [1.0], "delta": 0.02},
                                     {"id": "-1", "point": [-1.0], "delta": 0.02}],
                      "expect": {"edges": [["0", "+1"], ["0", "-1"]]}}}
    assert _run(tmp_path, cfg) == 0
    assert (tmp_path / "out" / "connection_graph.dot").read_text().startswith("digraph")


def test_module_entry_point(tmp_path):
    path = _write(tmp_path, {"pipeline": "split", "model": SADDLE, "seeds": {"sampling": 0}})
    proc = subprocess.run([sys.executable, "-m", "lipdyn", "run", path, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
