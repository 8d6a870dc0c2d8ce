"""Deterministic report files: JSON, CSV, DOT, .dat and a hashed manifest."""

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .graph_transform import _jsonable


class Results:
    """Collector for checks and artifacts emitted by one pipeline run."""

    def __init__(self):
        self.checks = []
        self.json = {}
        self.csv = {}
        self.dot = {}
        self.dat = {}

    def check(self, family, name, passed, value=None, bound=None):
        self.checks.append({"family": family, "name": name, "pass": bool(passed),
                            "value": _jsonable(value), "bound": _jsonable(bound)})
        return bool(passed)

    @property
    def all_pass(self):
        return all(c["pass"] for c in self.checks)


def dumps_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(h) if isinstance(row, dict) else row[k])
                    for k, h in enumerate(header)])
    return buf.getvalue()


def dat_text(header, array):
    """Whitespace-separated columns with a '#' header; floats in shortest round-trip form."""
    lines = ["# " + " ".join(header)]
    for row in np.atleast_2d(np.asarray(array, dtype=float)):
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def summary(results, pipeline):
    fams = sorted({c["family"] for c in results.checks})
    return {
        "pipeline": pipeline,
        "n_checks": len(results.checks),
        "n_pass": sum(c["pass"] for c in results.checks),
        "all_pass": results.all_pass,
        "families": {f: all(c["pass"] for c in results.checks if c["family"] == f) for f in fams},
        "checks": results.checks,
    }


def emit_report(results, out_dir, pipeline, config, error=None):
    """Write every artifact under out_dir and a manifest of their sha256 hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    summ = summary(results, pipeline)
    if error is not None:
        summ["error"] = error
    files["summary.json"] = dumps_json(summ)
    by_family = {}
    for c in results.checks:
        by_family.setdefault(c["family"], []).append(c)
    for fam, rows in sorted(by_family.items()):
        files[f"checks_{fam}.csv"] = csv_text(["name", "pass", "value", "bound"],
                                              [{**r, "value": _flat(r["value"]),
                                                "bound": _flat(r["bound"])} for r in rows])
    for name, obj in results.json.items():
        files[f"{name}.json"] = dumps_json(obj)
    for name, (header, rows) in results.csv.items():
        files[f"{name}.csv"] = csv_text(header, rows)
    for name, text in results.dot.items():
        files[f"{name}.dot"] = text
    for name, (header, arr) in results.dat.items():
        files[f"{name}.dat"] = dat_text(header, arr)
    for name, text in sorted(files.items()):
        (out / name).write_text(text, encoding="utf-8")
    manifest = {
        "pipeline": pipeline,
        "config_sha256": config_hash(config),
        "files": {name: hashlib.sha256(text.encode("utf-8")).hexdigest()
                  for name, text in sorted(files.items())},
    }
    (out / "manifest.json").write_text(dumps_json(manifest), encoding="utf-8")
    return manifest


def _flat(v):
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True)
    return v
