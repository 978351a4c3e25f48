"""Command line behaviour: schemas, determinism, exit codes, artifacts."""

import json
import subprocess
import sys

import pytest

from treelab import cli
from treelab.percolation_engine import compute_bound_constants
from treelab.tree_geometry import TreeSpec


def run(tmp_path, *argv):
    rc = cli.main(list(argv))
    return rc


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    return header, rows


def test_constants_match_library(tmp_path):
    out = tmp_path / "consts.csv"
    rc = cli.main(["constants", "--trees", "3,3", "--phat", "0.3",
                   "--out", str(out)])
    assert rc == 0
    header, rows = read_csv(out)
    assert header == ["quantity", "value", "replicas", "seed", "spec_hash",
                      "version"]
    truth = compute_bound_constants((TreeSpec(3), TreeSpec(3)), 0.3)
    got = {r["quantity"]: float(r["value"]) for r in rows}
    assert got["chi_bound"] == truth.chi_bound
    assert got["triangle_bound"] == truth.triangle_bound
    assert got["bubble_bound"] == truth.bubble_bound
    assert got["uniqueness_gap(p=0.3)"] == truth.uniqueness_gap


def test_perc_tau_schema_and_endings(tmp_path):
    out = tmp_path / "tau.csv"
    rc = cli.main(["perc", "tau", "--trees", "3", "--radii", "5", "--p", "0.5",
                   "--n", "2", "--replicas", "1000", "--out", str(out)])
    assert rc == 0
    raw = out.read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")
    header, rows = read_csv(out)
    assert header == ["quantity", "p", "lambda", "R1", "mean", "stderr", "n",
                      "seed", "spec_hash", "version"]
    assert [r["quantity"] for r in rows] == ["tau(1)", "tau(2)"]
    for r in rows:
        assert 0.0 <= float(r["mean"]) <= 1.0
        assert r["n"] == "1000"
        assert len(r["spec_hash"]) == 12
    # sidecar summary always accompanies the CSV
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["partial"] is False
    assert summary["generator"].startswith("philox")


def test_byte_identical_across_threads(tmp_path):
    paths = []
    for threads in ("1", "4"):
        out = tmp_path / f"tau_t{threads}.csv"
        rc = cli.main(["perc", "tau", "--trees", "3", "--radii", "5",
                       "--p", "0.45", "--n", "2", "--replicas", "2000",
                       "--threads", threads, "--out", str(out)])
        assert rc == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (paths[0].with_suffix(".json").read_bytes()
            == paths[1].with_suffix(".json").read_bytes())


def test_spec_hash_tracks_experiment_not_plumbing(tmp_path):
    def hash_of(extra):
        out = tmp_path / f"h{len(list(tmp_path.iterdir()))}.csv"
        argv = ["perc", "tau", "--trees", "3", "--radii", "4", "--n", "1",
                "--replicas", "200", "--out", str(out)] + extra
        assert cli.main(argv) == 0
        _, rows = read_csv(out)
        return rows[0]["spec_hash"]

    base = hash_of(["--p", "0.4"])
    assert hash_of(["--p", "0.4", "--threads", "4"]) == base
    assert hash_of(["--p", "0.4", "--seed", "0"]) == base  # explicit default
    assert hash_of(["--p", "0.41"]) != base
    assert hash_of(["--p", "0.4", "--seed", "7"]) != base


def test_config_file_fills_and_flags_win(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trees": "3", "radii": "4", "p": 0.3,
                               "replicas": 200, "n": 1}))
    out = tmp_path / "a.csv"
    assert cli.main(["perc", "tau", "--config", str(cfg),
                     "--out", str(out)]) == 0
    _, rows = read_csv(out)
    assert rows[0]["p"] == "0.3"

    out2 = tmp_path / "b.csv"
    assert cli.main(["perc", "tau", "--config", str(cfg), "--p", "0.5",
                     "--out", str(out2)]) == 0
    _, rows = read_csv(out2)
    assert rows[0]["p"] == "0.5"

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"no_such_option": 1}))
    assert cli.main(["perc", "tau", "--config", str(bad), "--p", "0.4"]) == 2


def test_exit_codes():
    assert cli.main(["perc", "tau", "--trees", "2,3", "--p", "0.3"]) == 2
    assert cli.main(["perc", "tau", "--trees", "3,3"]) == 2  # missing --p
    assert cli.main(["perc", "tau", "--trees", "3,3", "--radii", "12,12",
                     "--p", "0.3"]) == 3  # over the vertex cap
    with pytest.raises(SystemExit) as exc:
        cli.main(["perc", "no-such-command"])
    assert exc.value.code == 2


def test_json_format(tmp_path):
    out = tmp_path / "dist.json"
    assert cli.main(["walk", "dist", "--trees", "3", "--n", "2",
                     "--format", "json", "--out", str(out)]) == 0
    summary = json.loads(out.read_text())
    by_q = {r["quantity"]: r for r in summary["rows"]}
    assert abs(by_q["return_probability"]["value"] - 1.0 / 3.0) < 1e-15
    assert abs(by_q["mass"]["value"] - 1.0) < 1e-15
    assert summary["spec_hash"] == by_q["mass"]["spec_hash"]
    assert summary["version"] == by_q["mass"]["version"]


def test_walk_rho_roots_stay_below_target(tmp_path):
    out = tmp_path / "rho.csv"
    assert cli.main(["walk", "rho", "--trees", "3,3", "--n", "6",
                     "--out", str(out)]) == 0
    _, rows = read_csv(out)
    roots = [r for r in rows if r["quantity"] in ("return_root", "sup_root")]
    assert roots and all(r["verdict"] == "ok" for r in roots)
    target = [r for r in rows if r["quantity"] == "rho_closed_form"]
    assert len(target) == 1


def test_graph_dump_counts(tmp_path):
    out = tmp_path / "ball.txt"
    assert cli.main(["graph", "dump", "--trees", "3", "--radii", "2",
                     "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["n_vertices"] == 10
    assert header["n_edges"] == 9
    assert len(lines) - 1 == header["n_edges"]
    assert all(len(line.split()) == 2 for line in lines[1:])


def test_report_renders_figures(tmp_path):
    csv_path = tmp_path / "tau.csv"
    assert cli.main(["perc", "tau", "--trees", "3", "--radii", "4",
                     "--p", "0.4", "--n", "2", "--replicas", "200",
                     "--out", str(csv_path)]) == 0
    walk_path = tmp_path / "dist.csv"
    assert cli.main(["walk", "dist", "--trees", "3", "--n", "4",
                     "--out", str(walk_path)]) == 0
    figdir = tmp_path / "figs"
    # repeated flags must accumulate, not overwrite
    assert cli.main(["report", "--inputs", str(csv_path),
                     "--inputs", str(walk_path),
                     "--outdir", str(figdir)]) == 0
    for png in (figdir / "tau.png", figdir / "dist.png"):
        assert png.exists() and png.stat().st_size > 1000


def test_interrupt_flushes_partial_rows(tmp_path, monkeypatch):
    def boom(cfg, ctx):
        ctx.header = ["quantity", "value", "spec_hash", "version"]
        ctx.add(quantity="first", value=1.0)
        raise KeyboardInterrupt

    monkeypatch.setitem(cli._HANDLERS, ("walk", "dist"), boom)
    out = tmp_path / "partial.csv"
    rc = cli.main(["walk", "dist", "--trees", "3", "--out", str(out)])
    assert rc == 130
    header, rows = read_csv(out)
    assert rows[0]["quantity"] == "first"
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["partial"] is True


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "treelab.cli", "constants", "--trees", "3"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0].startswith("quantity,")


def test_every_listed_subcommand_is_wired():
    expected = {
        ("constants",), ("oracle",), ("report",), ("graph", "dump"),
        ("perc", "tau"), ("perc", "chi"), ("perc", "tilted"),
        ("perc", "triangle"), ("perc", "pc"), ("perc", "check-bound"),
        ("perc", "supermult"), ("perc", "open-cond"),
        ("ising", "twopoint"), ("ising", "bubble"), ("ising", "mag"),
        ("ising", "betac"), ("ising", "exponents"),
        ("walk", "dist"), ("walk", "rho"), ("walk", "entropy"),
        ("walk", "schramm"), ("walk", "schramm-quenched"),
    }
    assert set(cli._HANDLERS) == expected
