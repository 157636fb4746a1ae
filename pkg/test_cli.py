import json

from app.cli import build_parser, main
from app.envelope import load_envelope
from app.pipeline import PLOT_FILE, write_outputs


def test_parser_defaults():
    args = build_parser().parse_args(["plan-envelope", "--generate", "3", "--out", "env.txt"])
    assert args.generate == 3 and args.p == 4 and args.rho == -15.0


def test_tracks_command(tmp_path, capsys):
    assert main(["tracks", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "oval.csv").exists()
    assert "trail.csv" in capsys.readouterr().out


def test_plan_envelope_command(tmp_path):
    out = tmp_path / "env.txt"
    report = tmp_path / "report.json"
    road = tmp_path / "road.csv"
    code = main(["plan-envelope", "--generate", "3", "--stations", "30", "--out", str(out), "--report", str(report), "--save-road", str(road)])
    assert code == 0
    env = load_envelope(out)
    rows = json.loads(report.read_text())
    assert len(rows) == len(env.blocks)
    assert all(r["A_out"] <= 1e-6 * 4 * r["L"] * r["W"] for r in rows)
    assert main(["plan-envelope", "--road", str(road), "--out", str(tmp_path / "again.txt")]) == 0


def test_summarize_and_render_commands(tmp_path, make_record, oval, capsys):
    run = write_outputs(make_record(name="demo"), tmp_path / "runs" / "demo", oval)
    summary = tmp_path / "summary.json"
    assert main(["summarize", str(tmp_path / "runs"), "--json", str(summary)]) == 0
    assert "demo" in capsys.readouterr().out
    assert json.loads(summary.read_text())["demo"]["status"] == "completed"
    svg = tmp_path / "demo.svg"
    assert main(["render", str(run), "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<?xml")
    assert (run / PLOT_FILE).exists()


def test_compare_planners_command(capsys):
    assert main(["compare-planners", "--seeds", "1", "--stations", "30"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["roads"] == 1
    assert out["runs"][0]["heuristic_blocks"] >= 1


def test_errors_map_to_exit_codes(tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "run")]) == 1
    assert main(["summarize", str(tmp_path)]) == 1
