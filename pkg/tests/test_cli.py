import json
import shutil

import numpy as np
import pytest

from oracles import pairwise_min_distance
from roofmetrics import formats
from roofmetrics.cli import main
from roofmetrics.config import PipelineConfig
from roofmetrics.errors import ConfigError
from roofmetrics.geometry import PointCloud
from roofmetrics.registration import RigidTransform


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = PipelineConfig.from_dict({"density": 500.0, "icp": {"max_iterations": 7},
                                    "sections": [{"name": "A", "box": {"min": [0, 0, 0], "max": [1, 1, 1]}}]})
    back = PipelineConfig.from_dict(json.loads(cfg.to_json()))
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError, match="bogus"):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"thresholds": [0.02, 0.01]})


def test_plan_command(tmp_path, capsys):
    mission = write_json(tmp_path / "mission.json", {
        "mission": {"target_gsd": 0.0075, "front_overlap": 85, "side_overlap": 85, "speed": 5,
                    "region": {"box": {"min": [0, 0, 0], "max": [18, 11, 15]}}, "surface_elevation": 14.16,
                    "elevation_range": [1.71, 14.16]}})
    out = tmp_path / "plan.json"
    assert main(["plan", str(mission), "-o", str(out), "--csv", str(tmp_path / "plan.csv")]) == 0
    summary = json.loads(capsys.readouterr().out)
    plan = json.loads(out.read_text())
    assert summary["captures"] == sum(w["trigger"] for w in plan["waypoints"])
    assert summary["gsd_range_cm"][0] == pytest.approx(0.75)
    assert (tmp_path / "plan.json.config.json").exists()
    assert (tmp_path / "plan.csv").read_text().startswith("x,y,z,heading_deg")


def test_refuses_to_overwrite_without_force(tmp_path, capsys):
    mission = write_json(tmp_path / "m.json", {"mission": {
        "target_gsd": 0.01, "front_overlap": 80, "side_overlap": 80, "speed": 5,
        "region": {"box": {"min": [0, 0, 0], "max": [50, 50, 1]}}}})
    out = tmp_path / "plan.json"
    out.write_text("keep me")
    assert main(["plan", str(mission), "-o", str(out)]) == 1
    assert out.read_text() == "keep me"
    assert "exists" in capsys.readouterr().err
    assert main(["plan", str(mission), "-o", str(out), "--force"]) == 0
    assert out.read_text() != "keep me"


def test_json_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ply"
    bad.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nend_header\n1\n")
    rc = main(["subsample", str(bad), "-o", str(tmp_path / "o.ply"), "--json"])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert err["module"] == "formats" and err["command"] == "subsample" and err["path"] == str(bad)


def test_invalid_threads(tmp_path, capsys):
    assert main(["synth", "--mesh-out", str(tmp_path / "m.ply"), "--cloud-out", str(tmp_path / "c.ply"),
                 "--threads", "0"]) == 1


def test_synth_sample_subsample(tmp_path):
    mesh, gt = tmp_path / "scene.ply", tmp_path / "gt.ply"
    assert main(["synth", "--mesh-out", str(mesh), "--cloud-out", str(gt), "--density", "30"]) == 0
    m = formats.read_mesh(mesh)
    assert len(formats.read_cloud(gt)) == round(m.area * 30)
    sampled = tmp_path / "s.ply"
    assert main(["sample", str(mesh), "-o", str(sampled), "--density", "40"]) == 0
    sub = tmp_path / "sub.ply"
    assert main(["subsample", str(sampled), "-o", str(sub), "--min-distance", "0.1"]) == 0
    pts = formats.read_cloud(sub).points
    assert len(pts) < len(formats.read_cloud(sampled))
    # positions are stored as float32, so allow for rounding
    assert pairwise_min_distance(pts) >= 0.1 - 1e-5


def test_degrade_align_compare(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 4, (2, 20000))
    z = 0.3 * np.sin(2 * x) + 0.2 * np.cos(3 * y)
    ref = tmp_path / "ref.ply"
    formats.write_cloud(PointCloud(np.column_stack([x, y, z])), ref, precision="double")
    cfg = write_json(tmp_path / "cfg.json", {"ply_precision": "double",
                                             "icp": {"max_iterations": 200, "convergence_threshold": 1e-10,
                                                     "max_correspondence_distance": 1.0}})
    moved, t_out = tmp_path / "moved.ply", tmp_path / "truth.json"
    assert main(["degrade", str(ref), "-o", str(moved), "--max-angle", "3", "--max-translation", "0.1",
                 "--dropout", "0.5", "--transform-out", str(t_out), "--config", str(cfg)]) == 0
    truth = formats.read_transform(t_out)
    aligned, est = tmp_path / "aligned.ply", tmp_path / "est.json"
    assert main(["align", str(moved), str(ref), "-o", str(aligned), "--transform-out", str(est),
                 "--config", str(cfg)]) == 0
    back = formats.read_transform(est).compose(truth)
    src = formats.read_cloud(ref).points
    assert np.sqrt(np.mean(np.sum((back.apply(src) - src) ** 2, axis=1))) < 1e-6
    capsys.readouterr()
    curve = tmp_path / "curve.csv"
    assert main(["compare", str(aligned), str(ref), "--cloud-out", str(tmp_path / "c2c.ply"),
                 "--curve-out", str(curve), "--config", str(cfg)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["all"]["headline"]["precision_pct"] == 100.0
    scalars = formats.read_cloud(tmp_path / "c2c.ply").scalars
    assert scalars is not None and scalars.max() < 1e-4


def test_compare_per_section(tmp_path, capsys):
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 2, (2, 4000)).T, np.zeros(4000)])
    ref = tmp_path / "ref.ply"
    formats.write_cloud(PointCloud(pts), ref)
    cfg = write_json(tmp_path / "cfg.json", {"sections": [
        {"name": "west", "box": {"min": [0, 0, -1], "max": [1, 2, 1]}},
        {"name": "east", "polygon": [[1, 0], [2, 0], [2, 2], [1, 2]], "z_range": [-1, 1]}]})
    assert main(["compare", str(ref), str(ref), "--cloud-out", str(tmp_path / "c.ply"),
                 "--curve-out", str(tmp_path / "curve.csv"), "--config", str(cfg)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"west", "east"}
    assert (tmp_path / "curve_west.csv").exists() and (tmp_path / "c_east.ply").exists()


def test_report_from_table(tmp_path, fixtures_dir, capsys):
    table = tmp_path / "scores.csv"
    shutil.copy(fixtures_dir / "field_fscores.csv", table)
    out = tmp_path / "ranked.csv"
    assert main(["report", "--table", str(table), "-o", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["mean_rank"][5] == pytest.approx(1.6)
    summary = (tmp_path / "ranked_summary.csv").read_text().splitlines()
    assert summary[0] == "flight,mean_fscore,mean_rank" and len(summary) == 10


def test_report_with_curves_writes_svg(tmp_path, capsys):
    paths = []
    for k, f in enumerate((80.0, 90.0)):
        p = tmp_path / f"c{k}.csv"
        p.write_text("threshold_cm,precision_pct,recall_pct,fscore_pct\n0.0,0.0,0.0,0.0\n"
                     f"4.0,{f},{f},{f}\n")
        paths.append(p)
    out = tmp_path / "ranked.csv"
    assert main(["report", "--curve", f"F1:A={paths[0]}", "--curve", f"F2:A={paths[1]}", "-o", str(out)]) == 0
    assert (tmp_path / "precision_A.svg").read_text().startswith("<svg")
    rows = formats.read_fscore_csv(out)
    assert rows == [("F1", "A", 80.0), ("F2", "A", 90.0)]


def test_report_rejects_incomplete_matrix(tmp_path):
    t = tmp_path / "t.csv"
    t.write_text("flight,section,fscore\nF1,A,80\nF2,B,70\n")
    assert main(["report", "--table", str(t), "-o", str(tmp_path / "r.csv")]) == 1


def test_evaluate_mesh_against_cloud(tmp_path, capsys):
    mesh, gt = tmp_path / "scene.ply", tmp_path / "gt.ply"
    assert main(["synth", "--mesh-out", str(mesh), "--cloud-out", str(gt), "--density", "150"]) == 0
    cfg = write_json(tmp_path / "cfg.json", {"density": 150.0, "subsample_min_distance": 0.02})
    capsys.readouterr()
    out = tmp_path / "eval"
    assert main(["evaluate", str(mesh), str(gt), "-o", str(out), "--config", str(cfg)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["all"]["headline"]["fscore_pct"] > 95.0
    for name in ("aligned.ply", "transform.json", "c2c.ply", "curve.csv", "c2c_gt.ply"):
        assert (out / name).exists()
    t = formats.read_transform(out / "transform.json")
    assert np.allclose(t.rotation, np.eye(3), atol=1e-3)
    assert isinstance(t, RigidTransform)
