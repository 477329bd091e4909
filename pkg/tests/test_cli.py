import numpy as np
import pytest

from conftest import unit_right_triangle
from stochshape.cli import EXIT_ABORT, EXIT_OK, EXIT_USAGE, main
from stochshape.mesh import TriMesh, read_mesh, write_mesh
from stochshape.output import read_history_csv
from stochshape.optimizer import IterationRecord

SMALL_RUN = """\
mesh = grid(10) circle(0.5, 0.5, 0.2)
target = grid(16) ellipse(0.55, 0.5, 0.25, 0.17, 0.3)
iters = 4
step.rule = robbins_monro
step.alpha = 100
kappa0 = trunc_normal(1.5, 0.2, 1, 2)
g = trunc_normal(10, 0.2, 9, 11)
estimate.m = 2
snapshot.every = 2
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_mesh_gen_counts(tmp_path, capsys):
    path = tmp_path / "m.mesh"
    code, out, _ = run(capsys, "mesh-gen", "--resolution", "39", "--circle", "0.5,0.5,0.25", "--out", str(path))
    assert code == EXIT_OK
    mesh = read_mesh(path)
    assert mesh.n_triangles == 3042
    assert "3042 triangles" in out and "1 inclusions" in out


def test_mesh_gen_bad_numbers(tmp_path, capsys):
    code, _, err = run(capsys, "mesh-gen", "--resolution", "10", "--circle", "0.5,x,0.2", "--out", str(tmp_path / "m"))
    assert code == EXIT_USAGE and "--circle" in err


def test_mesh_gen_invalid_inclusion(tmp_path, capsys):
    code, _, err = run(capsys, "mesh-gen", "--resolution", "10", "--circle", "0.1,0.5,0.3", "--out", str(tmp_path / "m"))
    assert code == EXIT_USAGE and err.startswith("error:")


def test_quality_report_csv(tmp_path, capsys):
    mesh = tmp_path / "tri.mesh"
    write_mesh(unit_right_triangle(), mesh)
    csv = tmp_path / "q.csv"
    code, out, _ = run(capsys, "quality-report", str(mesh), "--csv", str(csv))
    assert code == EXIT_OK
    assert "aspect ratio max: 1.207107" in out
    rows = csv.read_text().splitlines()
    assert rows[0] == "triangle,region,aspect_ratio"
    assert float(rows[1].split(",")[2]) == pytest.approx((1 + 2**0.5) / 2, rel=1e-14)


def test_quality_report_flags_inverted_mesh(tmp_path, capsys):
    mesh = tmp_path / "cw.mesh"
    write_mesh(TriMesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]], [0], [[0, 1], [1, 2], [2, 0]]), mesh)
    code, out, _ = run(capsys, "quality-report", str(mesh))
    assert code == EXIT_ABORT and "inverted: 1" in out


def test_generate_target(tmp_path, capsys):
    mesh = tmp_path / "m.mesh"
    main(["mesh-gen", "--resolution", "10", "--circle", "0.5,0.5,0.2", "--out", str(mesh)])
    code, _, _ = run(capsys, "generate-target", "--mesh", str(mesh), "--g", "0", "--out", str(tmp_path / "t"))
    assert code == EXIT_OK
    vals = [float(v) for v in (tmp_path / "t.values").read_text().splitlines() if not v.startswith("#")]
    assert len(vals) == read_mesh(mesh).n_vertices and not any(vals)


def test_generate_target_missing_mesh(tmp_path, capsys):
    code, _, err = run(capsys, "generate-target", "--mesh", str(tmp_path / "nope.mesh"), "--out", str(tmp_path / "t"))
    assert code == EXIT_USAGE and "nope.mesh" in err


def test_optimize_outputs_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN, encoding="utf-8")
    for name in ("a", "b"):
        code, out, _ = run(capsys, "optimize", str(cfg), "--seed", "7", "--out", str(tmp_path / name))
        assert code == EXIT_OK and "status: completed" in out
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
    rows = read_history_csv(a / "history.csv")
    assert len(rows) == 4 and list(rows[0]) == list(IterationRecord.CSV_FIELDS)
    assert [r["iter"] for r in rows] == ["1", "2", "3", "4"]
    vtk = (a / "final.vtk").read_text().splitlines()
    assert vtk[0] == "# vtk DataFile Version 3.0" and "DATASET UNSTRUCTURED_GRID" in vtk
    m = read_mesh(a / "final.mesh").n_triangles
    i = vtk.index(f"CELL_TYPES {m}")
    assert set(vtk[i + 1 : i + 1 + m]) == {"5"}
    snaps = sorted(p.name for p in (a / "snapshots").iterdir())
    assert snaps == ["iter_00002.mesh", "iter_00002.vtk", "iter_00004.mesh", "iter_00004.vtk"]
    snap = (a / "snapshots" / "iter_00002.vtk").read_text()
    for field in ("SCALARS y double", "SCALARS p double", "SCALARS mu double", "VECTORS V double"):
        assert field in snap
    summary = (a / "summary.txt").read_text()
    assert "status = completed" in summary and "j_hat = " in summary


def test_optimize_seed_changes_history(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN, encoding="utf-8")
    main(["optimize", str(cfg), "--seed", "7", "--out", str(tmp_path / "a")])
    main(["optimize", str(cfg), "--seed", "8", "--out", str(tmp_path / "b")])
    capsys.readouterr()
    assert (tmp_path / "a/history.csv").read_bytes() != (tmp_path / "b/history.csv").read_bytes()


def test_optimize_zero_iterations_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN, encoding="utf-8")
    code, _, err = run(capsys, "optimize", str(cfg), "--iters", "0", "--out", str(tmp_path / "o"))
    assert code == EXIT_USAGE and "iters" in err


def test_optimize_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN + "stepsize = 3\n", encoding="utf-8")
    code, _, err = run(capsys, "optimize", str(cfg), "--out", str(tmp_path / "o"))
    assert code == EXIT_USAGE
    assert "stepsize" in err and "line 10" in err


def test_optimize_without_config(capsys):
    code, _, err = run(capsys, "optimize")
    assert code == EXIT_USAGE and "config" in err


def test_unguarded_run_destroys_mesh(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_RUN.replace("step.alpha = 100", "step.alpha = 2000"), encoding="utf-8")
    code, out, _ = run(capsys, "optimize", str(cfg), "--no-guard", "--out", str(tmp_path / "o"))
    assert code == EXIT_ABORT and "status: mesh_destroyed" in out
    code, out, _ = run(capsys, "quality-report", str(tmp_path / "o" / "final.mesh"))
    assert code == EXIT_ABORT


def test_presets_listed_and_printed(capsys):
    code, out, _ = run(capsys, "optimize", "--list-presets")
    assert code == EXIT_OK and "multiple-shapes" in out and "damped-armijo" in out
    code, out, _ = run(capsys, "optimize", "--preset", "damped-armijo", "--print-config")
    assert code == EXIT_OK and "step.rule" in out and "damped_armijo" in out
    code, _, err = run(capsys, "optimize", "--preset", "nope")
    assert code == EXIT_USAGE and "nope" in err


def test_bad_arguments_are_usage_errors(capsys):
    assert main(["mesh-gen"]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK
    capsys.readouterr()


def test_vtk_quality_zero_for_inverted(tmp_path):
    from stochshape.output import format_vtk

    mesh = TriMesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]], [0], [[0, 1], [1, 2], [2, 0]])
    text = format_vtk(mesh, {"y": np.zeros(3)})
    lines = text.splitlines()
    assert lines[lines.index("SCALARS quality double 1") + 2] == "0.0"
