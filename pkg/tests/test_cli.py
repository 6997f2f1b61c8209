import csv
import io
import json
import math
import re

import pytest

from fbsurf import cli
from fbsurf.errors import NoConvergence
from fbsurf.surface import read_ply_header

P112 = "0.95086,0.05806,0.33050"


@pytest.fixture(autouse=True)
def outdir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    return tmp_path


def run(*argv):
    out = io.StringIO()
    code = cli.main(list(argv), out=out)
    return code, out.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_validate_ok():
    code, out = run("validate", "--r", "0.3,0.3,0.3")
    assert code == 0 and json.loads(out)["valid"] is True


def test_malformed_radii_exit_2(capsys):
    code, _ = run("validate", "--r", "0.8,0.8,0.1")
    assert code == 2
    assert "OverlappingPair" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("r = 0.3, 0.4, 0.5\ncolour = blue\n")
    assert run("validate", "--config", str(cfg))[0] == 2


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# radii\nr = 0.8, 0.8, 0.1\n")
    assert run("validate", "--config", str(cfg))[0] == 2
    code, out = run("validate", "--config", str(cfg), "--r", "0.2,0.2,0.2")
    assert code == 0 and json.loads(out)["r"] == [0.2, 0.2, 0.2]
    code, out = run("validate", "--config", str(cfg), "--set", "r=0.1 0.2 0.3")
    assert code == 0


def test_bad_value_exit_2():
    assert run("eig", "--set", "k=three")[0] == 2
    assert run("eig", "--domain", "torus")[0] == 2


def test_eig_annulus_fixture(outdir):
    code, out = run("eig", "--domain", "annulus", "--eps", "0.3", "--metric", "plane", "--k", "6")
    assert code == 0
    table = rows(out)
    sig = [float(r["sigma"]) for r in table]
    oracle = [n * (1 - 0.3 ** (2 * n)) / (1 + 0.3 ** (2 * n)) for n in (1, 1, 2, 2, 3, 3)]
    assert max(abs(a - b) for a, b in zip(sig, oracle)) < 1e-8
    assert (outdir / "eig.csv").read_text() == out


def test_eig_full_is_min_of_sectors():
    code, out = run("eig", "--r", "0.3,0.4,0.5", "--group", "2", "--k", "1")
    assert code == 0
    table = rows(out)
    full = [float(r["sigma"]) for r in table if r["sector"] == "full"]
    sect = [float(r["sigma"]) for r in table if r["sector"] != "full"]
    assert len(sect) == 8
    assert abs(min(full) - min(sect)) < 1e-9


def test_eig_solver_failure_exit_3(monkeypatch):
    def boom(*a, **k):
        raise NoConvergence(0, "forced")
    monkeypatch.setattr(cli, "eig_rows", boom)
    assert run("eig", "--r", "0.3,0.4,0.5")[0] == 3


def test_sweep_deterministic_with_error_column(outdir):
    args = ("sweep", "--sweep-kind", "diagonal", "--grid", "4", "--set", "grid_lo=0.1",
            "--set", "grid_hi=0.85")
    assert run(*args)[0] == 0
    first = (outdir / "sweep.csv").read_bytes()
    assert run(*args)[0] == 0
    assert (outdir / "sweep.csv").read_bytes() == first
    table = rows(first.decode())
    assert [r["error"] == "" for r in table] == [True, True, True, False]
    assert "OverlappingPair" in table[-1]["error"]
    assert table[-1]["E"] == "nan"


def test_sweep_diagonal_interior_maximum(outdir):
    assert run("sweep", "--sweep-kind", "diagonal", "--grid", "7")[0] == 0
    E = [float(r["E"]) for r in rows((outdir / "sweep.csv").read_text())]
    k = max(range(len(E)), key=E.__getitem__)
    assert 0 < k < len(E) - 1


def test_sweep_ehat(outdir):
    code, _ = run("sweep", "--sweep-kind", "diagonal", "--sweep-value", "Ehat", "--grid", "2",
                  "--set", "grid_lo=0.3", "--set", "grid_hi=0.4", "--starts", "1")
    assert code == 0
    table = rows((outdir / "sweep.csv").read_text())
    assert list(table[0]) == ["r1", "r2", "r3", "E_hat", "error"]
    assert all(float(r["E_hat"]) > 0 for r in table)


def test_float_format():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.dumps({"x": [1.0, 2], "ok": True}) == '{"x": [1, 2], "ok": true}'


def test_solve_prism_cube(outdir):
    code, out = run("solve-prism", "--order", "40")
    assert code == 0
    res = json.loads(out)
    assert res["gates_passed"] and res["grad_norm"] < 1e-6
    assert res["signature"] == [2, 1, 0]
    assert read_ply_header(outdir / "prism_surface.ply")["vertices"] > 0
    assert (outdir / "search.jsonl").exists()
    code, out2 = run("export", "--result", str(outdir / "result.json"), "--order", "40",
                     "--scale-half")
    assert code == 0 and json.loads(out2)["scale_half"] is True


def test_solve_prism_anisotropic(outdir):
    code, out = run("solve-prism", "--a", "1,1,2", "--strategy", "newton", "--start", P112)
    assert code == 0
    res = json.loads(out)
    assert min(res["p"]) > 1e-3
    assert res["topology"]["boundary_loops"] == 6 and res["topology"]["genus"] == 0


def test_gate_failure_exit_4():
    assert run("export", "--kind", "prism", "--r", "0.3,0.3,0.3")[0] == 4


def test_product_export(outdir):
    code, out = run("export", "--kind", "product", "--r", "0.39,0.39,0.39", "--no-gate",
                    "--mesh-h", "0.1", "--starts", "2")
    assert code == 0
    res = json.loads(out)
    assert res["residuals"]["sphere_constraint"] < 1e-6
    info = read_ply_header(outdir / "product_surface.ply")
    assert [q for q in info["properties"] if re.fullmatch(r"c\d", q)] == [f"c{k}" for k in range(9)]


def test_output_env_override(outdir):
    assert cli.RunConfig().out_dir() == outdir
    assert math.isfinite(cli.RunConfig().grid_hi)
