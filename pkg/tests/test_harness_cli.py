import io
import json

import numpy as np
import numpy.testing as npt
import pytest

from emibddc import cli
from emibddc.assembly import ModelParams, assemble_rhs, MembraneState
from emibddc.errors import ConfigError
from emibddc.harness import (
    CSV_HEADER,
    ExperimentConfig,
    ResultRow,
    imex_rhs,
    polylog_model,
    random_rhs,
    run_solve,
    rows_to_string,
    write_csv,
    write_model_csv,
)


TINY = {"mesh": {"cells_x": 1, "cells_y": 1, "cells_z": 1}, "variants": ["vef"]}


def test_csv_header_is_frozen():
    assert CSV_HEADER == (
        "cells",
        "subdomains",
        "global_dofs",
        "primal_space",
        "iterations",
        "kappa_est",
        "coarse_dim",
        "solve_ms",
        "seed",
        "sigma_summary",
    )


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_dict({"tolerance": 1e-6})
    with pytest.raises(ConfigError, match="mesh"):
        ExperimentConfig.from_dict({"mesh": {"cell_count": 2}})
    with pytest.raises(ConfigError, match="params"):
        ExperimentConfig.from_dict({"params": {"dt": 0.1}})


def test_from_dict_converts_containers():
    cfg = ExperimentConfig.from_dict(
        {
            "variants": ["ve"],
            "grids": [[2, 2, 1], [2, 2, 2]],
            "params": {"sigma": [20, 3, 3]},
            "levels": [0, 1],
        }
    )
    assert cfg.variants == ("ve",)
    assert cfg.grids == ((2, 2, 1), (2, 2, 2))
    assert cfg.params.sigma == (20.0, 3.0, 3.0)
    assert cfg.levels == (0, 1)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "scaling"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"sample_count": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"rhs": "sinusoid"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"variants": ["vem"]})


def test_result_row_formatting():
    row = ResultRow(
        cells="2x1x1",
        subdomains=3,
        global_dofs=362,
        primal_space="vef",
        iterations=12,
        kappa_est=3.14159265358979,
        coarse_dim=20,
        solve_ms=12.3456,
        seed=7,
        sigma_summary="extra=20|intra_min=3|intra_max=3",
    )
    fields = row.as_csv()
    assert fields[0] == "2x1x1"
    assert fields[5] == "3.141592654"  # ten significant digits
    assert fields[7] == "12.346"
    assert len(fields) == len(CSV_HEADER)


def test_problem_helpers(problem_2cell):
    assert problem_2cell.cells_label == "2x1x1"
    assert problem_2cell.sigma_summary() == "extra=20|intra_min=3|intra_max=3"
    g = problem_2cell.kernel_vector()
    npt.assert_allclose(np.linalg.norm(g), 1.0, rtol=1e-14)
    assert np.ptp(g) == 0.0  # constant direction


def test_random_rhs_is_compatible_and_seeded(problem_1cell):
    f1 = random_rhs(problem_1cell, np.random.default_rng(99))
    f2 = random_rhs(problem_1cell, np.random.default_rng(99))
    npt.assert_array_equal(f1, f2)
    assert abs(f1.sum()) < 1e-10 * np.linalg.norm(f1)


def test_imex_rhs_matches_assembly(problem_1cell):
    rng = np.random.default_rng(7)
    u_prev = rng.standard_normal(problem_1cell.dofmap.n_global)
    f = imex_rhs(problem_1cell, u_prev=u_prev)
    direct = assemble_rhs(
        problem_1cell.mesh,
        problem_1cell.topo,
        problem_1cell.dofmap,
        problem_1cell.params,
        u_prev,
        MembraneState.zeros(problem_1cell.topo),
    )
    npt.assert_allclose(f, direct, atol=1e-14)
    # the resting default has nothing to relax: zero load
    npt.assert_allclose(imex_rhs(problem_1cell), 0.0, atol=1e-15)


def test_polylog_model_intersects_first_point():
    model0 = polylog_model(5.0, 4, 4)
    npt.assert_allclose(model0, 5.0, rtol=1e-14)
    # doubling H/h raises the bound by ((1+log 8)/(1+log 4))^2
    expected = 5.0 * ((1 + np.log(8)) / (1 + np.log(4))) ** 2
    npt.assert_allclose(polylog_model(5.0, 4, 8), expected, rtol=1e-14)


def test_solve_rows_deterministic_modulo_timing():
    cfg = ExperimentConfig.from_dict(dict(TINY, seed=123))
    rows_a = run_solve(cfg)
    rows_b = run_solve(cfg)

    def scrub(rows):
        out = []
        for r in rows:
            f = list(r.as_csv())
            f[7] = "-"  # solve_ms is wall-clock
            out.append(",".join(f))
        return out

    assert scrub(rows_a) == scrub(rows_b)


def test_write_csv_and_rows_to_string(tmp_path):
    row = ResultRow("1x1x1", 2, 193, "vef", 5, 2.0, 2, 1.0, 0, "extra=20|intra_min=3|intra_max=3")
    path = tmp_path / "out.csv"
    write_csv([row], path)
    text = path.read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert text == rows_to_string([row])
    buf = io.StringIO()
    write_csv([row], buf)
    assert buf.getvalue() == text


def test_write_model_csv(tmp_path):
    model = [
        {"refinement": 0, "hh": 4, "primal_space": "vef", "kappa_est": 2.0, "polylog_model": 2.0}
    ]
    path = tmp_path / "model.csv"
    write_model_csv(model, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "refinement,hh,primal_space,kappa_est,polylog_model"
    assert len(lines) == 2


# ---------------------------------------------------------------- CLI


def test_cli_solve_exit_zero(tmp_path, capsys):
    out = tmp_path / "solve.csv"
    rc = cli.main(
        ["solve", "--set", "mesh.cells_x=1", "--variant", "vef", "--out", str(out)]
    )
    assert rc == 0
    text = out.read_text()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "[vef]" in capsys.readouterr().out


def test_cli_unknown_config_key_exits_two(capsys):
    rc = cli.main(["solve", "--set", "mesh.bogus=3"])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_bad_set_syntax_exits_two(capsys):
    rc = cli.main(["solve", "--set", "mesh.cells_x"])
    assert rc == 2


def test_cli_unknown_experiment_exits_two(capsys):
    rc = cli.main(["experiment", "warp-speed"])
    assert rc == 2


def test_cli_unknown_command_exits_two(capsys):
    rc = cli.main(["transmogrify"])
    assert rc == 2


def test_cli_check_failure_exits_one(capsys):
    # a single isolated cell has no junctions: the reduced primal space is
    # empty and building the preconditioner must fail as a check error
    rc = cli.main(
        ["experiment", "verify", "--set", "mesh.cells_x=1", "--variant", "ve"]
    )
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_cli_config_file_roundtrip(tmp_path, capsys):
    cfg = {
        "experiment": "solve",
        "mesh": {"cells_x": 1, "cells_y": 1, "cells_z": 1},
        "variants": ["vef"],
        "tol": 1e-6,
        "seed": 3,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["solve", "--config", str(path)]) == 0
    # malformed file
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", "--config", str(bad)]) == 2
    # not an object
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    assert cli.main(["solve", "--config", str(arr)]) == 2
    # missing file
    assert cli.main(["solve", "--config", str(tmp_path / "nope.json")]) == 2


def test_cli_mesh_writes_vtk(tmp_path, capsys):
    out = tmp_path / "m.vtk"
    rc = cli.main(["mesh", "--set", "mesh.cells_x=1", "--out", str(out)])
    assert rc == 0
    assert out.exists()
    assert "substructures" in capsys.readouterr().out


def test_cli_seed_and_tol_override(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    argv = ["solve", "--set", "mesh.cells_x=1", "--variant", "vef", "--tol", "1e-4"]
    assert cli.main(argv + ["--seed", "11", "--out", str(out_a)]) == 0
    assert cli.main(argv + ["--seed", "11", "--out", str(out_b)]) == 0
    scrub = lambda p: [
        ",".join(line.split(",")[:7] + line.split(",")[8:])
        for line in p.read_text().splitlines()
    ]
    assert scrub(out_a) == scrub(out_b)
