import csv
import math

import numpy as np
import pytest

from tesopt import io
from tesopt.cli import main

from helpers import coarse_config


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def l1r_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = coarse_config(tmp)
    out = tmp / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    return out


def test_run_writes_all_artifacts(l1r_run):
    for name in ("protocol.csv", "metrics.csv", "field.vtk", "iterations.log"):
        assert (l1r_run / name).stat().st_size > 0
    metrics = _rows(l1r_run / "metrics.csv")
    assert len(metrics) == 1 and metrics[0]["method"] == "L1R"
    assert list(metrics[0]) == ["scenario", "method", "cd_a", "nontarget_mean", "cd_t", "par",
                                "focality_ratio"]


def test_protocols_are_zero_sum_and_within_budget(l1r_run):
    rows = _rows(l1r_run / "protocol.csv")
    assert len(rows) == 16
    raw = [float(r["current_mA"]) for r in rows]
    applied = [float(r["rescaled_mA"]) for r in rows]
    assert abs(math.fsum(raw)) <= 1e-12 and abs(math.fsum(applied)) <= 1e-12
    assert sum(abs(a) for a in applied) == pytest.approx(4.0, abs=1e-12)


def test_log_and_field(l1r_run):
    log = (l1r_run / "iterations.log").read_text().splitlines()
    assert log[0] == "# method L1R" and "converged True" in log[1]
    assert log[2] == "k objective primal_I_z primal_BI_y step_norm"
    data = io.read_vtk_cell_data(l1r_run / "field.vtk")
    assert {"omega", "target", "absJ_L1R", "J_L1R", "compartment"} <= set(data)
    assert data["target"].sum() == 1


def test_m2e_mode_has_two_rows(tmp_path):
    cfg = coarse_config(tmp_path, "tangential_m2e")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    metrics = _rows(tmp_path / "o" / "metrics.csv")
    assert [r["method"] for r in metrics] == ["L1R", "M2E"]
    m2e = [float(r["rescaled_mA"]) for r in _rows(tmp_path / "o" / "protocol.csv") if r["method"] == "M2E"]
    assert sorted(m2e)[0] == -1.0 and sorted(m2e)[-1] == 1.0 and np.count_nonzero(m2e) == 2


def test_missing_conductivity_exit_code(tmp_path, capsys):
    cfg = coarse_config(tmp_path, **{"csf = 1.79\n": ""})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "conductivities.csf" in err and "'csf'" in err


def test_non_converged_run_exit_code(tmp_path):
    cfg = coarse_config(tmp_path, **{"max_iter = 10000": "max_iter = 5"})
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out", str(out)]) == 2
    assert (out / "metrics.csv").exists()
    assert "converged False" in (out / "iterations.log").read_text()


def test_save_matrix(tmp_path):
    cfg = coarse_config(tmp_path, **{'formats = ["csv", "vtk"]': 'formats = ["csv", "vtk", "matrix"]'})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    B, d, n, s = io.load_transfer_matrix(tmp_path / "o" / "transfer.bin")
    assert (d, s) == (2, 16) and B.shape == (2 * n, 15)


def test_sweep_single_target(tmp_path):
    cfg = coarse_config(tmp_path)
    assert main(["sweep", str(cfg), "--targets", "1", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 2 and rows[1]["target"] == "average"
    for key in ("delta", "iterations", "total_variation_mA"):
        assert float(rows[0][key]) == pytest.approx(float(rows[1][key]))


def test_sweep_ring_shape(tmp_path):
    cfg = coarse_config(tmp_path, **{"max_iter = 10000": "max_iter = 200"})
    main(["sweep", str(cfg), "--targets", "8", "--orientation", "tangential", "--out", str(tmp_path)])
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 9
    assert [r["target"] for r in rows[:8]] == [str(j) for j in range(8)]
    assert rows[8]["target"] == "average"
    angles = [float(r["angle_deg"]) for r in rows[:8]]
    assert len(set(np.round(angles))) == 8


def test_sweep_over_epsilon(tmp_path):
    # the largest bound needs about 14k iterations on the coarse grid
    cfg = coarse_config(tmp_path, **{"max_iter = 10000": "max_iter = 30000"})
    assert main(["sweep", str(cfg), "--targets", "1", "--epsilons", "1e-4,1e-3,1e-2", "--out", str(tmp_path)]) == 0
    rows = [r for r in _rows(tmp_path / "sweep.csv") if r["target"] == "average"]
    norms = [float(r["total_variation_mA"]) for r in rows]
    assert [float(r["epsilon"]) for r in rows] == [1e-4, 1e-3, 1e-2]
    assert norms[0] < norms[1] < norms[2]


def test_sweep_argument_errors(tmp_path):
    cfg = coarse_config(tmp_path)
    assert main(["sweep", str(cfg), "--targets", "0"]) == 1
    assert main(["sweep", str(cfg), "--epsilons", "a,b"]) == 1
    assert main(["sweep", str(cfg), "--epsilons", "-1"]) == 1


def test_toy_command(capsys):
    assert main(["--seed", "3", "toy"]) == 0
    out = capsys.readouterr().out
    admm = float(out.splitlines()[0].split()[2])
    ref = float(out.splitlines()[1].split()[2])
    assert admm == pytest.approx(ref, rel=1e-2)
