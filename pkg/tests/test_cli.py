import csv
import io

import pytest

from gausscool.cli import main
from gausscool.harness import MARGIN_COLUMNS, header


def run(capsys, *argv, config=None, tmp_path=None):
    args = list(argv)
    if config is not None:
        path = tmp_path / "run.cfg"
        path.write_text(config)
        args += ["--config", str(path)]
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def kv(text):
    return dict(line.split(" = ", 1) for line in text.strip().splitlines())


def rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_steady_defaults(capsys):
    code, out, _ = run(capsys, "steady")
    assert code == 0
    fields = kv(out)
    assert float(fields["n_min"]) == pytest.approx(0.39, abs=0.01)
    for col, _ in MARGIN_COLUMNS:
        assert float(fields[col]) >= -1e-9


def test_steady_without_measurement(capsys, tmp_path):
    code, out, _ = run(capsys, "steady", config="k_over_omega = 0\nfeedback.g = 0", tmp_path=tmp_path)
    assert code == 0
    fields = kv(out)
    for name in ("i_qct", "i_qci_s", "s_ba", "q_dot"):
        assert float(fields[name]) == 0.0


def test_marginal_system_errors(capsys, tmp_path):
    cfg = "gamma_over_omega = 0\nnbar = 0\nfeedback.g = 0"
    code, _, err = run(capsys, "steady", config=cfg, tmp_path=tmp_path)
    assert code == 2 and "NotHurwitz" in err


def test_bad_config_errors(capsys, tmp_path):
    code, _, err = run(capsys, "steady", config="eta = 1.5", tmp_path=tmp_path)
    assert code == 2 and "eta" in err


def test_sweep_csv_round_trip(capsys):
    code, out, _ = run(capsys, "sweep", "--points", "7")
    assert code == 0
    table = rows(out)
    assert table[0] == header("g")
    assert len(table) == 8
    for row in table[1:]:
        for cell in row:
            if cell:
                assert format(float(cell), ".17g") == cell


def test_steady_equals_sweep_row(capsys, tmp_path):
    out_csv = tmp_path / "steady.csv"
    code, _, _ = run(capsys, "steady", "--out", str(out_csv))
    assert code == 0
    steady = rows(out_csv.read_text())
    _, sweep, _ = run(capsys, "sweep")
    last = rows(sweep)[-1]
    assert steady[0] == header("g")
    assert steady[1] == last


def test_flagged_rows_exit_one(capsys, tmp_path):
    cfg = "feedback.b_x = -2\nsweep.min = 0.1\nsweep.max = 10\nsweep.points = 5"
    code, out, err = run(capsys, "sweep", config=cfg, tmp_path=tmp_path)
    assert code == 1
    table = rows(out)
    assert table[1][1] == "nan" and "NotHurwitz" in err
    assert table[-1][1] != "nan"


def test_compare_single_scheme_equals_sweep(capsys):
    _, sweep, _ = run(capsys, "sweep", "--points", "5", "--scheme", "dual")
    _, compare, _ = run(capsys, "compare", "--points", "5", "--scheme", "dual")
    assert sweep == compare


def test_compare_three_schemes(capsys):
    code, out, _ = run(capsys, "compare", "--points", "3")
    assert code == 0
    table = rows(out)
    assert table[0] == ["scheme", *header("g")]
    n_min = {r[0]: float(r[3]) for r in table[1:]}
    assert n_min["qnd"] == pytest.approx(0.39, abs=0.01)
    assert n_min["homodyne"] == pytest.approx(0.016, abs=0.002)
    assert n_min["dual"] == pytest.approx(0.63, abs=0.01)
    i_qct = {r[0]: float(r[5]) for r in table[1:]}
    assert i_qct["qnd"] > i_qct["dual"]


def test_sweep_flags(capsys):
    _, out, _ = run(capsys, "sweep", "--from", "1", "--to", "3", "--points", "3", "--no-log")
    assert [float(r[0]) for r in rows(out)[1:]] == [1.0, 2.0, 3.0]


TRAJ_CFG = "sim.n_traj = 600\nsim.n_steps = 2000\nsim.dt = 1e-3\nsim.burn_in = 500\n"


def test_trajectories_byte_identical_across_workers(capsys, tmp_path):
    outs = []
    for workers in ("1", "3"):
        target = tmp_path / f"w{workers}.csv"
        code, _, _ = run(capsys, "trajectories", "--workers", workers, "--seed", "4", "--out", str(target),
                         config=TRAJ_CFG, tmp_path=tmp_path)
        assert code == 0
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]
    table = rows(outs[0].decode())
    assert table[0] == ["quantity", "sample", "se", "prediction", "z"]
    assert [r[0] for r in table[1:4]] == ["sxx_m", "spp_m", "sxp_m"]


def test_trajectories_empty_sample(capsys, tmp_path):
    cfg = "sim.n_traj = 1\nsim.n_steps = 10\nsim.burn_in = 10\nsim.dt = 1e-3"
    code, _, err = run(capsys, "trajectories", config=cfg, tmp_path=tmp_path)
    assert code == 2 and "EmptySample" in err


def test_trajectory_dump(capsys, tmp_path):
    dump = tmp_path / "dump"
    cfg = TRAJ_CFG.replace("600", "3") + f"sim.dump_dir = {dump}\nsim.dump_count = 2\n"
    code, _, _ = run(capsys, "trajectories", config=cfg, tmp_path=tmp_path)
    assert code == 0
    assert sorted(p.name for p in dump.iterdir()) == ["trajectory_000000.csv", "trajectory_000001.csv"]


def test_report_directory(capsys, tmp_path):
    out = tmp_path / "rep"
    code, _, _ = run(capsys, "report", "--points", "6", "--out", str(out))
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["compare_schemes.csv", "summary.txt", "sweep_direct.csv", "sweep_kalman_x_only.csv",
                     "sweep_kalman_xp.csv"]
    assert "cooling limits" in (out / "summary.txt").read_text()
