import numpy as np
import pytest
import yaml

from magswarm import cli
from magswarm.config import PRESET_DIR


def write_cfg(tmp_path, name, edit):
    with open(PRESET_DIR / f"{name}.yaml") as fh:
        d = yaml.safe_load(fh)
    edit(d)
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(d))
    return str(p)


def short_track(d):
    d["track"]["t_final_s"] = 6.0


def test_normalize_outputs(tmp_path, capsys):
    assert cli.main(["normalize", "--config", "normalize", "--out", str(tmp_path)]) == 0
    s = yaml.safe_load((tmp_path / "normalization.yaml").read_text())
    assert s["beta"] == pytest.approx(53.333333, rel=1e-6)
    assert s["beta_reference"] == 55.6
    assert s["similarity_residual"] < 1e-10
    assert s["round_trip_error"] < 1e-12
    assert "53.33" in capsys.readouterr().out


def test_csv_is_versioned_and_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["normalize", "--config", "normalize", "--out", str(out)]) == 0
    text = (a / "ground_trace.csv").read_bytes()
    assert text == (b / "ground_trace.csv").read_bytes()
    assert text.startswith(b"# magswarm-run v1 ")
    cols, rows = cli.read_csv(a / "ground_trace.csv")
    assert cols[0] == "t" and rows.shape[1] == len(cols)


def test_normalize_round_trips_a_trace_file(tmp_path):
    assert cli.main(["normalize", "--config", "normalize", "--out", str(tmp_path / "a")]) == 0
    trace = tmp_path / "a" / "ground_trace.csv"
    cfg = write_cfg(tmp_path, "normalize", lambda d: d["normalize"].update(trace=str(trace)))
    assert cli.main(["normalize", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    _, x = cli.read_csv(tmp_path / "a" / "orbit_trace.csv")
    _, y = cli.read_csv(tmp_path / "b" / "orbit_trace.csv")
    assert np.allclose(x, y, rtol=0, atol=1e-15)


def test_seed_override_changes_ground_run(tmp_path):
    cli.main(["normalize", "--config", "normalize", "--out", str(tmp_path / "a")])
    cli.main(["normalize", "--config", "normalize", "--out", str(tmp_path / "b"), "--seed", "5"])
    _, x = cli.read_csv(tmp_path / "a" / "ground_trace.csv")
    _, y = cli.read_csv(tmp_path / "b" / "ground_trace.csv")
    assert not np.allclose(x, y)


def test_similarity_failure_exits_3(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise ValueError("similarity residual 1e-3 exceeds 1e-10")

    monkeypatch.setattr(cli, "build_normalization", broken)
    assert cli.main(["normalize", "--config", "normalize", "--out", str(tmp_path)]) == 3


def test_allocate_balances_and_reports(tmp_path):
    assert cli.main(["allocate", "--config", "allocation-2sat", "--out", str(tmp_path)]) == 0
    s = yaml.safe_load((tmp_path / "allocation.yaml").read_text())
    assert s["dual_lower_bound_W"] <= s["primal_power_W"] + 1e-6
    assert s["residual"] < 1e-8
    assert len(s["ripple_sup"]) == 2
    u = np.array(s["commands"])
    assert np.allclose(u[0, :3] + u[1, :3], 0)


def test_balanced_commands_have_zero_momentum_residual():
    from magswarm.allocation import momentum_residual
    from magswarm.attitude import SatelliteState, SwarmState

    rng = np.random.default_rng(3)
    swarm = SwarmState([SatelliteState(rng.normal(size=3), np.zeros(3), 0.3 * rng.normal(size=3), np.zeros(3))
                        for _ in range(3)])
    u = cli.balanced_commands(rng.normal(size=(2, 6)), swarm)
    f, tau = momentum_residual(u, swarm)
    assert np.linalg.norm(f) < 1e-12 and np.linalg.norm(tau) < 1e-12


def test_design_coil_table(tmp_path, capsys):
    assert cli.main(["design-coil", "--config", "coil-design", "--out", str(tmp_path)]) == 0
    s = yaml.safe_load((tmp_path / "design.yaml").read_text())
    assert s["feasible"]
    assert set(s["reference_comparison"]) == {"N_t", "mu_max", "Omega_coil"}
    assert "N_t" in capsys.readouterr().out


def test_infeasible_design_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, "coil-design", lambda d: d["design"].update(m_coil_max_kg=0.001))
    assert cli.main(["design-coil", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    s = yaml.safe_load((tmp_path / "o" / "design.yaml").read_text())
    assert not s["feasible"] and "mass" in s["margins"]


def test_config_errors_exit_1(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 1
    cfg = write_cfg(tmp_path, "distance-1d", lambda d: d["track"].update(bogus=1))
    assert cli.main(["simulate", "--config", cfg]) == 1
    assert "track.bogus" in capsys.readouterr().err


def test_wrong_command_for_kind_exits_1(tmp_path):
    assert cli.main(["allocate", "--config", "normalize", "--out", str(tmp_path)]) == 1


def test_model_override_is_validated(tmp_path):
    assert cli.main(["simulate", "--config", "triangle-3sat", "--model", "surrogate", "--out", str(tmp_path)]) == 1


def test_simulate_short_track(tmp_path):
    cfg = write_cfg(tmp_path, "distance-1d", short_track)
    assert cli.main(["simulate", "--config", cfg, "--model", "far", "--out", str(tmp_path / "o")]) == 0
    cols, rows = cli.read_csv(tmp_path / "o" / "run.csv")
    assert "error_ball" in cols
    assert rows[-1, cols.index("t")] <= 6.0
    s = yaml.safe_load((tmp_path / "o" / "summary.yaml").read_text())
    assert s["model"] == "far" and s["status"] == "ok"


def test_simulate_many_configs_in_parallel(tmp_path):
    a = write_cfg(tmp_path, "distance-1d", short_track)
    d = tmp_path / "b"
    d.mkdir()
    b = write_cfg(d, "distance-1d", lambda x: (short_track(x), x.update(scenario="other")))
    assert cli.main(["simulate", "--config", a, "--config", b, "--jobs", "2", "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "distance-1d" / "run.csv").exists()
    assert (tmp_path / "o" / "other" / "run.csv").exists()
