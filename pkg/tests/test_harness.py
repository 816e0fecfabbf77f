import json
import struct

import numpy as np
import pytest

from clvda.enkf import ObservationModel, generate_observations
from clvda.errors import BlowUpError, ValidationError
from clvda.ginelli import GinelliSchedule, compute_lyapunov
from clvda.harness import io
from clvda.harness.cli import main
from clvda.harness.config import parse_config
from clvda.harness.experiment import ANGLE_COLUMNS, EXPONENT_COLUMNS, PA_COLUMNS, run_experiment
from clvda.harness.seeds import derived_seed, stream
from clvda.models import ModelSpec, integrate_trajectory

SMALL = """
[experiment]
name = small
seed = 11
[model]
kind = L63
[trajectory]
dt = 0.01
save_interval = 0.01
spinup = 5
forward_transient = 2
window = 1
backward_transient = 2
[ginelli]
l = 1
[perturbed]
sigmas = 0.0, 0.5
[assimilated]
mus = 0.5
operator = y
burn_in = 50
[metrics]
subspace_dims = 1, 2
random_realizations = 10
"""


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.ini"
    path.write_text(SMALL)
    return path


@pytest.fixture(scope="module")
def small_run(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["experiment", "--config", str(small_cfg), "--out", str(out)]) == 0
    return out


def test_trajectory_container_round_trip(tmp_path, rng):
    tr = integrate_trajectory(ModelSpec.lorenz96(8), rng.standard_normal(8), 1.0, 2.0, 0.01, 0.05)
    io.save_trajectory(tmp_path / "t.traj", tr)
    back = io.load_trajectory(tmp_path / "t.traj")
    assert back.model == tr.model and back.save_interval == tr.save_interval
    assert np.array_equal(back.states, tr.states)
    raw = (tmp_path / "t.traj").read_bytes()
    assert raw[:8] == b"CLVDABIN"
    assert struct.unpack_from("<II", raw, 8) == (1, io.KIND_TRAJECTORY)


def test_lyapunov_and_observation_round_trip(tmp_path):
    tr = integrate_trajectory(ModelSpec.lorenz63(), np.ones(3), 5.0, 3.0, 0.01, 0.01)
    ly = compute_lyapunov(tr, GinelliSchedule(1, 100, 100, 100, 0.01))
    io.save_lyapunov(tmp_path / "a.lyap", ly)
    back = io.load_lyapunov(tmp_path / "a.lyap")
    for f in ("exponents", "blv", "clv", "coeffs", "sample_indices", "times"):
        assert np.array_equal(getattr(back, f), getattr(ly, f))
    assert back.schedule == ly.schedule
    obs = generate_observations(tr, ObservationModel.preset("y", 3, 0.4, 0.02), 3)
    io.save_observations(tmp_path / "o.obs", obs)
    ob = io.load_observations(tmp_path / "o.obs")
    assert np.array_equal(ob.values, obs.values) and ob.obs_model.noise_std == 0.4
    with pytest.raises(ValidationError):
        io.load_trajectory(tmp_path / "a.lyap")


def test_table_writer_refuses_nan(tmp_path):
    with pytest.raises(ValidationError):
        io.write_table(tmp_path / "x.csv", ["a"], [(float("nan"),)], {})


def test_config_errors_are_collected():
    bad = SMALL.replace("l = 1", "l = 0").replace("mus = 0.5", "mus = -1").replace(
        "subspace_dims = 1, 2", "subspace_dims = 1, 7")
    with pytest.raises(ValidationError) as err:
        parse_config(bad + "\n[bogus]\nx = 1\n")
    msg = str(err.value)
    assert "bogus" in msg
    with pytest.raises(ValidationError) as err:
        parse_config(bad)
    msg = str(err.value)
    assert "l must be" in msg and "noise levels" in msg and "subspace dimension 7" in msg


def test_config_hash_and_id():
    a = parse_config(SMALL)
    b = parse_config(SMALL.replace("seed = 11", "seed = 12"))
    assert a.config_hash() != b.config_hash()
    assert a.experiment_id() == f"small-{a.config_hash()}-s11"
    assert a.with_seed(12).config_hash() == b.config_hash()
    assert a.window_offset == 50
    assert a.total_time == pytest.approx(0.5 + 5.0)


def test_streams_are_keyed_by_component():
    a = stream(1, "perturb/sigma=0.1").standard_normal(3)
    assert np.array_equal(a, stream(1, "perturb/sigma=0.1").standard_normal(3))
    assert not np.array_equal(a, stream(1, "perturb/sigma=0.2").standard_normal(3))
    assert not np.array_equal(a, stream(1, "perturb/sigma=0.1", 1).standard_normal(3))
    assert derived_seed(1, "x") != derived_seed(2, "x")


def test_experiment_tables(small_run):
    man = json.loads((small_run / "manifest.json").read_text())
    assert man["status"] == "complete"
    for name, cols in (("angles", ANGLE_COLUMNS), ("principal_angles", PA_COLUMNS),
                       ("exponents", EXPONENT_COLUMNS)):
        header = (small_run / f"{name}.csv").read_text().splitlines()[0]
        assert header == ",".join(cols)
        side = json.loads((small_run / f"{name}.json").read_text())
        assert side["config_hash"] == man["config_hash"] and side["seed"] == 11
    rows = io.read_table(small_run / "angles.csv")
    assert {r["experiment_id"] for r in rows} == {man["experiment_id"]}
    zero = [r for r in rows if r["source"] == "perturbed" and float(r["param_value"]) == 0.0]
    assert len(zero) == 6 and all(float(r["median_deg"]) == 0.0 for r in zero)
    rand = [r for r in io.read_table(small_run / "principal_angles.csv") if r["source"] == "random"]
    assert len(rand) == 3


def test_rerun_is_byte_identical(small_cfg, small_run, tmp_path):
    assert main(["experiment", "--config", str(small_cfg), "--out", str(tmp_path),
                 "--threads", "3"]) == 0
    for p in small_run.iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_composition_law(small_cfg, small_run, tmp_path, capsys):
    c = ["--config", str(small_cfg), "--out", str(tmp_path)]
    assert main(["trajectory", *c]) == 0
    truth = str(tmp_path / "truth.traj")
    assert main(["lyapunov", *c, "--traj", truth, "--start", "50", "--name", "truth.lyap"]) == 0
    assert main(["perturb", *c, "--traj", truth, "--sigma", "0.5", "--start", "50"]) == 0
    assert main(["lyapunov", *c, "--traj", str(tmp_path / "perturbed-sigma0.5-r0.traj")]) == 0
    assert main(["observe", *c, "--traj", truth, "--mu", "0.5"]) == 0
    assert main(["assimilate", *c, "--traj", truth,
                 "--obs", str(tmp_path / "observations-mu0.5.obs")]) == 0
    assert main(["lyapunov", *c, "--traj", str(tmp_path / "assimilated-mu0.5.traj")]) == 0
    for name in ("truth.traj", "truth.lyap", "perturbed-sigma0.5-r0.lyap",
                 "assimilated-mu0.5.lyap", "assimilated-mu0.5.traj", "observations-mu0.5.obs"):
        assert (tmp_path / name).read_bytes() == (small_run / name).read_bytes(), name

    pair = tmp_path / "pair"
    assert main(["angles", "--config", str(small_cfg), "--out", str(pair), "--ref",
                 str(tmp_path / "truth.lyap"), "--other", str(tmp_path / "assimilated-mu0.5.lyap"),
                 "--source", "assimilated", "--param", "0.5"]) == 0
    for table in ("angles", "principal_angles", "exponents"):
        full = [r for r in io.read_table(small_run / f"{table}.csv")
                if r["source"] == "assimilated"]
        assert io.read_table(pair / f"{table}.csv") == full


def test_cli_validate_exits_zero(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "6/6 checks passed" in out and "FAIL" not in out


def test_cli_rejects_short_trajectory(small_cfg, tmp_path, capsys):
    tr = integrate_trajectory(ModelSpec.lorenz63(), np.ones(3), 0.0, 0.01, 0.01, 0.01)
    io.save_trajectory(tmp_path / "two.traj", tr)
    code = main(["lyapunov", "--config", str(small_cfg), "--out", str(tmp_path),
                 "--traj", str(tmp_path / "two.traj")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ValidationError" and "samples" in err["message"]


def test_cli_reports_missing_file(tmp_path, capsys):
    assert main(["experiment", "--config", str(tmp_path / "nope.ini")]) != 0
    assert json.loads(capsys.readouterr().err)["command"] == "experiment"


def test_failed_run_stays_incomplete(tmp_path, monkeypatch):
    from clvda.harness import experiment

    def boom(*args, **kwargs):
        raise BlowUpError("synthetic failure")

    monkeypatch.setattr(experiment, "perturb_stage", boom)
    with pytest.raises(BlowUpError):
        run_experiment(parse_config(SMALL), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "incomplete" and "synthetic failure" in man["error"]
