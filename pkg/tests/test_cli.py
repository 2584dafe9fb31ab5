"""Command-line and configuration checks.

Oracles: validation messages name the violated constraint; the linear
benchmark's closed forms (lambda*(theta) = -2 theta, frozen-fast decay
rate -beta, trailing ripple beta / (2 pi ln 3)) anchor the subcommand
outputs; exit codes follow the documented 0/2/3/4 contract; reruns of
a sweep are byte-identical regardless of the jobs degree.
"""

import json

import numpy as np
import pytest

from qsakit.cli import (
    EXIT_BAND,
    EXIT_CONFIG,
    EXIT_NONFINITE,
    EXIT_OK,
    assert_seedless,
    main,
    run,
)
from qsakit.config import DEFAULTS, resolve
from qsakit.errors import ConfigError


def write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


# ---------------------------------------------------------------------------
# configuration resolution


def test_resolve_fills_all_defaults():
    resolved = resolve({})
    assert resolved["probing"]["phases"] == [0.0, 0.0, 0.0, 0.0]
    assert resolved["gains"] == {
        "rho": 0.7,
        "beta": 0.1,
        "mode": "mixed",
        "alpha0": 1.0,
    }
    assert resolved["system"]["name"] == "linear-3.1"
    assert resolved["filter"]["enabled"] is False
    # Mutating a resolved config must not leak into the defaults.
    resolved["gains"]["rho"] = 0.9
    assert DEFAULTS["gains"]["rho"] == 0.7


def test_resolve_rejects_unknown_names():
    with pytest.raises(ConfigError) as err:
        resolve({"nope": {}})
    assert "unknown config section" in str(err.value)
    with pytest.raises(ConfigError) as err:
        resolve({"gains": {"speed": 2.0}})
    assert "unknown key" in str(err.value)
    with pytest.raises(ConfigError) as err:
        resolve({"system": {"name": "cubic-9.9"}})
    assert "unknown system" in str(err.value)


def test_resolve_names_violated_constraints():
    with pytest.raises(ConfigError, match=r"rho must lie in \(1/2, 1\)"):
        resolve({"gains": {"rho": 0.4}})
    with pytest.raises(ConfigError, match=r"damping ratio must lie in \(0, 1\)"):
        resolve({"filter": {"zeta": 1.5}})
    with pytest.raises(ConfigError, match="beta_list"):
        resolve({"experiment": {"beta_list": []}})
    with pytest.raises(ConfigError, match="sample_stride"):
        resolve({"experiment": {"sample_stride": 0}})
    with pytest.raises(ConfigError, match="derivative"):
        resolve({"experiment": {"derivative": "spectral"}})
    with pytest.raises(ConfigError, match="grid_kind"):
        resolve({"experiment": {"grid_kind": "gradient"}})
    with pytest.raises(ConfigError, match="same frequency"):
        resolve({"probing": {"pairs": [[2, 1], [4, 2]]}})


# ---------------------------------------------------------------------------
# exit-code contract


def test_simulate_default_config(tmp_path):
    out = tmp_path / "sim"
    assert run(None, "simulate", out_dir=out) == EXIT_OK
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,a_t,beta,theta_1,lambda_1")
    resolved = json.loads((out / "config.resolved.json").read_text())
    # The echo shows the materialized initial condition, not null.
    assert resolved["experiment"]["theta0"] == [0.0]
    assert resolved["experiment"]["lambda0"] == [0.0]
    assert resolved["gains"]["rho"] == 0.7


def test_validation_failure_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"gains": {"rho": 0.4}})
    assert run(cfg, "simulate", out_dir=tmp_path / "o") == EXIT_CONFIG
    assert "rho must lie in (1/2, 1)" in capsys.readouterr().err
    assert run(cfg, "nonsense", out_dir=tmp_path / "o") == EXIT_CONFIG


def test_x0_shape_mismatch_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": {"theta0": [1.0, 2.0]}})
    assert run(cfg, "simulate", out_dir=tmp_path / "o") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "theta0 has 2 entries" in err
    assert "1 slow coordinate" in err


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_finite_escape_exits_3(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        {
            "gains": {"beta": 1.0},
            "esc": {
                "objective": "quartic",
                "objective_params": {"scale": 1.0},
                "dim": 2,
            },
            "experiment": {"horizon": 200.0, "theta0": [8.0, 8.0]},
        },
    )
    assert run(cfg, "esc", out_dir=tmp_path / "o") == EXIT_NONFINITE
    assert "non-finite" in capsys.readouterr().err


def test_seedless_assertion():
    assert_seedless()  # the package links no RNG source


# ---------------------------------------------------------------------------
# subcommands against closed-form anchors


def test_sweep_fast_band_and_jobs_determinism(tmp_path):
    cfg = write_config(
        tmp_path,
        {"experiment": {"beta_list": [0.08, 0.16, 0.32], "horizon_cap": 2500.0}},
    )
    out1, out2 = tmp_path / "j3", tmp_path / "j1"
    assert main(["sweep-fast", "--config", cfg, "--out", str(out1), "--jobs", "3"]) == EXIT_OK
    assert main(["sweep-fast", "--config", cfg, "--out", str(out2), "--jobs", "1"]) == EXIT_OK
    for name in ("sweep.csv", "fit.json", "run-beta-0.16.csv", "config.resolved.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    record = json.loads((out1 / "fit.json").read_text())
    assert record["outcome"] == "fit"
    assert record["band_pass"] is True
    assert record["slope_band"] == [0.8, 1.2]


def test_sweep_fast_filtered_flag(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": {
                "beta_list": [0.16, 0.2262741699796952, 0.32],
                "horizon_cap": 2500.0,
            }
        },
    )
    out = tmp_path / "f"
    assert main(["sweep-fast", "--config", cfg, "--out", str(out), "--filtered"]) == EXIT_OK
    record = json.loads((out / "fit.json").read_text())
    assert record["slope_band"] == [1.7, 2.3]
    assert record["band_pass"] is True


def test_sweep_fast_band_failure_exits_4(tmp_path, capsys):
    # At these gains the filter floor is not reached within T = 200/beta
    # for the smaller betas, so the fitted slope falls far out of band.
    cfg = write_config(
        tmp_path,
        {"experiment": {"beta_list": [0.08, 0.16, 0.32], "horizon_cap": 2500.0}},
    )
    code = main(["sweep-fast", "--config", cfg, "--out", str(tmp_path / "o"), "--filtered"])
    assert code == EXIT_BAND
    assert "outside the [1.7, 2.3] band" in capsys.readouterr().err


def test_check_slow_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "gains": {"beta": 0.05},
            "experiment": {"horizon": 4000.0, "sample_stride": 5},
        },
    )
    out = tmp_path / "o"
    assert run(cfg, "check-slow", out_dir=out) == EXIT_OK
    record = json.loads((out / "slow_check.json").read_text())
    assert record["pass"] is True
    assert 0.0 < record["sup_ratio"] < 1.0
    assert record["ratio_trend"] <= 2.0
    assert record["theta_beta"] == pytest.approx([0.0], abs=1e-3)
    assert (out / "trajectory.csv").exists()


def test_bias_subcommand_symmetric(tmp_path):
    cfg = write_config(tmp_path, {"experiment": {"beta_list": [0.16, 0.32]}})
    out = tmp_path / "o"
    assert run(cfg, "bias", out_dir=out) == EXIT_OK
    record = json.loads((out / "fit.json").read_text())
    assert record["outcome"] == "symmetric-no-bias"


def test_pmf_subcommand(tmp_path):
    out = tmp_path / "a"
    assert run(None, "pmf", out_dir=out) == EXIT_OK
    record = json.loads((out / "pmf.json").read_text())
    assert record["pass"] is True
    for key in ("step1", "step2", "step3", "assembled"):
        assert record[key] < 1e-8
    assert record["threshold"] == 1e-8

    cfg = write_config(tmp_path, {"experiment": {"derivative": "fd"}})
    out_fd = tmp_path / "b"
    assert run(cfg, "pmf", out_dir=out_fd) == EXIT_OK
    record = json.loads((out_fd / "pmf.json").read_text())
    assert record["derivative"] == "fd"
    assert record["pass"] is None
    assert record["threshold"] is None


def test_lyapunov_subcommand(tmp_path):
    cfg = write_config(
        tmp_path, {"experiment": {"horizon": 60.0, "theta_grid": [-0.5, 0.5]}}
    )
    out = tmp_path / "o"
    assert run(cfg, "lyapunov", out_dir=out) == EXIT_OK
    rows = np.genfromtxt(out / "lyapunov.csv", delimiter=",", names=True)
    assert rows.shape == (2,)
    # Frozen-fast drift of the linear benchmark decays at rate beta.
    for exponent in rows["exponent"]:
        assert exponent == pytest.approx(-0.1, abs=2e-3)


def test_meanflow_grid_subcommand(tmp_path):
    cfg = write_config(tmp_path, {"experiment": {"theta_grid": [0.0, 0.5]}})
    out = tmp_path / "o"
    assert run(cfg, "meanflow-grid", out_dir=out) == EXIT_OK
    rows = np.genfromtxt(out / "grid.csv", delimiter=",", names=True)
    # lambda*(theta) = -2 theta for the linear benchmark.
    assert rows["value_1"][0] == pytest.approx(0.0, abs=1e-3)
    assert rows["value_1"][1] == pytest.approx(-1.0, abs=1e-3)
    # At theta = 0.5 the multiplicative probe vanishes at equilibrium.
    assert rows["osc_amplitude"][1] < 1e-8


def test_esc_subcommand_converges(tmp_path):
    cfg = write_config(
        tmp_path,
        {"gains": {"beta": 1.0}, "experiment": {"horizon": 600.0, "sample_stride": 50}},
    )
    out = tmp_path / "o"
    assert run(cfg, "esc", out_dir=out) == EXIT_OK
    record = json.loads((out / "esc.json").read_text())
    assert record["pass"] is True
    assert record["optimum"] == [1.0]
    assert record["distance"] < 0.1


def test_esc_band_failure_exits_4(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        {
            "gains": {"beta": 1.0},
            "esc": {"tolerance": 1e-4},
            "experiment": {"horizon": 200.0, "sample_stride": 50},
        },
    )
    assert run(cfg, "esc", out_dir=tmp_path / "o") == EXIT_BAND
    assert "outside the 0.0001 band" in capsys.readouterr().err


def test_jobs_flag_validation(capsys):
    assert main(["simulate", "--jobs", "0"]) == EXIT_CONFIG
    assert "--jobs" in capsys.readouterr().err
