import json
from pathlib import Path

import numpy as np
import pytest

import capnet as cp
from capnet import cli


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def linear_cfg(out_dir=None, **ctrl_extra):
    ctrl = {"mode": "decentralized", "kP": 2.0, "kI": 1.0, "kA": 0.4}
    ctrl.update(ctrl_extra)
    cfg = {
        "schema_version": 1,
        "system": {"type": "linear", "B": [[1.0, -0.25], [-0.25, 1.0]],
                   "bounds": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0]}},
        "agents": {"a": [1.0, 1.0], "w": [-2.0, -1.0]},
        "controller": ctrl,
        "sim": {"t_span": [0.0, 30.0], "output_dt": 1.0},
    }
    if out_dir is not None:
        cfg["outputs"] = {"directory": str(out_dir), "prefix": "t"}
    return cfg


class TestConfig:
    def test_round_trip(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        data = cli.load_config(path)
        text = cli.serialize_config(data)
        assert json.loads(text) == data
        # serialize(parse(serialize(...))) is a fixed point
        assert cli.serialize_config(json.loads(text)) == text

    def test_unknown_key_rejected(self, tmp_path):
        cfg = linear_cfg()
        cfg["controller"]["kX"] = 1.0
        path = write_cfg(tmp_path, cfg)
        with pytest.raises(cp.ConfigError, match="controller"):
            cli.load_config(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": 1,\n  "oops"\n}', encoding="utf-8")
        with pytest.raises(cp.ConfigError, match="line"):
            cli.load_config(path)

    def test_wrong_schema_version(self, tmp_path):
        cfg = linear_cfg()
        cfg["schema_version"] = 99
        with pytest.raises(cp.ConfigError, match="schema_version"):
            cli.load_config(write_cfg(tmp_path, cfg))

    def test_shipped_configs_load(self):
        for name in ("linear2_decentralized.cfg", "linear2_coordinating.cfg"):
            path = cli.shipped_config_path(name)
            data = cli.load_config(path)
            assert data["schema_version"] == 1

    def test_shipped_networks_match_builder(self):
        for name, scale in (("dhn_fig1.cfg", 1.0),
                            ("dhn_calibrated.cfg", cp.CALIBRATED_CAPACITY_SCALE)):
            raw = json.loads(cli.shipped_config_path(name).read_text(encoding="utf-8"))
            net = cp.network_from_dict(raw)
            ref = cp.build_dhn_network(scale)
            assert net.n_consumers == 22
            assert net.pump_dp == pytest.approx(ref.pump_dp)
            v = np.full(22, 0.3)
            np.testing.assert_allclose(cp.solve_flows(net, v), cp.solve_flows(ref, v),
                                       rtol=1e-12)

    def test_build_scenario_linear(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        built = cli.build_scenario(cli.ScenarioConfig.load(path))
        assert built.system.n == 2
        assert built.scenario.policy == "decentralized"


class TestSimulateCommand:
    def test_success_writes_csv(self, tmp_path):
        out = tmp_path / "out"
        path = write_cfg(tmp_path, linear_cfg(out_dir=out))
        assert cli.main(["simulate", str(path)]) == 0
        csv = out / "t_decentralized.csv"
        assert csv.exists()
        header = csv.read_text(encoding="utf-8").splitlines()[0]
        assert header == "t,x1,x2,u1,u2,v1,v2,V"

    def test_malformed_config_exit_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope", encoding="utf-8")
        assert cli.main(["simulate", str(path)]) == 2

    def test_dhn_zero_capacity_exit_3(self, tmp_path):
        cfg = {
            "schema_version": 1,
            "system": {"type": "dhn", "network": "builtin:dhn_fig1",
                       "capacity_scale": 0.0},
            "agents": {"temperature_profile": "builtin"},
            "controller": {"mode": "decentralized", "kP": 1.0, "kI": 1.0, "kA": 1.0,
                           "force": True},
            "sim": {"t_span": [0.0, 1.0], "output_dt": 0.5},
        }
        path = write_cfg(tmp_path, cfg)
        assert cli.main(["simulate", str(path)]) == 3

    def test_dhn_csv_has_22_state_columns(self, tmp_path):
        out = tmp_path / "out"
        cfg = {
            "schema_version": 1,
            "system": {"type": "dhn", "network": "builtin:dhn_calibrated"},
            "agents": {"temperature_profile": "builtin"},
            "controller": {"mode": "decentralized", "kP": 1.0, "kI": 1.0, "kA": 1.0,
                           "force": True},
            "sim": {"t_span": [0.0, 2.0], "output_dt": 1.0},
            "outputs": {"directory": str(out), "prefix": "dhn"},
        }
        path = write_cfg(tmp_path, cfg)
        assert cli.main(["simulate", str(path)]) == 0
        header = (out / "dhn_decentralized.csv").read_text(encoding="utf-8").splitlines()[0]
        cols = header.split(",")
        assert cols[1:23] == [f"x{i}" for i in range(1, 23)]
        assert len(cols) == 1 + 3 * 22 + 1


class TestCheckCommand:
    def test_mmatrix_passes(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        assert cli.main(["check", str(path), "--assumption1",
                         "--samples", "500", "--seed", "0"]) == 0

    def test_counterexample_matrix_fails(self, tmp_path, capsys):
        cfg = linear_cfg()
        cfg["system"]["B"] = [[1.0, 0.25], [-0.25, 1.0]]
        path = write_cfg(tmp_path, cfg)
        assert cli.main(["check", str(path), "--assumption1",
                         "--samples", "2000", "--seed", "0"]) == 1
        out = capsys.readouterr().out
        assert "counterexample" in out or "FAIL" in out

    def test_tuning_check(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        assert cli.main(["check", str(path), "--tuning"]) == 0
        cfg = linear_cfg(kA=2.0)
        path2 = write_cfg(tmp_path, cfg, name="bad.json")
        assert cli.main(["check", str(path2), "--tuning"]) == 1

    def test_all_checks_default(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        assert cli.main(["check", str(path), "--samples", "300"]) == 0


class TestVerifyCommand:
    def test_optimality(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        assert cli.main(["verify", str(path), "--optimality",
                         "--samples", "200", "--seed", "0"]) == 0

    def test_stability_coordinating_rejectable(self, tmp_path):
        cfg = linear_cfg()
        cfg["controller"] = {"mode": "coordinating", "kP": 1.0, "kI": 0.5,
                             "kC": 0.5, "alpha": 1.0}
        cfg["agents"]["w"] = [-0.3, 0.2]
        path = write_cfg(tmp_path, cfg)
        assert cli.main(["verify", str(path), "--stability", "--starts", "5",
                         "--t-max", "120", "--seed", "0"]) == 0

    def test_report_written(self, tmp_path):
        path = write_cfg(tmp_path, linear_cfg())
        report_dir = tmp_path / "reports"
        assert cli.main(["verify", str(path), "--optimality", "--samples", "50",
                         "--report-dir", str(report_dir)]) == 0
        assert (report_dir / "verdict_optimality.txt").exists()


class TestReproduceDhn:
    def test_single_policy_short(self, tmp_path):
        out = tmp_path / "dhn"
        rc = cli.main(["reproduce-dhn", "--policy", "oracle-l1", "--out", str(out),
                       "--t-end", "2.0", "--output-dt", "1.0"])
        assert rc == 0
        assert (out / "dhn_oracle-l1.csv").exists()
        assert (out / "dhn_comparison.csv").exists()
        assert (out / "dhn_summary.txt").exists()
