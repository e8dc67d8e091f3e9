"""CLI tests: config validation, exit codes, and byte-level determinism."""

import csv
import json

import numpy as np
import pytest

from slrid.cli import ConfigError, load_config, main, parse_config
from slrid.regressor import read_timeseries_csv

BASE = {
    "p": 2,
    "runs": 2,
    "N_id": 60,
    "N_test": 60,
    "T": 5,
    "estimators": ["S", "SS"],
    "base_seed": 11,
    "model": {"kind": "sl", "n": 0, "s": 2, "T_true": 5, "burn_in": 50},
    "algorithm": {"refine_tau": False},
}


def write_cfg(tmp_path, overrides=None, **root):
    raw = json.loads(json.dumps(BASE))
    raw.update(root)
    for key, sub in (overrides or {}).items():
        raw.setdefault(key, {}).update(sub)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


class TestConfigValidation:
    def test_parses_defaults(self):
        cfg = parse_config({"p": 3, "T": 4, "N_id": 100})
        assert cfg.estimators == ("SL-II", "S", "SS")
        assert cfg.algorithm.T == 4
        assert cfg.model.T_true == 4

    def test_missing_required_key(self):
        with pytest.raises(ConfigError, match="N_id"):
            parse_config({"p": 2, "T": 4})

    @pytest.mark.parametrize(
        "raw",
        [
            {"p": 2, "T": 4, "N_id": 10, "bogus": 1},
            {"p": 2, "T": 4, "N_id": 10, "model": {"rank": 1}},
            {"p": 2, "T": 4, "N_id": 10, "algorithm": {"tol": 0.1}},
        ],
    )
    def test_unknown_keys_rejected_everywhere(self, raw):
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config(raw)

    @pytest.mark.parametrize(
        "raw",
        [
            {"p": "2", "T": 4, "N_id": 10},
            {"p": 2, "T": 4, "N_id": 10, "model": {"n": 1.5}},
            {"p": 2, "T": 4, "N_id": 10, "model": {"damping": "high"}},
            {"p": 2, "T": 4, "N_id": 10, "algorithm": {"refine_tau": 1}},
            {"p": True, "T": 4, "N_id": 10},
        ],
    )
    def test_wrong_types_rejected(self, raw):
        with pytest.raises(ConfigError, match="wrong type"):
            parse_config(raw)

    def test_bad_estimator_names(self):
        with pytest.raises(ConfigError, match="unknown estimator"):
            parse_config({"p": 2, "T": 4, "N_id": 10, "estimators": ["SL-IX"]})
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config({"p": 2, "T": 4, "N_id": 10, "estimators": ["S", "S"]})

    def test_range_checks(self):
        with pytest.raises(ConfigError):
            parse_config({"p": 0, "T": 4, "N_id": 10})
        with pytest.raises(ConfigError, match="n must lie"):
            parse_config({"p": 2, "T": 4, "N_id": 10, "model": {"n": 3}})
        with pytest.raises(ConfigError, match="s must lie"):
            parse_config({"p": 2, "T": 4, "N_id": 10, "model": {"s": 5}})
        with pytest.raises(ConfigError, match="kind"):
            parse_config({"p": 2, "T": 4, "N_id": 10, "model": {"kind": "dense"}})
        with pytest.raises(ConfigError, match="kernel_family"):
            parse_config({"p": 2, "T": 4, "N_id": 10,
                          "algorithm": {"kernel_family": "DC"}})

    def test_load_config_file_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(bad)


class TestExitCodes:
    def test_config_error_is_exit_1(self, tmp_path, capsys):
        path = write_cfg(tmp_path, p="two")
        rc = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "config error" in capsys.readouterr().err

    def test_usage_error_is_exit_1(self, capsys):
        assert main(["frobnicate"]) == 1
        assert main([]) == 1
        assert main(["simulate", "--out", "x"]) == 1
        capsys.readouterr()

    def test_bad_workers_is_exit_1(self, tmp_path, capsys):
        path = write_cfg(tmp_path)
        rc = main(["identify", "--config", str(path), "--out", str(tmp_path / "o"),
                   "--workers", "0"])
        assert rc == 1
        capsys.readouterr()

    def test_evaluate_before_identify_is_exit_2(self, tmp_path, capsys):
        path = write_cfg(tmp_path)
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        rc = main(["evaluate", "--config", str(path), "--out", str(out)])
        assert rc == 2
        assert "missing" in capsys.readouterr().err


@pytest.fixture(scope="class")
def batch(tmp_path_factory):
    """One completed run-all batch shared by the inspection tests."""
    tmp = tmp_path_factory.mktemp("batch")
    path = write_cfg(tmp)
    out = tmp / "out"
    rc = main(["run-all", "--config", str(path), "--out", str(out)])
    return rc, path, out


class TestBatchOutputs:
    def test_exit_zero(self, batch):
        rc, _, _ = batch
        assert rc == 0

    def test_simulate_outputs(self, batch):
        _, _, out = batch
        assert (out / "config.echo.json").exists()
        for run in range(BASE["runs"]):
            rdir = out / "runs" / f"run_{run:03d}"
            model = json.loads((rdir / "model.json").read_text())
            assert model["p"] == BASE["p"]
            assert len(model["support"]) == BASE["model"]["s"]
            ts = read_timeseries_csv(rdir / "id_data.csv")
            assert ts.values.shape == (BASE["N_id"], BASE["p"])

    def test_result_files(self, batch):
        _, _, out = batch
        for run in range(BASE["runs"]):
            for est in BASE["estimators"]:
                res = json.loads(
                    (out / "runs" / f"run_{run:03d}" / f"result_{est}.json").read_text()
                )
                assert res["status"] == "ok"
                assert res["label"] == est
                coeffs = np.asarray(res["coeffs"])
                assert coeffs.shape == (BASE["T"], BASE["p"], BASE["p"])

    def test_metrics_csv_structure(self, batch):
        _, _, out = batch
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["run", "estimator", "complexity", "cod1", "ir_fit",
                           "n_factors", "support_size"]
        body = rows[1:]
        assert len(body) == BASE["runs"] * (len(BASE["estimators"]) + 1)
        true_rows = [r for r in body if r[1] == "TRUE"]
        assert len(true_rows) == BASE["runs"]
        for r in true_rows:
            assert float(r[4]) == 100.0
            assert int(r[6]) == BASE["model"]["s"]
        ss_rows = [r for r in body if r[1] == "SS"]
        for r in ss_rows:
            assert float(r[2]) == 1.0  # dense estimate has full complexity

    def test_summary_csv_structure(self, batch):
        _, _, out = batch
        with open(out / "summary.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["estimator", "metric", "whisker_low", "q1", "median",
                           "q3", "whisker_high"]
        body = rows[1:]
        assert len(body) == (len(BASE["estimators"]) + 1) * 3
        for r in body:
            lo, q1, med, q3, hi = map(float, r[2:])
            assert lo <= q1 <= med <= q3 <= hi

    def test_rerun_is_byte_identical(self, batch, tmp_path):
        _, path, out = batch
        out2 = tmp_path / "again"
        assert main(["run-all", "--config", str(path), "--out", str(out2)]) == 0
        for name in ("metrics.csv", "summary.csv"):
            assert (out2 / name).read_bytes() == (out / name).read_bytes()
        a = (out / "runs" / "run_000" / "result_S.json").read_bytes()
        b = (out2 / "runs" / "run_000" / "result_S.json").read_bytes()
        assert a == b

    def test_workers_do_not_change_results(self, batch, tmp_path):
        _, path, out = batch
        out2 = tmp_path / "par"
        rc = main(["run-all", "--config", str(path), "--out", str(out2),
                   "--workers", "2"])
        assert rc == 0
        assert (out2 / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()

    def test_seed_offset_changes_data(self, batch, tmp_path):
        _, path, out = batch
        out2 = tmp_path / "shift"
        assert main(["simulate", "--config", str(path), "--out", str(out2),
                     "--seed-offset", "7"]) == 0
        a = (out / "runs" / "run_000" / "id_data.csv").read_bytes()
        b = (out2 / "runs" / "run_000" / "id_data.csv").read_bytes()
        assert a != b
