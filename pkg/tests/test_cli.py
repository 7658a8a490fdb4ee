import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from unconfound import cli, experiments
from unconfound.errors import ConfigError
from unconfound.experiments import COLUMNS, config_from_dict, load_config

GOLDEN = Path(__file__).parent / "golden"

SMALL_LINEAR = {"beta_u": 2.0, "delta_a": 0.0, "n": 60, "m": 300}


def write_yaml(tmp_path, doc, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc, sort_keys=False))
    return p


def run_cli(args, capsys):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def pair_files(tmp_path):
    rng = np.random.default_rng(0)

    def make(name, n, shift):
        x = rng.normal(size=n)
        a = (rng.random(n) < 0.4).astype(int)
        y = 1 + 2 * a + x + shift * a + rng.normal(size=n)
        loc = rng.choice(["north", "south"], size=n)
        p = tmp_path / name
        with open(p, "w") as fh:
            fh.write("A,Y,x,loc\n")
            for r in zip(a, y, x, loc):
                fh.write("%d,%.6f,%.6f,%s\n" % r)
        return p

    return make("rct.csv", 80, 0.0), make("obs.csv", 400, 0.0)


class TestConfig:
    def test_bundled_configs_load(self, configs_dir):
        paths = sorted(configs_dir.glob("*.yaml"))
        assert len(paths) >= 8
        for p in paths:
            cfg = load_config(p)
            assert cfg.kind in experiments.KINDS

    @pytest.mark.parametrize(
        "doc, match",
        [
            ({"kind": "type1", "bogus": 1}, "unknown keys"),
            ({"kind": "type1", "scenario": {"beta_q": 1}}, "beta_q"),
            ({"kind": "type1", "alpha_levels": [0.05, 1.2]}, "alpha"),
            ({"kind": "type1", "b": 50}, "at least 100"),
            ({"kind": "type1", "seed": -3}, "seed"),
            ({"kind": "power-sweep", "sweep": {"parameter": "nope", "values": [1]}}, "scenario field"),
            ({"kind": "power-sweep", "sweep": {"parameter": "delta_a", "values": []}}, "nonempty"),
            ({"kind": "power-sweep", "sweep": {"parameter": "delta_a", "values": [1], "hold_c_eta": True}}, "hold_c_eta"),
            ({"kind": "analytic-power", "scenario": {"beta_u": 0.0}, "sweep": {"parameter": "delta_a", "values": [1]}}, "beta_u"),
            ({"kind": "test-pair"}, "rct_csv"),
            ({"kind": "warp"}, "unknown experiment kind"),
        ],
    )
    def test_invalid(self, doc, match):
        with pytest.raises(ConfigError, match=match):
            config_from_dict(doc)

    def test_kind_mismatch(self, tmp_path):
        p = write_yaml(tmp_path, {"kind": "type1"})
        with pytest.raises(ConfigError, match="not 'power-sweep'"):
            load_config(p, kind="power-sweep")

    def test_presets(self, configs_dir):
        ci = load_config(configs_dir / "type1_linear_bu2_da0.yaml", preset="ci")
        assert (ci.replicates, ci.b) == (200, 500)
        full = load_config(configs_dir / "type1_linear_bu2_da0.yaml", preset="paper")
        assert (full.replicates, full.b) == (1000, 1000)
        sweep = load_config(configs_dir / "power_delta_a.yaml", preset="paper")
        assert (sweep.replicates, sweep.b) == (200, 500)

    def test_hash_tracks_content(self):
        a = config_from_dict({"kind": "type1", "seed": 1})
        b = config_from_dict({"kind": "type1", "seed": 2})
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() == config_from_dict({"kind": "type1", "seed": 1}).config_hash()

    def test_hold_c_eta_grid(self):
        cfg = config_from_dict({
            "kind": "power-sweep", "scenario": {"beta_u": 1.0, "beta_x": 0.5, "sigma_eps": 2.0},
            "sweep": {"parameter": "beta_u", "values": [3.0], "hold_c_eta": True},
        })
        sc = experiments._grid_scenario(cfg, 3.0)
        assert sc.beta_x / sc.beta_u == pytest.approx(0.5)
        assert sc.sigma_eps**2 / sc.beta_u**2 == pytest.approx(4.0)


class TestRunners:
    def test_type1_single_replicate(self):
        cfg = config_from_dict({"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 1, "b": 100,
                                "alpha_levels": [0.1, 0.05]})
        t = experiments.run(cfg)
        vals = [r["value"] for r in t.select("rejection_rate")]
        assert len(vals) == 2 and all(v in (0.0, 1.0) for v in vals)
        assert all(r["se"] == 0.0 for r in t.select("rejection_rate"))

    def test_binomial_se(self):
        cfg = config_from_dict({"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 8, "b": 100,
                                "alpha_levels": [0.5]})
        (r,) = experiments.run(cfg).select("rejection_rate")
        assert r["se"] == pytest.approx(np.sqrt(r["value"] * (1 - r["value"]) / 8))

    def test_type1_warns_under_alternative(self, caplog):
        cfg = config_from_dict({"kind": "type1", "scenario": {**SMALL_LINEAR, "delta_a": 1.0},
                                "replicates": 1, "b": 100})
        experiments.run(cfg)
        assert "does not satisfy H0" in caplog.text

    def test_jobs_do_not_change_output(self):
        cfg = config_from_dict({"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 6, "b": 100,
                                "alpha_levels": [0.1, 0.05, 0.01], "seed": 77})
        assert experiments.run(cfg, jobs=1).to_csv() == experiments.run(cfg, jobs=3).to_csv()

    def test_analytic_zero_row(self):
        cfg = config_from_dict({"kind": "analytic-power", "sweep": {"parameter": "delta_a", "values": [0.0, 1.0]}})
        rows_ = experiments.run(cfg).select("analytic_power")
        assert abs(rows_[0]["value"] - 0.05) <= 1e-12

    def test_analytic_doubling_n(self):
        grid = {"parameter": "delta_a", "values": [-1.0, 0.5, 1.0, 2.0]}
        p1 = experiments.run(config_from_dict({"kind": "analytic-power", "sweep": grid,
                                               "scenario": {"n": 100, "m": 2000}})).select("analytic_power")
        p2 = experiments.run(config_from_dict({"kind": "analytic-power", "sweep": grid,
                                               "scenario": {"n": 200, "m": 4000}})).select("analytic_power")
        assert all(b["value"] > a["value"] for a, b in zip(p1, p2))

    @pytest.mark.filterwarnings("ignore:observational sample")
    def test_test_pair_identical_files(self, pair_files, tmp_path):
        rct, _ = pair_files
        cfg = config_from_dict({"kind": "test-pair", "rct_csv": str(rct), "obs_csv": str(rct), "treatment": "A",
                                "outcome": "Y", "covariates": ["x", "loc"], "b": 100})
        t = experiments.run(cfg)
        assert not t.select("bootstrap_reject")[0]["value"]
        assert not t.select("z_reject")[0]["value"]
        assert len(t.select("t_star")) == 100

    def test_test_pair_schema_mismatch(self, pair_files, tmp_path):
        rct, obs = pair_files
        numeric = tmp_path / "num.csv"
        numeric.write_text("A,Y,x,loc\n1,1,0,1\n0,2,1,2\n1,3,0,3\n0,1,1,1\n")
        cfg = config_from_dict({"kind": "test-pair", "rct_csv": str(numeric), "obs_csv": str(obs), "treatment": "A",
                                "outcome": "Y", "covariates": ["x", "loc"], "b": 100})
        with pytest.raises(experiments.IngestionError, match="schema"):
            experiments.run(cfg)


class TestCommandLine:
    def test_exit_codes(self, tmp_path, pair_files, capsys):
        bad = write_yaml(tmp_path, {"kind": "type1", "bogus": 1}, "bad.yaml")
        assert run_cli(["type1", "--config", bad], capsys)[0] == 2
        assert run_cli(["type1", "--config", tmp_path / "missing.yaml"], capsys)[0] == 2
        assert run_cli(["type1"], capsys)[0] == 2
        assert run_cli(["type1", "--config", bad, "--seed", "-1"], capsys)[0] == 2

        rct, obs = pair_files
        base = {"kind": "test-pair", "rct_csv": str(rct), "obs_csv": str(obs), "treatment": "A",
                "outcome": "Y", "covariates": ["x"], "b": 100}
        ingest = write_yaml(tmp_path, {**base, "covariates": ["nope"]}, "ingest.yaml")
        code, _, err = run_cli(["test-pair", "--config", ingest], capsys)
        assert code == 3 and "nope" in err

        single = tmp_path / "single.csv"
        single.write_text("A,Y,x\n1,1,0\n1,2,1\n1,3,2\n")
        failing = write_yaml(tmp_path, {**base, "rct_csv": str(single)}, "fail.yaml")
        assert run_cli(["test-pair", "--config", failing], capsys)[0] == 4

    def test_semisynth_rule_error(self, tmp_path, capsys, data_dir):
        cfg = write_yaml(tmp_path, {
            "kind": "semisynth", "csv": str(data_dir / "star_standin.csv"), "treatment": "small",
            "outcome": "score", "covariates": ["school"], "b": 100,
            "rule": {"confounder_column": "school", "group_a": ["urban"], "group_b": ["exurban"]},
        })
        code, _, err = run_cli(["semisynth", "--config", cfg], capsys)
        assert code == 3 and "group_b" in err

    def test_csv_columns(self, tmp_path, capsys):
        cfg = write_yaml(tmp_path, {"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 2, "b": 100})
        code, out, _ = run_cli(["type1", "--config", cfg], capsys)
        assert code == 0
        assert out.splitlines()[0] == ",".join(COLUMNS)
        assert all(r["config_hash"] and r["seed"] == "0" for r in rows(out))

    def test_out_file_and_seed_override(self, tmp_path, capsys):
        cfg = write_yaml(tmp_path, {"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 2, "b": 100})
        out = tmp_path / "res" / "t.csv"
        assert run_cli(["type1", "--config", cfg, "--seed", "99", "--out", out], capsys)[0] == 0
        assert rows(out.read_text())[0]["seed"] == "99"

    def test_json_echo_round_trip(self, tmp_path, capsys):
        cfg = write_yaml(tmp_path, {"kind": "type1", "scenario": SMALL_LINEAR, "replicates": 3, "b": 100, "seed": 5})
        first = tmp_path / "first.json"
        assert run_cli(["type1", "--config", cfg, "--format", "json", "--out", first], capsys)[0] == 0
        doc = json.loads(first.read_text())
        assert doc["config"]["scenario"]["n"] == 60 and doc["columns"] == list(COLUMNS)
        # the result file itself is a valid config: rerunning it reproduces the table
        second = tmp_path / "second.json"
        assert run_cli(["type1", "--config", first, "--format", "json", "--out", second], capsys)[0] == 0
        assert first.read_bytes() == second.read_bytes()

    def test_golden_analytic(self, capsys, configs_dir, tmp_path):
        doc = yaml.safe_load((configs_dir / "analytic_power_delta_a.yaml").read_text())
        doc["empirical"] = False
        cfg = write_yaml(tmp_path, doc)
        code, out, _ = run_cli(["analytic-power", "--config", cfg], capsys)
        assert code == 0
        assert out == (GOLDEN / "analytic_power.csv").read_text()

    def test_golden_type1(self, capsys, tmp_path):
        cfg = write_yaml(tmp_path, {"kind": "type1", "label": "golden", "scenario": SMALL_LINEAR,
                                    "replicates": 4, "b": 100, "alpha_levels": [0.5, 0.05], "seed": 3})
        code, out, _ = run_cli(["type1", "--config", cfg], capsys)
        assert code == 0
        assert out == (GOLDEN / "type1.csv").read_text()
