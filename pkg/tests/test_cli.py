import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from lcnet.cli import main
from lcnet.data import MultiTaskDataset, gen_frequency
from lcnet.experiments import (
    ExperimentConfig,
    PartialResultError,
    run_base,
    run_datasize,
    run_dbeta_sweep,
    run_experiment,
    run_holdout,
    run_repeat,
)

TINY_DATA = {"generator": "frequency", "num_tasks": 6, "n_train": 300, "n_test": 300}
TINY_BOX = {"peak_lr": {"low": 0.005, "high": 0.05, "log": True}, "hidden_dim": {"low": 4, "high": 8, "integer": True},
            "d_beta": {"low": 1, "high": 2, "integer": True}}


def tiny(**kw):
    doc = {"dataset": TINY_DATA, "models": ["lc"], "hyper": {"hidden_dim": 8, "num_blocks": 1, "peak_lr": 0.02},
           "train": {"max_epochs": 30}, "search": False, "seed": 0}
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


@pytest.fixture(scope="module")
def tiny_data():
    return gen_frequency(6, 300, 300, seed=0)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def invoke(args):
    result = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    return result


class TestVerbs:
    def test_generate_train_evaluate(self, tmp_path):
        data, out = tmp_path / "data", tmp_path / "model"
        r = invoke(["generate", "--dataset", "frequency", "--out", data, "--num-tasks", 5, "--n-train", 200,
                    "--n-test", 100])
        assert r.exit_code == 0
        assert len(read_rows(data / "train.csv")) == 200 and len(read_rows(data / "test.csv")) == 100
        truth = json.loads((data / "truth.json").read_text())
        assert len(truth["omega"]) == 5

        r = invoke(["train", "--model", "lc", "--csv", data / "train.csv", "--schema", data / "schema.json",
                    "--set", "hidden_dim=8", "--set", "num_blocks=1", "--train-set", "max_epochs=20", "--out", out])
        assert r.exit_code == 0, r.output
        history = read_rows(out / "history.csv")
        assert list(history[0]) == ["epoch", "lr", "train_loss", "converged_flag"] and len(history) == 20

        r = invoke(["evaluate", "--bundle", out / "model.json", "--csv", data / "test.csv", "--schema",
                    data / "schema.json", "--predictions", tmp_path / "pred.csv"])
        assert r.exit_code == 0
        report = json.loads(r.output.strip().splitlines()[-1])
        preds = read_rows(tmp_path / "pred.csv")
        y = np.array([float(p["y"]) for p in preds])
        yhat = np.array([float(p["prediction"]) for p in preds])
        assert report["n"] == 100
        assert report["rmse"] == pytest.approx(np.sqrt(np.mean((y - yhat) ** 2)), rel=1e-12)

    def test_train_lme(self, tmp_path):
        invoke(["generate", "--dataset", "sine-line", "--out", tmp_path, "--num-tasks", 4, "--n-train", 80,
                "--n-test", 20])
        r = invoke(["train", "--model", "lme", "--csv", tmp_path / "train.csv", "--schema", tmp_path / "schema.json",
                    "--out", tmp_path / "m"])
        assert r.exit_code == 0
        assert json.loads((tmp_path / "m" / "model.json").read_text())["format"] == "lcnet.lme"

    def test_hpo(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": TINY_DATA, "box": TINY_BOX, "train": {"max_epochs": 10}}))
        r = invoke(["hpo", "--dataset", "frequency", "--config", cfg, "--iterations", 3, "--out", tmp_path / "h"])
        assert r.exit_code == 0, r.output
        assert len(read_rows(tmp_path / "h" / "trials.csv")) == 3
        best = json.loads((tmp_path / "h" / "best_config.json").read_text())
        assert set(best) >= {"peak_lr", "hidden_dim", "d_beta"}

    @pytest.mark.parametrize("verb,extra,expected_rows", [
        ("base", ["--model", "lc", "--model", "lme"], 2),
        ("repeat", ["--repeats", 2], 2),
        ("datasize", ["--fraction", 1.0, "--fraction", 0.5], 2),
        ("dbeta", ["--model", "lc", "--model", "ll", "--dim", 1, "--dim", 2], 4),
        ("holdout", ["--dim", 1, "--budget", 10], 7),
        ("scan", [], 4),
    ])
    def test_experiment_verbs(self, tmp_path, verb, extra, expected_rows):
        cfg = tiny().to_dict()
        cfg.update(holdout_fractions=[0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0], scan_grid=101)
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        out = tmp_path / "out"
        r = invoke([verb, "--config", tmp_path / "c.json", "--out", out, *extra])
        assert r.exit_code == 0, r.output
        assert len(read_rows(out / "results.csv")) == expected_rows
        assert (out / "trials.csv").exists() and (out / "diagnostics.json").exists()
        snapshot = json.loads((out / "config.json").read_text())
        assert snapshot["seed"] == 0 and snapshot["output_dir"] == str(out)

    def test_holdout_budget_flag(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps(tiny(holdout_fractions=[1.0]).to_dict()))
        r = invoke(["holdout", "--config", tmp_path / "c.json", "--out", tmp_path / "o", "--dim", 1, "--budget", 7])
        assert r.exit_code == 0, r.output
        assert json.loads((tmp_path / "o" / "config.json").read_text())["holdout_budget"] == 7
        fits = json.loads((tmp_path / "o" / "holdout_fits.json").read_text())
        assert all(f["evaluations"] >= 7 for f in fits)

    def test_search_verb_writes_trials(self, tmp_path):
        cfg = tiny(search=True, num_iterations=2, box=TINY_BOX, hyper={"num_blocks": 1}).to_dict()
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        r = invoke(["base", "--config", tmp_path / "c.json", "--out", tmp_path / "o"])
        assert r.exit_code == 0, r.output
        trials = read_rows(tmp_path / "o" / "trials.csv")
        assert len(trials) == 2 and {"peak_lr", "hidden_dim", "d_beta", "value"} <= set(trials[0])

    def test_construct_exit_codes(self, tmp_path):
        r = invoke(["construct", "--out", tmp_path / "ok"])
        assert r.exit_code == 0 and r.output.count("PASS") == 5
        rows = read_rows(tmp_path / "ok" / "results.csv")
        assert all("tolerance" in row for row in rows)
        r = CliRunner().invoke(main, ["construct", "--out", str(tmp_path / "bad"), "--perturb", "1e-3"])
        assert r.exit_code == 1 and "FAIL" in r.output
        rows = read_rows(tmp_path / "bad" / "results.csv")
        assert all(float(row["max_deviation"]) >= 1e-4 for row in rows)

    def test_failure_keeps_partial_results(self, tmp_path):
        cfg = tiny(models=["lme", "lc"], hyper={"hidden_dim": 8, "num_blocks": 1, "peak_lr": 5.0}).to_dict()
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        r = CliRunner().invoke(main, ["base", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o")])
        assert r.exit_code != 0 and "partial results" in r.output
        rows = read_rows(tmp_path / "o" / "results.csv")
        assert [row["model"] for row in rows] == ["lme"]
        assert "diverged" in json.loads((tmp_path / "o" / "diagnostics.json").read_text())["error"]

    def test_unknown_config_key(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"nonsense": 1}))
        r = CliRunner().invoke(main, ["base", "--config", str(tmp_path / "c.json")])
        assert r.exit_code != 0


class TestDrivers:
    def test_rerun_bit_identical(self, tmp_path):
        cfg = tiny(models=["lc", "ll", "lme"], output_dir=str(tmp_path / "a"))
        run_experiment(cfg)
        again = ExperimentConfig.load(tmp_path / "a" / "config.json")
        again.output_dir = str(tmp_path / "b")
        run_experiment(again)
        for name in ("results.csv", "trials.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_jobs_do_not_change_results(self, tiny_data):
        rows = [run_dbeta_sweep(tiny(models=["lc", "ll"], dims=[1, 2], jobs=j), data=tiny_data).rows for j in (1, 2)]
        assert rows[0] == rows[1]
        reps = [run_repeat(tiny(repeats=3, jobs=j), data=tiny_data).rows for j in (1, 2)]
        assert reps[0] == reps[1]

    def test_normalization_bookkeeping(self, tiny_data):
        rows = run_base(tiny(models=["lc", "lme"]), data=tiny_data).rows
        rows += run_holdout(tiny(dims=[1], holdout_fractions=[0.1, 1.0]), data=tiny_data).rows
        rows += run_repeat(tiny(repeats=2), data=tiny_data).rows
        for r in rows:
            assert abs(r["normalized_rmse"] * r["denominator"] - r["rmse"]) <= 1e-12

    def test_single_task_dataset(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 1))
        ds = MultiTaskDataset(np.ones(60, dtype=int), X, 3 * X[:, 0] + 1 + rng.normal(size=60), 1)
        train, test = ds.take(np.arange(40)), ds.take(np.arange(40, 60))
        res = run_base(tiny(models=["lme", "lc"]), data=(train, test, None))
        ols, *_ = np.linalg.lstsq(np.hstack([train.X, np.ones((40, 1))]), train.y, rcond=None)
        pred = test.X @ ols[:1] + ols[1]
        assert res.rows[0]["rmse"] == pytest.approx(np.sqrt(np.mean((pred - test.y) ** 2)), rel=1e-10)
        assert np.isfinite(res.rows[1]["rmse"])

    def test_datasize_full_fraction_matches_base(self, tiny_data):
        base = run_base(tiny(models=["lc"]), data=tiny_data).rows[0]["rmse"]
        sizes = run_datasize(tiny(models=["lc"], fractions=[1.0, 0.5]), data=tiny_data).rows
        assert sizes[0]["rmse"] == base and sizes[1]["n_train"] == 150

    def test_forced_divergence_bracket_count(self, tiny_data):
        cfg = tiny(repeats=2, hyper={"hidden_dim": 8, "num_blocks": 1, "peak_lr": 0.5}, train={"max_epochs": 60})
        res = run_repeat(cfg, data=tiny_data)
        assert res.diagnostics["lc"]["divergences"] >= 1
        assert res.diagnostics["lc"]["min_relative"] <= 1.0 <= res.diagnostics["lc"]["max_relative"]

    def test_holdout_groups(self, tiny_data):
        res = run_holdout(tiny(dims=[1], holdout_fractions=[0.5, 1.0]), data=tiny_data)
        sizes = res.diagnostics["group_sizes"]
        assert sum(sizes) == 6 and max(sizes) - min(sizes) <= 1
        tasks = res.extra_tables["holdout_tasks.csv"]
        assert sorted({r["task"] for r in tasks}) == list(range(1, 7))

    @pytest.mark.parametrize("doc", [{"experiment": "nope"}, {"models": ["xx"]}, {"dataset": {"csv": "a.csv"}},
                                     {"experiment": "likelihood-scan", "dataset": {"generator": "sine-line"}},
                                     {"fractions": [0.0]}, {"train": {"momentum": 2.0}},
                                     {"holdout_budget": 0}])
    def test_config_validation(self, doc):
        with pytest.raises((ValueError, TypeError)):
            ExperimentConfig.from_dict(doc)

    def test_partial_error_type(self, tiny_data):
        cfg = tiny(models=["lme", "lc"], hyper={"hidden_dim": 8, "num_blocks": 1, "peak_lr": 5.0})
        with pytest.raises(PartialResultError) as err:
            run_base(cfg, data=tiny_data)
        assert len(err.value.partial.rows) == 1
