import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml
from filelock import FileLock

from risloc import cli
from risloc.channel import los_model
from risloc.harness import experiment as exp
from risloc.harness import radiomap as rm
from risloc.harness.config import (Evaluation, ExperimentConfig, Seeds, TrainingBudget, default_config,
                                   load_config, save_config)
from risloc.scene import ConfigError, desk_scene

ROOT = Path(__file__).resolve().parents[1]


def tiny_config(out, snrs=(20.0,), methods=("active", "static-random", "static-learned", "wknn", "crlb-gd"),
                frames=3, episodes=30):
    return ExperimentConfig(scene=desk_scene(), frames=frames, snr_db=list(snrs), methods=list(methods),
                            seeds=Seeds(train=1, eval=500), output_dir=str(out),
                            training=TrainingBudget(steps=4, batch_size=16, hidden=8, head_width=8,
                                                    dnn_layers=[8, 3], warmup_samples=100, val_size=16),
                            evaluation=Evaluation(episodes=episodes, chunk=12))


class TestConfig:
    def test_paper_default_file(self):
        cfg = load_config(ROOT / "configs" / "paper.yaml")
        s = cfg.scene
        assert s.bs_position == (40.0, -40.0, -10.0) and s.ris_position == (0.0, 0.0, 0.0)
        assert (s.ris_rows, s.ris_cols) == (8, 8)
        assert s.ue_center == (20.0, 0.0, -20.0) and s.ue_half_extent == (15.0, 35.0, 0.0)
        assert s.rician_factor == 10.0 and s.spacing_factor == 1.0

    def test_desk_file_matches_profile(self):
        assert load_config(ROOT / "configs" / "desk.yaml").to_dict() == default_config("desk").to_dict()

    @pytest.mark.parametrize("key", ["scene", "frames", "snr_db", "methods", "seeds", "output_dir"])
    def test_missing_key_is_named(self, key, tmp_path):
        d = default_config().to_dict()
        del d[key]
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(d))
        with pytest.raises(ConfigError, match=f"'{key}'"):
            load_config(path)

    def test_missing_eval_seed_is_named(self):
        d = default_config().to_dict()
        del d["seeds"]["eval"]
        with pytest.raises(ConfigError, match="'eval'"):
            ExperimentConfig.from_dict(d)

    def test_missing_scene_key_is_named(self):
        d = default_config().to_dict()
        del d["scene"]["ris_rows"]
        with pytest.raises(ConfigError, match="'ris_rows'"):
            ExperimentConfig.from_dict(d)

    def test_round_trip(self, tmp_path):
        a = load_config(ROOT / "configs" / "paper.yaml")
        save_config(a, tmp_path / "x.yaml")
        assert load_config(tmp_path / "x.yaml").to_dict() == a.to_dict()

    @pytest.mark.parametrize("patch", [{"snr_db": []}, {"frames": 0}, {"methods": ["magic"]},
                                       {"feature_mode": "phase"}, {"bogus": 1}])
    def test_invalid(self, patch):
        d = default_config().to_dict()
        d.update(patch)
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_eval_seed_disjoint(self):
        d = default_config().to_dict()
        d["seeds"]["eval"] = d["seeds"]["train"]
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_scene_presets(self):
        d = default_config().to_dict()
        d["scene"] = "paper"
        assert ExperimentConfig.from_dict(d).scene.n_elements == 64


class TestResultTable:
    def test_csv_round_trip(self, tmp_path):
        t = exp.ResultTable()
        t.add("wknn", 10.0, 4, [1.0, 2.0, 3.0], 0.0)
        t.add("active", 20.0, 4, [0.5, 0.25], 1e-16)
        t.to_csv(tmp_path / "r.csv")
        assert exp.ResultTable.read_csv(tmp_path / "r.csv").rows == t.rows
        row = t.get("wknn")
        assert row["mse"] == pytest.approx(14 / 3) and row["median"] == 2.0
        assert row["rmse"] == pytest.approx(math.sqrt(14 / 3))

    def test_nan_aborts(self):
        with pytest.raises(exp.MetricsError):
            exp.ResultTable().add("active", 0.0, 1, [1.0, float("nan")], 0.0)

    def test_empty_aborts(self):
        with pytest.raises(exp.MetricsError):
            exp.ResultTable().add("active", 0.0, 1, [], 0.0)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out, snrs=(0.0, 10.0, 20.0))
    return cfg, exp.run_experiment(cfg)


class TestExperiment:
    def test_rows_per_method_and_snr(self, tiny_run):
        cfg, table = tiny_run
        assert len(table.rows) == 15
        for m in cfg.methods:
            assert sorted(r["snr_db"] for r in table.rows if r["method"] == m) == [0.0, 10.0, 20.0]
        assert all(r["episodes"] == 30 and r["mse"] >= 0 and r["median"] >= 0 for r in table.rows)
        assert all(r["max_modulus_error"] <= 1e-9 for r in table.rows)

    def test_manifest(self, tiny_run):
        cfg, _ = tiny_run
        manifest = json.loads((Path(cfg.output_dir) / "results.manifest.json").read_text())
        assert manifest["config"] == cfg.to_dict()
        assert len(manifest["checkpoints"]) == 12
        assert {"risloc", "numpy", "python"} <= set(manifest["versions"])
        assert manifest["eval_episodes"] == 30
        assert all("eval" in v for v in manifest["wall_time_s"].values())
        assert load_config(Path(cfg.output_dir) / "config.yaml").to_dict() == cfg.to_dict()

    def test_rerun_is_byte_identical(self, tiny_run, tmp_path):
        cfg, _ = tiny_run
        before = (Path(cfg.output_dir) / "results.csv").read_bytes()
        exp.run_experiment(cfg, train=False)
        assert (Path(cfg.output_dir) / "results.csv").read_bytes() == before
        fresh = tiny_config(tmp_path, snrs=(0.0, 10.0, 20.0))
        exp.run_experiment(fresh)
        assert (tmp_path / "results.csv").read_bytes() == before

    def test_missing_checkpoint_names_path(self, tmp_path):
        cfg = tiny_config(tmp_path, methods=("static-random",))
        with pytest.raises(FileNotFoundError, match="static-random_snr20_T3.ckpt"):
            exp.run_experiment(cfg, train=False)

    def test_crlb_needs_no_checkpoint(self, tmp_path):
        table = exp.run_experiment(tiny_config(tmp_path, methods=("crlb-gd",), episodes=5), train=False)
        assert len(table.rows) == 1

    def test_locked_run_dir(self, tmp_path):
        cfg = tiny_config(tmp_path, methods=("crlb-gd",), episodes=2)
        with FileLock(str(tmp_path / ".lock")):
            with pytest.raises(exp.RunDirLocked):
                exp.run_experiment(cfg)

    def test_stale_checkpoint_retrained(self, tmp_path):
        cfg = tiny_config(tmp_path, methods=("static-random",), episodes=5)
        exp.run_experiment(cfg)
        path = exp.artifact_path(cfg, "static-random", 20.0)
        first = path.read_bytes()
        cfg.training.lr = 1e-2
        exp.run_experiment(cfg)
        assert path.read_bytes() != first

    def test_sweep_last_row_matches_experiment(self, tiny_run):
        cfg, table = tiny_run
        sweep = exp.sweep_frames(cfg, snr_db=20.0)
        assert [r["frames"] for r in sweep.rows] == [1, 2, 3]
        last, ref = sweep.get("active", frames=3), table.get("active", snr_db=20.0)
        for k in ("mse", "rmse", "median"):
            assert last[k] == pytest.approx(ref[k], abs=1e-12)
        assert exp.ResultTable.read_csv(Path(cfg.output_dir) / "sweep.csv").rows == sweep.rows


class TestRadioMap:
    def test_files_and_round_trip(self, tiny_run, tmp_path):
        cfg, _ = tiny_run
        w = exp.load_method(cfg, "active", 20.0)
        (rmap,) = rm.episode_radiomaps(w, cfg.scene, 100.0, cfg.frames, cfg.seeds.eval, [4])
        paths = rm.write_radiomap(rmap, tmp_path / "ep4")
        assert len(paths) == cfg.frames + 1 == len(list((tmp_path / "ep4").iterdir()))
        assert rmap.rss.shape == (3, 30, 70) and np.all(rmap.rss >= 0)
        back = rm.read_radiomap(tmp_path / "ep4")
        assert np.array_equal(back.rss, rmap.rss) and back.grid == rmap.grid
        assert np.allclose(back.thetas, rmap.thetas, atol=1e-15)
        assert np.array_equal(back.ue_position, rmap.ue_position)

    def test_cell_lookup(self):
        rmap = rm.radio_map(desk_scene(), np.ones((1, 16)), 100.0, [5.5, -34.5, -20.0])
        assert rmap.cell_of([5.5, -34.5, -20.0]) == (0, 0)
        assert rmap.cell_of([34.9, 34.9, -20.0]) == (29, 69)
        assert rmap.cell_of([20.2, 0.7, -20.0]) == (15, 35)  # block [20, 21) x [0, 1)

    def test_matched_beam_peaks_at_ue(self):
        scene = desk_scene()
        gen = np.random.default_rng(0)
        centers = rm.block_grid(scene)[0]
        h, v = los_model(scene, centers)
        bound = 100.0 * (np.abs(h) + np.abs(v).sum(axis=1)) ** 2
        for i in gen.choice(len(centers), 10, replace=False):
            theta = rm.matched_theta(scene, centers[i])
            rmap = rm.radio_map(scene, theta[None], 100.0, centers[i])
            ratio = rmap.rss[0].ravel() / bound
            assert np.argmax(ratio) == i and ratio[i] == pytest.approx(1.0, abs=1e-12)
            random = rm.los_rss(scene, centers[i:i + 1], np.exp(1j * gen.uniform(0, 6.3, (200, 16))), 100.0)
            assert rmap.rss[0].ravel()[i] >= random.max()

    def test_focusing_fraction(self):
        rmap = rm.RadioMap({"x0": 0.5, "y0": 0.5, "z": 0.0, "nx": 2, "ny": 2, "pitch": 1.0},
                           np.array([[[1.0, 2.0], [3.0, 4.0]], [[4.0, 0.0], [0.0, 0.0]]]),
                           np.array([0.5, 0.5, 0.0]), np.ones((2, 1)))
        assert rm.focusing_fraction(rmap).tolist() == [0.75, 0.0]


class TestCli:
    def write(self, tmp_path, **kw):
        cfg = tiny_config(tmp_path / "out", **kw)
        save_config(cfg, tmp_path / "c.yaml")
        return str(tmp_path / "c.yaml")

    def test_grad_check(self, capsys):
        assert cli.main(["grad-check", "--frames", "2"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_missing_checkpoint(self, tmp_path, capsys):
        path = self.write(tmp_path, methods=("active",))
        assert cli.main(["evaluate", "--config", path]) == 2
        assert "active_snr20_T3.ckpt" in capsys.readouterr().err

    def test_train_evaluate_sweep_radiomap(self, tmp_path, capsys):
        path = self.write(tmp_path, methods=("active", "wknn"), episodes=6)
        assert cli.main(["train", "--config", path]) == 0
        assert cli.main(["evaluate", "--config", path, "--print-config"]) == 0
        out = capsys.readouterr().out
        assert "output_dir:" in out and "wknn" in out
        assert cli.main(["sweep-frames", "--config", path]) == 0
        assert cli.main(["radiomap", "--config", path, "--episodes", "0", "2"]) == 0
        assert len(list((tmp_path / "out" / "radiomaps" / "episode_2").iterdir())) == 4

    def test_baseline_and_overrides(self, tmp_path):
        path = self.write(tmp_path, episodes=4)
        out = tmp_path / "other"
        assert cli.main(["baseline", "--config", path, "--method", "crlb-gd", "--output-dir", str(out),
                         "--snr", "5", "--eval-seed", "99"]) == 0
        rows = exp.ResultTable.read_csv(out / "baseline_crlb-gd.csv").rows
        assert [(r["method"], r["snr_db"]) for r in rows] == [("crlb-gd", 5.0)]
