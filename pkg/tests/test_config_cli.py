import json

import numpy as np
import pytest

from mavenlab import cli
from mavenlab import experiment as E
from mavenlab.config import ConfigError, parse_config_text, validate_config

MINIMAL = "model = maven\n"

RING = """\
model = maven
dataset.kind = ring
dataset.modes = 3
dataset.samples_per_mode = 20
dataset.radius = 1.0
dataset.sigma = 0.05
network.latent_dim = 3
network.channels = 8,8
network.batchnorm = false
ensemble.k = 2
train.epochs = 1
train.batch_size = 10
train.m = 30
train.labeled_fraction = 0.5
eval.fid_repeats = 2
eval.sample_count = 40
repeats = 1
"""


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert cfg.model == "maven"
        assert cfg["train.lr_g"] == pytest.approx(2e-4)
        assert cfg["train.lr_e"] == pytest.approx(1e-5)
        assert cfg["train.adam_beta1"] == pytest.approx(0.5)
        assert cfg["train.labeled_fraction"] == pytest.approx(0.10)
        assert cfg["ensemble.k"] == 1
        assert cfg["eval.ddd_weights"] == (0.4, 0.3, 0.2, 0.1)

    def test_missing_model(self):
        with pytest.raises(ConfigError, match="model"):
            parse_config_text("train.epochs = 1\n")

    def test_unknown_key_with_line_number(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("model = maven\nensamble.k = 3\n")
        assert any("2" in m and "ensamble.k" in m for m in err.value.errors)

    def test_dcgan_forbids_encoder_lr(self):
        with pytest.raises(ConfigError, match="lr_e"):
            parse_config_text("model = dcgan\ntrain.lr_e = 1e-5\n")

    def test_ensemble_needs_maven(self):
        with pytest.raises(ConfigError, match="maven"):
            parse_config_text("model = dcgan\nensemble.k = 3\n")
        with pytest.raises(ConfigError, match="maven"):
            parse_config_text("model = vaegan\nensemble.k = 3\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("model = maven\nmodel = dcgan\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("model = maven\ntrain.epochs = many\n")
        assert any(":2:" in m for m in err.value.errors)

    def test_all_errors_reported_at_once(self):
        with pytest.raises(ConfigError) as err:
            parse_config_text("bogus = 1\ntrain.epochs = many\n")
        assert len(err.value.errors) >= 3  # unknown key, bad value, missing model

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# comment\n\nmodel = vaegan  # trailing\n")
        assert cfg.model == "vaegan"

    def test_dataset_path_must_exist(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config_text(
                f"model = maven\ndataset.kind = cifar10\n"
                f"dataset.path = {tmp_path}/nope\n")

    def test_weights_length_checked(self):
        with pytest.raises(ConfigError, match="weights"):
            parse_config_text(
                "model = maven\nensemble.k = 3\nensemble.weights = 1.0,1.0\n")

    def test_with_encoder_property(self):
        assert parse_config_text("model = maven\n").with_encoder
        assert parse_config_text("model = vaegan\n").with_encoder
        assert not parse_config_text("model = dcgan\n").with_encoder

    def test_validate_config_file(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(RING)
        cfg = validate_config(path)
        assert cfg["ensemble.k"] == 2

    def test_validate_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            validate_config(tmp_path / "missing.cfg")


class TestModelLabel:
    def test_labels(self):
        assert E.model_label(parse_config_text("model = dcgan\n")) == "dcgan"
        assert E.model_label(parse_config_text("model = vaegan\n")) == "vaegan"
        assert E.model_label(parse_config_text(
            "model = maven\nensemble.k = 3\n")) == "maven-mean3D"
        assert E.model_label(parse_config_text(
            "model = maven\nensemble.k = 2\nensemble.mode = random\n")) == \
            "maven-random2D"


class TestDensityHistogram:
    def test_identical_inputs_identical_columns(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1, 500)
        csv_path, png_path, overlap = E.emit_density_histogram(
            x, x.copy(), bins=20, out_csv=tmp_path / "d.csv",
            out_png=tmp_path / "d.png")
        rows = (tmp_path / "d.csv").read_text().splitlines()[1:]
        assert len(rows) == 20
        for row in rows:
            _, _, dr, df = row.split(",")
            assert dr == df
        assert overlap == pytest.approx(1.0, abs=1e-9)
        assert png_path.exists()

    def test_densities_integrate_to_one(self, tmp_path):
        rng = np.random.default_rng(1)
        E.emit_density_histogram(rng.normal(0, 1, 300), rng.normal(2, 0.5, 400),
                                 bins=25, out_csv=tmp_path / "d.csv")
        rows = [r.split(",") for r in
                (tmp_path / "d.csv").read_text().splitlines()[1:]]
        widths = [float(b) - float(a) for a, b, _, _ in rows]
        mass_r = sum(w * float(dr) for w, (_, _, dr, _) in zip(widths, rows))
        mass_f = sum(w * float(df) for w, (_, _, _, df) in zip(widths, rows))
        assert mass_r == pytest.approx(1.0, abs=1e-9)
        assert mass_f == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_supports_zero_overlap(self, tmp_path):
        _, _, overlap = E.emit_density_histogram(
            np.linspace(0, 1, 100), np.linspace(5, 6, 100),
            bins=30, out_csv=tmp_path / "d.csv")
        assert overlap == pytest.approx(0.0, abs=1e-9)

    def test_image_stacks_projected(self, tmp_path):
        rng = np.random.default_rng(2)
        imgs = rng.uniform(-1, 1, (50, 4, 4, 1))
        _, _, overlap = E.emit_density_histogram(imgs, imgs, bins=10,
                                                 out_csv=tmp_path / "d.csv")
        assert overlap == pytest.approx(1.0, abs=1e-9)

    def test_too_few_bins(self, tmp_path):
        with pytest.raises(ValueError):
            E.emit_density_histogram(np.ones(5), np.ones(5), bins=1,
                                     out_csv=tmp_path / "d.csv")


@pytest.fixture
def ring_cfg(tmp_path):
    path = tmp_path / "ring.cfg"
    path.write_text(RING)
    return path


class TestRunExperiment:
    def test_smoke_and_artifacts(self, ring_cfg, tmp_path):
        cfg = validate_config(ring_cfg)
        out = tmp_path / "run"
        bundle = E.run_experiment(cfg, out, repeats=1, progress=False)
        assert bundle.ok and not bundle.failures
        assert (out / "repeat_00" / "history.csv").exists()
        assert (out / "repeat_00" / "report.json").exists()
        assert (out / "fid_ddd.csv").exists()
        assert (out / "accuracy_f1.csv").exists()
        assert (out / "density_histogram.csv").exists()
        assert (out / "density_histogram.png").exists()
        for path in bundle.files:
            assert path.exists()
        report = json.loads((out / "repeat_00" / "report.json").read_text())
        assert report["model"] == "maven-mean2D"
        assert len(report["fid_values"]) == 2
        assert 0.0 <= report["accuracy"] <= 1.0
        assert len(report["f1"]) == 3

    def test_refuses_nonempty_out(self, ring_cfg, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / "stale.txt").write_text("x")
        with pytest.raises(FileExistsError):
            E.run_experiment(validate_config(ring_cfg), out, repeats=1,
                             progress=False)
        bundle = E.run_experiment(validate_config(ring_cfg), out, repeats=1,
                                  overwrite=True, progress=False)
        assert bundle.ok

    def test_table_layouts(self, ring_cfg, tmp_path):
        out = tmp_path / "run"
        E.run_experiment(validate_config(ring_cfg), out, repeats=1,
                         progress=False)
        fid_header = (out / "fid_ddd.csv").read_text().splitlines()[0]
        assert fid_header == "model,fid_mean,fid_std,ddd"
        acc_header = (out / "accuracy_f1.csv").read_text().splitlines()[0]
        assert acc_header == "model,accuracy,f1_mode_0,f1_mode_1,f1_mode_2"


class TestCli:
    def test_train_exit_zero(self, ring_cfg, tmp_path, capsys):
        rc = cli.main(["train", "--config", str(ring_cfg),
                       "--out", str(tmp_path / "out"), "--repeats", "1"])
        assert rc == 0
        assert "wrote" in capsys.readouterr().out

    def test_config_errors_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("model = maven\nensamble.k = 3\n")
        rc = cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "ensamble.k" in capsys.readouterr().err

    def test_existing_out_exit_one(self, ring_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        (out / "stale").write_text("x")
        rc = cli.main(["train", "--config", str(ring_cfg), "--out", str(out)])
        assert rc == 1
        assert "--overwrite" in capsys.readouterr().err

    def test_env_var_output_root(self, ring_cfg, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        rc = cli.main(["train", "--config", str(ring_cfg), "--repeats", "1"])
        assert rc == 0
        assert (tmp_path / "root" / "maven-mean2D" / "fid_ddd.csv").exists()

    def test_seed_override_changes_reports(self, ring_cfg, tmp_path):
        outs = {}
        for seed in (0, 1):
            out = tmp_path / f"s{seed}"
            rc = cli.main(["train", "--config", str(ring_cfg), "--seed", str(seed),
                           "--out", str(out), "--repeats", "1"])
            assert rc == 0
            outs[seed] = json.loads(
                (out / "repeat_00" / "report.json").read_text())
        assert outs[0]["seed"] == 0 and outs[1]["seed"] == 1
        assert outs[0]["fid_values"] != outs[1]["fid_values"]

    def test_eval_roundtrip(self, ring_cfg, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", str(ring_cfg),
                         "--out", str(out), "--repeats", "1"]) == 0
        ckpt = out / "repeat_00" / "checkpoints" / "final"
        rc = cli.main(["eval", "--config", str(ring_cfg),
                       "--checkpoint", str(ckpt),
                       "--out", str(tmp_path / "eval")])
        assert rc == 0
        report = json.loads((tmp_path / "eval" / "report.json").read_text())
        assert report["model"] == "maven-mean2D"

    def test_plot_density(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        real = tmp_path / "real.npy"
        fake = tmp_path / "fake.npy"
        np.save(real, rng.normal(0, 1, 200))
        np.save(fake, rng.normal(0, 1, 200))
        rc = cli.main(["plot-density", "--real", str(real), "--fake", str(fake),
                       "--out", str(tmp_path / "dens"), "--bins", "15"])
        assert rc == 0
        assert (tmp_path / "dens" / "density_histogram.csv").exists()
        assert (tmp_path / "dens" / "density_histogram.png").exists()
        assert "overlap coefficient" in capsys.readouterr().out

    def test_fetch_data_unknown_dataset(self, capsys):
        # argparse rejects unknown dataset names before any network access
        with pytest.raises(SystemExit):
            cli.main(["fetch-data", "imagenet"])
