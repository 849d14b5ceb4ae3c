import csv
import os

import numpy as np
import pytest

import show_samples
import train_qfal
from library.mnist_util import encode_idx_images, encode_idx_labels
from library.report_util import read_round_metrics
from library.train_util import load_checkpoint


def sweep_argv(files, out, *extra):
    return [
        "--train-images", files["train_images"],
        "--train-labels", files["train_labels"],
        "--test-images", files["test_images"],
        "--test-labels", files["test_labels"],
        "--clients", "2",
        "--coverage", "0", "0.5",
        "--rounds", "2",
        "--adv-rounds", "2",
        "--per-client", "12",
        "--test-size", "30",
        "--epochs", "1",
        "--batch-size", "8",
        "--eps-grid", "0", "0.1",
        "--attack_iterations", "2",
        "--out", out,
        *extra,
    ]


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


@pytest.fixture
def sweep_dir(mnist_files, tmp_path):
    out = str(tmp_path / "out")
    assert train_qfal.main(sweep_argv(mnist_files, out)) == 0
    return out


class TestSweep:
    def test_output_tree(self, sweep_dir):
        for name in [
            "resolved_config.toml",
            "round_metrics.csv",
            "robustness_metrics.csv",
            "checkpoints/k2_cov0.qfal",
            "checkpoints/k2_cov50.qfal",
            "metrics/rounds_k2_cov0.csv",
            "metrics/rounds_k2_cov50.csv",
            "tables/final_table_k2.csv",
            "tables/baseline_table.csv",
            "tables/tradeoff_k2.csv",
            "plots/convergence_k2_cov0.svg",
            "plots/convergence_k2_cov50.svg",
        ]:
            assert os.path.isfile(os.path.join(sweep_dir, name)), name

    def test_final_table(self, sweep_dir):
        lines = read_lines(os.path.join(sweep_dir, "tables", "final_table_k2.csv"))
        assert lines[0] == "coverage,eps_0,eps_0.1"
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "0.5"]
        for line in lines[1:]:
            assert all(0.0 <= float(cell) <= 100.0 for cell in line.split(",")[1:])

    def test_round_metrics(self, sweep_dir):
        records = read_round_metrics(os.path.join(sweep_dir, "round_metrics.csv"))
        assert [(r.phase, r.round) for r in records] == [("baseline", 0), ("baseline", 1), ("baseline", 2), ("adv", 0), ("adv", 1), ("adv", 2)]

    def test_warm_start_continuity(self, sweep_dir):
        records = read_round_metrics(os.path.join(sweep_dir, "round_metrics.csv"))
        baseline_final = [r for r in records if r.phase == "baseline"][-1]
        adv_start = [r for r in records if r.phase == "adv"][0]
        assert (adv_start.loss, adv_start.accuracy) == (baseline_final.loss, baseline_final.accuracy)

    def test_checkpoints(self, sweep_dir):
        baseline = load_checkpoint(os.path.join(sweep_dir, "checkpoints", "k2_cov0.qfal"))
        adv = load_checkpoint(os.path.join(sweep_dir, "checkpoints", "k2_cov50.qfal"))
        assert baseline.round == 2 and baseline.provenance.phases == [("baseline", 2)]
        assert adv.provenance.phases == [("baseline", 2), ("adv", 2)]
        assert adv.provenance.coverage == 0.5

    def test_robustness_metrics(self, sweep_dir):
        with open(os.path.join(sweep_dir, "robustness_metrics.csv"), encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [(row["coverage"], row["split"], row["epsilon"]) for row in rows] == [
            ("0", "clean", "0"),
            ("0", "adv", "0.1"),
            ("0.5", "clean", "0"),
            ("0.5", "adv", "0.1"),
        ]

    def test_rerun_is_byte_identical(self, mnist_files, sweep_dir, tmp_path):
        again = str(tmp_path / "again")
        assert train_qfal.main(sweep_argv(mnist_files, again)) == 0
        for name in ["round_metrics.csv", "robustness_metrics.csv", "tables/final_table_k2.csv", "checkpoints/k2_cov50.qfal"]:
            with open(os.path.join(sweep_dir, name), "rb") as a, open(os.path.join(again, name), "rb") as b:
                assert a.read() == b.read(), name

    def test_resume(self, mnist_files, sweep_dir, capsys):
        before = {}
        for name in ["round_metrics.csv", "tables/final_table_k2.csv"]:
            with open(os.path.join(sweep_dir, name), "rb") as f:
                before[name] = f.read()
        capsys.readouterr()

        assert train_qfal.main(sweep_argv(mnist_files, sweep_dir, "--resume")) == 0
        assert "resume" in capsys.readouterr().out
        for name, content in before.items():
            with open(os.path.join(sweep_dir, name), "rb") as f:
                assert f.read() == content, name

    def test_resume_warns_on_changed_options(self, mnist_files, sweep_dir, capsys):
        capsys.readouterr()
        argv = sweep_argv(mnist_files, sweep_dir, "--resume") + ["--epochs", "2"]
        assert train_qfal.main(argv) == 0
        out = capsys.readouterr().out
        assert "warning" in out and "epochs" in out


class TestErrors:
    def test_missing_files(self, tmp_path, capsys):
        files = {key: str(tmp_path / key) for key in ["train_images", "train_labels", "test_images", "test_labels"]}
        assert train_qfal.main(sweep_argv(files, str(tmp_path / "out"))) == 1
        assert "error" in capsys.readouterr().out

    def test_missing_argument(self, tmp_path):
        assert train_qfal.main(["--out", str(tmp_path / "out")]) == 1

    def test_wrong_image_size(self, mnist_files, tmp_path, capsys):
        images = tmp_path / "small-images"
        images.write_bytes(encode_idx_images(np.zeros((3, 20, 20), dtype=np.uint8)))
        labels = tmp_path / "small-labels"
        labels.write_bytes(encode_idx_labels([0, 1, 2]))
        files = dict(mnist_files, train_images=str(images), train_labels=str(labels))
        assert train_qfal.main(sweep_argv(files, str(tmp_path / "out"))) == 1
        assert "28x28" in capsys.readouterr().out

    def test_not_enough_samples(self, mnist_files, tmp_path, capsys):
        argv = sweep_argv(mnist_files, str(tmp_path / "out")) + ["--per-client", "1000"]
        assert train_qfal.main(argv) == 1
        assert "not enough samples" in capsys.readouterr().out

    def test_invalid_grid(self, mnist_files, tmp_path):
        argv = sweep_argv(mnist_files, str(tmp_path / "out")) + ["--eps-grid", "0.1", "0.2"]
        assert train_qfal.main(argv) == 1

    def test_config_file(self, mnist_files, tmp_path):
        config = tmp_path / "quick.toml"
        config.write_text("[federation]\nclients = [2]\ncoverage = [0.0]\nrounds = 1\n")
        argv = sweep_argv(mnist_files, str(tmp_path / "out"))
        # drop the sweep flags the config file provides
        for flag, count in [("--clients", 1), ("--coverage", 2), ("--rounds", 1)]:
            i = argv.index(flag)
            del argv[i : i + 1 + count]
        assert train_qfal.main(argv + ["--config_file", str(config)]) == 0
        records = read_round_metrics(str(tmp_path / "out" / "round_metrics.csv"))
        assert [(r.phase, r.round) for r in records] == [("baseline", 0), ("baseline", 1)]


class TestShowSamples:
    def test_report(self, mnist_files, sweep_dir, tmp_path, capsys):
        out = str(tmp_path / "report.txt")
        argv = [
            "--checkpoint", os.path.join(sweep_dir, "checkpoints", "k2_cov50.qfal"),
            "--test-images", mnist_files["test_images"],
            "--test-labels", mnist_files["test_labels"],
            "--test-size", "30",
            "--n", "4",
            "--epsilon", "0.1",
            "--attack-iterations", "2",
            "--show-images",
            "--out", out,
        ]
        assert show_samples.main(argv) == 0
        lines = read_lines(out)
        assert lines[1].startswith("index,label")
        assert len([line for line in lines if not line.startswith(" ")]) == 2 + 4

    def test_bad_checkpoint(self, tmp_path, mnist_files):
        path = tmp_path / "bad.qfal"
        path.write_text("not a checkpoint\n")
        argv = ["--checkpoint", str(path), "--test-images", mnist_files["test_images"], "--test-labels", mnist_files["test_labels"]]
        assert show_samples.main(argv) == 1
