import json

import numpy as np
import pytest
import yaml

from regionfed.cli import main
from regionfed.fleet import compute_city_stats, fleet_abundances
from regionfed.partition import (PartitionConfig, load_structure,
                                 quantization_error)
from regionfed.synth import load as load_synth


def write_config(tmp_path, name="cfg.yaml", **fields):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(fields))
    return str(path)


def small_synth_fields(data_dir):
    return {
        "mode": "synth",
        "data_dir": str(data_dir),
        "synth": {"n_avs": 8, "n_cities": 2, "classes": 5, "feat_dim": 4,
                  "rho": 0.4, "samples_per_av": 15, "seed": 0},
    }


@pytest.fixture
def data_dir(tmp_path):
    cfg = write_config(tmp_path, **small_synth_fields(tmp_path / "data"))
    assert main(["--config", cfg]) == 0
    return tmp_path / "data"


class TestArgs:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["--config", str(tmp_path / "nope.yaml")]) == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_missing_mode(self, tmp_path, capsys):
        cfg = write_config(tmp_path, data_dir="x")
        assert main(["--config", cfg]) == 2
        assert "mode" in capsys.readouterr().err

    def test_unknown_mode(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mode="dance", data_dir="x")
        assert main(["--config", cfg]) == 2

    def test_bad_threads(self, tmp_path):
        cfg = write_config(tmp_path, mode="gradcheck")
        assert main(["--config", cfg, "--threads", "0"]) == 2

    def test_missing_data_dir(self, tmp_path):
        cfg = write_config(tmp_path, mode="partition")
        assert main(["--config", cfg]) == 2


class TestSynth:
    def test_writes_manifest(self, data_dir):
        assert (data_dir / "manifest.json").exists()
        assert (data_dir / "fleet.txt").exists()

    def test_invalid_field_exits_2(self, tmp_path, capsys):
        fields = small_synth_fields(tmp_path / "d")
        fields["synth"]["rho"] = 0.0
        cfg = write_config(tmp_path, **fields)
        assert main(["--config", cfg]) == 2

    def test_unknown_field_exits_2(self, tmp_path):
        fields = small_synth_fields(tmp_path / "d")
        fields["synth"]["bogus"] = 1
        cfg = write_config(tmp_path, **fields)
        assert main(["--config", cfg]) == 2

    def test_rerun_identical(self, tmp_path):
        fields = small_synth_fields(tmp_path / "d")
        cfg = write_config(tmp_path, **fields)
        assert main(["--config", cfg]) == 0
        first = (tmp_path / "d" / "fleet.txt").read_text()
        assert main(["--config", cfg]) == 0
        assert (tmp_path / "d" / "fleet.txt").read_text() == first


class TestPartition:
    def test_structure_and_reported_error(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, name="part.yaml", mode="partition",
                           data_dir=str(data_dir), seed=1,
                           partition={"k_regions": 2, "gamma": 0.5})
        assert main(["--config", cfg]) == 0
        out = capsys.readouterr().out
        structure = load_structure(data_dir / "structure.json")
        assert sum(len(r) for r in structure.regions) == 8
        # printed quantization error matches one recomputed from the file
        reported = float(out.split("quantization error:")[1].strip())
        data = load_synth(data_dir)
        stats = compute_city_stats(data.fleet)
        abunds = fleet_abundances(data.fleet, stats)
        recomputed = quantization_error(
            data.fleet, abunds, structure.centroids,
            PartitionConfig(k_regions=2, gamma=0.5))
        assert reported == pytest.approx(recomputed, rel=1e-12)

    def test_k_exceeding_n_exits_2(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="part.yaml", mode="partition",
                           data_dir=str(data_dir),
                           partition={"k_regions": 99})
        assert main(["--config", cfg]) == 2

    def test_single_region(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, name="part.yaml", mode="partition",
                           data_dir=str(data_dir), partition={"k_regions": 1})
        assert main(["--config", cfg]) == 0
        assert "region sizes: 8" in capsys.readouterr().out


def train_fields(data_dir, mode, rounds=2):
    return {
        "mode": mode,
        "data_dir": str(data_dir),
        "seed": 0,
        "train": {"local_epochs": 1, "batch_size": 8, "learning_rate": 0.1},
        "federation": {"rounds": rounds, "client_fraction": 0.5,
                       "hidden_units": 4},
    }


class TestTrain:
    def _partition(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="part.yaml", mode="partition",
                           data_dir=str(data_dir), partition={"k_regions": 2})
        assert main(["--config", cfg]) == 0

    def test_fedrav_requires_structure(self, tmp_path, data_dir, capsys):
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "fedrav"))
        assert main(["--config", cfg]) == 2
        assert "structure" in capsys.readouterr().err

    def test_fedrav_end_to_end(self, tmp_path, data_dir, capsys):
        self._partition(tmp_path, data_dir)
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "fedrav", rounds=2))
        assert main(["--config", cfg]) == 0
        records = [json.loads(line) for line in
                   (data_dir / "metrics_fedrav.jsonl").read_text().splitlines()]
        assert [r["round"] for r in records] == [0, 1]
        assert all("mean_acc" in r for r in records)
        assert (data_dir / "checkpoints" / "structure.json").exists()

    def test_single_round_single_record(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "local", rounds=1))
        assert main(["--config", cfg]) == 0
        lines = (data_dir / "metrics_local.jsonl").read_text().splitlines()
        assert len(lines) == 1

    def test_local_ignores_structure(self, tmp_path, data_dir):
        # no partition step needed for mode local
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "local"))
        assert main(["--config", cfg]) == 0

    def test_fedavg_deterministic_stream(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "fedavg"))
        assert main(["--config", cfg]) == 0
        first = (data_dir / "metrics_fedavg.jsonl").read_bytes()
        assert main(["--config", cfg]) == 0
        assert (data_dir / "metrics_fedavg.jsonl").read_bytes() == first

    def test_threads_flag_does_not_change_results(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "fedavg"))
        assert main(["--config", cfg, "--threads", "1"]) == 0
        one = (data_dir / "metrics_fedavg.jsonl").read_bytes()
        assert main(["--config", cfg, "--threads", "4"]) == 0
        assert (data_dir / "metrics_fedavg.jsonl").read_bytes() == one

    def test_seed_override_changes_stream(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="t.yaml",
                           **train_fields(data_dir, "fedavg"))
        assert main(["--config", cfg, "--seed", "0"]) == 0
        a = (data_dir / "metrics_fedavg.jsonl").read_bytes()
        assert main(["--config", cfg, "--seed", "1"]) == 0
        b = (data_dir / "metrics_fedavg.jsonl").read_bytes()
        assert a != b


class TestExportRgb:
    def test_writes_rgb(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="rgb.yaml", mode="export-rgb",
                           data_dir=str(data_dir), rgb_categories=[0, 1, 2])
        assert main(["--config", cfg]) == 0
        lines = (data_dir / "rgb.txt").read_text().splitlines()
        assert lines[0].startswith("rgb-v1")
        assert len(lines) == 9

    def test_bad_category_exits_2(self, tmp_path, data_dir):
        cfg = write_config(tmp_path, name="rgb.yaml", mode="export-rgb",
                           data_dir=str(data_dir), rgb_categories=[0, 1, 99])
        assert main(["--config", cfg]) == 2


class TestGradcheck:
    def test_pass_exit_0(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mode="gradcheck", seed=3,
                           gradcheck={"trials": 5})
        assert main(["--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "seed: 3" in out
        assert "PASS" in out

    def test_flipped_sign_exit_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path, mode="gradcheck",
                           gradcheck={"trials": 3, "flip_sign": True})
        assert main(["--config", cfg]) == 1
        assert "FAIL" in capsys.readouterr().err
