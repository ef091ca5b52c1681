import itertools

import numpy as np
import pytest

from regionfed.errors import ConfigurationError, ParseError
from regionfed.partition import label_distance
from regionfed.fleet import compute_city_stats, fleet_abundances
from regionfed.synth import SynthConfig, generate, load, load_config, save


class TestConfig:
    def test_rho_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(rho=0.0)

    def test_rho_rounds_to_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(rho=0.04, classes=10)

    def test_bad_sizes_rejected(self):
        with pytest.raises(ConfigurationError):
            SynthConfig(n_avs=0)


class TestGenerate:
    def test_label_skew_two_labels(self):
        # rho=0.2, classes=10: exactly 2 distinct labels per AV (the one-swap
        # rule preserves subset size)
        out = generate(SynthConfig(rho=0.2, classes=10, seed=0))
        for data in out.datasets.values():
            assert len(np.unique(data.labels)) <= 2

    def test_iid_support(self):
        out = generate(SynthConfig(rho=1.0, classes=10, samples_per_av=200,
                                   seed=0))
        for data in out.datasets.values():
            assert len(np.unique(data.labels)) == 10

    def test_histogram_consistency(self):
        out = generate(SynthConfig(seed=3))
        for av in out.fleet:
            hist = np.bincount(out.datasets[av.id].labels, minlength=10)
            assert np.array_equal(av.label_counts, hist)

    def test_single_city(self):
        out = generate(SynthConfig(n_cities=1, seed=1))
        assert all(av.city == 0 for av in out.fleet)

    def test_every_city_populated(self):
        out = generate(SynthConfig(n_avs=10, n_cities=4, seed=2))
        assert {av.city for av in out.fleet} == {0, 1, 2, 3}

    def test_deterministic(self):
        a = generate(SynthConfig(seed=9))
        b = generate(SynthConfig(seed=9))
        assert np.array_equal(a.class_prototypes, b.class_prototypes)
        for av_a, av_b in zip(a.fleet, b.fleet):
            assert np.array_equal(av_a.coords, av_b.coords)
            assert np.array_equal(av_a.label_counts, av_b.label_counts)
        for k in a.datasets:
            assert np.array_equal(a.datasets[k].features,
                                  b.datasets[k].features)

    def test_split_partitions_rows(self):
        out = generate(SynthConfig(samples_per_av=30, seed=4))
        for data in out.datasets.values():
            joined = np.sort(np.concatenate([data.train_idx, data.test_idx]))
            assert np.array_equal(joined, np.arange(30))

    def test_spatial_similarity_premise(self):
        # same-city pairs are closer in label distance than cross-city pairs
        for seed in (0, 1, 2):
            out = generate(SynthConfig(rho=0.2, seed=seed))
            stats = compute_city_stats(out.fleet)
            abunds = fleet_abundances(out.fleet, stats)
            same, cross = [], []
            for a, b in itertools.combinations(range(len(out.fleet)), 2):
                d = label_distance(abunds[a], abunds[b])
                if out.fleet[a].city == out.fleet[b].city:
                    same.append(d)
                else:
                    cross.append(d)
            assert np.mean(same) < np.mean(cross)


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        cfg = SynthConfig(n_avs=6, n_cities=2, samples_per_av=15, seed=5)
        out = generate(cfg)
        save(out, cfg, tmp_path)
        back = load(tmp_path)
        assert np.array_equal(back.class_prototypes, out.class_prototypes)
        for av_a, av_b in zip(out.fleet, back.fleet):
            assert np.array_equal(av_a.coords, av_b.coords)
        for k in out.datasets:
            assert np.array_equal(out.datasets[k].features,
                                  back.datasets[k].features)
            assert np.array_equal(out.datasets[k].train_idx,
                                  back.datasets[k].train_idx)
        assert load_config(tmp_path) == cfg

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ParseError):
            load(tmp_path)

    def test_wrong_manifest_format(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"format": "other"}\n')
        with pytest.raises(ParseError):
            load(tmp_path)
