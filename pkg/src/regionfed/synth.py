"""Reproducible synthetic fleets with spatially correlated Non-IID label
skew.

Cities get Gaussian spatial clusters and a base label subset; each vehicle
perturbs its city's subset by at most one label swap, then samples features
from fixed per-class Gaussian blobs. Vehicles in the same city therefore
share most of their label support, realizing the regional-similarity
premise the partitioner exploits.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List

import numpy as np

from .errors import ConfigurationError, ParseError
from .fleet import VehicleProfile, load_fleet, save_fleet
from .model import Dataset, load_dataset, save_dataset

MANIFEST_FORMAT = "synth-manifest-v1"


@dataclass
class SynthConfig:
    n_avs: int = 20
    n_cities: int = 4
    classes: int = 10
    feat_dim: int = 12
    rho: float = 0.2
    samples_per_av: int = 50
    test_fraction: float = 0.2
    cluster_spread: float = 1.0
    prototype_scale: float = 1.2
    city_box: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_avs, self.n_cities, self.classes, self.feat_dim,
               self.samples_per_av) < 1:
            raise ConfigurationError("size parameters must be positive")
        if not 0.0 < self.rho <= 1.0 or not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError("rho in (0,1], test_fraction in (0,1)")
        if round(self.rho * self.classes) < 1:
            raise ConfigurationError("rho * classes rounds to zero labels")
        if self.cluster_spread <= 0:
            raise ConfigurationError("cluster_spread must be positive")


@dataclass
class SynthOutput:
    fleet: List[VehicleProfile]
    datasets: Dict[int, Dataset]
    class_prototypes: np.ndarray   # (classes, feat_dim)


def _av_label_subset(base: np.ndarray, classes: int,
                     rng: np.random.Generator) -> np.ndarray:
    """City subset with at most one label swapped for an outside label."""
    subset = base.copy()
    outside = np.setdiff1d(np.arange(classes), subset)
    if len(outside) > 0 and rng.random() < 0.5:
        subset[rng.integers(len(subset))] = outside[rng.integers(len(outside))]
    return np.unique(subset)


def generate(cfg: SynthConfig) -> SynthOutput:
    rng = np.random.default_rng(cfg.seed)
    prototypes = rng.normal(size=(cfg.classes, cfg.feat_dim)) * cfg.prototype_scale
    city_centers = rng.uniform(0.0, cfg.city_box, size=(cfg.n_cities, 2))
    subset_size = round(cfg.rho * cfg.classes)
    city_subsets = [rng.choice(cfg.classes, size=subset_size, replace=False)
                    for _ in range(cfg.n_cities)]

    # round-robin city assignment guarantees every city is populated
    cities = np.array([i % cfg.n_cities for i in range(cfg.n_avs)])
    fleet, datasets = [], {}
    for av_id in range(cfg.n_avs):
        city = int(cities[av_id])
        coords = city_centers[city] + rng.normal(scale=cfg.cluster_spread, size=2)
        subset = _av_label_subset(city_subsets[city], cfg.classes, rng)
        labels = rng.choice(subset, size=cfg.samples_per_av)
        features = prototypes[labels] + rng.normal(
            size=(cfg.samples_per_av, cfg.feat_dim))
        order = rng.permutation(cfg.samples_per_av)
        n_test = max(1, round(cfg.test_fraction * cfg.samples_per_av))
        test_idx = np.sort(order[:n_test])
        train_idx = np.sort(order[n_test:])
        counts = np.bincount(labels, minlength=cfg.classes)
        fleet.append(VehicleProfile(id=av_id, coords=coords,
                                    label_counts=counts, city=city))
        datasets[av_id] = Dataset(features=features, labels=labels,
                                  classes=cfg.classes, train_idx=train_idx,
                                  test_idx=test_idx)
    return SynthOutput(fleet=fleet, datasets=datasets,
                       class_prototypes=prototypes)


def save(out: SynthOutput, cfg: SynthConfig, data_dir) -> str:
    """Write fleet, per-vehicle datasets, prototypes, and a manifest tying
    them to the generating configuration. Returns the manifest path."""
    os.makedirs(data_dir, exist_ok=True)
    save_fleet(out.fleet, os.path.join(data_dir, "fleet.txt"))
    for av_id, data in out.datasets.items():
        save_dataset(data, os.path.join(data_dir, f"av_{av_id}.data"))
    proto_path = os.path.join(data_dir, "prototypes.txt")
    with open(proto_path, "w") as fh:
        c, d = out.class_prototypes.shape
        fh.write(f"prototypes-v1 classes={c} d={d}\n")
        for row in out.class_prototypes:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    manifest = {
        "format": MANIFEST_FORMAT,
        "config": asdict(cfg),
        "fleet": "fleet.txt",
        "datasets": {str(av.id): f"av_{av.id}.data" for av in out.fleet},
        "prototypes": "prototypes.txt",
    }
    manifest_path = os.path.join(data_dir, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load(data_dir) -> SynthOutput:
    manifest_path = os.path.join(data_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"missing manifest in {data_dir}", 1)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc.msg), exc.lineno)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ParseError(f"expected '{MANIFEST_FORMAT}' manifest", 1)
    fleet = load_fleet(os.path.join(data_dir, manifest["fleet"]))
    datasets = {int(av_id): load_dataset(os.path.join(data_dir, rel))
                for av_id, rel in manifest["datasets"].items()}
    with open(os.path.join(data_dir, manifest["prototypes"])) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("prototypes-v1"):
        raise ParseError("expected 'prototypes-v1' header", 1)
    prototypes = np.array([[float(v) for v in line.split(",")]
                           for line in lines[1:] if line.strip()])
    return SynthOutput(fleet=fleet, datasets=datasets,
                       class_prototypes=prototypes)


def load_config(data_dir) -> SynthConfig:
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        return SynthConfig(**json.load(fh)["config"])
