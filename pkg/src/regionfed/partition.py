"""Region partitioning under the combined spatial/label distance.

Vehicles are grouped into K regions by probabilistic farthest-point seeding
followed by Lloyd refinement, both driven by the region-wise distance:
spatial Euclidean distance plus a gamma-weighted quadratic-form distance
between abundance vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, UsageError
from .fleet import (VehicleProfile, compute_city_stats, fleet_abundances)

STRUCTURE_FORMAT = "structure-v1"


@dataclass
class PartitionConfig:
    k_regions: int
    gamma: float = 0.5
    weight_matrix: Optional[np.ndarray] = None   # None -> identity
    max_lloyd_iters: int = 100
    stability_tol: float = 0.0

    def __post_init__(self):
        if self.k_regions < 1:
            raise ConfigurationError("k_regions must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.weight_matrix is not None:
            self.weight_matrix = np.asarray(self.weight_matrix, dtype=float)
            if np.any(self.weight_matrix < 0):
                raise ConfigurationError("weight_matrix entries must be >= 0")


@dataclass
class Centroid:
    coords: np.ndarray      # (2,)
    abundance: np.ndarray   # (m,), real-valued mean, not re-quantized


@dataclass
class RegionalStructure:
    regions: list            # K lists of vehicle ids
    centroids: list          # K Centroids
    quantization_error: float


def label_distance(a: np.ndarray, b: np.ndarray,
                   w: Optional[np.ndarray] = None) -> float:
    """sqrt(|a-b|^T W |a-b|); equals Euclidean distance for W = identity."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise UsageError(f"abundance shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if w is None:
        return float(np.linalg.norm(diff))
    w = np.asarray(w, dtype=float)
    if w.shape != (len(a), len(a)):
        raise UsageError(f"weight matrix shape {w.shape} does not match {len(a)}")
    return float(np.sqrt(diff @ w @ diff))


def rwd(coords_a: np.ndarray, abund_a: np.ndarray,
        coords_b: np.ndarray, abund_b: np.ndarray,
        cfg: PartitionConfig) -> float:
    """Region-wise distance: spatial term plus gamma-weighted label term."""
    spatial = float(np.linalg.norm(np.asarray(coords_a) - np.asarray(coords_b)))
    if cfg.gamma == 0.0:
        return spatial
    return spatial + cfg.gamma * label_distance(abund_a, abund_b, cfg.weight_matrix)


def _distances_to_centroid(coords: np.ndarray, abunds: np.ndarray,
                           c_coords: np.ndarray, c_abund: np.ndarray,
                           cfg: PartitionConfig) -> np.ndarray:
    """Vectorized region-wise distance from every vehicle to one centroid."""
    spatial = np.linalg.norm(coords - c_coords, axis=1)
    if cfg.gamma == 0.0:
        return spatial
    diff = np.abs(abunds - c_abund)
    if cfg.weight_matrix is None:
        lab = np.linalg.norm(diff, axis=1)
    else:
        lab = np.sqrt(np.einsum("ni,ij,nj->n", diff, cfg.weight_matrix, diff))
    return spatial + cfg.gamma * lab


def _distance_matrix(coords, abunds, centroids, cfg) -> np.ndarray:
    """(N, K) matrix of vehicle-to-centroid region-wise distances."""
    return np.stack([
        _distances_to_centroid(coords, abunds, c.coords, c.abundance, cfg)
        for c in centroids
    ], axis=1)


def quantization_error(fleet: Sequence[VehicleProfile], abunds: np.ndarray,
                       centroids: Sequence[Centroid],
                       cfg: PartitionConfig) -> float:
    """Sum over vehicles of the squared distance to the nearest centroid."""
    if not centroids:
        raise UsageError("quantization error needs at least one centroid")
    coords = np.stack([av.coords for av in fleet])
    dmat = _distance_matrix(coords, abunds, centroids, cfg)
    return float(np.sum(dmat.min(axis=1) ** 2))


def seed_centroids(fleet: Sequence[VehicleProfile], abunds: np.ndarray,
                   cfg: PartitionConfig,
                   rng: np.random.Generator) -> list[Centroid]:
    """Probabilistic seeding: first centroid uniform, the rest proportional
    to squared distance from the nearest already-chosen centroid.

    Vehicles coincident with a chosen centroid carry zero mass; if the total
    mass hits zero before K centroids exist, the remainder is drawn
    uniformly from unchosen vehicles.
    """
    n = len(fleet)
    if cfg.k_regions > n:
        raise ConfigurationError(f"K={cfg.k_regions} exceeds fleet size {n}")
    coords = np.stack([av.coords for av in fleet])
    chosen = [int(rng.integers(n))]
    best_sq = _distances_to_centroid(
        coords, abunds, coords[chosen[0]], abunds[chosen[0]], cfg) ** 2
    while len(chosen) < cfg.k_regions:
        total = best_sq.sum()
        if total > 0:
            idx = int(rng.choice(n, p=best_sq / total))
        else:
            pool = np.array([i for i in range(n) if i not in chosen])
            idx = int(rng.choice(pool))
        chosen.append(idx)
        d_new = _distances_to_centroid(coords, abunds, coords[idx], abunds[idx], cfg) ** 2
        best_sq = np.minimum(best_sq, d_new)
    return [Centroid(coords=coords[i].copy(), abundance=abunds[i].astype(float))
            for i in chosen]


def _assign(coords, abunds, centroids, cfg) -> np.ndarray:
    """Nearest-centroid labels; ties go to the lowest centroid index."""
    return _distance_matrix(coords, abunds, centroids, cfg).argmin(axis=1)


def _repair_empty(labels: np.ndarray, coords, abunds, centroids, cfg) -> np.ndarray:
    """Give each empty region the farthest member of the most populous one."""
    k = len(centroids)
    for r in range(k):
        if np.any(labels == r):
            continue
        sizes = np.bincount(labels, minlength=k)
        donor = int(sizes.argmax())
        members = np.flatnonzero(labels == donor)
        d = _distances_to_centroid(
            coords[members], abunds[members],
            centroids[donor].coords, centroids[donor].abundance, cfg)
        labels[members[d.argmax()]] = r
    return labels


def lloyd_refine(fleet: Sequence[VehicleProfile], abunds: np.ndarray,
                 centroids: Sequence[Centroid],
                 cfg: PartitionConfig,
                 history: Optional[list] = None) -> RegionalStructure:
    """Alternate nearest-centroid assignment and mean-centroid update until
    the assignment stops changing or the iteration cap is hit.

    If `history` is a list, the quantization error after each centroid
    update is appended to it."""
    coords = np.stack([av.coords for av in fleet])
    centroids = [Centroid(c.coords.copy(), np.asarray(c.abundance, dtype=float).copy())
                 for c in centroids]
    labels = None
    for _ in range(cfg.max_lloyd_iters):
        new_labels = _assign(coords, abunds, centroids, cfg)
        new_labels = _repair_empty(new_labels, coords, abunds, centroids, cfg)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for r in range(len(centroids)):
            members = labels == r
            centroids[r] = Centroid(
                coords=coords[members].mean(axis=0),
                abundance=abunds[members].astype(float).mean(axis=0),
            )
        if history is not None:
            history.append(quantization_error(fleet, abunds, centroids, cfg))
    regions = [[av.id for av, lab in zip(fleet, labels) if lab == r]
               for r in range(len(centroids))]
    err = quantization_error(fleet, abunds, centroids, cfg)
    return RegionalStructure(regions=regions, centroids=centroids,
                             quantization_error=err)


def partition(fleet: Sequence[VehicleProfile], cfg: PartitionConfig,
              rng: np.random.Generator,
              history: Optional[list] = None) -> RegionalStructure:
    """Full pipeline: city stats, abundances, seeding, Lloyd refinement."""
    stats = compute_city_stats(fleet)
    abunds = fleet_abundances(fleet, stats)
    seeds = seed_centroids(fleet, abunds, cfg, rng)
    return lloyd_refine(fleet, abunds, seeds, cfg, history)


def save_structure(structure: RegionalStructure, path) -> None:
    payload = {
        "format": STRUCTURE_FORMAT,
        "regions": structure.regions,
        "centroids": [
            {"coords": [repr(float(x)) for x in c.coords],
             "abundance": [repr(float(x)) for x in c.abundance]}
            for c in structure.centroids
        ],
        "quantization_error": repr(float(structure.quantization_error)),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_structure(path) -> RegionalStructure:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc.msg), exc.lineno)
    if payload.get("format") != STRUCTURE_FORMAT:
        raise ParseError(f"expected '{STRUCTURE_FORMAT}' structure file", 1)
    centroids = [
        Centroid(coords=np.array([float(x) for x in c["coords"]]),
                 abundance=np.array([float(x) for x in c["abundance"]]))
        for c in payload["centroids"]
    ]
    return RegionalStructure(
        regions=[list(map(int, region)) for region in payload["regions"]],
        centroids=centroids,
        quantization_error=float(payload["quantization_error"]),
    )
