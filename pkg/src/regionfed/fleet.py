"""Vehicle fleet data model, label-abundance statistics, and fleet file I/O.

Each vehicle carries plane coordinates, a per-category object count vector,
and a city index. Counts are normalized against cross-city average extremes
into integer abundance codes in [0, 255], which later feed the label
distance used for region partitioning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, UsageError

FLEET_FORMAT = "fleet-v1"
RGB_FORMAT = "rgb-v1"


@dataclass
class VehicleProfile:
    id: int
    coords: np.ndarray          # shape (2,)
    label_counts: np.ndarray    # shape (m,), non-negative ints
    city: int

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.label_counts = np.asarray(self.label_counts, dtype=int)
        if self.coords.shape != (2,) or not np.all(np.isfinite(self.coords)):
            raise UsageError(f"vehicle {self.id}: coords must be a finite 2-vector")
        if np.any(self.label_counts < 0):
            raise UsageError(f"vehicle {self.id}: negative label count")


@dataclass
class CityAbundanceStats:
    per_city_mean: np.ndarray   # (M, m)
    cat_max: np.ndarray         # (m,)
    cat_min: np.ndarray         # (m,)


def compute_city_stats(fleet: Sequence[VehicleProfile]) -> CityAbundanceStats:
    """Per-city mean label counts plus the cross-city per-category extremes."""
    if not fleet:
        raise ConfigurationError("empty fleet")
    n_cities = max(av.city for av in fleet) + 1
    m = len(fleet[0].label_counts)
    counts = np.stack([av.label_counts for av in fleet]).astype(float)
    cities = np.array([av.city for av in fleet])
    per_city_mean = np.empty((n_cities, m))
    for j in range(n_cities):
        mask = cities == j
        if not mask.any():
            raise ConfigurationError(f"city {j} has no vehicles")
        per_city_mean[j] = counts[mask].mean(axis=0)
    return CityAbundanceStats(
        per_city_mean=per_city_mean,
        cat_max=per_city_mean.max(axis=0),
        cat_min=per_city_mean.min(axis=0),
    )


def compute_abundance(av: VehicleProfile, stats: CityAbundanceStats) -> np.ndarray:
    """Integer abundance codes in [0, 255] for one vehicle.

    Each category's count is min-max normalized against the cross-city
    average extremes, scaled to 255 and floored; the result is clamped to
    [0, 255]. A category whose extremes coincide carries no signal and maps
    to 0.
    """
    span = stats.cat_max - stats.cat_min
    out = np.zeros(len(span), dtype=int)
    live = span > 0
    scaled = np.floor(
        (av.label_counts[live] - stats.cat_min[live]) / span[live] * 255.0
    ).astype(int)
    out[live] = np.clip(scaled, 0, 255)
    return out


def fleet_abundances(fleet: Sequence[VehicleProfile],
                     stats: CityAbundanceStats) -> np.ndarray:
    """Stacked (N, m) abundance matrix in fleet order."""
    return np.stack([compute_abundance(av, stats) for av in fleet])


def export_rgb(fleet: Sequence[VehicleProfile], stats: CityAbundanceStats,
               categories: Sequence[int]):
    """Map three chosen categories onto RGB triples for plotting.

    Returns one (id, coords, (r, g, b)) tuple per vehicle; a vehicle at the
    cross-city minimum on all three categories comes out black, one at the
    maximum on all three comes out white.
    """
    categories = list(categories)
    m = len(stats.cat_max)
    if len(categories) != 3 or any(c < 0 or c >= m for c in categories):
        raise UsageError(f"need 3 category indices in [0, {m})")
    out = []
    for av in fleet:
        abund = compute_abundance(av, stats)
        out.append((av.id, av.coords.copy(), tuple(int(abund[c]) for c in categories)))
    return out


def save_fleet(fleet: Sequence[VehicleProfile], path) -> None:
    m = len(fleet[0].label_counts) if fleet else 0
    with open(path, "w") as fh:
        fh.write(f"{FLEET_FORMAT} n={len(fleet)} m={m}\n")
        for av in fleet:
            counts = ",".join(str(int(c)) for c in av.label_counts)
            fh.write(f"{av.id} {float(av.coords[0])!r} {float(av.coords[1])!r} {av.city} {counts}\n")


def load_fleet(path) -> list[VehicleProfile]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file, expected fleet header", 1)
    header = lines[0].split()
    if not header or header[0] != FLEET_FORMAT:
        raise ParseError(f"expected '{FLEET_FORMAT}' header", 1)
    try:
        meta = dict(field.split("=") for field in header[1:])
        n, m = int(meta["n"]), int(meta["m"])
    except (ValueError, KeyError):
        raise ParseError("malformed fleet header", 1)
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise ParseError(f"expected {n} rows, found {len(rows)}", len(lines))
    fleet = []
    for offset, line in enumerate(rows, start=2):
        parts = line.split()
        if len(parts) != 5:
            raise ParseError("expected 'id x y city counts'", offset)
        try:
            counts = np.array([int(c) for c in parts[4].split(",")])
            av = VehicleProfile(
                id=int(parts[0]),
                coords=np.array([float(parts[1]), float(parts[2])]),
                label_counts=counts,
                city=int(parts[3]),
            )
        except (ValueError, UsageError) as exc:
            raise ParseError(str(exc), offset)
        if len(counts) != m:
            raise ParseError(f"expected {m} label counts", offset)
        fleet.append(av)
    if len({av.id for av in fleet}) != len(fleet):
        raise ParseError("duplicate vehicle ids", len(lines))
    return fleet


def save_rgb(records, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{RGB_FORMAT} n={len(records)}\n")
        for av_id, coords, (r, g, b) in records:
            fh.write(f"{av_id} {float(coords[0])!r} {float(coords[1])!r} {r} {g} {b}\n")
