"""Three-tier federated training loop: vehicles train locally, regional
servers personalize per-vehicle models via hypernetwork masks and
aggregate them with an exponential distance penalty, and the central
server maintains per-region models personalized across regions.

Also provides a plain federated-averaging baseline and a local-only
baseline for comparative runs. All randomness is derived from
(seed, round, role, owner) keys so results are independent of execution
order within a round.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, UsageError
from .hypernet import (HyperLearnConfig, Hypernetwork, hypernet_pseudo_grads,
                       hypernet_step, init_hypernet, mask_forward, personalize,
                       save_hypernet)
from .model import (Dataset, ParamVector, TrainConfig, av_update, evaluate,
                    init_model, save_model)
from .partition import RegionalStructure, save_structure

# role tags for deriving per-owner random streams
_TAG_REGION_MODEL = 1
_TAG_SAMPLE = 2
_TAG_TRAIN = 3
_TAG_REGION_HYPERNET = 4
_TAG_AV_HYPERNET = 5
_GLOBAL = 999_999   # owner id for the single-model baseline


@dataclass
class FederationConfig:
    rounds: int = 60
    client_fraction: float = 0.2
    local: TrainConfig = field(default_factory=TrainConfig)
    region_agg_interval: int = 10
    hyper: HyperLearnConfig = field(default_factory=HyperLearnConfig)
    hidden_units: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0 or self.region_agg_interval < 1:
            raise ConfigurationError("invalid federation configuration")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigurationError("client_fraction must lie in (0, 1]")


@dataclass
class FederationState:
    regional_stores: Dict[int, Dict[int, ParamVector]]
    central_store: Dict[int, ParamVector]
    av_hypernets: Dict[int, Optional[Hypernetwork]]
    region_hypernets: Dict[int, Optional[Hypernetwork]]
    round: int = 0


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(list(key))


def sample_clients(members: Sequence[int], fraction: float,
                   rng: np.random.Generator) -> List[int]:
    """Uniform sample without replacement of max(1, round(fraction * n))
    members, returned sorted by id."""
    if not 0.0 < fraction <= 1.0:
        raise UsageError("fraction must lie in (0, 1]")
    n_pick = max(1, round(fraction * len(members)))
    picked = rng.choice(np.asarray(members), size=n_pick, replace=False)
    return sorted(int(i) for i in picked)


def intra_region_aggregate(models: Sequence[ParamVector]
                           ) -> Tuple[ParamVector, np.ndarray]:
    """Penalty-weighted average: weights exp(-distance to the unweighted
    mean), normalized; closer models get strictly larger weight."""
    if not models:
        raise UsageError("cannot aggregate an empty model list")
    stacked = np.stack([m.values for m in models])
    mean = stacked.mean(axis=0)
    dists = np.linalg.norm(stacked - mean, axis=1)
    # subtract the min distance before exponentiating; cancels in the ratio
    weights = np.exp(-(dists - dists.min()))
    betas = weights / weights.sum()
    return ParamVector(betas @ stacked, models[0].shape_spec), betas


def init_state(structure: RegionalStructure, shape_spec,
               cfg: FederationConfig) -> FederationState:
    """Fresh regional models and hypernetworks derived from the seed.

    Per-vehicle stores start empty; they are filled from the (personalized)
    regional model during the first round. Hypernetworks are skipped for
    singleton regions and for single-region federations.
    """
    k_regions = len(structure.regions)
    central = {k: init_model(shape_spec, _rng(cfg.seed, _TAG_REGION_MODEL, k))
               for k in range(k_regions)}
    av_hns: Dict[int, Optional[Hypernetwork]] = {}
    for k, members in enumerate(structure.regions):
        for av_id in members:
            peers = tuple(j for j in sorted(members) if j != av_id)
            av_hns[av_id] = (
                init_hypernet(peers, cfg.hyper,
                              _rng(cfg.seed, _TAG_AV_HYPERNET, av_id))
                if peers else None)
    region_hns: Dict[int, Optional[Hypernetwork]] = {}
    for k in range(k_regions):
        peers = tuple(j for j in range(k_regions) if j != k)
        region_hns[k] = (
            init_hypernet(peers, cfg.hyper,
                          _rng(cfg.seed, _TAG_REGION_HYPERNET, k))
            if peers else None)
    return FederationState(
        regional_stores={k: {} for k in range(k_regions)},
        central_store=central,
        av_hypernets=av_hns,
        region_hypernets=region_hns,
    )


def region_update(state: FederationState, structure: RegionalStructure,
                  k: int, regional_model: ParamVector,
                  sampled: Sequence[int], datasets: Dict[int, Dataset],
                  cfg: FederationConfig, t: int
                  ) -> Tuple[Optional[ParamVector], Optional[np.ndarray]]:
    """One regional round: personalize and train the sampled vehicles, step
    their hypernetworks, and on aggregation rounds return the delta of the
    penalty-weighted aggregate against the given regional model."""
    members = sorted(structure.regions[k])
    stores = state.regional_stores[k]
    if not stores:
        for av_id in members:
            stores[av_id] = regional_model.copy()
    snapshot = {av_id: stores[av_id] for av_id in members}
    for av_id in sorted(sampled):
        hn = state.av_hypernets[av_id]
        if hn is None:
            start = snapshot[av_id]
        else:
            peers = [snapshot[j] for j in hn.peer_ids]
            start = personalize(snapshot[av_id], peers, mask_forward(hn))
        delta, _ = av_update(start, datasets[av_id], cfg.local,
                             _rng(cfg.seed, t, _TAG_TRAIN, av_id))
        # accumulate the training delta on the stored model rather than
        # keeping the personalized-then-trained weights: re-adding the
        # mask-weighted peer sum every time a vehicle is sampled compounds
        # without bound, while the stored model stays the vehicle's own
        # contribution and personalization is recomputed fresh each round
        stores[av_id] = snapshot[av_id] + delta
        if hn is not None:
            _, grads = hypernet_pseudo_grads(hn, peers, delta)
            state.av_hypernets[av_id] = hypernet_step(hn, grads, cfg.hyper)
    if t % cfg.region_agg_interval == 0:
        aggregate, betas = intra_region_aggregate(
            [stores[av_id] for av_id in members])
        return aggregate - regional_model, betas
    return None, None


def _metrics_record(state: FederationState, structure: RegionalStructure,
                    datasets: Dict[int, Dataset], t: int,
                    betas: Dict[int, Optional[np.ndarray]]) -> dict:
    accs, losses, pers_accs = [], [], []
    for k, members in enumerate(structure.regions):
        stores = state.regional_stores[k]
        snapshot = {av_id: stores[av_id] for av_id in sorted(members)}
        for av_id in sorted(members):
            x_test, y_test = datasets[av_id].test
            acc, _ = evaluate(stores[av_id], x_test, y_test)
            accs.append(acc)
            x_train, y_train = datasets[av_id].train
            losses.append(evaluate(stores[av_id], x_train, y_train)[1])
            hn = state.av_hypernets[av_id]
            if hn is None:
                pers = stores[av_id]
            else:
                pers = personalize(stores[av_id],
                                   [snapshot[j] for j in hn.peer_ids],
                                   mask_forward(hn))
            pers_accs.append(evaluate(pers, x_test, y_test)[0])
    region_accs = []
    for k, members in enumerate(structure.regions):
        x = np.concatenate([datasets[i].test[0] for i in members])
        y = np.concatenate([datasets[i].test[1] for i in members])
        region_accs.append(evaluate(state.central_store[k], x, y)[0])
    return {
        "round": t,
        "mean_acc": float(np.mean(accs)),
        "std_acc": float(np.std(accs)),
        "mean_acc_personalized": float(np.mean(pers_accs)),
        "region_accs": region_accs,
        "mean_loss": float(np.mean(losses)),
        "betas": {str(k): [float(b) for b in v]
                  for k, v in betas.items() if v is not None} or None,
    }


def central_round(state: FederationState, structure: RegionalStructure,
                  datasets: Dict[int, Dataset],
                  cfg: FederationConfig) -> dict:
    """One central round over all regions; returns the metrics record."""
    t = state.round
    snapshot = {k: state.central_store[k] for k in state.central_store}
    round_betas: Dict[int, Optional[np.ndarray]] = {}
    for k in range(len(structure.regions)):
        hn = state.region_hypernets[k]
        if hn is None:
            personalized = snapshot[k].copy()
        else:
            peers = [snapshot[j] for j in hn.peer_ids]
            personalized = personalize(snapshot[k], peers, mask_forward(hn))
        sampled = sample_clients(structure.regions[k], cfg.client_fraction,
                                 _rng(cfg.seed, t, _TAG_SAMPLE, k))
        delta_k, betas = region_update(state, structure, k, personalized,
                                       sampled, datasets, cfg, t)
        round_betas[k] = betas
        if delta_k is not None:
            state.central_store[k] = personalized + delta_k
            if hn is not None:
                _, grads = hypernet_pseudo_grads(hn, peers, delta_k)
                state.region_hypernets[k] = hypernet_step(hn, grads, cfg.hyper)
    record = _metrics_record(state, structure, datasets, t, round_betas)
    state.round = t + 1
    return record


def run_fedrav(structure: RegionalStructure, datasets: Dict[int, Dataset],
               cfg: FederationConfig
               ) -> Tuple[FederationState, List[dict]]:
    """Full hierarchical run: T central rounds from a seeded initialization."""
    shape_spec = _shape_spec(datasets, cfg)
    state = init_state(structure, shape_spec, cfg)
    metrics = [central_round(state, structure, datasets, cfg)
               for _ in range(cfg.rounds)]
    return state, metrics


def _shape_spec(datasets: Dict[int, Dataset], cfg: FederationConfig):
    any_data = next(iter(datasets.values()))
    return (any_data.features.shape[1], cfg.hidden_units, any_data.classes)


def run_fedavg_baseline(datasets: Dict[int, Dataset],
                        cfg: FederationConfig) -> List[dict]:
    """Single global model; sampled clients train locally each round and the
    server averages trained models weighted by train-set size."""
    shape_spec = _shape_spec(datasets, cfg)
    ids = sorted(datasets)
    global_model = init_model(shape_spec, _rng(cfg.seed, _TAG_REGION_MODEL, 0))
    metrics = []
    for t in range(cfg.rounds):
        sampled = sample_clients(ids, cfg.client_fraction,
                                 _rng(cfg.seed, t, _TAG_SAMPLE, _GLOBAL))
        trained, sizes = [], []
        for av_id in sampled:
            _, model = av_update(global_model, datasets[av_id], cfg.local,
                                 _rng(cfg.seed, t, _TAG_TRAIN, av_id))
            trained.append(model.values)
            sizes.append(len(datasets[av_id].train_idx))
        weights = np.asarray(sizes, dtype=float) / sum(sizes)
        global_model = ParamVector(weights @ np.stack(trained), shape_spec)
        accs, losses = [], []
        for av_id in ids:
            x_test, y_test = datasets[av_id].test
            acc, _ = evaluate(global_model, x_test, y_test)
            accs.append(acc)
            x_train, y_train = datasets[av_id].train
            losses.append(evaluate(global_model, x_train, y_train)[1])
        metrics.append({
            "round": t,
            "mean_acc": float(np.mean(accs)),
            "std_acc": float(np.std(accs)),
            "mean_loss": float(np.mean(losses)),
        })
    return metrics


def run_local_baseline(datasets: Dict[int, Dataset],
                       cfg: FederationConfig) -> List[dict]:
    """Each vehicle trains alone; over all rounds it receives the same total
    epoch budget (rounds * local_epochs) as a fully sampled federated run."""
    shape_spec = _shape_spec(datasets, cfg)
    ids = sorted(datasets)
    models = {av_id: init_model(shape_spec, _rng(cfg.seed, _TAG_REGION_MODEL, 0))
              for av_id in ids}
    metrics = []
    for t in range(cfg.rounds):
        accs, losses = [], []
        for av_id in ids:
            _, models[av_id] = av_update(models[av_id], datasets[av_id],
                                         cfg.local,
                                         _rng(cfg.seed, t, _TAG_TRAIN, av_id))
            x_test, y_test = datasets[av_id].test
            accs.append(evaluate(models[av_id], x_test, y_test)[0])
            x_train, y_train = datasets[av_id].train
            losses.append(evaluate(models[av_id], x_train, y_train)[1])
        metrics.append({
            "round": t,
            "mean_acc": float(np.mean(accs)),
            "std_acc": float(np.std(accs)),
            "mean_loss": float(np.mean(losses)),
        })
    return metrics


def metrics_to_jsonl(metrics: Sequence[dict]) -> str:
    """Stable line-delimited rendering; identical runs yield identical bytes."""
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in metrics)


def save_checkpoints(state: FederationState, structure: RegionalStructure,
                     out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    save_structure(structure, os.path.join(out_dir, "structure.json"))
    for k, model in state.central_store.items():
        save_model(model, os.path.join(out_dir, f"region_{k}.model"))
        hn = state.region_hypernets[k]
        if hn is not None:
            save_hypernet(hn, os.path.join(out_dir, f"region_{k}.hypernet"))
    for k, stores in state.regional_stores.items():
        for av_id, model in stores.items():
            save_model(model, os.path.join(out_dir, f"av_{av_id}.model"))
            hn = state.av_hypernets[av_id]
            if hn is not None:
                save_hypernet(hn, os.path.join(out_dir, f"av_{av_id}.hypernet"))
