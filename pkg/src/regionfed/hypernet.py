"""Per-peer mask generation: a trainable embedding fed through a small
2-layer network whose softmax output weights the peer models added to an
owner's own model.

The hypernetwork is trained from pseudo-gradients (parameter deltas) via
the chain rule through the scalar surrogate <personalized model, delta>,
with the owner's own model held constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ParseError, UsageError
from .model import ParamVector

HYPERNET_FORMAT = "hypernet-v1"


@dataclass
class HyperLearnConfig:
    embed_dim: int = 16
    hidden_dim: int = 64
    lr_embedding: float = 0.01
    lr_params: float = 0.01

    def __post_init__(self):
        if min(self.embed_dim, self.hidden_dim) < 1 or \
                min(self.lr_embedding, self.lr_params) < 0:
            raise ConfigurationError("invalid hypernetwork configuration")


@dataclass
class Hypernetwork:
    embedding: np.ndarray    # (e,)
    w1: np.ndarray           # (e, h)
    b1: np.ndarray           # (h,)
    w2: np.ndarray           # (h, p)
    b2: np.ndarray           # (p,)
    peer_ids: tuple          # identities the mask indexes, owner excluded

    def copy(self) -> "Hypernetwork":
        return Hypernetwork(self.embedding.copy(), self.w1.copy(),
                            self.b1.copy(), self.w2.copy(), self.b2.copy(),
                            self.peer_ids)


@dataclass
class HypernetGrads:
    embedding: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


def init_hypernet(peer_ids: Sequence, cfg: HyperLearnConfig,
                  rng: np.random.Generator) -> Hypernetwork:
    """Random embedding and network parameters; weights uniform scaled by
    fan-in, biases zero (same rule as the classifier init)."""
    peer_ids = tuple(peer_ids)
    if not peer_ids:
        raise ConfigurationError("hypernetwork needs at least one peer")
    e, h = cfg.embed_dim, cfg.hidden_dim
    p = len(peer_ids)
    return Hypernetwork(
        embedding=rng.uniform(-1.0, 1.0, size=e) / np.sqrt(e),
        w1=rng.uniform(-1.0, 1.0, size=(e, h)) / np.sqrt(e),
        b1=np.zeros(h),
        w2=rng.uniform(-1.0, 1.0, size=(h, p)) / np.sqrt(h),
        b2=np.zeros(p),
        peer_ids=peer_ids,
    )


def _forward(hn: Hypernetwork):
    hidden = np.tanh(hn.embedding @ hn.w1 + hn.b1)
    logits = hidden @ hn.w2 + hn.b2
    z = logits - logits.max()
    exp = np.exp(z)
    mask = exp / exp.sum()
    return hidden, mask


def mask_forward(hn: Hypernetwork) -> np.ndarray:
    """Simplex mask over peers: softmax of the 2-layer network's logits."""
    return _forward(hn)[1]


def personalize(own: ParamVector, peers: Sequence[ParamVector],
                mask: np.ndarray) -> ParamVector:
    """Own model plus the mask-weighted sum of peer models."""
    mask = np.asarray(mask, dtype=float)
    if len(peers) != len(mask):
        raise UsageError(f"{len(peers)} peers vs mask of length {len(mask)}")
    out = own.values.copy()
    for weight, peer in zip(mask, peers):
        if peer.shape_spec != own.shape_spec:
            raise UsageError("peer shape_spec mismatch")
        out += weight * peer.values
    return ParamVector(out, own.shape_spec)


def hypernet_pseudo_grads(hn: Hypernetwork, peers: Sequence[ParamVector],
                          pseudo_grad: ParamVector
                          ) -> Tuple[np.ndarray, HypernetGrads]:
    """Exact gradients of <personalized model, pseudo_grad> in the embedding
    and network parameters, with the owner's model held constant.

    The surrogate reduces to sum_j mask_j * <peer_j, pseudo_grad>, so only
    the per-peer inner products enter the backward pass.
    """
    if len(peers) != len(hn.peer_ids):
        raise UsageError(f"expected {len(hn.peer_ids)} peers, got {len(peers)}")
    scores = np.array([float(p.values @ pseudo_grad.values) for p in peers])
    hidden, mask = _forward(hn)
    # softmax Jacobian applied to the score vector
    dlogits = mask * (scores - float(mask @ scores))
    gw2 = np.outer(hidden, dlogits)
    gb2 = dlogits.copy()
    dhidden = hn.w2 @ dlogits
    dz = dhidden * (1.0 - hidden ** 2)
    gw1 = np.outer(hn.embedding, dz)
    gb1 = dz.copy()
    gv = hn.w1 @ dz
    return gv, HypernetGrads(embedding=gv, w1=gw1, b1=gb1, w2=gw2, b2=gb2)


def hypernet_step(hn: Hypernetwork, grads: HypernetGrads,
                  cfg: HyperLearnConfig) -> Hypernetwork:
    """One gradient-descent step on the embedding and network parameters."""
    return Hypernetwork(
        embedding=hn.embedding - cfg.lr_embedding * grads.embedding,
        w1=hn.w1 - cfg.lr_params * grads.w1,
        b1=hn.b1 - cfg.lr_params * grads.b1,
        w2=hn.w2 - cfg.lr_params * grads.w2,
        b2=hn.b2 - cfg.lr_params * grads.b2,
        peer_ids=hn.peer_ids,
    )


def flatten_hypernet(hn: Hypernetwork) -> np.ndarray:
    return np.concatenate([hn.embedding, hn.w1.ravel(), hn.b1,
                           hn.w2.ravel(), hn.b2])


def unflatten_hypernet(values: np.ndarray, template: Hypernetwork) -> Hypernetwork:
    e = len(template.embedding)
    h = len(template.b1)
    p = len(template.b2)
    i = 0
    emb = values[i:i + e]; i += e
    w1 = values[i:i + e * h].reshape(e, h); i += e * h
    b1 = values[i:i + h]; i += h
    w2 = values[i:i + h * p].reshape(h, p); i += h * p
    b2 = values[i:i + p]
    return Hypernetwork(emb.copy(), w1.copy(), b1.copy(), w2.copy(), b2.copy(),
                        template.peer_ids)


def save_hypernet(hn: Hypernetwork, path) -> None:
    e = len(hn.embedding)
    h = len(hn.b1)
    with open(path, "w") as fh:
        fh.write(f"{HYPERNET_FORMAT} embed_dim={e} hidden_dim={h}\n")
        fh.write("peers " + ",".join(str(p) for p in hn.peer_ids) + "\n")
        for v in flatten_hypernet(hn):
            fh.write(repr(float(v)) + "\n")


def load_hypernet(path) -> Hypernetwork:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(HYPERNET_FORMAT):
        raise ParseError(f"expected '{HYPERNET_FORMAT}' header", 1)
    try:
        meta = dict(field.split("=") for field in lines[0].split()[1:])
        e, h = int(meta["embed_dim"]), int(meta["hidden_dim"])
    except (ValueError, KeyError):
        raise ParseError("malformed hypernet header", 1)
    if len(lines) < 2 or not lines[1].startswith("peers "):
        raise ParseError("expected 'peers' line", 2)
    peer_ids = tuple(int(t) for t in lines[1][len("peers "):].split(","))
    p = len(peer_ids)
    values = np.array([float(v) for v in lines[2:] if v.strip()])
    expected = e + e * h + h + h * p + p
    if len(values) != expected:
        raise ParseError(f"expected {expected} values, found {len(values)}",
                         len(lines))
    template = Hypernetwork(np.zeros(e), np.zeros((e, h)), np.zeros(h),
                            np.zeros((h, p)), np.zeros(p), peer_ids)
    return unflatten_hypernet(values, template)
