"""SymNet architecture: feature extractor G, task heads Cs / Ct, and the
parameter-free 2K-way classifier Cst built from their concatenated logits.

The baseline domain discriminator D (one logistic unit on top of G) lives here
too; only the domain-confusion baselines use it.

Parameters are kept in one flat ``dict[str, ndarray]`` using the checkpoint key
names (``G.layer{i}.W``, ``Cs.b``, ...). Weights are stored ``out x in`` and
biases as ``1 x out`` rows, so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from . import numerics
from .autodiff import Node

HEADS = ("Cs", "Ct")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_categories: int
    feature_dim: int = 32
    hidden_dims: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, self.feature_dim, *self.hidden_dims)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if self.num_categories < 2:
            raise ValueError("num_categories must be >= 2")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.feature_dim]

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1


@dataclass
class SymNet:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def feature_keys(self) -> list[str]:
        return [f"G.layer{i}.{p}" for i in range(self.config.n_layers) for p in ("W", "b")]

    @property
    def classifier_keys(self) -> list[str]:
        return [k for h in HEADS for k in (f"{h}.W", f"{h}.b") if k in self.params]

    @property
    def discriminator_keys(self) -> list[str]:
        return [k for k in ("D.W", "D.b") if k in self.params]

    @property
    def has_target_head(self) -> bool:
        return "Ct.W" in self.params

    def groups(self) -> list[ad.ParamGroup]:
        out = [ad.ParamGroup("feature-extractor", self.feature_keys),
               ad.ParamGroup("classifiers", self.classifier_keys)]
        if self.discriminator_keys:
            out.append(ad.ParamGroup("discriminator", self.discriminator_keys))
        return out

    def copy(self) -> "SymNet":
        return SymNet(self.config, {k: v.copy() for k, v in self.params.items()})

    def variables(self, trainable: Iterable[str] = ()) -> dict[str, Node]:
        """Graph nodes for all parameters; names in ``trainable`` are leaves
        that receive gradients, the rest are constants."""
        trainable = set(trainable)
        unknown = trainable - set(self.params)
        if unknown:
            raise KeyError(f"unknown parameters: {sorted(unknown)}")
        return {k: Node(v, requires_grad=k in trainable, name=k) for k, v in self.params.items()}


def _he(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))


def init_params(config: ModelConfig, seed, *, heads: Iterable[str] = HEADS,
                discriminator: bool = False) -> SymNet:
    """He-normal weights, zero biases; deterministic in ``seed``.

    Draw order is fixed (G layers, then Cs, Ct, then D) so that models with and
    without a discriminator share identical G / head parameters for a seed.
    """
    rng = np.random.default_rng(seed)
    dims = config.layer_dims
    params: dict[str, np.ndarray] = {}
    for i in range(config.n_layers):
        params[f"G.layer{i}.W"] = _he(rng, dims[i + 1], dims[i])
        params[f"G.layer{i}.b"] = np.zeros((1, dims[i + 1]))
    heads = tuple(heads)
    for h in HEADS:
        w = _he(rng, config.num_categories, config.feature_dim)
        if h in heads:
            params[f"{h}.W"] = w
            params[f"{h}.b"] = np.zeros((1, config.num_categories))
    w = _he(rng, 1, config.feature_dim)
    if discriminator:
        params["D.W"] = w
        params["D.b"] = np.zeros((1, 1))
    return SymNet(config, params)


# -- graph builders ------------------------------------------------------------

def features_graph(P: Mapping[str, Node], x: Node, n_layers: int) -> Node:
    h = x
    for i in range(n_layers):
        h = ad.relu(ad.linear(h, P[f"G.layer{i}.W"], P[f"G.layer{i}.b"]))
    return h


def head_graph(P: Mapping[str, Node], head: str, f: Node) -> Node:
    return ad.linear(f, P[f"{head}.W"], P[f"{head}.b"])


def _check_input(net: SymNet, x) -> np.ndarray:
    x = numerics.as_matrix(x, "x")
    if x.shape[1] != net.config.input_dim:
        raise ValueError(f"expected {net.config.input_dim} input columns, got {x.shape[1]}")
    return x


# -- value-level forward ops ---------------------------------------------------

def forward_features(net: SymNet, x) -> np.ndarray:
    x = _check_input(net, x)
    return features_graph(net.variables(), Node(x), net.config.n_layers).value


def logits(net: SymNet, f, head: str = "Ct") -> np.ndarray:
    f = numerics.as_matrix(f, "f")
    if f.shape[1] != net.config.feature_dim:
        raise ValueError(f"expected {net.config.feature_dim} feature columns, got {f.shape[1]}")
    if f"{head}.W" not in net.params:
        raise ValueError(f"model has no head {head!r}")
    return head_graph(net.variables(), head, Node(f)).value


def predict_proba(net: SymNet, x, head: str = "Ct") -> np.ndarray:
    return numerics.softmax_rows(logits(net, forward_features(net, x), head))


def predict(net: SymNet, x, head: str = "Ct") -> np.ndarray:
    """Arg-max category per row; ties go to the lowest index."""
    return np.argmax(logits(net, forward_features(net, x), head), axis=1)


def discriminator_prob(net: SymNet, f) -> np.ndarray:
    """D(f) in (0, 1): probability that a feature row came from the target domain."""
    f = numerics.as_matrix(f, "f")
    return numerics.sigmoid(head_graph(net.variables(), "D", Node(f)).value)


def concat_probs(v_s, v_t) -> np.ndarray:
    """Cst probabilities: softmax over ``[v_s, v_t]`` per row (B x 2K)."""
    v_s = numerics.as_matrix(v_s, "v_s")
    v_t = numerics.as_matrix(v_t, "v_t")
    if v_s.shape != v_t.shape:
        raise ValueError(f"logit shapes differ: {v_s.shape} vs {v_t.shape}")
    return numerics.softmax_rows(np.hstack([v_s, v_t]))


def _split_halves(p_st) -> tuple[np.ndarray, np.ndarray]:
    p_st = numerics.as_matrix(p_st, "p_st")
    if p_st.shape[1] % 2:
        raise ValueError(f"p_st needs an even column count, got {p_st.shape[1]}")
    k = p_st.shape[1] // 2
    return p_st[:, :k], p_st[:, k:]


def category_marginal(p_st) -> np.ndarray:
    """q_k = p_k + p_{k+K}: category probabilities with the domain summed out."""
    src, tgt = _split_halves(p_st)
    return src + tgt


def domain_mass(p_st) -> tuple[np.ndarray, np.ndarray]:
    """(source_prob, target_prob) per row: total mass on each half of Cst."""
    src, tgt = _split_halves(p_st)
    return src.sum(axis=1), tgt.sum(axis=1)


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(net: SymNet, path) -> None:
    payload = {k: v.tolist() for k, v in net.params.items()}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_checkpoint(path) -> SymNet:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    params = {k: numerics.as_matrix(v, k) for k, v in raw.items()}
    n_layers = 0
    while f"G.layer{n_layers}.W" in params:
        n_layers += 1
    head = "Ct" if "Ct.W" in params else "Cs"
    if n_layers == 0 or f"{head}.W" not in params:
        raise ValueError(f"{path}: not a SymNet checkpoint")
    dims = [params[f"G.layer{i}.W"].shape for i in range(n_layers)]
    config = ModelConfig(
        input_dim=dims[0][1],
        num_categories=params[f"{head}.W"].shape[0],
        feature_dim=dims[-1][0],
        hidden_dims=tuple(d[0] for d in dims[:-1]),
    )
    return SymNet(config, params)
