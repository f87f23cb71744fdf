"""Optimization loops: two-group SymNet training, the domain-confusion and
source-only baselines, schedules, and SGD with momentum."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Node
from .data import Dataset, LabeledBatch, PairSampler, UnlabeledBatch
from .seeding import train_streams
from .model import ModelConfig, SymNet, features_graph, head_graph, init_params, predict

SYMNET_VARIANTS = (
    "symnet",
    "symnet_wo_Etask_t",
    "symnet_wo_M",
    "symnet_wo_confusion",
    "symnet_wo_category_confusion",
)
BASELINE_VARIANTS = ("source_only", "source_only_em", "domain_confusion", "domain_confusion_em")
METHODS = BASELINE_VARIANTS + SYMNET_VARIANTS

REPORT_COLUMNS = (
    "epoch", "p", "lambda", "lr",
    "loss_task_s", "loss_task_t", "loss_domain_disc", "loss_cat_conf", "loss_dom_conf", "loss_entropy",
    "acc_cs_src", "acc_cs_tgt", "acc_ct_src", "acc_ct_tgt",
)


@dataclass(frozen=True)
class ScheduleConfig:
    """Optimizer and schedule settings.

    ``fixed_lambda`` overrides the progressive trade-off schedule. Setting
    ``classifier_loss_updates_g`` also lets the classifier-group objective
    update G (off by default: that objective minimizes over the heads only).
    """

    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    gamma: float = 10.0
    momentum: float = 0.9
    batch_size: int = 128
    classifier_lr_multiplier: float = 10.0
    total_epochs: int = 200
    eval_every: int = 10
    fixed_lambda: float | None = None
    classifier_loss_updates_g: bool = False

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.batch_size < 1 or self.total_epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1, total_epochs >= 0")


def _check_progress(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"progress p must be in [0, 1], got {p}")


def lr_at(p: float, cfg: ScheduleConfig = ScheduleConfig()) -> float:
    """Annealed learning rate eta0 / (1 + alpha p)^beta."""
    _check_progress(p)
    return cfg.eta0 / (1.0 + cfg.alpha * p) ** cfg.beta


def lambda_at(p: float, cfg: ScheduleConfig = ScheduleConfig()) -> float:
    """Trade-off weight 2 / (1 + exp(-gamma p)) - 1, rising from 0 towards 1."""
    _check_progress(p)
    if cfg.fixed_lambda is not None:
        return float(cfg.fixed_lambda)
    return 2.0 / (1.0 + math.exp(-cfg.gamma * p)) - 1.0


def progress(epoch: int, total_epochs: int) -> float:
    return epoch / (total_epochs - 1) if total_epochs > 1 else 0.0


# -- optimizer -------------------------------------------------------------------

def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """Classical momentum, in place: v <- m v + g; w <- w - lr v."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {params[k].shape}")
        v = velocity.get(k)
        if v is None:
            v = velocity[k] = np.zeros_like(params[k])
        elif v.shape != g.shape:
            raise ValueError(f"velocity shape {v.shape} does not match {k} {g.shape}")
        v *= momentum
        v += g
        params[k] = params[k] - lr * v


@dataclass
class SGD:
    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, net: SymNet, grads: dict[str, np.ndarray], lr: float) -> None:
        sgd_step(net.params, grads, self.velocity, lr, self.momentum)


def _grads(loss: Node, P: dict[str, Node], names: Iterable[str]) -> dict[str, np.ndarray]:
    names = list(names)
    g = ad.backward(loss, wrt=[P[k] for k in names])
    return {k: g[P[k]] for k in names}


# -- steps -------------------------------------------------------------------------

def _symnet_heads(net, P, x) -> tuple[Node, Node]:
    f = features_graph(P, Node(x), net.config.n_layers)
    return head_graph(P, "Cs", f), head_graph(P, "Ct", f)


def symnet_step(net: SymNet, src: LabeledBatch, tgt: UnlabeledBatch, p: float,
                cfg: ScheduleConfig, opt: SGD, variant: str = "symnet") -> dict[str, float]:
    """One iteration: classifier-group update, then a G update with fresh forwards."""
    if variant not in SYMNET_VARIANTS:
        raise ValueError(f"unknown SymNet variant {variant!r}")
    lr = lr_at(p, cfg)
    lam = lambda_at(p, cfg)
    rec: dict[str, float] = {}

    # classifiers: source task + cross-domain target task + domain discrimination
    cls_keys = net.classifier_keys
    g_keys = net.feature_keys if cfg.classifier_loss_updates_g else []
    P = net.variables(cls_keys + g_keys)
    vs_s, vt_s = _symnet_heads(net, P, src.x)
    vs_t, vt_t = _symnet_heads(net, P, tgt.x)
    task_s = L.cross_entropy_from_logits(vs_s, src.y)
    disc = L.domain_discrimination_from_logits(vs_s, vt_s, vs_t, vt_t)
    total = ad.add(task_s, disc)
    rec["loss_task_s"] = task_s.item()
    if variant != "symnet_wo_Etask_t":
        task_t = L.cross_entropy_from_logits(vt_s, src.y)
        total = ad.add(total, task_t)
        rec["loss_task_t"] = task_t.item()
    rec["loss_domain_disc"] = disc.item()
    grads = _grads(total, P, cls_keys + g_keys)
    opt.step(net, {k: grads[k] for k in cls_keys}, lr * cfg.classifier_lr_multiplier)
    if g_keys:
        opt.step(net, {k: grads[k] for k in g_keys}, lr)

    # feature extractor: confusion terms (+ entropy), classifiers frozen
    P = net.variables(net.feature_keys)
    vs_s, vt_s = _symnet_heads(net, P, src.x)
    vs_t, vt_t = _symnet_heads(net, P, tgt.x)
    if variant == "symnet_wo_confusion":
        src_term = L.two_head_supervised_from_logits(vs_s, vt_s, src.y)
    elif variant == "symnet_wo_category_confusion":
        src_term = L.domain_confusion_from_logits(vs_s, vt_s)
    else:
        src_term = L.category_confusion_from_logits(vs_s, vt_s, src.y)
    rec["loss_cat_conf"] = src_term.item()
    adv = None
    if variant != "symnet_wo_confusion":
        dom = L.domain_confusion_from_logits(vs_t, vt_t)
        rec["loss_dom_conf"] = dom.item()
        adv = dom
    if variant != "symnet_wo_M":
        ent = L.entropy_from_logits(vs_t, vt_t)
        rec["loss_entropy"] = ent.item()
        adv = ent if adv is None else ad.add(adv, ent)
    total = src_term if adv is None else ad.add(src_term, ad.scale(adv, lam))
    opt.step(net, _grads(total, P, net.feature_keys), lr)
    return rec


def baseline_step(net: SymNet, src: LabeledBatch, tgt: UnlabeledBatch, p: float,
                  cfg: ScheduleConfig, opt: SGD, variant: str) -> dict[str, float]:
    if variant not in BASELINE_VARIANTS:
        raise ValueError(f"unknown baseline variant {variant!r}")
    lr = lr_at(p, cfg)
    lam = lambda_at(p, cfg)
    adversarial = variant.startswith("domain_confusion")
    rec: dict[str, float] = {}

    if adversarial:
        P = net.variables(net.discriminator_keys)
        f_s = features_graph(P, Node(src.x), net.config.n_layers)
        f_t = features_graph(P, Node(tgt.x), net.config.n_layers)
        d_loss = L.dc_discriminator_from_scores(head_graph(P, "D", f_s), head_graph(P, "D", f_t))
        rec["loss_domain_disc"] = d_loss.item()
        opt.step(net, _grads(d_loss, P, net.discriminator_keys), lr * cfg.classifier_lr_multiplier)

    keys = net.feature_keys + net.classifier_keys
    P = net.variables(keys)
    f_s = features_graph(P, Node(src.x), net.config.n_layers)
    total = L.cross_entropy_from_logits(head_graph(P, "Cs", f_s), src.y)
    rec["loss_task_s"] = total.item()
    if adversarial:
        f_t = features_graph(P, Node(tgt.x), net.config.n_layers)
        conf = L.dc_confusion_from_scores(head_graph(P, "D", f_s), head_graph(P, "D", f_t))
        rec["loss_dom_conf"] = conf.item()
        total = ad.add(total, ad.scale(conf, lam))
    if variant.endswith("_em"):
        Pd = dict(P)
        for k in net.classifier_keys:
            Pd[k] = ad.detach(P[k])
        f_t = features_graph(P, Node(tgt.x), net.config.n_layers)
        ent = L.single_head_entropy_from_logits(head_graph(Pd, "Cs", f_t))
        rec["loss_entropy"] = ent.item()
        total = ad.add(total, ad.scale(ent, lam))
    grads = _grads(total, P, keys)
    opt.step(net, {k: grads[k] for k in net.feature_keys}, lr)
    opt.step(net, {k: grads[k] for k in net.classifier_keys}, lr * cfg.classifier_lr_multiplier)
    return rec


# -- report --------------------------------------------------------------------------

@dataclass
class TrainReport:
    method: str
    columns: tuple[str, ...]
    records: list[dict[str, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    @property
    def final(self) -> dict[str, float]:
        return self.records[-1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.records:
            w.writerow([int(r[c]) if c == "epoch" else format(r[c], ".17g") for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, method: str = "") -> "TrainReport":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty report")
        cols = tuple(rows[0])
        records = [{c: (int(v) if c == "epoch" else float(v)) for c, v in zip(cols, row)}
                   for row in rows[1:]]
        return cls(method, cols, records)


def report_columns(method: str) -> tuple[str, ...]:
    drop: set[str] = set()
    if method in BASELINE_VARIANTS:
        drop |= {"loss_task_t", "loss_cat_conf", "acc_ct_src", "acc_ct_tgt"}
        if not method.startswith("domain_confusion"):
            drop |= {"loss_domain_disc", "loss_dom_conf"}
        if not method.endswith("_em"):
            drop.add("loss_entropy")
    elif method == "symnet_wo_Etask_t":
        drop |= {"loss_task_t", "acc_ct_src", "acc_ct_tgt"}
    elif method == "symnet_wo_M":
        drop.add("loss_entropy")
    elif method == "symnet_wo_confusion":
        drop.add("loss_dom_conf")
    elif method not in SYMNET_VARIANTS:
        raise ValueError(f"unknown method {method!r}")
    return tuple(c for c in REPORT_COLUMNS if c not in drop)


def _acc(net: SymNet, ds: Dataset, head: str) -> float:
    return float(np.mean(predict(net, ds.inputs, head) == ds.labels))


# -- loops ----------------------------------------------------------------------------

def _check_data(src: Dataset, tgt: Dataset, model_config: ModelConfig | None) -> None:
    if src.num_categories != tgt.num_categories:
        raise ValueError(f"category count mismatch: source K={src.num_categories}, "
                         f"target K={tgt.num_categories}")
    if src.input_dim != tgt.input_dim:
        raise ValueError(f"input dim mismatch: {src.input_dim} vs {tgt.input_dim}")
    if model_config is not None and (model_config.input_dim != src.input_dim
                                     or model_config.num_categories != src.num_categories):
        raise ValueError("model config does not match the datasets")


def _run(method: str, cfg: ScheduleConfig, src: Dataset, tgt: Dataset, seed: int,
         model_config: ModelConfig | None, src_test: Dataset | None, tgt_test: Dataset | None,
         callback=None) -> tuple[TrainReport, SymNet]:
    _check_data(src, tgt, model_config)
    if model_config is None:
        model_config = ModelConfig(src.input_dim, src.num_categories)
    streams = train_streams(seed)
    baseline = method in BASELINE_VARIANTS
    net = init_params(model_config, streams["init"],
                      heads=("Cs",) if baseline else ("Cs", "Ct"), discriminator=baseline)
    report = TrainReport(method, report_columns(method))
    if cfg.total_epochs == 0:
        return report, net
    src_eval = src_test if src_test is not None else src
    tgt_eval = tgt_test if tgt_test is not None else tgt
    sampler = PairSampler(src, tgt, cfg.batch_size, np.random.default_rng(streams["sampler"]))
    opt = SGD(cfg.momentum)
    step = baseline_step if baseline else symnet_step
    for epoch in range(cfg.total_epochs):
        p = progress(epoch, cfg.total_epochs)
        sums: dict[str, float] = {}
        for _ in range(sampler.steps_per_epoch):
            b_src, b_tgt = sampler.sample_pair()
            for k, v in step(net, b_src, b_tgt, p, cfg, opt, method).items():
                sums[k] = sums.get(k, 0.0) + v
        last = epoch == cfg.total_epochs - 1
        if (epoch + 1) % cfg.eval_every and not last:
            continue
        rec = {"epoch": epoch, "p": p, "lambda": lambda_at(p, cfg), "lr": lr_at(p, cfg)}
        rec.update({k: v / sampler.steps_per_epoch for k, v in sums.items()})
        for head in ("Cs", "Ct"):
            if f"{head}.W" in net.params:
                tag = head.lower()
                rec[f"acc_{tag}_src"] = _acc(net, src_eval, head)
                rec[f"acc_{tag}_tgt"] = _acc(net, tgt_eval, head)
        report.records.append({c: rec[c] for c in report.columns})
        if callback is not None:
            callback(report.records[-1])
    return report, net


def train_symnet(cfg: ScheduleConfig, src: Dataset, tgt: Dataset, seed: int, *,
                 variant: str = "symnet", model_config: ModelConfig | None = None,
                 src_test: Dataset | None = None, tgt_test: Dataset | None = None,
                 callback=None) -> tuple[TrainReport, SymNet]:
    """Train a SymNet (or one of its ablations).

    Accuracies are measured on ``src_test`` / ``tgt_test`` when given, else on
    the training pools themselves (transductive evaluation).
    """
    if variant not in SYMNET_VARIANTS:
        raise ValueError(f"unknown SymNet variant {variant!r}")
    return _run(variant, cfg, src, tgt, seed, model_config, src_test, tgt_test, callback)


def train_baseline(variant: str, cfg: ScheduleConfig, src: Dataset, tgt: Dataset, seed: int, *,
                   model_config: ModelConfig | None = None, src_test: Dataset | None = None,
                   tgt_test: Dataset | None = None, callback=None) -> tuple[TrainReport, SymNet]:
    if variant not in BASELINE_VARIANTS:
        raise ValueError(f"unknown baseline variant {variant!r}")
    return _run(variant, cfg, src, tgt, seed, model_config, src_test, tgt_test, callback)


def train(method: str, cfg: ScheduleConfig, src: Dataset, tgt: Dataset, seed: int, **kw):
    """Dispatch to :func:`train_symnet` or :func:`train_baseline` by method name."""
    if method in SYMNET_VARIANTS:
        return train_symnet(cfg, src, tgt, seed, variant=method, **kw)
    return train_baseline(method, cfg, src, tgt, seed, **kw)


def config_dict(cfg: ScheduleConfig) -> dict:
    return asdict(cfg)


def config_from_dict(d: dict) -> ScheduleConfig:
    return replace(ScheduleConfig(), **d)
