"""Training objectives as differentiable scalar graphs.

Two layers:

* ``*_from_logits`` functions take logit nodes and labels. Training code uses
  these so one forward pass can feed several losses.
* Model-level functions (``loss_task_source(net, src)`` ...) run the forward
  pass themselves. ``P`` is an optional mapping of parameter nodes as returned
  by :meth:`SymNet.variables`; pass one with leaves to get gradients.

Every probability that ends up inside a log is handled in log space: Cst
half-masses are ``logsumexp(half) - logsumexp(all 2K logits)`` and pair masses
are ``logaddexp(v_s[k], v_t[k]) - logsumexp(all)``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .data import LabeledBatch, UnlabeledBatch
from .model import SymNet, features_graph, head_graph


def _mean_col(c: Node) -> Node:
    return ad.scale(ad.sum_all(c), 1.0 / c.shape[0])


def _check_labels(y, v: Node) -> np.ndarray:
    y = np.asarray(y, dtype=np.intp)
    if y.shape != (v.shape[0],):
        raise ValueError(f"need {v.shape[0]} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= v.shape[1]):
        raise ValueError(f"labels must lie in [0, {v.shape[1]})")
    return y


def _check_pair(v_s: Node, v_t: Node) -> None:
    if v_s.shape != v_t.shape:
        raise ValueError(f"logit shapes differ: {v_s.shape} vs {v_t.shape}")


def _log_half_masses(v_s: Node, v_t: Node) -> tuple[Node, Node]:
    """log(sum_k p^st_k), log(sum_k p^st_{k+K}) per row (B x 1 each)."""
    _check_pair(v_s, v_t)
    lse_all = ad.logsumexp_rows(ad.concat_cols(v_s, v_t))
    return (ad.sub(ad.logsumexp_rows(v_s), lse_all),
            ad.sub(ad.logsumexp_rows(v_t), lse_all))


# -- logit-level losses --------------------------------------------------------

def cross_entropy_from_logits(v: Node, y) -> Node:
    y = _check_labels(y, v)
    return ad.neg(_mean_col(ad.pick(ad.log_softmax_rows(v), y)))


def domain_discrimination_from_logits(vs_src: Node, vt_src: Node,
                                      vs_tgt: Node, vt_tgt: Node) -> Node:
    log_src_on_src, _ = _log_half_masses(vs_src, vt_src)
    _, log_tgt_on_tgt = _log_half_masses(vs_tgt, vt_tgt)
    return ad.neg(ad.add(_mean_col(log_tgt_on_tgt), _mean_col(log_src_on_src)))


def category_confusion_from_logits(v_s: Node, v_t: Node, y) -> Node:
    _check_pair(v_s, v_t)
    y = _check_labels(y, v_s)
    K = v_s.shape[1]
    log_pst = ad.log_softmax_rows(ad.concat_cols(v_s, v_t))
    return ad.scale(ad.add(_mean_col(ad.pick(log_pst, y + K)), _mean_col(ad.pick(log_pst, y))), -0.5)


def domain_confusion_from_logits(v_s: Node, v_t: Node) -> Node:
    log_src, log_tgt = _log_half_masses(v_s, v_t)
    return ad.scale(ad.add(_mean_col(log_tgt), _mean_col(log_src)), -0.5)


def entropy_from_logits(v_s: Node, v_t: Node) -> Node:
    """Mean entropy of q_k = p^st_k + p^st_{k+K}. Gradients flow into whatever
    the logits depend on; detaching the heads is the caller's job."""
    _check_pair(v_s, v_t)
    lse_all = ad.logsumexp_rows(ad.concat_cols(v_s, v_t))
    log_q = ad.sub(ad.logaddexp(v_s, v_t), lse_all)
    q_log_q = ad.mul(ad.exp(log_q), log_q)
    return ad.scale(ad.sum_all(q_log_q), -1.0 / v_s.shape[0])


def single_head_entropy_from_logits(v: Node) -> Node:
    log_p = ad.log_softmax_rows(v)
    return ad.scale(ad.sum_all(ad.mul(ad.exp(log_p), log_p)), -1.0 / v.shape[0])


def two_head_supervised_from_logits(v_s: Node, v_t: Node, y) -> Node:
    return ad.scale(ad.add(cross_entropy_from_logits(v_s, y), cross_entropy_from_logits(v_t, y)), 0.5)


def dc_discriminator_from_scores(z_src: Node, z_tgt: Node) -> Node:
    """Discriminator loss with D = sigmoid(z): -log(1 - D) = softplus(z), -log D = softplus(-z)."""
    return ad.add(_mean_col(ad.softplus(z_src)), _mean_col(ad.softplus(ad.neg(z_tgt))))


def dc_confusion_from_scores(z_src: Node, z_tgt: Node) -> Node:
    flipped = ad.add(_mean_col(ad.softplus(ad.neg(z_src))), _mean_col(ad.softplus(z_tgt)))
    return ad.add(ad.scale(dc_discriminator_from_scores(z_src, z_tgt), 0.5), ad.scale(flipped, 0.5))


# -- model-level wrappers ------------------------------------------------------

def _vars(net: SymNet, P: Mapping[str, Node] | None) -> Mapping[str, Node]:
    return net.variables() if P is None else P


def _input(net: SymNet, x) -> Node:
    x = x if isinstance(x, Node) else Node(x)
    if x.shape[1] != net.config.input_dim:
        raise ValueError(f"expected {net.config.input_dim} input columns, got {x.shape[1]}")
    return x


def _heads(net: SymNet, P, x) -> tuple[Node, Node]:
    f = features_graph(P, _input(net, x), net.config.n_layers)
    return head_graph(P, "Cs", f), head_graph(P, "Ct", f)


def loss_task_source(net: SymNet, src: LabeledBatch, P=None) -> Node:
    """Cross-entropy of Cs on labeled source samples."""
    P = _vars(net, P)
    v_s, _ = _heads(net, P, src.x)
    return cross_entropy_from_logits(v_s, src.y)


def loss_task_target_crossdomain(net: SymNet, src: LabeledBatch, P=None) -> Node:
    """Cross-entropy of Ct, trained on the *source* labels."""
    P = _vars(net, P)
    _, v_t = _heads(net, P, src.x)
    return cross_entropy_from_logits(v_t, src.y)


def loss_domain_discrimination(net: SymNet, src: LabeledBatch, tgt: UnlabeledBatch, P=None) -> Node:
    P = _vars(net, P)
    vs_s, vt_s = _heads(net, P, src.x)
    vs_t, vt_t = _heads(net, P, tgt.x)
    return domain_discrimination_from_logits(vs_s, vt_s, vs_t, vt_t)


def loss_category_confusion(net: SymNet, src: LabeledBatch, P=None) -> Node:
    P = _vars(net, P)
    v_s, v_t = _heads(net, P, src.x)
    return category_confusion_from_logits(v_s, v_t, src.y)


def loss_domain_confusion_target(net: SymNet, tgt: UnlabeledBatch, P=None) -> Node:
    P = _vars(net, P)
    return domain_confusion_from_logits(*_heads(net, P, tgt.x))


def loss_entropy_min(net: SymNet, tgt: UnlabeledBatch, P=None) -> Node:
    """Entropy of the category marginal on target samples. Classifier
    parameters are detached, so only G receives gradient."""
    P = dict(_vars(net, P))
    for k in net.classifier_keys:
        P[k] = ad.detach(P[k])
    return entropy_from_logits(*_heads(net, P, tgt.x))


def loss_domain_confusion_source_degenerate(net: SymNet, src: LabeledBatch, P=None) -> Node:
    """Domain-level confusion on source samples (category labels unused)."""
    P = _vars(net, P)
    return domain_confusion_from_logits(*_heads(net, P, src.x))


def loss_two_head_supervised_degenerate(net: SymNet, src: LabeledBatch, P=None) -> Node:
    P = _vars(net, P)
    v_s, v_t = _heads(net, P, src.x)
    return two_head_supervised_from_logits(v_s, v_t, src.y)


# -- domain-confusion baseline (single head "Cs" plus discriminator "D") --------

def baseline_dc_task(net: SymNet, src: LabeledBatch, P=None) -> Node:
    P = _vars(net, P)
    f = features_graph(P, _input(net, src.x), net.config.n_layers)
    return cross_entropy_from_logits(head_graph(P, "Cs", f), src.y)


def _scores(net: SymNet, P, f_src, f_tgt) -> tuple[Node, Node]:
    if "D.W" not in P:
        raise ValueError("model has no domain discriminator")
    f_src = f_src if isinstance(f_src, Node) else Node(f_src)
    f_tgt = f_tgt if isinstance(f_tgt, Node) else Node(f_tgt)
    for f in (f_src, f_tgt):
        if f.shape[1] != net.config.feature_dim:
            raise ValueError(f"expected {net.config.feature_dim} feature columns, got {f.shape[1]}")
    return head_graph(P, "D", f_src), head_graph(P, "D", f_tgt)


def baseline_dc_discriminator(net: SymNet, f_src, f_tgt, P=None) -> Node:
    """-mean log(1 - D(f_src)) - mean log D(f_tgt)."""
    return dc_discriminator_from_scores(*_scores(net, _vars(net, P), f_src, f_tgt))


def baseline_dc_confusion(net: SymNet, f_src, f_tgt, P=None) -> Node:
    """Half the discriminator loss plus the two flipped-label terms, as written."""
    return dc_confusion_from_scores(*_scores(net, _vars(net, P), f_src, f_tgt))
