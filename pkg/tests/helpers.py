"""Random small problem instances shared by the loss and gradient tests."""

import numpy as np

from symnets.data import LabeledBatch, UnlabeledBatch
from symnets.model import ModelConfig, init_params


def random_instance(rng, *, max_batch=8, max_k=5, max_d=8, discriminator=False, heads=("Cs", "Ct")):
    """A randomly sized net with perturbed biases plus a source and target batch."""
    K = int(rng.integers(2, max_k + 1))
    d = int(rng.integers(2, max_d + 1))
    d_in = int(rng.integers(2, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(0, 2)))
    cfg = ModelConfig(d_in, K, d, hidden)
    net = init_params(cfg, int(rng.integers(2**31)), heads=heads, discriminator=discriminator)
    for k in net.params:
        if k.endswith(".b"):
            net.params[k] = rng.normal(0, 0.5, size=net.params[k].shape)
    bs, bt = int(rng.integers(1, max_batch + 1)), int(rng.integers(1, max_batch + 1))
    src = LabeledBatch(rng.normal(size=(bs, d_in)), rng.integers(0, K, size=bs))
    tgt = UnlabeledBatch(rng.normal(size=(bt, d_in)))
    return net, src, tgt


def identical_heads(net):
    """Copy of ``net`` with Ct set equal to Cs."""
    twin = net.copy()
    twin.params["Ct.W"] = twin.params["Cs.W"].copy()
    twin.params["Ct.b"] = twin.params["Cs.b"].copy()
    return twin
