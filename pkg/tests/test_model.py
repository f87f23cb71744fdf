import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from helpers import random_instance
from symnets.model import (
    ModelConfig, category_marginal, concat_probs, domain_mass, forward_features, init_params,
    load_checkpoint, logits, predict, predict_proba, save_checkpoint,
)
from symnets.numerics import softmax_rows

logit_pairs = st.tuples(st.integers(1, 5), st.integers(1, 5)).flatmap(
    lambda s: st.tuples(*(arrays(np.float64, s, elements=st.floats(-40, 40)) for _ in range(2))))


def test_config_dims():
    cfg = ModelConfig(2, 3, 8, (16, 4))
    assert cfg.layer_dims == [2, 16, 4, 8] and cfg.n_layers == 3


@pytest.mark.parametrize("bad", [dict(input_dim=0), dict(num_categories=1), dict(feature_dim=0),
                                 dict(hidden_dims=(3, 0))])
def test_config_rejects_bad_sizes(bad):
    kw = dict(input_dim=2, num_categories=2, feature_dim=4, hidden_dims=())
    kw.update(bad)
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_forward_matches_loop_oracle(rng):
    for _ in range(20):
        net, src, _ = random_instance(rng)
        np.testing.assert_allclose(forward_features(net, src.x), oracles.features(net.params, src.x.tolist()),
                                   rtol=1e-12, atol=1e-12)


def test_features_are_nonnegative(rng):
    net, src, _ = random_instance(rng)
    assert np.all(forward_features(net, src.x) >= 0)


def test_init_is_deterministic_and_he_scaled():
    cfg = ModelConfig(200, 3, 300, ())
    a, b = init_params(cfg, 7), init_params(cfg, 7)
    assert a.params.keys() == b.params.keys()
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    W = a.params["G.layer0.W"]
    assert W.shape == (300, 200)
    assert W.std() == pytest.approx(np.sqrt(2 / 200), rel=0.03)
    assert not a.params["G.layer0.b"].any() and not a.params["Cs.b"].any()


def test_variants_share_extractor_and_heads():
    cfg = ModelConfig(2, 2, 4, (5,))
    full = init_params(cfg, 3)
    single = init_params(cfg, 3, heads=("Cs",), discriminator=True)
    for k in single.params:
        if not k.startswith("D."):
            np.testing.assert_array_equal(single.params[k], full.params[k])
    assert "Ct.W" not in single.params and not single.has_target_head
    assert {g.label for g in single.groups()} == {"feature-extractor", "classifiers", "discriminator"}


def test_variables_marks_only_trainable_as_leaves():
    net = init_params(ModelConfig(2, 2, 4), 0)
    P = net.variables(net.feature_keys)
    assert all(P[k].requires_grad for k in net.feature_keys)
    assert not any(P[k].requires_grad for k in net.classifier_keys)
    with pytest.raises(KeyError):
        net.variables(["nope"])


def test_identical_heads_halve_probabilities(rng):
    for _ in range(20):
        v = rng.normal(size=(4, 3)) * 5
        p_st = concat_probs(v, v)
        src, tgt = domain_mass(p_st)
        np.testing.assert_allclose(src, 0.5, atol=1e-12)
        np.testing.assert_allclose(tgt, 0.5, atol=1e-12)
        np.testing.assert_allclose(category_marginal(p_st), softmax_rows(v), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(logit_pairs, st.floats(-100, 100))
def test_cst_invariant_to_common_shift(pair, c):
    vs, vt = pair
    np.testing.assert_allclose(concat_probs(vs + c, vt + c), concat_probs(vs, vt), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(logit_pairs)
def test_domain_masses_and_marginal_are_distributions(pair):
    p_st = concat_probs(*pair)
    src, tgt = domain_mass(p_st)
    np.testing.assert_allclose(src + tgt, 1.0, atol=1e-12)
    q = category_marginal(p_st)
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


def test_domain_mass_rejects_odd_width():
    with pytest.raises(ValueError, match="even"):
        domain_mass(np.ones((1, 3)) / 3)


def test_predict_breaks_ties_to_lowest_index():
    net = init_params(ModelConfig(2, 3, 2, ()), 0)
    for k in ("Ct.W", "Ct.b"):
        net.params[k][:] = 0.0
    assert list(predict(net, np.ones((3, 2)))) == [0, 0, 0]


def test_predict_proba_rows_sum_to_one(rng):
    net, src, _ = random_instance(rng)
    np.testing.assert_allclose(predict_proba(net, src.x, "Cs").sum(axis=1), 1.0)


def test_shape_errors(rng):
    net, src, _ = random_instance(rng)
    with pytest.raises(ValueError, match="input columns"):
        forward_features(net, np.ones((2, net.config.input_dim + 1)))
    with pytest.raises(ValueError, match="feature columns"):
        logits(net, np.ones((2, net.config.feature_dim + 1)))
    single = init_params(net.config, 0, heads=("Cs",))
    with pytest.raises(ValueError, match="no head"):
        logits(single, np.ones((1, net.config.feature_dim)), "Ct")


@pytest.mark.parametrize("heads,disc", [(("Cs", "Ct"), False), (("Cs",), True)])
def test_checkpoint_round_trip_is_exact(tmp_path, heads, disc):
    net = init_params(ModelConfig(3, 4, 5, (6, 7)), 11, heads=heads, discriminator=disc)
    net.params["G.layer1.b"] += np.pi / 7
    path = tmp_path / "ckpt.json"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.config == net.config
    assert back.params.keys() == net.params.keys()
    assert all(np.array_equal(back.params[k], net.params[k]) for k in net.params)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError, match="cannot read"):
        load_checkpoint(bad)
    bad.write_text('{"Cs.W": [[1.0]]}')
    with pytest.raises(ValueError, match="not a SymNet"):
        load_checkpoint(bad)
    with pytest.raises(ValueError, match="cannot read"):
        load_checkpoint(tmp_path / "missing.json")
