import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from helpers import identical_heads, random_instance
from symnets import losses as L
from symnets.autodiff import Node
from symnets.data import LabeledBatch, UnlabeledBatch
from symnets.model import forward_features

N_INSTANCES = 100
TOL = 1e-10


def _close(a, b, tol=TOL):
    return abs(a - b) <= tol * max(1.0, abs(b))


# (package loss, oracle, inputs it takes)
SYMNET_CASES = {
    "task_source": (L.loss_task_source, oracles.task_source, "src"),
    "task_target_crossdomain": (L.loss_task_target_crossdomain, oracles.task_target, "src"),
    "domain_discrimination": (L.loss_domain_discrimination, oracles.domain_discrimination, "both"),
    "category_confusion": (L.loss_category_confusion, oracles.category_confusion, "src"),
    "domain_confusion_target": (L.loss_domain_confusion_target, oracles.domain_confusion_target, "tgt"),
    "entropy": (L.loss_entropy_min, oracles.entropy, "tgt"),
    "domain_confusion_source": (L.loss_domain_confusion_source_degenerate,
                                oracles.domain_confusion_source_degenerate, "src_x"),
    "two_head_supervised": (L.loss_two_head_supervised_degenerate, oracles.two_head_supervised, "src"),
}


def _call(case, net, src, tgt):
    fn, oracle, kind = SYMNET_CASES[case]
    P = net.params
    if kind == "src":
        return fn(net, src).item(), oracle(P, src.x.tolist(), src.y.tolist())
    if kind == "src_x":
        return fn(net, src).item(), oracle(P, src.x.tolist())
    if kind == "tgt":
        return fn(net, tgt).item(), oracle(P, tgt.x.tolist())
    return fn(net, src, tgt).item(), oracle(P, src.x.tolist(), tgt.x.tolist())


@pytest.mark.parametrize("case", sorted(SYMNET_CASES))
def test_symnet_losses_match_scalar_oracle(case):
    rng = np.random.default_rng(zlib.crc32(case.encode()))
    for _ in range(N_INSTANCES):
        net, src, tgt = random_instance(rng)
        got, want = _call(case, net, src, tgt)
        assert _close(got, want), (case, got, want)


@pytest.mark.parametrize("case", ["task", "discriminator", "confusion"])
def test_domain_confusion_baseline_matches_scalar_oracle(case):
    rng = np.random.default_rng({"task": 1, "discriminator": 2, "confusion": 3}[case])
    for _ in range(N_INSTANCES):
        net, src, tgt = random_instance(rng, heads=("Cs",), discriminator=True)
        P = net.params
        if case == "task":
            got, want = L.baseline_dc_task(net, src).item(), oracles.dc_task(P, src.x.tolist(), src.y.tolist())
        else:
            fs, ft = forward_features(net, src.x), forward_features(net, tgt.x)
            fn = L.baseline_dc_discriminator if case == "discriminator" else L.baseline_dc_confusion
            ofn = oracles.dc_discriminator if case == "discriminator" else oracles.dc_confusion
            got, want = fn(net, fs, ft).item(), ofn(P, fs.tolist(), ft.tolist())
        assert _close(got, want), (case, got, want)


# -- closed-form values --------------------------------------------------------

def test_identical_heads_closed_forms(rng):
    for _ in range(30):
        net, src, tgt = random_instance(rng)
        twin = identical_heads(net)
        assert abs(L.loss_domain_discrimination(twin, src, tgt).item() - 2 * math.log(2)) <= 1e-9
        assert abs(L.loss_domain_confusion_target(twin, tgt).item() - math.log(2)) <= 1e-9
        ce = L.loss_task_source(twin, src).item()
        assert L.loss_category_confusion(twin, src).item() == pytest.approx(ce + math.log(2), abs=1e-9)
        assert L.loss_two_head_supervised_degenerate(twin, src).item() == pytest.approx(ce, abs=1e-12)


def test_entropy_with_identical_heads_is_single_head_entropy(rng):
    net, _, tgt = random_instance(rng)
    twin = identical_heads(net)
    f = forward_features(twin, tgt.x)
    v = Node(f @ twin.params["Cs.W"].T + twin.params["Cs.b"])
    assert L.loss_entropy_min(twin, tgt).item() == pytest.approx(
        L.single_head_entropy_from_logits(v).item(), abs=1e-12)


def test_baseline_at_uninformative_discriminator_is_two_ln2(rng):
    net, src, tgt = random_instance(rng, heads=("Cs",), discriminator=True)
    net.params["D.W"][:] = 0.0
    net.params["D.b"][:] = 0.0
    fs, ft = forward_features(net, src.x), forward_features(net, tgt.x)
    assert L.baseline_dc_discriminator(net, fs, ft).item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert L.baseline_dc_confusion(net, fs, ft).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_cross_entropy_uniform_logits_is_log_k():
    v = Node(np.zeros((4, 5)))
    assert L.cross_entropy_from_logits(v, [0, 1, 2, 4]).item() == pytest.approx(math.log(5), abs=1e-15)


# -- properties ----------------------------------------------------------------

def _logit_pair(max_rows=6, max_k=5, bound=30.0):
    shape = st.tuples(st.integers(1, max_rows), st.integers(2, max_k))
    floats = st.floats(-bound, bound, allow_nan=False, allow_infinity=False)
    return shape.flatmap(lambda s: st.tuples(arrays(np.float64, s, elements=floats),
                                             arrays(np.float64, s, elements=floats)))


@settings(max_examples=200, deadline=None)
@given(_logit_pair())
def test_domain_confusion_is_at_least_ln2(pair):
    vs, vt = pair
    assert L.domain_confusion_from_logits(Node(vs), Node(vt)).item() >= math.log(2) - 1e-12


@settings(max_examples=200, deadline=None)
@given(_logit_pair(), st.data())
def test_category_confusion_is_at_least_ln2(pair, data):
    vs, vt = pair
    y = data.draw(arrays(np.int64, vs.shape[0], elements=st.integers(0, vs.shape[1] - 1)))
    assert L.category_confusion_from_logits(Node(vs), Node(vt), y).item() >= math.log(2) - 1e-12


@settings(max_examples=200, deadline=None)
@given(_logit_pair())
def test_entropy_lies_between_zero_and_log_k(pair):
    vs, vt = pair
    h = L.entropy_from_logits(Node(vs), Node(vt)).item()
    assert -1e-12 <= h <= math.log(vs.shape[1]) + 1e-12


@settings(max_examples=200, deadline=None)
@given(_logit_pair(), _logit_pair())
def test_domain_discrimination_nonnegative_and_swap_symmetric(a, b):
    (vs_s, vt_s), (vs_t, vt_t) = a, b
    if vs_s.shape[1] != vs_t.shape[1]:
        return
    n = lambda x: Node(x)  # noqa: E731
    d = L.domain_discrimination_from_logits(n(vs_s), n(vt_s), n(vs_t), n(vt_t)).item()
    assert d >= 0.0
    # swapping the heads and the domains relabels the same problem
    swapped = L.domain_discrimination_from_logits(n(vt_t), n(vs_t), n(vt_s), n(vs_s)).item()
    assert swapped == pytest.approx(d, rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(_logit_pair(), st.floats(-50, 50))
def test_cst_losses_invariant_to_common_row_shift(pair, c):
    vs, vt = pair
    base = L.domain_confusion_from_logits(Node(vs), Node(vt)).item()
    moved = L.domain_confusion_from_logits(Node(vs + c), Node(vt + c)).item()
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-9)
    h0 = L.entropy_from_logits(Node(vs), Node(vt)).item()
    h1 = L.entropy_from_logits(Node(vs + c), Node(vt + c)).item()
    assert h1 == pytest.approx(h0, rel=1e-9, abs=1e-9)


def test_extreme_logits_stay_finite():
    vs = Node(np.array([[1000.0, -1000.0], [-800.0, 900.0]]))
    vt = Node(np.array([[-1000.0, 1000.0], [700.0, -900.0]]))
    y = [0, 1]
    for val in (L.cross_entropy_from_logits(vs, y), L.category_confusion_from_logits(vs, vt, y),
                L.domain_confusion_from_logits(vs, vt), L.entropy_from_logits(vs, vt),
                L.domain_discrimination_from_logits(vs, vt, vt, vs),
                L.dc_discriminator_from_scores(Node([[800.0]]), Node([[-800.0]]))):
        assert np.isfinite(val.item())


# -- validation ----------------------------------------------------------------

def test_label_out_of_range_raises():
    with pytest.raises(ValueError, match="labels"):
        L.cross_entropy_from_logits(Node(np.zeros((2, 3))), [0, 3])


def test_label_count_mismatch_raises():
    with pytest.raises(ValueError, match="labels"):
        L.cross_entropy_from_logits(Node(np.zeros((2, 3))), [0])


def test_head_shape_mismatch_raises():
    with pytest.raises(ValueError, match="shapes differ"):
        L.domain_confusion_from_logits(Node(np.zeros((2, 3))), Node(np.zeros((2, 4))))


def test_wrong_input_width_raises(rng):
    net, src, _ = random_instance(rng)
    bad = LabeledBatch(np.zeros((2, net.config.input_dim + 1)), [0, 1])
    with pytest.raises(ValueError, match="input columns"):
        L.loss_task_source(net, bad)


def test_discriminator_losses_need_discriminator(rng):
    net, src, tgt = random_instance(rng)
    f = forward_features(net, src.x)
    with pytest.raises(ValueError, match="discriminator"):
        L.baseline_dc_discriminator(net, f, f)


def test_empty_target_batch_rejected():
    with pytest.raises(ValueError, match="empty"):
        UnlabeledBatch(np.zeros((0, 2)))
