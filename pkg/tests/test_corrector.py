import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mslc import corrector
from mslc.models import CoefficientNet


def saturated_net(bias: float) -> CoefficientNet:
    """Net whose output is forced through a saturated output bias."""
    net = CoefficientNet.build(seed=0, hidden=4)
    net.params.values[:] = 0.0
    net.params.view("b1")[0] = bias
    return net


# ---------------------------------------------------------------------------
# loss inputs
# ---------------------------------------------------------------------------

def test_inputs_uniform_prediction():
    l_alpha, _ = corrector.corrector_inputs(
        np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.array([0.5, 0.5]))
    assert l_alpha == pytest.approx(math.log(2.0), rel=1e-15)


def test_inputs_perfect_agreement_near_zero():
    y = np.array([1.0 - 1e-12, 1e-12])
    l_alpha, _ = corrector.corrector_inputs(y, y, y)
    assert 0.0 <= l_alpha < 1e-10


def test_inputs_hand_ce_value():
    _, l_beta = corrector.corrector_inputs(
        np.array([1.0, 0.0]), np.array([0.8, 0.2]), np.array([0.6, 0.4]))
    assert l_beta == pytest.approx(0.777661295762166, rel=1e-14)


def test_inputs_clamped_for_saturated_predictions():
    l_alpha, l_beta = corrector.corrector_inputs(
        np.array([0.0, 1.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert np.isfinite(l_alpha) and np.isfinite(l_beta)
    assert l_alpha == pytest.approx(-math.log(1e-12))


# ---------------------------------------------------------------------------
# blending
# ---------------------------------------------------------------------------

def test_blend_hand_value():
    out = corrector.blend_labels(np.array([1.0, 0.0]), np.array([0.6, 0.4]),
                                 np.array([0.8, 0.2]), 0.5, 0.5)
    assert out == pytest.approx([0.85, 0.15], rel=1e-15)


def test_blend_endpoint_identities():
    y = np.array([1.0, 0.0, 0.0])
    y_hat = np.array([0.2, 0.5, 0.3])
    prev = np.array([0.1, 0.1, 0.8])
    assert np.array_equal(corrector.blend_labels(y, y_hat, prev, 1.0, 0.3), y)
    assert np.array_equal(corrector.blend_labels(y, y_hat, prev, 0.0, 1.0), prev)
    assert np.array_equal(corrector.blend_labels(y, y_hat, prev, 0.0, 0.0), y_hat)


@given(st.integers(2, 6), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
@settings(max_examples=200, deadline=None)
def test_blend_convexity_closure(c, alpha, beta, seed):
    rng = np.random.default_rng(seed)
    def soft():
        p = rng.random(c) + 1e-9
        return p / p.sum()
    out = corrector.blend_labels(soft(), soft(), soft(), alpha, beta)
    assert (out >= 0.0).all()
    assert out.sum() == pytest.approx(1.0, abs=1e-9)


def test_correct_label_with_saturated_nets():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    y_hat = np.array([[0.6, 0.4], [0.3, 0.7]])
    prev = np.array([[0.8, 0.2], [0.9, 0.1]])
    # alpha forced to 1: corrected label collapses onto the observed label
    out = corrector.correct_label(y, y_hat, prev, saturated_net(50.0), saturated_net(0.0))
    assert np.allclose(out.y_tilde, y, atol=1e-11)
    # alpha -> 0, beta -> 0: corrected label collapses onto the prediction
    out = corrector.correct_label(y, y_hat, prev, saturated_net(-50.0), saturated_net(-50.0))
    assert np.allclose(out.y_tilde, y_hat, atol=1e-11)


def test_correct_label_fixed_beta_and_single_sample():
    net = CoefficientNet.build(seed=1, hidden=8)
    out = corrector.correct_label(np.array([1.0, 0.0]), np.array([0.5, 0.5]),
                                  np.array([0.5, 0.5]), net, 0.4)
    assert out.beta == 0.4
    assert out.y_tilde.shape == (2,)
    assert 0.0 < out.alpha < 1.0


# ---------------------------------------------------------------------------
# hard labels
# ---------------------------------------------------------------------------

def test_hard_label_cases():
    assert corrector.hard_label(np.array([0.1, 0.7, 0.2])) == 1
    assert corrector.hard_label(np.array([0.5, 0.5])) == 0  # tie-break to lowest
    for k in range(4):
        onehot = np.zeros(4)
        onehot[k] = 1.0
        assert corrector.hard_label(onehot) == k
    assert corrector.hard_label(np.array([[0.2, 0.8], [0.9, 0.1]])).tolist() == [1, 0]


# ---------------------------------------------------------------------------
# pseudo-label store
# ---------------------------------------------------------------------------

def test_store_roundtrip_and_untouched_rows():
    store = corrector.PseudoLabelStore(5, 3)
    y_hat = np.array([[0.2, 0.3, 0.5], [0.6, 0.2, 0.2]])
    y_tilde = np.array([[0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    store.update([1, 3], y_hat, y_tilde, step=7)
    got_hat, got_tilde = store.read([1, 3])
    assert np.array_equal(got_hat, y_hat)
    assert np.array_equal(got_tilde, y_tilde)
    assert store.last_updated_step.tolist() == [-1, 7, -1, 7, -1]
    assert np.array_equal(store.y_hat[0], np.zeros(3))


def test_store_unknown_index_raises():
    store = corrector.PseudoLabelStore(4, 2)
    with pytest.raises(IndexError):
        store.read([4])
    with pytest.raises(IndexError):
        store.update([-1], np.zeros((1, 2)), np.zeros((1, 2)), 0)


def test_store_warmup_seeding_sets_both_slots():
    probs = np.array([[0.7, 0.3], [0.1, 0.9], [0.5, 0.5]])
    store = corrector.PseudoLabelStore.from_predictions(probs, step=3)
    assert np.array_equal(store.y_hat, probs)
    assert np.array_equal(store.y_tilde_prev, probs)
    assert (store.last_updated_step == 3).all()


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def test_snapshot_csv_roundtrip(tmp_path):
    store = corrector.PseudoLabelStore.from_predictions(
        np.array([[0.7, 0.3], [0.2, 0.8], [0.55, 0.45]]))
    observed = np.array([0, 1, 1])
    true = np.array([0, 1, 0])
    net = CoefficientNet.build(seed=2, hidden=6)
    snap = corrector.snapshot_from_store(4, store, np.eye(2)[observed], true, observed, net, 0.3)
    path = tmp_path / "snap.csv"
    corrector.write_snapshot_csv(snap, path)
    back = corrector.read_snapshot_csv(path)
    assert np.array_equal(back.true_labels, snap.true_labels)
    assert np.array_equal(back.observed_labels, snap.observed_labels)
    assert np.array_equal(back.corrected_hard, snap.corrected_hard)
    assert np.array_equal(back.alpha, snap.alpha)  # repr round-trip is exact
    assert np.array_equal(back.l_beta, snap.l_beta)


def test_snapshot_uncorrected_uses_observed_labels(tmp_path):
    snap = corrector.snapshot_uncorrected(0, np.array([0, 1, 2]), np.array([0, 2, 2]))
    assert np.array_equal(snap.corrected_hard, [0, 2, 2])
    assert not snap.has_coefficients
    path = tmp_path / "warm.csv"
    corrector.write_snapshot_csv(snap, path)
    back = corrector.read_snapshot_csv(path)
    assert np.isnan(back.alpha).all()
