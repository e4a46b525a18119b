import math

import numpy as np
import pytest
from helpers import central_diff, rel_err
from hypothesis import given, settings
from hypothesis import strategies as st

from mslc import nn
from mslc.errors import ContractViolation, DimensionError, TrainingDiverged


# ---------------------------------------------------------------------------
# affine
# ---------------------------------------------------------------------------

def test_affine_identity_weights():
    out = nn.affine_forward([[1.0, 2.0]], np.eye(2), [0.0, 0.0])
    assert np.array_equal(out, [[1.0, 2.0]])


def test_affine_hand_value():
    out = nn.affine_forward([[1.0, 1.0]], [[2.0, 3.0], [4.0, 5.0]], [1.0, 1.0])
    assert np.array_equal(out, [[7.0, 9.0]])


def test_affine_empty_batch():
    out = nn.affine_forward(np.zeros((0, 3)), np.zeros((3, 4)), np.zeros(4))
    assert out.shape == (0, 4)


def test_affine_shape_errors_name_operand():
    with pytest.raises(DimensionError, match="weights"):
        nn.affine_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(DimensionError, match="bias"):
        nn.affine_forward(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def test_relu_values():
    assert nn.relu_forward(np.array([-1.0, 3.0])).tolist() == [0.0, 3.0]


def test_sigmoid_symmetry():
    assert nn.sigmoid_forward(np.array(0.0)) == 0.5


def test_sigmoid_stable_branch():
    v = nn.sigmoid_forward(np.array(-50.0))
    assert 0.0 < v <= 1e-20
    assert v == pytest.approx(1.928749847963918e-22, rel=1e-12)
    assert np.isfinite(nn.sigmoid_forward(np.array([-1e4, 1e4]))).all()


def test_softmax_uniform_and_closed_form():
    assert nn.softmax_forward(np.array([[0.0, 0.0]]))[0].tolist() == [0.5, 0.5]
    row = nn.softmax_forward(np.array([[math.log(2.0), 0.0]]))[0]
    assert row == pytest.approx([2.0 / 3.0, 1.0 / 3.0], rel=1e-14)


def test_softmax_no_overflow():
    row = nn.softmax_forward(np.array([[1000.0, 0.0]]))[0]
    assert row[0] == pytest.approx(1.0, abs=1e-12)
    assert row[1] == pytest.approx(0.0, abs=1e-12)


@given(st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=2, max_size=8))
@settings(max_examples=200, deadline=None)
def test_softmax_rows_sum_to_one(logits):
    row = nn.softmax_forward(np.array([logits]))
    assert abs(row.sum() - 1.0) <= 1e-12
    assert (row >= 0).all()


# ---------------------------------------------------------------------------
# soft-target cross entropy
# ---------------------------------------------------------------------------

def test_ce_uniform_case():
    loss, _ = nn.cross_entropy_soft(np.array([[0.0, 0.0]]), np.array([[0.5, 0.5]]))
    assert loss == pytest.approx(math.log(2.0), rel=1e-15)


def test_ce_hand_gradient():
    loss, grad = nn.cross_entropy_soft(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    assert loss == pytest.approx(math.log(2.0), rel=1e-15)
    assert grad[0] == pytest.approx([-0.5, 0.5], rel=1e-15)


def test_ce_rejects_bad_targets():
    with pytest.raises(ContractViolation):
        nn.cross_entropy_soft(np.zeros((1, 2)), np.array([[0.7, 0.7]]))
    with pytest.raises(ContractViolation):
        nn.cross_entropy_soft(np.zeros((1, 2)), np.array([[1.2, -0.2]]))


def test_ce_empty_batch():
    loss, grad = nn.cross_entropy_soft(np.zeros((0, 3)), np.zeros((0, 3)))
    assert loss == 0.0 and grad.shape == (0, 3)


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        logits = rng.normal(size=(4, 3))
        t = rng.random((4, 3))
        t /= t.sum(axis=1, keepdims=True)
        _, grad = nn.cross_entropy_soft(logits, t)
        fd = central_diff(lambda: nn.cross_entropy_soft(logits, t)[0], logits)
        assert rel_err(grad, fd.reshape(grad.shape)).max() < 1e-6


# ---------------------------------------------------------------------------
# layer backward passes vs finite differences
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("shape", [(3, 4, 2), (1, 5, 5), (6, 2, 3)])
def test_affine_backward_matches_fd(shape):
    n, din, dout = shape
    rng = np.random.default_rng(n)
    x = rng.normal(size=(n, din))
    w = rng.normal(size=(din, dout))
    b = rng.normal(size=dout)
    dout_seed = rng.normal(size=(n, dout))

    def loss():
        return float((nn.affine_forward(x, w, b) * dout_seed).sum())

    dx, dw, db = nn.affine_backward(dout_seed, x, w)
    assert rel_err(dx, central_diff(loss, x).reshape(dx.shape)).max() < 1e-5
    assert rel_err(dw, central_diff(loss, w).reshape(dw.shape)).max() < 1e-5
    assert rel_err(db, central_diff(loss, b).reshape(db.shape)).max() < 1e-5


def test_relu_sigmoid_backward_match_fd():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4, 3)) * 2.0
    seed = rng.normal(size=(4, 3))

    def relu_loss():
        return float((nn.relu_forward(x) * seed).sum())

    dr = nn.relu_backward(seed, x)
    assert rel_err(dr, central_diff(relu_loss, x).reshape(dr.shape)).max() < 1e-5

    def sig_loss():
        return float((nn.sigmoid_forward(x) * seed).sum())

    ds = nn.sigmoid_backward(seed, nn.sigmoid_forward(x))
    assert rel_err(ds, central_diff(sig_loss, x).reshape(ds.shape)).max() < 1e-5


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def test_layout_offsets_contiguous():
    layout = nn.ParamLayout.from_shapes([("w0", (2, 3)), ("b0", (3,)), ("w1", (3, 1))])
    assert layout.size == 6 + 3 + 3
    assert layout.entry("b0") == (6, (3,))


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=4))
@settings(max_examples=100, deadline=None)
def test_flatten_roundtrip(shapes):
    named = [(f"p{i}", s) for i, s in enumerate(shapes)]
    layout = nn.ParamLayout.from_shapes(named)
    rng = np.random.default_rng(0)
    arrays = {name: rng.normal(size=shape) for name, shape in named}
    flat = nn.flatten_params(arrays, layout)
    back = nn.unflatten_params(flat, layout)
    for name, _ in named:
        assert np.array_equal(back[name], arrays[name])
    assert np.array_equal(nn.flatten_params(back, layout), flat)


def test_paramvector_views_alias_flat_storage():
    layout = nn.ParamLayout.from_shapes([("w", (2, 2)), ("b", (2,))])
    p = nn.ParamVector.zeros(layout)
    p.view("w")[0, 1] = 7.0
    assert p.values[1] == 7.0


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def test_sgd_plain_step():
    p = np.array([1.0])
    nn.optimizer_step(nn.SgdMomentum(lr=0.1, momentum=0.0), p, np.array([2.0]))
    assert p[0] == pytest.approx(0.8, rel=1e-15)


def test_sgd_momentum_recursion():
    p = np.array([0.0])
    state = nn.SgdMomentum(lr=1.0, momentum=0.9)
    nn.optimizer_step(state, p, np.array([1.0]))
    assert p[0] == pytest.approx(-1.0)
    nn.optimizer_step(state, p, np.array([1.0]))
    assert p[0] == pytest.approx(-2.9)


def test_sgd_zero_gradient_leaves_params_buffers_decay():
    p = np.array([3.0])
    state = nn.SgdMomentum(lr=0.5, momentum=0.8)
    nn.optimizer_step(state, p, np.array([0.0]))
    assert p[0] == 3.0
    state.velocity[:] = 2.0
    nn.optimizer_step(state, p, np.array([0.0]))
    assert state.velocity[0] == pytest.approx(1.6)


def test_sgd_coupled_weight_decay():
    p = np.array([2.0])
    nn.optimizer_step(nn.SgdMomentum(lr=0.1, momentum=0.0, weight_decay=0.5), p, np.array([0.0]))
    # v = 0 + 0 + 0.5*2 = 1 ; p = 2 - 0.1
    assert p[0] == pytest.approx(1.9, rel=1e-15)


def test_adam_first_step_magnitude():
    p = np.zeros(4)
    nn.optimizer_step(nn.Adam(lr=1e-3), p, np.ones(4))
    assert p == pytest.approx(-1e-3 * np.ones(4), rel=1e-7)


def test_adam_zero_gradient_from_fresh_state():
    p = np.array([1.0, -2.0])
    state = nn.Adam(lr=1e-3)
    nn.optimizer_step(state, p, np.zeros(2))
    assert p.tolist() == [1.0, -2.0]
    state.m[:] = 1.0
    nn.optimizer_step(state, p, np.zeros(2))
    assert state.m[0] == pytest.approx(0.9)


def test_adam_bitwise_determinism():
    def run():
        p = np.linspace(-1, 1, 5)
        state = nn.Adam(lr=1e-2)
        for g in np.random.default_rng(1).normal(size=(10, 5)):
            nn.optimizer_step(state, p, g)
        return p

    assert np.array_equal(run(), run())


def test_step_counter_increments():
    state = nn.Adam(lr=1e-3)
    p = np.zeros(2)
    for expected in (1, 2, 3):
        nn.optimizer_step(state, p, np.ones(2))
        assert state.step_count == expected


def test_nan_gradient_aborts_with_step_index():
    state = nn.SgdMomentum(lr=0.1)
    p = np.zeros(2)
    nn.optimizer_step(state, p, np.ones(2))
    with pytest.raises(TrainingDiverged) as err:
        nn.optimizer_step(state, p, np.array([np.nan, 0.0]))
    assert err.value.step_index == 1
