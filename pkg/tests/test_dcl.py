import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dclearn import optim
from dclearn.dcl import (
    DclConfig,
    DclState,
    MemoryBank,
    build_constraint_rows,
    dcl_apply,
    memory_gradients,
    should_reset,
)
from dclearn.model import Batch, init_mlp, loss_and_grad, tracked_gradient
from dclearn.numerics import DimensionError, cosine_sim
from oracles import halfspace_projection


def test_should_reset_examples():
    assert should_reset(3, DclConfig(1, 3, 0))
    assert should_reset(4, DclConfig(1, 3, 1))
    assert not should_reset(5, DclConfig(1, 3, 1))
    assert not any(should_reset(t, DclConfig(1, math.inf)) for t in range(100))


def test_config_validation():
    with pytest.raises(ValueError):
        DclConfig(-1)
    with pytest.raises(ValueError):
        DclConfig(1, 0)
    with pytest.raises(ValueError):
        DclConfig(1, 3, 3)
    with pytest.raises(ValueError):
        DclConfig(1, 2.5)
    assert DclConfig(1, 30).label == "DCL-30-1"
    assert DclConfig(2, math.inf, use_memory=True).label == "DCL-inf-2-MEM"


def test_build_rows_examples():
    assert build_constraint_rows(np.ones(2), DclState()).shape == (0, 2)
    s = DclState(refs=[np.array([1.0, 1.0])])
    assert build_constraint_rows(np.ones(2), s).shape == (0, 2)
    s = DclState(refs=[np.zeros(2)])
    A = build_constraint_rows(np.ones(2), s, [np.array([1.0, 0.0])])
    assert A.tolist() == [[1.0, 1.0], [-1.0, 0.0]]


def test_build_rows_drops_zero_memory_and_checks_length():
    s = DclState(refs=[np.zeros(2)])
    assert build_constraint_rows(np.ones(2), s, [np.zeros(2)]).shape == (1, 2)
    with pytest.raises(DimensionError):
        build_constraint_rows(np.ones(2), s, [np.zeros(3)])


def test_reset_phase_passes_gradient_through():
    cfg = DclConfig(1, math.inf)
    s = DclState()
    g = np.array([0.3, -0.7])
    out = dcl_apply(g, np.zeros(2), s, cfg)
    assert out.tobytes() == g.tobytes()
    assert s.refs_set == 1 and not s.corrected_last


def test_projection_example():
    cfg = DclConfig(1, math.inf)
    s = DclState()
    dcl_apply(np.zeros(2), np.zeros(2), s, cfg)  # sets r = 0
    out = dcl_apply(np.array([1.0, 1.0]), np.array([0.0, 1.0]), s, cfg)
    assert np.allclose(out, [1.0, 0.0], atol=1e-12)
    assert s.corrected_last


def test_congruent_gradient_untouched():
    cfg = DclConfig(1, math.inf)
    s = DclState()
    dcl_apply(np.zeros(2), np.zeros(2), s, cfg)
    g = np.array([1.0, -1.0])
    out = dcl_apply(g, np.array([0.0, 1.0]), s, cfg)
    assert out.tobytes() == g.tobytes() and not s.corrected_last


def test_reset_cadence():
    # n_r = 2, window 5, offset 1: steps 1, 2, 6, 7, 11, 12, ... reset
    cfg = DclConfig(2, 5, 1)
    s = DclState()
    rng = np.random.default_rng(0)
    w = np.zeros(3)
    for t in range(20):
        dcl_apply(rng.standard_normal(3), w, s, cfg)
        if t % 5 in (1, 2) or t == 0:
            assert s.last_A.shape[0] == 0
        else:
            assert s.last_A.shape[0] == 2
        w = w + rng.standard_normal(3)


def test_reset_steps_have_no_rows_and_others_do():
    cfg = DclConfig(1, 4, 0)
    s = DclState()
    w = np.zeros(2)
    for t in range(12):
        dcl_apply(np.array([1.0, 0.0]), w, s, cfg)
        if t % 4 == 0:
            assert s.last_A.shape[0] == 0
        else:
            assert s.last_A.shape[0] == 1
        w = w + np.array([0.0, 1.0])


def test_staggered_references_are_distinct():
    cfg = DclConfig(3, math.inf)
    s = DclState()
    for k in range(3):
        dcl_apply(np.ones(2), np.array([float(k), 0.0]), s, cfg)
    assert [r[0] for r in s.refs] == [0.0, 1.0, 2.0]


def _sgd_run(cfg, steps=30, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(4)
    st_ = optim.OptimizerState()
    oc = optim.OptimizerConfig("sgd", 0.1)
    s = DclState()
    ws = [w.copy()]
    for _ in range(steps):
        g = rng.standard_normal(4) + 0.3 * w
        gt = dcl_apply(g, w, s, cfg) if cfg is not None else g
        w = optim.sgd_step(w, gt, st_, oc)
        ws.append(w.copy())
    return np.array(ws)


def test_baseline_equivalence_bitwise():
    base = _sgd_run(None)
    assert _sgd_run(DclConfig(0)).tobytes() == base.tobytes()
    assert _sgd_run(DclConfig(1, 1, 0)).tobytes() == base.tobytes()
    assert _sgd_run(DclConfig(3, 1, 0)).tobytes() == base.tobytes()


def test_accumulated_gradient_identity():
    rng = np.random.default_rng(1)
    lr = 0.05
    w0 = rng.standard_normal(5)
    w, st_, gs = w0.copy(), optim.OptimizerState(), []
    for _ in range(40):
        g = rng.standard_normal(5)
        gs.append(g)
        w = optim.sgd_step(w, g, st_, optim.OptimizerConfig("sgd", lr))
    assert np.max(np.abs((w - w0) - (-lr * np.sum(gs, axis=0)))) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_feasibility_and_binding_congruency(seed, n_r):
    rng = np.random.default_rng(seed)
    cfg = DclConfig(n_r, 7)
    s = DclState()
    w = rng.standard_normal(6)
    for _ in range(15):
        g = rng.standard_normal(6)
        out = dcl_apply(g, w, s, cfg)
        A = s.last_A
        if s.corrected_last:
            assert np.all(A @ out <= 1e-8)
            # binding rows that g violated: the update -out agrees with the
            # displacement w - r_i at least as well as -g did
            for i in np.flatnonzero((s.last_v > 0) & (A @ g > 0)):
                assert cosine_sim(-out, A[i]) >= cosine_sim(-g, A[i]) - 1e-9
        elif A.shape[0] and np.all(A @ g <= 0):
            assert out.tobytes() == g.tobytes()
        w = w - 0.1 * out


def test_single_row_matches_halfspace_projection():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r, w, g = rng.standard_normal((3, 5))
        s = DclState(refs=[r], step=1)
        out = dcl_apply(g, w, s, DclConfig(1, math.inf))
        assert np.max(np.abs(out - halfspace_projection(g, w - r))) < 1e-10


def test_memory_rows_apply_during_reset():
    cfg = DclConfig(1, 2, 0, use_memory=True)
    s = DclState()
    gm = np.array([1.0, 0.0])
    out = dcl_apply(np.array([-1.0, 1.0]), np.zeros(2), s, cfg, [gm])
    assert s.last_A.shape[0] == 1
    assert out @ gm >= -1e-12


def test_memory_bank():
    b = MemoryBank(2)
    assert b.add([1.0], 0) and b.add([2.0], 1) and not b.add([3.0], 0)
    assert len(b) == 2
    b.clear()
    assert len(b) == 0


def test_memory_gradients():
    rng = np.random.default_rng(0)
    m = init_mlp(3, 5, 3, rng=rng)
    assert memory_gradients(MemoryBank(4), m, "softmax_cross_entropy") == []
    x = rng.standard_normal(3)
    bank = MemoryBank(1)
    bank.add(x, 2)
    gs = memory_gradients(bank, m, "softmax_cross_entropy")
    _, grads = loss_and_grad(m, Batch(x[None], np.array([2])), "softmax_cross_entropy")
    assert cosine_sim(gs[0], tracked_gradient(grads)) > 1 - 1e-9
    bank = MemoryBank(3)
    bank.extend(rng.standard_normal((3, 3)), [0, 1, 1])
    (mean_row,) = memory_gradients(bank, m, "softmax_cross_entropy", per_sample=False)
    per = memory_gradients(bank, m, "softmax_cross_entropy")
    assert np.allclose(mean_row, np.mean(per, axis=0))


def test_memory_gradients_of_different_classes_disagree():
    from dclearn.tasks.data import gen_blobs

    ds = gen_blobs(2, 20, 4, 4.0, 0)
    m = init_mlp(4, 8, 2, rng=1)
    xs = [ds.inputs[ds.labels == k][0] for k in (0, 1)]
    b0, b1 = MemoryBank(1), MemoryBank(1)
    b0.add(xs[0], 0)
    b1.add(xs[1], 1)
    (g0,) = memory_gradients(b0, m, "softmax_cross_entropy")
    (g1,) = memory_gradients(b1, m, "softmax_cross_entropy")
    assert cosine_sim(g0, g1) < 0.5
