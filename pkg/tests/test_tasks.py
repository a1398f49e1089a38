import math

import numpy as np
import pytest
from scipy.optimize import minimize

from dclearn import optim
from dclearn.analysis import path_congruency
from dclearn.dcl import DclConfig
from dclearn.tasks import (
    AccuracyMatrix,
    ContinualConfig,
    bench2d_eval,
    default_problem,
    gem_config,
    gen_blobs,
    gen_blobs_split,
    gen_stream,
    metrics,
    quadratic_problem,
    run_bench2d,
    run_continual,
)
from dclearn.tasks.bench2d import final_state, two_minimum
from dclearn.tasks.classify import ModelConfig, TrainConfig, train_blobs
from oracles import central_difference, linear_classifier


def test_listed_minima_are_stationary_and_match_scipy():
    p = default_problem()
    mins = p.minima
    assert len(mins) == 2
    for m in mins:
        assert np.linalg.norm(bench2d_eval(p, *m)[1]) < 1e-6
    for guess in ((1.2, 0.8), (-0.8, -1.2)):
        res = minimize(lambda w: two_minimum(*w)[0], guess, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
        assert min(np.linalg.norm(res.x - np.array(m)) for m in mins) < 1e-5
    # the deeper well comes first
    assert mins[0][0] > 0 and mins[1][0] < 0


def test_default_function_swap_symmetry():
    rng = np.random.default_rng(0)
    for x, y in rng.uniform(-3, 3, (50, 2)):
        assert two_minimum(x, y)[0] == two_minimum(y, x)[0]


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    for p in (default_problem(), quadratic_problem()):
        for w in rng.uniform(-3, 3, (100, 2)):
            num = central_difference(lambda v: bench2d_eval(p, *v)[0], w, 1e-6)
            ana = bench2d_eval(p, *w)[1]
            assert np.max(np.abs(num - ana)) / max(1.0, np.max(np.abs(ana))) < 1e-6


def test_eval_rejects_non_finite():
    with pytest.raises(ValueError):
        bench2d_eval(default_problem(), math.nan, 0.0)


def test_gd_small_step_descends_on_quadratic():
    p = quadratic_problem()
    tr = run_bench2d(p, optim.OptimizerConfig("sgd", 0.01), iters=300)
    z = [r.loss for r in tr.records]
    assert all(b < a for a, b in zip(z, z[1:]))


def test_quadratic_minimum_is_origin():
    assert np.allclose(quadratic_problem(2.0, 5.0).minima, [(0.0, 0.0)], atol=1e-9)


@pytest.mark.parametrize("kind,lr", [("sgd", 0.1), ("rmsprop", 0.01), ("adam", 0.01)])
def test_no_references_is_bitwise_baseline(kind, lr):
    p = default_problem()
    cfg = optim.OptimizerConfig(kind, lr)
    a = run_bench2d(p, cfg, None, 150)
    b = run_bench2d(p, cfg, DclConfig(0), 150)
    assert np.array(a.weights()).tobytes() == np.array(b.weights()).tobytes()
    assert a.final_w.tobytes() == b.final_w.tobytes()


def test_dcl_straightens_gd_path():
    p = default_problem()
    cfg = optim.OptimizerConfig("sgd", 0.2)
    base = run_bench2d(p, cfg, None, 200)
    dcl = run_bench2d(p, cfg, DclConfig(1, math.inf), 200)
    assert path_congruency(dcl) > path_congruency(base)


@pytest.mark.parametrize("kind,lr", [("sgd", 0.3), ("rmsprop", 0.05), ("adam", 0.05)])
def test_corrected_steps_are_feasible(kind, lr):
    p = default_problem()
    tr = run_bench2d(p, optim.OptimizerConfig(kind, lr), DclConfig(2, 10, 3), 200)
    refs, checked = [], 0
    for r in tr.records:
        if r.t % 10 == 3:
            refs = []
        if len(refs) < 2 and (r.t % 10 in (3, 4)):
            refs.append(r.w.copy())
            continue
        if r.corrected:
            A = np.array([r.w - ref for ref in refs])
            assert np.all(A @ r.g_tilde <= 1e-8)
            # the rebuilt rows are the ones the correction saw: g was pushed onto them
            assert np.max(A @ r.g) > 0 and np.min(np.abs(A @ r.g_tilde)) < 1e-8 * max(1.0, np.abs(A).max())
            checked += 1
    assert checked > 0


def test_divergence_flag():
    tr = run_bench2d(quadratic_problem(), optim.OptimizerConfig("sgd", 0.5), iters=500)
    assert tr.diverged and len(tr) < 500
    assert math.isnan(final_state(quadratic_problem(), tr)[0])


def test_grad_tol_stops_early():
    tr = run_bench2d(default_problem(), optim.OptimizerConfig("sgd", 0.1), iters=2000, grad_tol=1e-3)
    assert len(tr) < 2000 and final_state(default_problem(), tr)[1] < 1e-3


def test_blobs_determinism_and_shape():
    a, b = gen_blobs(3, 10, 4, 2.0, 5), gen_blobs(3, 10, 4, 2.0, 5)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert a.inputs.shape == (30, 4) and np.bincount(a.labels).tolist() == [10, 10, 10]
    assert gen_blobs(3, 10, 4, 2.0, 6).inputs.tobytes() != a.inputs.tobytes()
    with pytest.raises(ValueError):
        gen_blobs(1, 10, 4, 2.0, 0)


def test_zero_separation_is_chance():
    train, test = gen_blobs_split(4, 100, 250, 4, 0.0, 0)
    rows, _ = train_blobs(train, test, ModelConfig(hidden=16), optim.OptimizerConfig("sgd", 0.05),
                          TrainConfig(epochs=5), seed=0)
    assert abs((1 - rows[-1]["test_error"]) - 0.25) <= 0.1


def test_wide_separation_is_learned_by_linear_model():
    train, test = gen_blobs_split(2, 200, 200, 2, 10.0, 0)
    pred = linear_classifier(train.inputs, train.labels, test.inputs)
    assert np.mean(pred == test.labels) > 0.99


def test_stream_single_task_is_base():
    base = gen_blobs(3, 10, 4, 2.0, 0)
    s = gen_stream("rotate", 1, base, 0)
    assert len(s) == 1 and s.tasks[0].train is base


def test_stream_zero_angles_give_identical_tasks():
    base = gen_blobs(3, 10, 4, 2.0, 0)
    s = gen_stream("rotate", 4, base, 0, angles=[0.0] * 4)
    for t in s.tasks:
        assert np.allclose(t.transform.apply(base.inputs), base.inputs, atol=1e-15)
    with pytest.raises(ValueError):
        gen_stream("rotate", 2, base, 0, angles=[0.5, 0.0])


@pytest.mark.parametrize("kind", ["permute", "rotate"])
def test_transforms_are_label_preserving_bijections(kind):
    base = gen_blobs(3, 10, 5, 2.0, 0)
    s = gen_stream(kind, 5, base, 1)
    for t in s.tasks:
        tr = t.transform
        assert np.allclose(tr.invert(tr.apply(base.inputs)), base.inputs, atol=1e-12)
        assert t.train.d == 5 and t.train.c == 3 and t.test.d == 5
        if kind == "permute" and tr.kind == "permute":
            assert sorted(tr.perm.tolist()) == list(range(5))
            assert tr.invert(tr.apply(base.inputs)).tobytes() == base.inputs.tobytes()
        if kind == "rotate" and tr.kind == "rotate":
            M = tr.matrix
            assert np.allclose(M @ M.T, np.eye(5), atol=1e-12)


def test_stream_rejects_bad_kind():
    with pytest.raises(ValueError):
        gen_stream("shuffle", 2, gen_blobs(2, 5, 2, 1.0, 0), 0)


def test_stream_determinism():
    base = gen_blobs(3, 10, 4, 2.0, 0)
    a, b = gen_stream("permute", 3, base, 9), gen_stream("permute", 3, base, 9)
    for x, y in zip(a.tasks, b.tasks):
        assert x.train.inputs.tobytes() == y.train.inputs.tobytes()
        assert x.test.inputs.tobytes() == y.test.inputs.tobytes()


def test_metrics_examples():
    R = np.array([[0.9, 0.1], [0.8, 0.9]])
    acc, bwt, fwt = metrics(AccuracyMatrix(R, np.array([0.1, 0.1])))
    assert abs(acc - 0.85) < 1e-12 and abs(bwt + 0.1) < 1e-12 and abs(fwt) < 1e-12
    a = 0.7
    b = np.array([0.1, 0.2, 0.3])
    acc, bwt, fwt = metrics(AccuracyMatrix(np.full((3, 3), a), b))
    assert abs(acc - a) < 1e-12 and abs(bwt) < 1e-12 and abs(fwt - (a - b[1:].mean())) < 1e-12
    assert metrics(AccuracyMatrix(np.array([[0.5]]), np.array([0.1]))) == (0.5, None, None)
    with pytest.raises(ValueError):
        AccuracyMatrix(np.array([[1.5]]), np.array([0.1]))


def test_forgetting_gives_negative_bwt():
    R = np.array([[0.95, 0.2], [0.3, 0.9]])
    assert metrics(AccuracyMatrix(R, np.array([0.1, 0.1])))[1] < 0


def _small_stream(kind="rotate", T=3, angles=None):
    base = gen_blobs(3, 30, 4, 3.0, 0)
    return gen_stream(kind, T, base, 1, n_train=30, n_test=30, angles=angles)


def test_identical_tasks_no_forgetting():
    s = _small_stream(T=2, angles=[0.0, 0.0])
    acc, _ = run_continual(s, ModelConfig(hidden=16), optim.OptimizerConfig("sgd", 0.1), None,
                           ContinualConfig(epochs_per_task=3), seed=0)
    _, bwt, _ = metrics(acc)
    assert abs(acc.R[1, 0] - acc.R[0, 0]) <= 0.05 and abs(bwt) <= 0.05


def test_mechanisms_off_is_plain_sequential_sgd():
    s = _small_stream()
    cfg = optim.OptimizerConfig("sgd", 0.1)
    a, ta = run_continual(s, ModelConfig(hidden=8), cfg, None, ContinualConfig(mem_per_task=0), seed=3)
    b, tb = run_continual(s, ModelConfig(hidden=8), cfg, DclConfig(0), ContinualConfig(mem_per_task=0), seed=3)
    c, tc = run_continual(s, ModelConfig(hidden=8), cfg, DclConfig(0, use_memory=True),
                          ContinualConfig(mem_per_task=0), seed=3)
    assert a.R.tobytes() == b.R.tobytes() == c.R.tobytes()
    assert ta.weights().tobytes() == tb.weights().tobytes() == tc.weights().tobytes()


def test_continual_determinism_and_memory_rows():
    s = _small_stream()
    cfg = optim.OptimizerConfig("sgd", 0.1)
    dcl = DclConfig(1, 4, use_memory=True)
    a, ta = run_continual(s, ModelConfig(hidden=8), cfg, dcl, ContinualConfig(mem_per_task=8), seed=2)
    b, tb = run_continual(s, ModelConfig(hidden=8), cfg, dcl, ContinualConfig(mem_per_task=8), seed=2)
    assert a.R.tobytes() == b.R.tobytes() and ta.applied().tobytes() == tb.applied().tobytes()
    assert [r.epoch for r in ta.records][0] == 1 and ta.records[-1].epoch == 3
    assert np.all((a.R >= 0) & (a.R <= 1))
    assert gem_config().n_r == 0 and gem_config().use_memory


def test_train_blobs_rows_and_gem_mode():
    train, test = gen_blobs_split(3, 20, 10, 4, 2.0, 0)
    rows, run = train_blobs(train, test, ModelConfig(hidden=8), optim.OptimizerConfig("sgd", 0.05),
                            TrainConfig(epochs=3), gem=True, seed=0)
    assert [r["epoch"] for r in rows] == [1, 2, 3]
    assert set(rows[0]) == {"epoch", "train_loss", "test_error", "epoch_congruency", "magnitude_abs", "magnitude_rel"}
    assert run.dcl_cfg.use_memory and run.dcl_cfg.n_r == 0
    assert any(r.corrected for r in run.trace.records)
