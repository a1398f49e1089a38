"""Sequential training over a task stream and the transfer metrics."""

from dataclasses import dataclass

import numpy as np

from .. import optim
from ..dcl import DclConfig, MemoryBank, memory_gradients
from ..model import Batch, accuracy, init_mlp
from .classify import ModelConfig, StepRunner, batches


@dataclass(frozen=True)
class AccuracyMatrix:
    R: np.ndarray  # R[i, j]: accuracy on task j after training task i
    b: np.ndarray  # accuracy of the untrained model on each task

    def __post_init__(self):
        T = self.b.shape[0]
        if self.R.shape != (T, T):
            raise ValueError("R must be T x T")
        if np.any(self.R < 0) or np.any(self.R > 1) or np.any(self.b < 0) or np.any(self.b > 1):
            raise ValueError("accuracies must lie in [0, 1]")


@dataclass(frozen=True)
class ContinualConfig:
    epochs_per_task: int = 1
    batch_size: int = 10
    mem_per_task: int = 32

    def __post_init__(self):
        if self.mem_per_task < 0:
            raise ValueError("mem_per_task must be >= 0")
        if self.epochs_per_task < 1 or self.batch_size < 1:
            raise ValueError("epochs_per_task and batch_size must be >= 1")


def metrics(acc):
    """(ACC, BWT, FWT); BWT and FWT are None for a single task."""
    R, b = np.asarray(acc.R), np.asarray(acc.b)
    T = R.shape[0]
    ACC = float(R[T - 1].mean())
    if T < 2:
        return ACC, None, None
    bwt = float(np.mean([R[T - 1, i] - R[i, i] for i in range(T - 1)]))
    fwt = float(np.mean([R[i - 1, i] - b[i] for i in range(1, T)]))
    return ACC, bwt, fwt


def run_continual(stream, model_cfg=ModelConfig(), opt_cfg=optim.OptimizerConfig(), dcl_cfg=None,
                  cont_cfg=ContinualConfig(), seed=0):
    """Train the tasks in order; returns (AccuracyMatrix, trace).

    With ``dcl_cfg.use_memory`` the first ``mem_per_task`` training samples of
    each finished task are stored and every step adds one constraint row per
    past task: the gradient of the mean loss over that task's samples.
    References are cleared at every task boundary. The trace's ``epoch``
    field holds the 1-based task index.
    """
    T = len(stream)
    first = stream.tasks[0].train
    rng = np.random.default_rng(seed)
    model = init_mlp(first.d, model_cfg.hidden, first.c, model_cfg.activation, rng)
    b = np.array([accuracy(model, task.test.inputs, task.test.labels) for task in stream.tasks])
    run = StepRunner(model, opt_cfg, model_cfg, dcl_cfg)
    use_mem = dcl_cfg is not None and dcl_cfg.use_memory and cont_cfg.mem_per_task > 0
    banks = []
    R = np.zeros((T, T))
    for k, task in enumerate(stream.tasks):
        run.dcl_state.clear()
        tr = task.train
        for _ in range(cont_cfg.epochs_per_task):
            for idx in batches(len(tr), cont_cfg.batch_size, rng):
                mem = []
                if use_mem:
                    for bank in banks:
                        mem.extend(memory_gradients(bank, run.model, model_cfg.loss, per_sample=False))
                run.step(Batch(tr.inputs[idx], tr.labels[idx]), k + 1, opt_cfg.lr, mem)
        if use_mem:
            bank = MemoryBank(cont_cfg.mem_per_task)
            bank.extend(tr.inputs, tr.labels)
            banks.append(bank)
        R[k] = [accuracy(run.model, t.test.inputs, t.test.labels) for t in stream.tasks]
    return AccuracyMatrix(R, b), run.trace


def gem_config():
    """Memory rows only, no references."""
    return DclConfig(n_r=0, use_memory=True)
