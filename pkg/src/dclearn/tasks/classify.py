"""Mini-batch MLP training on blobs with optional correction and GEM rows."""

from dataclasses import dataclass, field

import numpy as np

from .. import optim
from ..analysis import TraceRecord, TrainTrace, epoch_congruencies, magnitude
from ..dcl import DclConfig, DclState, MemoryBank, dcl_apply, memory_gradients
from ..model import Batch, accuracy, apply_update, init_mlp, loss_and_grad, tracked_gradient, tracked_weights


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    activation: str = "relu"
    loss: str = "softmax_cross_entropy"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    schedule: optim.LrSchedule = field(default_factory=optim.LrSchedule)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class StepRunner:
    """Owns the weights, optimizer state and correction state of one run."""

    def __init__(self, model, opt_cfg, model_cfg, dcl_cfg=None):
        self.model = model
        self.opt_cfg = opt_cfg
        self.model_cfg = model_cfg
        self.dcl_cfg = dcl_cfg
        self.opt_state = optim.OptimizerState()
        self.dcl_state = DclState()
        self.trace = TrainTrace()
        self.t = 0

    def step(self, batch, epoch, lr, memory_grads=()):
        loss, grads = loss_and_grad(self.model, batch, self.model_cfg.loss)
        g = tracked_gradient(grads)
        w = tracked_weights(self.model)
        if self.dcl_cfg is not None:
            gt = dcl_apply(g, w, self.dcl_state, self.dcl_cfg, memory_grads)
            corrected = self.dcl_state.corrected_last
        else:
            gt, corrected = g, False
        self.trace.append(TraceRecord(self.t, epoch, w, g, gt, loss, lr, corrected))
        self.model = apply_update(self.model, grads, gt, self.opt_state, self.opt_cfg.with_lr(lr))
        self.t += 1
        return loss


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def train_blobs(train, test, model_cfg, opt_cfg, train_cfg, dcl_cfg=None, gem=False, seed=0):
    """Train and report one row per epoch; returns (rows, runner).

    ``gem`` keeps a memory of one sample: the first sample of each epoch,
    cleared when the next epoch starts; its gradient is a constraint row on
    every step of that epoch.
    """
    rng = np.random.default_rng(seed)
    model = init_mlp(train.d, model_cfg.hidden, train.c, model_cfg.activation, rng)
    if gem and dcl_cfg is None:
        dcl_cfg = DclConfig(n_r=0, use_memory=True)
    run = StepRunner(model, opt_cfg, model_cfg, dcl_cfg)
    bank = MemoryBank(1)
    rows = []
    for epoch in range(1, train_cfg.epochs + 1):
        lr = optim.schedule_lr(epoch, train_cfg.schedule, opt_cfg.lr)
        bank.clear()
        ep_losses = []
        for idx in batches(len(train), train_cfg.batch_size, rng):
            if gem and len(bank) == 0:
                bank.add(train.inputs[idx[0]], train.labels[idx[0]])
            mem = memory_gradients(bank, run.model, model_cfg.loss) if gem else ()
            ep_losses.append(run.step(Batch(train.inputs[idx], train.labels[idx]), epoch, lr, mem))
        rows.append({"epoch": epoch, "train_loss": float(np.mean(ep_losses)),
                     "test_error": 1.0 - accuracy(run.model, test.inputs, test.labels)})
    congr = epoch_congruencies(run.trace)
    for row in rows:
        e = row["epoch"]
        row["epoch_congruency"] = congr[e]
        row["magnitude_abs"] = magnitude(run.trace, e, "absolute")
        row["magnitude_rel"] = magnitude(run.trace, e, "relative")
    return rows, run
