"""Experiment generators and runners."""

from .bench2d import Bench2dProblem, bench2d_eval, default_problem, locate_minima, quadratic_problem, run_bench2d
from .classify import ModelConfig, TrainConfig, train_blobs
from .continual import AccuracyMatrix, ContinualConfig, gem_config, metrics, run_continual
from .data import BlobsDataset, TaskStream, gen_blobs, gen_blobs_split, gen_stream
