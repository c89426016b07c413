"""Deterministic training loop (Adam) and evaluation harness.

Training is reproducible to the bit: batch order comes from a seed-and-epoch
derived shuffle, gradients accumulate over per-sample tapes in a fixed order,
and the optimizer state is serialized alongside the weights so a resumed run
continues the uninterrupted trajectory exactly.

Evaluation aggregates per-sample sufficient statistics, so splitting the
work across threads cannot change the result.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from . import tensor as T
from .checkpoint import load_model, save_model
from .data import load_split
from .errors import (ComparisonError, ConfigError, DimensionError,
                     NumericError, ParameterError)
from .metrics import MetricsReport
from .tensor import Tape, Tensor
from .unet import build_unet

LOSS_KINDS = ("l1", "l1_grad")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0002
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0
    loss: str = "l1_grad"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError(
                f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must not be negative, got {self.epochs}")
        if self.seed < 0:
            raise ParameterError(f"seed must not be negative, got {self.seed}")
        if self.loss not in LOSS_KINDS:
            raise ParameterError(
                f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)   # (step index, batch mean loss)
    epoch_means: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_tsv(self) -> str:
        lines = ["step\tloss"]
        for step, value in self.steps:
            lines.append(f"{step}\t{value:.17g}")
        return "\n".join(lines) + "\n"


def write_log(path, log: TrainLog):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(log.to_tsv())


def read_log(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return [(int(s), float(v))
            for s, v in (line.split("\t") for line in lines[1:])]


def loss(pred: Tensor, gt: Tensor, kind: str) -> Tensor:
    """l1 = mean |p-g|; l1_grad adds 0.5 * (mean |dx p - dx g| + mean |dy ...|)
    with forward differences."""
    if kind not in LOSS_KINDS:
        raise ParameterError(f"loss must be one of {LOSS_KINDS}, got {kind!r}")
    if tuple(pred.shape) != tuple(gt.shape):
        raise DimensionError(
            f"prediction shape {tuple(pred.shape)} differs from "
            f"ground truth {tuple(gt.shape)}")
    total = T.mean_all(T.absolute(T.sub(pred, gt)))
    if kind == "l1_grad":
        gx = T.mean_all(T.absolute(T.sub(T.diff_x(pred), T.diff_x(gt))))
        gy = T.mean_all(T.absolute(T.sub(T.diff_y(pred), T.diff_y(gt))))
        total = T.add(total, T.scale(T.add(gx, gy), 0.5))
    return total


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def fresh_state(named_params) -> AdamState:
    state = AdamState()
    for name, p in named_params:
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(named_params, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update from the gradients held on the tensors."""
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


# --------------------------------------------------------------------------
# training

def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, epoch)))
    return rng.permutation(n)


def _optimizer_extras(state: AdamState, epochs_done: int) -> dict:
    extra = {"train.step": np.array([float(state.t)]),
             "train.epochs_done": np.array([float(epochs_done)])}
    for name, arr in state.m.items():
        extra[f"opt.m.{name}"] = arr
    for name, arr in state.v.items():
        extra[f"opt.v.{name}"] = arr
    return extra


def _state_from_extras(named_params, extra) -> tuple:
    state = AdamState(t=int(extra["train.step"][0]))
    for name, p in named_params:
        for moment, store in (("m", state.m), ("v", state.v)):
            key = f"opt.{moment}.{name}"
            if key not in extra:
                raise ConfigError(
                    f"checkpoint has no optimizer state for {name}; "
                    "it cannot seed a resumed run")
            arr = extra[key]
            if arr.shape != p.data.shape:
                raise ConfigError(
                    f"optimizer state {key} has shape {arr.shape}, "
                    f"parameter is {p.data.shape}")
            store[name] = np.ascontiguousarray(arr)
    return state, int(extra["train.epochs_done"][0])


def train(cfg: TrainConfig, model_cfg, data_root, split="train",
          checkpoint_path=None, resume_from=None, log_path=None):
    """Run (or resume) a training job; returns (model, TrainLog).

    The epoch-e batch order depends only on (cfg.seed, e), so resuming from
    the checkpoint of an n-epoch run and continuing to m epochs retraces the
    uninterrupted m-epoch run exactly.
    """
    samples = load_split(data_root, split)
    if resume_from is not None:
        model, extra = load_model(resume_from)
        named = model.named_parameters()
        state, start_epoch = _state_from_extras(named, extra)
    else:
        if model_cfg is None:
            raise ConfigError("a model config is required unless resuming")
        model = build_unet(model_cfg, seed=cfg.seed)
        named = model.named_parameters()
        state = fresh_state(named)
        start_epoch = 0

    params = [p for _, p in named]
    log = TrainLog()
    begun = time.perf_counter()
    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, len(samples))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            chunk = order[lo:lo + cfg.batch_size]
            T.zero_grads(params)
            batch_losses = []
            for idx in chunk:
                sample = samples[idx]
                with Tape():
                    pred = model.forward(Tensor(sample.color))
                    value = loss(pred, Tensor(sample.depth), cfg.loss)
                    T.backward(value)
                batch_losses.append(value.item())
            inv = 1.0 / len(chunk)
            for p in params:
                if p.grad is not None:
                    p.grad *= inv   # summed over samples -> mean-loss gradient
            adam_step(named, state, cfg)
            mean_loss = sum(batch_losses) / len(chunk)
            log.steps.append((state.t, mean_loss))
            epoch_losses.append(mean_loss)
        log.epoch_means.append(sum(epoch_losses) / len(epoch_losses))
    log.wall_time = time.perf_counter() - begun

    if checkpoint_path is not None:
        save_model(checkpoint_path, model,
                   extra=_optimizer_extras(state, epochs_done=cfg.epochs))
    if log_path is not None:
        write_log(log_path, log)
    return model, log


# --------------------------------------------------------------------------
# evaluation

def model_predictor(model):
    def predict(sample):
        try:
            out = model.forward(Tensor(sample.color))
        except DimensionError as exc:
            raise ConfigError(
                f"model does not fit the dataset samples: {exc}") from None
        return out.data
    return predict


def _sample_stats(sample, predict, max_depth):
    pred = np.asarray(predict(sample), dtype=float)
    pred_map = pred[0] if pred.ndim == 3 else pred
    # same floor the depth statistics apply; keeps normals defined even for
    # a model whose output underflowed to zero
    pred_map = np.maximum(pred_map, M.MIN_PRED_DEPTH)
    gt_map = sample.depth[0]
    depth = M.depth_stats(pred_map, gt_map, max_depth)
    boundary = M.boundary_stats(pred_map, gt_map)
    # normals on both sides come from the same depth-based estimator, so a
    # perfect prediction scores a perfect smoothness row
    pred_n, pred_valid = M.normals_from_depth(pred_map, sample.intrinsics)
    gt_n, gt_valid = M.normals_from_depth(gt_map, sample.intrinsics)
    smooth = M.smoothness_stats(pred_n, gt_n, pred_valid & gt_valid)
    return depth, boundary, smooth


def evaluate_samples(samples, predict, max_depth=M.MAX_DEPTH,
                     workers=1) -> MetricsReport:
    """Aggregate per-sample statistics; the reduction order is fixed by the
    sample order, so thread count cannot change the report."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda s: _sample_stats(s, predict, max_depth), samples))
    else:
        parts = [_sample_stats(s, predict, max_depth) for s in samples]
    depth, boundary, smooth = parts[0]
    for d, b, s in parts[1:]:
        depth = depth.merge(d)
        boundary = boundary.merge(b)
        smooth = smooth.merge(s)
    return M.build_report(depth.finalize(), boundary.finalize(),
                          smooth.finalize())


def evaluate(source, data_root, split="test", max_depth=M.MAX_DEPTH,
             workers=1) -> MetricsReport:
    """Evaluate a model (or a checkpoint path) over one dataset split."""
    model = source
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        model, _ = load_model(source)
    samples = load_split(data_root, split)
    return evaluate_samples(samples, model_predictor(model),
                            max_depth=max_depth, workers=workers)


# --------------------------------------------------------------------------
# comparison

def compare_reports(named_reports) -> list:
    """Radar rows for ≥2 named MetricsReports (names must be unique)."""
    named_reports = list(named_reports)
    names = [name for name, _ in named_reports]
    if len(set(names)) != len(names):
        raise ComparisonError(f"duplicate run names: {names}")
    return M.radar(named_reports)


def compare(runs, data_root, split="test", max_depth=M.MAX_DEPTH, workers=1):
    """Evaluate each (name, checkpoint) on the same split and rank them.

    Returns (named_reports, radar_rows).
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ComparisonError("compare needs at least two runs")
    named_reports = []
    for name, path in runs:
        named_reports.append(
            (name, evaluate(path, data_root, split=split,
                            max_depth=max_depth, workers=workers)))
    return named_reports, compare_reports(named_reports)
